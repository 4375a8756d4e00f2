use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{AnalysisError, AnalysisResult, Metric, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotStyle {
    Weak,
    Strong,
}

impl PlotStyle {
    fn title(self) -> &'static str {
        match self {
            PlotStyle::Weak => "Weak scaling",
            PlotStyle::Strong => "Strong scaling",
        }
    }
}

impl std::str::FromStr for PlotStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weak" => Ok(PlotStyle::Weak),
            "strong" => Ok(PlotStyle::Strong),
            other => Err(format!("unknown plot style `{other}` (weak or strong)")),
        }
    }
}

pub const TABLE_HEADER: &str = "resource_count,phase,mean_s,stderr_s,fraction,rtf_mean,rtf_stderr,n_seeds";
const NA: &str = "-";

/// Every plotted number, one row per resource count and metric. Floats are
/// written in shortest round-trip form.
pub fn render_table(ar: &AnalysisResult) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for s in &ar.summaries {
        for m in Metric::ALL {
            let ms = s.metric(m);
            let fraction = match m {
                Metric::Phase(p) => s.fraction(p).map_or(NA.to_string(), |f| f.to_string()),
                _ => NA.to_string(),
            };
            let (rtf_mean, rtf_stderr) = match m {
                Metric::Propagation => (s.rtf.mean.to_string(), s.rtf.stderr.to_string()),
                _ => (NA.to_string(), NA.to_string()),
            };
            writeln!(
                out,
                "{},{},{},{},{fraction},{rtf_mean},{rtf_stderr},{}",
                s.resource_count,
                m.name(),
                ms.mean,
                ms.stderr,
                s.n_seeds
            )
            .unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub resource_count: u32,
    pub metric: Metric,
    pub mean_s: f64,
    pub stderr_s: f64,
    pub fraction: Option<f64>,
    pub rtf_mean: Option<f64>,
    pub rtf_stderr: Option<f64>,
    pub n_seeds: usize,
}

pub fn parse_table(text: &str) -> Result<Vec<TableRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(TABLE_HEADER) {
        return Err("unexpected header".into());
    }
    let opt = |s: &str| -> Result<Option<f64>, String> {
        if s == NA {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| format!("bad number `{s}`"))
        }
    };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(format!("expected 8 columns in `{line}`"));
            }
            Ok(TableRow {
                resource_count: f[0].parse().map_err(|_| format!("bad count `{}`", f[0]))?,
                metric: Metric::from_name(f[1]).ok_or_else(|| format!("bad phase `{}`", f[1]))?,
                mean_s: opt(f[2])?.ok_or("mean missing")?,
                stderr_s: opt(f[3])?.ok_or("stderr missing")?,
                fraction: opt(f[4])?,
                rtf_mean: opt(f[5])?,
                rtf_stderr: opt(f[6])?,
                n_seeds: f[7].parse().map_err(|_| format!("bad n_seeds `{}`", f[7]))?,
            })
        })
        .collect()
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 440.0;
const TOP: f64 = 60.0;
const BOTTOM: f64 = 370.0;
const PANELS: [(f64, f64); 2] = [(70.0, 440.0), (560.0, 930.0)];
const PHASE_COLORS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A "nice" upper bound for an axis starting at zero.
fn nice_max(v: f64) -> f64 {
    if v <= 0.0 || !v.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for step in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if step * mag >= v {
            return step * mag;
        }
    }
    10.0 * mag
}

fn axes(svg: &mut String, (x0, x1): (f64, f64), ymax: f64, y_label: &str, counts: &[u32], xs: &[f64], fmt_y: impl Fn(f64) -> String) {
    writeln!(svg, r#"<line x1="{x0}" y1="{BOTTOM}" x2="{x1}" y2="{BOTTOM}" stroke="black"/>"#).unwrap();
    writeln!(svg, r#"<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{BOTTOM}" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let v = ymax * i as f64 / 4.0;
        let y = BOTTOM - (BOTTOM - TOP) * i as f64 / 4.0;
        writeln!(svg, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0).unwrap();
        writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 7.0, y + 4.0, fmt_y(v)).unwrap();
    }
    for (c, x) in counts.iter().zip(xs) {
        writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{c}</text>"#, BOTTOM + 18.0).unwrap();
    }
    writeln!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">nodes</text>"#, (x0 + x1) / 2.0, BOTTOM + 38.0).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {} {:.2})">{}</text>"#,
        x0 - 48.0,
        (TOP + BOTTOM) / 2.0,
        x0 - 48.0,
        (TOP + BOTTOM) / 2.0,
        esc(y_label)
    )
    .unwrap();
}

/// Two panels: mean times with standard-error bars (left), stacked phase
/// fractions of the propagation time (right).
pub fn render_svg(ar: &AnalysisResult, style: PlotStyle) -> String {
    let counts: Vec<u32> = ar.summaries.iter().map(|s| s.resource_count).collect();
    let n = counts.len().max(1) as f64;
    let slot = |(x0, x1): (f64, f64), i: usize| x0 + (x1 - x0) * (i as f64 + 0.5) / n;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, style.title()).unwrap();

    // Left panel: propagation and construction times.
    let left = PANELS[0];
    let xs: Vec<f64> = (0..counts.len()).map(|i| slot(left, i)).collect();
    let top = ar
        .summaries
        .iter()
        .flat_map(|s| [Metric::Propagation, Metric::Construction].map(|m| s.metric(m).mean + s.metric(m).stderr))
        .fold(0.0, f64::max);
    let ymax = nice_max(top);
    let y = |v: f64| BOTTOM - (BOTTOM - TOP) * v / ymax;
    axes(&mut svg, left, ymax, "time (s)", &counts, &xs, |v| format!("{v:.3}"));
    for (metric, color, dash) in [(Metric::Propagation, "#222222", ""), (Metric::Construction, "#8172b3", r#" stroke-dasharray="5 3""#)] {
        let pts: Vec<String> =
            ar.summaries.iter().zip(&xs).map(|(s, x)| format!("{x:.2},{:.2}", y(s.metric(metric).mean))).collect();
        writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}"{dash}/>"#, pts.join(" ")).unwrap();
        for (s, x) in ar.summaries.iter().zip(&xs) {
            let ms = s.metric(metric);
            let (lo, hi) = (y(ms.mean - ms.stderr), y(ms.mean + ms.stderr));
            writeln!(svg, r#"<line x1="{x:.2}" y1="{lo:.2}" x2="{x:.2}" y2="{hi:.2}" stroke="{color}"/>"#).unwrap();
            for yy in [lo, hi] {
                writeln!(svg, r#"<line x1="{:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="{color}"/>"#, x - 4.0, x + 4.0).unwrap();
            }
            writeln!(svg, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, y(ms.mean)).unwrap();
        }
    }
    for (i, (label, color)) in [("state propagation", "#222222"), ("network construction", "#8172b3")].iter().enumerate() {
        let ly = TOP + 4.0 + 16.0 * i as f64;
        writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}"/>"#, left.0 + 10.0, left.0 + 30.0).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}">{label}</text>"#, left.0 + 36.0, ly + 4.0).unwrap();
    }

    // Right panel: stacked fractions.
    let right = PANELS[1];
    let xs: Vec<f64> = (0..counts.len()).map(|i| slot(right, i)).collect();
    axes(&mut svg, right, 1.0, "fraction of propagation time", &counts, &xs, |v| format!("{v:.2}"));
    let bar = ((right.1 - right.0) / n * 0.6).min(60.0);
    let scale = BOTTOM - TOP;
    for (s, x) in ar.summaries.iter().zip(&xs) {
        let Some(fr) = s.fractions else { continue };
        let mut base = 0.0;
        for (f, color) in fr.iter().zip(PHASE_COLORS) {
            let (y0, h) = (BOTTOM - scale * (base + f), scale * f);
            writeln!(svg, r#"<rect x="{:.2}" y="{y0:.2}" width="{bar:.2}" height="{h:.2}" fill="{color}"/>"#, x - bar / 2.0).unwrap();
            base += f;
        }
    }
    for (i, (p, color)) in Phase::ALL.iter().zip(PHASE_COLORS).enumerate() {
        let lx = right.0 + 10.0 + 90.0 * i as f64;
        writeln!(svg, r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/>"#, HEIGHT - 22.0).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 14.0, HEIGHT - 13.0, p.name()).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotFiles {
    pub svg: PathBuf,
    pub table: PathBuf,
}

/// Writes `scaling.svg` and `scaling.csv` into `dir`.
pub fn emit_plot(ar: &AnalysisResult, style: PlotStyle, dir: &Path) -> Result<PlotFiles, AnalysisError> {
    if ar.summaries.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let io = |p: &Path, e: std::io::Error| AnalysisError::Io { path: p.display().to_string(), message: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let files = PlotFiles { svg: dir.join("scaling.svg"), table: dir.join("scaling.csv") };
    std::fs::write(&files.svg, render_svg(ar, style)).map_err(|e| io(&files.svg, e))?;
    std::fs::write(&files.table, render_table(ar)).map_err(|e| io(&files.table, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{aggregate_seeds, PhaseTimers, ScalingPoint};

    fn fixture() -> AnalysisResult {
        let mut points = Vec::new();
        for nodes in 1..=4u32 {
            for seed in 1..=3i64 {
                let k = nodes as f64 + seed as f64 * 0.1;
                let timers = PhaseTimers { construction: 0.3 * k, update: k, collocate: 0.2 * k, communicate: 0.1 * k * k, deliver: 0.5, model_time: 2.0 };
                points.push(ScalingPoint { resource_count: nodes, seed, timers });
            }
        }
        aggregate_seeds(&points).unwrap()
    }

    #[test]
    fn table_has_a_row_per_count_and_metric() {
        let ar = fixture();
        let rows = parse_table(&render_table(&ar)).unwrap();
        assert_eq!(rows.len(), 4 * (4 + 2));
        for row in rows {
            let s = ar.at(row.resource_count).unwrap();
            let ms = s.metric(row.metric);
            assert_eq!((row.mean_s, row.stderr_s, row.n_seeds), (ms.mean, ms.stderr, 3));
            if let Metric::Phase(p) = row.metric {
                assert_eq!(row.fraction, s.fraction(p));
            }
            if row.metric == Metric::Propagation {
                assert_eq!((row.rtf_mean, row.rtf_stderr), (Some(s.rtf.mean), Some(s.rtf.stderr)));
            }
        }
    }

    #[test]
    fn emission_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ar = fixture();
        let a = emit_plot(&ar, PlotStyle::Weak, &dir.path().join("a")).unwrap();
        let b = emit_plot(&ar, PlotStyle::Weak, &dir.path().join("b")).unwrap();
        assert_eq!(std::fs::read(&a.svg).unwrap(), std::fs::read(&b.svg).unwrap());
        assert_eq!(std::fs::read(&a.table).unwrap(), std::fs::read(&b.table).unwrap());
        let svg = std::fs::read_to_string(&a.svg).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("Weak scaling") && svg.trim_end().ends_with("</svg>"));
        assert!(emit_plot(&AnalysisResult { summaries: vec![] }, PlotStyle::Strong, dir.path()).is_err());
    }

    #[test]
    fn nice_bounds() {
        assert_eq!(nice_max(0.0), 1.0);
        assert_eq!(nice_max(0.7), 1.0);
        assert_eq!(nice_max(1.3), 2.0);
        assert_eq!(nice_max(230.0), 250.0);
    }
}
