use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;

use benchforge::analysis::{
    aggregate_seeds, compare, emit_plot, render_table, scaling_point, AnalysisResult, Metric, Phase, PlotStyle,
    PointKeys,
};
use benchforge::config::{ResolvedConfig, Scalar};
use benchforge::provenance::{Archive, BenchmarkRecord, RecordFilter};
use benchforge::workload::{ExchangeStats, STATS_FILE};

use crate::{CmdResult, Ctx, Failure, Selection};

pub const ANALYSIS_JSON: &str = "analysis.json";
pub const ANALYSIS_TABLE: &str = "analysis.csv";

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    select: Selection,
    /// Output directory.
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
    /// Config key holding the resource count.
    #[arg(long, default_value = "run.nodes")]
    resource_key: String,
    #[arg(long, default_value = "run.seed")]
    seed_key: String,
}

#[derive(Args)]
pub struct PlotArgs {
    #[command(flatten)]
    analyze: AnalyzeArgs,
    /// Only changes the labels.
    #[arg(long, default_value = "weak", value_parser = ["weak", "strong"])]
    style: String,
}

/// The archive, or `None` when it does not exist yet. Reading never creates it.
fn existing_archive(ctx: &Ctx) -> Result<Option<Archive>, Failure> {
    if !ctx.archive.is_dir() {
        return Ok(None);
    }
    Ok(Some(Archive::open(&ctx.archive)?))
}

fn summary_line(rec: &BenchmarkRecord) -> String {
    let coords: Vec<String> = rec.combination.assignments.iter().map(|(k, v)| format!("{k}={}", v.render())).collect();
    let coords = if coords.is_empty() { "-".to_string() } else { coords.join(",") };
    format!("{}\t{}\t{}\t{}\t{coords}", rec.record_id, rec.run_id, rec.metadata.machine, rec.config_name)
}

pub fn cmd_query(ctx: &Ctx, filters: &[String]) -> CmdResult {
    let filter = RecordFilter::parse_all(filters)?;
    filter.validate()?;
    let Some(archive) = existing_archive(ctx)? else { return Ok(ExitCode::SUCCESS) };
    for id in archive.query(&filter)? {
        let line = summary_line(&archive.fetch(&id)?);
        if ctx.porcelain {
            out!("record\t{line}");
        } else {
            out!("{}", line.replace('\t', "  "));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn select(ctx: &Ctx, sel: &Selection) -> Result<Vec<BenchmarkRecord>, Failure> {
    if sel.record_ids.is_empty() == sel.filters.is_empty() {
        return Err(Failure::user("select records either by id or with --filter"));
    }
    let archive = existing_archive(ctx)?.ok_or_else(|| Failure::user("no records selected: the archive is empty"))?;
    let ids = if sel.filters.is_empty() {
        sel.record_ids.clone()
    } else {
        archive.query(&RecordFilter::parse_all(&sel.filters)?)?
    };
    if ids.is_empty() {
        return Err(Failure::user("no records selected"));
    }
    ids.iter().map(|id| archive.fetch(id).map_err(Failure::from)).collect()
}

fn analyze(ctx: &Ctx, args: &AnalyzeArgs) -> Result<(AnalysisResult, usize), Failure> {
    let records = select(ctx, &args.select)?;
    let schemas: BTreeSet<String> = records
        .iter()
        .map(|r| ResolvedConfig::from_json(&r.resolved_config).map(|c| c.schema_id).unwrap_or_default())
        .collect();
    if schemas.len() > 1 {
        let list: Vec<&str> = schemas.iter().map(String::as_str).collect();
        return Err(Failure::user(format!("records follow different schemas: {}", list.join(", "))));
    }
    let keys = PointKeys { resource_key: args.resource_key.clone(), seed_key: args.seed_key.clone() };
    let points =
        records.iter().map(|r| scaling_point(r, &keys)).collect::<Result<Vec<_>, _>>().map_err(Failure::user)?;
    Ok((aggregate_seeds(&points).map_err(Failure::user)?, records.len()))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::exec(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::exec(format!("{}: {e}", path.display())))
}

fn print_path(ctx: &Ctx, kind: &str, path: &Path) {
    if ctx.porcelain {
        out!("{kind}\t{}", path.display());
    } else {
        out!("{kind:<9} {}", path.display());
    }
}

fn print_summary(ctx: &Ctx, ar: &AnalysisResult, n_records: usize) {
    if ctx.porcelain {
        return;
    }
    out!("{n_records} records");
    out!("{:>6} {:>6} {:>24} {:>8} {:>8} {:>8} {:>8}", "count", "seeds", "rtf", "update", "colloc", "comm", "deliver");
    for s in &ar.summaries {
        let f = |p: Phase| s.fraction(p).map_or("-".to_string(), |x| format!("{:.3}", x));
        out!(
            "{:>6} {:>6} {:>24} {:>8} {:>8} {:>8} {:>8}",
            s.resource_count,
            s.n_seeds,
            format!("{:.4e} ± {:.1e}", s.rtf.mean, s.rtf.stderr),
            f(Phase::Update),
            f(Phase::Collocate),
            f(Phase::Communicate),
            f(Phase::Deliver)
        );
    }
}

pub fn cmd_analyze(ctx: &Ctx, args: &AnalyzeArgs) -> CmdResult {
    let (ar, n) = analyze(ctx, args)?;
    let table = args.out.join(ANALYSIS_TABLE);
    let json = args.out.join(ANALYSIS_JSON);
    write(&table, &render_table(&ar))?;
    write(&json, &ar.to_json())?;
    print_summary(ctx, &ar, n);
    print_path(ctx, "table", &table);
    print_path(ctx, "analysis", &json);
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_plot(ctx: &Ctx, args: &PlotArgs) -> CmdResult {
    let style: PlotStyle = args.style.parse().map_err(Failure::user)?;
    let (ar, _) = analyze(ctx, &args.analyze)?;
    let files = emit_plot(&ar, style, &args.analyze.out).map_err(Failure::exec)?;
    let json = args.analyze.out.join(ANALYSIS_JSON);
    write(&json, &ar.to_json())?;
    print_path(ctx, "plot", &files.svg);
    print_path(ctx, "table", &files.table);
    print_path(ctx, "analysis", &json);
    Ok(ExitCode::SUCCESS)
}

fn read_analysis(path: &Path) -> Result<AnalysisResult, Failure> {
    let file = if path.is_dir() { path.join(ANALYSIS_JSON) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Failure::user(format!("{}: {e}", file.display())))?;
    AnalysisResult::from_json(&text).map_err(|e| Failure::user(format!("{}: {e}", file.display())))
}

pub fn cmd_diff(ctx: &Ctx, baseline: &Path, candidate: &Path) -> CmdResult {
    let c = compare(&read_analysis(baseline)?, &read_analysis(candidate)?).map_err(Failure::user)?;
    for m in Metric::ALL {
        for pc in &c.per_count {
            if ctx.porcelain {
                out!("change\t{}\t{m}\t{}", pc.resource_count, pc.change[&m]);
            }
        }
        let mean = c.mean_change[&m];
        if ctx.porcelain {
            out!("change\tmean\t{m}\t{mean}");
        } else {
            let per: Vec<String> =
                c.per_count.iter().map(|pc| format!("{}: {:+.1}%", pc.resource_count, 100.0 * pc.change[&m])).collect();
            out!("{m:<12} {:+7.1}%   ({})", 100.0 * mean, per.join(", "));
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_annotate(ctx: &Ctx, id: &str, pairs: &[String], derive: bool) -> CmdResult {
    if pairs.is_empty() && !derive {
        return Err(Failure::user("nothing to annotate: give key=value pairs or --derive"));
    }
    let archive = existing_archive(ctx)?.ok_or_else(|| Failure::user(format!("no record `{id}` in the archive")))?;
    let mut values: Vec<(String, Scalar)> = Vec::new();
    for p in pairs {
        let (k, v) = p.split_once('=').ok_or_else(|| Failure::user(format!("`{p}` is not key=value")))?;
        values.push((k.trim().to_string(), Scalar::parse_loose(v.trim())));
    }
    if derive {
        let rec = archive.fetch(id)?;
        let raw =
            rec.raw_files.get(STATS_FILE).ok_or_else(|| Failure::user(format!("record {id} has no {STATS_FILE}")))?;
        let stats = ExchangeStats::parse(&String::from_utf8_lossy(raw)).map_err(Failure::user)?;
        values.push(("exchange.grow_count".into(), Scalar::Int(stats.grow_count as i64)));
        values.push(("exchange.shrink_count".into(), Scalar::Int(stats.shrink_count as i64)));
        values.push(("exchange.two_round_count".into(), Scalar::Int(stats.two_round_count as i64)));
        values.push(("exchange.final_capacity".into(), Scalar::Int(stats.final_capacity as i64)));
    }
    for (k, v) in values {
        archive.annotate(id, &k, v.clone())?;
        if ctx.porcelain {
            out!("annotation\t{id}\t{k}\t{}", v.render());
        } else {
            out!("{id}  {k} = {}", v.render());
        }
    }
    Ok(ExitCode::SUCCESS)
}
