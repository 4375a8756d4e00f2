//! Independent oracles and random generators shared by the test suites.
//!
//! Nothing here calls into the code paths it is used to check: the merge
//! oracle works on trees instead of flattened paths, the query oracle is a
//! plain scan over in-memory records, and the statistics oracle uses the
//! textbook two-pass formulas.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::config::{
    load_document, resolve_chain, ConfigDocument, Entry, ParameterCombination, Scalar, Schema, Value, DELETE_SENTINEL,
};
use crate::provenance::{MetadataSnapshot, NewRecord, COLLECTOR_VERSION};

#[derive(Clone, Copy, Debug)]
enum LeafKind {
    Int,
    Float,
    Str,
    Bool,
    IntList,
}

fn random_leaf<R: Rng>(rng: &mut R, kind: LeafKind) -> Value {
    match kind {
        LeafKind::Int => Value::Scalar(Scalar::Int(rng.random_range(-100..100))),
        LeafKind::Float => Value::Scalar(Scalar::Float(rng.random_range(-1.0..1.0))),
        LeafKind::Str => Value::Scalar(Scalar::Str(format!("s{}", rng.random_range(0..50)))),
        LeafKind::Bool => Value::Scalar(Scalar::Bool(rng.random())),
        LeafKind::IntList => {
            let n = rng.random_range(0..4);
            Value::List((0..n).map(|_| Scalar::Int(rng.random_range(0..10))).collect())
        }
    }
}

/// Random key universe: a list of leaf paths (each a vector of segments)
/// forming a tree, with a fixed kind per leaf so that overrides never change
/// a key's kind.
fn random_universe<R: Rng>(rng: &mut R, max_keys: usize, max_nesting: usize) -> Vec<(Vec<String>, LeafKind)> {
    let kinds = [LeafKind::Int, LeafKind::Float, LeafKind::Str, LeafKind::Bool, LeafKind::IntList];
    let n = rng.random_range(1..=max_keys);
    let mut leaves: Vec<(Vec<String>, LeafKind)> = Vec::new();
    let mut attempts = 0;
    while leaves.len() < n && attempts < 20 * max_keys {
        attempts += 1;
        // Shallow leaves block whole subtrees, so favour deeper paths.
        let depth = if rng.random_bool(0.15) { 1 } else { rng.random_range(2..=max_nesting.max(2)) };
        let path: Vec<String> = (0..depth).map(|_| format!("k{}", rng.random_range(0..4))).collect();
        // Reject paths that would make a leaf an ancestor of another leaf.
        let clash = leaves.iter().any(|(p, _)| {
            let m = p.len().min(path.len());
            p[..m] == path[..m]
        });
        if !clash {
            leaves.push((path, *kinds.choose(rng).unwrap()));
        }
    }
    leaves
}

fn insert_path(map: &mut BTreeMap<String, Value>, path: &[String], value: Value) {
    if path.len() == 1 {
        map.insert(path[0].clone(), value);
        return;
    }
    let slot = map.entry(path[0].clone()).or_insert_with(|| Value::Map(BTreeMap::new()));
    if let Value::Map(inner) = slot {
        insert_path(inner, &path[1..], value);
    }
}

/// A random inheritance chain `d0 <- d1 <- ... <- dn`, base first, with up to
/// `max_depth` ancestors above the leaf and at most `max_keys` distinct leaf
/// keys. Documents occasionally delete a leaf or a whole subtree.
pub fn random_chain<R: Rng>(rng: &mut R, max_depth: usize, max_keys: usize) -> Vec<ConfigDocument> {
    let universe = random_universe(rng, max_keys, 4);
    let len = rng.random_range(1..=max_depth + 1);
    let mut chain = Vec::with_capacity(len);
    for i in 0..len {
        let mut doc = ConfigDocument::new(format!("d{i}"));
        if i > 0 {
            doc.parent = Some(format!("d{}", i - 1));
        }
        let density = if i == 0 { 0.8 } else { 0.3 };
        let mut deleted_prefixes: Vec<Vec<String>> = Vec::new();
        if i > 0 && rng.random_bool(0.3) {
            let (path, _) = universe.choose(rng).unwrap();
            let cut = rng.random_range(1..=path.len());
            let prefix = path[..cut].to_vec();
            insert_path(&mut doc.sections, &prefix, Value::Scalar(Scalar::Str(DELETE_SENTINEL.into())));
            deleted_prefixes.push(prefix);
        }
        for (path, kind) in &universe {
            let under_delete = deleted_prefixes.iter().any(|p| path.starts_with(p));
            if !under_delete && rng.random_bool(density) {
                insert_path(&mut doc.sections, path, random_leaf(rng, *kind));
            }
        }
        chain.push(doc);
    }
    chain
}

fn tree_merge(base: &mut BTreeMap<String, Value>, child: &BTreeMap<String, Value>) {
    for (key, value) in child {
        match value {
            Value::Scalar(Scalar::Str(s)) if s == DELETE_SENTINEL => {
                base.remove(key);
            }
            Value::Map(inner) => {
                if !matches!(base.get(key), Some(Value::Map(_))) {
                    base.insert(key.clone(), Value::Map(BTreeMap::new()));
                }
                if let Some(Value::Map(target)) = base.get_mut(key) {
                    tree_merge(target, inner);
                }
            }
            other => {
                base.insert(key.clone(), other.clone());
            }
        }
    }
}

fn tree_flatten(prefix: &str, map: &BTreeMap<String, Value>, out: &mut BTreeMap<String, Entry>) {
    for (key, value) in map {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match value {
            Value::Map(inner) => tree_flatten(&path, inner, out),
            Value::Scalar(s) => {
                out.insert(path, Entry::Scalar(s.clone()));
            }
            Value::List(items) => {
                out.insert(path, Entry::List(items.clone()));
            }
        }
    }
}

fn defines(map: &BTreeMap<String, Value>, path: &[&str]) -> bool {
    match map.get(path[0]) {
        Some(Value::Map(inner)) if path.len() > 1 => defines(inner, &path[1..]),
        Some(Value::Scalar(Scalar::Str(s))) if path.len() == 1 => s != DELETE_SENTINEL,
        Some(Value::Map(_)) | None => false,
        Some(_) => path.len() == 1,
    }
}

/// Naive recursive merge of a base-first chain: entries and provenance.
pub fn naive_resolve(chain: &[ConfigDocument]) -> (BTreeMap<String, Entry>, BTreeMap<String, String>) {
    let mut tree = BTreeMap::new();
    for doc in chain {
        tree_merge(&mut tree, &doc.sections);
    }
    let mut entries = BTreeMap::new();
    tree_flatten("", &tree, &mut entries);
    let provenance = entries
        .keys()
        .map(|key| {
            let segments: Vec<&str> = key.split('.').collect();
            let owner = chain
                .iter()
                .rev()
                .find(|d| defines(&d.sections, &segments))
                .map(|d| d.name.clone())
                .unwrap_or_default();
            (key.clone(), owner)
        })
        .collect();
    (entries, provenance)
}

const MACHINES: [&str; 3] = ["mock-A", "mock-B", "local"];
const STACKS: [&str; 3] = ["gcc-12", "gcc-13", "clang-17"];

/// A plausible sweep record: `run.nodes` in 1..=4, `run.seed` in 1..=3, one of
/// three machines and software stacks.
pub fn random_record<R: Rng>(rng: &mut R, i: usize) -> NewRecord {
    let nodes = rng.random_range(1..=4);
    let seed = rng.random_range(1..=3);
    let scale: f64 = [0.5, 1.0, 1.5, 2.0].choose(rng).copied().unwrap();
    let text = format!(
        "name = \"sweep\"\nrun.nodes = {nodes}\nrun.seed = {seed}\nmodel.scale = {scale:?}\nenv.stack = \"{}\"\nflags.debug = {}\nexperiment.axes.run.seed = [1, 2, 3]\n",
        STACKS.choose(rng).unwrap(),
        rng.random_bool(0.5),
    );
    let rc = resolve_chain(&[load_document(&text, None).unwrap()], &Schema::permissive()).unwrap();
    NewRecord {
        run_id: format!("run-{}", i % 7),
        requester: ["alice", "bob"].choose(rng).unwrap().to_string(),
        config_name: "sweep".into(),
        combination: ParameterCombination {
            assignments: BTreeMap::from([("run.nodes".to_string(), Scalar::Int(nodes)), ("run.seed".to_string(), Scalar::Int(seed))]),
            ordinal: i,
        },
        resolved_config: rc.to_canonical_json(),
        raw_files: BTreeMap::from([("timers".to_string(), format!("update {}\n", rng.random::<f64>()).into_bytes())]),
        metadata: MetadataSnapshot {
            machine: MACHINES.choose(rng).unwrap().to_string(),
            node_class: ["login", "compute"].choose(rng).unwrap().to_string(),
            captured_env: BTreeMap::from([("USER".to_string(), "ci".to_string())]),
            software_versions: BTreeMap::from([("os".to_string(), "linux-x86_64".to_string())]),
            timestamp: format!("2026-01-01T00:00:{:02}.000000Z", i % 60),
            collector_version: COLLECTOR_VERSION.into(),
        },
    }
}

/// A predicate over the keys [`random_record`] fills, sometimes with values
/// no record has.
pub fn random_predicate<R: Rng>(rng: &mut R) -> (String, String, Scalar) {
    let numeric_ops = ["=", "!=", "<", "<=", ">", ">="];
    let (key, value): (&str, Scalar) = match rng.random_range(0..10) {
        0 => ("metadata.machine", Scalar::from(*MACHINES.choose(rng).unwrap())),
        1 => ("metadata.node_class", Scalar::from(*["login", "compute", "gpu"].choose(rng).unwrap())),
        2 => ("config.run.nodes", Scalar::Int(rng.random_range(0..=5))),
        3 => ("config.model.scale", Scalar::Float(*[0.5, 1.0, 1.25, 2.0].choose(rng).unwrap())),
        4 => ("config.env.stack", Scalar::from(*STACKS.choose(rng).unwrap())),
        5 => ("config.flags.debug", Scalar::Bool(rng.random_bool(0.5))),
        6 => ("combination.run.seed", Scalar::Int(rng.random_range(1..=3))),
        7 => ("annotations.verdict", Scalar::from(*["ok", "slow"].choose(rng).unwrap())),
        8 => ("config.experiment.axes.run.seed", Scalar::Int(rng.random_range(0..=4))),
        _ => ("requester", Scalar::from(*["alice", "bob", "carol"].choose(rng).unwrap())),
    };
    let op = if matches!(value, Scalar::Bool(_)) {
        *["=", "!=", "~"].choose(rng).unwrap()
    } else if rng.random_bool(0.15) {
        "~"
    } else {
        *numeric_ops.choose(rng).unwrap()
    };
    (key.to_string(), op.to_string(), value)
}

/// Linear-scan reference for record filters: every record is flattened into
/// a plain `key -> value` table first, then each predicate is checked by
/// direct table lookup.
pub mod query_oracle {
    use std::collections::BTreeMap;

    use crate::config::{Entry, ResolvedConfig, Scalar};
    use crate::provenance::BenchmarkRecord;

    #[derive(Debug, Clone)]
    enum Cell {
        One(Scalar),
        Many(Vec<Scalar>),
    }

    fn table(rec: &BenchmarkRecord) -> BTreeMap<String, Cell> {
        let mut t = BTreeMap::new();
        let mut put = |k: String, v: &str| {
            t.insert(k, Cell::One(Scalar::Str(v.to_string())));
        };
        put("record_id".into(), &rec.record_id);
        put("run_id".into(), &rec.run_id);
        put("requester".into(), &rec.requester);
        put("config_name".into(), &rec.config_name);
        put("metadata.machine".into(), &rec.metadata.machine);
        put("metadata.node_class".into(), &rec.metadata.node_class);
        put("metadata.timestamp".into(), &rec.metadata.timestamp);
        put("metadata.collector_version".into(), &rec.metadata.collector_version);
        for (k, v) in &rec.metadata.captured_env {
            put(format!("metadata.env.{k}"), v);
        }
        for (k, v) in &rec.metadata.software_versions {
            put(format!("metadata.software.{k}"), v);
        }
        for (k, v) in &rec.combination.assignments {
            t.insert(format!("combination.{k}"), Cell::One(v.clone()));
        }
        for (k, v) in &rec.annotations {
            t.insert(format!("annotations.{k}"), Cell::One(v.clone()));
        }
        if let Ok(rc) = ResolvedConfig::from_json(&rec.resolved_config) {
            for (k, e) in rc.entries {
                let cell = match e {
                    Entry::Scalar(s) => Cell::One(s),
                    Entry::List(l) => Cell::Many(l),
                };
                t.insert(format!("config.{k}"), cell);
            }
        }
        t
    }

    fn text(s: &Scalar) -> String {
        match s {
            Scalar::Bool(b) => format!("{b}"),
            Scalar::Int(i) => format!("{i}"),
            Scalar::Float(x) => format!("{x}"),
            Scalar::Str(s) => s.clone(),
        }
    }

    fn number(s: &Scalar) -> Option<f64> {
        match s {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Float(x) => Some(*x),
            _ => None,
        }
    }

    fn equal(a: &Scalar, b: &Scalar) -> bool {
        if let (Scalar::Int(x), Scalar::Int(y)) = (a, b) {
            return x == y;
        }
        match (number(a), number(b)) {
            (Some(x), Some(y)) => x == y,
            _ => text(a) == text(b),
        }
    }

    /// -1, 0, 1 or `None` when the two values have no order.
    fn order(a: &Scalar, b: &Scalar) -> Option<i8> {
        let sign = |o: std::cmp::Ordering| o as i8;
        match (a, b) {
            (Scalar::Int(x), Scalar::Int(y)) => Some(sign(x.cmp(y))),
            (Scalar::Str(x), Scalar::Str(y)) => Some(sign(x.cmp(y))),
            (Scalar::Bool(_), _) | (_, Scalar::Bool(_)) => None,
            _ => number(a)?.partial_cmp(&number(b)?).map(sign),
        }
    }

    fn check(cell: &Cell, op: &str, v: &Scalar) -> bool {
        match cell {
            Cell::Many(items) => match op {
                "~" => items.iter().any(|i| equal(i, v)),
                "!=" => true,
                _ => false,
            },
            Cell::One(s) => match op {
                "=" => equal(s, v),
                "!=" => !equal(s, v),
                "<" => order(s, v) == Some(-1),
                "<=" => matches!(order(s, v), Some(-1 | 0)),
                ">" => order(s, v) == Some(1),
                ">=" => matches!(order(s, v), Some(1 | 0)),
                "~" => text(s).contains(&text(v)),
                other => panic!("oracle does not know operator {other}"),
            },
        }
    }

    /// Ids (ascending) of records satisfying all `(key, operator, value)` triples.
    pub fn scan(records: &[BenchmarkRecord], predicates: &[(String, String, Scalar)]) -> Vec<String> {
        let mut ids: Vec<String> = records
            .iter()
            .filter(|rec| {
                let t = table(rec);
                predicates.iter().all(|(k, op, v)| t.get(k).is_some_and(|cell| check(cell, op, v)))
            })
            .map(|r| r.record_id.clone())
            .collect();
        ids.sort();
        ids
    }
}

/// Textbook two-pass sample statistics.
pub mod stats_oracle {
    /// Mean and standard error of the mean with the n-1 sample variance;
    /// the standard error of a single value is 0.
    pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mut sum = 0.0;
        for x in xs {
            sum += x;
        }
        let mean = sum / n;
        if xs.len() < 2 {
            return (mean, 0.0);
        }
        let mut ss = 0.0;
        for x in xs {
            ss += (x - mean) * (x - mean);
        }
        let var = ss / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}
