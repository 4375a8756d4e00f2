use std::collections::BTreeMap;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::executor::MachineProperties;

pub const UNKNOWN: &str = "unknown";
pub const COLLECTOR_VERSION: &str = concat!("benchforge ", env!("CARGO_PKG_VERSION"));

/// Hardware and environment description attached to every record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataSnapshot {
    pub machine: String,
    pub node_class: String,
    pub captured_env: BTreeMap<String, String>,
    pub software_versions: BTreeMap<String, String>,
    /// UTC, RFC 3339 with microseconds; sorts chronologically as text.
    pub timestamp: String,
    pub collector_version: String,
}

/// What the collector may look at.
pub struct ExecutionContext<'a> {
    pub machine: &'a MachineProperties,
    pub node_class: &'a str,
    /// The environment the job ran with.
    pub env: &'a BTreeMap<String, String>,
}

static LAST_TIMESTAMP: Mutex<Option<DateTime<Utc>>> = Mutex::new(None);

/// Wall-clock now, but never earlier than a previous call in this process.
pub(crate) fn monotone_now() -> DateTime<Utc> {
    let mut last = LAST_TIMESTAMP.lock().unwrap();
    let now = Utc::now();
    let t = match *last {
        Some(prev) if prev > now => prev,
        _ => now,
    };
    *last = Some(t);
    t
}

pub(crate) fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.6fZ").to_string()
}

fn read_proc(path: &str) -> String {
    std::fs::read_to_string(path).map(|s| s.trim().to_string()).ok().filter(|s| !s.is_empty()).unwrap_or_else(|| UNKNOWN.to_string())
}

/// Never fails: anything that cannot be determined is recorded as `unknown`.
pub fn collect_metadata(ctx: &ExecutionContext) -> MetadataSnapshot {
    let captured_env = ctx
        .machine
        .allowlisted_env
        .iter()
        .map(|k| (k.clone(), ctx.env.get(k).cloned().unwrap_or_else(|| UNKNOWN.to_string())))
        .collect();
    let mut software_versions = ctx.machine.software_versions.clone();
    software_versions.insert("os".into(), format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH));
    software_versions.insert("kernel".into(), read_proc("/proc/sys/kernel/osrelease"));
    software_versions.insert("hostname".into(), read_proc("/proc/sys/kernel/hostname"));
    software_versions.insert("benchforge".into(), env!("CARGO_PKG_VERSION").into());
    MetadataSnapshot {
        machine: ctx.machine.name.clone(),
        node_class: ctx.node_class.to_string(),
        captured_env,
        software_versions,
        timestamp: format_timestamp(&monotone_now()),
        collector_version: COLLECTOR_VERSION.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_context() {
        let machine = MachineProperties::local("local");
        let env = BTreeMap::from([("PATH".to_string(), "/bin".to_string()), ("SECRET".to_string(), "x".to_string())]);
        let snap = collect_metadata(&ExecutionContext { machine: &machine, node_class: "local", env: &env });
        assert_eq!(snap.machine, "local");
        assert_eq!(snap.node_class, "local");
        assert_eq!(snap.captured_env["PATH"], "/bin");
        assert_eq!(snap.captured_env["HOME"], UNKNOWN);
        assert!(!snap.captured_env.contains_key("SECRET"));
        assert_eq!(snap.collector_version, COLLECTOR_VERSION);
    }

    #[test]
    fn timestamps_do_not_go_backwards() {
        let stamps: Vec<String> = (0..200).map(|_| format_timestamp(&monotone_now())).collect();
        assert!(stamps.windows(2).all(|w| w[0] <= w[1]));
    }
}
