use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::{export_metrics, parse_scenario_file, run_scenario, KindTotals, ScenarioError};

/// Aggregate outcome of one sweep point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub migrations: u64,
    pub failed: u64,
    pub downtime_us: u64,
    pub migration_time_us: u64,
    pub bytes: u64,
    pub sync_bytes: u64,
    pub stall_us: u64,
}

/// Replaces the value at a dotted path such as `migration_params.freeze_overhead_us`
/// or `nfs.1.memory.pages`. Missing object keys are created.
pub fn set_json_path(root: &mut Value, key: &str, value: Value) -> Result<(), ScenarioError> {
    let bad = |detail: &str| ScenarioError::Validation {
        key: key.to_owned(),
        detail: detail.to_owned(),
    };
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(bad("empty path segment"));
    }
    let mut here = root;
    for seg in &segments[..segments.len() - 1] {
        here = match here {
            Value::Object(map) => map
                .entry(seg.to_string())
                .or_insert_with(|| Value::Object(Default::default())),
            Value::Array(items) => {
                let i: usize = seg.parse().map_err(|_| bad("array index expected"))?;
                items
                    .get_mut(i)
                    .ok_or_else(|| bad("array index out of range"))?
            }
            _ => return Err(bad("path runs through a scalar")),
        };
    }
    let last = segments[segments.len() - 1];
    match here {
        Value::Object(map) => {
            map.insert(last.to_owned(), value);
        }
        Value::Array(items) => {
            let i: usize = last.parse().map_err(|_| bad("array index expected"))?;
            *items
                .get_mut(i)
                .ok_or_else(|| bad("array index out of range"))? = value;
        }
        _ => return Err(bad("path runs through a scalar")),
    }
    Ok(())
}

fn literal(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

/// Runs the scenario once per value of `key`, in parallel.
///
/// With `out_dir`, each point is exported to `<out_dir>/<key>=<value>/` and
/// the aggregate rows to `<out_dir>/sweep.csv`.
pub fn sweep(
    text: &str,
    key: &str,
    values: &[String],
    seed: Option<u64>,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>, ScenarioError> {
    parse_scenario_file(text)?;
    let base: Value = serde_json::from_str(text).expect("text parsed above");
    let mut scenarios = Vec::with_capacity(values.len());
    for raw in values {
        let mut doc = base.clone();
        set_json_path(&mut doc, key, literal(raw))?;
        let file: super::ScenarioFile =
            serde_path_to_error::deserialize(&doc).map_err(|e| ScenarioError::Validation {
                key: e.path().to_string(),
                detail: e.inner().to_string(),
            })?;
        scenarios.push(file.validate()?);
    }

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut bundles = Vec::with_capacity(scenarios.len());
    for chunk in scenarios.chunks(workers) {
        let done: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|sc| s.spawn(move || run_scenario(sc, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });
        bundles.extend(done);
    }

    let mut rows = Vec::with_capacity(bundles.len());
    for (raw, bundle) in values.iter().zip(&bundles) {
        let mut t = KindTotals::default();
        for k in bundle.totals().values() {
            t.migrations += k.migrations;
            t.failed += k.failed;
            t.downtime_us += k.downtime_us;
            t.migration_time_us += k.migration_time_us;
            t.bytes += k.bytes;
            t.sync_bytes += k.sync_bytes;
            t.stall_us += k.stall_us;
        }
        rows.push(SweepRow {
            value: raw.clone(),
            migrations: t.migrations,
            failed: t.failed,
            downtime_us: t.downtime_us,
            migration_time_us: t.migration_time_us,
            bytes: t.bytes,
            sync_bytes: t.sync_bytes,
            stall_us: t.stall_us,
        });
        if let Some(dir) = out_dir {
            let name: String = format!("{key}={raw}")
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || "=._-".contains(c) {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            export_metrics(bundle, &dir.join(name))?;
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| ScenarioError::io(dir, e))?;
        let path = dir.join("sweep.csv");
        let io = |e: csv::Error| ScenarioError::io(&path, std::io::Error::other(e.to_string()));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        for row in &rows {
            w.serialize(row).map_err(io)?;
        }
        w.flush().map_err(|e| ScenarioError::io(&path, e))?;
    }
    Ok(rows)
}
