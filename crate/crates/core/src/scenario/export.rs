use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{MetricsBundle, ScenarioError};

const MIGRATION_HEADER: [&str; 11] = [
    "trigger_id",
    "nf_id",
    "kind",
    "strategy",
    "downtime_us",
    "migration_time_us",
    "bytes",
    "sync_bytes",
    "stall_us",
    "rounds",
    "outcome",
];

pub fn write_migrations_csv<W: Write>(bundle: &MetricsBundle, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MIGRATION_HEADER)?;
    for r in &bundle.records {
        let rep = &r.report;
        w.write_record([
            r.trigger_id.clone(),
            r.nf_id.to_string(),
            r.kind.to_string(),
            rep.strategy.to_string(),
            rep.downtime_us.to_string(),
            rep.migration_time_us.to_string(),
            rep.bytes_transferred.to_string(),
            rep.sync_bytes.to_string(),
            rep.stall_time_us.to_string(),
            rep.rounds.to_string(),
            rep.outcome.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rtt_csv<W: Write>(bundle: &MetricsBundle, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_us", "rtt_us"])?;
    for (t, rtt) in &bundle.rtt_series {
        w.write_record([t.to_string(), rtt.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-kind totals followed by an overall line.
pub fn summary_text(bundle: &MetricsBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} seed {}", bundle.scenario, bundle.seed);
    let _ = writeln!(
        out,
        "{:<6} {:>10} {:>6} {:>14} {:>18} {:>14} {:>14} {:>10}",
        "kind",
        "migrations",
        "failed",
        "downtime_us",
        "migration_time_us",
        "bytes",
        "sync_bytes",
        "stall_us"
    );
    let totals = bundle.totals();
    let mut all = super::KindTotals::default();
    let line = |out: &mut String, name: &str, t: &super::KindTotals| {
        let _ = writeln!(
            out,
            "{:<6} {:>10} {:>6} {:>14} {:>18} {:>14} {:>14} {:>10}",
            name,
            t.migrations,
            t.failed,
            t.downtime_us,
            t.migration_time_us,
            t.bytes,
            t.sync_bytes,
            t.stall_us
        );
    };
    for (kind, t) in &totals {
        line(&mut out, &kind.to_string(), t);
        all.migrations += t.migrations;
        all.failed += t.failed;
        all.downtime_us += t.downtime_us;
        all.migration_time_us += t.migration_time_us;
        all.bytes += t.bytes;
        all.sync_bytes += t.sync_bytes;
        all.stall_us += t.stall_us;
    }
    line(&mut out, "total", &all);
    out
}

fn csv_io(path: &Path, e: csv::Error) -> ScenarioError {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    };
    ScenarioError::io(path, source)
}

/// Writes migrations.csv, rtt.csv, trace.jsonl and summary.txt into `out_dir`.
pub fn export_metrics(
    bundle: &MetricsBundle,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ScenarioError> {
    std::fs::create_dir_all(out_dir).map_err(|e| ScenarioError::io(out_dir, e))?;
    let open = |name: &str| -> Result<(PathBuf, std::fs::File), ScenarioError> {
        let path = out_dir.join(name);
        let f = std::fs::File::create(&path).map_err(|e| ScenarioError::io(&path, e))?;
        Ok((path, f))
    };

    let (migrations, f) = open("migrations.csv")?;
    write_migrations_csv(bundle, f).map_err(|e| csv_io(&migrations, e))?;
    let (rtt, f) = open("rtt.csv")?;
    write_rtt_csv(bundle, f).map_err(|e| csv_io(&rtt, e))?;
    let trace = out_dir.join("trace.jsonl");
    std::fs::write(&trace, bundle.trace.to_jsonl()).map_err(|e| ScenarioError::io(&trace, e))?;
    let summary = out_dir.join("summary.txt");
    std::fs::write(&summary, summary_text(bundle)).map_err(|e| ScenarioError::io(&summary, e))?;
    Ok(vec![migrations, rtt, trace, summary])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::migration::{MigrationReport, Outcome, Strategy};
    use crate::model::NfKind;
    use crate::scenario::MigrationRecord;
    use crate::sim::EventTrace;

    fn empty() -> MetricsBundle {
        MetricsBundle {
            scenario: "x".into(),
            seed: 1,
            records: Vec::new(),
            rtt_series: Vec::new(),
            trace: EventTrace::default(),
        }
    }

    fn csv_string(bundle: &MetricsBundle) -> String {
        let mut buf = Vec::new();
        write_migrations_csv(bundle, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_bundle_gives_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        export_metrics(&empty(), dir.path()).unwrap();
        let m = std::fs::read_to_string(dir.path().join("migrations.csv")).unwrap();
        assert_eq!(
            m,
            "trigger_id,nf_id,kind,strategy,downtime_us,migration_time_us,bytes,sync_bytes,stall_us,rounds,outcome\n"
        );
        let r = std::fs::read_to_string(dir.path().join("rtt.csv")).unwrap();
        assert_eq!(r, "time_us,rtt_us\n");
        assert_eq!(
            std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap(),
            ""
        );
    }

    #[test]
    fn inter_copy_row_has_equal_times() {
        let mut b = empty();
        b.records.push(MigrationRecord {
            trigger_id: "t0".into(),
            nf_id: "udr-1".into(),
            kind: NfKind::Udr,
            from: "a".into(),
            to: Some("b".into()),
            started_us: 0,
            completed_us: 7,
            report: MigrationReport {
                downtime_us: 7,
                migration_time_us: 7,
                bytes_transferred: 3,
                ..MigrationReport::empty(Strategy::InterCopy, Outcome::Success)
            },
        });
        let text = csv_string(&b);
        let row = text.lines().nth(1).unwrap();
        assert_eq!(row, "t0,udr-1,UDR,InterCopy,7,7,3,0,0,0,success");
        assert_eq!(csv_string(&b), text);
    }

    #[test]
    fn failure_reason_is_quoted_when_needed() {
        let mut b = empty();
        b.records.push(MigrationRecord {
            trigger_id: "t0".into(),
            nf_id: "smf-1".into(),
            kind: NfKind::Smf,
            from: "a".into(),
            to: None,
            started_us: 0,
            completed_us: 0,
            report: MigrationReport::empty(Strategy::PreCopy, Outcome::Failed("a, b".into())),
        });
        assert!(csv_string(&b).ends_with("\"failed: a, b\"\n"));
    }
}
