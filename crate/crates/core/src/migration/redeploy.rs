use super::{
    MigrationError, MigrationEvent, MigrationParams, MigrationReport, MigrationRun, Outcome,
    Strategy,
};
use crate::model::{HostNode, NfInstance};
use crate::sim::Simulation;

/// Starts a fresh instance on the target. Nothing is copied.
pub fn redeploy_stateless(
    nf: &mut NfInstance,
    target: &HostNode,
    params: &MigrationParams,
) -> Result<MigrationRun, MigrationError> {
    if nf.stateful {
        return Err(MigrationError::StrategyInapplicable {
            nf: nf.id.clone(),
            strategy: Strategy::NoMigrationRedeploy,
            reason: "function holds state that a fresh instance would lose".into(),
        });
    }
    let mut sim = Simulation::new();
    sim.schedule(
        0,
        MigrationEvent::Start {
            strategy: Strategy::NoMigrationRedeploy,
            pages: 0,
        },
    )?;
    sim.schedule(params.restart_overhead_us, MigrationEvent::Restarted)?;
    sim.run_until(u64::MAX);
    nf.host = target.id.clone();
    let end = sim.now();
    Ok(MigrationRun {
        report: MigrationReport {
            downtime_us: end,
            migration_time_us: end,
            ..MigrationReport::empty(Strategy::NoMigrationRedeploy, Outcome::Success)
        },
        trace: sim.into_trace(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryImage;
    use crate::model::{NetworkDriverKind, NfKind};

    fn target() -> HostNode {
        HostNode {
            id: "h2".into(),
            hall: "hall-B".into(),
            cpu_capacity: 4,
            driver: NetworkDriverKind::Macvlan,
        }
    }

    #[test]
    fn costs_exactly_one_restart() {
        let mut upf = NfInstance::stateless("upf-1", NfKind::Upf, "h1");
        let run = redeploy_stateless(&mut upf, &target(), &MigrationParams::default()).unwrap();
        assert_eq!(run.report.downtime_us, 20_000);
        assert_eq!(run.report.migration_time_us, 20_000);
        assert_eq!(run.report.bytes_transferred, 0);
        assert_eq!(upf.host, "h2".into());
        assert_eq!(run.trace.len(), 2);
    }

    #[test]
    fn stateful_function_is_rejected() {
        let mut smf = NfInstance::stateful("smf-1", NfKind::Smf, "h1", MemoryImage::new(4, 1));
        let err = redeploy_stateless(&mut smf, &target(), &MigrationParams::default()).unwrap_err();
        assert!(matches!(err, MigrationError::StrategyInapplicable { .. }));
        assert_eq!(smf.host, "h1".into());
    }
}
