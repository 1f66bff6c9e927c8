use super::{
    batch_time, require_image, MigrationError, MigrationEvent, MigrationParams, MigrationReport,
    MigrationRun, Outcome, Phase, Strategy,
};
use crate::memory::BatchFilter;
use crate::model::{HostNode, NfInstance, TransferPath};
use crate::sim::Simulation;

/// Freeze, copy the whole image once, restart on the target.
pub fn migrate_inter_copy(
    nf: &mut NfInstance,
    target: &HostNode,
    path: &TransferPath,
    params: &MigrationParams,
) -> Result<MigrationRun, MigrationError> {
    params.validate()?;
    let image = require_image(nf, Strategy::InterCopy)?;
    image.begin_migration();
    let page_size = image.page_size();

    let mut sim = Simulation::new();
    sim.schedule(
        0,
        MigrationEvent::Start {
            strategy: Strategy::InterCopy,
            pages: image.num_pages(),
        },
    )?;

    let mut bytes = 0;
    let mut batch = Vec::new();
    while let Some(event) = sim.step(u64::MAX) {
        match event.payload {
            MigrationEvent::Start { .. } => {
                sim.schedule_in(params.freeze_overhead_us, MigrationEvent::Frozen);
            }
            MigrationEvent::Frozen => {
                batch = image.take_transfer_batch(BatchFilter::All);
                sim.schedule_in(
                    batch_time(batch.len(), page_size, path),
                    MigrationEvent::TransferComplete {
                        phase: Phase::Full,
                        pages: batch.len(),
                    },
                );
            }
            MigrationEvent::TransferComplete { .. } => {
                image.mark_copied(&batch);
                bytes += batch.len() as u64 * page_size;
                sim.schedule_in(params.restart_overhead_us, MigrationEvent::Restarted);
            }
            MigrationEvent::Restarted => {}
            other => unreachable!("inter-copy never schedules {other:?}"),
        }
    }

    let end = sim.now();
    debug_assert!(image.is_fully_transferred());
    nf.host = target.id.clone();
    Ok(MigrationRun {
        report: MigrationReport {
            downtime_us: end,
            migration_time_us: end,
            bytes_transferred: bytes,
            ..MigrationReport::empty(Strategy::InterCopy, Outcome::Success)
        },
        trace: sim.into_trace(),
    })
}
