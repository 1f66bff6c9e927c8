use super::{
    batch_time, require_image, MigrationError, MigrationEvent, MigrationParams, MigrationReport,
    MigrationRun, Outcome, Phase, Strategy,
};
use crate::memory::{BatchFilter, DirtyProcess, PageId};
use crate::model::{HostNode, NfInstance, TransferPath};
use crate::num::Scalar;
use crate::sim::{Micros, Simulation};

/// Iterative copy while running, then a short frozen copy of what is left.
///
/// Round 0 sends the whole image; every later round sends the pages dirtied
/// during the previous one. After each round the loop stops once the dirty
/// set is at most `precopy_stop_threshold_pages` or `precopy_max_rounds`
/// rounds have run. Hitting the round cap is not an error: the final frozen
/// batch is simply large.
pub fn migrate_pre_copy<T: Scalar>(
    nf: &mut NfInstance,
    target: &HostNode,
    path: &TransferPath,
    params: &MigrationParams,
    dirty: &mut DirtyProcess<T>,
) -> Result<MigrationRun, MigrationError> {
    params.validate()?;
    let image = require_image(nf, Strategy::PreCopy)?;
    image.begin_migration();
    let page_size = image.page_size();

    let mut sim = Simulation::new();
    sim.schedule(
        0,
        MigrationEvent::Start {
            strategy: Strategy::PreCopy,
            pages: image.num_pages(),
        },
    )?;

    let mut running = true;
    let mut rounds = 0u32;
    let mut bytes = 0u64;
    let mut batch: Vec<PageId> = Vec::new();
    let mut round_started: Micros = 0;
    let mut freeze_started: Micros = 0;

    while let Some(event) = sim.step(u64::MAX) {
        match event.payload {
            MigrationEvent::Start { .. } => {
                batch = image.take_transfer_batch(BatchFilter::All);
                round_started = sim.now();
                sim.schedule_in(
                    batch_time(batch.len(), page_size, path),
                    MigrationEvent::RoundComplete {
                        round: 0,
                        pages: batch.len(),
                        dirtied: 0,
                    },
                );
            }
            MigrationEvent::RoundComplete { round, .. } => {
                image.mark_copied(&batch);
                bytes += batch.len() as u64 * page_size;
                assert!(running, "memory must not be dirtied while frozen");
                dirty.advance(image, sim.now() - round_started);
                rounds = round + 1;
                let remaining = image.dirty_count();
                if remaining as u64 <= params.precopy_stop_threshold_pages
                    || rounds >= params.precopy_max_rounds
                {
                    running = false;
                    freeze_started = sim.now();
                    sim.schedule_in(params.freeze_overhead_us, MigrationEvent::Frozen);
                } else {
                    batch = image.take_transfer_batch(BatchFilter::DirtyOnly);
                    round_started = sim.now();
                    sim.schedule_in(
                        batch_time(batch.len(), page_size, path),
                        MigrationEvent::RoundComplete {
                            round: rounds,
                            pages: batch.len(),
                            dirtied: remaining,
                        },
                    );
                }
            }
            MigrationEvent::Frozen => {
                batch = image.take_transfer_batch(BatchFilter::DirtyOnly);
                sim.schedule_in(
                    batch_time(batch.len(), page_size, path),
                    MigrationEvent::TransferComplete {
                        phase: Phase::Final,
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
            other => unreachable!("pre-copy never schedules {other:?}"),
        }
    }

    let end = sim.now();
    debug_assert!(image.is_fully_transferred());
    nf.host = target.id.clone();
    Ok(MigrationRun {
        report: MigrationReport {
            downtime_us: end - freeze_started,
            migration_time_us: end,
            bytes_transferred: bytes,
            rounds,
            ..MigrationReport::empty(Strategy::PreCopy, Outcome::Success)
        },
        trace: sim.into_trace(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryImage;
    use crate::migration::migrate_inter_copy;
    use crate::model::{NetworkDriverKind, NfKind};
    use crate::num::Exact;

    fn target() -> HostNode {
        HostNode {
            id: "h2".into(),
            hall: "hall-B".into(),
            cpu_capacity: 4,
            driver: NetworkDriverKind::Host,
        }
    }

    fn smf(pages: u32) -> NfInstance {
        NfInstance::stateful("smf-1", NfKind::Smf, "h1", MemoryImage::new(pages, 1))
    }

    const PATH: TransferPath = TransferPath {
        latency_us: 0,
        bandwidth_bps: 100,
    };

    fn params(threshold: u64, rounds: u32) -> MigrationParams {
        MigrationParams {
            precopy_stop_threshold_pages: threshold,
            precopy_max_rounds: rounds,
            ..MigrationParams::zero_overheads()
        }
    }

    #[test]
    fn worked_example() {
        let mut dirty = DirtyProcess::constant_rate(Exact::from_integer(10));
        let run =
            migrate_pre_copy(&mut smf(100), &target(), &PATH, &params(2, 10), &mut dirty).unwrap();
        assert_eq!(run.report.downtime_us, 10_000);
        assert_eq!(run.report.migration_time_us, 1_110_000);
        assert_eq!(run.report.bytes_transferred, 111);
        assert_eq!(run.report.rounds, 2);
    }

    #[test]
    fn idle_process_needs_a_single_round() {
        let p = MigrationParams {
            freeze_overhead_us: 7,
            restart_overhead_us: 11,
            ..params(2, 10)
        };
        let mut dirty = DirtyProcess::<Exact>::idle();
        let run = migrate_pre_copy(&mut smf(100), &target(), &PATH, &p, &mut dirty).unwrap();
        assert_eq!(run.report.rounds, 1);
        assert_eq!(run.report.downtime_us, 18);
        assert_eq!(run.report.bytes_transferred, 100);
    }

    #[test]
    fn round_cap_forces_termination_when_rate_exceeds_bandwidth() {
        let mut dirty = DirtyProcess::constant_rate(Exact::from_integer(200));
        let run =
            migrate_pre_copy(&mut smf(100), &target(), &PATH, &params(2, 3), &mut dirty).unwrap();
        assert_eq!(run.report.rounds, 3);
        // the whole image is dirty again, so the frozen copy is a full inter-copy
        let inter = migrate_inter_copy(&mut smf(100), &target(), &PATH, &params(2, 3)).unwrap();
        assert!(run.report.downtime_us >= inter.report.downtime_us);
        assert_eq!(run.report.bytes_transferred, 400);
    }

    #[test]
    fn default_threshold_gives_three_transfers() {
        let p = MigrationParams::zero_overheads();
        let mut dirty = DirtyProcess::constant_rate(Exact::from_integer(10));
        let run = migrate_pre_copy(&mut smf(100), &target(), &PATH, &p, &mut dirty).unwrap();
        let transfers = run
            .trace
            .events()
            .iter()
            .filter(|e| {
                matches!(
                    e.payload,
                    MigrationEvent::RoundComplete { .. } | MigrationEvent::TransferComplete { .. }
                )
            })
            .count();
        assert_eq!(transfers, 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn batches_shrink_after_first_pass(
                pages in 1u32..2_000,
                bw_pages in 1u64..5_000,
                rate_frac in 0.0f64..0.95,
                threshold in 0u64..20,
                max_rounds in 1u32..12,
            ) {
                let rate = Exact::from_f64_lossy(rate_frac * bw_pages as f64).unwrap();
                let path = TransferPath { latency_us: 0, bandwidth_bps: bw_pages };
                let mut dirty = DirtyProcess::constant_rate(rate);
                let run = migrate_pre_copy(
                    &mut smf(pages), &target(), &path, &params(threshold, max_rounds), &mut dirty,
                ).unwrap();
                let sizes: Vec<usize> = run.trace.events().iter().filter_map(|e| match e.payload {
                    MigrationEvent::RoundComplete { pages, .. } => Some(pages),
                    MigrationEvent::TransferComplete { pages, .. } => Some(pages),
                    _ => None,
                }).collect();
                for w in sizes[1..].windows(2) {
                    prop_assert!(w[1] <= w[0], "{sizes:?}");
                }
                prop_assert!(run.report.downtime_us <= run.report.migration_time_us);
                prop_assert!(run.report.bytes_transferred >= pages as u64);
            }

            #[test]
            fn never_worse_than_inter_copy(
                pages in 1u32..2_000,
                bw_pages in 1u64..5_000,
                rate_frac in 0.0f64..0.99,
                latency in 0u64..5_000,
                freeze in 0u64..10_000,
                restart in 0u64..10_000,
                threshold in 0u64..2_000,
            ) {
                let threshold = threshold.min(pages as u64 - 1);
                let rate = Exact::from_f64_lossy(rate_frac * bw_pages as f64).unwrap();
                let path = TransferPath { latency_us: latency, bandwidth_bps: bw_pages };
                let p = MigrationParams {
                    freeze_overhead_us: freeze,
                    restart_overhead_us: restart,
                    ..params(threshold, 10)
                };
                let mut dirty = DirtyProcess::constant_rate(rate);
                let pre = migrate_pre_copy(&mut smf(pages), &target(), &path, &p, &mut dirty).unwrap();
                let inter = migrate_inter_copy(&mut smf(pages), &target(), &path, &p).unwrap();
                prop_assert!(pre.report.downtime_us <= inter.report.downtime_us);
            }
        }
    }
}
