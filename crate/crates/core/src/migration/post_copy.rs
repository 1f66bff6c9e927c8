use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{
    batch_time, require_image, MigrationError, MigrationEvent, MigrationParams, MigrationReport,
    MigrationRun, Outcome, Phase, Strategy,
};
use crate::memory::{BatchFilter, PageId, PageState};
use crate::model::{HostNode, NfInstance, TransferPath};
use crate::sim::{transfer_micros, EventHandle, Micros, Simulation};

/// A page touched by the restarted function, `offset_us` of execution time
/// after the restart. Offsets are execution time: stalls push later accesses
/// back in simulated time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageAccess {
    pub offset_us: Micros,
    pub page: PageId,
}

struct BackgroundSend {
    page: PageId,
    done_at: Micros,
    handle: EventHandle,
}

/// Freeze, copy the working set, restart, then stream the rest.
///
/// Pages left behind are sent one at a time in ascending id order. Touching
/// a page that has not arrived yet stalls the function: if the page is
/// already on the wire it waits for it, otherwise a demand fetch preempts the
/// background stream and the page arrives `2L + page serialization` later.
/// A stall longer than `postcopy_fault_deadline_us` kills the function.
pub fn migrate_post_copy(
    nf: &mut NfInstance,
    target: &HostNode,
    path: &TransferPath,
    params: &MigrationParams,
    access_trace: &[PageAccess],
) -> Result<MigrationRun, MigrationError> {
    params.validate()?;
    let image = require_image(nf, Strategy::PostCopy)?;
    if let Some(bad) = access_trace.iter().find(|a| a.page >= image.num_pages()) {
        return Err(MigrationError::InvalidAccessTrace(format!(
            "page {} outside image of {} pages",
            bad.page,
            image.num_pages()
        )));
    }
    let mut accesses = access_trace.to_vec();
    accesses.sort_by_key(|a| a.offset_us);

    image.begin_migration();
    let page_size = image.page_size();
    let latency = path.latency_us;
    let page_time = transfer_micros(page_size, path.bandwidth_bps);

    let mut sim = Simulation::new();
    sim.schedule(
        0,
        MigrationEvent::Start {
            strategy: Strategy::PostCopy,
            pages: image.num_pages(),
        },
    )?;

    let mut working_set: Vec<PageId> = Vec::new();
    let mut background: VecDeque<PageId> = VecDeque::new();
    let mut sending: Option<BackgroundSend> = None;
    let mut in_flight: BTreeMap<PageId, Micros> = BTreeMap::new();
    let mut waiting: Option<(PageId, usize)> = None;
    let mut restart_at: Micros = 0;
    let mut last_arrival: Micros = 0;
    let mut stall_total: Micros = 0;
    let mut bytes = 0u64;
    let mut failure: Option<(Micros, String)> = None;

    // Starts the next background page if the link is idle.
    fn pump(
        sim: &mut Simulation<MigrationEvent>,
        background: &mut VecDeque<PageId>,
        sending: &mut Option<BackgroundSend>,
        page_time: Micros,
    ) {
        if sending.is_some() {
            return;
        }
        if let Some(page) = background.pop_front() {
            let handle = sim.schedule_in(page_time, MigrationEvent::BackgroundSent { page });
            *sending = Some(BackgroundSend {
                page,
                done_at: sim.now() + page_time,
                handle,
            });
        }
    }

    // Schedules access `index` after the gap since the previous access.
    let schedule_access = |sim: &mut Simulation<MigrationEvent>, index: usize| {
        if let Some(a) = accesses.get(index) {
            let gap = if index == 0 {
                a.offset_us
            } else {
                a.offset_us - accesses[index - 1].offset_us
            };
            sim.schedule_in(
                gap,
                MigrationEvent::PageAccess {
                    index,
                    page: a.page,
                },
            );
        }
    };

    while let Some(event) = sim.step(u64::MAX) {
        match event.payload {
            MigrationEvent::Start { .. } => {
                sim.schedule_in(params.freeze_overhead_us, MigrationEvent::Frozen);
            }
            MigrationEvent::Frozen => {
                working_set = image.take_transfer_batch(BatchFilter::WorkingSetOnly);
                sim.schedule_in(
                    batch_time(working_set.len(), page_size, path),
                    MigrationEvent::TransferComplete {
                        phase: Phase::WorkingSet,
                        pages: working_set.len(),
                    },
                );
            }
            MigrationEvent::TransferComplete { .. } => {
                image.mark_copied(&working_set);
                bytes += working_set.len() as u64 * page_size;
                last_arrival = sim.now();
                sim.schedule_in(params.restart_overhead_us, MigrationEvent::Restarted);
            }
            MigrationEvent::Restarted => {
                restart_at = sim.now();
                background = image
                    .take_transfer_batch(BatchFilter::NeverCopiedOnly)
                    .into();
                pump(&mut sim, &mut background, &mut sending, page_time);
                schedule_access(&mut sim, 0);
            }
            MigrationEvent::BackgroundSent { page } => {
                sending = None;
                in_flight.insert(page, sim.now() + latency);
                sim.schedule_in(latency, MigrationEvent::BackgroundArrived { page });
                pump(&mut sim, &mut background, &mut sending, page_time);
            }
            MigrationEvent::BackgroundArrived { page } | MigrationEvent::DemandArrived { page } => {
                in_flight.remove(&page);
                image.mark_copied(&[page]);
                bytes += page_size;
                last_arrival = sim.now();
                if let Some((wanted, index)) = waiting {
                    if wanted == page {
                        waiting = None;
                        schedule_access(&mut sim, index + 1);
                    }
                }
            }
            MigrationEvent::PageAccess { index, page } => {
                let stall = if image.state(page) == PageState::CleanAtTarget {
                    0
                } else if let Some(&arrival) = in_flight.get(&page) {
                    arrival - sim.now()
                } else if let Some(send) = sending.as_ref().filter(|s| s.page == page) {
                    send.done_at + latency - sim.now()
                } else {
                    background.retain(|&p| p != page);
                    sim.schedule_in(latency, MigrationEvent::DemandRequest { page });
                    2 * latency + page_time
                };
                if stall == 0 {
                    schedule_access(&mut sim, index + 1);
                } else if stall > params.postcopy_fault_deadline_us {
                    stall_total += params.postcopy_fault_deadline_us;
                    let reason = "fault deadline exceeded".to_owned();
                    sim.schedule_in(
                        params.postcopy_fault_deadline_us,
                        MigrationEvent::Failed {
                            reason: reason.clone(),
                        },
                    );
                    failure = Some((sim.now() + params.postcopy_fault_deadline_us, reason));
                } else {
                    stall_total += stall;
                    waiting = Some((page, index));
                }
            }
            MigrationEvent::DemandRequest { page } => {
                // The demanded page takes the link; the interrupted background
                // page resumes once it is through.
                if let Some(send) = sending.as_mut() {
                    sim.cancel(send.handle);
                    send.done_at += page_time;
                    send.handle = sim.schedule(
                        send.done_at,
                        MigrationEvent::BackgroundSent { page: send.page },
                    )?;
                }
                let arrival = sim.now() + page_time + latency;
                in_flight.insert(page, arrival);
                sim.schedule(arrival, MigrationEvent::DemandArrived { page })?;
            }
            MigrationEvent::Failed { .. } => break,
            other => unreachable!("post-copy never schedules {other:?}"),
        }
    }

    let report = match failure {
        Some((at, reason)) => MigrationReport {
            downtime_us: restart_at.min(at),
            migration_time_us: at,
            bytes_transferred: bytes,
            stall_time_us: stall_total,
            ..MigrationReport::empty(Strategy::PostCopy, Outcome::Failed(reason))
        },
        None => {
            debug_assert!(image.is_fully_transferred());
            nf.host = target.id.clone();
            MigrationReport {
                downtime_us: restart_at,
                migration_time_us: last_arrival.max(restart_at),
                bytes_transferred: bytes,
                stall_time_us: stall_total,
                ..MigrationReport::empty(Strategy::PostCopy, Outcome::Success)
            }
        }
    };
    Ok(MigrationRun {
        report,
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
            driver: NetworkDriverKind::Host,
        }
    }

    fn smf(pages: u32, ws: u32) -> NfInstance {
        let image = MemoryImage::new(pages, 1).with_working_set(0..ws).unwrap();
        NfInstance::stateful("smf-1", NfKind::Smf, "h1", image)
    }

    fn path(latency_us: Micros) -> TransferPath {
        TransferPath {
            latency_us,
            bandwidth_bps: 100,
        }
    }

    fn access(offset_us: Micros, page: PageId) -> PageAccess {
        PageAccess { offset_us, page }
    }

    #[test]
    fn working_set_then_background() {
        let mut nf = smf(100, 20);
        let run = migrate_post_copy(
            &mut nf,
            &target(),
            &path(0),
            &MigrationParams::zero_overheads(),
            &[],
        )
        .unwrap();
        let r = run.report;
        assert_eq!(r.downtime_us, 200_000);
        assert_eq!(r.migration_time_us, 1_000_000);
        assert_eq!(r.stall_time_us, 0);
        assert_eq!(r.bytes_transferred, 100);
        assert!(r.outcome.is_success());
        assert!(nf.memory.unwrap().is_fully_transferred());
    }

    #[test]
    fn touching_a_copied_page_does_not_stall() {
        let run = migrate_post_copy(
            &mut smf(100, 20),
            &target(),
            &path(0),
            &MigrationParams::zero_overheads(),
            &[access(0, 3), access(5, 19)],
        )
        .unwrap();
        assert_eq!(run.report.stall_time_us, 0);
    }

    #[test]
    fn slow_demand_fetch_fails_the_function() {
        let params = MigrationParams {
            postcopy_fault_deadline_us: 1_000,
            ..MigrationParams::zero_overheads()
        };
        let mut nf = smf(100, 20);
        let run = migrate_post_copy(&mut nf, &target(), &path(50_000), &params, &[access(0, 99)])
            .unwrap();
        assert!(
            matches!(run.report.outcome, Outcome::Failed(ref r) if r == "fault deadline exceeded")
        );
        assert!(run.report.downtime_us <= run.report.migration_time_us);
        assert!(run.report.bytes_transferred < 100);
        assert_eq!(nf.host, "h1".into());
    }

    #[test]
    fn demand_fetch_costs_a_round_trip_plus_one_page() {
        let params = MigrationParams {
            postcopy_fault_deadline_us: 1_000_000,
            ..MigrationParams::zero_overheads()
        };
        let run = migrate_post_copy(
            &mut smf(100, 20),
            &target(),
            &path(1_000),
            &params,
            &[access(0, 99)],
        )
        .unwrap();
        assert_eq!(run.report.stall_time_us, 2 * 1_000 + 10_000);
        assert_eq!(run.report.bytes_transferred, 100);
        // 80 pages of link time plus one latency for the last arrival; the
        // demanded page replaced the last background page on the link.
        let restart = run.report.downtime_us;
        assert_eq!(run.report.migration_time_us, restart + 80 * 10_000 + 1_000);
    }

    #[test]
    fn waiting_for_a_page_already_on_the_wire() {
        let params = MigrationParams {
            postcopy_fault_deadline_us: 1_000_000,
            ..MigrationParams::zero_overheads()
        };
        // page 20 is the first background page; it leaves at +10 ms and lands 1 ms later
        let run = migrate_post_copy(
            &mut smf(100, 20),
            &target(),
            &path(1_000),
            &params,
            &[access(0, 20)],
        )
        .unwrap();
        assert_eq!(run.report.stall_time_us, 11_000);
    }

    #[test]
    fn out_of_range_access_is_rejected() {
        let err = migrate_post_copy(
            &mut smf(10, 2),
            &target(),
            &path(0),
            &MigrationParams::default(),
            &[access(0, 10)],
        )
        .unwrap_err();
        assert!(matches!(err, MigrationError::InvalidAccessTrace(_)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn every_page_moves_exactly_once(
                pages in 1u32..300,
                ws_frac in 0.0f64..1.0,
                latency in 0u64..3_000,
                trace in proptest::collection::vec((0u64..2_000_000, 0u32..300), 0..40),
            ) {
                let ws = (ws_frac * pages as f64) as u32;
                let accesses: Vec<_> = trace.into_iter()
                    .map(|(o, p)| access(o, p % pages))
                    .collect();
                let params = MigrationParams {
                    postcopy_fault_deadline_us: u64::MAX,
                    ..MigrationParams::default()
                };
                let mut nf = smf(pages, ws);
                let run = migrate_post_copy(&mut nf, &target(), &path(latency), &params, &accesses).unwrap();
                prop_assert_eq!(run.report.bytes_transferred, pages as u64);
                prop_assert!(run.report.downtime_us <= run.report.migration_time_us);
                prop_assert!(nf.memory.unwrap().is_fully_transferred());

                let baseline = migrate_post_copy(&mut smf(pages, ws), &target(), &path(latency), &params, &[]).unwrap();
                prop_assert_eq!(run.report.downtime_us, baseline.report.downtime_us);
            }
        }
    }
}
