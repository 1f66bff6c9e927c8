use std::collections::BTreeSet;

use super::{
    batch_time, require_image, MigrationError, MigrationEvent, MigrationParams, MigrationReport,
    MigrationRun, Outcome, Phase, Strategy,
};
use crate::memory::{BatchFilter, DirtyProcess, MemoryImage, PageId};
use crate::model::{HostId, HostNode, NfInstance, TransferPath};
use crate::num::Scalar;
use crate::sim::{transfer_micros, EventHandle, Micros, Simulation};

struct PendingSync {
    tick: u32,
    pages: Vec<PageId>,
    handle: EventHandle,
}

/// A replica running on the target and kept in step with the source by
/// periodic delta synchronization.
///
/// The replica receives the full image once. From the moment that copy lands
/// it is fed the same input as the source, and every `ppm_sync_interval_us`
/// a sync tick ships the pages the source dirtied since the previous tick.
/// Sync transfers share the link and are serialized on it.
pub struct ReplicaHandle<'a, T> {
    nf: &'a mut NfInstance,
    dirty: &'a mut DirtyProcess<T>,
    target: HostId,
    path: TransferPath,
    params: MigrationParams,
    sim: Simulation<MigrationEvent>,
    full_copy: Vec<PageId>,
    ready_at: Option<Micros>,
    last_dirty_at: Micros,
    link_free_at: Micros,
    next_tick: Option<EventHandle>,
    pending: Vec<PendingSync>,
    ticks: u32,
    sync_bytes: u64,
}

/// Instantiates a replica of `nf` on `target` and starts its initial copy.
///
/// `target_used_cpu` is the capacity already taken on the target.
pub fn start_replica_sync<'a, T: Scalar>(
    nf: &'a mut NfInstance,
    target: &HostNode,
    target_used_cpu: u32,
    path: &TransferPath,
    params: &MigrationParams,
    dirty: &'a mut DirtyProcess<T>,
) -> Result<ReplicaHandle<'a, T>, MigrationError> {
    params.validate()?;
    let demand = nf.cpu_demand;
    let id = nf.id.clone();
    let image = require_image(nf, Strategy::Parallel)?;
    let free = target.cpu_capacity.saturating_sub(target_used_cpu);
    if free < demand {
        return Err(MigrationError::InsufficientCapacity {
            host: target.id.to_string(),
            nf: id,
            needed: demand,
            free,
        });
    }
    image.begin_migration();
    let full_copy = image.take_transfer_batch(BatchFilter::All);
    let copy_time = batch_time(full_copy.len(), image.page_size(), path);
    let mut sim = Simulation::new();
    sim.schedule(
        0,
        MigrationEvent::Start {
            strategy: Strategy::Parallel,
            pages: image.num_pages(),
        },
    )?;
    sim.schedule(
        copy_time,
        MigrationEvent::TransferComplete {
            phase: Phase::Full,
            pages: full_copy.len(),
        },
    )?;
    Ok(ReplicaHandle {
        nf,
        dirty,
        target: target.id.clone(),
        path: *path,
        params: *params,
        sim,
        link_free_at: copy_time.saturating_sub(path.latency_us),
        full_copy,
        ready_at: None,
        last_dirty_at: 0,
        next_tick: None,
        pending: Vec::new(),
        ticks: 0,
        sync_bytes: 0,
    })
}

impl<T: Scalar> ReplicaHandle<'_, T> {
    fn image(&mut self) -> &mut MemoryImage {
        self.nf
            .memory
            .as_mut()
            .expect("replicated function is stateful")
    }

    fn page_size(&self) -> u64 {
        self.nf.memory.as_ref().map_or(0, |m| m.page_size())
    }

    /// Time of the last processed event.
    pub fn now(&self) -> Micros {
        self.sim.now()
    }

    /// When the initial full copy landed, if it has.
    pub fn ready_at(&self) -> Option<Micros> {
        self.ready_at
    }

    pub fn is_synced(&self) -> bool {
        self.ready_at.is_some()
    }

    pub fn ticks(&self) -> u32 {
        self.ticks
    }

    /// Bytes shipped to the replica so far, including the initial copy.
    pub fn sync_bytes(&self) -> u64 {
        self.sync_bytes
    }

    /// Pages the replica does not have in their current version.
    pub fn out_of_sync_pages(&self) -> usize {
        self.nf.memory.as_ref().map_or(0, |m| m.dirty_count())
    }

    /// Processes replica events up to and including `t_end`.
    pub fn run_until(&mut self, t_end: Micros) {
        while let Some(event) = self.sim.step(t_end) {
            self.handle(event.payload);
        }
    }

    /// Runs until the initial copy has landed.
    pub fn run_until_synced(&mut self) {
        while self.ready_at.is_none() {
            match self.sim.step(u64::MAX) {
                Some(event) => self.handle(event.payload),
                None => break,
            }
        }
    }

    /// Lets source execution catch up with the clock.
    fn catch_up_dirtying(&mut self) {
        let elapsed = self.sim.now() - self.last_dirty_at;
        self.last_dirty_at = self.sim.now();
        let dirty = &mut *self.dirty;
        let image = self
            .nf
            .memory
            .as_mut()
            .expect("replicated function is stateful");
        dirty.advance(image, elapsed);
    }

    fn handle(&mut self, event: MigrationEvent) {
        let interval = self.params.ppm_sync_interval_us;
        let page_size = self.page_size();
        match event {
            MigrationEvent::Start { .. } => {}
            MigrationEvent::TransferComplete { .. } => {
                let pages = std::mem::take(&mut self.full_copy);
                self.image().mark_copied(&pages);
                self.sync_bytes += pages.len() as u64 * page_size;
                self.ready_at = Some(self.sim.now());
                self.last_dirty_at = self.sim.now();
                self.next_tick = Some(
                    self.sim
                        .schedule_in(interval, MigrationEvent::SyncTick { tick: 1 }),
                );
            }
            MigrationEvent::SyncTick { tick } => {
                self.ticks = tick;
                self.catch_up_dirtying();
                let in_flight: BTreeSet<PageId> = self
                    .pending
                    .iter()
                    .flat_map(|p| p.pages.iter().copied())
                    .collect();
                let pages: Vec<PageId> = self
                    .image()
                    .take_transfer_batch(BatchFilter::DirtyOnly)
                    .into_iter()
                    .filter(|p| !in_flight.contains(p))
                    .collect();
                if !pages.is_empty() {
                    let start = self.sim.now().max(self.link_free_at);
                    let wire =
                        transfer_micros(pages.len() as u64 * page_size, self.path.bandwidth_bps);
                    self.link_free_at = start + wire;
                    let handle = self
                        .sim
                        .schedule(
                            start + wire + self.path.latency_us,
                            MigrationEvent::SyncComplete {
                                tick,
                                pages: pages.len(),
                            },
                        )
                        .expect("sync completes in the future");
                    self.pending.push(PendingSync {
                        tick,
                        pages,
                        handle,
                    });
                }
                self.next_tick = Some(
                    self.sim
                        .schedule_in(interval, MigrationEvent::SyncTick { tick: tick + 1 }),
                );
            }
            MigrationEvent::SyncComplete { tick, .. } => {
                if let Some(pos) = self.pending.iter().position(|p| p.tick == tick) {
                    let done = self.pending.remove(pos);
                    self.image().mark_copied(&done.pages);
                    self.sync_bytes += done.pages.len() as u64 * page_size;
                }
            }
            other => unreachable!("replica sync never schedules {other:?}"),
        }
    }
}

/// Hands the service over to the replica at the replica's current time.
///
/// The source freezes, the pages it dirtied since the last completed sync are
/// shipped, the handover is signaled and the replica takes over without a
/// cold restart.
pub fn migrate_parallel<T: Scalar>(
    mut replica: ReplicaHandle<'_, T>,
    params: &MigrationParams,
) -> Result<MigrationRun, MigrationError> {
    params.validate()?;
    if replica.ready_at.is_none() {
        return Err(MigrationError::ReplicaNotSynced(replica.nf.id.clone()));
    }
    replica.catch_up_dirtying();
    if let Some(tick) = replica.next_tick.take() {
        replica.sim.cancel(tick);
    }
    // Interrupted syncs are superseded by the handover delta.
    for pending in std::mem::take(&mut replica.pending) {
        replica.sim.cancel(pending.handle);
    }

    let page_size = replica.page_size();
    let path = replica.path;
    let start = replica.sim.now();
    replica.sim.schedule(start, MigrationEvent::Handover)?;
    let mut delta: Vec<PageId> = Vec::new();
    let mut bytes = 0u64;
    while let Some(event) = replica.sim.step(u64::MAX) {
        match event.payload {
            MigrationEvent::Handover => {
                replica
                    .sim
                    .schedule_in(params.freeze_overhead_us, MigrationEvent::Frozen);
            }
            MigrationEvent::Frozen => {
                delta = replica.image().take_transfer_batch(BatchFilter::DirtyOnly);
                replica.sim.schedule_in(
                    batch_time(delta.len(), page_size, &path),
                    MigrationEvent::TransferComplete {
                        phase: Phase::Delta,
                        pages: delta.len(),
                    },
                );
            }
            MigrationEvent::TransferComplete { .. } => {
                replica.image().mark_copied(&delta);
                bytes += delta.len() as u64 * page_size;
                let signaling = params.handover_signal_roundtrips as u64 * 2 * path.latency_us;
                replica
                    .sim
                    .schedule_in(signaling, MigrationEvent::HandoverSignaled);
            }
            MigrationEvent::HandoverSignaled => {
                replica
                    .sim
                    .schedule_in(params.activation_overhead_us, MigrationEvent::Activated);
            }
            MigrationEvent::Activated => {}
            other => unreachable!("handover never schedules {other:?}"),
        }
    }

    let downtime = replica.sim.now() - start;
    debug_assert!(replica.nf.memory.as_ref().unwrap().is_fully_transferred());
    replica.nf.host = replica.target.clone();
    Ok(MigrationRun {
        report: MigrationReport {
            downtime_us: downtime,
            migration_time_us: downtime,
            bytes_transferred: bytes,
            sync_bytes: replica.sync_bytes,
            ..MigrationReport::empty(Strategy::Parallel, Outcome::Success)
        },
        trace: replica.sim.into_trace(),
    })
}
