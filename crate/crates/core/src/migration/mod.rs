//! Memory-transfer strategies for moving a network function between hosts.
//!
//! Each strategy runs as a small discrete-event state machine on its own
//! [`Simulation`] starting at time zero, and yields a [`MigrationReport`] plus
//! the trace of the events it processed. Dirtying of memory is only ever
//! applied while the function is executing; once frozen, nothing changes.
//!
//! A batch of `k` pages takes `ceil(k * page_size * 10^6 / bandwidth) + L`
//! microseconds, where `L` is the one-way latency of the path. An empty batch
//! takes no time at all.

mod analytic;
mod inter_copy;
mod parallel;
mod post_copy;
mod pre_copy;
mod redeploy;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analytic::{analytic_pre_copy, PreCopyEstimate};
pub use inter_copy::migrate_inter_copy;
pub use parallel::{migrate_parallel, start_replica_sync, ReplicaHandle};
pub use post_copy::{migrate_post_copy, PageAccess};
pub use pre_copy::migrate_pre_copy;
pub use redeploy::redeploy_stateless;

use crate::memory::{MemoryImage, PageId};
use crate::model::{NfId, NfInstance, TransferPath};
use crate::sim::{transfer_micros, EventTrace, Micros, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    InterCopy,
    PreCopy,
    PostCopy,
    Parallel,
    NoMigrationRedeploy,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::InterCopy,
        Strategy::PreCopy,
        Strategy::PostCopy,
        Strategy::Parallel,
        Strategy::NoMigrationRedeploy,
    ];

    /// Whether the strategy moves memory state.
    pub fn copies_state(self) -> bool {
        !matches!(self, Strategy::NoMigrationRedeploy)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// Overheads and tuning knobs shared by all strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MigrationParams {
    pub freeze_overhead_us: Micros,
    pub restart_overhead_us: Micros,
    /// Role switch of an already running replica (no cold restart).
    pub activation_overhead_us: Micros,
    pub precopy_stop_threshold_pages: u64,
    pub precopy_max_rounds: u32,
    pub postcopy_fault_deadline_us: Micros,
    pub ppm_sync_interval_us: Micros,
    pub handover_signal_roundtrips: u32,
}

impl Default for MigrationParams {
    fn default() -> Self {
        Self {
            freeze_overhead_us: 5_000,
            restart_overhead_us: 20_000,
            activation_overhead_us: 1_000,
            precopy_stop_threshold_pages: 8,
            precopy_max_rounds: 10,
            postcopy_fault_deadline_us: 50_000,
            ppm_sync_interval_us: 100_000,
            handover_signal_roundtrips: 1,
        }
    }
}

impl MigrationParams {
    /// All overheads zero; stop rule and intervals keep their defaults.
    pub fn zero_overheads() -> Self {
        Self {
            freeze_overhead_us: 0,
            restart_overhead_us: 0,
            activation_overhead_us: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MigrationError> {
        if self.precopy_max_rounds == 0 {
            return Err(MigrationError::InvalidParams(
                "precopy_max_rounds must be at least 1".into(),
            ));
        }
        if self.ppm_sync_interval_us == 0 {
            return Err(MigrationError::InvalidParams(
                "ppm_sync_interval_us must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failed(String),
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Success => f.write_str("success"),
            Outcome::Failed(reason) => write!(f, "failed: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationReport {
    pub strategy: Strategy,
    pub downtime_us: Micros,
    pub migration_time_us: Micros,
    /// Payload page bytes moved by the migration itself.
    pub bytes_transferred: u64,
    /// Replica synchronization traffic (parallel migration only).
    pub sync_bytes: u64,
    /// Demand-fetch stalls after restart (post-copy only).
    pub stall_time_us: Micros,
    /// Live copy rounds (pre-copy only).
    pub rounds: u32,
    pub outcome: Outcome,
}

impl MigrationReport {
    pub fn empty(strategy: Strategy, outcome: Outcome) -> Self {
        Self {
            strategy,
            downtime_us: 0,
            migration_time_us: 0,
            bytes_transferred: 0,
            sync_bytes: 0,
            stall_time_us: 0,
            rounds: 0,
            outcome,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Full,
    Round,
    Final,
    WorkingSet,
    Delta,
}

/// Events processed by the strategy state machines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MigrationEvent {
    Start {
        strategy: Strategy,
        pages: u32,
    },
    Frozen,
    TransferComplete {
        phase: Phase,
        pages: usize,
    },
    RoundComplete {
        round: u32,
        pages: usize,
        dirtied: usize,
    },
    Restarted,
    BackgroundSent {
        page: PageId,
    },
    BackgroundArrived {
        page: PageId,
    },
    PageAccess {
        index: usize,
        page: PageId,
    },
    DemandRequest {
        page: PageId,
    },
    DemandArrived {
        page: PageId,
    },
    SyncTick {
        tick: u32,
    },
    SyncComplete {
        tick: u32,
        pages: usize,
    },
    Handover,
    HandoverSignaled,
    Activated,
    Failed {
        reason: String,
    },
}

/// A finished migration: its report and the events it went through.
#[derive(Debug, Clone)]
pub struct MigrationRun {
    pub report: MigrationReport,
    pub trace: EventTrace<MigrationEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MigrationError {
    #[error("{strategy} is not applicable to `{nf}`: {reason}")]
    StrategyInapplicable {
        nf: NfId,
        strategy: Strategy,
        reason: String,
    },
    #[error(
        "host `{host}` lacks capacity for a replica of `{nf}` ({needed} units needed, {free} free)"
    )]
    InsufficientCapacity {
        host: String,
        nf: NfId,
        needed: u32,
        free: u32,
    },
    #[error("replica of `{0}` has not finished its initial copy")]
    ReplicaNotSynced(NfId),
    #[error("invalid access trace: {0}")]
    InvalidAccessTrace(String),
    #[error("invalid migration parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Time to move `pages` pages over `path`.
pub fn batch_time(pages: usize, page_size: u64, path: &TransferPath) -> Micros {
    if pages == 0 {
        return 0;
    }
    transfer_micros(pages as u64 * page_size, path.bandwidth_bps) + path.latency_us
}

fn require_image(
    nf: &mut NfInstance,
    strategy: Strategy,
) -> Result<&mut MemoryImage, MigrationError> {
    let id = nf.id.clone();
    match (nf.stateful, nf.memory.as_mut()) {
        (true, Some(image)) => Ok(image),
        _ => Err(MigrationError::StrategyInapplicable {
            nf: id,
            strategy,
            reason: "function is stateless".into(),
        }),
    }
}
