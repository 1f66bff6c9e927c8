//! Hosts, network drivers, network functions and PDU sessions.

mod driver;
mod nf;
mod topology;

pub use driver::{
    DriverTable, DriverTableError, Isolation, NetworkDriverKind, NetworkDriverProfile,
    DEFAULT_INTRA_HOST_LATENCY_US,
};
pub use nf::{
    AvailabilityClass, HostId, HostNode, Link, NfId, NfInstance, NfKind, PduSession, Plane,
    SessionId, SessionType, Statefulness, UeId,
};
pub use topology::{validate_topology, Route, TopologyError, TransferPath, ValidatedTopology};
