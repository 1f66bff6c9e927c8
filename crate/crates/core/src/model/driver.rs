//! Container network driver profiles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkDriverKind {
    Host,
    Bridge,
    Macvlan,
    IpvlanL2,
    IpvlanL3,
    Overlay,
}

impl NetworkDriverKind {
    pub const ALL: [NetworkDriverKind; 6] = [
        NetworkDriverKind::Host,
        NetworkDriverKind::Bridge,
        NetworkDriverKind::Macvlan,
        NetworkDriverKind::IpvlanL2,
        NetworkDriverKind::IpvlanL3,
        NetworkDriverKind::Overlay,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for NetworkDriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NetworkDriverKind::Host => "host",
            NetworkDriverKind::Bridge => "bridge",
            NetworkDriverKind::Macvlan => "macvlan",
            NetworkDriverKind::IpvlanL2 => "ipvlan_l2",
            NetworkDriverKind::IpvlanL3 => "ipvlan_l3",
            NetworkDriverKind::Overlay => "overlay",
        };
        f.write_str(s)
    }
}

/// Network and guest/host isolation offered by a driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Isolation {
    None,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDriverProfile {
    pub kind: NetworkDriverKind,
    /// Container-to-container round trip between two hosts.
    pub rtt_inter_host_us: Micros,
    /// Whether raw Ethernet frames can cross the attachment.
    pub carries_l2: bool,
    pub isolation: Isolation,
}

impl NetworkDriverProfile {
    /// Measured Docker driver characteristics between two hosts.
    pub const fn builtin(kind: NetworkDriverKind) -> Self {
        use Isolation::*;
        use NetworkDriverKind::*;
        let (rtt, l2, iso) = match kind {
            Host => (522, true, None),
            Bridge => (600, true, Medium),
            Macvlan => (520, true, Medium),
            IpvlanL2 => (520, false, Medium),
            IpvlanL3 => (539, false, Medium),
            Overlay => (656, false, High),
        };
        Self {
            kind,
            rtt_inter_host_us: rtt,
            carries_l2: l2,
            isolation: iso,
        }
    }
}

pub const DEFAULT_INTRA_HOST_LATENCY_US: Micros = 25;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DriverTableError {
    #[error("driver {0}: rtt_inter_host_us must be positive")]
    ZeroRtt(NetworkDriverKind),
    #[error("intra_host_latency_us {intra} must be below half of the smallest inter-host RTT ({min_rtt} us)")]
    IntraHostTooSlow { intra: Micros, min_rtt: Micros },
}

/// The six driver profiles plus the latency used for co-located containers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriverTable {
    profiles: [NetworkDriverProfile; 6],
    intra_host_latency_us: Micros,
    l2_overlay_enabled: bool,
}

impl Default for DriverTable {
    fn default() -> Self {
        Self {
            profiles: NetworkDriverKind::ALL.map(NetworkDriverProfile::builtin),
            intra_host_latency_us: DEFAULT_INTRA_HOST_LATENCY_US,
            l2_overlay_enabled: false,
        }
    }
}

impl DriverTable {
    /// Effective profile, with the L2-overlay switch applied.
    pub fn profile(&self, kind: NetworkDriverKind) -> NetworkDriverProfile {
        let mut p = self.profiles[kind.index()];
        if kind == NetworkDriverKind::Overlay && self.l2_overlay_enabled {
            p.carries_l2 = true;
        }
        p
    }

    pub fn intra_host_latency_us(&self) -> Micros {
        self.intra_host_latency_us
    }

    pub fn l2_overlay_enabled(&self) -> bool {
        self.l2_overlay_enabled
    }

    pub fn with_override(
        mut self,
        profile: NetworkDriverProfile,
    ) -> Result<Self, DriverTableError> {
        if profile.rtt_inter_host_us == 0 {
            return Err(DriverTableError::ZeroRtt(profile.kind));
        }
        self.profiles[profile.kind.index()] = profile;
        self.check_intra()?;
        Ok(self)
    }

    pub fn with_intra_host_latency(mut self, us: Micros) -> Result<Self, DriverTableError> {
        self.intra_host_latency_us = us;
        self.check_intra()?;
        Ok(self)
    }

    /// Lets overlay attachments carry L2 frames (K8s L2 overlay drivers).
    pub fn with_l2_overlay(mut self, enabled: bool) -> Self {
        self.l2_overlay_enabled = enabled;
        self
    }

    fn check_intra(&self) -> Result<(), DriverTableError> {
        let min_rtt = self
            .profiles
            .iter()
            .map(|p| p.rtt_inter_host_us)
            .min()
            .unwrap_or(0);
        if 2 * self.intra_host_latency_us >= min_rtt {
            return Err(DriverTableError::IntraHostTooSlow {
                intra: self.intra_host_latency_us,
                min_rtt,
            });
        }
        Ok(())
    }
}
