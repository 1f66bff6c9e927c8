//! Network functions, hosts, links and PDU sessions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::driver::NetworkDriverKind;
use crate::memory::MemoryImage;
use crate::sim::Micros;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(HostId);
string_id!(NfId);
string_id!(SessionId);
string_id!(UeId);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostNode {
    pub id: HostId,
    /// Placement zone, e.g. a factory hall.
    pub hall: String,
    pub cpu_capacity: u32,
    pub driver: NetworkDriverKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub a: HostId,
    pub b: HostId,
    pub bandwidth_bps: u64,
    #[serde(default)]
    pub extra_latency_us: Micros,
}

impl Link {
    pub fn connects(&self, x: &HostId, y: &HostId) -> bool {
        (&self.a == x && &self.b == y) || (&self.a == y && &self.b == x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NfKind {
    #[serde(rename = "UPF")]
    Upf,
    #[serde(rename = "SMF")]
    Smf,
    #[serde(rename = "AMF")]
    Amf,
    #[serde(rename = "AUSF")]
    Ausf,
    #[serde(rename = "UDM")]
    Udm,
    #[serde(rename = "UDR")]
    Udr,
    #[serde(rename = "NRF")]
    Nrf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    User,
    Control,
}

/// Which statefulness a kind admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statefulness {
    Stateless,
    Stateful,
    Either,
}

impl NfKind {
    pub const ALL: [NfKind; 7] = [
        NfKind::Upf,
        NfKind::Smf,
        NfKind::Amf,
        NfKind::Ausf,
        NfKind::Udm,
        NfKind::Udr,
        NfKind::Nrf,
    ];

    pub fn plane(self) -> Plane {
        match self {
            NfKind::Upf => Plane::User,
            _ => Plane::Control,
        }
    }

    pub fn statefulness(self) -> Statefulness {
        match self {
            NfKind::Upf => Statefulness::Stateless,
            NfKind::Udm => Statefulness::Either,
            _ => Statefulness::Stateful,
        }
    }

    pub fn default_stateful(self) -> bool {
        !matches!(self.statefulness(), Statefulness::Stateless)
    }

    pub fn admits(self, stateful: bool) -> bool {
        match self.statefulness() {
            Statefulness::Stateless => !stateful,
            Statefulness::Stateful => stateful,
            Statefulness::Either => true,
        }
    }

    /// Kinds this one exchanges messages with on the reference architecture.
    pub fn peers(self) -> &'static [NfKind] {
        use NfKind::*;
        match self {
            Upf => &[Smf],
            Smf => &[Upf, Amf, Udm, Nrf],
            Amf => &[Smf, Ausf, Udm, Nrf],
            Ausf => &[Amf, Udm, Nrf],
            Udm => &[Smf, Amf, Ausf, Udr, Nrf],
            Udr => &[Udm, Nrf],
            Nrf => &[Smf, Amf, Ausf, Udm, Udr],
        }
    }
}

impl fmt::Display for NfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NfKind::Upf => "UPF",
            NfKind::Smf => "SMF",
            NfKind::Amf => "AMF",
            NfKind::Ausf => "AUSF",
            NfKind::Udm => "UDM",
            NfKind::Udr => "UDR",
            NfKind::Nrf => "NRF",
        };
        f.write_str(s)
    }
}

impl FromStr for NfKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NfKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown network function kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvailabilityClass {
    #[default]
    Standard,
    High,
    Critical,
}

/// A deployed network function.
#[derive(Debug, Clone, PartialEq)]
pub struct NfInstance {
    pub id: NfId,
    pub kind: NfKind,
    pub stateful: bool,
    pub plane: Plane,
    /// Present iff `stateful`.
    pub memory: Option<MemoryImage>,
    pub host: HostId,
    pub availability: AvailabilityClass,
    /// Compute units the instance occupies on its host.
    pub cpu_demand: u32,
}

impl NfInstance {
    pub fn stateless(id: impl Into<NfId>, kind: NfKind, host: impl Into<HostId>) -> Self {
        Self {
            id: id.into(),
            kind,
            stateful: false,
            plane: kind.plane(),
            memory: None,
            host: host.into(),
            availability: AvailabilityClass::Standard,
            cpu_demand: 1,
        }
    }

    pub fn stateful(
        id: impl Into<NfId>,
        kind: NfKind,
        host: impl Into<HostId>,
        memory: MemoryImage,
    ) -> Self {
        Self {
            stateful: true,
            memory: Some(memory),
            ..Self::stateless(id, kind, host)
        }
    }

    pub fn with_availability(mut self, class: AvailabilityClass) -> Self {
        self.availability = class;
        self
    }

    pub fn with_cpu_demand(mut self, units: u32) -> Self {
        self.cpu_demand = units;
        self
    }

    /// Describes the first broken instance invariant, if any.
    pub fn invariant_violation(&self) -> Option<String> {
        if self.plane != self.kind.plane() {
            return Some(format!(
                "{} must run in the {:?} plane",
                self.kind,
                self.kind.plane()
            ));
        }
        if !self.kind.admits(self.stateful) {
            let need = if self.stateful {
                "stateless"
            } else {
                "stateful"
            };
            return Some(format!("{} must be {need}", self.kind));
        }
        match (&self.memory, self.stateful) {
            (Some(_), false) => Some("stateless function must not carry a memory image".into()),
            (None, true) => Some("stateful function requires a memory image".into()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionType {
    Ip,
    Ethernet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PduSession {
    pub id: SessionId,
    pub session_type: SessionType,
    pub ue_id: UeId,
    pub anchor_upf: NfId,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_upf_is_user_plane() {
        for k in NfKind::ALL {
            assert_eq!(k.plane() == Plane::User, k == NfKind::Upf, "{k}");
        }
    }

    #[test]
    fn statefulness_rules() {
        assert!(!NfKind::Upf.admits(true));
        assert!(NfKind::Udm.admits(true) && NfKind::Udm.admits(false));
        for k in [
            NfKind::Smf,
            NfKind::Amf,
            NfKind::Ausf,
            NfKind::Udr,
            NfKind::Nrf,
        ] {
            assert!(k.admits(true) && !k.admits(false), "{k}");
        }
    }

    #[test]
    fn peer_relation_is_symmetric() {
        for a in NfKind::ALL {
            for b in a.peers() {
                assert!(b.peers().contains(&a), "{a} -> {b}");
            }
        }
    }

    #[test]
    fn stateful_upf_is_flagged() {
        let mut upf = NfInstance::stateless("upf-1", NfKind::Upf, "h1");
        upf.stateful = true;
        upf.memory = Some(MemoryImage::new(1, 1));
        assert!(upf.invariant_violation().unwrap().contains("stateless"));
    }

    #[test]
    fn kind_parses_case_insensitively() {
        assert_eq!("amf".parse::<NfKind>(), Ok(NfKind::Amf));
        assert!("mme".parse::<NfKind>().is_err());
    }
}
