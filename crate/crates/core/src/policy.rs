//! Per-function strategy selection and placement feasibility.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::migration::Strategy;
use crate::model::{
    DriverTable, HostNode, Isolation, NfInstance, NfKind, PduSession, SessionId, SessionType,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "downtime")]
    MinimizeDowntime,
    #[serde(rename = "migration-time")]
    MinimizeMigrationTime,
    #[serde(rename = "bytes")]
    MinimizeBytes,
}

impl Objective {
    pub const ALL: [Objective; 3] = [
        Objective::MinimizeDowntime,
        Objective::MinimizeMigrationTime,
        Objective::MinimizeBytes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::MinimizeDowntime => "downtime",
            Objective::MinimizeMigrationTime => "migration-time",
            Objective::MinimizeBytes => "bytes",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| {
                format!("unknown objective `{s}` (expected downtime, migration-time or bytes)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrategyDecision {
    pub chosen: Strategy,
    /// Every strategy the analysis admits, preferred first.
    pub candidates: Vec<Strategy>,
    pub rationale: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} cannot be {}", if *.stateful { "stateful" } else { "stateless" })]
pub struct InvalidCombination {
    pub kind: NfKind,
    pub stateful: bool,
}

fn decide(candidates: &[Strategy], rationale: &'static str) -> StrategyDecision {
    StrategyDecision {
        chosen: candidates[0],
        candidates: candidates.to_vec(),
        rationale,
    }
}

pub fn select_strategy(
    kind: NfKind,
    stateful: bool,
    objective: Objective,
) -> Result<StrategyDecision, InvalidCombination> {
    use Objective::*;
    use Strategy::*;
    if !kind.admits(stateful) {
        return Err(InvalidCombination { kind, stateful });
    }
    let d = match (kind, objective) {
        (NfKind::Upf, _) => decide(&[NoMigrationRedeploy], "upf-stateless"),
        (NfKind::Smf, MinimizeDowntime) => decide(&[Parallel, PreCopy], "smf-precopy-or-ppm"),
        (NfKind::Smf, _) => decide(&[PreCopy, Parallel], "smf-precopy-or-ppm"),
        (NfKind::Amf, MinimizeBytes) => decide(&[PreCopy, Parallel], "amf-bytes-inferred"),
        (NfKind::Amf, _) => decide(&[Parallel, PreCopy], "amf-ppm-preferred"),
        (NfKind::Ausf, _) => decide(&[InterCopy], "ausf-send-once"),
        (NfKind::Udm, _) if !stateful => decide(&[NoMigrationRedeploy], "udm-state-in-udr"),
        (NfKind::Udm, _) => decide(&[InterCopy], "udm-inter-copy-sufficient"),
        (NfKind::Udr, _) => decide(&[InterCopy], "udr-by-analogy"),
        (NfKind::Nrf, MinimizeMigrationTime) => {
            decide(&[InterCopy, PreCopy, Parallel], "nrf-objective-dependent")
        }
        (NfKind::Nrf, MinimizeDowntime) => {
            decide(&[Parallel, PreCopy, InterCopy], "nrf-objective-dependent")
        }
        (NfKind::Nrf, MinimizeBytes) => {
            decide(&[PreCopy, Parallel, InterCopy], "nrf-objective-dependent")
        }
    };
    Ok(d)
}

/// Minimum isolation a host must offer, if any.
pub fn required_isolation(kind: NfKind) -> Option<Isolation> {
    match kind {
        NfKind::Ausf => Some(Isolation::High),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum PlacementViolation {
    EthernetPduRequiresL2 {
        session: SessionId,
    },
    IsolationTooLow {
        required: Isolation,
        offered: Isolation,
    },
    CapacityExceeded {
        needed: u32,
        free: u32,
    },
}

impl fmt::Display for PlacementViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlacementViolation::EthernetPduRequiresL2 { session } => {
                write!(
                    f,
                    "Ethernet session `{session}` needs an L2-capable attachment"
                )
            }
            PlacementViolation::IsolationTooLow { required, offered } => {
                write!(
                    f,
                    "isolation {offered:?} is below the required {required:?}"
                )
            }
            PlacementViolation::CapacityExceeded { needed, free } => {
                write!(f, "needs {needed} compute units, {free} free")
            }
        }
    }
}

/// Lists the reasons `nf` cannot run on `host`. Empty means feasible.
///
/// `used_cpu` is the capacity already taken on `host` by other functions.
pub fn check_placement(
    nf: &NfInstance,
    host: &HostNode,
    sessions: &[PduSession],
    drivers: &DriverTable,
    used_cpu: u32,
) -> Vec<PlacementViolation> {
    let profile = drivers.profile(host.driver);
    let mut out = Vec::new();
    if nf.kind == NfKind::Upf && !profile.carries_l2 {
        out.extend(
            sessions
                .iter()
                .filter(|s| s.session_type == SessionType::Ethernet && s.anchor_upf == nf.id)
                .map(|s| PlacementViolation::EthernetPduRequiresL2 {
                    session: s.id.clone(),
                }),
        );
    }
    if let Some(required) = required_isolation(nf.kind) {
        if profile.isolation < required {
            out.push(PlacementViolation::IsolationTooLow {
                required,
                offered: profile.isolation,
            });
        }
    }
    let free = host.cpu_capacity.saturating_sub(used_cpu);
    if nf.cpu_demand > free {
        out.push(PlacementViolation::CapacityExceeded {
            needed: nf.cpu_demand,
            free,
        });
    }
    out
}

/// The kind-by-objective decision grid, one row per kind at its default statefulness.
pub fn policy_table() -> String {
    let mut out = String::new();
    let header = ["kind", "downtime", "migration-time", "bytes", "rationale"];
    let mut rows = vec![header.map(String::from).to_vec()];
    for kind in NfKind::ALL {
        let decisions: Vec<StrategyDecision> = Objective::ALL
            .into_iter()
            .map(|o| select_strategy(kind, kind.default_stateful(), o).expect("default is valid"))
            .collect();
        let mut tags: Vec<&str> = Vec::new();
        for d in &decisions {
            if !tags.contains(&d.rationale) {
                tags.push(d.rationale);
            }
        }
        let mut row = vec![kind.to_string()];
        row.extend(decisions.iter().map(|d| d.chosen.to_string()));
        row.push(tags.join(","));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c + 1 == row.len() {
                line.push_str(cell);
            } else {
                let _ = write!(line, "{cell:<w$}  ", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryImage;
    use crate::model::NetworkDriverKind;
    use Objective::*;

    fn host(driver: NetworkDriverKind) -> HostNode {
        HostNode {
            id: "h".into(),
            hall: "hall-A".into(),
            cpu_capacity: 4,
            driver,
        }
    }

    fn eth(id: &str) -> PduSession {
        PduSession {
            id: id.into(),
            session_type: SessionType::Ethernet,
            ue_id: "ue".into(),
            anchor_upf: "upf-1".into(),
        }
    }

    #[test]
    fn examples() {
        assert_eq!(
            select_strategy(NfKind::Amf, true, MinimizeDowntime)
                .unwrap()
                .chosen,
            Strategy::Parallel
        );
        assert_eq!(
            select_strategy(NfKind::Nrf, true, MinimizeMigrationTime)
                .unwrap()
                .chosen,
            Strategy::InterCopy
        );
        assert_eq!(
            select_strategy(NfKind::Upf, false, MinimizeBytes)
                .unwrap()
                .chosen,
            Strategy::NoMigrationRedeploy
        );
        assert_eq!(
            select_strategy(NfKind::Udm, false, MinimizeDowntime)
                .unwrap()
                .chosen,
            Strategy::NoMigrationRedeploy
        );
    }

    #[test]
    fn stateful_upf_is_invalid() {
        assert_eq!(
            select_strategy(NfKind::Upf, true, MinimizeDowntime),
            Err(InvalidCombination {
                kind: NfKind::Upf,
                stateful: true
            })
        );
        assert!(select_strategy(NfKind::Amf, false, MinimizeDowntime).is_err());
    }

    #[test]
    fn table_is_total_and_consistent() {
        for kind in NfKind::ALL {
            for stateful in [false, true] {
                for o in Objective::ALL {
                    match select_strategy(kind, stateful, o) {
                        Ok(d) => {
                            assert_eq!(Some(&d.chosen), d.candidates.first());
                            if !stateful {
                                assert!(d.candidates.iter().all(|s| !s.copies_state()));
                            }
                        }
                        Err(_) => assert!(!kind.admits(stateful)),
                    }
                }
            }
        }
    }

    #[test]
    fn placement_examples() {
        let drivers = DriverTable::default();
        let upf = NfInstance::stateless("upf-1", NfKind::Upf, "h");
        assert!(matches!(
            check_placement(
                &upf,
                &host(NetworkDriverKind::Overlay),
                &[eth("s1")],
                &drivers,
                0
            )[..],
            [PlacementViolation::EthernetPduRequiresL2 { .. }]
        ));
        let ausf = NfInstance::stateful("ausf-1", NfKind::Ausf, "h", MemoryImage::new(1, 1));
        assert!(
            check_placement(&ausf, &host(NetworkDriverKind::Overlay), &[], &drivers, 0).is_empty()
        );
        assert!(matches!(
            check_placement(&ausf, &host(NetworkDriverKind::Bridge), &[], &drivers, 0)[..],
            [PlacementViolation::IsolationTooLow { .. }]
        ));
        assert!(matches!(
            check_placement(&ausf, &host(NetworkDriverKind::Overlay), &[], &drivers, 4)[..],
            [PlacementViolation::CapacityExceeded { needed: 1, free: 0 }]
        ));
    }

    #[test]
    fn l2_overlay_switch_admits_ethernet_upf() {
        let drivers = DriverTable::default().with_l2_overlay(true);
        let upf = NfInstance::stateless("upf-1", NfKind::Upf, "h");
        assert!(check_placement(
            &upf,
            &host(NetworkDriverKind::Overlay),
            &[eth("s1")],
            &drivers,
            0
        )
        .is_empty());
    }

    #[test]
    fn sessions_of_other_anchors_are_ignored() {
        let upf = NfInstance::stateless("upf-2", NfKind::Upf, "h");
        let v = check_placement(
            &upf,
            &host(NetworkDriverKind::Overlay),
            &[eth("s1")],
            &DriverTable::default(),
            0,
        );
        assert!(v.is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest};
        use proptest::strategy::Strategy as _;

        fn session() -> impl proptest::strategy::Strategy<Value = PduSession> {
            (0u8..4, any::<bool>(), any::<bool>()).prop_map(|(i, ethernet, mine)| PduSession {
                id: format!("s{i}").as_str().into(),
                session_type: if ethernet {
                    SessionType::Ethernet
                } else {
                    SessionType::Ip
                },
                ue_id: "ue".into(),
                anchor_upf: if mine { "upf-1" } else { "upf-9" }.into(),
            })
        }

        proptest! {
            #[test]
            fn adding_a_session_never_removes_a_violation(
                driver in 0usize..6,
                sessions in proptest::collection::vec(session(), 0..6),
                extra in session(),
                used in 0u32..6,
            ) {
                let drivers = DriverTable::default();
                let h = host(NetworkDriverKind::ALL[driver]);
                let upf = NfInstance::stateless("upf-1", NfKind::Upf, "h");
                let before = check_placement(&upf, &h, &sessions, &drivers, used);
                let mut more = sessions.clone();
                more.push(extra);
                let after = check_placement(&upf, &h, &more, &drivers, used);
                for v in before {
                    prop_assert!(after.contains(&v));
                }
            }
        }
    }
}
