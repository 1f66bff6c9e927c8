//! Topology validation, routing and latency lookup.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use super::driver::DriverTable;
use super::nf::{HostId, HostNode, Link, NfId, NfInstance, NfKind};
use crate::num::Scalar;
use crate::sim::Micros;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate {entity} id `{id}`")]
    DuplicateId { entity: &'static str, id: String },
    #[error("{entity} `{id}` references unknown {target} `{missing}`")]
    DanglingReference {
        entity: &'static str,
        id: String,
        target: &'static str,
        missing: String,
    },
    #[error("{entity} `{id}` ({kind}): {detail}")]
    InvariantViolation {
        entity: &'static str,
        id: String,
        kind: String,
        detail: String,
    },
    #[error("no path between hosts `{from}` and `{to}`")]
    NoPath { from: HostId, to: HostId },
}

/// Result of routing between two hosts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub hops: Vec<HostId>,
    /// Sum of per-link extra latency.
    pub extra_latency_us: Micros,
    /// Smallest link bandwidth along the route.
    pub bandwidth_bps: u64,
}

/// Bandwidth-delay abstraction of the channel a migration uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferPath {
    pub latency_us: Micros,
    pub bandwidth_bps: u64,
}

/// A topology whose references and invariants have been checked.
#[derive(Debug, Clone)]
pub struct ValidatedTopology {
    hosts: BTreeMap<HostId, HostNode>,
    links: Vec<Link>,
    nfs: Vec<NfInstance>,
    drivers: DriverTable,
    adjacency: BTreeMap<HostId, Vec<usize>>,
}

fn check_unique<'a, I>(entity: &'static str, ids: I) -> Result<(), TopologyError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(TopologyError::DuplicateId {
                entity,
                id: id.to_owned(),
            });
        }
    }
    Ok(())
}

pub fn validate_topology(
    hosts: Vec<HostNode>,
    links: Vec<Link>,
    nfs: Vec<NfInstance>,
    drivers: DriverTable,
) -> Result<ValidatedTopology, TopologyError> {
    check_unique("host", hosts.iter().map(|h| h.id.as_str()))?;
    check_unique("network function", nfs.iter().map(|n| n.id.as_str()))?;

    let hosts: BTreeMap<HostId, HostNode> = hosts.into_iter().map(|h| (h.id.clone(), h)).collect();

    let mut adjacency: BTreeMap<HostId, Vec<usize>> =
        hosts.keys().map(|k| (k.clone(), Vec::new())).collect();
    for (i, link) in links.iter().enumerate() {
        let id = format!("{}<->{}", link.a, link.b);
        for end in [&link.a, &link.b] {
            if !hosts.contains_key(end) {
                return Err(TopologyError::DanglingReference {
                    entity: "link",
                    id,
                    target: "host",
                    missing: end.to_string(),
                });
            }
        }
        let violation = if link.a == link.b {
            Some("endpoints must be distinct")
        } else if link.bandwidth_bps == 0 {
            Some("bandwidth must be positive")
        } else {
            None
        };
        if let Some(detail) = violation {
            return Err(TopologyError::InvariantViolation {
                entity: "link",
                id,
                kind: "link".into(),
                detail: detail.into(),
            });
        }
        adjacency.get_mut(&link.a).unwrap().push(i);
        adjacency.get_mut(&link.b).unwrap().push(i);
    }

    for nf in &nfs {
        if !hosts.contains_key(&nf.host) {
            return Err(TopologyError::DanglingReference {
                entity: "network function",
                id: nf.id.to_string(),
                target: "host",
                missing: nf.host.to_string(),
            });
        }
        if let Some(detail) = nf.invariant_violation() {
            return Err(TopologyError::InvariantViolation {
                entity: "network function",
                id: nf.id.to_string(),
                kind: nf.kind.to_string(),
                detail,
            });
        }
    }

    let topo = ValidatedTopology {
        hosts,
        links,
        nfs,
        drivers,
        adjacency,
    };

    for (i, a) in topo.nfs.iter().enumerate() {
        for b in &topo.nfs[i + 1..] {
            if a.kind.peers().contains(&b.kind) {
                topo.route(&a.host, &b.host)?;
            }
        }
    }
    Ok(topo)
}

impl ValidatedTopology {
    pub fn hosts(&self) -> impl Iterator<Item = &HostNode> {
        self.hosts.values()
    }

    pub fn host(&self, id: &HostId) -> Option<&HostNode> {
        self.hosts.get(id)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn nfs(&self) -> &[NfInstance] {
        &self.nfs
    }

    pub fn nf(&self, id: &NfId) -> Option<&NfInstance> {
        self.nfs.iter().find(|n| &n.id == id)
    }

    pub fn nfs_of_kind(&self, kind: NfKind) -> impl Iterator<Item = &NfInstance> {
        self.nfs.iter().filter(move |n| n.kind == kind)
    }

    pub fn drivers(&self) -> &DriverTable {
        &self.drivers
    }

    /// Hosts of a zone, ordered by id.
    pub fn hosts_in_zone<'a>(&'a self, hall: &'a str) -> impl Iterator<Item = &'a HostNode> + 'a {
        self.hosts.values().filter(move |h| h.hall == hall)
    }

    /// CPU occupied on `host` by the deployed functions.
    pub fn used_cpu(&self, host: &HostId) -> u32 {
        self.nfs
            .iter()
            .filter(|n| &n.host == host)
            .map(|n| n.cpu_demand)
            .sum()
    }

    fn require(&self, id: &HostId) -> Result<&HostNode, TopologyError> {
        self.hosts
            .get(id)
            .ok_or_else(|| TopologyError::DanglingReference {
                entity: "query",
                id: id.to_string(),
                target: "host",
                missing: id.to_string(),
            })
    }

    /// Lowest extra-latency route; ties broken by hop count, then by host ids.
    pub fn route(&self, from: &HostId, to: &HostId) -> Result<Route, TopologyError> {
        self.require(from)?;
        self.require(to)?;
        if from == to {
            return Ok(Route {
                hops: vec![from.clone()],
                extra_latency_us: 0,
                bandwidth_bps: u64::MAX,
            });
        }

        type Key = (Micros, usize, Vec<HostId>);
        let mut best: BTreeMap<HostId, (Micros, usize)> = BTreeMap::new();
        let mut heap: BinaryHeap<Reverse<(Key, u64)>> = BinaryHeap::new();
        heap.push(Reverse(((0, 0, vec![from.clone()]), u64::MAX)));
        while let Some(Reverse(((dist, hops, path), bw))) = heap.pop() {
            let here = path.last().unwrap().clone();
            if &here == to {
                return Ok(Route {
                    hops: path,
                    extra_latency_us: dist,
                    bandwidth_bps: bw,
                });
            }
            if let Some(&seen) = best.get(&here) {
                if seen <= (dist, hops) {
                    continue;
                }
            }
            best.insert(here.clone(), (dist, hops));
            for &li in &self.adjacency[&here] {
                let link = &self.links[li];
                let next = if link.a == here { &link.b } else { &link.a };
                if path.contains(next) {
                    continue;
                }
                let mut p = path.clone();
                p.push(next.clone());
                heap.push(Reverse((
                    (dist + link.extra_latency_us, hops + 1, p),
                    bw.min(link.bandwidth_bps),
                )));
            }
        }
        Err(TopologyError::NoPath {
            from: from.clone(),
            to: to.clone(),
        })
    }

    /// Half the more restrictive endpoint RTT plus route extra latency, or
    /// the intra-host latency for co-located containers.
    pub fn one_way_latency<T: Scalar>(&self, a: &HostId, b: &HostId) -> Result<T, TopologyError> {
        if a == b {
            self.require(a)?;
            return Ok(T::from_int(self.drivers.intra_host_latency_us()));
        }
        let route = self.route(a, b)?;
        Ok(T::ratio(self.driver_rtt(a, b), 2) + T::from_int(route.extra_latency_us))
    }

    /// `2 * one_way_latency`, which is always a whole number of microseconds.
    pub fn round_trip_us(&self, a: &HostId, b: &HostId) -> Result<Micros, TopologyError> {
        if a == b {
            self.require(a)?;
            return Ok(2 * self.drivers.intra_host_latency_us());
        }
        let route = self.route(a, b)?;
        Ok(self.driver_rtt(a, b) + 2 * route.extra_latency_us)
    }

    fn driver_rtt(&self, a: &HostId, b: &HostId) -> Micros {
        let rtt = |h: &HostId| self.drivers.profile(self.hosts[h].driver).rtt_inter_host_us;
        rtt(a).max(rtt(b))
    }

    /// True iff raw L2 frames can travel between the two hosts.
    pub fn carries_l2_path(&self, a: &HostId, b: &HostId) -> Result<bool, TopologyError> {
        if a == b {
            self.require(a)?;
            return Ok(true);
        }
        self.route(a, b)?;
        let l2 = |h: &HostId| self.drivers.profile(self.hosts[h].driver).carries_l2;
        Ok(l2(a) && l2(b))
    }

    /// Channel used to move memory from `a` to `b`. The one-way latency is
    /// rounded up to whole microseconds for the integer clock.
    pub fn transfer_path(&self, a: &HostId, b: &HostId) -> Result<TransferPath, TopologyError> {
        let latency = self.one_way_latency::<crate::num::Exact>(a, b)?;
        let route = self.route(a, b)?;
        Ok(TransferPath {
            latency_us: latency.ceil_u64(),
            bandwidth_bps: route.bandwidth_bps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryImage;
    use crate::model::driver::NetworkDriverKind;
    use crate::num::Exact;

    fn host(id: &str, driver: NetworkDriverKind) -> HostNode {
        HostNode {
            id: id.into(),
            hall: "hall-A".into(),
            cpu_capacity: 4,
            driver,
        }
    }

    fn link(a: &str, b: &str) -> Link {
        Link {
            a: a.into(),
            b: b.into(),
            bandwidth_bps: 1_000,
            extra_latency_us: 0,
        }
    }

    fn pair(da: NetworkDriverKind, db: NetworkDriverKind) -> ValidatedTopology {
        validate_topology(
            vec![host("h1", da), host("h2", db)],
            vec![link("h1", "h2")],
            vec![],
            DriverTable::default(),
        )
        .unwrap()
    }

    #[test]
    fn minimal_topology_is_valid() {
        let t = validate_topology(
            vec![
                host("h1", NetworkDriverKind::Host),
                host("h2", NetworkDriverKind::Host),
            ],
            vec![link("h1", "h2")],
            vec![NfInstance::stateless("upf-1", NfKind::Upf, "h1")],
            DriverTable::default(),
        )
        .unwrap();
        assert_eq!(t.nfs().len(), 1);
    }

    #[test]
    fn stateful_upf_is_rejected() {
        let mut upf = NfInstance::stateless("upf-1", NfKind::Upf, "h1");
        upf.stateful = true;
        upf.memory = Some(MemoryImage::new(4, 1));
        let err = validate_topology(
            vec![host("h1", NetworkDriverKind::Host)],
            vec![],
            vec![upf],
            DriverTable::default(),
        )
        .unwrap_err();
        match err {
            TopologyError::InvariantViolation { kind, detail, .. } => {
                assert_eq!(kind, "UPF");
                assert!(detail.contains("stateless"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn link_to_unknown_host_dangles() {
        let err = validate_topology(
            vec![host("h1", NetworkDriverKind::Host)],
            vec![link("h1", "ghost")],
            vec![],
            DriverTable::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, TopologyError::DanglingReference { ref missing, .. } if missing == "ghost")
        );
    }

    #[test]
    fn duplicate_ids_are_named() {
        let err = validate_topology(
            vec![
                host("h1", NetworkDriverKind::Host),
                host("h1", NetworkDriverKind::Bridge),
            ],
            vec![],
            vec![],
            DriverTable::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            TopologyError::DuplicateId {
                entity: "host",
                id: "h1".into()
            }
        );
    }

    #[test]
    fn interacting_functions_must_be_connected() {
        let smf = NfInstance::stateful("smf-1", NfKind::Smf, "h2", MemoryImage::new(1, 1));
        let err = validate_topology(
            vec![
                host("h1", NetworkDriverKind::Host),
                host("h2", NetworkDriverKind::Host),
            ],
            vec![],
            vec![NfInstance::stateless("upf-1", NfKind::Upf, "h1"), smf],
            DriverTable::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TopologyError::NoPath { .. }));
    }

    #[test]
    fn macvlan_pair_latency() {
        let t = pair(NetworkDriverKind::Macvlan, NetworkDriverKind::Macvlan);
        assert_eq!(
            t.one_way_latency::<Exact>(&"h1".into(), &"h2".into())
                .unwrap(),
            Exact::from_integer(260)
        );
        assert_eq!(t.round_trip_us(&"h1".into(), &"h2".into()).unwrap(), 520);
    }

    #[test]
    fn same_host_uses_intra_latency() {
        let t = pair(NetworkDriverKind::Macvlan, NetworkDriverKind::Macvlan);
        assert_eq!(
            t.one_way_latency::<f64>(&"h1".into(), &"h1".into())
                .unwrap(),
            25.0
        );
    }

    #[test]
    fn mixed_drivers_use_the_slower_rtt() {
        let t = pair(NetworkDriverKind::Bridge, NetworkDriverKind::Overlay);
        assert_eq!(
            t.one_way_latency::<f64>(&"h1".into(), &"h2".into())
                .unwrap(),
            328.0
        );
    }

    #[test]
    fn half_microsecond_latency_is_exact() {
        let t = pair(NetworkDriverKind::IpvlanL3, NetworkDriverKind::IpvlanL3);
        let l = t
            .one_way_latency::<Exact>(&"h1".into(), &"h2".into())
            .unwrap();
        assert_eq!(l, Exact::new(539, 2));
        assert_eq!(
            t.transfer_path(&"h1".into(), &"h2".into())
                .unwrap()
                .latency_us,
            270
        );
    }

    #[test]
    fn l2_path_rules() {
        use NetworkDriverKind::*;
        assert!(pair(Host, Macvlan)
            .carries_l2_path(&"h1".into(), &"h2".into())
            .unwrap());
        assert!(!pair(Host, Overlay)
            .carries_l2_path(&"h1".into(), &"h2".into())
            .unwrap());
        assert!(pair(Overlay, Overlay)
            .carries_l2_path(&"h1".into(), &"h1".into())
            .unwrap());
    }

    #[test]
    fn unconnected_hosts_have_no_path() {
        let t = validate_topology(
            vec![
                host("h1", NetworkDriverKind::Host),
                host("h2", NetworkDriverKind::Host),
            ],
            vec![],
            vec![],
            DriverTable::default(),
        )
        .unwrap();
        assert!(matches!(
            t.one_way_latency::<f64>(&"h1".into(), &"h2".into()),
            Err(TopologyError::NoPath { .. })
        ));
        assert!(t.carries_l2_path(&"h1".into(), &"h2".into()).is_err());
    }

    #[test]
    fn multi_hop_route_sums_latency_and_takes_bottleneck() {
        let mut l1 = link("h1", "h2");
        l1.extra_latency_us = 100;
        l1.bandwidth_bps = 500;
        let mut l2 = link("h2", "h3");
        l2.extra_latency_us = 50;
        let t = validate_topology(
            vec![
                host("h1", NetworkDriverKind::Host),
                host("h2", NetworkDriverKind::Host),
                host("h3", NetworkDriverKind::Host),
            ],
            vec![l1, l2],
            vec![],
            DriverTable::default(),
        )
        .unwrap();
        let r = t.route(&"h1".into(), &"h3".into()).unwrap();
        assert_eq!(r.extra_latency_us, 150);
        assert_eq!(r.bandwidth_bps, 500);
        assert_eq!(r.hops.len(), 3);
        assert_eq!(
            t.one_way_latency::<f64>(&"h1".into(), &"h3".into())
                .unwrap(),
            261.0 + 150.0
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn driver() -> impl Strategy<Value = NetworkDriverKind> {
            proptest::sample::select(NetworkDriverKind::ALL.to_vec())
        }

        proptest! {
            #[test]
            fn latency_is_symmetric(da in driver(), db in driver(), extra in 0u64..10_000) {
                let mut l = link("h1", "h2");
                l.extra_latency_us = extra;
                let t = validate_topology(
                    vec![host("h1", da), host("h2", db)], vec![l], vec![], DriverTable::default(),
                ).unwrap();
                let (a, b) = (HostId::from("h1"), HostId::from("h2"));
                prop_assert_eq!(
                    t.one_way_latency::<Exact>(&a, &b).unwrap(),
                    t.one_way_latency::<Exact>(&b, &a).unwrap()
                );
                prop_assert_eq!(t.round_trip_us(&a, &b).unwrap(), t.round_trip_us(&b, &a).unwrap());
            }

            #[test]
            fn l2_capability_is_monotone(da in driver(), db in driver(), dc in driver()) {
                let table = DriverTable::default();
                let (a, b) = (HostId::from("h1"), HostId::from("h2"));
                let before = pair(da, db).carries_l2_path(&a, &b).unwrap();
                // downgrade the second endpoint to `dc` when `dc` lacks L2
                if !table.profile(dc).carries_l2 {
                    let after = pair(da, dc).carries_l2_path(&a, &b).unwrap();
                    prop_assert!(!after);
                    prop_assert!(!(after && !before));
                }
            }
        }
    }
}
