use std::collections::BTreeMap;

use serde::Serialize;

use super::{MigrationTrigger, Scenario};
use crate::memory::DirtyProcess;
use crate::migration::{
    migrate_inter_copy, migrate_parallel, migrate_post_copy, migrate_pre_copy, redeploy_stateless,
    start_replica_sync, MigrationError, MigrationEvent, MigrationReport, MigrationRun, Outcome,
    Strategy,
};
use crate::model::{HostId, HostNode, NfId, NfInstance, NfKind, UeId};
use crate::num::Exact;
use crate::policy::{check_placement, select_strategy};
use crate::sim::{Event, EventTrace, Micros, Simulation};

/// Events of the scenario-level trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioEvent {
    Trigger {
        trigger_id: String,
        ue_id: UeId,
        new_zone: String,
    },
    Decision {
        trigger_id: String,
        nf_id: NfId,
        strategy: Strategy,
        rationale: String,
        target: Option<HostId>,
    },
    Migration {
        trigger_id: String,
        nf_id: NfId,
        event: MigrationEvent,
    },
    Committed {
        nf_id: NfId,
        host: HostId,
    },
    RttSample {
        ue_id: UeId,
        rtt_us: Micros,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrationRecord {
    pub trigger_id: String,
    pub nf_id: NfId,
    pub kind: NfKind,
    pub from: HostId,
    pub to: Option<HostId>,
    pub started_us: Micros,
    pub completed_us: Micros,
    pub report: MigrationReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindTotals {
    pub migrations: u64,
    pub failed: u64,
    pub downtime_us: u64,
    pub migration_time_us: u64,
    pub bytes: u64,
    pub sync_bytes: u64,
    pub stall_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsBundle {
    pub scenario: String,
    pub seed: u64,
    pub records: Vec<MigrationRecord>,
    /// `(time_us, rtt_us)` of the sampled UE.
    pub rtt_series: Vec<(Micros, Micros)>,
    pub trace: EventTrace<ScenarioEvent>,
}

impl MetricsBundle {
    pub fn totals(&self) -> BTreeMap<NfKind, KindTotals> {
        let mut out: BTreeMap<NfKind, KindTotals> = BTreeMap::new();
        for r in &self.records {
            let t = out.entry(r.kind).or_default();
            t.migrations += 1;
            t.failed += u64::from(!r.report.outcome.is_success());
            t.downtime_us += r.report.downtime_us;
            t.migration_time_us += r.report.migration_time_us;
            t.bytes += r.report.bytes_transferred;
            t.sync_bytes += r.report.sync_bytes;
            t.stall_us += r.report.stall_time_us;
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Global {
    Trigger(usize),
    Commit { nf: NfId, host: HostId },
    Sample,
}

struct Runner<'s> {
    scenario: &'s Scenario,
    nfs: BTreeMap<NfId, NfInstance>,
    dirty: BTreeMap<NfId, DirtyProcess<Exact>>,
    ue_zone: BTreeMap<UeId, String>,
    /// Hosts as seen by the user plane: updated only when a move completes.
    serving_host: BTreeMap<NfId, HostId>,
    records: Vec<MigrationRecord>,
    rtt: Vec<(Micros, Micros)>,
    /// `(time, order, event)`; order keeps sub-traces after their trigger.
    merged: Vec<(Micros, u64, ScenarioEvent)>,
}

/// Runs every trigger through placement, policy and the migration engine.
///
/// `seed` replaces the scenario seed when given.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>) -> MetricsBundle {
    let seed = seed.unwrap_or(scenario.seed);
    let nfs: BTreeMap<NfId, NfInstance> = scenario
        .topology
        .nfs()
        .iter()
        .map(|n| (n.id.clone(), n.clone()))
        .collect();
    let dirty = scenario
        .behaviors
        .iter()
        .filter_map(|(id, b)| {
            b.dirty.clone().map(|m| {
                (
                    id.clone(),
                    DirtyProcess::new(m, &format!("dirty/{id}"), seed),
                )
            })
        })
        .collect();
    let mut runner = Runner {
        scenario,
        serving_host: nfs
            .iter()
            .map(|(id, n)| (id.clone(), n.host.clone()))
            .collect(),
        nfs,
        dirty,
        ue_zone: scenario.ues.clone(),
        records: Vec::new(),
        rtt: Vec::new(),
        merged: Vec::new(),
    };

    let mut sim: Simulation<Global> = Simulation::new();
    for (i, t) in scenario.triggers.iter().enumerate() {
        sim.schedule(t.time_us, Global::Trigger(i))
            .expect("trigger times are validated");
    }
    if runner.scenario.rtt_ue.is_some() {
        let mut t = 0;
        while t <= scenario.duration_us {
            sim.schedule(t, Global::Sample)
                .expect("sample in the future");
            t += scenario.rtt_sample_interval_us;
        }
    }
    let mut order = 0u64;
    while let Some(event) = sim.step(scenario.duration_us) {
        order += 1;
        match event.payload {
            Global::Trigger(i) => {
                runner.on_trigger(&scenario.triggers[i], event.time, order, &mut sim)
            }
            Global::Commit { nf, host } => {
                runner.serving_host.insert(nf.clone(), host.clone());
                runner.merged.push((
                    event.time,
                    order << 20,
                    ScenarioEvent::Committed { nf_id: nf, host },
                ));
            }
            Global::Sample => runner.sample(event.time, order),
        }
    }

    runner.merged.sort_by_key(|(t, o, _)| (*t, *o));
    let events = runner
        .merged
        .into_iter()
        .enumerate()
        .map(|(seq, (time, _, payload))| Event {
            time,
            seq: seq as u64,
            payload,
        })
        .collect();
    MetricsBundle {
        scenario: scenario.name.clone(),
        seed,
        records: runner.records,
        rtt_series: runner.rtt,
        trace: EventTrace::from_events(events),
    }
}

impl Runner<'_> {
    fn sample(&mut self, now: Micros, order: u64) {
        let Some(ue) = self.scenario.rtt_ue.clone() else {
            return;
        };
        let Some(rtt) = self.user_plane_rtt(&ue) else {
            return;
        };
        self.rtt.push((now, rtt));
        self.merged.push((
            now,
            order << 20,
            ScenarioEvent::RttSample {
                ue_id: ue,
                rtt_us: rtt,
            },
        ));
    }

    fn user_plane_rtt(&self, ue: &UeId) -> Option<Micros> {
        let zone = self.scenario.zone(&self.ue_zone[ue])?;
        let session = self.scenario.sessions.iter().find(|s| &s.ue_id == ue)?;
        let upf_host = &self.serving_host[&session.anchor_upf];
        self.scenario
            .topology
            .round_trip_us(&zone.access_host, upf_host)
            .ok()
    }

    fn used_cpu(&self, host: &HostId, except: &NfId) -> u32 {
        self.nfs
            .values()
            .filter(|n| &n.host == host && &n.id != except)
            .map(|n| n.cpu_demand)
            .sum()
    }

    fn pick_target(&self, nf: &NfInstance, zone: &str) -> Option<HostNode> {
        let topo = &self.scenario.topology;
        let access = &self.scenario.zone(zone)?.access_host;
        topo.hosts_in_zone(zone)
            .filter(|h| {
                check_placement(
                    nf,
                    h,
                    &self.scenario.sessions,
                    topo.drivers(),
                    self.used_cpu(&h.id, &nf.id),
                )
                .is_empty()
            })
            .filter_map(|h| {
                let l = topo.one_way_latency::<Exact>(&h.id, access).ok()?;
                topo.route(&nf.host, &h.id).ok()?;
                Some((l, h))
            })
            .min_by(|(la, a), (lb, b)| la.cmp(lb).then_with(|| a.id.cmp(&b.id)))
            .map(|(_, h)| h.clone())
    }

    fn affected(&self, trigger: &MigrationTrigger) -> Vec<NfId> {
        let anchors: Vec<&NfId> = self
            .scenario
            .sessions
            .iter()
            .filter(|s| s.ue_id == trigger.ue_id)
            .map(|s| &s.anchor_upf)
            .collect();
        let topo = &self.scenario.topology;
        self.nfs
            .values()
            .filter(|n| trigger.affected_kinds.contains(&n.kind))
            .filter(|n| n.kind != NfKind::Upf || anchors.contains(&&n.id))
            .filter(|n| {
                topo.host(&n.host)
                    .is_some_and(|h| h.hall != trigger.new_zone)
            })
            .map(|n| n.id.clone())
            .collect()
    }

    fn on_trigger(
        &mut self,
        trigger: &MigrationTrigger,
        now: Micros,
        order: u64,
        sim: &mut Simulation<Global>,
    ) {
        self.ue_zone
            .insert(trigger.ue_id.clone(), trigger.new_zone.clone());
        self.merged.push((
            now,
            order << 20,
            ScenarioEvent::Trigger {
                trigger_id: trigger.id.clone(),
                ue_id: trigger.ue_id.clone(),
                new_zone: trigger.new_zone.clone(),
            },
        ));
        let objective = trigger.objective.unwrap_or(self.scenario.objective);
        let mut sub = 1u64;
        for id in self.affected(trigger) {
            let nf = self.nfs[&id].clone();
            let (strategy, rationale) = match trigger.strategy_override {
                Some(s) => (Ok(s), "override".to_owned()),
                None => match select_strategy(nf.kind, nf.stateful, objective) {
                    Ok(d) => (Ok(d.chosen), d.rationale.to_owned()),
                    Err(e) => (Err(e.to_string()), "invalid".to_owned()),
                },
            };
            let target = self.pick_target(&nf, &trigger.new_zone);
            self.merged.push((
                now,
                (order << 20) + sub,
                ScenarioEvent::Decision {
                    trigger_id: trigger.id.clone(),
                    nf_id: id.clone(),
                    strategy: *strategy.as_ref().unwrap_or(&Strategy::NoMigrationRedeploy),
                    rationale,
                    target: target.as_ref().map(|h| h.id.clone()),
                },
            ));
            sub += 1;

            let result = match (strategy, target.as_ref()) {
                (Err(e), _) => Err(e),
                (Ok(_), None) => Err(format!("no feasible host in zone `{}`", trigger.new_zone)),
                (Ok(s), Some(host)) => self.execute(&id, s, host).map_err(|e| e.to_string()),
            };
            let (record, trace) = match result {
                Ok((started_offset, run)) => {
                    let to = target
                        .clone()
                        .map(|h| h.id)
                        .filter(|_| run.report.outcome.is_success());
                    let completed = now + started_offset + run.report.migration_time_us;
                    let record = MigrationRecord {
                        trigger_id: trigger.id.clone(),
                        nf_id: id.clone(),
                        kind: nf.kind,
                        from: nf.host.clone(),
                        to: to.clone(),
                        started_us: now,
                        completed_us: completed,
                        report: run.report,
                    };
                    if let Some(host) = to {
                        sim.schedule(
                            completed,
                            Global::Commit {
                                nf: id.clone(),
                                host,
                            },
                        )
                        .expect("commit lies after the trigger");
                    }
                    (record, run.trace.into_events())
                }
                Err(reason) => {
                    let strategy = trigger
                        .strategy_override
                        .or_else(|| {
                            select_strategy(nf.kind, nf.stateful, objective)
                                .ok()
                                .map(|d| d.chosen)
                        })
                        .unwrap_or(Strategy::NoMigrationRedeploy);
                    let record = MigrationRecord {
                        trigger_id: trigger.id.clone(),
                        nf_id: id.clone(),
                        kind: nf.kind,
                        from: nf.host.clone(),
                        to: None,
                        started_us: now,
                        completed_us: now,
                        report: MigrationReport::empty(strategy, Outcome::Failed(reason.clone())),
                    };
                    let failed = Event {
                        time: 0,
                        seq: 0,
                        payload: MigrationEvent::Failed { reason },
                    };
                    (record, vec![failed])
                }
            };
            for e in trace {
                self.merged.push((
                    now + e.time,
                    (order << 20) + sub,
                    ScenarioEvent::Migration {
                        trigger_id: trigger.id.clone(),
                        nf_id: id.clone(),
                        event: e.payload,
                    },
                ));
                sub += 1;
            }
            self.records.push(record);
        }
    }

    /// Runs one migration. Returns the offset of the migration start
    /// relative to the trigger, which is nonzero when a replica first syncs.
    fn execute(
        &mut self,
        id: &NfId,
        strategy: Strategy,
        target: &HostNode,
    ) -> Result<(Micros, MigrationRun), MigrationError> {
        let scenario = self.scenario;
        let topo = &scenario.topology;
        let params = &scenario.migration_params;
        let nf = self.nfs.get(id).expect("affected functions exist").clone();
        let path = topo
            .transfer_path(&nf.host, &target.id)
            .map_err(|e| MigrationError::InvalidParams(e.to_string()))?;
        let used = self.used_cpu(&target.id, id);
        let mut working = nf;
        let mut idle = DirtyProcess::<Exact>::idle();
        let dirty = self.dirty.get_mut(id).unwrap_or(&mut idle);
        let (offset, run) = match strategy {
            Strategy::InterCopy => {
                migrate_inter_copy(&mut working, target, &path, params).map(|r| (0, r))
            }
            Strategy::PreCopy => {
                migrate_pre_copy(&mut working, target, &path, params, dirty).map(|r| (0, r))
            }
            Strategy::PostCopy => {
                let trace = &scenario.behaviors[id].access_trace;
                migrate_post_copy(&mut working, target, &path, params, trace).map(|r| (0, r))
            }
            Strategy::NoMigrationRedeploy => {
                redeploy_stateless(&mut working, target, params).map(|r| (0, r))
            }
            Strategy::Parallel => {
                let mut replica =
                    start_replica_sync(&mut working, target, used, &path, params, dirty)?;
                replica.run_until_synced();
                let ready = replica.ready_at().expect("initial copy completes");
                replica.run_until(ready + params.ppm_sync_interval_us);
                let handover_at = replica.now();
                migrate_parallel(replica, params).map(|r| (handover_at, r))
            }
        }?;
        if run.report.outcome.is_success() {
            self.nfs.insert(id.clone(), working);
        }
        Ok((offset, run))
    }
}
