//! Scenario files, end-to-end runs and metric export.
//!
//! A scenario is a JSON document describing hosts grouped into zones (halls),
//! the deployed functions, UE sessions and a list of mobility triggers. Every
//! omitted optional parameter takes the default documented on its field.

mod export;
mod run;
mod sweep;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export_metrics, summary_text, write_migrations_csv, write_rtt_csv};
pub use run::{run_scenario, KindTotals, MetricsBundle, MigrationRecord, ScenarioEvent};
pub use sweep::{set_json_path, sweep, SweepRow};

use crate::memory::{DirtyModel, MemoryImage};
use crate::migration::{MigrationParams, PageAccess, Strategy};
use crate::model::{
    validate_topology, AvailabilityClass, DriverTable, HostNode, Link, NetworkDriverProfile, NfId,
    NfInstance, NfKind, PduSession, UeId, ValidatedTopology,
};
use crate::num::{Exact, Scalar};
use crate::policy::Objective;
use crate::sim::Micros;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column} (`{key}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        key: String,
        message: String,
    },
    #[error("invalid scenario: `{key}`: {detail}")]
    Validation { key: String, detail: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    fn invalid(key: impl Into<String>, detail: impl fmt::Display) -> Self {
        ScenarioError::Validation {
            key: key.into(),
            detail: detail.to_string(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ScenarioError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

fn default_sample_interval() -> Micros {
    100_000
}

fn default_objective() -> Objective {
    Objective::MinimizeDowntime
}

fn default_cpu_demand() -> u32 {
    1
}

fn default_page_size() -> u64 {
    4096
}

fn default_working_set_fraction() -> f64 {
    0.2
}

fn default_affected() -> Vec<NfKind> {
    vec![NfKind::Smf, NfKind::Amf]
}

/// On-disk layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_us: Micros,
    /// Period of the UE user-plane RTT samples. Default 100 ms.
    #[serde(default = "default_sample_interval")]
    pub rtt_sample_interval_us: Micros,
    /// Default `downtime`.
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default)]
    pub network: NetworkSpec,
    pub zones: Vec<ZoneSpec>,
    pub hosts: Vec<HostNode>,
    #[serde(default)]
    pub links: Vec<Link>,
    pub nfs: Vec<NfSpec>,
    #[serde(default)]
    pub sessions: Vec<PduSession>,
    #[serde(default)]
    pub ues: Vec<UeSpec>,
    /// UE whose user-plane RTT is sampled. Default: the first UE with a session.
    #[serde(default)]
    pub rtt_ue: Option<UeId>,
    #[serde(default)]
    pub migration_params: MigrationParams,
    #[serde(default)]
    pub triggers: Vec<TriggerSpec>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Default 25 us.
    #[serde(default)]
    pub intra_host_latency_us: Option<Micros>,
    #[serde(default)]
    pub l2_overlay_enabled: bool,
    #[serde(default)]
    pub driver_overrides: Vec<NetworkDriverProfile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSpec {
    pub name: String,
    /// Host the zone's radio access attaches to.
    pub access_host: crate::model::HostId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSpec {
    pub id: UeId,
    pub zone: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NfSpec {
    pub id: NfId,
    pub kind: NfKind,
    pub host: crate::model::HostId,
    /// Default: stateless for UPF, stateful otherwise.
    #[serde(default)]
    pub stateful: Option<bool>,
    #[serde(default = "default_cpu_demand")]
    pub cpu_demand: u32,
    #[serde(default)]
    pub availability: AvailabilityClass,
    #[serde(default)]
    pub memory: Option<MemorySpec>,
    /// Page accesses after a post-copy restart.
    #[serde(default)]
    pub access_trace: Vec<PageAccess>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySpec {
    pub pages: u32,
    #[serde(default = "default_page_size")]
    pub page_size: u64,
    /// Fraction of the lowest page ids forming the working set. Default 0.2.
    #[serde(default = "default_working_set_fraction")]
    pub working_set_fraction: f64,
    #[serde(default)]
    pub dirty: DirtySpec,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirtySpec {
    #[default]
    Idle,
    ConstantRate {
        pages_per_sec: f64,
    },
    Bernoulli {
        p_per_page_per_ms: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    /// Default `t<index>`.
    #[serde(default)]
    pub id: Option<String>,
    pub time_us: Micros,
    pub ue_id: UeId,
    pub new_zone: String,
    /// Default `[SMF, AMF]`.
    #[serde(default = "default_affected")]
    pub affected_kinds: Vec<NfKind>,
    /// Overrides the scenario objective for this trigger.
    #[serde(default)]
    pub objective: Option<Objective>,
    /// Bypasses the policy table.
    #[serde(default)]
    pub strategy_override: Option<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Zone {
    pub name: String,
    pub access_host: crate::model::HostId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigrationTrigger {
    pub id: String,
    pub time_us: Micros,
    pub ue_id: UeId,
    pub new_zone: String,
    pub affected_kinds: Vec<NfKind>,
    pub objective: Option<Objective>,
    pub strategy_override: Option<Strategy>,
}

/// Runtime behavior of a stateful function.
#[derive(Debug, Clone, PartialEq)]
pub struct NfBehavior {
    pub dirty: Option<DirtyModel<Exact>>,
    pub access_trace: Vec<PageAccess>,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_us: Micros,
    pub rtt_sample_interval_us: Micros,
    pub objective: Objective,
    pub topology: ValidatedTopology,
    pub zones: Vec<Zone>,
    pub sessions: Vec<PduSession>,
    pub ues: BTreeMap<UeId, String>,
    pub rtt_ue: Option<UeId>,
    pub behaviors: BTreeMap<NfId, NfBehavior>,
    pub migration_params: MigrationParams,
    pub triggers: Vec<MigrationTrigger>,
}

impl Scenario {
    pub fn zone(&self, name: &str) -> Option<&Zone> {
        self.zones.iter().find(|z| z.name == name)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    parse_scenario(&text)
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file = parse_scenario_file(text)?;
    file.validate()
}

pub fn parse_scenario_file(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        let message = match message.rfind(" at line ") {
            Some(i) => message[..i].to_owned(),
            None => message,
        };
        ScenarioError::Parse {
            line: inner.line(),
            column: inner.column(),
            key,
            message,
        }
    })
}

fn build_nf(i: usize, spec: &NfSpec) -> Result<(NfInstance, NfBehavior), ScenarioError> {
    let key = |field: &str| format!("nfs[{i}].{field}");
    let stateful = spec
        .stateful
        .unwrap_or_else(|| spec.kind.default_stateful());
    if !spec.kind.admits(stateful) {
        let detail = if spec.kind == NfKind::Upf {
            "UPF must be stateless: it only forwards packets and keeps no session state".to_owned()
        } else {
            format!(
                "{} must be {}",
                spec.kind,
                if stateful { "stateless" } else { "stateful" }
            )
        };
        return Err(ScenarioError::invalid(key("stateful"), detail));
    }
    let base = NfInstance::stateless(spec.id.clone(), spec.kind, spec.host.clone())
        .with_availability(spec.availability)
        .with_cpu_demand(spec.cpu_demand);
    if !stateful {
        if spec.memory.is_some() {
            return Err(ScenarioError::invalid(
                key("memory"),
                "stateless function has no memory image",
            ));
        }
        let behavior = NfBehavior {
            dirty: None,
            access_trace: Vec::new(),
        };
        return Ok((base, behavior));
    }
    let mem = spec.memory.as_ref().ok_or_else(|| {
        ScenarioError::invalid(key("memory"), "stateful function requires a memory image")
    })?;
    if mem.page_size == 0 {
        return Err(ScenarioError::invalid(
            key("memory.page_size"),
            "must be positive",
        ));
    }
    if !(0.0..=1.0).contains(&mem.working_set_fraction) {
        return Err(ScenarioError::invalid(
            key("memory.working_set_fraction"),
            "must lie in [0, 1]",
        ));
    }
    let dirty = match mem.dirty {
        DirtySpec::Idle => DirtyModel::ConstantRate {
            pages_per_sec: Exact::from_int(0),
        },
        DirtySpec::ConstantRate { pages_per_sec } => {
            let rate = Exact::from_f64_lossy(pages_per_sec)
                .filter(|r| *r >= Exact::from_int(0))
                .ok_or_else(|| {
                    ScenarioError::invalid(
                        key("memory.dirty.pages_per_sec"),
                        "must be a finite non-negative number",
                    )
                })?;
            DirtyModel::ConstantRate {
                pages_per_sec: rate,
            }
        }
        DirtySpec::Bernoulli { p_per_page_per_ms } => {
            if !(0.0..=1.0).contains(&p_per_page_per_ms) {
                return Err(ScenarioError::invalid(
                    key("memory.dirty.p_per_page_per_ms"),
                    "must lie in [0, 1]",
                ));
            }
            DirtyModel::Bernoulli { p_per_page_per_ms }
        }
    };
    for (j, a) in spec.access_trace.iter().enumerate() {
        if a.page >= mem.pages {
            return Err(ScenarioError::invalid(
                key(&format!("access_trace[{j}].page")),
                format!("page {} is outside the {}-page image", a.page, mem.pages),
            ));
        }
    }
    let image = MemoryImage::new(mem.pages, mem.page_size)
        .with_working_set_fraction(mem.working_set_fraction);
    let nf = NfInstance {
        stateful: true,
        memory: Some(image),
        ..base
    };
    let behavior = NfBehavior {
        dirty: Some(dirty),
        access_trace: spec.access_trace.clone(),
    };
    Ok((nf, behavior))
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<Scenario, ScenarioError> {
        if self.rtt_sample_interval_us == 0 {
            return Err(ScenarioError::invalid(
                "rtt_sample_interval_us",
                "must be positive",
            ));
        }
        self.migration_params
            .validate()
            .map_err(|e| ScenarioError::invalid("migration_params", e))?;

        let mut drivers = DriverTable::default().with_l2_overlay(self.network.l2_overlay_enabled);
        for (i, p) in self.network.driver_overrides.iter().enumerate() {
            drivers = drivers
                .with_override(*p)
                .map_err(|e| ScenarioError::invalid(format!("network.driver_overrides[{i}]"), e))?;
        }
        if let Some(us) = self.network.intra_host_latency_us {
            drivers = drivers
                .with_intra_host_latency(us)
                .map_err(|e| ScenarioError::invalid("network.intra_host_latency_us", e))?;
        }

        let zone_names: BTreeSet<&str> = self.zones.iter().map(|z| z.name.as_str()).collect();
        if zone_names.len() != self.zones.len() {
            return Err(ScenarioError::invalid("zones", "zone names must be unique"));
        }
        for (i, h) in self.hosts.iter().enumerate() {
            if !zone_names.contains(h.hall.as_str()) {
                return Err(ScenarioError::invalid(
                    format!("hosts[{i}].hall"),
                    format!("unknown zone `{}`", h.hall),
                ));
            }
        }
        for (i, z) in self.zones.iter().enumerate() {
            match self.hosts.iter().find(|h| h.id == z.access_host) {
                None => {
                    return Err(ScenarioError::invalid(
                        format!("zones[{i}].access_host"),
                        format!("unknown host `{}`", z.access_host),
                    ))
                }
                Some(h) if h.hall != z.name => {
                    return Err(ScenarioError::invalid(
                        format!("zones[{i}].access_host"),
                        format!("host `{}` lies in zone `{}`", h.id, h.hall),
                    ))
                }
                Some(_) => {}
            }
        }

        let mut nfs = Vec::with_capacity(self.nfs.len());
        let mut behaviors = BTreeMap::new();
        for (i, spec) in self.nfs.iter().enumerate() {
            let (nf, behavior) = build_nf(i, spec)?;
            behaviors.insert(nf.id.clone(), behavior);
            nfs.push(nf);
        }

        let mut ues = BTreeMap::new();
        for (i, ue) in self.ues.iter().enumerate() {
            if !zone_names.contains(ue.zone.as_str()) {
                return Err(ScenarioError::invalid(
                    format!("ues[{i}].zone"),
                    format!("unknown zone `{}`", ue.zone),
                ));
            }
            if ues.insert(ue.id.clone(), ue.zone.clone()).is_some() {
                return Err(ScenarioError::invalid(
                    format!("ues[{i}].id"),
                    format!("duplicate UE `{}`", ue.id),
                ));
            }
        }
        let mut session_ids = BTreeSet::new();
        for (i, s) in self.sessions.iter().enumerate() {
            if !session_ids.insert(&s.id) {
                return Err(ScenarioError::invalid(
                    format!("sessions[{i}].id"),
                    format!("duplicate session `{}`", s.id),
                ));
            }
            if !ues.contains_key(&s.ue_id) {
                return Err(ScenarioError::invalid(
                    format!("sessions[{i}].ue_id"),
                    format!("unknown UE `{}`", s.ue_id),
                ));
            }
            if !nfs
                .iter()
                .any(|n| n.id == s.anchor_upf && n.kind == NfKind::Upf)
            {
                return Err(ScenarioError::invalid(
                    format!("sessions[{i}].anchor_upf"),
                    format!("`{}` is not a deployed UPF", s.anchor_upf),
                ));
            }
        }
        if let Some(ue) = &self.rtt_ue {
            if !ues.contains_key(ue) {
                return Err(ScenarioError::invalid(
                    "rtt_ue",
                    format!("unknown UE `{ue}`"),
                ));
            }
        }
        let rtt_ue = self.rtt_ue.clone().or_else(|| {
            self.ues
                .iter()
                .find(|u| self.sessions.iter().any(|s| s.ue_id == u.id))
                .map(|u| u.id.clone())
        });

        let mut triggers = Vec::with_capacity(self.triggers.len());
        let mut last = 0;
        let mut trigger_ids = BTreeSet::new();
        for (i, t) in self.triggers.iter().enumerate() {
            let key = |field: &str| format!("triggers[{i}].{field}");
            if t.time_us > self.duration_us {
                return Err(ScenarioError::invalid(
                    key("time_us"),
                    "trigger lies after the scenario ends",
                ));
            }
            if t.time_us < last {
                return Err(ScenarioError::invalid(
                    key("time_us"),
                    "triggers must be sorted by time",
                ));
            }
            last = t.time_us;
            if !ues.contains_key(&t.ue_id) {
                return Err(ScenarioError::invalid(
                    key("ue_id"),
                    format!("unknown UE `{}`", t.ue_id),
                ));
            }
            if !zone_names.contains(t.new_zone.as_str()) {
                return Err(ScenarioError::invalid(
                    key("new_zone"),
                    format!("unknown zone `{}`", t.new_zone),
                ));
            }
            let id = t.id.clone().unwrap_or_else(|| format!("t{i}"));
            if !trigger_ids.insert(id.clone()) {
                return Err(ScenarioError::invalid(
                    key("id"),
                    format!("duplicate trigger `{id}`"),
                ));
            }
            triggers.push(MigrationTrigger {
                id,
                time_us: t.time_us,
                ue_id: t.ue_id.clone(),
                new_zone: t.new_zone.clone(),
                affected_kinds: t.affected_kinds.clone(),
                objective: t.objective,
                strategy_override: t.strategy_override,
            });
        }

        let topology = validate_topology(self.hosts.clone(), self.links.clone(), nfs, drivers)
            .map_err(|e| ScenarioError::invalid(topology_key(&e), e))?;
        for h in topology.hosts() {
            let used = topology.used_cpu(&h.id);
            if used > h.cpu_capacity {
                let i = self.hosts.iter().position(|x| x.id == h.id).unwrap_or(0);
                return Err(ScenarioError::invalid(
                    format!("hosts[{i}].cpu_capacity"),
                    format!(
                        "deployed functions need {used} units, host offers {}",
                        h.cpu_capacity
                    ),
                ));
            }
        }

        Ok(Scenario {
            name: self.name.clone(),
            seed: self.seed,
            duration_us: self.duration_us,
            rtt_sample_interval_us: self.rtt_sample_interval_us,
            objective: self.objective,
            topology,
            zones: self
                .zones
                .iter()
                .map(|z| Zone {
                    name: z.name.clone(),
                    access_host: z.access_host.clone(),
                })
                .collect(),
            sessions: self.sessions.clone(),
            ues,
            rtt_ue,
            behaviors,
            migration_params: self.migration_params,
            triggers,
        })
    }
}

fn topology_key(e: &crate::model::TopologyError) -> String {
    use crate::model::TopologyError::*;
    match e {
        DuplicateId { entity, .. }
        | DanglingReference { entity, .. }
        | InvariantViolation { entity, .. } => match *entity {
            "host" => "hosts".into(),
            "link" => "links".into(),
            "network function" => "nfs".into(),
            other => other.into(),
        },
        NoPath { .. } => "links".into(),
    }
}
