//! Platform-independent data model: physical and logical entities, metrics,
//! measurements and the machine topology everything else operates on.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a physical entity (package, core, DRAM node).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhysicalId(pub String);

/// Identifier of a logical entity (application or thread).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogicalId(pub String);

impl PhysicalId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl LogicalId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PhysicalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for LogicalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<&str> for PhysicalId {
    fn from(s: &str) -> Self {
        PhysicalId(s.to_owned())
    }
}

impl From<&str> for LogicalId {
    fn from(s: &str) -> Self {
        LogicalId(s.to_owned())
    }
}

/// Timestamps are integer nanoseconds since the trace epoch.
pub type Ns = u64;

pub const NS_PER_SEC: u64 = 1_000_000_000;

/// Kind of a sensed hardware component.
///
/// `Gpu` is reserved in the enum space but rejected by topology validation;
/// no energy model exists for it yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    CpuPackage,
    LogicalCore,
    DramNode,
    Gpu,
}

/// A sensed hardware component with its topology links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalEntity {
    pub id: PhysicalId,
    pub kind: EntityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<PhysicalId>,
    pub socket_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical_core_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub smt_sibling_ids: Vec<PhysicalId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl PhysicalEntity {
    pub fn package(id: impl Into<String>, socket_index: u32) -> Self {
        PhysicalEntity {
            id: PhysicalId(id.into()),
            kind: EntityKind::CpuPackage,
            parent_id: None,
            socket_index,
            physical_core_index: None,
            smt_sibling_ids: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn dram_node(id: impl Into<String>, socket_index: u32) -> Self {
        PhysicalEntity {
            id: PhysicalId(id.into()),
            kind: EntityKind::DramNode,
            parent_id: None,
            socket_index,
            physical_core_index: None,
            smt_sibling_ids: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn logical_core(
        id: impl Into<String>,
        parent: impl Into<String>,
        socket_index: u32,
        physical_core_index: u32,
        siblings: Vec<PhysicalId>,
    ) -> Self {
        PhysicalEntity {
            id: PhysicalId(id.into()),
            kind: EntityKind::LogicalCore,
            parent_id: Some(PhysicalId(parent.into())),
            socket_index,
            physical_core_index: Some(physical_core_index),
            smt_sibling_ids: siblings,
            metadata: BTreeMap::new(),
        }
    }
}

/// Kind of a logical entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogicalKind {
    Application,
    Thread,
}

/// An application or one of its threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicalEntity {
    pub id: LogicalId,
    pub kind: LogicalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<LogicalId>,
    pub name: String,
}

/// The fixed metric vocabulary of the data model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricName {
    UccDelta,
    AperfDelta,
    MperfDelta,
    DramReadsLocal,
    DramReadsRemote,
    EnergyTotalJ,
    PowerIdleW,
}

impl MetricName {
    /// Unit of the metric; the name-to-unit mapping is fixed.
    pub fn unit(self) -> &'static str {
        match self {
            MetricName::UccDelta
            | MetricName::AperfDelta
            | MetricName::MperfDelta
            | MetricName::DramReadsLocal
            | MetricName::DramReadsRemote => "count",
            MetricName::EnergyTotalJ => "joule",
            MetricName::PowerIdleW => "watt",
        }
    }

    pub const ALL: [MetricName; 7] = [
        MetricName::UccDelta,
        MetricName::AperfDelta,
        MetricName::MperfDelta,
        MetricName::DramReadsLocal,
        MetricName::DramReadsRemote,
        MetricName::EnergyTotalJ,
        MetricName::PowerIdleW,
    ];
}

/// Metric descriptor. Instances are canonical: the id equals the serialized
/// name and the unit follows the fixed mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metric {
    pub id: String,
    pub name: MetricName,
    pub unit: String,
}

impl Metric {
    pub fn canonical(name: MetricName) -> Self {
        let id = serde_json::to_value(name)
            .expect("metric names serialize to strings")
            .as_str()
            .expect("metric names serialize to strings")
            .to_owned();
        Metric {
            id,
            name,
            unit: name.unit().to_owned(),
        }
    }
}

/// One value of one metric on one physical entity over a time span,
/// optionally tied to a thread. Instantaneous samples (cumulative energy
/// readings) have `t_start == t_stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub physical_entity_id: PhysicalId,
    pub metric: MetricName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logical_entity_id: Option<LogicalId>,
    pub t_start: Ns,
    pub t_stop: Ns,
    pub value: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown physical entity {0}")]
    UnknownEntity(PhysicalId),
    #[error("entity {id} has kind {actual:?}, expected {expected:?}")]
    WrongKind {
        id: PhysicalId,
        expected: EntityKind,
        actual: EntityKind,
    },
    #[error("logical core {0} has no parent package")]
    MissingParent(PhysicalId),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
}

/// One topology invariant violation; violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub entity_id: PhysicalId,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity_id, self.rule)
    }
}

fn violation(id: &PhysicalId, rule: impl Into<String>) -> Violation {
    Violation {
        entity_id: id.clone(),
        rule: rule.into(),
    }
}

/// The machine topology: the component set plus the SMT factor.
///
/// Values are immutable after construction; the id index is built once.
#[derive(Debug, Clone, Serialize)]
pub struct Topology {
    pub smt_factor: u32,
    pub entities: Vec<PhysicalEntity>,
    #[serde(skip)]
    by_id: HashMap<PhysicalId, usize>,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.smt_factor == other.smt_factor && self.entities == other.entities
    }
}

impl<'de> Deserialize<'de> for Topology {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            smt_factor: u32,
            entities: Vec<PhysicalEntity>,
        }
        let doc = Doc::deserialize(deserializer)?;
        Ok(Topology::new(doc.smt_factor, doc.entities))
    }
}

impl Topology {
    pub fn new(smt_factor: u32, entities: Vec<PhysicalEntity>) -> Self {
        let by_id = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        Topology {
            smt_factor,
            entities,
            by_id,
        }
    }

    pub fn entity(&self, id: &PhysicalId) -> Option<&PhysicalEntity> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    pub fn entities_of_kind(&self, kind: EntityKind) -> impl Iterator<Item = &PhysicalEntity> {
        self.entities.iter().filter(move |e| e.kind == kind)
    }

    pub fn packages(&self) -> impl Iterator<Item = &PhysicalEntity> {
        self.entities_of_kind(EntityKind::CpuPackage)
    }

    pub fn dram_nodes(&self) -> impl Iterator<Item = &PhysicalEntity> {
        self.entities_of_kind(EntityKind::DramNode)
    }

    pub fn logical_cores(&self) -> impl Iterator<Item = &PhysicalEntity> {
        self.entities_of_kind(EntityKind::LogicalCore)
    }

    pub fn entities_on_socket(
        &self,
        socket: u32,
        kind: EntityKind,
    ) -> impl Iterator<Item = &PhysicalEntity> {
        self.entities_of_kind(kind)
            .filter(move |e| e.socket_index == socket)
    }

    fn expect_kind(
        &self,
        id: &PhysicalId,
        expected: EntityKind,
    ) -> Result<&PhysicalEntity, ModelError> {
        let e = self
            .entity(id)
            .ok_or_else(|| ModelError::UnknownEntity(id.clone()))?;
        if e.kind != expected {
            return Err(ModelError::WrongKind {
                id: id.clone(),
                expected,
                actual: e.kind,
            });
        }
        Ok(e)
    }

    /// Location function: the package a logical core belongs to and its socket.
    pub fn resolve_location(&self, core_id: &PhysicalId) -> Result<(PhysicalId, u32), ModelError> {
        let core = self.expect_kind(core_id, EntityKind::LogicalCore)?;
        let parent = core
            .parent_id
            .as_ref()
            .ok_or_else(|| ModelError::MissingParent(core_id.clone()))?;
        let package = self.expect_kind(parent, EntityKind::CpuPackage)?;
        Ok((package.id.clone(), package.socket_index))
    }

    /// Socket of a logical core, via its parent package.
    pub fn socket_of_core(&self, core_id: &PhysicalId) -> Result<u32, ModelError> {
        Ok(self.resolve_location(core_id)?.1)
    }

    /// SMT sibling logical cores of `core_id` as declared on the entity.
    pub fn siblings_of(&self, core_id: &PhysicalId) -> Result<&[PhysicalId], ModelError> {
        let core = self.expect_kind(core_id, EntityKind::LogicalCore)?;
        Ok(&core.smt_sibling_ids)
    }
}

/// Checks every topology invariant and returns all violations.
pub fn validate_topology(topology: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    if topology.smt_factor < 1 {
        out.push(Violation {
            entity_id: PhysicalId("<topology>".into()),
            rule: "smt_factor must be >= 1".into(),
        });
    }

    let mut seen: HashMap<&PhysicalId, usize> = HashMap::new();
    for e in &topology.entities {
        *seen.entry(&e.id).or_insert(0) += 1;
    }
    for (id, n) in &seen {
        if *n > 1 {
            out.push(violation(id, "duplicate entity id"));
        }
    }

    let mut packages_per_socket: BTreeMap<u32, Vec<&PhysicalId>> = BTreeMap::new();
    let mut dram_per_socket: BTreeMap<u32, Vec<&PhysicalId>> = BTreeMap::new();

    for e in &topology.entities {
        match e.kind {
            EntityKind::CpuPackage | EntityKind::DramNode => {
                if e.parent_id.is_some() {
                    out.push(violation(&e.id, "CpuPackage and DramNode must have no parent"));
                }
                if e.kind == EntityKind::CpuPackage {
                    packages_per_socket.entry(e.socket_index).or_default().push(&e.id);
                } else {
                    dram_per_socket.entry(e.socket_index).or_default().push(&e.id);
                }
            }
            EntityKind::LogicalCore => {
                match &e.parent_id {
                    None => out.push(violation(&e.id, "LogicalCore must have a parent CpuPackage")),
                    Some(pid) => match topology.entity(pid) {
                        None => out.push(violation(&e.id, "parent package does not exist")),
                        Some(p) if p.kind != EntityKind::CpuPackage => {
                            out.push(violation(&e.id, "parent is not a CpuPackage"))
                        }
                        Some(p) => {
                            if p.socket_index != e.socket_index {
                                out.push(violation(
                                    &e.id,
                                    "socket_index differs from parent package",
                                ));
                            }
                        }
                    },
                }
                if e.physical_core_index.is_none() {
                    out.push(violation(&e.id, "LogicalCore must carry physical_core_index"));
                }
                if e.smt_sibling_ids.len() + 1 > topology.smt_factor as usize {
                    out.push(violation(&e.id, "more hardware threads per core than smt_factor"));
                }
                for sib_id in &e.smt_sibling_ids {
                    if sib_id == &e.id {
                        out.push(violation(&e.id, "irreflexive siblingship"));
                        continue;
                    }
                    match topology.entity(sib_id) {
                        None => out.push(violation(&e.id, "sibling does not exist")),
                        Some(s) if s.kind != EntityKind::LogicalCore => {
                            out.push(violation(&e.id, "sibling is not a LogicalCore"))
                        }
                        Some(s) => {
                            if !s.smt_sibling_ids.contains(&e.id) {
                                out.push(violation(&e.id, "siblingship is not symmetric"));
                            }
                            if s.physical_core_index != e.physical_core_index {
                                out.push(violation(
                                    &e.id,
                                    "siblings must share physical_core_index",
                                ));
                            }
                            if s.parent_id != e.parent_id {
                                out.push(violation(&e.id, "siblings must share the parent package"));
                            }
                        }
                    }
                }
            }
            EntityKind::Gpu => {
                out.push(violation(&e.id, "Gpu entities are not supported"));
            }
        }
    }

    for (socket, ids) in &packages_per_socket {
        if ids.len() > 1 {
            for id in ids {
                out.push(violation(id, format!("multiple packages on socket {socket}")));
            }
        }
    }
    for (socket, ids) in &dram_per_socket {
        if ids.len() > 1 {
            for id in ids {
                out.push(violation(id, format!("multiple DRAM nodes on socket {socket}")));
            }
        }
        if !packages_per_socket.contains_key(socket) {
            for id in ids {
                out.push(violation(
                    id,
                    format!("DRAM node on socket {socket} without a matching package"),
                ));
            }
        }
    }

    out
}

/// Checks a measurement against the data-model invariants.
pub fn validate_measurement(m: &Measurement, topology: &Topology) -> Result<(), ModelError> {
    if m.t_start > m.t_stop {
        return Err(ModelError::InvalidMeasurement(format!(
            "t_start {} > t_stop {}",
            m.t_start, m.t_stop
        )));
    }
    if !m.value.is_finite() || m.value < 0.0 {
        return Err(ModelError::InvalidMeasurement(format!(
            "value {} is not a finite non-negative number",
            m.value
        )));
    }
    let entity = topology
        .entity(&m.physical_entity_id)
        .ok_or_else(|| ModelError::UnknownEntity(m.physical_entity_id.clone()))?;
    match m.metric {
        MetricName::EnergyTotalJ | MetricName::PowerIdleW => {
            if !matches!(entity.kind, EntityKind::CpuPackage | EntityKind::DramNode) {
                return Err(ModelError::InvalidMeasurement(format!(
                    "{:?} must reference a CpuPackage or DramNode, got {:?} ({})",
                    m.metric, entity.kind, entity.id
                )));
            }
            if m.logical_entity_id.is_some() {
                return Err(ModelError::InvalidMeasurement(format!(
                    "{:?} must not carry a logical_entity_id",
                    m.metric
                )));
            }
        }
        MetricName::UccDelta | MetricName::AperfDelta | MetricName::MperfDelta => {
            if entity.kind != EntityKind::LogicalCore {
                return Err(ModelError::InvalidMeasurement(format!(
                    "{:?} must reference a LogicalCore, got {:?} ({})",
                    m.metric, entity.kind, entity.id
                )));
            }
            if m.logical_entity_id.is_none() {
                return Err(ModelError::InvalidMeasurement(format!(
                    "{:?} must carry a thread logical_entity_id",
                    m.metric
                )));
            }
        }
        MetricName::DramReadsLocal | MetricName::DramReadsRemote => {
            if entity.kind != EntityKind::DramNode {
                return Err(ModelError::InvalidMeasurement(format!(
                    "{:?} must reference a DramNode, got {:?} ({})",
                    m.metric, entity.kind, entity.id
                )));
            }
            if m.logical_entity_id.is_none() {
                return Err(ModelError::InvalidMeasurement(format!(
                    "{:?} must carry a thread logical_entity_id",
                    m.metric
                )));
            }
        }
    }
    Ok(())
}

/// Registry of applications and their threads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogicalRegistry {
    pub entities: Vec<LogicalEntity>,
}

impl LogicalRegistry {
    pub fn new(entities: Vec<LogicalEntity>) -> Self {
        LogicalRegistry { entities }
    }

    pub fn entity(&self, id: &LogicalId) -> Option<&LogicalEntity> {
        self.entities.iter().find(|e| &e.id == id)
    }

    pub fn threads(&self) -> impl Iterator<Item = &LogicalEntity> {
        self.entities
            .iter()
            .filter(|e| e.kind == LogicalKind::Thread)
    }

    pub fn applications(&self) -> impl Iterator<Item = &LogicalEntity> {
        self.entities
            .iter()
            .filter(|e| e.kind == LogicalKind::Application)
    }

    /// Parent application id of a thread, if both sides are well-formed.
    pub fn parent_application(&self, thread_id: &LogicalId) -> Option<&LogicalId> {
        let t = self.entity(thread_id)?;
        if t.kind != LogicalKind::Thread {
            return None;
        }
        let pid = t.parent_id.as_ref()?;
        let app = self.entity(pid)?;
        (app.kind == LogicalKind::Application).then_some(&app.id)
    }

    pub fn contains_thread(&self, id: &LogicalId) -> bool {
        self.entity(id)
            .map(|e| e.kind == LogicalKind::Thread)
            .unwrap_or(false)
    }
}

/// Builds the evaluation-machine shape: `sockets` packages, each with
/// `physical_cores` physical cores of `smt_factor` hardware threads, plus one
/// DRAM node per socket.
pub fn synthetic_topology(sockets: u32, physical_cores: u32, smt_factor: u32) -> Topology {
    let mut entities = Vec::new();
    for s in 0..sockets {
        entities.push(PhysicalEntity::package(format!("pkg{s}"), s));
        entities.push(PhysicalEntity::dram_node(format!("dram{s}"), s));
        for p in 0..physical_cores {
            let ids: Vec<PhysicalId> = (0..smt_factor)
                .map(|h| PhysicalId(format!("core-s{s}-p{p}-h{h}")))
                .collect();
            for (h, id) in ids.iter().enumerate() {
                let siblings = ids
                    .iter()
                    .filter(|other| *other != id)
                    .cloned()
                    .collect();
                entities.push(PhysicalEntity {
                    id: id.clone(),
                    kind: EntityKind::LogicalCore,
                    parent_id: Some(PhysicalId(format!("pkg{s}"))),
                    socket_index: s,
                    physical_core_index: Some(p),
                    smt_sibling_ids: siblings,
                    metadata: BTreeMap::new(),
                });
                let _ = h;
            }
        }
    }
    Topology::new(smt_factor, entities)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_machine_shape_is_valid() {
        // 2 packages x 8 physical cores x 2 logical cores + 2 DRAM nodes
        let topo = synthetic_topology(2, 8, 2);
        assert_eq!(topo.packages().count(), 2);
        assert_eq!(topo.logical_cores().count(), 32);
        assert_eq!(topo.dram_nodes().count(), 2);
        assert_eq!(validate_topology(&topo), vec![]);
    }

    #[test]
    fn empty_topology_is_vacuously_valid() {
        let topo = Topology::new(1, vec![]);
        assert_eq!(validate_topology(&topo), vec![]);
    }

    #[test]
    fn self_sibling_is_flagged() {
        let mut core = PhysicalEntity::logical_core("c0", "pkg0", 0, 0, vec![PhysicalId::from("c0")]);
        core.smt_sibling_ids = vec![core.id.clone()];
        let topo = Topology::new(2, vec![PhysicalEntity::package("pkg0", 0), core]);
        let violations = validate_topology(&topo);
        assert!(violations.iter().any(|v| v.rule == "irreflexive siblingship"));
    }

    #[test]
    fn gpu_kind_is_rejected() {
        let gpu = PhysicalEntity {
            id: PhysicalId::from("gpu0"),
            kind: EntityKind::Gpu,
            parent_id: None,
            socket_index: 0,
            physical_core_index: None,
            smt_sibling_ids: vec![],
            metadata: BTreeMap::new(),
        };
        let topo = Topology::new(1, vec![gpu]);
        assert!(!validate_topology(&topo).is_empty());
    }

    #[test]
    fn dram_without_package_is_flagged() {
        let topo = Topology::new(1, vec![PhysicalEntity::dram_node("dram0", 3)]);
        let violations = validate_topology(&topo);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].rule.contains("without a matching package"));
    }

    #[test]
    fn resolve_location_follows_parent_links() {
        let topo = synthetic_topology(2, 2, 2);
        let (pkg, socket) = topo
            .resolve_location(&PhysicalId::from("core-s0-p1-h0"))
            .unwrap();
        assert_eq!(pkg, PhysicalId::from("pkg0"));
        assert_eq!(socket, 0);
        let (pkg, socket) = topo
            .resolve_location(&PhysicalId::from("core-s1-p0-h1"))
            .unwrap();
        assert_eq!(pkg, PhysicalId::from("pkg1"));
        assert_eq!(socket, 1);
    }

    #[test]
    fn resolve_location_rejects_wrong_kind_and_unknown_ids() {
        let topo = synthetic_topology(1, 1, 1);
        assert!(matches!(
            topo.resolve_location(&PhysicalId::from("dram0")),
            Err(ModelError::WrongKind { .. })
        ));
        assert!(matches!(
            topo.resolve_location(&PhysicalId::from("nope")),
            Err(ModelError::UnknownEntity(_))
        ));
    }

    #[test]
    fn metric_units_are_fixed() {
        for name in MetricName::ALL {
            let m = Metric::canonical(name);
            assert_eq!(m.unit, name.unit());
        }
        assert_eq!(MetricName::EnergyTotalJ.unit(), "joule");
        assert_eq!(MetricName::PowerIdleW.unit(), "watt");
        assert_eq!(MetricName::UccDelta.unit(), "count");
    }

    #[test]
    fn metric_names_serialize_screaming() {
        assert_eq!(
            serde_json::to_string(&MetricName::UccDelta).unwrap(),
            "\"UCC_DELTA\""
        );
        assert_eq!(
            serde_json::to_string(&MetricName::EnergyTotalJ).unwrap(),
            "\"ENERGY_TOTAL_J\""
        );
        assert_eq!(
            serde_json::to_string(&MetricName::DramReadsRemote).unwrap(),
            "\"DRAM_READS_REMOTE\""
        );
    }

    #[test]
    fn measurement_kind_rules() {
        let topo = synthetic_topology(1, 1, 1);
        let ok = Measurement {
            physical_entity_id: PhysicalId::from("pkg0"),
            metric: MetricName::EnergyTotalJ,
            logical_entity_id: None,
            t_start: 5,
            t_stop: 5,
            value: 1.0,
        };
        assert!(validate_measurement(&ok, &topo).is_ok());

        let bad_target = Measurement {
            physical_entity_id: PhysicalId::from("core-s0-p0-h0"),
            metric: MetricName::EnergyTotalJ,
            ..ok.clone()
        };
        assert!(validate_measurement(&bad_target, &topo).is_err());

        let counter_without_thread = Measurement {
            physical_entity_id: PhysicalId::from("core-s0-p0-h0"),
            metric: MetricName::UccDelta,
            ..ok.clone()
        };
        assert!(validate_measurement(&counter_without_thread, &topo).is_err());

        let inverted = Measurement {
            t_start: 10,
            t_stop: 5,
            ..ok
        };
        assert!(validate_measurement(&inverted, &topo).is_err());
    }

    #[test]
    fn topology_snapshot_rejects_unknown_fields() {
        let err = serde_json::from_str::<Topology>(
            r#"{"smt_factor": 1, "entities": [], "extra": 1}"#,
        );
        assert!(err.is_err());
    }
}
