//! Trace ingestion: the line-delimited JSON trace format, the idle-power
//! calibration arithmetic, and the pluggable data-source interface a live
//! collector would implement.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_measurement, validate_topology, EntityKind, LogicalEntity, LogicalId, LogicalKind,
    LogicalRegistry, Measurement, MetricName, Ns, PhysicalEntity, PhysicalId, Topology,
    NS_PER_SEC,
};

/// Thread declaration inside an APP_REGISTRY record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadDecl {
    pub id: LogicalId,
    pub name: String,
}

/// One line of a `.metrion.jsonl` trace. The `type` field selects the
/// variant; field names are locked by golden-file tests (see FORMAT.md).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum TraceRecord {
    #[serde(rename = "TOPOLOGY")]
    Topology {
        smt_factor: u32,
        entities: Vec<PhysicalEntity>,
    },
    #[serde(rename = "IDLE_CALIBRATION")]
    IdleCalibration {
        component_id: PhysicalId,
        pre_joules: f64,
        post_joules: f64,
        duration_ns: Ns,
    },
    #[serde(rename = "ENERGY_SAMPLE")]
    EnergySample {
        component_id: PhysicalId,
        t_ns: Ns,
        cumulative_joules: f64,
    },
    #[serde(rename = "SCHED_INTERVAL")]
    SchedInterval {
        thread_id: LogicalId,
        core_id: PhysicalId,
        t_in_ns: Ns,
        t_out_ns: Ns,
        ucc_delta: u64,
        aperf_delta: u64,
        mperf_delta: u64,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        dram_reads: BTreeMap<PhysicalId, u64>,
    },
    #[serde(rename = "APP_REGISTRY")]
    AppRegistry {
        application_id: LogicalId,
        name: String,
        threads: Vec<ThreadDecl>,
    },
}

const KNOWN_RECORD_TYPES: [&str; 5] = [
    "TOPOLOGY",
    "IDLE_CALIBRATION",
    "ENERGY_SAMPLE",
    "SCHED_INTERVAL",
    "APP_REGISTRY",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown record type {record_type:?}")]
    Versioning { line: usize, record_type: String },
    #[error("line {line}: {message}")]
    Semantic { line: usize, message: String },
    #[error("calibration duration must be positive")]
    NonPositiveDuration,
    #[error("calibration readings regress: post {post} < pre {pre}")]
    CounterRegression { pre: f64, post: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Idle power from a calibration segment: `(post − pre) / duration`.
pub fn compute_idle_power(
    pre_joules: f64,
    post_joules: f64,
    duration_s: f64,
) -> Result<f64, TraceError> {
    if duration_s <= 0.0 {
        return Err(TraceError::NonPositiveDuration);
    }
    if post_joules < pre_joules {
        return Err(TraceError::CounterRegression {
            pre: pre_joules,
            post: post_joules,
        });
    }
    Ok((post_joules - pre_joules) / duration_s)
}

/// Reads raw records without cross-record validation. Blank lines are
/// skipped; line numbers are 1-based.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<(usize, TraceRecord)>, TraceError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let record_type = value
            .get("type")
            .and_then(|t| t.as_str())
            .ok_or_else(|| TraceError::Parse {
                line: line_no,
                message: "missing \"type\" field".into(),
            })?
            .to_owned();
        if !KNOWN_RECORD_TYPES.contains(&record_type.as_str()) {
            return Err(TraceError::Versioning {
                line: line_no,
                record_type,
            });
        }
        let record: TraceRecord =
            serde_json::from_value(value).map_err(|e| TraceError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        out.push((line_no, record));
    }
    Ok(out)
}

/// Writes records one JSON object per line.
pub fn write_records<W: Write>(writer: &mut W, records: &[TraceRecord]) -> Result<(), TraceError> {
    for record in records {
        serde_json::to_writer(&mut *writer, record).map_err(|e| TraceError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// A fully parsed and validated trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub topology: Topology,
    pub measurements: Vec<Measurement>,
    pub registry: LogicalRegistry,
    /// Calibrated idle power per component, in watts.
    pub idle_power: BTreeMap<PhysicalId, f64>,
}

/// Parses a trace stream into data-model values, validating record ordering
/// and every produced measurement.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<ParsedTrace, TraceError> {
    let records = read_records(reader)?;
    parse_records(&records)
}

pub fn parse_records(records: &[(usize, TraceRecord)]) -> Result<ParsedTrace, TraceError> {
    let semantic = |line: usize, message: String| TraceError::Semantic { line, message };

    let mut topology: Option<Topology> = None;
    let mut measurements: Vec<Measurement> = Vec::new();
    let mut entities: Vec<LogicalEntity> = Vec::new();
    let mut known_threads: BTreeSet<LogicalId> = BTreeSet::new();
    let mut idle_power: BTreeMap<PhysicalId, f64> = BTreeMap::new();
    let mut saw_energy_sample = false;

    for (line, record) in records {
        let line = *line;
        if topology.is_none() && !matches!(record, TraceRecord::Topology { .. }) {
            return Err(semantic(line, "first record must be TOPOLOGY".into()));
        }
        match record {
            TraceRecord::Topology {
                smt_factor,
                entities: physical,
            } => {
                if topology.is_some() {
                    return Err(semantic(line, "duplicate TOPOLOGY record".into()));
                }
                let topo = Topology::new(*smt_factor, physical.clone());
                let violations = validate_topology(&topo);
                if let Some(v) = violations.first() {
                    return Err(semantic(line, format!("invalid topology: {v}")));
                }
                topology = Some(topo);
            }
            TraceRecord::IdleCalibration {
                component_id,
                pre_joules,
                post_joules,
                duration_ns,
            } => {
                if saw_energy_sample {
                    return Err(semantic(
                        line,
                        "IDLE_CALIBRATION must precede any ENERGY_SAMPLE".into(),
                    ));
                }
                let duration_s = *duration_ns as f64 / NS_PER_SEC as f64;
                let watts = compute_idle_power(*pre_joules, *post_joules, duration_s)
                    .map_err(|e| semantic(line, e.to_string()))?;
                let topo = topology.as_ref().expect("checked above");
                match topo.entity(component_id) {
                    Some(e) if matches!(e.kind, EntityKind::CpuPackage | EntityKind::DramNode) => {}
                    Some(e) => {
                        return Err(semantic(
                            line,
                            format!("calibration target {} has kind {:?}", e.id, e.kind),
                        ))
                    }
                    None => {
                        return Err(semantic(
                            line,
                            format!("calibration references unknown component {component_id}"),
                        ))
                    }
                }
                idle_power.insert(component_id.clone(), watts);
            }
            TraceRecord::EnergySample {
                component_id,
                t_ns,
                cumulative_joules,
            } => {
                saw_energy_sample = true;
                measurements.push(Measurement {
                    physical_entity_id: component_id.clone(),
                    metric: MetricName::EnergyTotalJ,
                    logical_entity_id: None,
                    t_start: *t_ns,
                    t_stop: *t_ns,
                    value: *cumulative_joules,
                });
            }
            TraceRecord::SchedInterval {
                thread_id,
                core_id,
                t_in_ns,
                t_out_ns,
                ucc_delta,
                aperf_delta,
                mperf_delta,
                dram_reads,
            } => {
                if !known_threads.contains(thread_id) {
                    return Err(semantic(
                        line,
                        format!("thread {thread_id} not declared by an earlier APP_REGISTRY"),
                    ));
                }
                if t_in_ns > t_out_ns {
                    return Err(semantic(line, "t_in_ns > t_out_ns".into()));
                }
                let topo = topology.as_ref().expect("checked above");
                let socket = topo
                    .socket_of_core(core_id)
                    .map_err(|e| semantic(line, e.to_string()))?;
                for (metric, value) in [
                    (MetricName::UccDelta, *ucc_delta),
                    (MetricName::AperfDelta, *aperf_delta),
                    (MetricName::MperfDelta, *mperf_delta),
                ] {
                    measurements.push(Measurement {
                        physical_entity_id: core_id.clone(),
                        metric,
                        logical_entity_id: Some(thread_id.clone()),
                        t_start: *t_in_ns,
                        t_stop: *t_out_ns,
                        value: value as f64,
                    });
                }
                for (node, count) in dram_reads {
                    let node_entity = topo.entity(node).ok_or_else(|| {
                        semantic(line, format!("reads reference unknown DRAM node {node}"))
                    })?;
                    let metric = if node_entity.socket_index == socket {
                        MetricName::DramReadsLocal
                    } else {
                        MetricName::DramReadsRemote
                    };
                    measurements.push(Measurement {
                        physical_entity_id: node.clone(),
                        metric,
                        logical_entity_id: Some(thread_id.clone()),
                        t_start: *t_in_ns,
                        t_stop: *t_out_ns,
                        value: *count as f64,
                    });
                }
            }
            TraceRecord::AppRegistry {
                application_id,
                name,
                threads,
            } => {
                entities.push(LogicalEntity {
                    id: application_id.clone(),
                    kind: LogicalKind::Application,
                    parent_id: None,
                    name: name.clone(),
                });
                for t in threads {
                    if !known_threads.insert(t.id.clone()) {
                        return Err(semantic(
                            line,
                            format!("thread id {} registered twice", t.id),
                        ));
                    }
                    entities.push(LogicalEntity {
                        id: t.id.clone(),
                        kind: LogicalKind::Thread,
                        parent_id: Some(application_id.clone()),
                        name: t.name.clone(),
                    });
                }
            }
        }
    }

    let topology = topology.ok_or_else(|| semantic(0, "empty trace".into()))?;
    for m in &measurements {
        validate_measurement(m, &topology)
            .map_err(|e| TraceError::Semantic { line: 0, message: e.to_string() })?;
    }
    measurements.sort_by_key(|m| m.t_start);

    Ok(ParsedTrace {
        topology,
        measurements,
        registry: LogicalRegistry::new(entities),
        idle_power,
    })
}

pub fn parse_trace_file(path: &Path) -> Result<ParsedTrace, TraceError> {
    let file = std::fs::File::open(path)?;
    parse_trace(std::io::BufReader::new(file))
}

/// Describes what a data-source backend can provide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSourceDescriptor {
    pub name: String,
    pub provided_metrics: BTreeSet<MetricName>,
    pub provided_entity_kinds: BTreeSet<EntityKind>,
}

impl DataSourceDescriptor {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.provided_metrics.is_empty() {
            return Err(TraceError::Semantic {
                line: 0,
                message: format!("data source {} provides no metrics", self.name),
            });
        }
        Ok(())
    }
}

/// A monitoring backend. The trace-file reader is the one shipped
/// implementation; a live kernel-probe or powercap collector plugs in here.
pub trait DataSource {
    fn descriptor(&self) -> DataSourceDescriptor;
    /// Collects everything the source has into data-model values.
    fn collect(&mut self) -> Result<ParsedTrace, TraceError>;
}

/// Data source backed by a `.metrion.jsonl` trace file.
pub struct TraceFileSource {
    path: std::path::PathBuf,
}

impl TraceFileSource {
    pub fn new(path: impl Into<std::path::PathBuf>) -> Self {
        TraceFileSource { path: path.into() }
    }
}

impl DataSource for TraceFileSource {
    fn descriptor(&self) -> DataSourceDescriptor {
        DataSourceDescriptor {
            name: "trace-file".into(),
            provided_metrics: MetricName::ALL.into_iter().collect(),
            provided_entity_kinds: [
                EntityKind::CpuPackage,
                EntityKind::LogicalCore,
                EntityKind::DramNode,
            ]
            .into_iter()
            .collect(),
        }
    }

    fn collect(&mut self) -> Result<ParsedTrace, TraceError> {
        parse_trace_file(&self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthetic_topology;

    fn minimal_records() -> Vec<TraceRecord> {
        let topo = synthetic_topology(1, 1, 1);
        vec![
            TraceRecord::Topology {
                smt_factor: topo.smt_factor,
                entities: topo.entities.clone(),
            },
            TraceRecord::IdleCalibration {
                component_id: PhysicalId::from("pkg0"),
                pre_joules: 0.0,
                post_joules: 120.0,
                duration_ns: 60 * NS_PER_SEC,
            },
            TraceRecord::AppRegistry {
                application_id: LogicalId::from("app1"),
                name: "demo".into(),
                threads: vec![ThreadDecl {
                    id: LogicalId::from("t1"),
                    name: "worker".into(),
                }],
            },
            TraceRecord::EnergySample {
                component_id: PhysicalId::from("pkg0"),
                t_ns: 0,
                cumulative_joules: 0.0,
            },
            TraceRecord::EnergySample {
                component_id: PhysicalId::from("pkg0"),
                t_ns: NS_PER_SEC,
                cumulative_joules: 5.0,
            },
            TraceRecord::SchedInterval {
                thread_id: LogicalId::from("t1"),
                core_id: PhysicalId::from("core-s0-p0-h0"),
                t_in_ns: 0,
                t_out_ns: NS_PER_SEC,
                ucc_delta: 1000,
                aperf_delta: 500,
                mperf_delta: 500,
                dram_reads: BTreeMap::new(),
            },
        ]
    }

    fn to_bytes(records: &[TraceRecord]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_records(&mut buf, records).unwrap();
        buf
    }

    #[test]
    fn minimal_trace_parses() {
        let bytes = to_bytes(&minimal_records());
        let parsed = parse_trace(bytes.as_slice()).unwrap();
        assert_eq!(parsed.topology.entities.len(), 3);
        assert!(parsed.measurements.len() >= 4);
        assert_eq!(parsed.idle_power[&PhysicalId::from("pkg0")], 2.0);
        assert!(parsed.registry.contains_thread(&LogicalId::from("t1")));
    }

    #[test]
    fn sched_interval_before_registry_is_semantic_error() {
        let mut records = minimal_records();
        records.swap(2, 5); // SCHED_INTERVAL now precedes APP_REGISTRY
        let err = parse_trace(to_bytes(&records).as_slice()).unwrap_err();
        assert!(matches!(err, TraceError::Semantic { .. }), "{err}");
    }

    #[test]
    fn calibration_after_sample_is_rejected() {
        let mut records = minimal_records();
        let calib = records.remove(1);
        records.push(calib);
        let err = parse_trace(to_bytes(&records).as_slice()).unwrap_err();
        assert!(matches!(err, TraceError::Semantic { .. }));
    }

    #[test]
    fn first_record_must_be_topology() {
        let mut records = minimal_records();
        records.rotate_left(1);
        let err = parse_trace(to_bytes(&records).as_slice()).unwrap_err();
        assert!(matches!(err, TraceError::Semantic { line: 1, .. }));
    }

    #[test]
    fn unknown_record_type_is_a_versioning_error() {
        let line = b"{\"type\": \"FUTURE_RECORD\", \"x\": 1}\n";
        let err = parse_trace(&line[..]).unwrap_err();
        assert!(matches!(err, TraceError::Versioning { line: 1, .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let bytes = b"{\"type\": \"TOPOLOGY\", \"smt_factor\": 1, \"entities\": []}\nnot json\n";
        let err = parse_trace(&bytes[..]).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 2, .. }));
    }

    #[test]
    fn record_round_trip_is_identity() {
        let records = minimal_records();
        let bytes = to_bytes(&records);
        let reparsed: Vec<TraceRecord> = read_records(bytes.as_slice())
            .unwrap()
            .into_iter()
            .map(|(_, r)| r)
            .collect();
        assert_eq!(records, reparsed);
        // Re-serialization is byte-identical.
        assert_eq!(bytes, to_bytes(&reparsed));
    }

    #[test]
    fn idle_power_arithmetic() {
        assert_eq!(compute_idle_power(0.0, 120.0, 60.0).unwrap(), 2.0);
        assert_eq!(compute_idle_power(7.0, 7.0, 10.0).unwrap(), 0.0);
        assert!(matches!(
            compute_idle_power(0.0, 1.0, 0.0),
            Err(TraceError::NonPositiveDuration)
        ));
        assert!(matches!(
            compute_idle_power(5.0, 1.0, 10.0),
            Err(TraceError::CounterRegression { .. })
        ));
    }

    #[test]
    fn trace_file_source_descriptor_is_valid() {
        let src = TraceFileSource::new("/dev/null");
        let desc = src.descriptor();
        desc.validate().unwrap();
        assert!(desc.provided_metrics.contains(&MetricName::EnergyTotalJ));
    }

    #[test]
    fn measurements_pass_model_validation() {
        let parsed = parse_trace(to_bytes(&minimal_records()).as_slice()).unwrap();
        for m in &parsed.measurements {
            validate_measurement(m, &parsed.topology).unwrap();
        }
    }
}
