//! Execution intervals and SMT-aware sub-interval splitting.
//!
//! An execution interval is one scheduled-in/out span of a thread on a
//! logical core together with its hardware-counter deltas. Splitting cuts
//! each interval at every instant where the occupancy of an SMT-sibling
//! core changes, so each sub-interval is either fully exclusive or fully
//! co-scheduled.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::model::{
    LogicalId, Measurement, MetricName, Ns, PhysicalId, Topology,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionInterval {
    pub thread_id: LogicalId,
    pub core_id: PhysicalId,
    pub t_in: Ns,
    pub t_out: Ns,
    pub ucc_delta: u64,
    pub aperf_delta: u64,
    pub mperf_delta: u64,
    /// Read transactions recorded against each DRAM node during the span.
    pub dram_reads: BTreeMap<PhysicalId, u64>,
}

impl ExecutionInterval {
    pub fn duration(&self) -> Ns {
        self.t_out - self.t_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubInterval {
    /// Index of the parent interval in the slice that produced this value.
    pub parent: usize,
    pub thread_id: LogicalId,
    pub core_id: PhysicalId,
    pub t_start: Ns,
    pub t_stop: Ns,
    /// True iff some other thread runs on an SMT-sibling core throughout
    /// `[t_start, t_stop)`.
    pub smt_active: bool,
    pub ucc_delta: u64,
    pub aperf_delta: u64,
    pub mperf_delta: u64,
    pub dram_reads: BTreeMap<PhysicalId, u64>,
}

/// Duration function over sub-intervals.
pub fn duration(sub: &SubInterval) -> Ns {
    sub.t_stop - sub.t_start
}

#[derive(Debug, Error)]
pub enum IntervalError {
    #[error("threads {a_thread} and {b_thread} overlap on core {core}: [{a_in},{a_out}) vs [{b_in},{b_out})")]
    Conflict {
        core: PhysicalId,
        a_thread: LogicalId,
        a_in: Ns,
        a_out: Ns,
        b_thread: LogicalId,
        b_in: Ns,
        b_out: Ns,
    },
    #[error("counter measurement ({metric:?} on {entity}, thread {thread}, [{t_start},{t_stop})) has no matching scheduling span")]
    OrphanMeasurement {
        metric: MetricName,
        entity: PhysicalId,
        thread: LogicalId,
        t_start: Ns,
        t_stop: Ns,
    },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Builds one execution interval per (thread, scheduling span) from the
/// per-span counter measurements. Spans are identified by UCC/APERF/MPERF
/// measurements on a logical core; DRAM read measurements must match an
/// existing span of the same thread exactly.
pub fn build_intervals(
    measurements: &[Measurement],
    topology: &Topology,
) -> Result<Vec<ExecutionInterval>, IntervalError> {
    type SpanKey = (LogicalId, Ns, Ns);
    let mut spans: HashMap<SpanKey, ExecutionInterval> = HashMap::new();
    let mut order: Vec<SpanKey> = Vec::new();

    for m in measurements {
        let is_core_counter = matches!(
            m.metric,
            MetricName::UccDelta | MetricName::AperfDelta | MetricName::MperfDelta
        );
        if !is_core_counter {
            continue;
        }
        let thread = m
            .logical_entity_id
            .clone()
            .expect("validated counter measurements carry a thread");
        if m.t_start == m.t_stop {
            log::warn!(
                "dropping zero-duration scheduling span of thread {} at t={}",
                thread,
                m.t_start
            );
            continue;
        }
        let key = (thread.clone(), m.t_start, m.t_stop);
        let entry = spans.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            ExecutionInterval {
                thread_id: thread,
                core_id: m.physical_entity_id.clone(),
                t_in: m.t_start,
                t_out: m.t_stop,
                ucc_delta: 0,
                aperf_delta: 0,
                mperf_delta: 0,
                dram_reads: BTreeMap::new(),
            }
        });
        let value = m.value.round() as u64;
        match m.metric {
            MetricName::UccDelta => entry.ucc_delta += value,
            MetricName::AperfDelta => entry.aperf_delta += value,
            MetricName::MperfDelta => entry.mperf_delta += value,
            _ => unreachable!(),
        }
    }

    // DRAM reads attach to an existing span of the same thread and time range.
    for m in measurements {
        let is_dram = matches!(
            m.metric,
            MetricName::DramReadsLocal | MetricName::DramReadsRemote
        );
        if !is_dram {
            continue;
        }
        let thread = m
            .logical_entity_id
            .clone()
            .expect("validated counter measurements carry a thread");
        if m.t_start == m.t_stop {
            continue;
        }
        let key = (thread.clone(), m.t_start, m.t_stop);
        let Some(entry) = spans.get_mut(&key) else {
            return Err(IntervalError::OrphanMeasurement {
                metric: m.metric,
                entity: m.physical_entity_id.clone(),
                thread,
                t_start: m.t_start,
                t_stop: m.t_stop,
            });
        };
        *entry
            .dram_reads
            .entry(m.physical_entity_id.clone())
            .or_insert(0) += m.value.round() as u64;
    }

    let mut intervals: Vec<ExecutionInterval> = order
        .into_iter()
        .map(|key| spans.remove(&key).expect("keys recorded at insertion"))
        .collect();
    intervals.sort_by(|a, b| {
        (&a.core_id, a.t_in, &a.thread_id).cmp(&(&b.core_id, b.t_in, &b.thread_id))
    });

    // One thread per logical core at a time; intervals are half-open so
    // touching at a point is not an overlap.
    for pair in intervals.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.core_id == b.core_id && b.t_in < a.t_out {
            return Err(IntervalError::Conflict {
                core: a.core_id.clone(),
                a_thread: a.thread_id.clone(),
                a_in: a.t_in,
                a_out: a.t_out,
                b_thread: b.thread_id.clone(),
                b_in: b.t_in,
                b_out: b.t_out,
            });
        }
    }

    // Ensure referenced cores exist and are cores.
    for iv in &intervals {
        topology.resolve_location(&iv.core_id)?;
    }

    Ok(intervals)
}

/// Prorates a counter delta over sub-interval durations: floor division per
/// piece, remainder assigned to the last piece, so the pieces always sum back
/// to the original delta exactly.
fn prorate(delta: u64, durations: &[Ns]) -> Vec<u64> {
    let total: u128 = durations.iter().map(|&d| d as u128).sum();
    if total == 0 || durations.is_empty() {
        return vec![0; durations.len()];
    }
    let mut out = Vec::with_capacity(durations.len());
    let mut assigned: u64 = 0;
    for &d in &durations[..durations.len() - 1] {
        let share = ((delta as u128) * (d as u128) / total) as u64;
        out.push(share);
        assigned += share;
    }
    out.push(delta - assigned);
    out
}

/// Splits each interval at every instant where the occupancy of any
/// SMT-sibling core changes. Counter deltas are prorated time-proportionally
/// with the remainder on the last sub-interval; zero-length fragments are
/// discarded.
pub fn split_smt(
    intervals: &[ExecutionInterval],
    topology: &Topology,
) -> Result<Vec<SubInterval>, IntervalError> {
    // Busy spans per core, sorted by construction (build_intervals sorts).
    let mut busy: HashMap<&PhysicalId, Vec<(Ns, Ns)>> = HashMap::new();
    for iv in intervals {
        busy.entry(&iv.core_id).or_default().push((iv.t_in, iv.t_out));
    }

    let mut subs = Vec::new();
    for (idx, iv) in intervals.iter().enumerate() {
        let siblings = topology.siblings_of(&iv.core_id)?;

        let mut cuts: Vec<Ns> = vec![iv.t_in, iv.t_out];
        for sib in siblings {
            if let Some(spans) = busy.get(sib) {
                for &(a, b) in spans {
                    if a < iv.t_out && b > iv.t_in {
                        cuts.push(a.clamp(iv.t_in, iv.t_out));
                        cuts.push(b.clamp(iv.t_in, iv.t_out));
                    }
                }
            }
        }
        cuts.sort_unstable();
        cuts.dedup();

        let durations: Vec<Ns> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
        let ucc = prorate(iv.ucc_delta, &durations);
        let aperf = prorate(iv.aperf_delta, &durations);
        let mperf = prorate(iv.mperf_delta, &durations);
        let reads: BTreeMap<&PhysicalId, Vec<u64>> = iv
            .dram_reads
            .iter()
            .map(|(node, &count)| (node, prorate(count, &durations)))
            .collect();

        for (piece, w) in cuts.windows(2).enumerate() {
            let (start, stop) = (w[0], w[1]);
            if start == stop {
                continue;
            }
            // Cuts include every sibling in/out point, so occupancy is
            // constant on [start, stop): testing at `start` suffices.
            let smt_active = siblings.iter().any(|sib| {
                busy.get(sib)
                    .map(|spans| spans.iter().any(|&(a, b)| a <= start && start < b))
                    .unwrap_or(false)
            });
            subs.push(SubInterval {
                parent: idx,
                thread_id: iv.thread_id.clone(),
                core_id: iv.core_id.clone(),
                t_start: start,
                t_stop: stop,
                smt_active,
                ucc_delta: ucc[piece],
                aperf_delta: aperf[piece],
                mperf_delta: mperf[piece],
                dram_reads: reads
                    .iter()
                    .map(|(node, shares)| ((*node).clone(), shares[piece]))
                    .collect(),
            });
        }
    }

    subs.sort_by(|a, b| {
        (&a.core_id, a.t_start, &a.thread_id).cmp(&(&b.core_id, b.t_start, &b.thread_id))
    });
    Ok(subs)
}
