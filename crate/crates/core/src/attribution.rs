//! The energy attribution model: work functions, active and idle energy
//! distribution, window construction and aggregation to applications.
//!
//! Everything here is generic over [`Scalar`], so the same code path runs on
//! floats for production and on rationals for exact checking.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::interval::SubInterval;
use crate::model::{
    EntityKind, LogicalId, LogicalRegistry, Measurement, MetricName, ModelError, Ns,
    PhysicalEntity, PhysicalId, Topology, NS_PER_SEC,
};
use crate::scalar::Scalar;

/// Model parameters. `smt_sigma` inflates work during co-scheduled phases;
/// `gamma_remote` weights remote-socket DRAM reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<R> {
    pub smt_sigma: R,
    pub gamma_remote: R,
    pub gamma_local: R,
}

pub const DEFAULT_SMT_SIGMA: f64 = 1.15;
pub const DEFAULT_GAMMA_REMOTE: f64 = 9.67;

impl<R: Scalar> Default for ModelParams<R> {
    fn default() -> Self {
        ModelParams {
            smt_sigma: R::from_f64(DEFAULT_SMT_SIGMA),
            gamma_remote: R::from_f64(DEFAULT_GAMMA_REMOTE),
            gamma_local: R::one(),
        }
    }
}

impl<R: Scalar> ModelParams<R> {
    pub fn validate(&self) -> Result<(), AttributionError> {
        if self.smt_sigma < R::one() {
            return Err(AttributionError::InvalidParams(
                "smt_sigma must be >= 1".into(),
            ));
        }
        if self.gamma_remote < self.gamma_local || self.gamma_local <= R::zero() {
            return Err(AttributionError::InvalidParams(
                "gamma_remote must be >= gamma_local > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-component energy over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentEnergy<R> {
    pub total_j: R,
    pub idle_j: R,
    pub active_j: R,
    /// True when total minus idle was negative and active was clamped to 0.
    pub clamped: bool,
}

/// One monitoring window with its per-component energy split.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<R> {
    pub t_start: Ns,
    pub t_stop: Ns,
    pub component_energy: BTreeMap<PhysicalId, ComponentEnergy<R>>,
}

impl<R> Window<R> {
    pub fn duration_ns(&self) -> Ns {
        self.t_stop - self.t_start
    }
}

/// A sub-interval clipped to a window, with counters scaled by the exact
/// time fraction of the overlap. Counter fields are scalars because clipping
/// is the one place proration leaves integer arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSub<R> {
    pub thread_id: LogicalId,
    pub core_id: PhysicalId,
    pub t_start: Ns,
    pub t_stop: Ns,
    pub smt_active: bool,
    pub ucc: R,
    pub aperf: R,
    pub mperf: R,
    pub dram_reads: BTreeMap<PhysicalId, R>,
}

impl<R> WindowedSub<R> {
    pub fn duration_ns(&self) -> Ns {
        self.t_stop - self.t_start
    }
}

/// Clips sub-intervals to `[t_start, t_stop)`, prorating counters by the
/// overlap fraction. Sub-intervals outside the window are dropped.
pub fn clip_to_window<R: Scalar>(
    subs: &[SubInterval],
    t_start: Ns,
    t_stop: Ns,
) -> Vec<WindowedSub<R>> {
    let mut out = Vec::new();
    for sub in subs {
        let lo = sub.t_start.max(t_start);
        let hi = sub.t_stop.min(t_stop);
        if lo >= hi {
            continue;
        }
        let frac = R::from_u64(hi - lo) / R::from_u64(sub.t_stop - sub.t_start);
        out.push(WindowedSub {
            thread_id: sub.thread_id.clone(),
            core_id: sub.core_id.clone(),
            t_start: lo,
            t_stop: hi,
            smt_active: sub.smt_active,
            ucc: R::from_u64(sub.ucc_delta) * frac.clone(),
            aperf: R::from_u64(sub.aperf_delta) * frac.clone(),
            mperf: R::from_u64(sub.mperf_delta) * frac.clone(),
            dram_reads: sub
                .dram_reads
                .iter()
                .map(|(node, &count)| (node.clone(), R::from_u64(count) * frac.clone()))
                .collect(),
        });
    }
    out
}

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("sub-interval on {core} has aperf_delta > 0 with mperf_delta = 0")]
    DegenerateCounters { core: PhysicalId },
    #[error("reads recorded against unknown DRAM node {0}")]
    UnknownComponent(PhysicalId),
    #[error("thread {0} has no parent application")]
    OrphanThread(LogicalId),
    #[error("cumulative energy readings for {component} regress at t={t}")]
    CounterRegression { component: PhysicalId, t: Ns },
    #[error("no {metric:?} samples bracketing t={t} for {component}")]
    MissingSample {
        metric: MetricName,
        component: PhysicalId,
        t: Ns,
    },
    #[error("no idle power known for component {0}")]
    MissingIdlePower(PhysicalId),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// CPU work function: `ΔUCC · (ΔAPERF/ΔMPERF) · σ · L`.
///
/// σ is `smt_sigma` during co-scheduled phases and 1 otherwise; L is 1 iff
/// the sub-interval's core belongs to `package`. A halted span (both APERF
/// and MPERF deltas zero) has ratio 1 so the zero UCC dominates.
pub fn cpu_work<R: Scalar>(
    sub: &WindowedSub<R>,
    package: &PhysicalEntity,
    topology: &Topology,
    params: &ModelParams<R>,
) -> Result<R, AttributionError> {
    if package.kind != EntityKind::CpuPackage {
        return Err(ModelError::WrongKind {
            id: package.id.clone(),
            expected: EntityKind::CpuPackage,
            actual: package.kind,
        }
        .into());
    }
    let (home, _) = topology.resolve_location(&sub.core_id)?;
    if home != package.id {
        return Ok(R::zero());
    }
    let ratio = if sub.mperf.is_zero() {
        if sub.aperf.is_zero() {
            R::one()
        } else {
            return Err(AttributionError::DegenerateCounters {
                core: sub.core_id.clone(),
            });
        }
    } else {
        sub.aperf.clone() / sub.mperf.clone()
    };
    let sigma = if sub.smt_active {
        params.smt_sigma.clone()
    } else {
        R::one()
    };
    Ok(sub.ucc.clone() * ratio * sigma)
}

/// DRAM work function: `ΔO_d · γ`, with γ = `gamma_local` when the
/// sub-interval's core sits on the node's socket and `gamma_remote` otherwise.
pub fn dram_work<R: Scalar>(
    sub: &WindowedSub<R>,
    dram: &PhysicalEntity,
    topology: &Topology,
    params: &ModelParams<R>,
) -> Result<R, AttributionError> {
    if dram.kind != EntityKind::DramNode {
        return Err(ModelError::WrongKind {
            id: dram.id.clone(),
            expected: EntityKind::DramNode,
            actual: dram.kind,
        }
        .into());
    }
    for node in sub.dram_reads.keys() {
        match topology.entity(node) {
            Some(e) if e.kind == EntityKind::DramNode => {}
            _ => return Err(AttributionError::UnknownComponent(node.clone())),
        }
    }
    let Some(reads) = sub.dram_reads.get(&dram.id) else {
        return Ok(R::zero());
    };
    let socket = topology.socket_of_core(&sub.core_id)?;
    let gamma = if socket == dram.socket_index {
        params.gamma_local.clone()
    } else {
        params.gamma_remote.clone()
    };
    Ok(reads.clone() * gamma)
}

fn work_for<R: Scalar>(
    sub: &WindowedSub<R>,
    component: &PhysicalEntity,
    topology: &Topology,
    params: &ModelParams<R>,
) -> Result<R, AttributionError> {
    match component.kind {
        EntityKind::CpuPackage => cpu_work(sub, component, topology, params),
        EntityKind::DramNode => dram_work(sub, component, topology, params),
        other => Err(ModelError::WrongKind {
            id: component.id.clone(),
            expected: EntityKind::CpuPackage,
            actual: other,
        }
        .into()),
    }
}

/// Energy on a component that could not be attributed because no tracked
/// work (or time) was recorded there. A signal of untracked activity, not
/// a failure.
#[derive(Debug, Clone, PartialEq)]
pub struct UnattributedEnergy<R> {
    pub component_id: PhysicalId,
    pub joules: R,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveAttribution<R> {
    pub per_thread: BTreeMap<LogicalId, BTreeMap<PhysicalId, R>>,
    pub unattributed: Vec<UnattributedEnergy<R>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdleAttribution<R> {
    pub per_thread: BTreeMap<LogicalId, BTreeMap<PhysicalId, R>>,
    pub unattributed: Vec<UnattributedEnergy<R>>,
}

/// Residual threshold below which a zero-work component does not raise an
/// unattributed-energy diagnostic.
fn residual_epsilon<R: Scalar>() -> R {
    R::from_f64(1e-12)
}

/// Distributes each component's active energy over sub-intervals in
/// proportion to their work share, then sums per thread.
pub fn attribute_active<R: Scalar>(
    subs: &[WindowedSub<R>],
    window: &Window<R>,
    topology: &Topology,
    params: &ModelParams<R>,
) -> Result<ActiveAttribution<R>, AttributionError> {
    params.validate()?;
    let mut per_thread: BTreeMap<LogicalId, BTreeMap<PhysicalId, R>> = BTreeMap::new();
    let mut unattributed = Vec::new();

    // Canonical evaluation order: (t_start, thread, core).
    let mut ordered: Vec<&WindowedSub<R>> = subs.iter().collect();
    ordered.sort_by(|a, b| {
        (a.t_start, &a.thread_id, &a.core_id).cmp(&(b.t_start, &b.thread_id, &b.core_id))
    });

    for (component_id, energy) in &window.component_energy {
        let component = topology
            .entity(component_id)
            .ok_or_else(|| ModelError::UnknownEntity(component_id.clone()))?;
        if !matches!(component.kind, EntityKind::CpuPackage | EntityKind::DramNode) {
            continue;
        }
        let works: Vec<R> = ordered
            .iter()
            .map(|sub| work_for(sub, component, topology, params))
            .collect::<Result<_, _>>()?;
        let total = R::accumulate(works.iter().cloned());
        if total.is_zero() {
            if energy.active_j > residual_epsilon::<R>() {
                unattributed.push(UnattributedEnergy {
                    component_id: component_id.clone(),
                    joules: energy.active_j.clone(),
                });
            }
            continue;
        }
        // Eq-level form: each sub-interval receives active · w/Σw; thread
        // totals are accumulated over their sub-intervals in canonical order.
        let mut shares: BTreeMap<&LogicalId, Vec<R>> = BTreeMap::new();
        for (sub, w) in ordered.iter().zip(&works) {
            if w.is_zero() {
                continue;
            }
            let share = energy.active_j.clone() * w.clone() / total.clone();
            shares.entry(&sub.thread_id).or_default().push(share);
        }
        for (thread, pieces) in shares {
            per_thread
                .entry(thread.clone())
                .or_default()
                .insert(component_id.clone(), R::accumulate(pieces));
        }
    }

    Ok(ActiveAttribution {
        per_thread,
        unattributed,
    })
}

/// Distributes each component's idle energy: CPU packages by time share of
/// the sub-intervals on them; DRAM nodes split equally, once per thread with
/// recorded read activity on the node during the window.
pub fn attribute_idle<R: Scalar>(
    subs: &[WindowedSub<R>],
    window: &Window<R>,
    topology: &Topology,
) -> Result<IdleAttribution<R>, AttributionError> {
    let mut per_thread: BTreeMap<LogicalId, BTreeMap<PhysicalId, R>> = BTreeMap::new();
    let mut unattributed = Vec::new();

    let mut ordered: Vec<&WindowedSub<R>> = subs.iter().collect();
    ordered.sort_by(|a, b| {
        (a.t_start, &a.thread_id, &a.core_id).cmp(&(b.t_start, &b.thread_id, &b.core_id))
    });

    for (component_id, energy) in &window.component_energy {
        let component = topology
            .entity(component_id)
            .ok_or_else(|| ModelError::UnknownEntity(component_id.clone()))?;
        match component.kind {
            EntityKind::CpuPackage => {
                let weights: Vec<R> = ordered
                    .iter()
                    .map(|sub| -> Result<R, AttributionError> {
                        let (home, _) = topology.resolve_location(&sub.core_id)?;
                        Ok(if home == component.id {
                            R::from_u64(sub.duration_ns())
                        } else {
                            R::zero()
                        })
                    })
                    .collect::<Result<_, _>>()?;
                let total = R::accumulate(weights.iter().cloned());
                if total.is_zero() {
                    if energy.idle_j > residual_epsilon::<R>() {
                        unattributed.push(UnattributedEnergy {
                            component_id: component_id.clone(),
                            joules: energy.idle_j.clone(),
                        });
                    }
                    continue;
                }
                let mut shares: BTreeMap<&LogicalId, Vec<R>> = BTreeMap::new();
                for (sub, w) in ordered.iter().zip(&weights) {
                    if w.is_zero() {
                        continue;
                    }
                    let share = energy.idle_j.clone() * w.clone() / total.clone();
                    shares.entry(&sub.thread_id).or_default().push(share);
                }
                for (thread, pieces) in shares {
                    per_thread
                        .entry(thread.clone())
                        .or_default()
                        .insert(component_id.clone(), R::accumulate(pieces));
                }
            }
            EntityKind::DramNode => {
                let active_threads: BTreeSet<&LogicalId> = ordered
                    .iter()
                    .filter(|sub| {
                        sub.dram_reads
                            .get(component_id)
                            .map(|r| !r.is_zero())
                            .unwrap_or(false)
                    })
                    .map(|sub| &sub.thread_id)
                    .collect();
                let n = active_threads.len();
                if n == 0 {
                    if energy.idle_j > residual_epsilon::<R>() {
                        unattributed.push(UnattributedEnergy {
                            component_id: component_id.clone(),
                            joules: energy.idle_j.clone(),
                        });
                    }
                    continue;
                }
                let share = energy.idle_j.clone() / R::from_u64(n as u64);
                for thread in active_threads {
                    per_thread
                        .entry(thread.clone())
                        .or_default()
                        .insert(component_id.clone(), share.clone());
                }
            }
            _ => {}
        }
    }

    Ok(IdleAttribution {
        per_thread,
        unattributed,
    })
}

/// Active/idle pair attributed to one (thread-or-application, component).
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyShare<R> {
    pub active_j: R,
    pub idle_j: R,
}

impl<R: Scalar> EnergyShare<R> {
    pub fn zero() -> Self {
        EnergyShare {
            active_j: R::zero(),
            idle_j: R::zero(),
        }
    }
    pub fn total(&self) -> R {
        self.active_j.clone() + self.idle_j.clone()
    }
}

/// Per-window attribution result rolled up to threads and applications.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionReport<R> {
    pub t_start: Ns,
    pub t_stop: Ns,
    pub component_energy: BTreeMap<PhysicalId, ComponentEnergy<R>>,
    pub per_thread: BTreeMap<LogicalId, BTreeMap<PhysicalId, EnergyShare<R>>>,
    pub per_application: BTreeMap<LogicalId, BTreeMap<PhysicalId, EnergyShare<R>>>,
    pub unattributed_active: Vec<UnattributedEnergy<R>>,
    pub unattributed_idle: Vec<UnattributedEnergy<R>>,
}

/// Rolls per-thread entries up to applications; application entries are
/// exact sums of their threads' entries.
pub fn aggregate<R: Scalar>(
    active: &ActiveAttribution<R>,
    idle: &IdleAttribution<R>,
    window: &Window<R>,
    registry: &LogicalRegistry,
) -> Result<AttributionReport<R>, AttributionError> {
    let mut per_thread: BTreeMap<LogicalId, BTreeMap<PhysicalId, EnergyShare<R>>> = BTreeMap::new();
    for (thread, comps) in &active.per_thread {
        for (comp, joules) in comps {
            per_thread
                .entry(thread.clone())
                .or_default()
                .entry(comp.clone())
                .or_insert_with(EnergyShare::zero)
                .active_j = joules.clone();
        }
    }
    for (thread, comps) in &idle.per_thread {
        for (comp, joules) in comps {
            per_thread
                .entry(thread.clone())
                .or_default()
                .entry(comp.clone())
                .or_insert_with(EnergyShare::zero)
                .idle_j = joules.clone();
        }
    }

    let mut per_application: BTreeMap<LogicalId, BTreeMap<PhysicalId, EnergyShare<R>>> =
        BTreeMap::new();
    for (thread, comps) in &per_thread {
        let app = registry
            .parent_application(thread)
            .ok_or_else(|| AttributionError::OrphanThread(thread.clone()))?;
        let app_entry = per_application.entry(app.clone()).or_default();
        for (comp, share) in comps {
            let slot = app_entry
                .entry(comp.clone())
                .or_insert_with(EnergyShare::zero);
            slot.active_j = slot.active_j.clone() + share.active_j.clone();
            slot.idle_j = slot.idle_j.clone() + share.idle_j.clone();
        }
    }

    Ok(AttributionReport {
        t_start: window.t_start,
        t_stop: window.t_stop,
        component_energy: window.component_energy.clone(),
        per_thread,
        per_application,
        unattributed_active: active.unattributed.clone(),
        unattributed_idle: idle.unattributed.clone(),
    })
}

/// Interpolated cumulative reading of a component's energy counter at `t`.
fn reading_at<R: Scalar>(
    samples: &[(Ns, f64)],
    component: &PhysicalId,
    t: Ns,
) -> Result<R, AttributionError> {
    let miss = || AttributionError::MissingSample {
        metric: MetricName::EnergyTotalJ,
        component: component.clone(),
        t,
    };
    let after = samples.iter().position(|&(ts, _)| ts >= t).ok_or_else(miss)?;
    let (t1, v1) = samples[after];
    if t1 == t {
        return Ok(R::from_f64(v1));
    }
    if after == 0 {
        return Err(miss());
    }
    let (t0, v0) = samples[after - 1];
    let frac = R::from_u64(t - t0) / R::from_u64(t1 - t0);
    Ok(R::from_f64(v0) + (R::from_f64(v1) - R::from_f64(v0)) * frac)
}

/// Builds a window from cumulative energy samples and calibrated idle power:
/// `total = reading(t_stop) − reading(t_start)`, `idle = power · Δt`,
/// `active = max(0, total − idle)` with clamps flagged.
pub fn compute_window<R: Scalar>(
    total_readings: &[Measurement],
    idle_power: &BTreeMap<PhysicalId, f64>,
    t_start: Ns,
    t_stop: Ns,
) -> Result<Window<R>, AttributionError> {
    assert!(t_start < t_stop, "window must have positive duration");

    let mut per_component: BTreeMap<&PhysicalId, Vec<(Ns, f64)>> = BTreeMap::new();
    for m in total_readings {
        if m.metric != MetricName::EnergyTotalJ {
            continue;
        }
        per_component
            .entry(&m.physical_entity_id)
            .or_default()
            .push((m.t_start, m.value));
    }

    let mut component_energy = BTreeMap::new();
    for (component, mut samples) in per_component {
        samples.sort_by_key(|&(t, _)| t);
        for pair in samples.windows(2) {
            if pair[1].1 < pair[0].1 {
                return Err(AttributionError::CounterRegression {
                    component: component.clone(),
                    t: pair[1].0,
                });
            }
        }
        let start: R = reading_at(&samples, component, t_start)?;
        let stop: R = reading_at(&samples, component, t_stop)?;
        let total_j = stop - start;
        let watts = idle_power
            .get(component)
            .ok_or_else(|| AttributionError::MissingIdlePower(component.clone()))?;
        let idle_j =
            R::from_f64(*watts) * R::from_u64(t_stop - t_start) / R::from_u64(NS_PER_SEC);
        let raw_active = total_j.clone() - idle_j.clone();
        let clamped = raw_active < R::zero();
        if clamped {
            log::warn!(
                "window [{t_start},{t_stop}) on {component}: idle calibration exceeds measured total, clamping active to 0"
            );
        }
        component_energy.insert(
            component.clone(),
            ComponentEnergy {
                total_j,
                idle_j,
                active_j: raw_active.max_zero(),
                clamped,
            },
        );
    }

    Ok(Window {
        t_start,
        t_stop,
        component_energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthetic_topology;

    fn sub(thread: &str, core: &str, t: (Ns, Ns), smt: bool, ucc: f64) -> WindowedSub<f64> {
        WindowedSub {
            thread_id: LogicalId::from(thread),
            core_id: PhysicalId::from(core),
            t_start: t.0,
            t_stop: t.1,
            smt_active: smt,
            ucc,
            aperf: 1.0,
            mperf: 1.0,
            dram_reads: BTreeMap::new(),
        }
    }

    fn window_with(component: &str, total: f64, idle: f64) -> Window<f64> {
        let mut component_energy = BTreeMap::new();
        component_energy.insert(
            PhysicalId::from(component),
            ComponentEnergy {
                total_j: total,
                idle_j: idle,
                active_j: total - idle,
                clamped: false,
            },
        );
        Window {
            t_start: 0,
            t_stop: NS_PER_SEC,
            component_energy,
        }
    }

    #[test]
    fn cpu_work_ratio_one_sigma_one() {
        let topo = synthetic_topology(1, 1, 1);
        let params = ModelParams::<f64>::default();
        let s = sub("t1", "core-s0-p0-h0", (0, 10), false, 1000.0);
        let pkg = topo.entity(&PhysicalId::from("pkg0")).unwrap();
        assert_eq!(cpu_work(&s, pkg, &topo, &params).unwrap(), 1000.0);
    }

    #[test]
    fn cpu_work_scales_with_frequency_and_sigma() {
        let topo = synthetic_topology(1, 1, 2);
        let params = ModelParams::<f64>::default();
        let mut s = sub("t1", "core-s0-p0-h0", (0, 10), true, 1000.0);
        s.aperf = 2.0;
        s.mperf = 1.0;
        let pkg = topo.entity(&PhysicalId::from("pkg0")).unwrap();
        let w = cpu_work(&s, pkg, &topo, &params).unwrap();
        assert!((w - 2300.0).abs() < 1e-9);
    }

    #[test]
    fn cpu_work_other_socket_is_zero() {
        let topo = synthetic_topology(2, 1, 1);
        let params = ModelParams::<f64>::default();
        let s = sub("t1", "core-s0-p0-h0", (0, 10), false, 1000.0);
        let other = topo.entity(&PhysicalId::from("pkg1")).unwrap();
        assert_eq!(cpu_work(&s, other, &topo, &params).unwrap(), 0.0);
    }

    #[test]
    fn cpu_work_degenerate_counters() {
        let topo = synthetic_topology(1, 1, 1);
        let params = ModelParams::<f64>::default();
        let pkg = topo.entity(&PhysicalId::from("pkg0")).unwrap();

        let mut halted = sub("t1", "core-s0-p0-h0", (0, 10), false, 0.0);
        halted.aperf = 0.0;
        halted.mperf = 0.0;
        assert_eq!(cpu_work(&halted, pkg, &topo, &params).unwrap(), 0.0);

        let mut degenerate = sub("t1", "core-s0-p0-h0", (0, 10), false, 5.0);
        degenerate.aperf = 5.0;
        degenerate.mperf = 0.0;
        assert!(matches!(
            cpu_work(&degenerate, pkg, &topo, &params),
            Err(AttributionError::DegenerateCounters { .. })
        ));
    }

    #[test]
    fn dram_work_local_and_remote() {
        let topo = synthetic_topology(2, 1, 1);
        let params = ModelParams::<f64>::default();
        let mut s = sub("t1", "core-s0-p0-h0", (0, 10), false, 0.0);
        s.dram_reads.insert(PhysicalId::from("dram0"), 500.0);
        s.dram_reads.insert(PhysicalId::from("dram1"), 100.0);
        let local = topo.entity(&PhysicalId::from("dram0")).unwrap();
        let remote = topo.entity(&PhysicalId::from("dram1")).unwrap();
        assert_eq!(dram_work(&s, local, &topo, &params).unwrap(), 500.0);
        assert!((dram_work(&s, remote, &topo, &params).unwrap() - 967.0).abs() < 1e-9);
    }

    #[test]
    fn dram_work_zero_reads_and_unknown_node() {
        let topo = synthetic_topology(1, 1, 1);
        let params = ModelParams::<f64>::default();
        let s = sub("t1", "core-s0-p0-h0", (0, 10), false, 0.0);
        let dram = topo.entity(&PhysicalId::from("dram0")).unwrap();
        assert_eq!(dram_work(&s, dram, &topo, &params).unwrap(), 0.0);

        let mut bad = s.clone();
        bad.dram_reads.insert(PhysicalId::from("dram9"), 5.0);
        assert!(matches!(
            dram_work(&bad, dram, &topo, &params),
            Err(AttributionError::UnknownComponent(_))
        ));
    }

    #[test]
    fn sole_thread_receives_all_active_energy() {
        let topo = synthetic_topology(1, 1, 1);
        let params = ModelParams::<f64>::default();
        let subs = vec![sub("t1", "core-s0-p0-h0", (0, NS_PER_SEC), false, 100.0)];
        let window = window_with("pkg0", 50.0, 10.0);
        let att = attribute_active(&subs, &window, &topo, &params).unwrap();
        let j = att.per_thread[&LogicalId::from("t1")][&PhysicalId::from("pkg0")];
        assert!((j - 40.0).abs() < 1e-12);
        assert!(att.unattributed.is_empty());
    }

    #[test]
    fn two_threads_split_forty_watts_by_work_ratio() {
        // 40 W active over 1 s, work ratio 10:20 -> 13.3 J and 26.7 J.
        let topo = synthetic_topology(1, 1, 2);
        let params = ModelParams::<f64>::default();
        let subs = vec![
            sub("tA", "core-s0-p0-h0", (0, NS_PER_SEC), false, 10.0),
            sub("tB", "core-s0-p0-h1", (0, NS_PER_SEC), false, 20.0),
        ];
        let window = window_with("pkg0", 50.0, 10.0);
        let att = attribute_active(&subs, &window, &topo, &params).unwrap();
        let a = att.per_thread[&LogicalId::from("tA")][&PhysicalId::from("pkg0")];
        let b = att.per_thread[&LogicalId::from("tB")][&PhysicalId::from("pkg0")];
        assert!((a - 40.0 / 3.0).abs() < 1e-9);
        assert!((b - 80.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_work_with_active_energy_is_reported() {
        let topo = synthetic_topology(1, 1, 1);
        let params = ModelParams::<f64>::default();
        let window = window_with("pkg0", 50.0, 10.0);
        let att = attribute_active(&[], &window, &topo, &params).unwrap();
        assert_eq!(att.unattributed.len(), 1);
        assert_eq!(att.unattributed[0].joules, 40.0);
    }

    #[test]
    fn cpu_idle_follows_time_share() {
        let topo = synthetic_topology(1, 1, 2);
        let subs = vec![
            sub("tA", "core-s0-p0-h0", (0, 250_000_000), false, 1.0),
            sub("tB", "core-s0-p0-h1", (0, 750_000_000), false, 1.0),
        ];
        let window = window_with("pkg0", 50.0, 10.0);
        let idle = attribute_idle(&subs, &window, &topo).unwrap();
        let a = idle.per_thread[&LogicalId::from("tA")][&PhysicalId::from("pkg0")];
        let b = idle.per_thread[&LogicalId::from("tB")][&PhysicalId::from("pkg0")];
        assert!((a - 2.5).abs() < 1e-12);
        assert!((b - 7.5).abs() < 1e-12);
    }

    #[test]
    fn sole_occupant_receives_all_package_idle() {
        let topo = synthetic_topology(1, 1, 1);
        let subs = vec![sub("t1", "core-s0-p0-h0", (0, NS_PER_SEC), false, 1.0)];
        let window = window_with("pkg0", 50.0, 10.0);
        let idle = attribute_idle(&subs, &window, &topo).unwrap();
        let j = idle.per_thread[&LogicalId::from("t1")][&PhysicalId::from("pkg0")];
        assert!((j - 10.0).abs() < 1e-12);
    }

    #[test]
    fn dram_idle_splits_equally_between_reading_threads() {
        let topo = synthetic_topology(1, 1, 2);
        let mut a = sub("tA", "core-s0-p0-h0", (0, NS_PER_SEC), false, 0.0);
        a.dram_reads.insert(PhysicalId::from("dram0"), 10.0);
        let mut b = sub("tB", "core-s0-p0-h1", (0, NS_PER_SEC), false, 0.0);
        b.dram_reads.insert(PhysicalId::from("dram0"), 20.0);
        let window = window_with("dram0", 50.0, 10.0);
        let idle = attribute_idle(&[a, b], &window, &topo).unwrap();
        let ja = idle.per_thread[&LogicalId::from("tA")][&PhysicalId::from("dram0")];
        let jb = idle.per_thread[&LogicalId::from("tB")][&PhysicalId::from("dram0")];
        assert_eq!(ja, 5.0);
        assert_eq!(jb, 5.0);
    }

    #[test]
    fn compute_window_clamps_cold_windows() {
        // readings 100 -> 220 J over 60 s with 2.5 W idle: calibration
        // exceeds the measured total, so active clamps to 0.
        let component = PhysicalId::from("pkg0");
        let samples = vec![
            Measurement {
                physical_entity_id: component.clone(),
                metric: MetricName::EnergyTotalJ,
                logical_entity_id: None,
                t_start: 0,
                t_stop: 0,
                value: 100.0,
            },
            Measurement {
                physical_entity_id: component.clone(),
                metric: MetricName::EnergyTotalJ,
                logical_entity_id: None,
                t_start: 60 * NS_PER_SEC,
                t_stop: 60 * NS_PER_SEC,
                value: 220.0,
            },
        ];
        let idle: BTreeMap<PhysicalId, f64> = [(component.clone(), 2.5)].into();
        let w: Window<f64> = compute_window(&samples, &idle, 0, 60 * NS_PER_SEC).unwrap();
        let e = &w.component_energy[&component];
        assert_eq!(e.total_j, 120.0);
        assert_eq!(e.idle_j, 150.0);
        assert_eq!(e.active_j, 0.0);
        assert!(e.clamped);

        // An exactly-zero active part is not a clamp.
        let idle: BTreeMap<PhysicalId, f64> = [(component.clone(), 2.0)].into();
        let w: Window<f64> = compute_window(&samples, &idle, 0, 60 * NS_PER_SEC).unwrap();
        let e = &w.component_energy[&component];
        assert_eq!(e.active_j, 0.0);
        assert!(!e.clamped);
    }

    #[test]
    fn compute_window_fifty_minus_ten() {
        // readings 0 -> 50 J over 1 s with 10 W idle -> 40 J active.
        let component = PhysicalId::from("pkg0");
        let mk = |t, v| Measurement {
            physical_entity_id: component.clone(),
            metric: MetricName::EnergyTotalJ,
            logical_entity_id: None,
            t_start: t,
            t_stop: t,
            value: v,
        };
        let samples = vec![mk(0, 0.0), mk(NS_PER_SEC, 50.0)];
        let idle: BTreeMap<PhysicalId, f64> = [(component.clone(), 10.0)].into();
        let w: Window<f64> = compute_window(&samples, &idle, 0, NS_PER_SEC).unwrap();
        let e = &w.component_energy[&component];
        assert_eq!(e.active_j, 40.0);
        assert!(!e.clamped);
    }

    #[test]
    fn compute_window_interpolates_and_rejects_regression() {
        let component = PhysicalId::from("pkg0");
        let mk = |t, v| Measurement {
            physical_entity_id: component.clone(),
            metric: MetricName::EnergyTotalJ,
            logical_entity_id: None,
            t_start: t,
            t_stop: t,
            value: v,
        };
        let samples = vec![mk(0, 0.0), mk(2 * NS_PER_SEC, 100.0)];
        let idle: BTreeMap<PhysicalId, f64> = [(component.clone(), 0.0)].into();
        let w: Window<f64> = compute_window(&samples, &idle, 0, NS_PER_SEC).unwrap();
        assert_eq!(w.component_energy[&component].total_j, 50.0);

        let bad = vec![mk(0, 10.0), mk(NS_PER_SEC, 5.0)];
        assert!(matches!(
            compute_window::<f64>(&bad, &idle, 0, NS_PER_SEC),
            Err(AttributionError::CounterRegression { .. })
        ));
    }

    #[test]
    fn aggregate_sums_threads_into_applications() {
        let topo = synthetic_topology(1, 1, 2);
        let registry = LogicalRegistry::new(vec![
            crate::model::LogicalEntity {
                id: LogicalId::from("app1"),
                kind: crate::model::LogicalKind::Application,
                parent_id: None,
                name: "app1".into(),
            },
            crate::model::LogicalEntity {
                id: LogicalId::from("t1"),
                kind: crate::model::LogicalKind::Thread,
                parent_id: Some(LogicalId::from("app1")),
                name: "t1".into(),
            },
            crate::model::LogicalEntity {
                id: LogicalId::from("t2"),
                kind: crate::model::LogicalKind::Thread,
                parent_id: Some(LogicalId::from("app1")),
                name: "t2".into(),
            },
        ]);
        let params = ModelParams::<f64>::default();
        let subs = vec![
            sub("t1", "core-s0-p0-h0", (0, NS_PER_SEC), false, 1.0),
            sub("t2", "core-s0-p0-h1", (0, NS_PER_SEC), false, 2.0),
        ];
        let window = window_with("pkg0", 3.0, 0.0);
        let active = attribute_active(&subs, &window, &topo, &params).unwrap();
        let idle = attribute_idle(&subs, &window, &topo).unwrap();
        let report = aggregate(&active, &idle, &window, &registry).unwrap();
        let app = &report.per_application[&LogicalId::from("app1")][&PhysicalId::from("pkg0")];
        assert!((app.active_j - 3.0).abs() < 1e-12);
    }

    #[test]
    fn orphan_thread_is_an_error() {
        let topo = synthetic_topology(1, 1, 1);
        let registry = LogicalRegistry::default();
        let params = ModelParams::<f64>::default();
        let subs = vec![sub("t1", "core-s0-p0-h0", (0, NS_PER_SEC), false, 1.0)];
        let window = window_with("pkg0", 3.0, 0.0);
        let active = attribute_active(&subs, &window, &topo, &params).unwrap();
        let idle = attribute_idle(&subs, &window, &topo).unwrap();
        assert!(matches!(
            aggregate(&active, &idle, &window, &registry),
            Err(AttributionError::OrphanThread(_))
        ));
    }
}
