//! End-to-end attribution: parsed trace in, per-window reports out.
//!
//! Windows tile the span where every component has sensor coverage. Each
//! window is attributed independently (and can be computed in parallel by
//! callers); results are always assembled in window order so output is
//! deterministic. Every window is conservation-checked before it is
//! accepted: attributed plus unattributed energy must match the measured
//! active and idle energy of each component.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::attribution::{
    attribute_active, attribute_idle, aggregate, clip_to_window, compute_window,
    AttributionError, AttributionReport, EnergyShare, ModelParams, UnattributedEnergy,
};
use crate::ingestion::ParsedTrace;
use crate::interval::{build_intervals, split_smt, IntervalError, SubInterval};
use crate::model::{
    LogicalId, LogicalRegistry, Measurement, MetricName, Ns, PhysicalId, Topology,
};
use crate::scalar::Scalar;

/// Relative tolerance for the per-window conservation self-check.
pub const CONSERVATION_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no energy samples for component {0}")]
    NoCoverage(PhysicalId),
    #[error("sensor coverage of the components does not overlap")]
    EmptyCoverage,
    #[error("window_ns must be positive")]
    ZeroWindow,
    #[error(
        "conservation violated for {component} in window [{t_start},{t_stop}): \
         attributed {attributed} J vs measured {measured} J ({kind})"
    )]
    Conservation {
        component: PhysicalId,
        t_start: Ns,
        t_stop: Ns,
        attributed: f64,
        measured: f64,
        kind: &'static str,
    },
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

/// Trace state shared by all windows: SMT-split sub-intervals, sensor
/// samples, calibration and registry.
pub struct PreparedTrace {
    pub topology: Topology,
    pub registry: LogicalRegistry,
    pub idle_power: BTreeMap<PhysicalId, f64>,
    pub energy_samples: Vec<Measurement>,
    pub subs: Vec<SubInterval>,
}

pub fn prepare(parsed: &ParsedTrace) -> Result<PreparedTrace, PipelineError> {
    let intervals = build_intervals(&parsed.measurements, &parsed.topology)?;
    let subs = split_smt(&intervals, &parsed.topology)?;
    let energy_samples = parsed
        .measurements
        .iter()
        .filter(|m| m.metric == MetricName::EnergyTotalJ)
        .cloned()
        .collect();
    Ok(PreparedTrace {
        topology: parsed.topology.clone(),
        registry: parsed.registry.clone(),
        idle_power: parsed.idle_power.clone(),
        energy_samples,
        subs,
    })
}

/// The span where every package and DRAM node has cumulative samples, i.e.
/// the intersection of per-component `[first, last]` sample ranges.
pub fn coverage(prepared: &PreparedTrace) -> Result<(Ns, Ns), PipelineError> {
    let mut t0: Ns = 0;
    let mut t1: Ns = Ns::MAX;
    let components = prepared
        .topology
        .packages()
        .chain(prepared.topology.dram_nodes());
    for component in components {
        let mut first = None;
        let mut last = None;
        for m in &prepared.energy_samples {
            if m.physical_entity_id != component.id {
                continue;
            }
            first = Some(first.map_or(m.t_start, |f: Ns| f.min(m.t_start)));
            last = Some(last.map_or(m.t_start, |l: Ns| l.max(m.t_start)));
        }
        match (first, last) {
            (Some(f), Some(l)) => {
                t0 = t0.max(f);
                t1 = t1.min(l);
            }
            _ => return Err(PipelineError::NoCoverage(component.id.clone())),
        }
    }
    if t0 >= t1 {
        return Err(PipelineError::EmptyCoverage);
    }
    Ok((t0, t1))
}

/// Tiles `[t0, t1)` into windows of `window_ns`; the last window is clipped
/// to the coverage end and flagged partial if shorter.
pub fn window_spans(t0: Ns, t1: Ns, window_ns: Ns) -> Result<Vec<(Ns, Ns, bool)>, PipelineError> {
    if window_ns == 0 {
        return Err(PipelineError::ZeroWindow);
    }
    let mut spans = Vec::new();
    let mut start = t0;
    while start < t1 {
        let stop = start.saturating_add(window_ns).min(t1);
        spans.push((start, stop, stop - start < window_ns));
        start = stop;
    }
    Ok(spans)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn check_conservation<R: Scalar>(
    report: &AttributionReport<R>,
    unattributed_active: &[UnattributedEnergy<R>],
    unattributed_idle: &[UnattributedEnergy<R>],
) -> Result<(), PipelineError> {
    for (component, energy) in &report.component_energy {
        let sum_of = |field: fn(&EnergyShare<R>) -> &R, extra: &[UnattributedEnergy<R>]| -> f64 {
            let threads = report
                .per_thread
                .values()
                .filter_map(|comps| comps.get(component))
                .map(|share| field(share).clone());
            let residual = extra
                .iter()
                .filter(|u| &u.component_id == component)
                .map(|u| u.joules.clone());
            R::accumulate(threads.chain(residual)).to_f64()
        };
        let checks = [
            ("active", sum_of(|s| &s.active_j, unattributed_active), energy.active_j.to_f64()),
            ("idle", sum_of(|s| &s.idle_j, unattributed_idle), energy.idle_j.to_f64()),
        ];
        for (kind, attributed, measured) in checks {
            // Sub-picojoule residues are float dust from total - idle, not
            // unconserved energy.
            if (attributed - measured).abs() <= 1e-12 {
                continue;
            }
            if rel_err(attributed, measured) > CONSERVATION_REL_TOL {
                return Err(PipelineError::Conservation {
                    component: component.clone(),
                    t_start: report.t_start,
                    t_stop: report.t_stop,
                    attributed,
                    measured,
                    kind,
                });
            }
        }
    }
    Ok(())
}

/// Attributes one window and verifies conservation.
pub fn attribute_window<R: Scalar>(
    prepared: &PreparedTrace,
    t_start: Ns,
    t_stop: Ns,
    params: &ModelParams<R>,
) -> Result<AttributionReport<R>, PipelineError> {
    let window = compute_window::<R>(&prepared.energy_samples, &prepared.idle_power, t_start, t_stop)?;
    let subs = clip_to_window::<R>(&prepared.subs, t_start, t_stop);
    let active = attribute_active(&subs, &window, &prepared.topology, params)?;
    let idle = attribute_idle(&subs, &window, &prepared.topology)?;
    let report = aggregate(&active, &idle, &window, &prepared.registry)?;
    check_conservation(&report, &active.unattributed, &idle.unattributed)?;
    Ok(report)
}

/// Full trace attribution result.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceReport<R> {
    pub t_start: Ns,
    pub t_stop: Ns,
    pub window_ns: Ns,
    pub partial_last_window: bool,
    pub windows: Vec<AttributionReport<R>>,
    /// Window sums per thread and component.
    pub thread_totals: ShareMap<R>,
    /// Window sums per application and component.
    pub application_totals: ShareMap<R>,
}

/// Owner (thread or application) -> component -> energy share.
pub type ShareMap<R> = BTreeMap<LogicalId, BTreeMap<PhysicalId, EnergyShare<R>>>;

fn sum_shares<R: Scalar>(
    windows: &[AttributionReport<R>],
    pick: fn(&AttributionReport<R>) -> &ShareMap<R>,
) -> ShareMap<R> {
    let mut totals: ShareMap<R> = BTreeMap::new();
    for report in windows {
        for (owner, comps) in pick(report) {
            let entry = totals.entry(owner.clone()).or_default();
            for (comp, share) in comps {
                let slot = entry.entry(comp.clone()).or_insert_with(EnergyShare::zero);
                slot.active_j = slot.active_j.clone() + share.active_j.clone();
                slot.idle_j = slot.idle_j.clone() + share.idle_j.clone();
            }
        }
    }
    totals
}

/// Assembles per-window reports (already in window order) into a trace
/// report with cross-window totals.
pub fn assemble<R: Scalar>(
    window_ns: Ns,
    spans: &[(Ns, Ns, bool)],
    windows: Vec<AttributionReport<R>>,
) -> TraceReport<R> {
    let t_start = spans.first().map(|s| s.0).unwrap_or(0);
    let t_stop = spans.last().map(|s| s.1).unwrap_or(0);
    let partial = spans.last().map(|s| s.2).unwrap_or(false);
    let thread_totals = sum_shares(&windows, |r| &r.per_thread);
    let application_totals = sum_shares(&windows, |r| &r.per_application);
    TraceReport {
        t_start,
        t_stop,
        window_ns,
        partial_last_window: partial,
        windows,
        thread_totals,
        application_totals,
    }
}

/// Serial end-to-end attribution of a parsed trace.
pub fn attribute_trace<R: Scalar>(
    parsed: &ParsedTrace,
    window_ns: Ns,
    params: &ModelParams<R>,
) -> Result<TraceReport<R>, PipelineError> {
    let prepared = prepare(parsed)?;
    let (t0, t1) = coverage(&prepared)?;
    let spans = window_spans(t0, t1, window_ns)?;
    let windows = spans
        .iter()
        .map(|&(a, b, _)| attribute_window(&prepared, a, b, params))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(window_ns, &spans, windows))
}

/// Rounds to six significant digits via decimal scientific notation, so
/// rendered reports are stable across runs and platforms.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("round-trip of finite f64")
}

fn render_joules<R: Scalar>(x: &R, raw: bool) -> Value {
    let v = x.to_f64();
    json!(if raw { v } else { round_sig(v) })
}

fn render_shares<R: Scalar>(
    shares: &BTreeMap<LogicalId, BTreeMap<PhysicalId, EnergyShare<R>>>,
    raw: bool,
) -> Value {
    let mut owners = Map::new();
    for (owner, comps) in shares {
        let mut per_comp = Map::new();
        for (comp, share) in comps {
            per_comp.insert(
                comp.as_str().to_owned(),
                json!({
                    "active_j": render_joules(&share.active_j, raw),
                    "idle_j": render_joules(&share.idle_j, raw),
                    "total_j": render_joules(&share.total(), raw),
                }),
            );
        }
        owners.insert(owner.as_str().to_owned(), Value::Object(per_comp));
    }
    Value::Object(owners)
}

fn render_unattributed<R: Scalar>(list: &[UnattributedEnergy<R>], raw: bool) -> Value {
    let mut map = Map::new();
    for u in list {
        map.insert(
            u.component_id.as_str().to_owned(),
            render_joules(&u.joules, raw),
        );
    }
    Value::Object(map)
}

/// Renders a trace report as the stable JSON document described by
/// `schemas/report.schema.json`. Keys are sorted and, unless `raw`, values
/// are rounded to six significant digits.
pub fn render_report<R: Scalar>(report: &TraceReport<R>, raw: bool) -> Value {
    let windows: Vec<Value> = report
        .windows
        .iter()
        .map(|w| {
            let mut components = Map::new();
            for (comp, energy) in &w.component_energy {
                components.insert(
                    comp.as_str().to_owned(),
                    json!({
                        "total_j": render_joules(&energy.total_j, raw),
                        "idle_j": render_joules(&energy.idle_j, raw),
                        "active_j": render_joules(&energy.active_j, raw),
                        "clamped": energy.clamped,
                    }),
                );
            }
            json!({
                "t_start_ns": w.t_start,
                "t_stop_ns": w.t_stop,
                "components": Value::Object(components),
                "threads": render_shares(&w.per_thread, raw),
                "applications": render_shares(&w.per_application, raw),
                "unattributed": {
                    "active": render_unattributed(&w.unattributed_active, raw),
                    "idle": render_unattributed(&w.unattributed_idle, raw),
                },
            })
        })
        .collect();
    json!({
        "t_start_ns": report.t_start,
        "t_stop_ns": report.t_stop,
        "window_ns": report.window_ns,
        "partial_last_window": report.partial_last_window,
        "windows": windows,
        "totals": {
            "threads": render_shares(&report.thread_totals, raw),
            "applications": render_shares(&report.application_totals, raw),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::parse_trace;
    use crate::simulator::{simulate, Archetype};

    #[test]
    fn window_spans_tile_exactly() {
        let spans = window_spans(0, 1000, 300).unwrap();
        assert_eq!(
            spans,
            vec![(0, 300, false), (300, 600, false), (600, 900, false), (900, 1000, true)]
        );
        // Exact multiple: no partial window.
        let spans = window_spans(100, 700, 300).unwrap();
        assert_eq!(spans, vec![(100, 400, false), (400, 700, false)]);
        assert!(matches!(window_spans(0, 10, 0), Err(PipelineError::ZeroWindow)));
    }

    #[test]
    fn coverage_is_component_intersection() {
        let out = simulate(&Archetype::CpuHeavy.config(1, 0.0)).unwrap();
        let parsed = parse_trace(out.trace.as_slice()).unwrap();
        let prepared = prepare(&parsed).unwrap();
        let (t0, t1) = coverage(&prepared).unwrap();
        assert_eq!(t0, 0);
        assert_eq!(t1, 1_000_000_000);
    }

    #[test]
    fn attribute_trace_conserves_and_totals_add_up() {
        let out = simulate(&Archetype::Combined.config(11, 0.0)).unwrap();
        let parsed = parse_trace(out.trace.as_slice()).unwrap();
        let report =
            attribute_trace::<f64>(&parsed, 250_000_000, &ModelParams::default()).unwrap();
        assert_eq!(report.windows.len(), 4);
        assert!(!report.partial_last_window);
        // Cross-window totals equal the sum of window entries.
        for (thread, comps) in &report.thread_totals {
            for (comp, share) in comps {
                let direct: f64 = report
                    .windows
                    .iter()
                    .filter_map(|w| w.per_thread.get(thread).and_then(|c| c.get(comp)))
                    .map(|s| s.active_j)
                    .sum();
                assert!((share.active_j - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rendered_report_is_deterministic_and_rounded() {
        let out = simulate(&Archetype::DramHeavy.config(5, 0.0)).unwrap();
        let parsed = parse_trace(out.trace.as_slice()).unwrap();
        let report =
            attribute_trace::<f64>(&parsed, 500_000_000, &ModelParams::default()).unwrap();
        let a = serde_json::to_string_pretty(&render_report(&report, false)).unwrap();
        let b = serde_json::to_string_pretty(&render_report(&report, false)).unwrap();
        assert_eq!(a, b);
        assert!(round_sig(1.2345678).to_string().len() <= 8);
        assert_eq!(round_sig(123456.789), 123457.0);
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn conservation_failure_is_reported() {
        // A tampered report must fail the self-check.
        let out = simulate(&Archetype::CpuHeavy.config(2, 0.0)).unwrap();
        let parsed = parse_trace(out.trace.as_slice()).unwrap();
        let prepared = prepare(&parsed).unwrap();
        let mut report =
            attribute_window::<f64>(&prepared, 0, 250_000_000, &ModelParams::default()).unwrap();
        let thread = report.per_thread.keys().next().unwrap().clone();
        let comp = report.per_thread[&thread].keys().next().unwrap().clone();
        report.per_thread.get_mut(&thread).unwrap().get_mut(&comp).unwrap().active_j *= 2.0;
        assert!(matches!(
            check_conservation(&report, &report.unattributed_active, &report.unattributed_idle),
            Err(PipelineError::Conservation { .. })
        ));
    }
}
