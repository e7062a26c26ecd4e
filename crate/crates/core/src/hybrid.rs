//! Hybrid runner: full model through the initial transient, QSS while it
//! stays trustworthy, and the full model again (from a rolled-back
//! checkpoint) once it is not.
//!
//! After each discrete jump the OXL states reached by one full-model step
//! from the pre-jump point are compared with those of the QSS post-jump
//! point. Once all timers have settled, excited limiters are probed with a
//! short full-model run to see whether their oscillations die out.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::dae::{run_session, IntegratorConfig};
use crate::devices::CLAMP_BAND;
use crate::engine::{EventKind, Fidelity, Session, SessionConfig, Stepper};
use crate::error::{SimError, SimResult};
use crate::model::{inf_norm, SimState, SystemModel};
use crate::qss::{solve_fast_equilibrium, FastSolveOptions, QssConfig};
use crate::scenario::{Outcome, ScheduledEvent, StudyRegion, SwitchBackRecord, SwitchReason, VerdictReport};
use crate::solver::NewtonConfig;
use crate::stability::{assess_damping, DampingStatus, DampingVerdict};
use crate::trace::{Status, Trace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridParams {
    /// Length of the initial full-model phase.
    pub tau1: f64,
    /// Threshold on the OXL state distance after a jump.
    pub eta: f64,
    /// Full-model steps in a damping probe; doubled once if inconclusive.
    pub probe_steps: usize,
    pub dt_full: f64,
    pub dt_qss: f64,
    pub newton: NewtonConfig,
    pub bounds: StudyRegion,
    /// Trailing window used to judge damping at the end of a run.
    pub tail_window: f64,
    /// The damping probe waits until the QSS slow-state rates fall below
    /// this (or the horizon is reached).
    pub settle_rate: f64,
}

impl Default for HybridParams {
    fn default() -> Self {
        Self {
            tau1: 20.0,
            eta: 1e-3,
            probe_steps: 200,
            dt_full: 0.01,
            dt_qss: 0.1,
            newton: NewtonConfig::default(),
            bounds: StudyRegion::default(),
            tail_window: 60.0,
            settle_rate: 1e-4,
        }
    }
}

impl HybridParams {
    pub fn full(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt_full,
            newton: self.newton,
            freeze_slow: false,
            bounds: self.bounds,
        }
    }

    pub fn qss(&self) -> QssConfig {
        QssConfig {
            dt: self.dt_qss,
            newton: self.newton,
            bounds: self.bounds,
            track_singularity: false,
        }
    }

    fn full_session(&self) -> SessionConfig {
        self.full().session()
    }
}

/// Pre-jump points recorded during the QSS phase, keyed by the jump count
/// they were taken at, plus the point where QSS started.
#[derive(Debug, Clone, Default)]
pub struct CheckpointStore {
    start: Option<SimState>,
    labelled: BTreeMap<u32, SimState>,
}

impl CheckpointStore {
    pub fn new(start: SimState) -> Self {
        Self {
            start: Some(start),
            labelled: BTreeMap::new(),
        }
    }

    pub fn start(&self) -> Option<&SimState> {
        self.start.as_ref()
    }

    /// Stores the point just before jump `label + 1`.
    pub fn record(&mut self, label: u32, st: SimState) {
        self.labelled.insert(label, st);
    }

    pub fn get(&self, label: u32) -> Option<&SimState> {
        self.labelled.get(&label)
    }

    pub fn len(&self) -> usize {
        self.labelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labelled.is_empty()
    }
}

/// Where the full model restarts after a trigger at jump `k`: the QSS
/// start point for `k <= 2`, otherwise the point before jump `k - 2`.
pub fn select_rollback_point(store: &CheckpointStore, k: u32) -> Option<&SimState> {
    if k <= 2 {
        return store.start();
    }
    store.get(k - 3).or_else(|| store.start())
}

/// One full-model step of `dt` from the pre-jump continuous states with
/// the discrete states (and clocks, grid) of the QSS post-jump point.
pub fn approximate_post_jump_point(model: &SystemModel, pre_jump: &SimState, post_jump: &SimState, dt: f64, newton: &NewtonConfig) -> SimResult<SimState> {
    let mut mixed = pre_jump.clone();
    mixed.part.z_d = post_jump.part.z_d.clone();
    mixed.grid = post_jump.grid.clone();
    mixed.clocks = post_jump.clocks.clone();
    mixed.k = post_jump.k;
    let mut stepper = Stepper::new(*newton);
    crate::dae::step_full_model(model, &mixed, dt, &mut stepper)
}

/// Infinity-norm distance between the OXL states of two points.
pub fn check_oxl_deviation(model: &SystemModel, a: &SimState, b: &SimState) -> f64 {
    model
        .oxl_slice(&a.part)
        .iter()
        .zip(model.oxl_slice(&b.part))
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
}

/// The switch-back test on a jump. Strict, so a distance of exactly `eta`
/// keeps the QSS run going.
pub fn deviation_exceeds(distance: f64, eta: f64) -> bool {
    distance > eta
}

/// Limiters that are latched or still carry a nonzero output.
pub fn excited_limiters(model: &SystemModel, st: &SimState) -> Vec<usize> {
    let v = model.oxl_slice(&st.part);
    (0..model.oxls.len())
        .filter(|&o| st.clocks.oxl[o].active || v[o] > CLAMP_BAND)
        .collect()
}

/// Signals judged for damping: output and field current of each
/// listed limiter.
pub fn limiter_signals(model: &SystemModel, trace: &Trace, limiters: &[usize], from: usize) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for &o in limiters {
        let ob = &model.oxls[o];
        let lay = &model.layout;
        let idx = lay.oxl(o);
        out.push((
            format!("oxl.{}.v_oxl", ob.params.generator),
            trace.samples[from..].iter().map(|s| s.part.z_c[idx]).collect(),
        ));
        out.push((
            format!("gen.{}.i_f", ob.params.generator),
            trace.samples[from..]
                .iter()
                .map(|s| model.field_currents(&s.part.gather())[ob.gen])
                .collect(),
        ));
    }
    out
}

/// Runs the full model for `steps` samples (then as many again if the
/// result is inconclusive) from `st` and judges the limiter oscillations.
pub fn damping_probe(model: &SystemModel, st: &SimState, schedule: &[ScheduledEvent], params: &HybridParams) -> DampingVerdict {
    let limiters = excited_limiters(model, st);
    let undamped = || DampingVerdict {
        status: DampingStatus::UndampedOrGrowing,
        signals: Vec::new(),
    };
    let (mut s, rep) = match Session::resume(model, schedule, Fidelity::Full, params.full_session(), st.clone()) {
        Ok(x) => x,
        Err(_) => return undamped(),
    };
    let mut trace = Trace::new();
    trace.push(s.state.t, &s.state.part, Fidelity::Full, s.state.k, rep.events);
    let mut verdict = undamped();
    for round in 0..2 {
        for _ in 0..params.probe_steps {
            match s.advance() {
                Ok(rep) if rep.violation.is_none() => {
                    trace.push(s.state.t, &s.state.part, Fidelity::Full, s.state.k, []);
                }
                _ => return undamped(),
            }
        }
        verdict = assess_damping(&limiter_signals(model, &trace, &limiters, 0));
        if verdict.status != DampingStatus::Inconclusive || round == 1 {
            break;
        }
    }
    verdict
}

#[derive(Debug, Clone)]
pub struct HybridOutcome {
    pub trace: Trace,
    pub verdict: VerdictReport,
    /// The QSS trajectory as it stood when a switch-back discarded it.
    pub discarded_qss: Option<Trace>,
}

/// Verdict for a finished trajectory: any early stop is instability,
/// otherwise undamped limiter oscillations in the trailing window make it
/// oscillatory.
pub fn judge_trace(model: &SystemModel, trace: &Trace, tail_window: f64) -> Outcome {
    if !trace.status.is_completed() {
        return Outcome::Unstable;
    }
    let Some(last) = trace.last() else {
        return Outcome::Unstable;
    };
    if last.fidelity == Fidelity::Qss {
        return Outcome::LongTermStable;
    }
    let t0 = last.t - tail_window;
    let from = trace.samples.iter().position(|s| s.t >= t0).unwrap_or(0);
    // a limiter counts if it carried output anywhere in the window
    let mut limiters = Vec::new();
    for o in 0..model.oxls.len() {
        let idx = model.layout.oxl(o);
        if trace.samples[from..].iter().any(|s| s.part.z_c[idx] > CLAMP_BAND) {
            limiters.push(o);
        }
    }
    match assess_damping(&limiter_signals(model, trace, &limiters, from)).status {
        DampingStatus::Damped => Outcome::LongTermStable,
        _ => Outcome::Oscillatory,
    }
}

fn report(model: &SystemModel, mode: &str, trace: &Trace, switch_backs: Vec<SwitchBackRecord>, outcome: Outcome, wall: BTreeMap<String, f64>) -> VerdictReport {
    VerdictReport {
        case: model.case.name.clone(),
        mode: mode.to_string(),
        outcome,
        termination: trace.status.termination(),
        t_final: trace.t_final(),
        jumps: trace.jumps(),
        switch_backs,
        final_model: trace.last().map_or("full", |s| s.fidelity.name()).to_string(),
        wall_clock: wall,
    }
}

/// Full model from `start` to `t_end` with its verdict.
pub fn run_full(model: &SystemModel, start: &SimState, schedule: &[ScheduledEvent], params: &HybridParams, t_end: f64) -> HybridOutcome {
    let clock = Instant::now();
    let trace = crate::dae::simulate_full(model, start, schedule, &params.full(), t_end);
    let wall = BTreeMap::from([("full".to_string(), clock.elapsed().as_secs_f64())]);
    let outcome = judge_trace(model, &trace, params.tail_window);
    let verdict = report(model, "full", &trace, Vec::new(), outcome, wall);
    HybridOutcome {
        trace,
        verdict,
        discarded_qss: None,
    }
}

/// Full model up to `tau1`, then the QSS model to `t_end`.
pub fn run_qss(model: &SystemModel, start: &SimState, schedule: &[ScheduledEvent], params: &HybridParams, t_end: f64) -> HybridOutcome {
    let mut wall = BTreeMap::new();
    let clock = Instant::now();
    let (mut trace, session) = warm_up(model, start, schedule, params, t_end);
    wall.insert("full".to_string(), clock.elapsed().as_secs_f64());
    if let Some(full) = session {
        let clock = Instant::now();
        match enter_qss(model, &full.state, schedule, params, &mut trace) {
            Ok(mut q) => run_session(&mut q, &mut trace, t_end),
            Err(e) => trace.status = Status::Singularity(e.to_string()),
        }
        wall.insert("qss".to_string(), clock.elapsed().as_secs_f64());
    }
    let outcome = if trace.status.is_completed() {
        Outcome::LongTermStable
    } else {
        Outcome::Unstable
    };
    let verdict = report(model, "qss", &trace, Vec::new(), outcome, wall);
    HybridOutcome {
        trace,
        verdict,
        discarded_qss: None,
    }
}

/// Runs the full model to `tau1`. Returns the session only if it is
/// still running and there is time left.
fn warm_up<'m>(model: &'m SystemModel, start: &SimState, schedule: &[ScheduledEvent], params: &HybridParams, t_end: f64) -> (Trace, Option<Session<'m>>) {
    let mut trace = Trace::new();
    let cfg = params.full_session();
    let (mut s, rep) = match Session::begin(model, schedule, Fidelity::Full, cfg, start.clone()) {
        Ok(x) => x,
        Err(e) => {
            trace.push(start.t, &start.part, Fidelity::Full, start.k, []);
            trace.status = Status::NewtonFailure(e.to_string());
            return (trace, None);
        }
    };
    trace.push(s.state.t, &s.state.part, Fidelity::Full, s.state.k, rep.events);
    if let Some(v) = rep.violation {
        trace.status = Status::ShortTermUnstable(v);
        return (trace, None);
    }
    run_session(&mut s, &mut trace, params.tau1.min(t_end));
    let running = trace.status.is_completed() && s.next_t() <= t_end + 1e-9;
    (trace, running.then_some(s))
}

/// Projects onto the manifold and opens a QSS session there. The last
/// trace sample is replaced by the projected point.
fn enter_qss<'m>(model: &'m SystemModel, st: &SimState, schedule: &[ScheduledEvent], params: &HybridParams, trace: &mut Trace) -> SimResult<Session<'m>> {
    let p = solve_fast_equilibrium(model, st, FastSolveOptions::default(), &params.newton)?;
    let (q, rep) = Session::resume(model, schedule, Fidelity::Qss, params.qss().session(), p.state)?;
    if let Some(v) = rep.violation {
        return Err(SimError::ManifoldSolve(v));
    }
    if let Some(last) = trace.samples.last_mut() {
        last.part = q.state.part.clone();
        last.fidelity = Fidelity::Qss;
        last.k = q.state.k;
    }
    trace.annotate(EventKind::ModeSwitch { to: Fidelity::Qss });
    for e in rep.events {
        trace.annotate(e);
    }
    Ok(q)
}

struct Trigger {
    k: u32,
    reason: SwitchReason,
    t: f64,
    distance: Option<f64>,
}

/// The hybrid run from `start` to `t_end`.
pub fn run_hybrid(model: &SystemModel, start: &SimState, schedule: &[ScheduledEvent], params: &HybridParams, t_end: f64) -> HybridOutcome {
    let mut wall = BTreeMap::new();
    let clock = Instant::now();
    let (mut trace, session) = warm_up(model, start, schedule, params, t_end);
    let mut full_secs = clock.elapsed().as_secs_f64();
    let mut switch_backs = Vec::new();
    let mut discarded = None;

    if let Some(full) = session {
        let clock = Instant::now();
        let mut probe_secs = 0.0;
        let mut store = CheckpointStore::new(full.state.clone());
        let trigger = match enter_qss(model, &full.state, schedule, params, &mut trace) {
            Err(_) => Some(Trigger {
                k: full.state.k + 1,
                reason: SwitchReason::QssFailure,
                t: full.state.t,
                distance: None,
            }),
            Ok(mut q) => {
                store = CheckpointStore::new(q.state.clone());
                qss_phase(model, &mut q, schedule, params, t_end, &mut trace, &mut store, &mut probe_secs)
            }
        };
        wall.insert("qss".to_string(), clock.elapsed().as_secs_f64() - probe_secs);
        if probe_secs > 0.0 {
            wall.insert("probe".to_string(), probe_secs);
        }

        if let Some(tr) = trigger {
            let clock = Instant::now();
            let target = select_rollback_point(&store, tr.k).cloned().unwrap_or_else(|| full.state.clone());
            discarded = Some(trace.clone());
            trace.truncate_from(target.t);
            trace.status = Status::Completed;
            switch_backs.push(SwitchBackRecord {
                k: tr.k,
                reason: tr.reason,
                t_trigger: tr.t,
                t_resume: target.t,
                distance: tr.distance,
            });
            let rollback = EventKind::Rollback {
                k: tr.k,
                reason: reason_name(tr.reason).to_string(),
                t_resume: target.t,
            };
            match Session::resume(model, schedule, Fidelity::Full, params.full_session(), target.clone()) {
                Ok((mut s, rep)) => {
                    trace.push(s.state.t, &s.state.part, Fidelity::Full, s.state.k, std::iter::once(rollback).chain(rep.events));
                    if let Some(v) = rep.violation {
                        trace.status = Status::ShortTermUnstable(v);
                    } else {
                        run_session(&mut s, &mut trace, t_end);
                    }
                }
                Err(e) => {
                    trace.push(target.t, &target.part, Fidelity::Full, target.k, [rollback]);
                    trace.status = Status::NewtonFailure(e.to_string());
                }
            }
            full_secs += clock.elapsed().as_secs_f64();
        }
    }
    wall.insert("full".to_string(), full_secs);
    let outcome = judge_trace(model, &trace, params.tail_window);
    let verdict = report(model, "hybrid", &trace, switch_backs, outcome, wall);
    HybridOutcome {
        trace,
        verdict,
        discarded_qss: discarded,
    }
}

fn reason_name(r: SwitchReason) -> &'static str {
    match r {
        SwitchReason::OxlDeviation => "oxl-deviation",
        SwitchReason::Undamped => "undamped",
        SwitchReason::QssFailure => "qss-failure",
    }
}

fn slow_rate(model: &SystemModel, st: &SimState) -> f64 {
    inf_norm(&model.residuals_at(st).h_c)
}

/// Advances the QSS session until the horizon or a trigger.
#[allow(clippy::too_many_arguments)]
fn qss_phase(
    model: &SystemModel,
    q: &mut Session<'_>,
    schedule: &[ScheduledEvent],
    params: &HybridParams,
    t_end: f64,
    trace: &mut Trace,
    store: &mut CheckpointStore,
    probe_secs: &mut f64,
) -> Option<Trigger> {
    let mut busy = false;
    let mut awaiting_probe = false;
    while q.next_t() <= t_end + 1e-9 {
        let rep = match q.advance() {
            Ok(r) => r,
            Err(e) => {
                trace.annotate(EventKind::Termination { reason: e.to_string() });
                return Some(Trigger {
                    k: q.state.k + 1,
                    reason: SwitchReason::QssFailure,
                    t: q.next_t(),
                    distance: None,
                });
            }
        };
        let st = &q.state;
        busy |= rep.events.iter().any(|e| matches!(e, EventKind::OxlPickup { .. }));
        trace.push(st.t, &st.part, Fidelity::Qss, st.k, rep.events);
        if rep.violation.is_some() {
            return Some(Trigger {
                k: st.k + 1,
                reason: SwitchReason::QssFailure,
                t: st.t,
                distance: None,
            });
        }
        if let Some(j) = rep.jump {
            busy = true;
            store.record(j.k - 1, j.pre_jump.clone());
            let distance = match approximate_post_jump_point(model, &j.pre_jump, st, params.dt_full, &params.newton) {
                Ok(approx) => check_oxl_deviation(model, &approx, st),
                Err(_) => f64::INFINITY,
            };
            if deviation_exceeds(distance, params.eta) {
                return Some(Trigger {
                    k: j.k,
                    reason: SwitchReason::OxlDeviation,
                    t: st.t,
                    distance: Some(distance),
                });
            }
        }
        if busy && st.clocks.quiescent() {
            busy = false;
            awaiting_probe = !excited_limiters(model, st).is_empty();
        }
        // the probe starts from the point the QSS trajectory settles at
        let last_sample = q.next_t() > t_end + 1e-9;
        if awaiting_probe && st.clocks.quiescent() && (last_sample || slow_rate(model, st) <= params.settle_rate) {
            awaiting_probe = false;
            let clock = Instant::now();
            let v = damping_probe(model, st, schedule, params);
            *probe_secs += clock.elapsed().as_secs_f64();
            if v.status != DampingStatus::Damped {
                return Some(Trigger {
                    k: st.k + 1,
                    reason: SwitchReason::Undamped,
                    t: st.t,
                    distance: None,
                });
            }
        }
    }
    None
}
