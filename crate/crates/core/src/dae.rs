//! Full long-term model: trapezoidal integration of slow and fast states
//! together with the network equations.

use crate::engine::{EventKind, Fidelity, Session, SessionConfig, Stepper};
use crate::error::SimResult;
use crate::model::{SimState, SystemModel};
use crate::scenario::{ScheduledEvent, StudyRegion};
use crate::solver::NewtonConfig;
use crate::trace::{Status, Trace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub newton: NewtonConfig,
    /// Hold the slow states fixed (transient model).
    pub freeze_slow: bool,
    pub bounds: StudyRegion,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            newton: NewtonConfig::default(),
            freeze_slow: false,
            bounds: StudyRegion::default(),
        }
    }
}

impl IntegratorConfig {
    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            dt: self.dt,
            newton: self.newton,
            bounds: self.bounds,
        }
    }

    pub fn fidelity(&self) -> Fidelity {
        if self.freeze_slow {
            Fidelity::Transient
        } else {
            Fidelity::Full
        }
    }
}

/// One trapezoidal step of the full model. Grid, taps and limiter clocks
/// are left as they are.
pub fn step_full_model(model: &SystemModel, st: &SimState, dt: f64, stepper: &mut Stepper) -> SimResult<SimState> {
    let w = stepper.step(model, crate::engine::Form::FULL, st, dt)?;
    let mut next = st.clone();
    next.part.set_continuous(&w);
    next.t = st.t + dt;
    Ok(next)
}

/// Applies a scheduled event to `st` and re-solves the algebraic variables
/// at the same instant. Dynamic states are not touched.
pub fn handle_discrete_event(model: &SystemModel, st: &mut SimState, event: &ScheduledEvent, stepper: &mut Stepper) -> SimResult<()> {
    use crate::scenario::EventAction;
    match &event.action {
        EventAction::BranchTrip { branch } => {
            let b = model
                .case
                .branch_index(branch)
                .ok_or_else(|| crate::error::SimError::Invariant(format!("unknown branch {branch}")))?;
            if let Some(g) = model.trip_branch(&st.grid, &st.part.z_d, b) {
                st.grid = g;
            }
        }
        EventAction::LoadStep { bus, dp, dq } => {
            let b = model
                .case
                .buses
                .iter()
                .position(|x| x.id == *bus)
                .ok_or_else(|| crate::error::SimError::Invariant(format!("unknown bus {bus}")))?;
            st.grid = model.step_load(&st.grid, b, *dp, *dq);
        }
    }
    stepper.settle(model, crate::engine::Form::ALGEBRAIC, st)
}

/// Runs a session to `t_end`, recording every sample. Stops early on a
/// study-region violation or a failed step.
pub fn run_session(session: &mut Session<'_>, trace: &mut Trace, t_end: f64) {
    let fidelity = session.fidelity;
    while session.next_t() <= t_end + 1e-9 {
        match session.advance() {
            Ok(rep) => {
                let st = &session.state;
                trace.push(st.t, &st.part, fidelity, st.k, rep.events);
                if let Some(v) = rep.violation {
                    trace.annotate(EventKind::Termination { reason: v.clone() });
                    trace.status = violation_status(fidelity, v);
                    return;
                }
            }
            Err(e) => {
                trace.annotate(EventKind::Termination { reason: e.to_string() });
                trace.status = failure_status(fidelity, e.to_string());
                return;
            }
        }
    }
}

pub(crate) fn violation_status(fidelity: Fidelity, why: String) -> Status {
    match fidelity {
        Fidelity::Qss => Status::Singularity(why),
        _ => Status::ShortTermUnstable(why),
    }
}

pub(crate) fn failure_status(fidelity: Fidelity, why: String) -> Status {
    match fidelity {
        Fidelity::Qss => Status::Singularity(why),
        _ => Status::NewtonFailure(why),
    }
}

/// Simulates the full (or, with `freeze_slow`, transient) model from
/// `start` to `t_end`.
pub fn simulate_full(model: &SystemModel, start: &SimState, schedule: &[ScheduledEvent], cfg: &IntegratorConfig, t_end: f64) -> Trace {
    let mut trace = Trace::new();
    let fidelity = cfg.fidelity();
    match Session::begin(model, schedule, fidelity, cfg.session(), start.clone()) {
        Ok((mut s, rep)) => {
            trace.push(s.state.t, &s.state.part, fidelity, s.state.k, rep.events);
            if let Some(v) = rep.violation {
                trace.status = violation_status(fidelity, v);
                return trace;
            }
            run_session(&mut s, &mut trace, t_end);
        }
        Err(e) => {
            trace.push(start.t, &start.part, fidelity, start.k, []);
            trace.status = failure_status(fidelity, e.to_string());
        }
    }
    trace
}
