//! Integration machinery shared by the full and QSS engines.
//!
//! Both engines solve one stacked Newton system per step over
//! `w = [z_c; x; y]`. What differs is how the slow and fast row blocks are
//! posed: a trapezoidal update, frozen at the previous value, or the
//! equilibrium condition itself. The algebraic rows are always `g = 0`.

use nalgebra::DMatrix;

use crate::devices::oxl::TIME_EPS;
use crate::error::{SimError, SimResult};
use crate::model::{Grid, Modes, SimState, SystemModel, TapChange};
use crate::scenario::{EventAction, ScheduledEvent, StudyRegion};
use crate::solver::{newton, LuCache, MatrixKey, NewtonConfig, NewtonStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_zc: usize,
    pub n_x: usize,
    pub n_y: usize,
}

impl Dims {
    pub fn n(&self) -> usize {
        self.n_zc + self.n_x + self.n_y
    }
}

/// A semi-explicit DAE `ż_c = h_c, ẋ = f, 0 = g` over `w = [z_c; x; y]`.
/// `eval` returns the rows `[h_c; f; g]` and optionally writes their
/// Jacobian.
pub trait Dae {
    fn dims(&self) -> Dims;
    fn eval(&self, w: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64>;
}

/// The power-system model with grid and limit modes fixed.
pub struct ModelAt<'a> {
    pub model: &'a SystemModel,
    pub grid: &'a Grid,
    pub modes: &'a Modes,
}

impl Dae for ModelAt<'_> {
    fn dims(&self) -> Dims {
        let l = &self.model.layout;
        Dims {
            n_zc: l.n_zc(),
            n_x: l.n_x(),
            n_y: l.n_y(),
        }
    }

    fn eval(&self, w: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
        self.model.eval_rows(w, self.grid, self.modes, jac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowForm {
    Trapezoid,
    Frozen,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Form {
    pub slow: RowForm,
    pub fast: RowForm,
}

impl Form {
    /// Full model: slow and fast states integrated.
    pub const FULL: Form = Form {
        slow: RowForm::Trapezoid,
        fast: RowForm::Trapezoid,
    };
    /// Transient model: slow states held as parameters.
    pub const TRANSIENT: Form = Form {
        slow: RowForm::Frozen,
        fast: RowForm::Trapezoid,
    };
    /// QSS model: fast dynamics replaced by `f = 0`.
    pub const QSS: Form = Form {
        slow: RowForm::Trapezoid,
        fast: RowForm::Zero,
    };
    /// Point on the constraint manifold for fixed slow states.
    pub const FAST_EQUILIBRIUM: Form = Form {
        slow: RowForm::Frozen,
        fast: RowForm::Zero,
    };
    /// Long-term equilibrium.
    pub const EQUILIBRIUM: Form = Form {
        slow: RowForm::Zero,
        fast: RowForm::Zero,
    };
    /// Only the algebraic variables move.
    pub const ALGEBRAIC: Form = Form {
        slow: RowForm::Frozen,
        fast: RowForm::Frozen,
    };

    fn id(&self) -> u8 {
        let code = |r: RowForm| match r {
            RowForm::Trapezoid => 0u8,
            RowForm::Frozen => 1,
            RowForm::Zero => 2,
        };
        code(self.slow) * 3 + code(self.fast)
    }

    fn uses_old_rows(&self) -> bool {
        self.slow == RowForm::Trapezoid || self.fast == RowForm::Trapezoid
    }
}

fn row_form(form: Form, dims: &Dims, i: usize) -> RowForm {
    if i < dims.n_zc {
        form.slow
    } else if i < dims.n_zc + dims.n_x {
        form.fast
    } else {
        RowForm::Zero
    }
}

fn pose_rows(form: Form, dims: &Dims, w: &[f64], w_old: &[f64], rows: &mut [f64], rows_old: Option<&[f64]>, dt: f64) {
    for i in 0..rows.len() {
        rows[i] = match row_form(form, dims, i) {
            RowForm::Trapezoid => w[i] - w_old[i] - 0.5 * dt * (rows[i] + rows_old.expect("old rows")[i]),
            RowForm::Frozen => w[i] - w_old[i],
            RowForm::Zero => rows[i],
        };
    }
}

fn pose_jacobian(form: Form, dims: &Dims, j: &mut DMatrix<f64>, dt: f64) {
    let n = j.nrows();
    for i in 0..n {
        match row_form(form, dims, i) {
            RowForm::Trapezoid => {
                for c in 0..n {
                    j[(i, c)] *= -0.5 * dt;
                }
                j[(i, i)] += 1.0;
            }
            RowForm::Frozen => {
                for c in 0..n {
                    j[(i, c)] = 0.0;
                }
                j[(i, i)] = 1.0;
            }
            RowForm::Zero => {}
        }
    }
}

/// One Newton solve of `form` from `w_old` over a step `dt` (ignored by
/// forms without trapezoidal rows).
#[allow(clippy::too_many_arguments)]
pub fn solve_form(
    sys: &dyn Dae,
    form: Form,
    w_old: &[f64],
    guess: &[f64],
    dt: f64,
    cache: &mut LuCache,
    key: MatrixKey,
    cfg: &NewtonConfig,
) -> SimResult<(Vec<f64>, NewtonStats)> {
    let dims = sys.dims();
    let rows_old = form.uses_old_rows().then(|| sys.eval(w_old, None));
    newton(
        guess,
        |w| {
            let mut r = sys.eval(w, None);
            pose_rows(form, &dims, w, w_old, &mut r, rows_old.as_deref(), dt);
            r
        },
        |w| {
            let mut j = DMatrix::zeros(0, 0);
            sys.eval(w, Some(&mut j));
            pose_jacobian(form, &dims, &mut j, dt);
            j
        },
        cache,
        key,
        cfg,
    )
}

/// Plain step of a generic DAE with emergency halving (two attempts).
pub fn step_dae(sys: &dyn Dae, form: Form, w: &[f64], dt: f64, cache: &mut LuCache, cfg: &NewtonConfig) -> SimResult<Vec<f64>> {
    let mut last = SimError::Invariant("no attempt".into());
    for nsub in [1u32, 2, 4] {
        let h = dt / f64::from(nsub);
        let mut cur = w.to_vec();
        let mut ok = true;
        for _ in 0..nsub {
            match solve_form(sys, form, &cur, &cur, h, cache, generic_key(form, h), cfg) {
                Ok((next, _)) => cur = next,
                Err(e) => {
                    last = e;
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(cur);
        }
    }
    Err(last)
}

fn generic_key(form: Form, dt: f64) -> MatrixKey {
    MatrixKey {
        form: form.id(),
        dt_bits: dt.to_bits(),
        grid_revision: 0,
        modes: Modes::default(),
    }
}

/// Work counters of a stepper.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorkStats {
    pub steps: usize,
    pub newton_iterations: usize,
    pub halvings: usize,
    pub mode_retries: usize,
}

/// Steps the power-system model, iterating on limit modes and halving
/// the step on Newton failure.
pub struct Stepper {
    pub cache: LuCache,
    pub newton: NewtonConfig,
    pub stats: WorkStats,
}

impl Stepper {
    pub fn new(newton: NewtonConfig) -> Self {
        Self {
            cache: LuCache::new(),
            newton,
            stats: WorkStats::default(),
        }
    }

    /// Solves `form` once from `w_old`, re-solving while the limit modes
    /// at the end disagree with those assumed.
    pub fn substep(&mut self, model: &SystemModel, form: Form, w_old: &[f64], st: &SimState, dt: f64) -> SimResult<Vec<f64>> {
        let mut modes = model.modes_at(w_old, &st.clocks);
        let mut attempt = 0;
        loop {
            let view = ModelAt {
                model,
                grid: &st.grid,
                modes: &modes,
            };
            let key = MatrixKey {
                form: form.id(),
                dt_bits: dt.to_bits(),
                grid_revision: st.grid.revision,
                modes: modes.clone(),
            };
            let (w, stats) = solve_form(&view, form, w_old, w_old, dt, &mut self.cache, key, &self.newton)?;
            self.stats.newton_iterations += stats.iterations;
            let next = model.modes_after(&modes, &w);
            attempt += 1;
            if next == modes || attempt >= 4 {
                return Ok(w);
            }
            self.stats.mode_retries += 1;
            modes = next;
        }
    }

    /// One step of length `dt` from the state's continuous variables.
    pub fn step(&mut self, model: &SystemModel, form: Form, st: &SimState, dt: f64) -> SimResult<Vec<f64>> {
        self.stats.steps += 1;
        let w0 = st.part.gather();
        let mut last = SimError::Invariant("no attempt".into());
        for nsub in [1u32, 2, 4] {
            if nsub > 1 {
                self.stats.halvings += 1;
            }
            let h = dt / f64::from(nsub);
            let mut cur = w0.clone();
            let mut ok = true;
            for _ in 0..nsub {
                match self.substep(model, form, &cur, st, h) {
                    Ok(next) => cur = next,
                    Err(e) => {
                        last = e;
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                return Ok(cur);
            }
        }
        Err(last)
    }

    /// Re-solves the non-frozen variables at the current instant.
    pub fn settle(&mut self, model: &SystemModel, form: Form, st: &mut SimState) -> SimResult<()> {
        let w0 = st.part.gather();
        let w = self.substep(model, form, &w0, st, 0.0)?;
        st.part.set_continuous(&w);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fidelity {
    Full,
    Transient,
    Qss,
}

impl Fidelity {
    pub fn step_form(self) -> Form {
        match self {
            Fidelity::Full => Form::FULL,
            Fidelity::Transient => Form::TRANSIENT,
            Fidelity::Qss => Form::QSS,
        }
    }

    /// Form used to restore consistency after an event at an instant.
    pub fn settle_form(self) -> Form {
        match self {
            Fidelity::Full | Fidelity::Transient => Form::ALGEBRAIC,
            Fidelity::Qss => Form::FAST_EQUILIBRIUM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Fidelity::Full => "full",
            Fidelity::Transient => "transient",
            Fidelity::Qss => "qss",
        }
    }
}

/// What happened at one sample instant.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    BranchTrip { branch: String },
    LoadStep { bus: u32, dp: f64, dq: f64 },
    OxlPickup { generator: String },
    Jump { k: u32, changes: Vec<TapChange> },
    ModeSwitch { to: Fidelity },
    Rollback { k: u32, reason: String, t_resume: f64 },
    Termination { reason: String },
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventKind::BranchTrip { branch } => write!(f, "trip {branch}"),
            EventKind::LoadStep { bus, dp, dq } => write!(f, "load step bus {bus} dp={dp} dq={dq}"),
            EventKind::OxlPickup { generator } => write!(f, "oxl pickup {generator}"),
            EventKind::Jump { k, changes } => {
                write!(f, "jump k={k}")?;
                for c in changes {
                    write!(f, " ltc{}:{}->{}", c.ltc, c.from, c.to)?;
                }
                Ok(())
            }
            EventKind::ModeSwitch { to } => write!(f, "switch to {}", to.name()),
            EventKind::Rollback { k, reason, t_resume } => write!(f, "rollback k={k} {reason} resume at {t_resume}"),
            EventKind::Termination { reason } => write!(f, "stop: {reason}"),
        }
    }
}

/// A discrete jump seen at a sample, with the state just before it.
#[derive(Debug, Clone)]
pub struct JumpInfo {
    pub k: u32,
    pub changes: Vec<TapChange>,
    pub pre_jump: SimState,
}

#[derive(Debug, Clone, Default)]
pub struct SampleReport {
    pub events: Vec<EventKind>,
    pub jump: Option<JumpInfo>,
    pub violation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub dt: f64,
    pub newton: NewtonConfig,
    pub bounds: StudyRegion,
}

/// A running simulation on the sample grid `t_start + n·dt`. At each
/// sample: scheduled events, limiter pickup timers, tap changer moves, each
/// followed by a re-solve at the same instant when something changed.
pub struct Session<'m> {
    pub model: &'m SystemModel,
    pub fidelity: Fidelity,
    pub cfg: SessionConfig,
    pub state: SimState,
    pub stepper: Stepper,
    events: Vec<ScheduledEvent>,
    next_event: usize,
    t_start: f64,
    n: u64,
}

impl<'m> Session<'m> {
    /// Starts at `state`, applying events due at its instant.
    pub fn begin(
        model: &'m SystemModel,
        events: &[ScheduledEvent],
        fidelity: Fidelity,
        cfg: SessionConfig,
        state: SimState,
    ) -> SimResult<(Self, SampleReport)> {
        let mut s = Self::new(model, events, fidelity, cfg, state, false);
        let rep = s.process_sample()?;
        Ok((s, rep))
    }

    /// Continues from a recorded state whose scheduled events are already
    /// applied. Tap changers due at that instant act immediately.
    pub fn resume(
        model: &'m SystemModel,
        events: &[ScheduledEvent],
        fidelity: Fidelity,
        cfg: SessionConfig,
        state: SimState,
    ) -> SimResult<(Self, SampleReport)> {
        let mut s = Self::new(model, events, fidelity, cfg, state, true);
        let rep = s.process_sample()?;
        Ok((s, rep))
    }

    fn new(model: &'m SystemModel, events: &[ScheduledEvent], fidelity: Fidelity, cfg: SessionConfig, state: SimState, applied: bool) -> Self {
        let next_event = if applied {
            events.iter().position(|e| e.time > state.t + TIME_EPS).unwrap_or(events.len())
        } else {
            0
        };
        Self {
            model,
            fidelity,
            cfg,
            t_start: state.t,
            state,
            stepper: Stepper::new(cfg.newton),
            events: events.to_vec(),
            next_event,
            n: 0,
        }
    }

    pub fn t(&self) -> f64 {
        self.state.t
    }

    /// Time of the next sample.
    pub fn next_t(&self) -> f64 {
        self.t_start + (self.n + 1) as f64 * self.cfg.dt
    }

    /// Steps to the next sample and processes it.
    pub fn advance(&mut self) -> SimResult<SampleReport> {
        let t_next = self.next_t();
        let w = self.stepper.step(self.model, self.fidelity.step_form(), &self.state, t_next - self.state.t)?;
        self.state.part.set_continuous(&w);
        self.state.t = t_next;
        self.n += 1;
        self.process_sample()
    }

    fn process_sample(&mut self) -> SimResult<SampleReport> {
        let model = self.model;
        let settle = self.fidelity.settle_form();
        let mut rep = SampleReport::default();
        let mut changed = false;
        while self.next_event < self.events.len() && self.events[self.next_event].time <= self.state.t + TIME_EPS {
            let ev = self.events[self.next_event].clone();
            self.next_event += 1;
            match ev.action {
                EventAction::BranchTrip { branch } => {
                    let b = model
                        .case
                        .branch_index(&branch)
                        .ok_or_else(|| SimError::Invariant(format!("unknown branch {branch}")))?;
                    if let Some(g) = model.trip_branch(&self.state.grid, &self.state.part.z_d, b) {
                        self.state.grid = g;
                        changed = true;
                    }
                    rep.events.push(EventKind::BranchTrip { branch });
                }
                EventAction::LoadStep { bus, dp, dq } => {
                    let b = model
                        .case
                        .buses
                        .iter()
                        .position(|x| x.id == bus)
                        .ok_or_else(|| SimError::Invariant(format!("unknown bus {bus}")))?;
                    self.state.grid = model.step_load(&self.state.grid, b, dp, dq);
                    changed = true;
                    rep.events.push(EventKind::LoadStep { bus, dp, dq });
                }
            }
        }
        if changed {
            self.stepper.settle(model, settle, &mut self.state)?;
        }

        for o in model.observe_limiters(&mut self.state) {
            rep.events.push(EventKind::OxlPickup {
                generator: model.oxls[o].params.generator.clone(),
            });
        }

        let d = model.eval_discrete(&self.state);
        if d.jumped {
            let pre_jump = self.state.clone();
            self.state.grid = model.rebuild_grid(&self.state.grid, &d.z_d);
            self.state.part.z_d = d.z_d;
            self.state.clocks.ltc = d.ltc_clocks;
            self.state.k = d.k;
            self.stepper.settle(model, settle, &mut self.state)?;
            rep.events.push(EventKind::Jump {
                k: d.k,
                changes: d.changes.clone(),
            });
            rep.jump = Some(JumpInfo {
                k: d.k,
                changes: d.changes,
                pre_jump,
            });
        } else {
            self.state.clocks.ltc = d.ltc_clocks;
        }
        rep.violation = model.region_violation(&self.state.part, &self.cfg.bounds);
        Ok(rep)
    }
}
