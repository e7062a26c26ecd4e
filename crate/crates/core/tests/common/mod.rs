#![allow(dead_code)]

use ltstab::model::{SimState, SystemModel};
use ltstab::scenario::suite::Scenario;
use ltstab::scenario::{Case, ScheduledEvent};

pub struct Loaded {
    pub case: Case,
    pub events: Vec<ScheduledEvent>,
    pub model: SystemModel,
    pub start: SimState,
}

pub fn load(s: Scenario) -> Loaded {
    let case = s.case();
    let events = s.schedule().events;
    let (model, start) = SystemModel::initialize(&case).expect("bundled case initializes");
    Loaded { case, events, model, start }
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

use ltstab::dae::{handle_discrete_event, simulate_full, step_full_model, IntegratorConfig};
use ltstab::engine::{EventKind, Form, Stepper};
use ltstab::model::Residuals;
use ltstab::qss::{solve_fast_equilibrium, step_qss, FastSolveOptions};
use ltstab::solver::NewtonConfig;
use ltstab::stability::{dominant_eigenpair, find_equilibrium, reduced_matrix_at, EQUILIBRIUM_NEWTON};
use ltstab::trace::Trace;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Residuals of every sample, each on the grid it was solved on.
pub fn residuals_along(l: &Loaded, tr: &Trace) -> Vec<(f64, Residuals)> {
    let mut grid = l.start.grid.clone();
    let mut z_d = l.start.part.z_d.clone();
    let mut out = Vec::with_capacity(tr.samples.len());
    for (i, s) in tr.samples.iter().enumerate() {
        for e in tr.events_at(i) {
            if let EventKind::BranchTrip { branch } = e {
                let b = l.case.branch_index(branch).unwrap();
                grid = l.model.trip_branch(&grid, &z_d, b).unwrap_or(grid);
            }
        }
        if s.part.z_d != z_d {
            z_d = s.part.z_d.clone();
            grid = l.model.rebuild_grid(&grid, &z_d);
        }
        let modes = l.model.modes_at(&s.part.gather(), &l.start.clocks);
        out.push((s.t, l.model.eval_residuals(&s.part, &grid, &modes)));
    }
    out
}

/// The start point with `events` applied.
pub fn after_events(l: &Loaded, events: &[ScheduledEvent]) -> SimState {
    let mut st = l.start.clone();
    let mut stepper = Stepper::new(NewtonConfig::default());
    for ev in events {
        handle_discrete_event(&l.model, &mut st, ev, &mut stepper).unwrap();
    }
    st
}

fn worst_residual(model: &SystemModel, st: &SimState) -> f64 {
    let (h, f, g) = model.residuals_at(st).norms();
    h.max(f).max(g)
}

/// Equilibria from `starts` perturbed guesses around the initial point.
/// Each must pass the residual test, be a fixed point of the manifold
/// projection and of one step of either model. Returns the largest error.
pub fn multistart(l: &Loaded, seed: u64, starts: usize) -> Result<f64, String> {
    use rand::Rng;
    let mut r = rng(seed);
    let cfg = NewtonConfig { tol: 1e-12, max_iter: 40 };
    let mut worst: f64 = 0.0;
    // limiter integrators sit on a clamp at rest, so only the fast part is moved
    let off = l.model.layout.x_offset();
    for _ in 0..starts {
        let mut guess = l.start.clone();
        let w: Vec<f64> = guess
            .part
            .gather()
            .iter()
            .enumerate()
            .map(|(i, x)| if i < off { *x } else { x + 0.01 * r.gen_range(-1.0..1.0) })
            .collect();
        guess.part.set_continuous(&w);
        let eq = find_equilibrium(&l.model, &guess, &cfg).map_err(|e| e.to_string())?;
        let w = eq.part.gather();
        let p = solve_fast_equilibrium(&l.model, &eq, FastSolveOptions::default(), &cfg).map_err(|e| e.to_string())?;
        let mut stepper = Stepper::new(cfg);
        let q = step_qss(&l.model, &eq, 0.1, &mut stepper).map_err(|e| e.to_string())?;
        let f = step_full_model(&l.model, &eq, 0.01, &mut stepper).map_err(|e| e.to_string())?;
        for e in [
            worst_residual(&l.model, &eq),
            worst_residual(&l.model, &p.state),
            worst_residual(&l.model, &q),
            worst_residual(&l.model, &f),
            max_abs_diff(&p.state.part.gather(), &w),
            max_abs_diff(&q.part.gather(), &w),
            max_abs_diff(&f.part.gather(), &w),
        ] {
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

/// Observed order of the full-model step on the first second after the
/// disturbance of `l`.
pub fn self_convergence_order(l: &Loaded) -> f64 {
    let st = after_events(l, &l.events);
    let run = |n: usize| {
        let dt = 1.0 / n as f64;
        let mut s = st.clone();
        let mut stepper = Stepper::new(NewtonConfig { tol: 1e-12, max_iter: 30 });
        for _ in 0..n {
            s = step_full_model(&l.model, &s, dt, &mut stepper).unwrap();
        }
        s.part.gather()
    };
    let (a, b, c) = (run(25), run(50), run(100));
    (max_abs_diff(&a, &b) / max_abs_diff(&b, &c)).log2()
}

/// Post-fault rest point of `l` after a `t_end` full-model run.
pub fn settled_point(l: &Loaded, t_end: f64) -> SimState {
    let tr = simulate_full(&l.model, &l.start, &l.events, &IntegratorConfig::default(), t_end);
    let mut st = after_events(l, &l.events);
    let last = tr.last().unwrap();
    st.t = last.t;
    st.part = last.part.clone();
    st.grid = l.model.rebuild_grid(&st.grid, &st.part.z_d);
    find_equilibrium(&l.model, &st, &EQUILIBRIUM_NEWTON).unwrap()
}

/// Dominant eigenvalue of the reduced matrix at `eq`, and the same
/// eigenvalue recovered from a frozen-slow simulation kicked along its
/// eigenvector (linear prediction on the samples, trapezoid map undone).
pub fn eigenvalue_and_decay_fit(l: &Loaded, eq: &SimState) -> (Complex64, Complex64) {
    let a = reduced_matrix_at(&l.model, eq).unwrap();
    let (lambda, v) = dominant_eigenpair(&a).unwrap();

    let mut st = eq.clone();
    let scale = 1e-5 / v.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    for (k, c) in v.iter().enumerate() {
        st.part.x[k] += scale * c.re;
    }
    let newton = NewtonConfig { tol: 1e-13, max_iter: 30 };
    Stepper::new(newton).settle(&l.model, Form::ALGEBRAIC, &mut st).unwrap();
    let h = 0.002;
    let cfg = IntegratorConfig {
        dt: h,
        newton,
        freeze_slow: true,
        ..IntegratorConfig::default()
    };
    let span = (4.0 / lambda.re.abs()).min(5.0);
    let tr = simulate_full(&l.model, &st, &[], &cfg, st.t + span);
    let dev: Vec<Vec<f64>> = tr
        .samples
        .iter()
        .map(|s| s.part.x.iter().zip(&eq.part.x).map(|(p, q)| p - q).collect())
        .collect();
    let nx = l.model.layout.n_x();

    let mu = if lambda.im.abs() < 1e-9 {
        let (mut num, mut den) = (0.0, 0.0);
        for pair in dev.windows(2) {
            for (a, b) in pair[0].iter().zip(&pair[1]) {
                num += b * a;
                den += a * a;
            }
        }
        Complex64::new(num / den, 0.0)
    } else {
        let rows = (dev.len() - 2) * nx;
        let mut m = DMatrix::zeros(rows, 2);
        let mut rhs = DVector::zeros(rows);
        for (k, tri) in dev.windows(3).enumerate() {
            for (c, ((d1, d0), d2)) in tri[1].iter().zip(&tri[0]).zip(&tri[2]).enumerate() {
                let r = k * nx + c;
                m[(r, 0)] = *d1;
                m[(r, 1)] = *d0;
                rhs[r] = *d2;
            }
        }
        let coef = m.svd(true, true).solve(&rhs, 1e-14).unwrap();
        let (a1, a2) = (coef[0], coef[1]);
        let disc = Complex64::new(a1 * a1 + 4.0 * a2, 0.0).sqrt();
        let mu = (Complex64::new(a1, 0.0) + disc) / 2.0;
        if mu.im < 0.0 {
            mu.conj()
        } else {
            mu
        }
    };
    (lambda, (mu - 1.0) / (mu + 1.0) * (2.0 / h))
}
