//! Quasi steady-state model: the fast states are eliminated through
//! `f = 0`, only slow states are integrated, with a larger step.

use nalgebra::DMatrix;

use crate::engine::{solve_form, Dae, Dims, EventKind, Fidelity, Form, ModelAt, Session, SessionConfig, Stepper};
use crate::error::{SimError, SimResult};
use crate::model::{inf_norm, SimState, SystemModel};
use crate::scenario::{ScheduledEvent, StudyRegion};
use crate::solver::{LuCache, MatrixKey, NewtonConfig};
use crate::stability::{classify_dae, GammaClass};
use crate::trace::{Status, Trace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QssConfig {
    pub dt: f64,
    pub newton: NewtonConfig,
    pub bounds: StudyRegion,
    /// Check the constraint Jacobian for singularity at every sample.
    pub track_singularity: bool,
}

impl Default for QssConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            newton: NewtonConfig::default(),
            bounds: StudyRegion::default(),
            track_singularity: false,
        }
    }
}

impl QssConfig {
    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            dt: self.dt,
            newton: self.newton,
            bounds: self.bounds,
        }
    }
}

/// A point on the constraint manifold `f = 0, g = 0`.
#[derive(Debug, Clone)]
pub struct ManifoldPoint {
    pub state: SimState,
    pub f_norm: f64,
    pub g_norm: f64,
    /// Whether the fast subsystem is asymptotically stable there, when
    /// that was checked.
    pub gamma: Option<GammaClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FastSolveOptions {
    /// Reject points where the fast subsystem is not asymptotically stable.
    pub require_stable: bool,
}

/// Solves `f = 0, g = 0` for `(x, y)` at fixed slow states of a generic
/// DAE, starting from `guess`.
pub fn fast_equilibrium_dae(sys: &dyn Dae, guess: &[f64], opts: FastSolveOptions, cfg: &NewtonConfig) -> SimResult<(Vec<f64>, Option<GammaClass>)> {
    let mut cache = LuCache::new();
    let key = MatrixKey {
        form: 0xfe,
        dt_bits: 0,
        grid_revision: 0,
        modes: Default::default(),
    };
    let (w, _) = solve_form(sys, Form::FAST_EQUILIBRIUM, guess, guess, 0.0, &mut cache, key, cfg)
        .map_err(|e| SimError::ManifoldSolve(e.to_string()))?;
    if !opts.require_stable {
        return Ok((w, None));
    }
    let mut j = DMatrix::zeros(0, 0);
    sys.eval(&w, Some(&mut j));
    let class = classify_dae(&j, &sys.dims());
    if !class.in_gamma_s {
        return Err(SimError::ManifoldSolve(format!(
            "solution outside the stable part of the manifold (max real part {:.3e})",
            class.max_real
        )));
    }
    Ok((w, Some(class)))
}

/// Finds the manifold point for the slow and discrete states of `st`,
/// using its fast and algebraic values as the initial guess.
pub fn solve_fast_equilibrium(model: &SystemModel, st: &SimState, opts: FastSolveOptions, cfg: &NewtonConfig) -> SimResult<ManifoldPoint> {
    let mut stepper = Stepper::new(*cfg);
    let mut out = st.clone();
    stepper
        .settle(model, Form::FAST_EQUILIBRIUM, &mut out)
        .map_err(|e| SimError::ManifoldSolve(e.to_string()))?;
    let res = model.residuals_at(&out);
    let (_, f_norm, g_norm) = res.norms();
    let gamma = if opts.require_stable {
        let modes = model.modes_at(&out.part.gather(), &out.clocks);
        let view = ModelAt {
            model,
            grid: &out.grid,
            modes: &modes,
        };
        let mut j = DMatrix::zeros(0, 0);
        view.eval(&out.part.gather(), Some(&mut j));
        let class = classify_dae(&j, &view.dims());
        if !class.in_gamma_s {
            return Err(SimError::ManifoldSolve("solution outside the stable part of the manifold".into()));
        }
        Some(class)
    } else {
        None
    };
    Ok(ManifoldPoint {
        state: out,
        f_norm,
        g_norm,
        gamma,
    })
}

/// One QSS step of the slow states, with `(x, y)` re-solved on the
/// manifold at the new time.
pub fn step_qss(model: &SystemModel, st: &SimState, dt: f64, stepper: &mut Stepper) -> SimResult<SimState> {
    let w = stepper.step(model, Form::QSS, st, dt)?;
    let mut next = st.clone();
    next.part.set_continuous(&w);
    next.t = st.t + dt;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularityReport {
    /// `det [[D_x f, D_y f], [D_x g, D_y g]]`.
    pub det: f64,
    /// The same determinant after scaling every row to unit max norm.
    pub scaled_det: f64,
    /// Smallest eigenvalue magnitude of the bordered matrix.
    pub min_eig: f64,
    pub singular: bool,
}

/// Tolerance on the row-scaled determinant below which the constraint
/// Jacobian is treated as singular.
pub const SINGULAR_DET: f64 = 1e-10;

/// Determinant test on `[[D_x f, D_y f], [D_x g, D_y g]]` taken from the
/// full Jacobian `j` of a DAE with dimensions `dims`.
pub fn constraint_determinant(j: &DMatrix<f64>, dims: &Dims) -> SingularityReport {
    let o = dims.n_zc;
    let m = dims.n_x + dims.n_y;
    if m == 0 {
        return SingularityReport {
            det: 1.0,
            scaled_det: 1.0,
            min_eig: f64::INFINITY,
            singular: false,
        };
    }
    let b = j.view((o, o), (m, m)).into_owned();
    let det = b.clone().lu().determinant();
    let min_eig = b.complex_eigenvalues().iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min);
    let mut scaled = b;
    for i in 0..m {
        let s = scaled.row(i).amax();
        if s > 0.0 {
            scaled.row_mut(i).scale_mut(1.0 / s);
        }
    }
    let scaled_det = scaled.lu().determinant();
    SingularityReport {
        det,
        scaled_det,
        min_eig,
        singular: !scaled_det.is_finite() || scaled_det.abs() < SINGULAR_DET,
    }
}

/// Singularity test at a model state. `previous` is the report from the
/// preceding sample; a sign change in between also counts as singular.
pub fn detect_singularity(model: &SystemModel, st: &SimState, previous: Option<&SingularityReport>) -> SingularityReport {
    let w = st.part.gather();
    let modes = model.modes_at(&w, &st.clocks);
    let j = model.eval_jacobian(&w, &st.grid, &modes);
    let l = &model.layout;
    let mut r = constraint_determinant(
        &j,
        &Dims {
            n_zc: l.n_zc(),
            n_x: l.n_x(),
            n_y: l.n_y(),
        },
    );
    if let Some(p) = previous {
        if p.scaled_det.signum() != r.scaled_det.signum() {
            r.singular = true;
        }
    }
    r
}

/// Runs the QSS model from `start`, which is first projected onto the
/// manifold. Stops on a failed manifold solve, a singular constraint
/// Jacobian (when tracked) or leaving the study region.
pub fn simulate_qss(model: &SystemModel, start: &SimState, schedule: &[ScheduledEvent], cfg: &QssConfig, t_end: f64) -> Trace {
    let mut trace = Trace::new();
    let fail = |mut trace: Trace, st: &SimState, why: String| {
        if trace.samples.is_empty() {
            trace.push(st.t, &st.part, Fidelity::Qss, st.k, []);
        }
        trace.annotate(EventKind::Termination { reason: why.clone() });
        trace.status = Status::Singularity(why);
        trace
    };
    let projected = match solve_fast_equilibrium(model, start, FastSolveOptions::default(), &cfg.newton) {
        Ok(p) => p.state,
        Err(e) => return fail(trace, start, e.to_string()),
    };
    let (mut s, rep) = match Session::begin(model, schedule, Fidelity::Qss, cfg.session(), projected) {
        Ok(x) => x,
        Err(e) => return fail(trace, start, e.to_string()),
    };
    trace.push(s.state.t, &s.state.part, Fidelity::Qss, s.state.k, rep.events);
    if let Some(v) = rep.violation {
        return fail(trace, start, v);
    }
    let mut last_det = cfg.track_singularity.then(|| detect_singularity(model, &s.state, None));
    while s.next_t() <= t_end + 1e-9 {
        match s.advance() {
            Ok(rep) => {
                trace.push(s.state.t, &s.state.part, Fidelity::Qss, s.state.k, rep.events);
                if let Some(v) = rep.violation {
                    return fail(trace, start, v);
                }
                if let Some(prev) = last_det {
                    let r = detect_singularity(model, &s.state, Some(&prev));
                    if r.singular {
                        return fail(trace, start, format!("singular constraint jacobian (det {:.3e})", r.det));
                    }
                    last_det = Some(r);
                }
            }
            Err(e) => return fail(trace, start, e.to_string()),
        }
    }
    trace
}

/// True when `st` satisfies `h_c = 0, f = 0, g = 0` within `tol`.
pub fn is_equilibrium(model: &SystemModel, st: &SimState, tol: f64) -> bool {
    let r = model.residuals_at(st);
    inf_norm(&r.h_c).max(inf_norm(&r.f)).max(inf_norm(&r.g)) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `ẋ = z - x²` with no algebraic part, slow state held at `z`.
    struct Parabola;

    impl Dae for Parabola {
        fn dims(&self) -> Dims {
            Dims { n_zc: 1, n_x: 1, n_y: 0 }
        }
        fn eval(&self, w: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
            if let Some(j) = jac {
                *j = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -2.0 * w[1]]);
            }
            vec![0.0, w[0] - w[1] * w[1]]
        }
    }

    #[test]
    fn stable_branch_is_certified() {
        let (w, c) = fast_equilibrium_dae(&Parabola, &[4.0, 1.5], FastSolveOptions { require_stable: true }, &NewtonConfig::default()).unwrap();
        assert!((w[1] - 2.0).abs() < 1e-7);
        assert!(c.unwrap().in_gamma_s);
    }

    #[test]
    fn unstable_branch_is_rejected() {
        let r = fast_equilibrium_dae(&Parabola, &[4.0, -1.5], FastSolveOptions { require_stable: true }, &NewtonConfig::default());
        assert!(matches!(r, Err(SimError::ManifoldSolve(_))));
    }

    #[test]
    fn determinant_of_toy_blocks() {
        let dims = Dims { n_zc: 0, n_x: 1, n_y: 1 };
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -0.5, 1.0]);
        let r = constraint_determinant(&j, &dims);
        assert_eq!(r.det, -0.5);
        assert!(!r.singular);
    }

    #[test]
    fn fold_point_is_singular() {
        // f = z - x² at x = 0
        let dims = Dims { n_zc: 1, n_x: 1, n_y: 0 };
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let r = constraint_determinant(&j, &dims);
        assert_eq!(r.det, 0.0);
        assert!(r.singular);
    }
}
