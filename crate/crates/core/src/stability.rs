//! Equilibria, stability of the fast subsystem, and damping of recorded
//! oscillations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::engine::{solve_form, Dae, Dims, Form, Stepper};
use crate::error::{SimError, SimResult};
use crate::model::{inf_norm, SimState, SystemModel};
use crate::solver::{LuCache, MatrixKey, NewtonConfig};

/// Newton settings used for long-term equilibria.
pub const EQUILIBRIUM_NEWTON: NewtonConfig = NewtonConfig { tol: 1e-9, max_iter: 40 };

/// Solves `h_c = 0, f = 0, g = 0` for a generic DAE from `guess`.
pub fn find_equilibrium_dae(sys: &dyn Dae, guess: &[f64], cfg: &NewtonConfig) -> SimResult<Vec<f64>> {
    let mut cache = LuCache::new();
    let key = MatrixKey {
        form: 0xff,
        dt_bits: 0,
        grid_revision: 0,
        modes: Default::default(),
    };
    let (w, _) = solve_form(sys, Form::EQUILIBRIUM, guess, guess, 0.0, &mut cache, key, cfg).map_err(|e| match e {
        SimError::NewtonFailure { residual, .. } => SimError::NoEquilibrium { residual },
        other => other,
    })?;
    Ok(w)
}

/// Long-term equilibrium for the discrete state and grid of `guess`.
pub fn find_equilibrium(model: &SystemModel, guess: &SimState, cfg: &NewtonConfig) -> SimResult<SimState> {
    let mut stepper = Stepper::new(*cfg);
    let mut st = guess.clone();
    stepper.settle(model, Form::EQUILIBRIUM, &mut st).map_err(|e| match e {
        SimError::NewtonFailure { residual, .. } => SimError::NoEquilibrium { residual },
        other => other,
    })?;
    let r = model.residuals_at(&st);
    let worst = inf_norm(&r.h_c).max(inf_norm(&r.f)).max(inf_norm(&r.g));
    if worst > cfg.tol {
        return Err(SimError::NoEquilibrium { residual: worst });
    }
    Ok(st)
}

/// `D_x f - D_y f · (D_y g)⁻¹ · D_x g`, or `None` when `D_y g` is singular.
pub fn reduced_fast_matrix(j: &DMatrix<f64>, dims: &Dims) -> Option<DMatrix<f64>> {
    let (o, nx, ny) = (dims.n_zc, dims.n_x, dims.n_y);
    let fx = j.view((o, o), (nx, nx));
    if ny == 0 {
        return Some(fx.into_owned());
    }
    let fy = j.view((o, o + nx), (nx, ny));
    let gx = j.view((o + nx, o), (ny, nx)).into_owned();
    let gy = j.view((o + nx, o + nx), (ny, ny)).into_owned();
    let sol = gy.lu().solve(&gx)?;
    Some(fx - fy * sol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaClass {
    /// All eigenvalues of the reduced fast matrix in the open left half plane.
    pub in_gamma_s: bool,
    pub max_real: f64,
    pub eigenvalues: Vec<Complex64>,
}

pub fn classify_dae(j: &DMatrix<f64>, dims: &Dims) -> GammaClass {
    match reduced_fast_matrix(j, dims) {
        None => GammaClass {
            in_gamma_s: false,
            max_real: f64::INFINITY,
            eigenvalues: Vec::new(),
        },
        Some(a) => {
            let eigenvalues: Vec<Complex64> = if a.nrows() == 0 {
                Vec::new()
            } else {
                a.complex_eigenvalues().iter().copied().collect()
            };
            let max_real = eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
            GammaClass {
                in_gamma_s: eigenvalues.iter().all(|e| e.re < 0.0 && e.re.is_finite()),
                max_real,
                eigenvalues,
            }
        }
    }
}

fn dims_of(model: &SystemModel) -> Dims {
    let l = &model.layout;
    Dims {
        n_zc: l.n_zc(),
        n_x: l.n_x(),
        n_y: l.n_y(),
    }
}

/// Whether the fast subsystem is asymptotically stable at `st` with its
/// slow and discrete states frozen.
pub fn classify_gamma_s(model: &SystemModel, st: &SimState) -> GammaClass {
    classify_dae(&reduced_jacobian_input(model, st), &dims_of(model))
}

fn reduced_jacobian_input(model: &SystemModel, st: &SimState) -> DMatrix<f64> {
    let w = st.part.gather();
    let modes = model.modes_at(&w, &st.clocks);
    model.eval_jacobian(&w, &st.grid, &modes)
}

/// Reduced fast matrix of the model at `st`.
pub fn reduced_matrix_at(model: &SystemModel, st: &SimState) -> Option<DMatrix<f64>> {
    reduced_fast_matrix(&reduced_jacobian_input(model, st), &dims_of(model))
}

/// Eigenvalue with the largest real part and a unit eigenvector for it.
pub fn dominant_eigenpair(a: &DMatrix<f64>) -> Option<(Complex64, DVector<Complex64>)> {
    let n = a.nrows();
    if n == 0 {
        return None;
    }
    let lambda = a
        .complex_eigenvalues()
        .iter()
        .copied()
        .max_by(|p, q| p.re.total_cmp(&q.re).then(p.im.total_cmp(&q.im)))?;
    // inverse iteration with a small shift off the eigenvalue
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    let shift = lambda + Complex64::new(1e-8 * (1.0 + lambda.norm()), 0.0);
    let m = ac - DMatrix::<Complex64>::identity(n, n) * shift;
    let lu = m.lu();
    let mut v = DVector::<Complex64>::from_element(n, Complex64::new(1.0, 0.0));
    for _ in 0..5 {
        let next = lu.solve(&v)?;
        let norm = next.norm();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        v = next / Complex64::new(norm, 0.0);
    }
    Some((lambda, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DampingStatus {
    Damped,
    UndampedOrGrowing,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalDamping {
    pub name: String,
    pub extrema: usize,
    /// Peak-to-trough swings in time order.
    pub swings: Vec<f64>,
    pub status: DampingStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DampingVerdict {
    pub status: DampingStatus,
    pub signals: Vec<SignalDamping>,
}

/// Relative decrease each swing must show over the previous one.
pub const DAMPING_MARGIN: f64 = 1e-3;
const RELATIVE_FLOOR: f64 = 1e-9;
const ABSOLUTE_FLOOR: f64 = 1e-12;

/// Judges whether oscillations in uniformly sampled signals die out.
///
/// Each signal is smoothed over three samples; extrema are taken where
/// the first difference changes sign. With at least three extrema the
/// signal is damped when every swing is smaller than the one before by
/// the margin. With none, a decelerating signal counts as damped and an
/// accelerating one as growing. One or two extrema are inconclusive. A
/// signal whose range is below a noise floor is damped. Any undamped
/// signal makes the verdict undamped, else any inconclusive one makes it
/// inconclusive.
pub fn assess_damping(signals: &[(String, Vec<f64>)]) -> DampingVerdict {
    let per: Vec<SignalDamping> = signals.iter().map(|(name, s)| assess_signal(name, s)).collect();
    let status = if per.iter().any(|s| s.status == DampingStatus::UndampedOrGrowing) {
        DampingStatus::UndampedOrGrowing
    } else if per.iter().any(|s| s.status == DampingStatus::Inconclusive) {
        DampingStatus::Inconclusive
    } else {
        DampingStatus::Damped
    };
    DampingVerdict { status, signals: per }
}

fn assess_signal(name: &str, raw: &[f64]) -> SignalDamping {
    let mut out = SignalDamping {
        name: name.to_string(),
        extrema: 0,
        swings: Vec::new(),
        status: DampingStatus::Inconclusive,
    };
    if raw.iter().any(|v| !v.is_finite()) {
        out.status = DampingStatus::UndampedOrGrowing;
        return out;
    }
    if raw.len() < 5 {
        return out;
    }
    let s: Vec<f64> = raw.windows(3).map(|w| (w[0] + w[1] + w[2]) / 3.0).collect();
    let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(ABSOLUTE_FLOOR);
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= floor {
        out.status = DampingStatus::Damped;
        return out;
    }

    let d: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
    let mut extrema = Vec::new();
    let mut last_sign = 0.0;
    for (i, &di) in d.iter().enumerate() {
        if di.abs() <= floor * 1e-3 {
            continue;
        }
        let sign = di.signum();
        if last_sign != 0.0 && sign != last_sign {
            extrema.push(s[i]);
        }
        last_sign = sign;
    }
    out.extrema = extrema.len();
    match extrema.len() {
        0 => {
            let third = (d.len() / 3).max(1);
            let head = d[..third].iter().map(|v| v.abs()).sum::<f64>() / third as f64;
            let tail = d[d.len() - third..].iter().map(|v| v.abs()).sum::<f64>() / third as f64;
            out.status = if tail < head * (1.0 - DAMPING_MARGIN) {
                DampingStatus::Damped
            } else if tail > head * (1.0 + DAMPING_MARGIN) {
                DampingStatus::UndampedOrGrowing
            } else {
                DampingStatus::Inconclusive
            };
        }
        1 | 2 => out.status = DampingStatus::Inconclusive,
        _ => {
            let swings: Vec<f64> = extrema.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
            // swings that sank into the noise no longer say anything
            let cut = swings.iter().position(|&w| w <= floor).unwrap_or(swings.len());
            let live = &swings[..cut];
            // pairs of adjacent swings cancel a linear drift
            let amps: Vec<f64> = if live.len() >= 3 {
                live.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                live.to_vec()
            };
            let decreasing = amps.windows(2).all(|w| w[1] <= (1.0 - DAMPING_MARGIN) * w[0]);
            out.status = if amps.len() < 2 && cut == swings.len() {
                DampingStatus::Inconclusive
            } else if decreasing {
                DampingStatus::Damped
            } else {
                DampingStatus::UndampedOrGrowing
            };
            out.swings = swings;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampled(f: impl Fn(f64) -> f64, t_end: f64, dt: f64) -> Vec<f64> {
        (0..=(t_end / dt).round() as usize).map(|i| f(i as f64 * dt)).collect()
    }

    fn one(name: &str, s: Vec<f64>) -> DampingStatus {
        assess_damping(&[(name.to_string(), s)]).status
    }

    #[test]
    fn decaying_sine_is_damped() {
        let s = sampled(|t| (-0.5 * t).exp() * (10.0 * t).sin(), 10.0, 0.01);
        assert_eq!(one("a", s), DampingStatus::Damped);
    }

    #[test]
    fn growing_sine_is_undamped() {
        let s = sampled(|t| (0.05 * t).exp() * (10.0 * t).sin(), 10.0, 0.01);
        assert_eq!(one("a", s), DampingStatus::UndampedOrGrowing);
    }

    #[test]
    fn constant_amplitude_is_undamped() {
        let s = sampled(|t| (3.0 * t).sin(), 20.0, 0.01);
        assert_eq!(one("a", s), DampingStatus::UndampedOrGrowing);
    }

    #[test]
    fn flat_signal_is_damped() {
        assert_eq!(one("a", vec![0.3; 100]), DampingStatus::Damped);
    }

    #[test]
    fn monotone_signals() {
        assert_eq!(one("a", sampled(|t| 1.0 - (-t).exp(), 5.0, 0.01)), DampingStatus::Damped);
        assert_eq!(one("a", sampled(|t| t.exp(), 5.0, 0.01)), DampingStatus::UndampedOrGrowing);
    }

    #[test]
    fn single_turn_is_inconclusive() {
        assert_eq!(one("a", sampled(|t| (t - 2.0).powi(2), 4.0, 0.01)), DampingStatus::Inconclusive);
    }

    #[test]
    fn decaying_oscillation_on_a_ramp_is_damped() {
        let s = sampled(|t| 0.2 * t + (-0.3 * t).exp() * (6.0 * t).sin(), 10.0, 0.01);
        assert_eq!(one("a", s), DampingStatus::Damped);
    }

    #[test]
    fn stable_reduced_matrix() {
        // f = -x + y, g = y - 2x  =>  reduced = -1 + 1·2 = 1 > 0
        let dims = Dims { n_zc: 0, n_x: 1, n_y: 1 };
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -2.0, 1.0]);
        let c = classify_dae(&j, &dims);
        assert!(!c.in_gamma_s);
        assert!((c.max_real - 1.0).abs() < 1e-12);
        let j = DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, -2.0, 1.0]);
        assert!(classify_dae(&j, &dims).in_gamma_s);
    }

    #[test]
    fn eigenvector_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.1, 2.0, -2.0, -0.1]);
        let (l, v) = dominant_eigenpair(&a).unwrap();
        assert!((l.re + 0.1).abs() < 1e-10 && (l.im.abs() - 2.0).abs() < 1e-10);
        let ac = a.map(|x| Complex64::new(x, 0.0));
        let r = &ac * &v - &v * l;
        assert!(r.norm() < 1e-6);
    }
}
