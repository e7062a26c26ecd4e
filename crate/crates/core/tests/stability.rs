mod common;

use common::{eigenvalue_and_decay_fit, load, multistart, rng, settled_point};
use ltstab::engine::{solve_form, Dae, Dims, Form, ModelAt};
use ltstab::model::inf_norm;
use ltstab::qss::{fast_equilibrium_dae, FastSolveOptions};
use ltstab::scenario::suite;
use ltstab::solver::{LuCache, MatrixKey, NewtonConfig};
use ltstab::stability::{classify_dae, classify_gamma_s, find_equilibrium_dae, EQUILIBRIUM_NEWTON};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

#[test]
fn multistart_equilibria_pass_both_engines() {
    for s in [suite::SMIB, suite::CASE1, suite::CASE2] {
        let l = load(s);
        let worst = multistart(&l, 11, 5).unwrap_or_else(|e| panic!("{}: {e}", s.name));
        assert!(worst <= 1e-8, "{}: {worst:e}", s.name);
    }
}

/// `ż = 1 − x²`, `ẋ = z − x`: rest points at `x = z = ±1`.
struct TwoRest;

impl Dae for TwoRest {
    fn dims(&self) -> Dims {
        Dims { n_zc: 1, n_x: 1, n_y: 0 }
    }
    fn eval(&self, w: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
        if let Some(j) = jac {
            *j = DMatrix::from_row_slice(2, 2, &[0.0, -2.0 * w[1], 1.0, -1.0]);
        }
        vec![1.0 - w[1] * w[1], w[0] - w[1]]
    }
}

fn distinct(points: &mut Vec<f64>) {
    points.sort_by(f64::total_cmp);
    points.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
}

#[test]
fn toy_equilibrium_sets_agree_between_engines() {
    let cfg = NewtonConfig { tol: 1e-12, max_iter: 50 };
    let starts = [-3.0, -1.5, -0.7, 0.4, 0.9, 2.5];
    // full model: Newton on all rows
    let mut full: Vec<f64> = starts.iter().filter_map(|&s| find_equilibrium_dae(&TwoRest, &[s, s], &cfg).ok()).map(|w| w[0]).collect();
    // reduced model: secant on the slow rate with the fast state on the manifold
    let slow_rate = |z: f64| {
        let (w, _) = fast_equilibrium_dae(&TwoRest, &[z, z], FastSolveOptions::default(), &cfg).unwrap();
        TwoRest.eval(&w, None)[0]
    };
    let mut reduced = Vec::new();
    for &s in &starts {
        let (mut a, mut b) = (s, s + 0.1);
        for _ in 0..60 {
            let (fa, fb) = (slow_rate(a), slow_rate(b));
            if fb == fa {
                break;
            }
            let c = b - fb * (b - a) / (fb - fa);
            a = b;
            b = c;
        }
        if slow_rate(b).abs() < 1e-10 {
            reduced.push(b);
        }
    }
    distinct(&mut full);
    distinct(&mut reduced);
    assert_eq!(full.len(), 2);
    assert_eq!(full.len(), reduced.len());
    for (a, b) in full.iter().zip(&reduced) {
        assert!((a - b).abs() <= 1e-8);
    }
}

/// `ẋ = −x + y` with `0 = y − c·x`.
struct Scalar(f64);

impl Dae for Scalar {
    fn dims(&self) -> Dims {
        Dims { n_zc: 0, n_x: 1, n_y: 1 }
    }
    fn eval(&self, w: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
        if let Some(j) = jac {
            *j = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -self.0, 1.0]);
        }
        vec![-w[0] + w[1], w[1] - self.0 * w[0]]
    }
}

#[test]
fn scalar_reduced_matrix_membership() {
    let mut j = DMatrix::zeros(0, 0);
    Scalar(0.5).eval(&[0.0, 0.0], Some(&mut j));
    let c = classify_dae(&j, &Scalar(0.5).dims());
    assert!(c.in_gamma_s);
    assert!((c.max_real + 0.5).abs() < 1e-15);
    Scalar(2.0).eval(&[0.0, 0.0], Some(&mut j));
    let c = classify_dae(&j, &Scalar(2.0).dims());
    assert!(!c.in_gamma_s);
    assert!((c.max_real - 1.0).abs() < 1e-15);
}

/// Finite eigenvalues of the pencil `(J, diag(I, 0))`: the roots of
/// `det(J − λE)`, a polynomial of degree `n_x` recovered by interpolation.
fn pencil_eigenvalues(j: &DMatrix<f64>, nx: usize) -> Vec<Complex64> {
    let det_at = |lam: f64| {
        let mut m = j.clone();
        for i in 0..nx {
            m[(i, i)] -= lam;
        }
        m.determinant()
    };
    let pts: Vec<f64> = (0..=nx).map(|k| k as f64).collect();
    let v = DMatrix::from_fn(nx + 1, nx + 1, |r, c| pts[r].powi(c as i32));
    let rhs = DVector::from_iterator(nx + 1, pts.iter().map(|&p| det_at(p)));
    let coef = v.lu().solve(&rhs).unwrap();
    let lead = coef[nx];
    let comp = DMatrix::from_fn(nx, nx, |r, c| {
        if r == 0 {
            -coef[nx - 1 - c] / lead
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    comp.complex_eigenvalues().iter().copied().collect()
}

fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

#[test]
fn reduced_spectrum_equals_pencil_spectrum() {
    let mut r = rng(5);
    for _ in 0..50 {
        let (nx, ny) = (3, 2);
        let n = nx + ny;
        let mut j = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
        for i in nx..n {
            j[(i, i)] += 3.0;
        }
        let c = classify_dae(&j, &Dims { n_zc: 0, n_x: nx, n_y: ny });
        let a = sorted(c.eigenvalues);
        let b = sorted(pencil_eigenvalues(&j, nx));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() <= 1e-8, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn smib_equilibrium_matches_closed_form() {
    let l = load(suite::SMIB);
    let g = &l.case.generators[0];
    let (p, x) = (g.p_set, 0.2);
    // terminal bus at V = 1 feeding an infinite bus at 1∠0 through jx
    let th = (p * x).asin();
    let q = (1.0 - th.cos()) / x;
    let v = Complex64::from_polar(1.0, th);
    let i = (Complex64::new(p, q) / v).conj();
    let e = v + Complex64::new(g.ra, g.xq) * i;
    let delta = e.arg();
    let rot = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_2 - delta);
    let (idq, vdq) = (i * rot, v * rot);
    let (id, iq, vd, vq) = (idq.re, idq.im, vdq.re, vdq.im);
    let eqp = vq + g.ra * iq + g.xd_prime * id;
    let edp = vd + g.ra * id - g.xq_prime * iq;
    let efd = eqp + (g.xd - g.xd_prime) * id;
    let lay = &l.model.layout;
    let w = l.start.part.gather();
    let got = [w[lay.gen(0, 0)], w[lay.gen(0, 2)], w[lay.gen(0, 3)], w[lay.avr(0, 2)], w[lay.gen_id(0)], w[lay.gen_iq(0)], w[lay.bus_theta(1)]];
    let want = [delta, eqp, edp, efd, id, iq, th];
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-9, "{got:?} vs {want:?}");
    }
}

#[test]
fn initial_point_reproduces_the_power_flow_schedule() {
    let l = load(suite::CASE1);
    let lay = &l.model.layout;
    let w = l.start.part.gather();
    for (i, gb) in l.model.gens.iter().enumerate() {
        let bus = gb.bus;
        let (v, th) = (w[lay.bus_v(bus)], w[lay.bus_theta(bus)]);
        let (s, c) = (w[lay.gen(i, 0)] - th).sin_cos();
        let p = v * s * w[lay.gen_id(i)] + v * c * w[lay.gen_iq(i)];
        assert!((v - gb.params.v_set).abs() <= 1e-8);
        assert!((p - gb.params.p_set).abs() <= 1e-8, "{}: {p}", gb.params.id);
    }
    assert!(inf_norm(&l.model.residuals_at(&l.start).g) <= 1e-8);
}

#[test]
fn exact_equilibrium_takes_no_newton_iterations() {
    let l = load(suite::CASE1);
    let w = l.start.part.gather();
    let modes = l.model.modes_at(&w, &l.start.clocks);
    let view = ModelAt {
        model: &l.model,
        grid: &l.start.grid,
        modes: &modes,
    };
    let key = MatrixKey {
        form: 0,
        dt_bits: 0,
        grid_revision: 0,
        modes: modes.clone(),
    };
    let (_, stats) = solve_form(&view, Form::EQUILIBRIUM, &w, &w, 0.0, &mut LuCache::new(), key, &EQUILIBRIUM_NEWTON).unwrap();
    assert_eq!(stats.iterations, 0);
}

#[test]
fn dominant_eigenvalue_matches_simulated_decay() {
    let l = load(suite::STABLE);
    let eq = settled_point(&l, 300.0);
    assert!(classify_gamma_s(&l.model, &eq).in_gamma_s);
    let (lambda, fitted) = eigenvalue_and_decay_fit(&l, &eq);
    let rel = (fitted.re - lambda.re).abs() / lambda.re.abs();
    assert!(rel <= 1e-2, "fitted {fitted} vs eigenvalue {lambda}");
}
