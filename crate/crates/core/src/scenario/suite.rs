//! Scenarios bundled with the crate, and a few small analytic DAEs used to
//! check the engines against closed-form answers.

use super::{parse_case, parse_schedule, Case, EventSchedule};

#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub name: &'static str,
    case_json: &'static str,
    schedule_json: &'static str,
}

impl Scenario {
    /// The bundled case. Bundled documents are known to be valid.
    pub fn case(&self) -> Case {
        parse_case(self.case_json).unwrap_or_else(|e| panic!("bundled case {}: {e}", self.name))
    }

    pub fn schedule(&self) -> EventSchedule {
        parse_schedule(self.schedule_json).unwrap_or_else(|e| panic!("bundled schedule {}: {e}", self.name))
    }

    pub fn case_json(&self) -> &'static str {
        self.case_json
    }

    pub fn schedule_json(&self) -> &'static str {
        self.schedule_json
    }
}

macro_rules! fixture {
    ($name:literal, $stem:literal) => {
        Scenario {
            name: $name,
            case_json: include_str!(concat!("../../fixtures/", $stem, ".json")),
            schedule_json: include_str!(concat!("../../fixtures/", $stem, "_schedule.json")),
        }
    };
}

/// Single machine against an infinite bus, undisturbed.
pub const SMIB: Scenario = fixture!("smib", "smib");
/// 14-bus system with three line trips; the tap changer runs to its limit
/// and no limiter engages.
pub const STABLE: Scenario = fixture!("ieee14-stable", "ieee14_stable");
/// Tap changer at its limit followed by a limiter that keeps the machine
/// swinging.
pub const CASE1: Scenario = fixture!("ieee14-case1", "ieee14_case1");
/// Limiter action on a heavily loaded machine ending in loss of synchronism.
pub const CASE2: Scenario = fixture!("ieee14-case2", "ieee14_case2");

pub fn all() -> [Scenario; 4] {
    [SMIB, STABLE, CASE1, CASE2]
}

pub fn by_name(name: &str) -> Option<Scenario> {
    all().into_iter().find(|s| s.name == name)
}

/// Small DAEs with known solutions.
pub mod toy {
    use nalgebra::DMatrix;

    use crate::engine::{Dae, Dims};

    /// `ż = −a·z`, `ẋ = (z − x)/ε`, `0 = y − x`. The slow state decays at
    /// rate `a` and the fast state tracks it with time constant `ε`.
    #[derive(Debug, Clone, Copy)]
    pub struct TwoScale {
        pub a: f64,
        pub eps: f64,
    }

    impl TwoScale {
        /// Exact solution from `(z0, x0)` at time `t`, for `a·ε ≠ 1`.
        pub fn exact(&self, z0: f64, x0: f64, t: f64) -> (f64, f64) {
            let z = z0 * (-self.a * t).exp();
            let c = 1.0 / (1.0 - self.a * self.eps);
            let x = c * z + (x0 - c * z0) * (-t / self.eps).exp();
            (z, x)
        }
    }

    impl Dae for TwoScale {
        fn dims(&self) -> Dims {
            Dims { n_zc: 1, n_x: 1, n_y: 1 }
        }

        fn eval(&self, w: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
            if let Some(j) = jac {
                *j = DMatrix::from_row_slice(3, 3, &[-self.a, 0.0, 0.0, 1.0 / self.eps, -1.0 / self.eps, 0.0, 0.0, -1.0, 1.0]);
            }
            vec![-self.a * w[0], (w[0] - w[1]) / self.eps, w[2] - w[1]]
        }
    }

    /// `ż = μ`, `ẋ = z − x²`. The manifold `x = ±√z` folds at `z = 0`; the
    /// upper branch is stable.
    #[derive(Debug, Clone, Copy)]
    pub struct Fold {
        pub mu: f64,
    }

    impl Dae for Fold {
        fn dims(&self) -> Dims {
            Dims { n_zc: 1, n_x: 1, n_y: 0 }
        }

        fn eval(&self, w: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
            if let Some(j) = jac {
                *j = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -2.0 * w[1]]);
            }
            vec![self.mu, w[0] - w[1] * w[1]]
        }
    }

    /// Damped oscillator `ẍ + 2ζω·ẋ + ω²·x = 0` as two fast states, with a
    /// constant slow state that shifts the rest point.
    #[derive(Debug, Clone, Copy)]
    pub struct Oscillator {
        pub omega: f64,
        pub zeta: f64,
    }

    impl Oscillator {
        /// Eigenvalue with positive imaginary part.
        pub fn eigenvalue(&self) -> (f64, f64) {
            let re = -self.zeta * self.omega;
            (re, self.omega * (1.0 - self.zeta * self.zeta).sqrt())
        }
    }

    impl Dae for Oscillator {
        fn dims(&self) -> Dims {
            Dims { n_zc: 1, n_x: 2, n_y: 0 }
        }

        fn eval(&self, w: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
            let w2 = self.omega * self.omega;
            let c = 2.0 * self.zeta * self.omega;
            if let Some(j) = jac {
                *j = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, w2, -w2, -c]);
            }
            vec![0.0, w[2], w2 * (w[0] - w[1]) - c * w[2]]
        }
    }
}
