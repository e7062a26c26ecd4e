//! Simplified Newton iteration with a cached LU factorization.
//!
//! The iteration matrix is reused across steps while its key (equation
//! form, step size, limit modes, grid revision) is unchanged and the
//! iteration contracts fast enough. A slow or failed iteration refactors
//! at the current iterate before giving up.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{SimError, SimResult};
use crate::model::{inf_norm, Modes};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 20 }
    }
}

/// Identifies the structure an iteration matrix was built for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixKey {
    pub form: u8,
    pub dt_bits: u64,
    pub grid_revision: u64,
    pub modes: Modes,
}

#[derive(Default)]
pub struct LuCache {
    key: Option<MatrixKey>,
    lu: Option<LU<f64, Dyn, Dyn>>,
    pub factorizations: usize,
}

impl LuCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.key = None;
        self.lu = None;
    }

    fn factor(&mut self, m: DMatrix<f64>, key: MatrixKey) {
        self.factorizations += 1;
        self.lu = Some(m.lu());
        self.key = Some(key);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `R(w) = 0` from `w0`. `jacobian` is only called when the cached
/// factorization is missing, stale, or contracting poorly.
pub fn newton(
    w0: &[f64],
    mut residual: impl FnMut(&[f64]) -> Vec<f64>,
    mut jacobian: impl FnMut(&[f64]) -> DMatrix<f64>,
    cache: &mut LuCache,
    key: MatrixKey,
    cfg: &NewtonConfig,
) -> SimResult<(Vec<f64>, NewtonStats)> {
    let first = attempt(w0, &mut residual, &mut jacobian, cache, &key, cfg, false);
    match first {
        Ok(r) => Ok(r),
        Err((err, fresh)) => {
            if fresh {
                return Err(err);
            }
            attempt(w0, &mut residual, &mut jacobian, cache, &key, cfg, true).map_err(|(e, _)| e)
        }
    }
}

/// One Newton run. On error also reports whether the matrix in use at the
/// end was freshly built.
fn attempt(
    w0: &[f64],
    residual: &mut impl FnMut(&[f64]) -> Vec<f64>,
    jacobian: &mut impl FnMut(&[f64]) -> DMatrix<f64>,
    cache: &mut LuCache,
    key: &MatrixKey,
    cfg: &NewtonConfig,
    force_fresh: bool,
) -> Result<(Vec<f64>, NewtonStats), (SimError, bool)> {
    let mut w = w0.to_vec();
    let mut r = residual(&w);
    let mut norm = inf_norm(&r);
    if norm <= cfg.tol {
        return Ok((w, NewtonStats { iterations: 0, residual: norm }));
    }
    let mut fresh = false;
    if force_fresh || cache.key.as_ref() != Some(key) || cache.lu.is_none() {
        cache.factor(jacobian(&w), key.clone());
        fresh = true;
    }
    for it in 1..=cfg.max_iter {
        let rhs = DVector::from_vec(r);
        let dw = match cache.lu.as_ref().and_then(|lu| lu.solve(&rhs)) {
            Some(d) => d,
            None => {
                cache.clear();
                return Err((SimError::SingularMatrix, fresh));
            }
        };
        for (wi, d) in w.iter_mut().zip(dw.iter()) {
            *wi -= d;
        }
        r = residual(&w);
        let new_norm = inf_norm(&r);
        if !new_norm.is_finite() {
            return Err((
                SimError::NewtonFailure {
                    residual: new_norm,
                    iterations: it,
                },
                fresh,
            ));
        }
        if new_norm <= cfg.tol {
            return Ok((
                w,
                NewtonStats {
                    iterations: it,
                    residual: new_norm,
                },
            ));
        }
        if new_norm > 0.5 * norm && it < cfg.max_iter {
            cache.factor(jacobian(&w), key.clone());
            fresh = true;
        }
        norm = new_norm;
    }
    Err((
        SimError::NewtonFailure {
            residual: norm,
            iterations: cfg.max_iter,
        },
        fresh,
    ))
}
