//! ℓ1-regularized least squares,
//!
//! ```text
//! minimize ½‖x − Dα‖² + λ‖α‖₁
//! ```
//!
//! solved per query window. Every returned code carries its objective and a
//! KKT residual so callers can check optimality independently of the
//! algorithm that produced it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SparseError {
    #[error("query has {got} samples, dictionary atoms have {want}")]
    Shape { got: usize, want: usize },
    #[error("query contains non-finite values")]
    NonFinite,
    #[error("invalid solver config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cyclic coordinate minimization on the Gram matrix.
    #[default]
    CoordinateDescent,
    /// Monotone accelerated proximal gradient with step `1/L`.
    Fista,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol_kkt: f64,
    /// Relative objective decrease below which progress counts as stalled.
    pub tol_obj: f64,
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            max_iter: 10_000,
            tol_kkt: 1e-6,
            tol_obj: 1e-10,
            method: Method::CoordinateDescent,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SparseError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SparseError::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.tol_kkt > 0.0 && self.tol_obj > 0.0) {
            return Err(SparseError::Config("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(SparseError::Config("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub nnz: usize,
    pub converged: bool,
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `½‖x − Dα‖² + λ‖α‖₁`, from an explicitly formed residual.
pub fn objective(x: &[f64], dict: &Matrix, alpha: &[f64], lambda: f64) -> f64 {
    let fit = dict.mul_vec(alpha);
    let sq: f64 = x.iter().zip(&fit).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * sq + lambda * alpha.iter().map(|a| a.abs()).sum::<f64>()
}

/// Largest violation of the subgradient optimality conditions, given the
/// correlations `c = Dᵀ(x − Dα)`.
fn kkt_from_correlation(corr: &[f64], alpha: &[f64], lambda: f64) -> f64 {
    corr.iter()
        .zip(alpha)
        .map(|(&c, &a)| {
            if a == 0.0 {
                (c.abs() - lambda).max(0.0)
            } else {
                (c - lambda * a.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Optimality certificate; zero exactly at a minimizer.
pub fn kkt_residual(x: &[f64], dict: &Matrix, alpha: &[f64], lambda: f64) -> f64 {
    let fit = dict.mul_vec(alpha);
    let r: Vec<f64> = x.iter().zip(&fit).map(|(a, b)| a - b).collect();
    kkt_from_correlation(&dict.tr_mul_vec(&r), alpha, lambda)
}

pub fn solve_l1ls(x: &[f64], dict: &Matrix, cfg: &SolverConfig) -> Result<SparseCode, SparseError> {
    cfg.validate()?;
    if x.len() != dict.rows() {
        return Err(SparseError::Shape {
            got: x.len(),
            want: dict.rows(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SparseError::NonFinite);
    }
    let problem = Problem::new(x, dict, cfg.lambda);
    let (alpha, iterations) = match cfg.method {
        Method::CoordinateDescent => problem.coordinate_descent(cfg),
        Method::Fista => problem.fista(cfg),
    };
    let kkt = kkt_residual(x, dict, &alpha, cfg.lambda);
    Ok(SparseCode {
        objective: objective(x, dict, &alpha, cfg.lambda),
        kkt_residual: kkt,
        iterations,
        nnz: alpha.iter().filter(|a| **a != 0.0).count(),
        converged: kkt <= cfg.tol_kkt,
        alpha,
    })
}

struct Problem<'a> {
    x: &'a [f64],
    dict: &'a Matrix,
    gram: Matrix,
    /// `Dᵀx`
    dtx: Vec<f64>,
    xx: f64,
    lambda: f64,
}

/// Sweeps over which the relative objective decrease is measured when
/// deciding that the solver has stalled.
const STALL_WINDOW: usize = 500;

impl<'a> Problem<'a> {
    fn new(x: &'a [f64], dict: &'a Matrix, lambda: f64) -> Self {
        Self {
            x,
            dict,
            gram: dict.gram(),
            dtx: dict.tr_mul_vec(x),
            xx: dot(x, x),
            lambda,
        }
    }

    fn exact_correlation(&self, alpha: &[f64]) -> Vec<f64> {
        let fit = self.dict.mul_vec(alpha);
        let r: Vec<f64> = self.x.iter().zip(&fit).map(|(a, b)| a - b).collect();
        self.dict.tr_mul_vec(&r)
    }

    /// Objective from Gram quantities: `½(xᵀx − cᵀα − gᵀα) + λ‖α‖₁`, where
    /// `g = c − Gα`.
    fn objective_from(&self, alpha: &[f64], corr: &[f64]) -> f64 {
        0.5 * (self.xx - dot(&self.dtx, alpha) - dot(corr, alpha))
            + self.lambda * alpha.iter().map(|a| a.abs()).sum::<f64>()
    }

    /// Solves the normal equations restricted to the current support and
    /// sign pattern, `G_SS a = (Dᵀx)_S − λ s_S`, and moves toward `a`. When a
    /// coefficient would change sign the move stops where the first one
    /// reaches zero; the objective is convex along the segment with its
    /// minimum at `a`, so it decreases either way. Returns the new point with
    /// its correlation and objective unless it fails to improve on `current`.
    fn refine(&self, alpha: &[f64], current: f64) -> Option<(Vec<f64>, Vec<f64>, f64)> {
        let support: Vec<usize> = (0..alpha.len()).filter(|&k| alpha[k] != 0.0).collect();
        if support.is_empty() {
            return None;
        }
        let m = support.len();
        let g = DMatrix::from_fn(m, m, |i, j| self.gram.get(support[i], support[j]));
        let rhs = DVector::from_fn(m, |i, _| {
            let k = support[i];
            self.dtx[k] - self.lambda * alpha[k].signum()
        });
        let a = g.cholesky()?.solve(&rhs);
        if a.iter().any(|v| !v.is_finite()) {
            return None;
        }

        let mut step = 1.0;
        let mut blocking = None;
        for (i, &k) in support.iter().enumerate() {
            if a[i] * alpha[k].signum() <= 0.0 {
                let t = alpha[k] / (alpha[k] - a[i]);
                if t < step {
                    step = t;
                    blocking = Some(k);
                }
            }
        }
        let mut refined = vec![0.0; alpha.len()];
        for (i, &k) in support.iter().enumerate() {
            refined[k] = alpha[k] + step * (a[i] - alpha[k]);
        }
        if let Some(k) = blocking {
            refined[k] = 0.0;
        }

        let ga = self.gram.mul_vec(&refined);
        let corr: Vec<f64> = self.dtx.iter().zip(ga).map(|(c, g)| c - g).collect();
        let obj = self.objective_from(&refined, &corr);
        (obj <= current).then_some((refined, corr, obj))
    }

    fn stalled(history: &[f64], tol_obj: f64) -> bool {
        if history.len() <= STALL_WINDOW {
            return false;
        }
        let then = history[history.len() - 1 - STALL_WINDOW];
        let now = *history.last().unwrap();
        then - now <= tol_obj * now.abs().max(f64::MIN_POSITIVE)
    }

    fn coordinate_descent(&self, cfg: &SolverConfig) -> (Vec<f64>, usize) {
        let p = self.dict.cols();
        let lambda = self.lambda;
        let mut alpha = vec![0.0; p];
        // correlation with the residual, Dᵀ(x − Dα), kept up to date
        let mut corr = self.dtx.clone();
        let mut history = vec![self.objective_from(&alpha, &corr)];

        for sweep in 1..=cfg.max_iter {
            let mut moved = false;
            for k in 0..p {
                let gkk = self.gram.get(k, k);
                if gkk <= 0.0 {
                    continue;
                }
                let updated = soft_threshold(corr[k] + gkk * alpha[k], lambda) / gkk;
                let delta = updated - alpha[k];
                if delta != 0.0 {
                    alpha[k] = updated;
                    for (c, g) in corr.iter_mut().zip(self.gram.column(k)) {
                        *c -= delta * g;
                    }
                    moved = true;
                }
            }

            let mut obj = self.objective_from(&alpha, &corr);
            // correlated atoms make plain sweeps crawl; jump to the support's exact solution
            if kkt_from_correlation(&corr, &alpha, lambda) > cfg.tol_kkt {
                if let Some((a, c, o)) = self.refine(&alpha, obj) {
                    alpha = a;
                    corr = c;
                    obj = o;
                }
            }
            let prev = *history.last().unwrap();
            debug_assert!(
                obj <= prev + 1e-9 * prev.abs().max(1.0),
                "objective increased: {prev} -> {obj}"
            );
            history.push(obj);

            if kkt_from_correlation(&corr, &alpha, lambda) <= cfg.tol_kkt {
                // confirm against an explicitly formed residual before stopping
                corr = self.exact_correlation(&alpha);
                if kkt_from_correlation(&corr, &alpha, lambda) <= cfg.tol_kkt {
                    return (alpha, sweep);
                }
            }
            if !moved || Self::stalled(&history, cfg.tol_obj) {
                return (alpha, sweep);
            }
        }
        (alpha, cfg.max_iter)
    }

    fn fista(&self, cfg: &SolverConfig) -> (Vec<f64>, usize) {
        let p = self.dict.cols();
        let lambda = self.lambda;
        let lipschitz = self.gram.largest_eigenvalue(1e-6, 10_000);
        if lipschitz <= 0.0 {
            return (vec![0.0; p], 0);
        }
        let step = 1.0 / lipschitz;
        let correlation = |a: &[f64]| -> Vec<f64> {
            let ga = self.gram.mul_vec(a);
            self.dtx.iter().zip(ga).map(|(c, g)| c - g).collect()
        };

        let mut x = vec![0.0; p];
        let mut x_corr = self.dtx.clone();
        let mut x_obj = self.objective_from(&x, &x_corr);
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut history = vec![x_obj];

        for iter in 1..=cfg.max_iter {
            let y_corr = correlation(&y);
            let z: Vec<f64> = y
                .iter()
                .zip(&y_corr)
                .map(|(yi, ci)| soft_threshold(yi + step * ci, step * lambda))
                .collect();
            let z_corr = correlation(&z);
            let z_obj = self.objective_from(&z, &z_corr);

            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let accept = z_obj <= x_obj;
            let x_prev = std::mem::take(&mut x);
            if accept {
                x = z.clone();
                x_corr = z_corr;
                x_obj = z_obj;
            } else {
                x = x_prev.clone();
            }
            // monotone variant: extrapolate through both the prox point and the kept iterate
            y = (0..p)
                .map(|i| {
                    x[i] + (t / t_next) * (z[i] - x[i]) + ((t - 1.0) / t_next) * (x[i] - x_prev[i])
                })
                .collect();
            t = t_next;
            if kkt_from_correlation(&x_corr, &x, lambda) > cfg.tol_kkt {
                if let Some((a, c, o)) = self.refine(&x, x_obj) {
                    x = a;
                    x_corr = c;
                    x_obj = o;
                    // restart momentum from the refined point
                    y = x.clone();
                    t = 1.0;
                }
            }
            history.push(x_obj);

            if kkt_from_correlation(&x_corr, &x, lambda) <= cfg.tol_kkt {
                x_corr = self.exact_correlation(&x);
                if kkt_from_correlation(&x_corr, &x, lambda) <= cfg.tol_kkt {
                    return (x, iter);
                }
            }
            if Self::stalled(&history, cfg.tol_obj) {
                return (x, iter);
            }
        }
        (x, cfg.max_iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix {
        Matrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
    }

    fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    /// Orthonormal columns by Gram–Schmidt on a random square matrix.
    fn orthonormal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let mut cols: Vec<Vec<f64>> = Vec::new();
        while cols.len() < n {
            let mut v = gaussian_vec(rng, n);
            for q in &cols {
                let d = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let nv = dot(&v, &v).sqrt();
            if nv > 1e-6 {
                cols.push(v.into_iter().map(|a| a / nv).collect());
            }
        }
        Matrix::from_columns(&cols)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        assert_eq!(soft_threshold(0.7, 0.0), 0.7);
    }

    #[test]
    fn large_lambda_gives_exact_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = gaussian_matrix(&mut rng, 30, 10);
        let x = gaussian_vec(&mut rng, 30);
        let lmax = d.tr_mul_vec(&x).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for method in [Method::CoordinateDescent, Method::Fista] {
            let cfg = SolverConfig {
                lambda: lmax,
                method,
                ..Default::default()
            };
            let code = solve_l1ls(&x, &d, &cfg).unwrap();
            assert!(code.alpha.iter().all(|&a| a == 0.0));
            assert_eq!(kkt_residual(&x, &d, &code.alpha, lmax), 0.0);
        }
    }

    #[test]
    fn single_atom_closed_form() {
        let d = Matrix::from_columns(&[vec![0.6, 0.8]]);
        let x = [1.2, 1.6];
        let code = solve_l1ls(&x, &d, &SolverConfig::with_lambda(0.5)).unwrap();
        assert!((code.alpha[0] - 1.5).abs() < 1e-12);
        assert!(code.converged);
    }

    #[test]
    fn orthonormal_dictionary_matches_soft_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = orthonormal(&mut rng, 12);
        let x = gaussian_vec(&mut rng, 12);
        let lambda = 0.4;
        let closed: Vec<f64> = d
            .tr_mul_vec(&x)
            .into_iter()
            .map(|c| soft_threshold(c, lambda))
            .collect();
        assert!(kkt_residual(&x, &d, &closed, lambda) <= 1e-12);
        for method in [Method::CoordinateDescent, Method::Fista] {
            let cfg = SolverConfig {
                lambda,
                method,
                ..Default::default()
            };
            let code = solve_l1ls(&x, &d, &cfg).unwrap();
            for (a, b) in code.alpha.iter().zip(&closed) {
                assert!((a - b).abs() <= 1e-8, "{method:?}: {a} vs {b}");
            }
        }

        let mut off = closed.clone();
        let k = off.iter().position(|a| *a != 0.0).unwrap();
        off[k] += 0.1;
        assert!(kkt_residual(&x, &d, &off, lambda) > 0.05);
    }

    #[test]
    fn shape_and_config_errors() {
        let d = Matrix::from_columns(&[vec![1.0, 0.0]]);
        assert!(matches!(
            solve_l1ls(&[1.0, 2.0, 3.0], &d, &SolverConfig::default()),
            Err(SparseError::Shape { got: 3, want: 2 })
        ));
        assert!(matches!(
            solve_l1ls(&[1.0, f64::NAN], &d, &SolverConfig::default()),
            Err(SparseError::NonFinite)
        ));
        assert!(solve_l1ls(&[1.0, 0.0], &d, &SolverConfig::with_lambda(-1.0)).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = gaussian_matrix(&mut rng, 20, 40);
        let x = gaussian_vec(&mut rng, 20);
        let cfg = SolverConfig {
            lambda: 0.05,
            max_iter: 1,
            tol_kkt: 1e-12,
            ..Default::default()
        };
        let code = solve_l1ls(&x, &d, &cfg).unwrap();
        assert!(!code.converged);
        assert!(code.kkt_residual > cfg.tol_kkt);
    }

    #[test]
    fn methods_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let d = gaussian_matrix(&mut rng, 40, 15);
            let x = gaussian_vec(&mut rng, 40);
            let cd = solve_l1ls(&x, &d, &SolverConfig::with_lambda(1.0)).unwrap();
            let fista = solve_l1ls(
                &x,
                &d,
                &SolverConfig {
                    lambda: 1.0,
                    method: Method::Fista,
                    max_iter: 100_000,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(cd.converged && fista.converged);
            assert!((cd.objective - fista.objective).abs() <= 1e-8 * cd.objective);
        }
    }

    #[test]
    fn nnz_shrinks_along_sampled_lambda_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cols: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let v = gaussian_vec(&mut rng, 60);
                let n = dot(&v, &v).sqrt();
                v.into_iter().map(|a| a / n).collect()
            })
            .collect();
        let d = Matrix::from_columns(&cols);
        let x: Vec<f64> = d
            .mul_vec(&(0..20).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect::<Vec<_>>())
            .into_iter()
            .zip(gaussian_vec(&mut rng, 60))
            .map(|(s, e)| s + 0.05 * e)
            .collect();
        let nnz: Vec<usize> = [0.01, 0.1, 0.2, 1.0]
            .iter()
            .map(|&l| solve_l1ls(&x, &d, &SolverConfig::with_lambda(l)).unwrap().nnz)
            .collect();
        assert!(nnz.windows(2).all(|w| w[0] >= w[1]), "{nnz:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn converged_codes_carry_certificate(seed in any::<u64>(), n in 2usize..60, p in 1usize..30, frac in 0.02f64..1.2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = gaussian_matrix(&mut rng, n, p);
            let x = gaussian_vec(&mut rng, n);
            let lmax = d.tr_mul_vec(&x).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let cfg = SolverConfig::with_lambda(frac * lmax);
            let code = solve_l1ls(&x, &d, &cfg).unwrap();
            prop_assert!(code.converged, "kkt {}", code.kkt_residual);
            prop_assert!(code.kkt_residual <= cfg.tol_kkt);
            prop_assert!((code.objective - objective(&x, &d, &code.alpha, cfg.lambda)).abs() <= 1e-10 * code.objective.max(1.0));
        }

        #[test]
        fn scaling_covariance(seed in any::<u64>(), c in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = gaussian_matrix(&mut rng, 25, 8);
            let x = gaussian_vec(&mut rng, 25);
            let tight = SolverConfig { lambda: 0.5, tol_kkt: 1e-10, ..Default::default() };
            let base = solve_l1ls(&x, &d, &tight).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let scaled = solve_l1ls(&xs, &d, &SolverConfig { lambda: 0.5 * c, tol_kkt: 1e-10 * c, ..tight }).unwrap();
            for (a, b) in base.alpha.iter().zip(&scaled.alpha) {
                prop_assert!((a * c - b).abs() <= 1e-7 * c.max(1.0), "{} vs {}", a * c, b);
            }
        }
    }
}
