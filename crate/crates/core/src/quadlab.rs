//! Quadratic tasks with closed-form incremental and oracle solutions.
//!
//! Task `i` has loss `L_i(theta) = 1/2 (theta - mu_i)^T A_i (theta - mu_i)`
//! with symmetric PSD curvature `A_i`. Everything here is exact linear
//! algebra, which makes it the reference for the increment transform: the
//! Fisher-ratio correction applied to the incremental minimizer can be
//! compared against the true joint minimizer without any training noise.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const RIDGE: f64 = 1e-12;
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTask {
    a: DMatrix<f64>,
    mu: DVector<f64>,
}

impl QuadraticTask {
    pub fn new(a: DMatrix<f64>, mu: DVector<f64>) -> Result<Self> {
        check_psd(&a)?;
        if mu.len() != a.nrows() {
            return Err(Error::Shape(format!(
                "minimizer of length {} for a {}x{} curvature",
                mu.len(),
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(Self { a, mu })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn loss(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - &self.mu;
        0.5 * d.dot(&(&self.a * &d))
    }

    pub fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.a * (theta - &self.mu)
    }
}

/// Rejects matrices that are not square, symmetric and PSD within tolerance.
pub fn check_psd(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotPsd(format!(
            "{}x{} is not square",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("curvature matrix"));
    }
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * a.amax().max(1.0) {
        return Err(Error::NotPsd(format!("asymmetry {asym:e}")));
    }
    let min = SymmetricEigen::new(a.clone()).eigenvalues.min();
    if min < -PSD_TOL {
        return Err(Error::NotPsd(format!("eigenvalue {min:e}")));
    }
    Ok(())
}

/// Solves `m x = rhs` for symmetric PSD `m`, adding a tiny ridge when the
/// plain factorization fails.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c.solve(rhs));
    }
    let n = m.nrows();
    let ridged = m + DMatrix::identity(n, n) * RIDGE;
    Cholesky::new(ridged).map(|c| c.solve(rhs)).ok_or_else(|| {
        Error::Singular(format!(
            "{n}x{n} system stays singular after a {RIDGE:e} ridge"
        ))
    })
}

fn check_residual(residual: f64, scale: f64) -> Result<()> {
    let tolerance = RESIDUAL_TOL * scale.max(1.0);
    if residual > tolerance {
        return Err(Error::Residual {
            residual,
            tolerance,
        });
    }
    Ok(())
}

/// Minimizer of `L_t(theta) + 1/2 |theta - anchor|^2_{h_prev}`.
pub fn solve_incremental(
    task: &QuadraticTask,
    anchor: &DVector<f64>,
    h_prev: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let m = task.a() + h_prev;
    let rhs = task.a() * task.mu() + h_prev * anchor;
    let theta = solve_spd(&m, &rhs)?;
    let residual = (task.grad(&theta) + h_prev * (&theta - anchor)).amax();
    check_residual(residual, rhs.amax())?;
    Ok(theta)
}

/// Minimizer of `sum_i L_i(theta) + 1/2 |theta - anchor|^2_{h_prev}` over
/// every task in `tasks`.
pub fn solve_oracle(
    tasks: &[QuadraticTask],
    anchor: &DVector<f64>,
    h_prev: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidConfig("no tasks".into()))?;
    let n = first.dim();
    let mut m = h_prev.clone();
    let mut rhs = h_prev * anchor;
    for t in tasks {
        if t.dim() != n {
            return Err(Error::Shape("tasks of different dimension".into()));
        }
        m += t.a();
        rhs += t.a() * t.mu();
    }
    let theta = solve_spd(&m, &rhs)?;
    let mut g = h_prev * (&theta - anchor);
    for t in tasks {
        g += t.grad(&theta);
    }
    check_residual(g.amax(), rhs.amax())?;
    Ok(theta)
}

/// `anchor + (h_prev + h_cur)^{-1} h_cur (theta - anchor)`.
///
/// Evaluated as `d/2 + (P + T)^{-1} (T - P) d / 2`, the same matrix written
/// so that equal curvatures give the midpoint without any solve error.
pub fn proposition1_predict(
    anchor: &DVector<f64>,
    theta: &DVector<f64>,
    h_prev: &DMatrix<f64>,
    h_cur: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let d = theta - anchor;
    let skew = solve_spd(&(h_prev + h_cur), &((h_cur - h_prev) * &d))?;
    Ok(anchor + (d + skew) * 0.5)
}

/// Seeded random PSD generation: `A = G^T G + ridge I` with standard-normal
/// `G`, minimizers standard normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub min_dim: usize,
    pub max_dim: usize,
    pub ridge: f64,
    /// Off-diagonal correlation imposed on every curvature (0 keeps `G^T G`).
    pub correlation: Option<f64>,
    /// Subtracts a multiple of `e_1 e_1^T` so the first task is indefinite.
    pub corrupt: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_dim: 1,
            max_dim: 20,
            ridge: 1e-6,
            correlation: None,
            corrupt: false,
        }
    }
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = g.transpose() * g + DMatrix::identity(n, n) * ridge;
    // Exact symmetry.
    (&a + a.transpose()) * 0.5
}

/// `d^{1/2} C d^{1/2}` with `C` ones on the diagonal and `rho` elsewhere and
/// `d` a random positive scale per coordinate.
fn correlated_psd(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> DMatrix<f64> {
    let scale: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.5..2.0f64).sqrt())
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let c = if i == j { 1.0 } else { rho };
        scale[i] * c * scale[j]
    })
}

pub fn random_instance(
    rng: &mut ChaCha8Rng,
    dim: usize,
    tasks: usize,
    cfg: &GeneratorConfig,
) -> Result<Vec<QuadraticTask>> {
    (0..tasks)
        .map(|k| {
            let mut a = match cfg.correlation {
                Some(rho) => correlated_psd(rng, dim, rho),
                None => random_psd(rng, dim, cfg.ridge),
            };
            if cfg.corrupt && k == 0 {
                a[(0, 0)] -= a.trace() + 1.0;
            }
            let mu = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            QuadraticTask::new(a, mu)
        })
        .collect()
}

/// Exact minimizers paired with cumulative curvatures, one entry per task.
pub type OracleChain = (Vec<DVector<f64>>, Vec<DMatrix<f64>>);

/// Recursive exact solutions: `theta*_1 .. theta*_t` and cumulative
/// curvatures `H_1 .. H_t`.
pub fn oracle_chain(tasks: &[QuadraticTask]) -> Result<OracleChain> {
    let n = tasks
        .first()
        .ok_or_else(|| Error::InvalidConfig("no tasks".into()))?
        .dim();
    let mut stars = Vec::with_capacity(tasks.len());
    let mut hs = Vec::with_capacity(tasks.len());
    let mut anchor = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, n);
    for t in 1..=tasks.len() {
        let star = solve_oracle(&tasks[..t], &anchor, &h)?;
        h += tasks[t - 1].a();
        anchor = star.clone();
        stars.push(star);
        hs.push(h.clone());
    }
    Ok((stars, hs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapTrial {
    pub trial: usize,
    pub t: usize,
    pub dim: usize,
    /// Max-norm distance between the full-matrix prediction and the oracle.
    pub gap_full: f64,
    /// Same with every curvature replaced by its diagonal.
    pub gap_diag: f64,
    /// Gradient norm of the previous objective at the anchor used.
    pub anchor_grad_norm: f64,
}

/// Compares the prediction at step `t` against the oracle on one instance.
/// `anchor_offset` displaces the previous solution to emulate an anchor that
/// has not converged.
pub fn gap_at(
    tasks: &[QuadraticTask],
    t: usize,
    anchor_offset: Option<&DVector<f64>>,
) -> Result<(f64, f64, f64)> {
    if t < 2 || t > tasks.len() {
        return Err(Error::InvalidConfig(format!(
            "step {t} outside 2..={}",
            tasks.len()
        )));
    }
    let (stars, hs) = oracle_chain(&tasks[..t - 1])?;
    let mut anchor = stars[t - 2].clone();
    let h_prev = hs[t - 2].clone();
    if let Some(off) = anchor_offset {
        anchor += off;
    }
    // Gradient of the objective that produced the anchor.
    let (prev_anchor, prev_h) = if t >= 3 {
        (stars[t - 3].clone(), hs[t - 3].clone())
    } else {
        (
            DVector::zeros(anchor.len()),
            DMatrix::zeros(anchor.len(), anchor.len()),
        )
    };
    let mut g = &prev_h * (&anchor - &prev_anchor);
    for task in &tasks[..t - 1] {
        g += task.grad(&anchor);
    }

    let task = &tasks[t - 1];
    let theta = solve_incremental(task, &anchor, &h_prev)?;
    let oracle = solve_oracle(&tasks[..t], &anchor, &h_prev)?;
    let h_cur = &h_prev + task.a();
    let full = proposition1_predict(&anchor, &theta, &h_prev, &h_cur)?;
    let diag = proposition1_predict(
        &anchor,
        &theta,
        &DMatrix::from_diagonal(&h_prev.diagonal()),
        &DMatrix::from_diagonal(&h_cur.diagonal()),
    )?;
    Ok(((full - &oracle).amax(), (diag - &oracle).amax(), g.norm()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalComparison {
    pub gap_full: f64,
    pub gap_diag: f64,
}

/// Cost of replacing every curvature by its diagonal in the step-`t`
/// prediction, measured against the oracle with a converged anchor.
pub fn diagonalized_comparison(tasks: &[QuadraticTask], t: usize) -> Result<DiagonalComparison> {
    let (gap_full, gap_diag, _) = gap_at(tasks, t, None)?;
    Ok(DiagonalComparison { gap_full, gap_diag })
}

/// Gap statistics over `trials` random instances at step `t`.
pub fn proposition1_gap(
    cfg: &GeneratorConfig,
    t: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<GapTrial>> {
    if cfg.min_dim == 0 || cfg.min_dim > cfg.max_dim {
        return Err(Error::InvalidConfig("need 1 <= min_dim <= max_dim".into()));
    }
    (0..trials)
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
            let dim = rng.random_range(cfg.min_dim..=cfg.max_dim);
            let tasks = random_instance(&mut rng, dim, t, cfg)?;
            let (gap_full, gap_diag, anchor_grad_norm) = gap_at(&tasks, t, None)?;
            Ok(GapTrial {
                trial,
                t,
                dim,
                gap_full,
                gap_diag,
                anchor_grad_norm,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub trials: usize,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
}

pub fn gap_stats(values: &[f64]) -> Option<GapStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    Some(GapStats {
        trials: n,
        max: v[n - 1],
        median,
        mean: v.iter().sum::<f64>() / n as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBound {
    pub max_eigenvalue: f64,
    pub bound_value: f64,
    pub attained_direction: Vec<f64>,
}

/// Largest eigenvalue of a symmetric PSD matrix and its eigenvector. Stops
/// once `|H v - lambda v| <= tol * lambda`.
pub fn power_iteration(
    h: &DMatrix<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(f64, DVector<f64>)> {
    let n = h.nrows();
    if n == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i + 1) as f64).sin());
    v /= v.norm();
    for _ in 0..max_iters {
        let w = h * &v;
        let lambda = v.dot(&w);
        let resid = (&w - &v * lambda).norm();
        if resid <= tol * lambda.abs() || w.norm() == 0.0 {
            return Ok((lambda, v));
        }
        v = &w / w.norm();
    }
    Err(Error::NoConvergence(max_iters))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    /// `L_1(theta) - L_1(theta_1)`, exact for a quadratic.
    pub forgetting: f64,
    pub loss_at_theta: f64,
    pub bound: SpectralBound,
}

/// Forgetting of a quadratic task after moving from its minimizer `theta1`
/// to `theta`, and the spectral bound `1/2 lambda_max |delta|^2`.
pub fn forgetting_and_bound(
    h1: &DMatrix<f64>,
    theta: &DVector<f64>,
    theta1: &DVector<f64>,
    l1_min: f64,
) -> Result<ForgettingReport> {
    check_psd(h1)?;
    let delta = theta - theta1;
    let forgetting = 0.5 * delta.dot(&(h1 * &delta));
    let (lambda, v) = power_iteration(h1, 1e-9, POWER_MAX_ITERS)?;
    Ok(ForgettingReport {
        forgetting,
        loss_at_theta: l1_min + forgetting,
        bound: SpectralBound {
            max_eigenvalue: lambda,
            bound_value: 0.5 * lambda * delta.norm_squared(),
            attained_direction: v.iter().copied().collect(),
        },
    })
}
