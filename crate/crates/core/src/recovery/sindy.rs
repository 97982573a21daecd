//! Sequentially thresholded ridge regression on finite-difference
//! derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;

use super::{CoeffVector, RecoveryError, TermLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SindyConfig {
    pub ridge: f64,
    pub threshold: f64,
    pub iters: usize,
}

impl Default for SindyConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            threshold: 0.05,
            iters: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SindyFit {
    pub coeffs: CoeffVector,
    /// Mean squared residual of the derivative regression.
    pub derivative_mse: f64,
    pub warnings: Vec<String>,
}

/// Above this the normal equations are treated as singular.
const MAX_CONDITION: f64 = 1e14;

fn ridge_solve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    cols: &[usize],
    ridge: f64,
    state: usize,
) -> Result<Vec<f64>, RecoveryError> {
    let sub = x.select_columns(cols);
    let mut gram = sub.transpose() * &sub;
    for i in 0..cols.len() {
        gram[(i, i)] += ridge;
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
        (lo.min(e), hi.max(e.abs()))
    });
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(RecoveryError::Singular { state, condition });
    }
    let rhs = sub.transpose() * y;
    let chol = gram
        .cholesky()
        .ok_or(RecoveryError::Singular { state, condition })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Fits `ẋ ≈ A L(x, u)` one state equation at a time.
///
/// Derivatives come from central differences at interior samples. Each
/// round zeroes coefficients below `threshold` and refits on the
/// surviving terms; rounds stop early once the support is stable.
pub fn sindy_fit(
    traj: &Trajectory,
    lib: &TermLibrary,
    cfg: &SindyConfig,
) -> Result<SindyFit, RecoveryError> {
    let (n, m, len, p) = (traj.state_dim(), traj.input_dim(), traj.len(), lib.len());
    if n != lib.state_dim() || m != lib.input_dim() {
        return Err(RecoveryError::Dimension(format!(
            "trajectory has {n} states/{m} inputs, library expects {}/{}",
            lib.state_dim(),
            lib.input_dim()
        )));
    }
    if len < 3 {
        return Err(RecoveryError::TooShort {
            needed: 3,
            found: len,
        });
    }
    let mut warnings = Vec::new();
    if len < 2 * p {
        warnings.push(format!(
            "{len} samples for {p} library terms; at least {} recommended",
            2 * p
        ));
    }

    let rows = len - 2;
    let t = traj.times();
    let mut x = DMatrix::zeros(rows, p);
    let mut dy = DMatrix::zeros(rows, n);
    let mut buf = vec![0.0; p];
    for r in 0..rows {
        let i = r + 1;
        lib.eval_into(traj.y_row(i), traj.u_row(i), &mut buf);
        for (k, v) in buf.iter().enumerate() {
            x[(r, k)] = *v;
        }
        let h = t[i + 1] - t[i - 1];
        for j in 0..n {
            dy[(r, j)] = (traj.y_row(i + 1)[j] - traj.y_row(i - 1)[j]) / h;
        }
    }

    let mut values = vec![0.0; n * p];
    let mut sq_resid = 0.0;
    for state in 0..n {
        let target: DVector<f64> = dy.column(state).into_owned();
        let mut active: Vec<usize> = (0..p).collect();
        let mut coef = vec![0.0; p];
        for _ in 0..=cfg.iters {
            coef.fill(0.0);
            if active.is_empty() {
                break;
            }
            let sol = ridge_solve(&x, &target, &active, cfg.ridge, state)?;
            for (&k, v) in active.iter().zip(sol) {
                coef[k] = v;
            }
            let kept: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&k| coef[k].abs() >= cfg.threshold)
                .collect();
            if kept.len() == active.len() {
                break;
            }
            active = kept;
        }
        // Final refit already happened on `active`; drop anything thresholded.
        for k in 0..p {
            if !active.contains(&k) {
                coef[k] = 0.0;
            }
        }
        let pred = &x * DVector::from_column_slice(&coef);
        sq_resid += (pred - target).norm_squared();
        values[state * p..(state + 1) * p].copy_from_slice(&coef);
    }
    Ok(SindyFit {
        coeffs: CoeffVector::from_dense(n, p, values)?,
        derivative_mse: sq_resid / (rows * n) as f64,
        warnings,
    })
}
