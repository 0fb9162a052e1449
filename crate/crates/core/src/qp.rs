//! Dense box-constrained convex QP, primal active-set.
//!
//! minimize ½ xᵀHx + fᵀx  subject to  lower ≤ x ≤ upper, with H positive definite.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStatus {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    pub status: Vec<BoundStatus>,
    pub iterations: usize,
}

pub fn solve_box_qp(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    start: &DVector<f64>,
) -> Result<BoxQpSolution> {
    let n = f.len();
    if h.nrows() != n || h.ncols() != n || lower.len() != n || upper.len() != n || start.len() != n {
        return Err(Error::InvalidArgument("box QP dimension mismatch".into()));
    }
    if (0..n).any(|i| !(lower[i] <= upper[i])) {
        return Err(Error::InvalidArgument("box QP with empty box".into()));
    }

    let mut x = DVector::from_fn(n, |i, _| start[i].clamp(lower[i], upper[i]));
    let mut status: Vec<BoundStatus> = (0..n)
        .map(|i| {
            if x[i] <= lower[i] {
                BoundStatus::Lower
            } else if x[i] >= upper[i] {
                BoundStatus::Upper
            } else {
                BoundStatus::Free
            }
        })
        .collect();

    let max_iter = 20 * n + 50;
    for iteration in 1..=max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == BoundStatus::Free).collect();
        let candidate = equality_solution(h, f, &x, &free)?;

        let mut blocking: Option<(f64, usize)> = None;
        for &i in &free {
            let p = candidate[i] - x[i];
            let ratio = if candidate[i] < lower[i] {
                (lower[i] - x[i]) / p
            } else if candidate[i] > upper[i] {
                (upper[i] - x[i]) / p
            } else {
                continue;
            };
            let ratio = ratio.clamp(0.0, 1.0);
            if blocking.is_none_or(|(best, _)| ratio < best) {
                blocking = Some((ratio, i));
            }
        }

        if let Some((alpha, i)) = blocking {
            for &j in &free {
                x[j] += alpha * (candidate[j] - x[j]);
            }
            if candidate[i] < lower[i] {
                x[i] = lower[i];
                status[i] = BoundStatus::Lower;
            } else {
                x[i] = upper[i];
                status[i] = BoundStatus::Upper;
            }
            continue;
        }

        for &j in &free {
            x[j] = candidate[j];
        }
        let grad = h * &x + f;
        let scale = 1.0 + grad.amax();
        let mut release: Option<(f64, usize)> = None;
        for i in 0..n {
            let multiplier = match status[i] {
                BoundStatus::Free => continue,
                BoundStatus::Lower => grad[i],
                BoundStatus::Upper => -grad[i],
            };
            // an equal lower and upper bound can never be released usefully
            if multiplier < -1e-12 * scale
                && lower[i] < upper[i]
                && release.is_none_or(|(best, _)| multiplier < best)
            {
                release = Some((multiplier, i));
            }
        }
        match release {
            Some((_, i)) => status[i] = BoundStatus::Free,
            None => {
                return Ok(BoxQpSolution {
                    x,
                    status,
                    iterations: iteration,
                })
            }
        }
    }
    Err(Error::InvalidArgument(format!(
        "box QP active set did not settle in {max_iter} iterations"
    )))
}

/// Minimizer over the free coordinates with the others fixed at `x`.
fn equality_solution(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    x: &DVector<f64>,
    free: &[usize],
) -> Result<DVector<f64>> {
    let mut out = x.clone();
    if free.is_empty() {
        return Ok(out);
    }
    let n = x.len();
    let k = free.len();
    let mut is_free = vec![false; n];
    for &i in free {
        is_free[i] = true;
    }
    let sub = DMatrix::from_fn(k, k, |r, c| h[(free[r], free[c])]);
    let rhs = DVector::from_fn(k, |r, _| {
        let i = free[r];
        let fixed: f64 = (0..n).filter(|&j| !is_free[j]).map(|j| h[(i, j)] * x[j]).sum();
        -(f[i] + fixed)
    });
    let chol = sub
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("QP Hessian is not positive definite".into()))?;
    let sol = chol.solve(&rhs);
    for (r, &i) in free.iter().enumerate() {
        out[i] = sol[r];
    }
    Ok(out)
}
