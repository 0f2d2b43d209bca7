//! Householder-QR least squares with column rank detection.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative tolerance on `|R_jj| / ‖x_j‖` below which a column is treated as
/// linearly dependent on the columns before it.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// What to do when a dependent column is found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnDeficient {
    Fail,
    Drop,
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// One entry per input column; dropped columns hold 0.
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `(XᵀX)⁻¹` over the kept columns, embedded at full size with zero rows
    /// and columns for dropped ones.
    pub xtx_inv: DMatrix<f64>,
    /// Indices of dropped columns, ascending.
    pub dropped: Vec<usize>,
}

impl LeastSquares {
    pub fn rank(&self) -> usize {
        self.beta.len() - self.dropped.len()
    }

    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

/// Solve `min ‖y − Xβ‖²` by Householder QR.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, on_deficient: OnDeficient) -> Result<LeastSquares> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let mut kept: Vec<usize> = (0..p).collect();
    let mut dropped = Vec::new();

    loop {
        let sub = x.select_columns(kept.iter());
        let k = kept.len();
        if k == 0 {
            let beta = DVector::zeros(p);
            return Ok(LeastSquares {
                beta,
                residuals: y.clone(),
                xtx_inv: DMatrix::zeros(p, p),
                dropped,
            });
        }
        if n < k {
            return Err(Error::RankDeficient { column: kept[n] });
        }
        let norms: Vec<f64> = sub.column_iter().map(|c| c.norm()).collect();
        let qr = sub.clone().qr();
        let r = qr.r();
        let bad = (0..k).find(|&j| {
            let scale = norms[j];
            scale == 0.0 || r[(j, j)].abs() <= RANK_TOLERANCE * scale
        });
        if let Some(j) = bad {
            match on_deficient {
                OnDeficient::Fail => return Err(Error::RankDeficient { column: kept[j] }),
                OnDeficient::Drop => {
                    dropped.push(kept.remove(j));
                    continue;
                }
            }
        }

        let mut qty = y.clone();
        qr.q_tr_mul(&mut qty);
        let qty = qty.rows(0, k).into_owned();
        let coef = r
            .solve_upper_triangular(&qty)
            .ok_or(Error::RankDeficient { column: kept[k - 1] })?;
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or(Error::RankDeficient { column: kept[k - 1] })?;
        let cov = &r_inv * r_inv.transpose();

        let residuals = y - &sub * &coef;
        let mut beta = DVector::zeros(p);
        let mut xtx_inv = DMatrix::zeros(p, p);
        for (a, &ca) in kept.iter().enumerate() {
            beta[ca] = coef[a];
            for (b, &cb) in kept.iter().enumerate() {
                xtx_inv[(ca, cb)] = cov[(a, b)];
            }
        }
        dropped.sort_unstable();
        return Ok(LeastSquares {
            beta,
            residuals,
            xtx_inv,
            dropped,
        });
    }
}

/// Build a column-major `DMatrix` from a list of equally long columns.
pub fn matrix_from_columns(columns: &[Vec<f64>]) -> DMatrix<f64> {
    let n = columns.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i])
}
