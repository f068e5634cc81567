//! Singular values via one-sided Jacobi.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::numkit::Matrix;

/// Default relative tolerance for [`numeric_rank`]: well above f64 rounding
/// noise at desk scale, below any genuine rank-revealing gap.
pub const DEFAULT_RANK_REL_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 60;

/// Singular values in descending order.
///
/// One-sided Jacobi on the columns of the (possibly transposed) input:
/// column pairs are rotated until all are mutually orthogonal, then the
/// singular values are the column norms. Jacobi converges to high relative
/// accuracy even for tiny singular values, which is what makes rank gaps
/// near `rel_tol * sigma_max` trustworthy.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(Error::NonFinite {
            op: "singular_values",
        });
    }
    // work with rows >= cols; singular values are transpose-invariant
    let mut g = if m.rows() < m.cols() {
        m.transpose()
    } else {
        m.clone()
    };
    let n = g.cols();
    let tol = f64::EPSILON * 8.0;

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (app, aqq, apq) = column_products(&g, p, q);
                if apq.abs() <= tol * fmath::sqrt(app * aqq) {
                    continue;
                }
                rotated = true;
                // classic two-sided-symmetric rotation angle on the 2x2 Gram block
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + fmath::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + fmath::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / fmath::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_columns(&mut g, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..g.rows() {
                let v = g[(i, j)];
                acc += v * v;
            }
            fmath::sqrt(acc)
        })
        .collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    Ok(sigma)
}

fn column_products(g: &Matrix, p: usize, q: usize) -> (f64, f64, f64) {
    let mut app = 0.0;
    let mut aqq = 0.0;
    let mut apq = 0.0;
    for i in 0..g.rows() {
        let vp = g[(i, p)];
        let vq = g[(i, q)];
        app += vp * vp;
        aqq += vq * vq;
        apq += vp * vq;
    }
    (app, aqq, apq)
}

fn rotate_columns(g: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..g.rows() {
        let vp = g[(i, p)];
        let vq = g[(i, q)];
        g[(i, p)] = c * vp - s * vq;
        g[(i, q)] = s * vp + c * vq;
    }
}

/// Count of singular values above `rel_tol * sigma_max`; 0 for the zero
/// matrix. `rel_tol` must be positive and finite.
pub fn numeric_rank(m: &Matrix, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "numeric_rank rel_tol",
            details: alloc::format!("must be positive and finite, got {rel_tol}"),
        });
    }
    let sigma = singular_values(m)?;
    let sigma_max = sigma[0];
    if sigma_max == 0.0 {
        return Ok(0);
    }
    Ok(sigma.iter().take_while(|&&s| s > rel_tol * sigma_max).count())
}
