//! Thomas elimination for tridiagonal systems. No pivoting: callers pass
//! diagonally dominant matrices.

use crate::discretization::TridiagonalSystem;
use crate::error::{Error, Result};

pub fn thomas_solve(sys: &TridiagonalSystem) -> Result<Vec<f64>> {
    let mut x = vec![0.0; sys.len()];
    let mut scratch = vec![0.0; sys.len()];
    thomas_solve_into(&sys.lower, &sys.diag, &sys.upper, &sys.rhs, &mut x, &mut scratch)?;
    Ok(x)
}

/// Solve into `x`, using `scratch` (same length) for the modified upper
/// diagonal.
pub fn thomas_solve_into(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    let n = diag.len();
    if rhs.len() != n || x.len() != n || scratch.len() < n || lower.len() + 1 < n || upper.len() + 1 < n {
        return Err(Error::Contract(format!(
            "tridiagonal shapes disagree: diag {n}, lower {}, upper {}, rhs {}",
            lower.len(),
            upper.len(),
            rhs.len()
        )));
    }
    if n == 0 {
        return Ok(());
    }

    let pivot_ok = |p: f64, row: usize| -> Result<f64> {
        if p == 0.0 || !p.is_finite() {
            Err(Error::Numerical(format!("zero pivot in Thomas elimination at row {row}")))
        } else {
            Ok(p)
        }
    };

    let mut pivot = pivot_ok(diag[0], 0)?;
    if n > 1 {
        scratch[0] = upper[0] / pivot;
    }
    x[0] = rhs[0] / pivot;
    for r in 1..n {
        pivot = pivot_ok(diag[r] - lower[r - 1] * scratch[r - 1], r)?;
        if r + 1 < n {
            scratch[r] = upper[r] / pivot;
        }
        x[r] = (rhs[r] - lower[r - 1] * x[r - 1]) / pivot;
    }
    for r in (0..n - 1).rev() {
        x[r] -= scratch[r] * x[r + 1];
    }
    Ok(())
}
