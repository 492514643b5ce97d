use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::opcount::{gauss_cost, tally};

/// Result of [`gauss_solve`].
#[derive(Debug, Clone)]
pub struct GaussSolution {
    pub x: DVector<f64>,
    /// Multiplications and divisions actually performed.
    pub multiplies: u64,
    /// Closed-form count `(4N³ + 9N² − 5N)/6` used by the complexity model.
    pub closed_form: Ratio<i64>,
}

/// Multiplications and divisions performed by [`gauss_solve`] on an `n×n`
/// system: `(n³ + 3n² − n)/3`.
pub fn gauss_mul_count(n: usize) -> u64 {
    let n = n as u64;
    (n * n * n + 3 * n * n - n) / 3
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// A pivot whose magnitude is at most `n · ε · max|A|` is reported as
/// [`Error::Singular`].
pub fn gauss_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<GaussSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "gauss_solve needs a square system, got {}x{} with rhs {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let mut m = a.clone();
    let mut rhs = b.clone();
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let threshold = (n as f64) * f64::EPSILON * scale;
    let mut count = 0_u64;

    for k in 0..n {
        let (pivot_row, pivot) = (k..n)
            .map(|i| (i, m[(i, k)]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .expect("non-empty pivot range");
        if !(pivot.abs() > threshold) {
            return Err(Error::Singular { pivot: pivot.abs() });
        }
        if pivot_row != k {
            m.swap_rows(k, pivot_row);
            rhs.swap_rows(k, pivot_row);
        }
        for i in k + 1..n {
            let factor = m[(i, k)] / m[(k, k)];
            for j in k + 1..n {
                m[(i, j)] -= factor * m[(k, j)];
            }
            rhs[i] -= factor * rhs[k];
            count += (n - k + 1) as u64;
        }
    }

    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for j in i + 1..n {
            acc -= m[(i, j)] * x[j];
        }
        x[i] = acc / m[(i, i)];
        count += (n - i) as u64;
    }
    tally(count);

    Ok(GaussSolution {
        x,
        multiplies: count,
        closed_form: gauss_cost(n as i64),
    })
}

/// Solves `A X = B` one column at a time, so the cost of a `k`-column right
/// hand side is `k` single solves.
pub fn gauss_solve_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    for j in 0..b.ncols() {
        let sol = gauss_solve(a, &b.column(j).into_owned())?;
        out.set_column(j, &sol.x);
    }
    Ok(out)
}
