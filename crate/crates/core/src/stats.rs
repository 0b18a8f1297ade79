//! Small statistics helpers: Monte Carlo summaries, dense least squares for
//! low-dimensional designs, and log-log slope fits.

use crate::error::Error;
use crate::scalar::Real;
use crate::Result;

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct McEstimate<F> {
    pub mean: F,
    pub se: F,
    pub n: usize,
}

impl<F: Real> McEstimate<F> {
    /// Summarize a sample by its mean and standard error of the mean.
    pub fn from_sample(sample: &[F]) -> Self {
        let n = sample.len();
        assert!(n > 0, "empty sample");
        let nf = F::from_usize(n).unwrap();
        let mean = sample.iter().copied().sum::<F>() / nf;
        if n == 1 {
            return Self {
                mean,
                se: F::zero(),
                n,
            };
        }
        let ss = sample
            .iter()
            .map(|&x| (x - mean) * (x - mean))
            .sum::<F>();
        let var = ss / (nf - F::one());
        Self {
            mean,
            se: (var / nf).sqrt(),
            n,
        }
    }

    /// Combined standard error of the difference of two independent estimates.
    pub fn combined_se(&self, other: &Self) -> F {
        (self.se * self.se + other.se * other.se).sqrt()
    }
}

/// Solve the dense linear system `A x = b` by Gaussian elimination with
/// partial pivoting. Returns `None` if a pivot falls below `tol` relative to
/// the largest initial pivot candidate.
pub fn solve_dense<F: Real>(a: &[Vec<F>], b: &[F], tol: F) -> Option<Vec<F>> {
    let k = b.len();
    debug_assert!(a.len() == k && a.iter().all(|row| row.len() == k));
    let mut m: Vec<Vec<F>> = a.to_vec();
    let mut rhs = b.to_vec();
    let scale = m
        .iter()
        .flat_map(|row| row.iter().map(|x| x.abs()))
        .fold(F::zero(), F::max);
    if scale == F::zero() {
        return None;
    }
    for col in 0..k {
        let (pivot_row, pivot) = (col..k)
            .map(|r| (r, m[r][col].abs()))
            .fold((col, F::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pivot <= tol * scale {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for r in col + 1..k {
            let f = m[r][col] / m[col][col];
            for c in col..k {
                let upper = m[col][c];
                m[r][c] = m[r][c] - f * upper;
            }
            rhs[r] = rhs[r] - f * rhs[col];
        }
    }
    let mut x = vec![F::zero(); k];
    for col in (0..k).rev() {
        let mut acc = rhs[col];
        for c in col + 1..k {
            acc = acc - m[col][c] * x[c];
        }
        x[col] = acc / m[col][col];
    }
    Some(x)
}

/// Ordinary least squares fit with coefficient standard errors.
#[derive(Debug, Clone)]
pub struct OlsFit<F> {
    pub coef: Vec<F>,
    pub se: Vec<F>,
    pub residual_var: F,
    pub n: usize,
}

/// Fit `y ~ design` by OLS via the normal equations. `design` is row-major
/// with `k` columns. Fails with [`Error::DegenerateRegressors`] when the
/// Gram matrix is numerically singular.
pub fn ols<F: Real>(design: &[F], k: usize, y: &[F]) -> Result<OlsFit<F>> {
    let n = y.len();
    assert!(k > 0 && design.len() == n * k, "design shape mismatch");
    if n <= k {
        return Err(Error::DegenerateRegressors(format!(
            "{n} observations for {k} coefficients"
        )));
    }
    let mut gram = vec![vec![F::zero(); k]; k];
    let mut xty = vec![F::zero(); k];
    for row in 0..n {
        let r = &design[row * k..(row + 1) * k];
        for i in 0..k {
            xty[i] += r[i] * y[row];
            for j in i..k {
                gram[i][j] += r[i] * r[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram[i][j] = gram[j][i];
        }
    }
    let tol = F::lit(1e-12);
    let coef = solve_dense(&gram, &xty, tol)
        .ok_or_else(|| Error::DegenerateRegressors("singular Gram matrix".into()))?;

    let mut rss = F::zero();
    for row in 0..n {
        let r = &design[row * k..(row + 1) * k];
        let fitted = r
            .iter()
            .zip(coef.iter())
            .map(|(&x, &c)| x * c)
            .sum::<F>();
        let e = y[row] - fitted;
        rss += e * e;
    }
    let dof = F::from_usize(n - k).unwrap();
    let residual_var = rss / dof;

    // SE_i = sqrt(residual_var * (Gram^-1)_{ii}), via k unit solves.
    let mut se = vec![F::zero(); k];
    for i in 0..k {
        let mut unit = vec![F::zero(); k];
        unit[i] = F::one();
        let col = solve_dense(&gram, &unit, tol)
            .ok_or_else(|| Error::DegenerateRegressors("singular Gram matrix".into()))?;
        se[i] = (residual_var * col[i].max(F::zero())).sqrt();
    }
    Ok(OlsFit {
        coef,
        se,
        residual_var,
        n,
    })
}

/// Slope of `ln y` against `ln x` by OLS. Inputs must be positive.
pub fn loglog_slope<F: Real>(x: &[F], y: &[F]) -> Result<F> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(
            "log-log slope needs at least two matched points".into(),
        ));
    }
    let mut design = Vec::with_capacity(2 * x.len());
    let mut ly = Vec::with_capacity(y.len());
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        if xi <= F::zero() || yi <= F::zero() {
            return Err(Error::InvalidArgument(
                "log-log slope needs positive data".into(),
            ));
        }
        design.push(F::one());
        design.push(xi.ln());
        ly.push(yi.ln());
    }
    Ok(ols(&design, 2, &ly)?.coef[1])
}
