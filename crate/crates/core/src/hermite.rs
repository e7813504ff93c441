//! Degree-4 Hermite-basis regressions of one fund on one factor.
//!
//! Factor values are z-scored over the fitting window and expanded in the
//! probabilists' Hermite polynomials `He_0..He_4`. Coefficients solve the
//! ridge normal equations `(HᵀH + λI) β = Hᵀy`; `λ = 0` is ordinary least
//! squares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{AlignedPair, MonthIndex, MIN_OVERLAP};

/// Number of basis functions (degree 4 plus the constant).
pub const N_BASIS: usize = 5;

/// Default ridge penalty.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

/// Condition-number ceiling for the unpenalized normal equations.
pub const MAX_CONDITION: f64 = 1e12;

/// Probabilists' Hermite polynomial `He_k(x)` for `k` in `0..=4`.
pub fn hermite(k: usize, x: f64) -> Result<f64> {
    if k >= N_BASIS {
        return Err(Error::invalid(format!("hermite degree {k} outside 0..=4")));
    }
    Ok(basis(x)[k])
}

/// All five basis values at `x`.
#[inline]
pub fn basis(x: f64) -> [f64; N_BASIS] {
    let x2 = x * x;
    [1.0, x, x2 - 1.0, x * (x2 - 3.0), x2 * x2 - 6.0 * x2 + 3.0]
}

/// The five Hermite coefficients `β_0..β_4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HermiteCoeffs(pub [f64; N_BASIS]);

impl HermiteCoeffs {
    pub fn eval(&self, z: f64) -> f64 {
        let h = basis(z);
        self.0.iter().zip(h).map(|(b, h)| b * h).sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    /// Power-basis coefficients `a_0..a_4` of the same polynomial in `z`.
    pub fn to_monomial(&self) -> [f64; N_BASIS] {
        let b = self.0;
        [
            b[0] - b[2] + 3.0 * b[4],
            b[1] - 3.0 * b[3],
            b[2] - 6.0 * b[4],
            b[3],
            b[4],
        ]
    }
}

/// A fitted polynomial together with its fit statistics and the
/// standardization constants needed to evaluate it on raw factor values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub coeffs: HermiteCoeffs,
    pub lambda: f64,
    pub r_squared: f64,
    /// `SSE / (n - 5)`.
    pub residual_variance: f64,
    pub n_obs: usize,
    pub x_mean: f64,
    pub x_std: f64,
}

impl PolyFit {
    pub fn standardize(&self, x_raw: f64) -> f64 {
        (x_raw - self.x_mean) / self.x_std
    }
}

/// Evaluates a fit at a raw factor value.
pub fn predict(fit: &PolyFit, x_raw: f64) -> f64 {
    fit.coeffs.eval(fit.standardize(x_raw))
}

/// Rows `(He_0(z_t), …, He_4(z_t))` of the standardized design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: Vec<[f64; N_BASIS]>,
}

impl DesignMatrix {
    pub fn from_standardized(z: &[f64]) -> Self {
        Self {
            rows: z.iter().map(|&z| basis(z)).collect(),
        }
    }

    /// `HᵀH`.
    pub fn gram(&self) -> [[f64; N_BASIS]; N_BASIS] {
        let mut g = [[0.0; N_BASIS]; N_BASIS];
        for r in &self.rows {
            for i in 0..N_BASIS {
                for j in i..N_BASIS {
                    g[i][j] += r[i] * r[j];
                }
            }
        }
        for i in 0..N_BASIS {
            for j in 0..i {
                g[i][j] = g[j][i];
            }
        }
        g
    }

    /// `Hᵀy`.
    pub fn project(&self, y: &[f64]) -> [f64; N_BASIS] {
        let mut out = [0.0; N_BASIS];
        for (r, &yv) in self.rows.iter().zip(y) {
            for k in 0..N_BASIS {
                out[k] += r[k] * yv;
            }
        }
        out
    }
}

/// Mean and population standard deviation.
pub fn standardization(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > f64::EPSILON * mean.abs().max(f64::MIN_POSITIVE)) || !std.is_finite() {
        return Err(Error::DegenerateFactor);
    }
    Ok((mean, std))
}

/// Lower-triangular Cholesky factor of a 5×5 SPD matrix.
#[derive(Debug, Clone, Copy)]
struct Cholesky {
    l: [[f64; N_BASIS]; N_BASIS],
}

impl Cholesky {
    fn new(a: &[[f64; N_BASIS]; N_BASIS]) -> Result<Self> {
        let scale = (0..N_BASIS).map(|i| a[i][i]).fold(0.0, f64::max);
        let mut l = [[0.0; N_BASIS]; N_BASIS];
        for j in 0..N_BASIS {
            let mut d = a[j][j];
            for k in 0..j {
                d -= l[j][k] * l[j][k];
            }
            if !(d > 1e-13 * scale) {
                return Err(Error::Singular(
                    "normal equations are not positive definite; use a ridge penalty lambda > 0".into(),
                ));
            }
            let d = d.sqrt();
            l[j][j] = d;
            for i in (j + 1)..N_BASIS {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                l[i][j] = s / d;
            }
        }
        Ok(Self { l })
    }

    fn solve(&self, b: &[f64; N_BASIS]) -> [f64; N_BASIS] {
        let l = &self.l;
        let mut y = [0.0; N_BASIS];
        for i in 0..N_BASIS {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i][k] * y[k];
            }
            y[i] = s / l[i][i];
        }
        let mut x = [0.0; N_BASIS];
        for i in (0..N_BASIS).rev() {
            let mut s = y[i];
            for k in (i + 1)..N_BASIS {
                s -= l[k][i] * x[k];
            }
            x[i] = s / l[i][i];
        }
        x
    }
}

/// Eigenvalues of a symmetric 5×5 matrix by cyclic Jacobi rotations.
pub(crate) fn symmetric_eigenvalues(a: &[[f64; N_BASIS]; N_BASIS]) -> [f64; N_BASIS] {
    let mut m = *a;
    for _ in 0..100 {
        let off: f64 = (0..N_BASIS)
            .flat_map(|i| (0..N_BASIS).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let diag: f64 = (0..N_BASIS).map(|i| m[i][i] * m[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..N_BASIS {
            for q in (p + 1)..N_BASIS {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N_BASIS {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..N_BASIS {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    std::array::from_fn(|i| m[i][i])
}

/// A factor window prepared for repeated solves against different targets.
///
/// The design and its factorization depend only on `x`, so permutation tests
/// reuse one `PreparedDesign` for every shuffled `y`.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    design: DesignMatrix,
    chol: Cholesky,
    lambda: f64,
    x_mean: f64,
    x_std: f64,
}

impl PreparedDesign {
    pub fn new(x: &[f64], lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be a non-negative number, got {lambda}")));
        }
        let (x_mean, x_std) = standardization(x)?;
        let z: Vec<f64> = x.iter().map(|v| (v - x_mean) / x_std).collect();
        let design = DesignMatrix::from_standardized(&z);
        let mut g = design.gram();
        for (i, row) in g.iter_mut().enumerate() {
            row[i] += lambda;
        }
        let chol = Cholesky::new(&g)?;
        Ok(Self {
            design,
            chol,
            lambda,
            x_mean,
            x_std,
        })
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn n_obs(&self) -> usize {
        self.design.rows.len()
    }

    /// Coefficients and sum of squared residuals for target `y`.
    #[inline]
    pub fn solve(&self, y: &[f64]) -> ([f64; N_BASIS], f64) {
        let beta = self.chol.solve(&self.design.project(y));
        let mut sse = 0.0;
        for (r, &yv) in self.design.rows.iter().zip(y) {
            let fitted = beta[0] * r[0] + beta[1] * r[1] + beta[2] * r[2] + beta[3] * r[3] + beta[4] * r[4];
            let e = yv - fitted;
            sse += e * e;
        }
        (beta, sse)
    }

    /// `R²` of `y` given its centred sum of squares `sst`.
    #[inline]
    pub fn r_squared(&self, y: &[f64], sst: f64) -> f64 {
        let (_, sse) = self.solve(y);
        r_squared(sse, sst)
    }

    pub fn fit(&self, y: &[f64]) -> PolyFit {
        let (beta, sse) = self.solve(y);
        let n = y.len();
        PolyFit {
            coeffs: HermiteCoeffs(beta),
            lambda: self.lambda,
            r_squared: r_squared(sse, total_sum_of_squares(y)),
            residual_variance: if n > N_BASIS { sse / (n - N_BASIS) as f64 } else { 0.0 },
            n_obs: n,
            x_mean: self.x_mean,
            x_std: self.x_std,
        }
    }
}

pub fn total_sum_of_squares(y: &[f64]) -> f64 {
    // exact zero for a constant target, whatever the rounding of the mean
    if y.iter().all(|v| *v == y[0]) {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - mean).powi(2)).sum()
}

/// `1 - SSE/SST`, defined as 0 for a constant target.
#[inline]
pub fn r_squared(sse: f64, sst: f64) -> f64 {
    if sst > 0.0 {
        1.0 - sse / sst
    } else {
        0.0
    }
}

/// Ridge fit of `pair.y` on the Hermite expansion of standardized `pair.x`.
pub fn ridge_fit(pair: &AlignedPair, lambda: f64) -> Result<PolyFit> {
    if pair.len() < MIN_OVERLAP {
        return Err(Error::InsufficientData {
            have: pair.len(),
            need: MIN_OVERLAP,
        });
    }
    Ok(PreparedDesign::new(&pair.x, lambda)?.fit(&pair.y))
}

/// Unpenalized least squares. Accepts exactly determined systems (`n = 5`)
/// when the normal equations are well conditioned.
pub fn ols_fit(pair: &AlignedPair) -> Result<PolyFit> {
    if pair.len() < N_BASIS {
        return Err(Error::InsufficientData {
            have: pair.len(),
            need: N_BASIS,
        });
    }
    let (mean, std) = standardization(&pair.x)?;
    let z: Vec<f64> = pair.x.iter().map(|v| (v - mean) / std).collect();
    let g = DesignMatrix::from_standardized(&z).gram();
    let eig = symmetric_eigenvalues(&g);
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::Singular(format!(
            "normal equations are ill-conditioned (eigenvalues {min:.3e}..{max:.3e})"
        )));
    }
    Ok(PreparedDesign::new(&pair.x, 0.0)?.fit(&pair.y))
}

/// Exported form of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub fund: String,
    pub factor: String,
    pub window_end: MonthIndex,
    pub beta: [f64; N_BASIS],
    pub lambda: f64,
    pub r2: f64,
    pub resid_var: f64,
    pub n: usize,
    pub x_mean: f64,
    pub x_std: f64,
}

impl FitRecord {
    pub fn new(fund: &str, factor: &str, window_end: MonthIndex, fit: &PolyFit) -> Self {
        Self {
            fund: fund.to_string(),
            factor: factor.to_string(),
            window_end,
            beta: fit.coeffs.0,
            lambda: fit.lambda,
            r2: fit.r_squared,
            resid_var: fit.residual_variance,
            n: fit.n_obs,
            x_mean: fit.x_mean,
            x_std: fit.x_std,
        }
    }

    pub fn to_fit(&self) -> PolyFit {
        PolyFit {
            coeffs: HermiteCoeffs(self.beta),
            lambda: self.lambda,
            r_squared: self.r2,
            residual_variance: self.resid_var,
            n_obs: self.n,
            x_mean: self.x_mean,
            x_std: self.x_std,
        }
    }
}
