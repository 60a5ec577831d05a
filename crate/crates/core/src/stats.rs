//! Multivariate test statistics: one-sample Hotelling T² with exact
//! F-based p-values, the F CDF via the regularized incomplete beta
//! function, and PCA on a cyclic Jacobi eigensolver.

use std::fmt;

pub type StatsResult<T> = Result<T, StatsError>;

#[derive(Clone, Debug, PartialEq)]
pub enum StatsError {
    InvalidArgument { op: &'static str, message: String },
    /// Sample covariance could not be Cholesky-factorized and the caller
    /// did not allow the eigenvalue-floored pseudo-inverse.
    SingularCovariance,
    ConvergenceFailure { op: &'static str },
}

impl fmt::Display for StatsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidArgument { op, message } => write!(f, "{op}: {message}"),
            Self::SingularCovariance => write!(f, "singular sample covariance"),
            Self::ConvergenceFailure { op } => write!(f, "{op}: failed to converge"),
        }
    }
}

impl std::error::Error for StatsError {}

fn invalid(op: &'static str, message: impl Into<String>) -> StatsError {
    StatsError::InvalidArgument { op, message: message.into() }
}

// ── Special functions ─────────────────────────────────────────────────────────

/// ln Γ(x) by the Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const BETA_TOL: f64 = 1e-12;
const BETA_MAX_ITER: usize = 500;

/// Regularized incomplete beta I_x(a, b), continued fraction by the
/// modified Lentz method with the symmetry switch at x > (a+1)/(a+b+2).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> StatsResult<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(invalid("reg_inc_beta", format!("a={a}, b={b} must be positive")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid("reg_inc_beta", format!("x={x} outside [0,1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        Ok(1.0 - beta_cf(b, a, 1.0 - x)?)
    } else {
        beta_cf(a, b, x)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> StatsResult<f64> {
    let tiny = 1e-300;
    let prefix = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp() / a;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut f = d;
    for m in 1..=BETA_MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;

        let even = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + even * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + even / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        f *= d * c;

        let odd = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + odd * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + odd / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        f *= delta;
        if (delta - 1.0).abs() < BETA_TOL {
            return Ok((prefix * f).clamp(0.0, 1.0));
        }
    }
    Err(StatsError::ConvergenceFailure { op: "reg_inc_beta" })
}

/// CDF of the F distribution with df1, df2 degrees of freedom.
pub fn f_cdf(x: f64, df1: f64, df2: f64) -> StatsResult<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(invalid("f_cdf", format!("x={x} must be finite and non-negative")));
    }
    if !(df1 > 0.0 && df2 > 0.0) {
        return Err(invalid("f_cdf", format!("df1={df1}, df2={df2} must be positive")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    reg_inc_beta(df1 / 2.0, df2 / 2.0, df1 * x / (df1 * x + df2))
}

// ── Small dense symmetric linear algebra ──────────────────────────────────────

/// Cholesky factor L (lower) of a symmetric positive-definite matrix, or
/// None when a pivot fails.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    x
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors as columns of a row-major matrix).
pub fn jacobi_eigen(a_in: &[f64], d: usize) -> StatsResult<(Vec<f64>, Vec<f64>)> {
    if a_in.len() != d * d {
        return Err(invalid("jacobi_eigen", "matrix size mismatch"));
    }
    let mut a = a_in.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    if d == 1 {
        return Ok((vec![a[0]], v));
    }
    let scale: f64 = a_in.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-15 * scale;
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..d - 1 {
            for q in p + 1..d {
                off += a[p * d + q].abs();
            }
        }
        if off < tol {
            let lam: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
            return Ok((lam, v));
        }
        for p in 0..d - 1 {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let h = a[q * d + q] - a[p * d + p];
                let t = if h.abs() < 1e-300 * apq.abs() {
                    1.0f64.copysign(apq / h.max(1e-300))
                } else {
                    let theta = 0.5 * h / apq;
                    let mut t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        t = -t;
                    }
                    t
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let hpq = t * apq;
                a[p * d + p] -= hpq;
                a[q * d + q] += hpq;
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;
                for j in 0..d {
                    if j != p && j != q {
                        let (jp, jq) = (j.min(p) * d + j.max(p), j.min(q) * d + j.max(q));
                        let g = a[jp];
                        let hh = a[jq];
                        a[jp] = g - s * (hh + g * tau);
                        a[jq] = hh + s * (g - hh * tau);
                    }
                }
                for j in 0..d {
                    let g = v[j * d + p];
                    let hh = v[j * d + q];
                    v[j * d + p] = g - s * (hh + g * tau);
                    v[j * d + q] = hh + s * (g - hh * tau);
                }
            }
        }
    }
    Err(StatsError::ConvergenceFailure { op: "jacobi_eigen" })
}

fn sample_mean(samples: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for row in samples {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = samples.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    mean
}

/// Unbiased sample covariance (divide by n - 1).
pub fn sample_covariance(samples: &[Vec<f64>], mean: &[f64]) -> Vec<f64> {
    let d = mean.len();
    let mut cov = vec![0.0; d * d];
    for row in samples {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (samples.len() - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    cov
}

// ── Hotelling's T² ────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct HotellingResult {
    pub t2: f64,
    pub f_stat: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
    pub n: usize,
    pub d: usize,
    /// Eigenvalue-floored pseudo-inverse was needed for the covariance.
    pub pseudo_inverse: bool,
    /// Decision at the 0.05 level ("significant").
    pub significant_05: bool,
    /// Decision at the 0.01 level ("highly significant").
    pub significant_01: bool,
}

/// One-sample T² test of H0: E[x] = mu0.
///
/// T² = n (x̄ - μ₀)ᵀ S⁻¹ (x̄ - μ₀) with S the unbiased covariance; the
/// p-value comes from F(d, n-d) of T² (n-d) / (d (n-1)). Requires n > d.
/// A singular S is eigenvalue-floored at 1e-12 · trace/d when
/// `allow_pseudo` is set and is an error otherwise.
pub fn hotelling_one_sample(
    samples: &[Vec<f64>],
    mu0: &[f64],
    allow_pseudo: bool,
) -> StatsResult<HotellingResult> {
    let n = samples.len();
    let d = mu0.len();
    if d == 0 {
        return Err(invalid("hotelling_one_sample", "dimension must be >= 1"));
    }
    if n <= d {
        return Err(invalid(
            "hotelling_one_sample",
            format!("need n > d, got n={n}, d={d}"),
        ));
    }
    if let Some(row) = samples.iter().find(|r| r.len() != d) {
        return Err(invalid(
            "hotelling_one_sample",
            format!("row of length {} in {d}-dimensional test", row.len()),
        ));
    }
    let mean = sample_mean(samples, d);
    let cov = sample_covariance(samples, &mean);
    let diff: Vec<f64> = mean.iter().zip(mu0).map(|(m, u)| m - u).collect();

    let (solved, pseudo) = match cholesky(&cov, d) {
        Some(l) => (cholesky_solve(&l, d, &diff), false),
        None => {
            if !allow_pseudo {
                return Err(StatsError::SingularCovariance);
            }
            let (lam, vecs) = jacobi_eigen(&cov, d)?;
            let trace: f64 = lam.iter().sum();
            let floor = 1e-12 * trace.max(1e-300) / d as f64;
            // x = V diag(1/max(lam, floor)) V^T diff
            let mut vt_diff = vec![0.0; d];
            for k in 0..d {
                for i in 0..d {
                    vt_diff[k] += vecs[i * d + k] * diff[i];
                }
            }
            for k in 0..d {
                vt_diff[k] /= lam[k].max(floor);
            }
            let mut x = vec![0.0; d];
            for i in 0..d {
                for k in 0..d {
                    x[i] += vecs[i * d + k] * vt_diff[k];
                }
            }
            (x, true)
        }
    };
    let t2 = (n as f64) * diff.iter().zip(&solved).map(|(a, b)| a * b).sum::<f64>();
    let t2 = t2.max(0.0);
    let df1 = d;
    let df2 = n - d;
    let f_stat = t2 * df2 as f64 / (df1 as f64 * (n - 1) as f64);
    let p_value = 1.0 - f_cdf(f_stat, df1 as f64, df2 as f64)?;
    Ok(HotellingResult {
        t2,
        f_stat,
        df1,
        df2,
        p_value,
        n,
        d,
        pseudo_inverse: pseudo,
        significant_05: p_value < 0.05,
        significant_01: p_value < 0.01,
    })
}

// ── PCA ───────────────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct PcaResult {
    /// d x k, columns are orthonormal principal directions.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
    pub d: usize,
    pub k: usize,
    /// Some eigenvalue hit the non-negativity clamp (degenerate spectrum).
    pub degenerate: bool,
}

impl PcaResult {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for j in 0..self.k {
            for i in 0..self.d {
                out[j] += (x[i] - self.mean[i]) * self.components[i * self.k + j];
            }
        }
        out
    }

    pub fn reconstruct(&self, proj: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for i in 0..self.d {
            for j in 0..self.k {
                out[i] += self.components[i * self.k + j] * proj[j];
            }
        }
        out
    }
}

/// Top-k eigenpairs of the unbiased sample covariance.
pub fn pca(samples: &[Vec<f64>], k: usize) -> StatsResult<PcaResult> {
    let n = samples.len();
    if n < 2 {
        return Err(invalid("pca", format!("need at least 2 samples, got {n}")));
    }
    let d = samples[0].len();
    if k == 0 || k > d {
        return Err(invalid("pca", format!("k={k} outside 1..={d}")));
    }
    if let Some(row) = samples.iter().find(|r| r.len() != d) {
        return Err(invalid("pca", format!("ragged row of length {}", row.len())));
    }
    let mean = sample_mean(samples, d);
    let cov = sample_covariance(samples, &mean);
    let (lam, vecs) = jacobi_eigen(&cov, d)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| lam[b].partial_cmp(&lam[a]).unwrap());
    let mut components = vec![0.0; d * k];
    let mut explained = Vec::with_capacity(k);
    let mut degenerate = false;
    for (j, &src) in order.iter().take(k).enumerate() {
        for i in 0..d {
            components[i * k + j] = vecs[i * d + src];
        }
        if lam[src] < 0.0 {
            degenerate = true;
        }
        explained.push(lam[src].max(0.0));
    }
    Ok(PcaResult { components, explained_variance: explained, mean, d, k, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn f_cdf_boundary_and_median() {
        assert_eq!(f_cdf(0.0, 3.0, 7.0).unwrap(), 0.0);
        // The F(k, k) distribution has median exactly 1.
        for k in [1.0, 4.0, 11.0, 30.0] {
            let p = f_cdf(1.0, k, k).unwrap();
            assert!((p - 0.5).abs() < 1e-10, "k={k}: {p}");
        }
        assert!(f_cdf(-1.0, 2.0, 2.0).is_err());
        assert!(f_cdf(f64::NAN, 2.0, 2.0).is_err());
    }

    #[test]
    fn f_cdf_large_df2_matches_chi_square_quadrature() {
        // With df2 -> inf, F(1, df2) tends to chi^2_1, whose CDF at x is
        // 2 Phi(sqrt(x)) - 1. Evaluate Phi by Simpson quadrature of the
        // standard normal density (smooth after the u = sqrt(t) change of
        // variable), at the chi^2_1 0.95 quantile.
        let x_star = 3.841458820694124f64;
        let z = x_star.sqrt();
        let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let steps = 100_000;
        let h = z / steps as f64;
        let mut acc = phi(0.0) + phi(z);
        for i in 1..steps {
            acc += phi(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let chi2_cdf = 2.0 * (acc * h / 3.0);
        assert!((chi2_cdf - 0.95).abs() < 1e-9, "quadrature oracle {chi2_cdf}");
        let p = f_cdf(x_star, 1.0, 1e6).unwrap();
        assert!((p - chi2_cdf).abs() < 1e-4, "f_cdf {p} vs oracle {chi2_cdf}");
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(2.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
    }

    #[test]
    fn hotelling_symmetric_pair_is_null() {
        let samples = vec![vec![-1.0], vec![1.0]];
        let r = hotelling_one_sample(&samples, &[0.0], false).unwrap();
        assert_eq!(r.t2, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert!(!r.significant_05);
    }

    #[test]
    fn hotelling_d1_equals_squared_t_test() {
        let mut rng = Rng::new(404);
        let samples: Vec<Vec<f64>> = (0..100).map(|_| vec![0.5 + rng.normal()]).collect();
        let r = hotelling_one_sample(&samples, &[0.0], false).unwrap();
        // Scalar t statistic computed the pedestrian way.
        let vals: Vec<f64> = samples.iter().map(|s| s[0]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let t = mean / (var / n).sqrt();
        assert!((r.t2 - t * t).abs() < 1e-10, "T2 {} vs t^2 {}", r.t2, t * t);
    }

    #[test]
    fn hotelling_requires_more_samples_than_dims() {
        let samples = vec![vec![1.0, 2.0], vec![0.5, 1.0]];
        assert!(hotelling_one_sample(&samples, &[0.0, 0.0], false).is_err());
    }

    #[test]
    fn hotelling_singular_needs_pseudo_flag() {
        // Second coordinate is a copy of the first: rank-deficient covariance.
        let mut rng = Rng::new(405);
        let samples: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let v = rng.normal();
                vec![v, v]
            })
            .collect();
        assert!(matches!(
            hotelling_one_sample(&samples, &[0.0, 0.0], false),
            Err(StatsError::SingularCovariance)
        ));
        let r = hotelling_one_sample(&samples, &[0.0, 0.0], true).unwrap();
        assert!(r.pseudo_inverse);
        assert!(r.p_value.is_finite());
    }

    #[test]
    fn hotelling_affine_invariance() {
        let mut rng = Rng::new(406);
        let d = 3;
        let samples: Vec<Vec<f64>> =
            (0..50).map(|_| (0..d).map(|_| rng.normal() + 0.3).collect()).collect();
        let mu0 = vec![0.1, -0.2, 0.05];
        let base = hotelling_one_sample(&samples, &mu0, false).unwrap();

        // Random invertible map A (I + small noise) and shift b.
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = if i == j { 1.0 } else { 0.0 } + 0.3 * rng.normal();
            }
        }
        let b: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let map = |x: &[f64]| -> Vec<f64> {
            (0..d).map(|i| b[i] + (0..d).map(|j| a[i * d + j] * x[j]).sum::<f64>()).collect()
        };
        let mapped: Vec<Vec<f64>> = samples.iter().map(|s| map(s)).collect();
        let mapped_mu0 = map(&mu0);
        let t = hotelling_one_sample(&mapped, &mapped_mu0, false).unwrap();
        assert!(
            (t.t2 - base.t2).abs() / base.t2.abs().max(1e-12) < 1e-8,
            "T2 {} vs {}",
            t.t2,
            base.t2
        );
    }

    #[test]
    fn hotelling_p_monotone_in_mean_shift() {
        let mut rng = Rng::new(407);
        let base: Vec<Vec<f64>> = (0..40).map(|_| (0..2).map(|_| rng.normal()).collect()).collect();
        let mut last_p = f64::INFINITY;
        for shift in [0.0, 0.3, 0.6, 1.2, 2.4] {
            let shifted: Vec<Vec<f64>> =
                base.iter().map(|r| vec![r[0] + shift, r[1] + shift]).collect();
            let r = hotelling_one_sample(&shifted, &[0.0, 0.0], false).unwrap();
            assert!(r.p_value <= last_p + 1e-15, "p rose: {} after {}", r.p_value, last_p);
            last_p = r.p_value;
        }
    }

    #[test]
    fn pca_collinear_points() {
        let samples: Vec<Vec<f64>> =
            (0..20).map(|i| vec![i as f64 * 0.5, i as f64 * 0.5]).collect();
        let r = pca(&samples, 2).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        let c0 = [r.components[0], r.components[2]];
        assert!(
            (c0[0].abs() - inv_sqrt2).abs() < 1e-10 && (c0[1].abs() - inv_sqrt2).abs() < 1e-10,
            "first component {c0:?}"
        );
        assert!(r.explained_variance[1].abs() < 1e-10);
    }

    #[test]
    fn pca_isotropic_spectrum() {
        let mut rng = Rng::new(408);
        let samples: Vec<Vec<f64>> =
            (0..10_000).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let r = pca(&samples, 2).unwrap();
        let ratio = r.explained_variance[0] / r.explained_variance[1];
        assert!(ratio < 1.05, "isotropic eigenvalue ratio {ratio}");
    }

    #[test]
    fn pca_full_rank_reconstruction() {
        let mut rng = Rng::new(409);
        let samples: Vec<Vec<f64>> =
            (0..40).map(|_| (0..4).map(|_| rng.normal() * 2.0 + 1.0).collect()).collect();
        let r = pca(&samples, 4).unwrap();
        for s in &samples {
            let back = r.reconstruct(&r.project(s));
            for (a, b) in s.iter().zip(&back) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        // Components orthonormal within 1e-10.
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 =
                    (0..4).map(|r_| r.components[r_ * 4 + i] * r.components[r_ * 4 + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "gram[{i}][{j}] = {dot}");
            }
        }
        // Spectrum sorted descending.
        for w in r.explained_variance.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn jacobi_known_spectrum() {
        // Eigenvalues of [[2,0,0],[0,3,4],[0,4,9]] are {2, 1, 11}.
        let a = [2.0, 0.0, 0.0, 0.0, 3.0, 4.0, 0.0, 4.0, 9.0];
        let (mut lam, _) = jacobi_eigen(&a, 3).unwrap();
        lam.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (got, want) in lam.iter().zip([1.0, 2.0, 11.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}
