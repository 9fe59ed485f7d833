//! Evaluation metrics on raw 2D features: Fréchet distance between
//! Gaussian fits, kernel MMD with a Gaussian kernel, and mode coverage.

use thiserror::Error;

use crate::synthdata::{ClassDistribution, Point};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("covariance not PSD beyond clamp tolerance (eigenvalue {eigenvalue})")]
    NotPsd { eigenvalue: f64 },
}

/// Sample mean and unbiased (n-1) sample covariance of a 2D point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Point,
    pub covariance: [[f64; 2]; 2],
}

pub fn fit_gaussian(points: &[Point]) -> Result<GaussianFit, MetricError> {
    if points.len() < 2 {
        return Err(MetricError::TooFewPoints { need: 2, got: points.len() });
    }
    let n = points.len() as f64;
    let mean = [
        points.iter().map(|p| p[0]).sum::<f64>() / n,
        points.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let mut cov = [[0.0f64; 2]; 2];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
    }
    Ok(GaussianFit { mean, covariance: cov })
}

/// Eigenvalues (descending) and orthonormal eigenvectors (as columns) of a
/// symmetric 2x2 matrix.
fn sym_eigen_2x2(m: &[[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    // eigenvector for l1; fall back to an axis when b ~ 0
    let (v1, v2) = if b.abs() > 1e-300 {
        let v = [b, l1 - a];
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let v1 = [v[0] / norm, v[1] / norm];
        (v1, [-v1[1], v1[0]])
    } else if a >= d {
        ([1.0, 0.0], [0.0, 1.0])
    } else {
        ([0.0, 1.0], [1.0, 0.0])
    };
    ([l1, l2], [[v1[0], v2[0]], [v1[1], v2[1]]])
}

const PSD_CLAMP: f64 = 1e-9;

/// Clamps slightly negative eigenvalues to zero; errors beyond tolerance.
fn clamped_eigenvalues(m: &[[f64; 2]; 2]) -> Result<([f64; 2], [[f64; 2]; 2]), MetricError> {
    let (mut lams, vecs) = sym_eigen_2x2(m);
    for l in &mut lams {
        if *l < -PSD_CLAMP {
            return Err(MetricError::NotPsd { eigenvalue: *l });
        }
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    Ok((lams, vecs))
}

/// Symmetric PSD square root via eigendecomposition.
fn sqrt_psd_2x2(m: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2], MetricError> {
    let (lams, v) = clamped_eigenvalues(m)?;
    let (s1, s2) = (lams[0].sqrt(), lams[1].sqrt());
    // V diag(s) V^T
    let mut out = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = s1 * v[i][0] * v[j][0] + s2 * v[i][1] * v[j][1];
        }
    }
    Ok(out)
}

fn matmul2(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Fréchet distance between two Gaussian fits:
/// `|mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2})`, with the matrix
/// square root taken on the symmetrized product `Sa^{1/2} Sb Sa^{1/2}`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64, MetricError> {
    let dm = [a.mean[0] - b.mean[0], a.mean[1] - b.mean[1]];
    let mean_term = dm[0] * dm[0] + dm[1] * dm[1];
    let sa_half = sqrt_psd_2x2(&a.covariance)?;
    let prod = matmul2(&matmul2(&sa_half, &b.covariance), &sa_half);
    // symmetrize against roundoff before the eigen solve
    let sym = [
        [prod[0][0], 0.5 * (prod[0][1] + prod[1][0])],
        [0.5 * (prod[0][1] + prod[1][0]), prod[1][1]],
    ];
    let (lams, _) = clamped_eigenvalues(&sym)?;
    let tr_sqrt = lams[0].sqrt() + lams[1].sqrt();
    let tr_a = a.covariance[0][0] + a.covariance[1][1];
    let tr_b = b.covariance[0][0] + b.covariance[1][1];
    Ok((mean_term + tr_a + tr_b - 2.0 * tr_sqrt).max(0.0))
}

/// Gaussian kernel `exp(-|x - y|^2 / (2 sigma^2))`.
fn gauss_kernel(x: &Point, y: &Point, inv_two_sigma2: f64) -> f64 {
    let dx = x[0] - y[0];
    let dy = x[1] - y[1];
    (-(dx * dx + dy * dy) * inv_two_sigma2).exp()
}

/// Biased squared-MMD estimator (diagonal terms included, so identical
/// sets give exactly zero). Negative roundoff is clamped at zero.
pub fn mmd2_biased(x: &[Point], y: &[Point], sigma: f64) -> Result<f64, MetricError> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricError::TooFewPoints { need: 1, got: 0 });
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut kxx = 0.0;
    for a in x {
        for b in x {
            kxx += gauss_kernel(a, b, inv);
        }
    }
    let mut kyy = 0.0;
    for a in y {
        for b in y {
            kyy += gauss_kernel(a, b, inv);
        }
    }
    let mut kxy = 0.0;
    for a in x {
        for b in y {
            kxy += gauss_kernel(a, b, inv);
        }
    }
    Ok((kxx / (m * m) + kyy / (n * n) - 2.0 * kxy / (m * n)).max(0.0))
}

/// KMMD: square root of the biased squared-MMD estimator, sigma = 1 by
/// convention unless stated otherwise.
pub fn kmmd(x: &[Point], y: &[Point], sigma: f64) -> Result<f64, MetricError> {
    Ok(mmd2_biased(x, y, sigma)?.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeMetrics {
    /// Fraction of modes with at least one point within `k_sigma * sigma`
    /// of the center.
    pub coverage: f64,
    /// Fraction of points within `k_sigma * sigma` of their nearest center.
    pub quality: f64,
}

/// Mode-collapse detector over a set of class distributions.
pub fn mode_metrics(
    points: &[Point],
    distributions: &[&ClassDistribution],
    k_sigma: f64,
) -> ModeMetrics {
    if points.is_empty() || distributions.is_empty() {
        return ModeMetrics { coverage: 0.0, quality: 0.0 };
    }
    let radii: Vec<f64> = distributions.iter().map(|d| k_sigma * d.sigma_scale()).collect();
    let mut covered = vec![false; distributions.len()];
    let mut good_points = 0usize;
    for p in points {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, dist) in distributions.iter().enumerate() {
            let d = (p[0] - dist.center[0]).hypot(p[1] - dist.center[1]);
            if d < best_d {
                best_d = d;
                best = i;
            }
            if d <= radii[i] {
                covered[i] = true;
            }
        }
        if best_d <= radii[best] {
            good_points += 1;
        }
    }
    ModeMetrics {
        coverage: covered.iter().filter(|&&c| c).count() as f64 / distributions.len() as f64,
        quality: good_points as f64 / points.len() as f64,
    }
}

/// One row of the metric report interface.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub run_id: String,
    pub iteration: u64,
    pub class_id: usize,
    pub frechet: f64,
    pub kmmd: f64,
    pub coverage: f64,
    pub quality: f64,
}

pub const METRIC_CSV_HEADER: &str = "run_id,iteration,class_id,frechet,kmmd,coverage,quality";

impl MetricRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:?},{:?},{:?},{:?}",
            self.run_id, self.iteration, self.class_id, self.frechet, self.kmmd, self.coverage,
            self.quality
        )
    }
}
