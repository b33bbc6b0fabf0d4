//! Bayesian linear regression over feature weights and the chi-squared
//! credible ellipsoids built from the resulting posteriors.
//!
//! The prior is fixed at N(0, I). With design matrix `Phi` and noise variance
//! `s2`, the posterior is `mean = (Phi'Phi + s2 I)^-1 Phi'y` and
//! `cov = s2 (Phi'Phi + s2 I)^-1`, computed through a Cholesky factorization
//! of the precision matrix; no explicit inverse is formed outside triangular
//! solves.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrfError};

/// Gaussian posterior over the feature weights of one output dimension.
#[derive(Debug, Clone)]
pub struct WeightPosterior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    covariance_factor: DMatrix<f64>,
    noise_var: f64,
    data_count: usize,
    // sufficient statistics kept for incremental updates
    precision: DMatrix<f64>,
    moment: DVector<f64>,
}

/// Ellipsoid `{w : (w - center)' shape^-1 (w - center) <= 1}`, or a singleton
/// at `center` in degenerate (certainty-equivalent) mode.
#[derive(Debug, Clone)]
pub struct UncertaintySet {
    center: DVector<f64>,
    shape: DMatrix<f64>,
    shape_factor: DMatrix<f64>,
    level: f64,
    degenerate: bool,
}

const EIGEN_FLOOR: f64 = 1e-12;

/// Cholesky of a symmetric PSD matrix, clamping eigenvalues below the floor
/// when the direct factorization fails (near-singular posteriors after PCA).
fn chol_psd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok((sym, c.l()));
    }
    let eig = sym.symmetric_eigen();
    let clamped = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(EIGEN_FLOOR)),
    );
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    let c = Cholesky::new(rebuilt.clone())
        .ok_or_else(|| UrfError::Numerical("Cholesky failed after eigenvalue clamping".into()))?;
    Ok((rebuilt, c.l()))
}

impl WeightPosterior {
    /// The prior N(0, I_dim) with no observed data.
    pub fn prior(dim: usize, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) {
            return Err(UrfError::invalid("noise_var", "must be > 0"));
        }
        Ok(WeightPosterior {
            mean: DVector::zeros(dim),
            covariance: DMatrix::identity(dim, dim),
            covariance_factor: DMatrix::identity(dim, dim),
            noise_var,
            data_count: 0,
            precision: DMatrix::identity(dim, dim) * noise_var,
            moment: DVector::zeros(dim),
        })
    }

    fn from_stats(
        precision: DMatrix<f64>,
        moment: DVector<f64>,
        noise_var: f64,
        data_count: usize,
    ) -> Result<Self> {
        let chol = Cholesky::new(precision.clone())
            .ok_or_else(|| UrfError::Numerical("precision matrix is not positive definite".into()))?;
        let mean = chol.solve(&moment);
        let covariance = chol.inverse() * noise_var;
        let (covariance, covariance_factor) = chol_psd(&covariance)?;
        Ok(WeightPosterior {
            mean,
            covariance,
            covariance_factor,
            noise_var,
            data_count,
            precision,
            moment,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular factor F with F F' equal to the covariance.
    pub fn covariance_factor(&self) -> &DMatrix<f64> {
        &self.covariance_factor
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn data_count(&self) -> usize {
        self.data_count
    }

    /// Draws one sample from the posterior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        &self.mean + &self.covariance_factor * z
    }
}

fn check_finite_matrix(context: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(UrfError::Numerical(format!("non-finite entries in {context}")));
    }
    Ok(())
}

/// Fits the weight posterior for one output dimension.
pub fn fit_blr(features: &DMatrix<f64>, targets: &DVector<f64>, noise_var: f64) -> Result<WeightPosterior> {
    if !(noise_var > 0.0) {
        return Err(UrfError::invalid("noise_var", "must be > 0"));
    }
    if features.nrows() != targets.len() {
        return Err(UrfError::dims("fit_blr targets", features.nrows(), targets.len()));
    }
    check_finite_matrix("features", features)?;
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(UrfError::Numerical("non-finite entries in targets".into()));
    }
    let dim = features.ncols();
    let precision = features.transpose() * features + DMatrix::identity(dim, dim) * noise_var;
    let moment = features.transpose() * targets;
    WeightPosterior::from_stats(precision, moment, noise_var, features.nrows())
}

/// Fits one posterior per column of `targets`, sharing the precision matrix.
pub fn fit_blr_multi(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    noise_var: f64,
) -> Result<Vec<WeightPosterior>> {
    if !(noise_var > 0.0) {
        return Err(UrfError::invalid("noise_var", "must be > 0"));
    }
    if features.nrows() != targets.nrows() {
        return Err(UrfError::dims("fit_blr_multi targets", features.nrows(), targets.nrows()));
    }
    check_finite_matrix("features", features)?;
    check_finite_matrix("targets", targets)?;
    let dim = features.ncols();
    let precision = features.transpose() * features + DMatrix::identity(dim, dim) * noise_var;
    (0..targets.ncols())
        .map(|c| {
            let moment = features.transpose() * targets.column(c);
            WeightPosterior::from_stats(precision.clone(), moment, noise_var, features.nrows())
        })
        .collect()
}

/// Incorporates a new batch of rows, equivalent to refitting on the
/// concatenated dataset.
pub fn update_blr(
    posterior: &WeightPosterior,
    new_features: &DMatrix<f64>,
    new_targets: &DVector<f64>,
) -> Result<WeightPosterior> {
    if new_features.ncols() != posterior.dim() {
        return Err(UrfError::dims("update_blr features", posterior.dim(), new_features.ncols()));
    }
    if new_features.nrows() != new_targets.len() {
        return Err(UrfError::dims("update_blr targets", new_features.nrows(), new_targets.len()));
    }
    if new_features.nrows() == 0 {
        return Ok(posterior.clone());
    }
    check_finite_matrix("new_features", new_features)?;
    let precision = &posterior.precision + new_features.transpose() * new_features;
    let moment = &posterior.moment + new_features.transpose() * new_targets;
    WeightPosterior::from_stats(
        precision,
        moment,
        posterior.noise_var,
        posterior.data_count + new_features.nrows(),
    )
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 5, n = 6
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for (j, &c) in COEFFS.iter().enumerate() {
        ser += c / (x + 1.0 + j as f64);
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Regularized lower incomplete gamma P(a, x), via series expansion for
/// x < a + 1 and a Lentz continued fraction otherwise.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series for gamma(a, x)
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        // continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (-x + a * x.ln() - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// Quantile of the chi-squared distribution with `dof` degrees of freedom,
/// found by bracketed bisection on the regularized incomplete gamma CDF to an
/// absolute tolerance of 1e-9.
pub fn chi2_quantile(dof: usize, alpha: f64) -> Result<f64> {
    if dof == 0 {
        return Err(UrfError::invalid("dof", "must be >= 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(UrfError::invalid("alpha", "must be in (0, 1)"));
    }
    let a = dof as f64 / 2.0;
    let cdf = |q: f64| regularized_lower_gamma(a, q / 2.0);
    let mut hi = dof as f64 + 10.0;
    while cdf(hi) < alpha {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(UrfError::Numerical("chi2 quantile bracket expansion failed".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Builds the chi-squared credible ellipsoid around the posterior mean:
/// shape = chi2_quantile(L, alpha) * covariance.
pub fn credible_set(posterior: &WeightPosterior, alpha: f64) -> Result<UncertaintySet> {
    let q = chi2_quantile(posterior.dim(), alpha)?;
    let shape = posterior.covariance() * q;
    let (shape, shape_factor) = chol_psd(&shape)?;
    Ok(UncertaintySet {
        center: posterior.mean().clone(),
        shape,
        shape_factor,
        level: alpha,
        degenerate: false,
    })
}

impl UncertaintySet {
    /// Singleton set at the posterior mean (certainty-equivalent model).
    pub fn singleton(center: DVector<f64>) -> Self {
        let dim = center.len();
        UncertaintySet {
            center,
            shape: DMatrix::zeros(dim, dim),
            shape_factor: DMatrix::zeros(dim, dim),
            level: 0.0,
            degenerate: true,
        }
    }

    pub fn from_parts(center: DVector<f64>, shape: DMatrix<f64>, level: f64) -> Result<Self> {
        if shape.nrows() != center.len() || shape.ncols() != center.len() {
            return Err(UrfError::dims("shape matrix", center.len(), shape.nrows()));
        }
        let (shape, shape_factor) = chol_psd(&shape)?;
        Ok(UncertaintySet {
            center,
            shape,
            shape_factor,
            level,
            degenerate: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn shape_factor(&self) -> &DMatrix<f64> {
        &self.shape_factor
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Value of the quadratic form (w - center)' shape^-1 (w - center).
    pub fn quadratic_form(&self, w: &DVector<f64>) -> Result<f64> {
        if w.len() != self.dim() {
            return Err(UrfError::dims("membership query", self.dim(), w.len()));
        }
        if self.degenerate {
            let d = (w - &self.center).norm();
            return Ok(if d == 0.0 { 0.0 } else { f64::INFINITY });
        }
        let diff = w - &self.center;
        let z = self
            .shape_factor
            .clone()
            .solve_lower_triangular(&diff)
            .ok_or_else(|| UrfError::Numerical("singular shape factor".into()))?;
        Ok(z.norm_squared())
    }

    pub fn contains(&self, w: &DVector<f64>) -> Result<bool> {
        if self.degenerate {
            return Ok((w - &self.center).norm() <= 1e-12 * (1.0 + self.center.norm()));
        }
        Ok(self.quadratic_form(w)? <= 1.0 + 1e-12)
    }

    /// Draws a point uniformly from the ellipsoid (sphere direction scaled by
    /// the uniform-in-ball radius law, then mapped through the shape factor).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        if self.degenerate {
            return self.center.clone();
        }
        let n = self.dim();
        let mut u = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = u.norm();
        if norm > 0.0 {
            u /= norm;
        }
        let r: f64 = rng.gen::<f64>().powf(1.0 / n as f64);
        &self.center + &self.shape_factor * (u * r)
    }

    /// Minimizer of `g' w` over the set: `center - shape g / sqrt(g' shape g)`.
    /// A vanishing gradient (or one orthogonal to the shape) returns the center.
    pub fn support_minimizer(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        if g.len() != self.dim() {
            return Err(UrfError::dims("support gradient", self.dim(), g.len()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(UrfError::Numerical("non-finite gradient in support_minimizer".into()));
        }
        if self.degenerate {
            return Ok(self.center.clone());
        }
        let half = self.shape_factor.transpose() * g;
        let denom = half.norm();
        if denom < 1e-14 {
            return Ok(self.center.clone());
        }
        Ok(&self.center - (&self.shape * g) / denom)
    }
}

/// Serialized forms (row-major arrays with explicit dims).
#[derive(Debug, Serialize, Deserialize)]
pub struct PosteriorJson {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub noise_var: f64,
    pub data_count: usize,
    pub precision: Vec<f64>,
    pub moment: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SetJson {
    pub dim: usize,
    pub center: Vec<f64>,
    pub shape: Vec<f64>,
    pub level: f64,
    pub degenerate: bool,
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

impl WeightPosterior {
    pub fn to_json(&self) -> PosteriorJson {
        PosteriorJson {
            dim: self.dim(),
            mean: self.mean.iter().copied().collect(),
            covariance: to_row_major(&self.covariance),
            noise_var: self.noise_var,
            data_count: self.data_count,
            precision: to_row_major(&self.precision),
            moment: self.moment.iter().copied().collect(),
        }
    }

    pub fn from_json(doc: &PosteriorJson) -> Result<Self> {
        let d = doc.dim;
        if doc.mean.len() != d || doc.covariance.len() != d * d || doc.precision.len() != d * d {
            return Err(UrfError::invalid("posterior", "array lengths inconsistent with dim"));
        }
        let covariance = DMatrix::from_row_slice(d, d, &doc.covariance);
        let (covariance, covariance_factor) = chol_psd(&covariance)?;
        Ok(WeightPosterior {
            mean: DVector::from_column_slice(&doc.mean),
            covariance,
            covariance_factor,
            noise_var: doc.noise_var,
            data_count: doc.data_count,
            precision: DMatrix::from_row_slice(d, d, &doc.precision),
            moment: DVector::from_column_slice(&doc.moment),
        })
    }
}

impl UncertaintySet {
    pub fn to_json(&self) -> SetJson {
        SetJson {
            dim: self.dim(),
            center: self.center.iter().copied().collect(),
            shape: to_row_major(&self.shape),
            level: self.level,
            degenerate: self.degenerate,
        }
    }

    pub fn from_json(doc: &SetJson) -> Result<Self> {
        let d = doc.dim;
        if doc.center.len() != d || doc.shape.len() != d * d {
            return Err(UrfError::invalid("set", "array lengths inconsistent with dim"));
        }
        let center = DVector::from_column_slice(&doc.center);
        if doc.degenerate {
            return Ok(UncertaintySet::singleton(center));
        }
        let mut set = UncertaintySet::from_parts(center, DMatrix::from_row_slice(d, d, &doc.shape), doc.level)?;
        set.level = doc.level;
        Ok(set)
    }
}
