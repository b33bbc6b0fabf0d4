//! Randomized feature maps approximating universal kernels.
//!
//! Two families are supported: random Fourier features for the Gaussian RBF
//! kernel, `phi_i(x) = sqrt(2/L) cos(a_i'x + b_i)` with `a_i ~ N(0, l^-2 I)`
//! and `b_i ~ U[0, 2pi)`, and random ReLU features
//! `phi_i(x) = max(0, a_i'x + b_i)` with standard normal `a_i`, `b_i`.
//!
//! Sampling is driven by a ChaCha20 stream cipher seeded from the spec's
//! `seed`, with normals drawn through the `rand_distr` ziggurat sampler, so a
//! given `FeatureSpec` always reproduces the same basis.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrfError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Fourier,
    Relu,
}

/// Parameters that fully determine a randomized feature basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    /// Number of raw features L.
    pub count: usize,
    /// Input (state) dimension d.
    pub input_dim: usize,
    /// RBF lengthscale; only meaningful for Fourier features.
    #[serde(default = "default_lengthscale")]
    pub lengthscale: f64,
    pub seed: u64,
}

fn default_lengthscale() -> f64 {
    1.0
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(UrfError::invalid("count", "must be >= 1"));
        }
        if self.input_dim == 0 {
            return Err(UrfError::invalid("input_dim", "must be >= 1"));
        }
        if self.kind == FeatureKind::Fourier && !(self.lengthscale > 0.0) {
            return Err(UrfError::invalid(
                "lengthscale",
                "must be > 0 for Fourier features",
            ));
        }
        Ok(())
    }
}

/// A frozen randomized feature basis, optionally compressed by an orthonormal
/// PCA projection fitted on training inputs.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    spec: FeatureSpec,
    /// L x d direction matrix; row i is a_i.
    directions: DMatrix<f64>,
    /// Length-L offset vector.
    offsets: DVector<f64>,
    /// Optional Lhat x L projection with orthonormal rows.
    projection: Option<DMatrix<f64>>,
    /// Singular values of the training feature matrix, kept for energy reports.
    singular_values: Option<Vec<f64>>,
}

/// Builds the feature basis from a spec by drawing directions and offsets
/// from the seeded generator.
pub fn build_feature_map(spec: &FeatureSpec) -> Result<FeatureMap> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let (l, d) = (spec.count, spec.input_dim);
    let mut directions = DMatrix::zeros(l, d);
    let mut offsets = DVector::zeros(l);
    match spec.kind {
        FeatureKind::Fourier => {
            let scale = 1.0 / spec.lengthscale;
            for i in 0..l {
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    directions[(i, j)] = scale * z;
                }
                offsets[i] = rng.gen_range(0.0..std::f64::consts::TAU);
            }
        }
        FeatureKind::Relu => {
            for i in 0..l {
                for j in 0..d {
                    directions[(i, j)] = rng.sample(StandardNormal);
                }
                offsets[i] = rng.sample(StandardNormal);
            }
        }
    }
    Ok(FeatureMap {
        spec: spec.clone(),
        directions,
        offsets,
        projection: None,
        singular_values: None,
    })
}

impl FeatureMap {
    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Raw feature count L.
    pub fn raw_dim(&self) -> usize {
        self.spec.count
    }

    /// Dimension of the feature vector this map produces (Lhat when a
    /// projection is attached, else L).
    pub fn output_dim(&self) -> usize {
        match &self.projection {
            Some(p) => p.nrows(),
            None => self.spec.count,
        }
    }

    pub fn projection(&self) -> Option<&DMatrix<f64>> {
        self.projection.as_ref()
    }

    pub fn singular_values(&self) -> Option<&[f64]> {
        self.singular_values.as_deref()
    }

    /// Fraction of spectral energy retained by the attached projection.
    pub fn retained_energy(&self) -> Option<f64> {
        let sv = self.singular_values.as_ref()?;
        let p = self.projection.as_ref()?;
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let kept: f64 = sv.iter().take(p.nrows()).map(|s| s * s).sum();
        Some(kept / total)
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(UrfError::dims("feature input", self.spec.input_dim, x.len()));
        }
        Ok(())
    }

    fn raw_evaluate(&self, x: &DVector<f64>) -> DVector<f64> {
        let pre = &self.directions * x + &self.offsets;
        match self.spec.kind {
            FeatureKind::Fourier => {
                let scale = (2.0 / self.spec.count as f64).sqrt();
                pre.map(|v| scale * v.cos())
            }
            FeatureKind::Relu => pre.map(|v| v.max(0.0)),
        }
    }

    /// Evaluates the feature vector at a state.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let raw = self.raw_evaluate(x);
        Ok(match &self.projection {
            Some(p) => p * raw,
            None => raw,
        })
    }

    /// Jacobian of `evaluate` with respect to the state, `output_dim x d`.
    ///
    /// ReLU features use derivative 0 at exactly zero pre-activation.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let pre = &self.directions * x + &self.offsets;
        let l = self.spec.count;
        let d = self.spec.input_dim;
        let mut jac = DMatrix::zeros(l, d);
        match self.spec.kind {
            FeatureKind::Fourier => {
                let scale = (2.0 / l as f64).sqrt();
                for i in 0..l {
                    let s = -scale * pre[i].sin();
                    for j in 0..d {
                        jac[(i, j)] = s * self.directions[(i, j)];
                    }
                }
            }
            FeatureKind::Relu => {
                for i in 0..l {
                    if pre[i] > 0.0 {
                        for j in 0..d {
                            jac[(i, j)] = self.directions[(i, j)];
                        }
                    }
                }
            }
        }
        Ok(match &self.projection {
            Some(p) => p * jac,
            None => jac,
        })
    }

    /// Evaluates the raw (unprojected) features at every input row, producing
    /// the T x L design matrix.
    pub fn design_matrix(&self, inputs: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(inputs.len(), self.spec.count);
        for (t, x) in inputs.iter().enumerate() {
            self.check_input(x)?;
            m.row_mut(t).copy_from_slice(self.raw_evaluate(x).as_slice());
        }
        Ok(m)
    }

    /// Evaluates the projected features at every input row (T x output_dim).
    pub fn projected_design_matrix(&self, inputs: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(inputs.len(), self.output_dim());
        for (t, x) in inputs.iter().enumerate() {
            m.row_mut(t).copy_from_slice(self.evaluate(x)?.as_slice());
        }
        Ok(m)
    }
}

/// Fits a PCA projection on the training inputs via thin SVD of the T x L
/// feature matrix; rows of the returned projection are the top `reduced_dim`
/// right singular vectors.
pub fn fit_pca_projection(
    map: &FeatureMap,
    inputs: &[DVector<f64>],
    reduced_dim: usize,
) -> Result<FeatureMap> {
    if map.projection.is_some() {
        return Err(UrfError::invalid(
            "map",
            "feature map already carries a projection",
        ));
    }
    let limit = map.spec.count.min(inputs.len());
    if reduced_dim == 0 || reduced_dim > limit {
        return Err(UrfError::invalid(
            "reduced_dim",
            format!("must be in 1..={limit} (min of L and sample count)"),
        ));
    }
    let phi = map.design_matrix(inputs)?;
    let svd = phi
        .clone()
        .svd(false, true)
        .v_t
        .ok_or_else(|| UrfError::Numerical("SVD failed to produce right singular vectors".into()))?;
    let sv = {
        let s = phi.svd(false, false).singular_values;
        s.iter().copied().collect::<Vec<_>>()
    };
    let smax = sv.first().copied().unwrap_or(0.0);
    let tol = smax * (inputs.len().max(map.spec.count) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol.max(1e-12)).count();
    if rank < reduced_dim {
        return Err(UrfError::RankDeficient {
            requested: reduced_dim,
            achieved: rank,
        });
    }
    let projection = svd.rows(0, reduced_dim).into_owned();
    Ok(FeatureMap {
        spec: map.spec.clone(),
        directions: map.directions.clone(),
        offsets: map.offsets.clone(),
        projection: Some(projection),
        singular_values: Some(sv),
    })
}

/// Serialized form; directions and offsets are rebuilt from the seed.
#[derive(Debug, Serialize, Deserialize)]
struct FeatureMapJson {
    kind: FeatureKind,
    #[serde(rename = "L")]
    count: usize,
    #[serde(rename = "d")]
    input_dim: usize,
    lengthscale: f64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    projection: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    proj_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    singular_values: Option<Vec<f64>>,
}

impl Serialize for FeatureMap {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = FeatureMapJson {
            kind: self.spec.kind,
            count: self.spec.count,
            input_dim: self.spec.input_dim,
            lengthscale: self.spec.lengthscale,
            seed: self.spec.seed,
            projection: self.projection.as_ref().map(|p| {
                let mut v = Vec::with_capacity(p.nrows() * p.ncols());
                for i in 0..p.nrows() {
                    for j in 0..p.ncols() {
                        v.push(p[(i, j)]);
                    }
                }
                v
            }),
            proj_rows: self.projection.as_ref().map(|p| p.nrows()),
            singular_values: self.singular_values.clone(),
        };
        doc.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for FeatureMap {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let doc = FeatureMapJson::deserialize(de)?;
        let spec = FeatureSpec {
            kind: doc.kind,
            count: doc.count,
            input_dim: doc.input_dim,
            lengthscale: doc.lengthscale,
            seed: doc.seed,
        };
        let mut map = build_feature_map(&spec).map_err(D::Error::custom)?;
        if let (Some(flat), Some(rows)) = (doc.projection, doc.proj_rows) {
            if rows * spec.count != flat.len() {
                return Err(D::Error::custom("projection shape mismatch"));
            }
            map.projection = Some(DMatrix::from_row_slice(rows, spec.count, &flat));
        }
        map.singular_values = doc.singular_values;
        Ok(map)
    }
}
