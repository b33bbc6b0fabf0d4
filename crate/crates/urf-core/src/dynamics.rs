//! The set-valued random-feature dynamics model: a known nominal map plus a
//! per-output-dimension feature residual whose weights range over credible
//! ellipsoids.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrfError};
use crate::features::FeatureMap;
use crate::regression::{PosteriorJson, SetJson, UncertaintySet, WeightPosterior};

type DynFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type DynJac = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Known nominal part `h` of the transition.
#[derive(Clone)]
pub enum NominalModel {
    Identity,
    Affine { matrix: DMatrix<f64>, offset: DVector<f64> },
    Custom { value: DynFn, jacobian: DynJac },
}

impl std::fmt::Debug for NominalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NominalModel::Identity => write!(f, "NominalModel::Identity"),
            NominalModel::Affine { matrix, .. } => {
                write!(f, "NominalModel::Affine({}x{})", matrix.nrows(), matrix.ncols())
            }
            NominalModel::Custom { .. } => write!(f, "NominalModel::Custom"),
        }
    }
}

impl NominalModel {
    pub fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            NominalModel::Identity => x.clone(),
            NominalModel::Affine { matrix, offset } => matrix * x + offset,
            NominalModel::Custom { value, .. } => value(x),
        }
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            NominalModel::Identity => DMatrix::identity(x.len(), x.len()),
            NominalModel::Affine { matrix, .. } => matrix.clone(),
            NominalModel::Custom { jacobian, .. } => jacobian(x),
        }
    }
}

/// A discrete-time state trajectory; row n is the state at step n.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Writes `n, x0..x{p-1}` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let p = self.states.first().map_or(0, |s| s.len());
        let mut header = vec!["n".to_string()];
        header.extend((0..p).map(|i| format!("x{i}")));
        wtr.write_record(&header)?;
        for (n, s) in self.states.iter().enumerate() {
            let mut rec = vec![n.to_string()];
            rec.extend(s.iter().map(|v| format!("{v:.17e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Weight-draw policy for uncertainty-tube sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TubeMode {
    /// One weight draw per sampled trajectory, held fixed over the horizon.
    FixedWeight,
    /// Fresh draws at every step.
    PerStep,
}

/// The learned set-valued dynamics model.
#[derive(Debug, Clone)]
pub struct UrfModel {
    nominal: NominalModel,
    features: FeatureMap,
    posteriors: Vec<WeightPosterior>,
    sets: Vec<UncertaintySet>,
    state_dim: usize,
}

const DIVERGENCE_LIMIT: f64 = 1e6;

impl UrfModel {
    pub fn new(
        nominal: NominalModel,
        features: FeatureMap,
        posteriors: Vec<WeightPosterior>,
        sets: Vec<UncertaintySet>,
    ) -> Result<Self> {
        let state_dim = features.input_dim();
        if posteriors.len() != state_dim {
            return Err(UrfError::dims("posteriors per output dim", state_dim, posteriors.len()));
        }
        if sets.len() != state_dim {
            return Err(UrfError::dims("sets per output dim", state_dim, sets.len()));
        }
        let fdim = features.output_dim();
        for p in &posteriors {
            if p.dim() != fdim {
                return Err(UrfError::dims("posterior dimension", fdim, p.dim()));
            }
        }
        for s in &sets {
            if s.dim() != fdim {
                return Err(UrfError::dims("set dimension", fdim, s.dim()));
            }
        }
        Ok(UrfModel {
            nominal,
            features,
            posteriors,
            sets,
            state_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.features.output_dim()
    }

    pub fn nominal(&self) -> &NominalModel {
        &self.nominal
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn posteriors(&self) -> &[WeightPosterior] {
        &self.posteriors
    }

    pub fn sets(&self) -> &[UncertaintySet] {
        &self.sets
    }

    pub fn mean_weights(&self) -> Vec<DVector<f64>> {
        self.posteriors.iter().map(|p| p.mean().clone()).collect()
    }

    fn check_weights(&self, weights: &[DVector<f64>]) -> Result<()> {
        if weights.len() != self.state_dim {
            return Err(UrfError::dims("weight vectors", self.state_dim, weights.len()));
        }
        let fdim = self.feature_dim();
        for w in weights {
            if w.len() != fdim {
                return Err(UrfError::dims("weight vector length", fdim, w.len()));
            }
        }
        Ok(())
    }

    /// One transition under a particular weight realization:
    /// `h(x) + (phi(x)'w_1, ..., phi(x)'w_p)`.
    pub fn step_with_weights(&self, x: &DVector<f64>, weights: &[DVector<f64>]) -> Result<DVector<f64>> {
        self.check_weights(weights)?;
        let phi = self.features.evaluate(x)?;
        let mut next = self.nominal.value(x);
        for (d, w) in weights.iter().enumerate() {
            next[d] += phi.dot(w);
        }
        Ok(next)
    }

    /// Transition under the posterior-mean weights.
    pub fn mean_step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let means = self.mean_weights();
        self.step_with_weights(x, &means)
    }

    fn guard(state: &DVector<f64>, step: usize) -> Result<()> {
        for &v in state.iter() {
            if !v.is_finite() {
                return Err(UrfError::Diverged {
                    step,
                    reason: "non-finite state entry".into(),
                });
            }
            if v.abs() > DIVERGENCE_LIMIT {
                return Err(UrfError::Diverged {
                    step,
                    reason: format!("state entry magnitude exceeds {DIVERGENCE_LIMIT:e}"),
                });
            }
        }
        Ok(())
    }

    /// Rolls the mean model forward for `horizon` steps.
    pub fn rollout_mean(&self, x0: &DVector<f64>, horizon: usize) -> Result<Trajectory> {
        let means = self.mean_weights();
        self.rollout_fixed(x0, horizon, &means)
    }

    /// Rollout with one weight realization held fixed over the horizon.
    pub fn rollout_fixed(
        &self,
        x0: &DVector<f64>,
        horizon: usize,
        weights: &[DVector<f64>],
    ) -> Result<Trajectory> {
        if horizon == 0 {
            return Err(UrfError::invalid("horizon", "must be >= 1"));
        }
        let mut states = Vec::with_capacity(horizon + 1);
        Self::guard(x0, 0)?;
        states.push(x0.clone());
        for n in 0..horizon {
            let next = self.step_with_weights(&states[n], weights)?;
            Self::guard(&next, n + 1)?;
            states.push(next);
        }
        Ok(Trajectory { states })
    }

    /// Rollout with a separate weight realization per step
    /// (`weights[n]` applies to the transition from step n).
    pub fn rollout_per_step(
        &self,
        x0: &DVector<f64>,
        weights: &[Vec<DVector<f64>>],
    ) -> Result<Trajectory> {
        if weights.is_empty() {
            return Err(UrfError::invalid("weights", "need at least one step"));
        }
        let mut states = Vec::with_capacity(weights.len() + 1);
        Self::guard(x0, 0)?;
        states.push(x0.clone());
        for (n, w) in weights.iter().enumerate() {
            let next = self.step_with_weights(&states[n], w)?;
            Self::guard(&next, n + 1)?;
            states.push(next);
        }
        Ok(Trajectory { states })
    }

    /// Samples plausible trajectories by drawing weights uniformly from each
    /// output dimension's ellipsoid.
    pub fn sample_uncertainty_tube(
        &self,
        x0: &DVector<f64>,
        horizon: usize,
        num_samples: usize,
        mode: TubeMode,
        seed: u64,
    ) -> Result<Vec<Trajectory>> {
        if num_samples == 0 {
            return Err(UrfError::invalid("num_samples", "must be >= 1"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(num_samples);
        for _ in 0..num_samples {
            let traj = match mode {
                TubeMode::FixedWeight => {
                    let draw: Vec<DVector<f64>> =
                        self.sets.iter().map(|s| s.sample_uniform(&mut rng)).collect();
                    self.rollout_fixed(x0, horizon, &draw)?
                }
                TubeMode::PerStep => {
                    let per_step: Vec<Vec<DVector<f64>>> = (0..horizon)
                        .map(|_| self.sets.iter().map(|s| s.sample_uniform(&mut rng)).collect())
                        .collect();
                    self.rollout_per_step(x0, &per_step)?
                }
            };
            out.push(traj);
        }
        Ok(out)
    }
}

/// Serializable nominal description; custom callbacks cannot be persisted.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NominalJson {
    Identity,
    Affine {
        dim: usize,
        matrix: Vec<f64>,
        offset: Vec<f64>,
    },
}

/// One JSON bundle holding the feature map and the per-dimension blocks.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelBundle {
    pub state_dim: usize,
    pub nominal: NominalJson,
    pub features: FeatureMap,
    pub posteriors: Vec<PosteriorJson>,
    pub sets: Vec<SetJson>,
}

impl UrfModel {
    pub fn to_bundle(&self) -> Result<ModelBundle> {
        let nominal = match &self.nominal {
            NominalModel::Identity => NominalJson::Identity,
            NominalModel::Affine { matrix, offset } => {
                let mut flat = Vec::with_capacity(matrix.nrows() * matrix.ncols());
                for i in 0..matrix.nrows() {
                    for j in 0..matrix.ncols() {
                        flat.push(matrix[(i, j)]);
                    }
                }
                NominalJson::Affine {
                    dim: matrix.nrows(),
                    matrix: flat,
                    offset: offset.iter().copied().collect(),
                }
            }
            NominalModel::Custom { .. } => {
                return Err(UrfError::invalid("nominal", "custom nominal models cannot be serialized"))
            }
        };
        Ok(ModelBundle {
            state_dim: self.state_dim,
            nominal,
            features: self.features.clone(),
            posteriors: self.posteriors.iter().map(|p| p.to_json()).collect(),
            sets: self.sets.iter().map(|s| s.to_json()).collect(),
        })
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        let nominal = match &bundle.nominal {
            NominalJson::Identity => NominalModel::Identity,
            NominalJson::Affine { dim, matrix, offset } => NominalModel::Affine {
                matrix: DMatrix::from_row_slice(*dim, *dim, matrix),
                offset: DVector::from_column_slice(offset),
            },
        };
        let posteriors = bundle
            .posteriors
            .iter()
            .map(WeightPosterior::from_json)
            .collect::<Result<Vec<_>>>()?;
        let sets = bundle
            .sets
            .iter()
            .map(UncertaintySet::from_json)
            .collect::<Result<Vec<_>>>()?;
        UrfModel::new(nominal, bundle.features.clone(), posteriors, sets)
    }
}
