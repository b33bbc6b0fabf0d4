//! Ground-truth reference systems, fixed-step integrators, stage costs, and
//! noisy training-data generation.
//!
//! Three plants are provided:
//! - a discrete source-spiral map `x+ = A x + cos(B x + c)` with an expanding
//!   rotation `A` and randomly drawn `(B, c)`,
//! - the Van der Pol oscillator `dx1 = (1 - x2^2) x1 - x2, dx2 = x1`,
//!   integrated with classical fixed-step RK4 (this swaps the textbook
//!   variable roles but is the same oscillator under relabeling),
//! - a damped pendulum `dx1 = x2, dx2 = -(g/l) sin x1 - (beta/(m l^2)) x2`
//!   under semi-implicit Euler, learned in the embedded Cartesian state
//!   `(l cos x1, l sin x1, x2)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Result, UrfError};

/// Fixed spiral rotation angle and expansion used when none is configured.
pub const SPIRAL_ANGLE: f64 = 0.3;
pub const SPIRAL_EXPANSION: f64 = 1.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    /// Discrete map `x+ = A x + cos(B x + c)`. When `matrix_seed` is given the
    /// affine pair (B, c) is drawn from it; A is the fixed expanding rotation.
    SourceSpiral { matrix_seed: u64 },
    VanDerPol,
    DampedPendulum,
}

/// Pendulum physical constants (g, m, l, beta).
pub const PENDULUM_GRAVITY: f64 = 9.81;
pub const PENDULUM_MASS: f64 = 1.0;
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_FRICTION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorMethod {
    /// The system is already a discrete map; dt is ignored.
    DiscreteMap,
    Rk4,
    SemiImplicitEuler,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub method: IntegratorMethod,
    pub dt: f64,
}

impl IntegratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.method != IntegratorMethod::DiscreteMap && !(self.dt > 0.0) {
            return Err(UrfError::invalid("dt", "must be > 0 for continuous systems"));
        }
        Ok(())
    }
}

/// A reference plant with its integrator resolved.
#[derive(Debug, Clone)]
pub struct ReferenceSystem {
    spec: SystemSpec,
    integrator: IntegratorSpec,
    /// Spiral parameters, present only for SourceSpiral.
    spiral: Option<SpiralParams>,
}

#[derive(Debug, Clone)]
pub struct SpiralParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

fn spiral_params(seed: u64) -> SpiralParams {
    let (s, c) = SPIRAL_ANGLE.sin_cos();
    let a = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) * SPIRAL_EXPANSION;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // B entries ~ N(0, 0.25), c ~ U(0, 2pi)
    let b = DMatrix::from_fn(2, 2, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let cvec = DVector::from_fn(2, |_, _| rng.gen_range(0.0..std::f64::consts::TAU));
    SpiralParams { a, b, c: cvec }
}

impl ReferenceSystem {
    pub fn new(spec: SystemSpec, integrator: IntegratorSpec) -> Result<Self> {
        integrator.validate()?;
        let compatible = matches!(
            (&spec, integrator.method),
            (SystemSpec::SourceSpiral { .. }, IntegratorMethod::DiscreteMap)
                | (SystemSpec::VanDerPol, IntegratorMethod::Rk4)
                | (SystemSpec::DampedPendulum, IntegratorMethod::SemiImplicitEuler)
        );
        if !compatible {
            return Err(UrfError::invalid(
                "integrator",
                format!("{:?} is not compatible with {:?}", integrator.method, spec),
            ));
        }
        let spiral = match &spec {
            SystemSpec::SourceSpiral { matrix_seed } => Some(spiral_params(*matrix_seed)),
            _ => None,
        };
        Ok(ReferenceSystem { spec, integrator, spiral })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn integrator(&self) -> IntegratorSpec {
        self.integrator
    }

    pub fn spiral(&self) -> Option<&SpiralParams> {
        self.spiral.as_ref()
    }

    /// Raw (pre-embedding) state dimension.
    pub fn state_dim(&self) -> usize {
        2
    }

    /// Dimension of the state the learned model operates on.
    pub fn model_dim(&self) -> usize {
        match self.spec {
            SystemSpec::DampedPendulum => 3,
            _ => 2,
        }
    }

    /// One exact transition of the reference system in raw coordinates.
    pub fn true_step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != 2 {
            return Err(UrfError::dims("true_step state", 2, x.len()));
        }
        Ok(match &self.spec {
            SystemSpec::SourceSpiral { .. } => {
                let p = self.spiral.as_ref().expect("spiral params");
                let arg = &p.b * x + &p.c;
                &p.a * x + arg.map(|v| v.cos())
            }
            SystemSpec::VanDerPol => rk4_step(vdp_ode, x, self.integrator.dt),
            SystemSpec::DampedPendulum => {
                let dt = self.integrator.dt;
                let (theta, v) = (x[0], x[1]);
                let acc = -(PENDULUM_GRAVITY / PENDULUM_LENGTH) * theta.sin()
                    - (PENDULUM_FRICTION / (PENDULUM_MASS * PENDULUM_LENGTH * PENDULUM_LENGTH)) * v;
                let v_next = v + dt * acc;
                let theta_next = theta + dt * v_next;
                DVector::from_vec(vec![theta_next, v_next])
            }
        })
    }

    /// One transition in model coordinates (embedded for the pendulum).
    pub fn true_step_model(&self, x_model: &DVector<f64>) -> Result<DVector<f64>> {
        match self.spec {
            SystemSpec::DampedPendulum => {
                let raw = pendulum_unembed(x_model)?;
                Ok(pendulum_embed(&self.true_step(&raw)?))
            }
            _ => self.true_step(x_model),
        }
    }

    /// Maps a raw state into model coordinates.
    pub fn embed(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.spec {
            SystemSpec::DampedPendulum => pendulum_embed(x),
            _ => x.clone(),
        }
    }

    /// Simulates a trajectory in model coordinates.
    pub fn simulate(&self, x0_raw: &DVector<f64>, steps: usize) -> Result<Trajectory> {
        let mut raw = x0_raw.clone();
        let mut states = vec![self.embed(&raw)];
        for _ in 0..steps {
            raw = self.true_step(&raw)?;
            states.push(self.embed(&raw));
        }
        Ok(Trajectory { states })
    }

    /// Draws an initial condition in raw coordinates per the system's law.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self.spec {
            SystemSpec::SourceSpiral { .. } => {
                DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal))
            }
            SystemSpec::VanDerPol => DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
            SystemSpec::DampedPendulum => DVector::from_vec(vec![
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.gen_range(-1.0..1.0),
            ]),
        }
    }
}

fn vdp_ode(x: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![(1.0 - x[1] * x[1]) * x[0] - x[1], x[0]])
}

fn rk4_step<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>, dt: f64) -> DVector<f64> {
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (dt / 2.0)));
    let k3 = f(&(x + &k2 * (dt / 2.0)));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Cartesian embedding of the pendulum state: `(l cos theta, l sin theta, v)`.
pub fn pendulum_embed(x: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![
        PENDULUM_LENGTH * x[0].cos(),
        PENDULUM_LENGTH * x[0].sin(),
        x[1],
    ])
}

fn pendulum_unembed(x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != 3 {
        return Err(UrfError::dims("embedded pendulum state", 3, x.len()));
    }
    Ok(DVector::from_vec(vec![x[1].atan2(x[0]), x[2]]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `c(x) = x'x`.
    Quadratic,
    /// `c(a, b, v) = b^2 - a + 0.1 v^2` on the embedded pendulum state.
    PendulumUpright,
}

/// Stage cost value and analytic gradient.
pub fn stage_cost(kind: CostKind, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    match kind {
        CostKind::Quadratic => Ok((x.norm_squared(), x * 2.0)),
        CostKind::PendulumUpright => {
            if x.len() != 3 {
                return Err(UrfError::dims("pendulum cost state", 3, x.len()));
            }
            let (a, b, v) = (x[0], x[1], x[2]);
            Ok((
                b * b - a + 0.1 * v * v,
                DVector::from_vec(vec![-1.0, 2.0 * b, 0.2 * v]),
            ))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub num_rollouts: usize,
    pub length: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_rollouts == 0 {
            return Err(UrfError::invalid("num_rollouts", "must be >= 1"));
        }
        if self.length == 0 {
            return Err(UrfError::invalid("length", "must be >= 1"));
        }
        if self.noise_std < 0.0 {
            return Err(UrfError::invalid("noise_std", "must be >= 0"));
        }
        Ok(())
    }
}

/// Transition pairs in model coordinates; targets carry additive Gaussian
/// observation noise on the successor state.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub inputs: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
    pub noise_std: f64,
}

impl RegressionDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }

    /// Residual targets `y_i - h(x_i)` against a nominal model.
    pub fn residuals(&self, nominal: &crate::dynamics::NominalModel) -> DMatrix<f64> {
        let p = self.input_dim();
        let mut m = DMatrix::zeros(self.len(), p);
        for (t, (x, y)) in self.inputs.iter().zip(&self.targets).enumerate() {
            let r = y - nominal.value(x);
            for j in 0..p {
                m[(t, j)] = r[j];
            }
        }
        m
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let d = self.input_dim();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.extend((0..d).map(|i| format!("y{i}")));
        wtr.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let mut rec: Vec<String> = x.iter().map(|v| format!("{v:.17e}")).collect();
            rec.extend(y.iter().map(|v| format!("{v:.17e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, noise_std: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let d = headers.iter().filter(|h| h.starts_with('x')).count();
        let p = headers.iter().filter(|h| h.starts_with('y')).count();
        if d == 0 || p != d {
            return Err(UrfError::invalid(
                "dataset",
                format!("expected matching x/y column groups, got {d} x and {p} y"),
            ));
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 * d {
                return Err(UrfError::invalid(
                    "dataset",
                    format!("row has {} fields, expected {}", rec.len(), 2 * d),
                ));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| UrfError::invalid("dataset", format!("non-numeric field `{s}`")))
            };
            let mut xi = DVector::zeros(d);
            let mut yi = DVector::zeros(d);
            for j in 0..d {
                xi[j] = parse(&rec[j])?;
                yi[j] = parse(&rec[d + j])?;
            }
            inputs.push(xi);
            targets.push(yi);
        }
        Ok(RegressionDataset { inputs, targets, noise_std })
    }
}

/// Simulates noisy training rollouts and returns the transition pairs along
/// with the raw (model-coordinate, noise-free) trajectories.
pub fn generate_dataset(
    system: &ReferenceSystem,
    config: &RolloutConfig,
) -> Result<(RegressionDataset, Vec<Trajectory>)> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut inputs = Vec::with_capacity(config.num_rollouts * config.length);
    let mut targets = Vec::with_capacity(config.num_rollouts * config.length);
    let mut trajectories = Vec::with_capacity(config.num_rollouts);
    let p = system.model_dim();
    for _ in 0..config.num_rollouts {
        let x0 = system.sample_initial(&mut rng);
        let traj = system.simulate(&x0, config.length)?;
        for n in 0..config.length {
            let noise = DVector::from_fn(p, |_, _| {
                config.noise_std * rng.sample::<f64, _>(StandardNormal)
            });
            inputs.push(traj.states[n].clone());
            targets.push(&traj.states[n + 1] + noise);
        }
        trajectories.push(traj);
    }
    Ok((
        RegressionDataset {
            inputs,
            targets,
            noise_std: config.noise_std,
        },
        trajectories,
    ))
}
