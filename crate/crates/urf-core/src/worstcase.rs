//! Worst-case (and best-case) trajectory costs over the learned uncertainty
//! set, via an adjoint shooting method whose per-step Hamiltonian
//! minimization has a closed form on each ellipsoid.
//!
//! The exact method alternates a forward shooting pass, a backward adjoint
//! pass, and a full Hamiltonian minimization per step. The inexact variant
//! replaces the full minimization with a convex step toward the minimizer,
//! which is the Frank-Wolfe update on the accumulated cost seen as a deep
//! network over the horizon; with a full step the two coincide.
//!
//! Sign convention: callers state costs as `c` and ask for the `Worst`
//! (maximize accumulated c) or `Best` (minimize) direction; the internal
//! negation is not exposed. The accumulated cost charges stages 1..N, not
//! the initial state.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Trajectory, UrfModel};
use crate::error::{Result, UrfError};
use crate::regression::UncertaintySet;
use crate::systems::{stage_cost, CostKind};

type CostFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type CostGradFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Stage cost with analytic gradient.
#[derive(Clone)]
pub enum CostFunction {
    Quadratic,
    PendulumUpright,
    Custom { value: CostFn, gradient: CostGradFn },
}

impl std::fmt::Debug for CostFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostFunction::Quadratic => write!(f, "CostFunction::Quadratic"),
            CostFunction::PendulumUpright => write!(f, "CostFunction::PendulumUpright"),
            CostFunction::Custom { .. } => write!(f, "CostFunction::Custom"),
        }
    }
}

impl From<CostKind> for CostFunction {
    fn from(kind: CostKind) -> Self {
        match kind {
            CostKind::Quadratic => CostFunction::Quadratic,
            CostKind::PendulumUpright => CostFunction::PendulumUpright,
        }
    }
}

impl CostFunction {
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            CostFunction::Quadratic => Ok(stage_cost(CostKind::Quadratic, x)?.0),
            CostFunction::PendulumUpright => Ok(stage_cost(CostKind::PendulumUpright, x)?.0),
            CostFunction::Custom { value, .. } => Ok(value(x)),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            CostFunction::Quadratic => Ok(stage_cost(CostKind::Quadratic, x)?.1),
            CostFunction::PendulumUpright => Ok(stage_cost(CostKind::PendulumUpright, x)?.1),
            CostFunction::Custom { gradient, .. } => Ok(gradient(x)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Maximize the accumulated cost.
    Worst,
    /// Minimize the accumulated cost.
    Best,
}

impl Direction {
    /// Sign applied to the user-facing stage cost in the internal objective.
    fn cost_sign(self) -> f64 {
        match self {
            Direction::Worst => -1.0,
            Direction::Best => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `gamma_k = 2 / (k + 2)`.
    FwStandard,
    /// `gamma_k = 1`; reproduces the exact update.
    FullStep,
    /// `gamma_k = 1 / F`.
    Constant,
}

impl Schedule {
    pub fn gamma(self, k: usize, total: usize) -> f64 {
        match self {
            Schedule::FwStandard => 2.0 / (k as f64 + 2.0),
            Schedule::FullStep => 1.0,
            Schedule::Constant => 1.0 / total as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub direction: Direction,
    pub horizon: usize,
    pub max_iterations: usize,
    pub schedule: Schedule,
    pub tolerance: f64,
    pub initial_state: DVector<f64>,
    /// Keep a snapshot of the weight iterates after every outer iteration.
    pub record_history: bool,
}

impl SolverConfig {
    pub fn new(direction: Direction, horizon: usize, x0: DVector<f64>) -> Self {
        SolverConfig {
            direction,
            horizon,
            max_iterations: 200,
            schedule: Schedule::FwStandard,
            tolerance: 1e-8,
            initial_state: x0,
            record_history: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(UrfError::invalid("horizon", "must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(UrfError::invalid("max_iterations", "must be >= 1"));
        }
        if self.tolerance < 0.0 {
            return Err(UrfError::invalid("tolerance", "must be >= 0"));
        }
        Ok(())
    }
}

/// Per-step, per-dimension weight realization: `weights[n][d]`.
pub type WeightSchedule = Vec<Vec<DVector<f64>>>;

#[derive(Debug, Clone)]
pub struct WorstCaseResult {
    pub weights: WeightSchedule,
    pub trajectory: Trajectory,
    pub costates: Vec<DVector<f64>>,
    /// Accumulated user-facing cost J per outer iteration (including the
    /// final evaluation).
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Largest observed excess of any weight iterate's ellipsoid quadratic
    /// form over 1 across all iterations.
    pub max_membership_violation: f64,
    /// Weight snapshots per iteration when `record_history` was set.
    pub weight_history: Vec<WeightSchedule>,
}

impl WorstCaseResult {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("non-empty trace")
    }
}

/// Accumulated user-facing cost over stages 1..N.
pub fn total_cost(cost: &CostFunction, trajectory: &Trajectory) -> Result<f64> {
    let mut j = 0.0;
    for x in trajectory.states.iter().skip(1) {
        j += cost.value(x)?;
    }
    Ok(j)
}

/// Control Hamiltonian `chat(x) + p' (h(x) + f(x, W))` where `chat` is the
/// direction-signed stage cost. The nominal term shifts the value by a
/// weight-independent constant and changes no minimizer.
pub fn hamiltonian(
    model: &UrfModel,
    cost: &CostFunction,
    direction: Direction,
    x: &DVector<f64>,
    p_next: &DVector<f64>,
    weights: &[DVector<f64>],
) -> Result<f64> {
    if p_next.len() != model.state_dim() {
        return Err(UrfError::dims("costate", model.state_dim(), p_next.len()));
    }
    let chat = direction.cost_sign() * cost.value(x)?;
    let next = model.step_with_weights(x, weights)?;
    Ok(chat + p_next.dot(&next))
}

/// Closed-form minimizer of the Hamiltonian over one output dimension's
/// ellipsoid: with gradient `g = phi(x) * p_scalar`, the minimizer is
/// `center - shape g / sqrt(g' shape g)` (the shape already folds in the
/// credible radius).
pub fn minimize_hamiltonian_step(
    set: &UncertaintySet,
    feature_vec: &DVector<f64>,
    p_scalar: f64,
) -> Result<DVector<f64>> {
    if !p_scalar.is_finite() {
        return Err(UrfError::Numerical("non-finite costate entry".into()));
    }
    let g = feature_vec * p_scalar;
    set.support_minimizer(&g)
}

fn transition_jacobian(
    model: &UrfModel,
    x: &DVector<f64>,
    weights: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    let mut jac = model.nominal().jacobian(x);
    let phi_jac = model.features().jacobian(x)?;
    for (d, w) in weights.iter().enumerate() {
        // row d of the residual Jacobian is w_d' * d(phi)/dx
        let row = w.transpose() * &phi_jac;
        for j in 0..jac.ncols() {
            jac[(d, j)] += row[(0, j)];
        }
    }
    Ok(jac)
}

/// Backward adjoint sweep. `p_N = grad chat(x_N)` and
/// `p_n = grad chat(x_n) + J(x_n)' p_{n+1}` where `J` is the Jacobian of the
/// full transition (nominal included). Verifies the trajectory is the
/// forward pass of the supplied weights before sweeping.
pub fn backward_pass(
    model: &UrfModel,
    cost: &CostFunction,
    direction: Direction,
    trajectory: &Trajectory,
    weights: &WeightSchedule,
) -> Result<Vec<DVector<f64>>> {
    let n_steps = weights.len();
    if trajectory.len() != n_steps + 1 {
        return Err(UrfError::dims("trajectory length", n_steps + 1, trajectory.len()));
    }
    // recompute-and-compare guard
    for n in 0..n_steps {
        let next = model.step_with_weights(&trajectory.states[n], &weights[n])?;
        if (&next - &trajectory.states[n + 1]).amax() > 1e-9 {
            return Err(UrfError::Numerical(format!(
                "trajectory is not the forward pass of the supplied weights at step {n}"
            )));
        }
    }
    let sign = direction.cost_sign();
    let mut costates = vec![DVector::zeros(model.state_dim()); n_steps + 1];
    costates[n_steps] = cost.gradient(&trajectory.states[n_steps])? * sign;
    for n in (0..n_steps).rev() {
        let jac = transition_jacobian(model, &trajectory.states[n], &weights[n])?;
        costates[n] =
            cost.gradient(&trajectory.states[n])? * sign + jac.transpose() * &costates[n + 1];
    }
    Ok(costates)
}

fn initial_weights(model: &UrfModel, horizon: usize) -> WeightSchedule {
    let centers: Vec<DVector<f64>> = model.sets().iter().map(|s| s.center().clone()).collect();
    (0..horizon).map(|_| centers.clone()).collect()
}

fn membership_violation(model: &UrfModel, weights: &WeightSchedule) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for step in weights {
        for (d, w) in step.iter().enumerate() {
            let set = &model.sets()[d];
            if set.is_degenerate() {
                continue;
            }
            let qf = set.quadratic_form(w)?;
            worst = worst.max(qf - 1.0);
        }
    }
    Ok(worst)
}

fn run(
    model: &UrfModel,
    cost: &CostFunction,
    config: &SolverConfig,
    exact: bool,
) -> Result<WorstCaseResult> {
    config.validate()?;
    if config.initial_state.len() != model.state_dim() {
        return Err(UrfError::dims(
            "initial state",
            model.state_dim(),
            config.initial_state.len(),
        ));
    }
    let n_steps = config.horizon;
    let mut weights = initial_weights(model, n_steps);
    let mut trace: Vec<f64> = Vec::new();
    let mut history: Vec<WeightSchedule> = Vec::new();
    let mut max_violation: f64 = 0.0;
    if config.record_history {
        history.push(weights.clone());
    }

    let evaluate = |weights: &WeightSchedule| -> Result<(Trajectory, f64)> {
        let traj = model.rollout_per_step(&config.initial_state, weights)?;
        let j = total_cost(cost, &traj)?;
        Ok((traj, j))
    };

    for k in 0..config.max_iterations {
        let (traj, j) = evaluate(&weights).map_err(|e| match e {
            UrfError::Diverged { step, reason } => UrfError::Diverged {
                step,
                reason: format!("outer iteration {k}: {reason}"),
            },
            other => other,
        })?;
        if let Some(&prev) = trace.last() {
            if (j - prev).abs() < config.tolerance {
                trace.push(j);
                let costates = backward_pass(model, cost, config.direction, &traj, &weights)?;
                return Ok(WorstCaseResult {
                    weights,
                    trajectory: traj,
                    costates,
                    cost_trace: trace,
                    converged: true,
                    iterations_used: k,
                    max_membership_violation: max_violation,
                    weight_history: history,
                });
            }
        }
        trace.push(j);
        let costates = backward_pass(model, cost, config.direction, &traj, &weights)?;
        let gamma = config.schedule.gamma(k, config.max_iterations);
        for n in 0..n_steps {
            let phi = model.features().evaluate(&traj.states[n])?;
            for d in 0..model.state_dim() {
                let bar = minimize_hamiltonian_step(&model.sets()[d], &phi, costates[n + 1][d])?;
                if exact {
                    weights[n][d] = bar;
                } else {
                    let delta = &bar - &weights[n][d];
                    weights[n][d] += delta * gamma;
                }
            }
        }
        max_violation = max_violation.max(membership_violation(model, &weights)?);
        if config.record_history {
            history.push(weights.clone());
        }
    }

    let (traj, j) = evaluate(&weights)?;
    trace.push(j);
    let costates = backward_pass(model, cost, config.direction, &traj, &weights)?;
    Ok(WorstCaseResult {
        weights,
        trajectory: traj,
        costates,
        cost_trace: trace,
        converged: false,
        iterations_used: config.max_iterations,
        max_membership_violation: max_violation,
        weight_history: history,
    })
}

/// Inexact solver: Frank-Wolfe steps toward the per-step Hamiltonian
/// minimizer under the configured schedule.
pub fn solve(model: &UrfModel, cost: &CostFunction, config: &SolverConfig) -> Result<WorstCaseResult> {
    run(model, cost, config, false)
}

/// Exact solver: every outer iteration replaces each weight with the
/// closed-form Hamiltonian minimizer (the schedule is ignored).
pub fn solve_exact_pmp(
    model: &UrfModel,
    cost: &CostFunction,
    config: &SolverConfig,
) -> Result<WorstCaseResult> {
    run(model, cost, config, true)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostBounds {
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
}

/// Runs the solver in both directions plus the mean rollout and checks the
/// ordering `best <= mean <= worst` (within 1e-9).
pub fn cost_bounds(
    model: &UrfModel,
    cost: &CostFunction,
    config: &SolverConfig,
) -> Result<(CostBounds, WorstCaseResult, WorstCaseResult)> {
    let mut worst_cfg = config.clone();
    worst_cfg.direction = Direction::Worst;
    let mut best_cfg = config.clone();
    best_cfg.direction = Direction::Best;
    let worst = solve(model, cost, &worst_cfg)?;
    let best = solve(model, cost, &best_cfg)?;
    let mean_traj = model.rollout_mean(&config.initial_state, config.horizon)?;
    let mean = total_cost(cost, &mean_traj)?;
    let bounds = CostBounds {
        best: best.final_cost(),
        mean,
        worst: worst.final_cost(),
    };
    if bounds.best > bounds.mean + 1e-9 || bounds.mean > bounds.worst + 1e-9 {
        return Err(UrfError::Numerical(format!(
            "cost ordering violated: best {} mean {} worst {}",
            bounds.best, bounds.mean, bounds.worst
        )));
    }
    Ok((bounds, best, worst))
}

/// Serialized solver outcome for the CLI exporters.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultJson {
    pub direction: Direction,
    pub schedule: Schedule,
    pub horizon: usize,
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    pub max_membership_violation: f64,
    /// `weights[n][d]` flattened per step and dimension.
    pub weights: Vec<Vec<Vec<f64>>>,
}

impl ResultJson {
    pub fn from_result(result: &WorstCaseResult, config: &SolverConfig) -> Self {
        ResultJson {
            direction: config.direction,
            schedule: config.schedule,
            horizon: config.horizon,
            cost_trace: result.cost_trace.clone(),
            converged: result.converged,
            iterations_used: result.iterations_used,
            max_membership_violation: result.max_membership_violation,
            weights: result
                .weights
                .iter()
                .map(|step| step.iter().map(|w| w.iter().copied().collect()).collect())
                .collect(),
        }
    }
}
