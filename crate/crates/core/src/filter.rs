//! Consensus-on-measurement distributed Kalman filter.
//!
//! Every sampling instant each node predicts, seeds its fusion registers
//! with `N`-scaled local information, averages the registers with its
//! in-neighbors for `L` synchronous rounds, then corrects in information
//! form. The network size `N` is known to every node.

use crate::error::{Error, Result};
use crate::model::{check_sensors, SensorModel, SystemModel};
use crate::network::WeightMatrix;
use crate::numerics::{self, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prior,
    Posterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFilterState {
    pub x_hat: Vector,
    pub p: Matrix,
    pub phase: Phase,
}

impl NodeFilterState {
    pub fn posterior(x_hat: Vector, p: Matrix) -> Self {
        Self { x_hat, p, phase: Phase::Posterior }
    }
}

/// `S` (information matrix) and `I` (information vector) exchanged during fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionRegisters {
    pub info: Matrix,
    pub vector: Vector,
}

impl FusionRegisters {
    pub fn zeros(n: usize) -> Self {
        Self { info: Matrix::zeros(n, n), vector: Vector::zeros(n) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkFilterState {
    pub nodes: Vec<NodeFilterState>,
    /// Sampling instant of the current posteriors.
    pub k: usize,
}

impl NetworkFilterState {
    /// Every node starts from the same posterior `(x̂₀, P₀)`.
    pub fn new(node_count: usize, x0: Vector, p0: Matrix) -> Self {
        Self {
            nodes: vec![NodeFilterState::posterior(x0, p0); node_count],
            k: 0,
        }
    }

    /// `x̂ = 0`, `P = I`.
    pub fn standard(node_count: usize, state_dim: usize) -> Self {
        Self::new(node_count, Vector::zeros(state_dim), Matrix::identity(state_dim, state_dim))
    }
}

pub fn predict(state: &NodeFilterState, sys: &SystemModel) -> Result<NodeFilterState> {
    if state.phase != Phase::Posterior {
        return Err(Error::Usage("predict needs a posterior state".into()));
    }
    check_state_dims(state, sys.dim())?;
    Ok(NodeFilterState {
        x_hat: sys.a() * &state.x_hat,
        p: predict_covariance(sys, &state.p),
        phase: Phase::Prior,
    })
}

fn predict_covariance(sys: &SystemModel, p: &Matrix) -> Matrix {
    numerics::symmetrize(&(sys.a() * p * sys.a().transpose() + sys.q()))
}

fn check_state_dims(state: &NodeFilterState, n: usize) -> Result<()> {
    if state.x_hat.len() != n || state.p.shape() != (n, n) {
        return Err(Error::Dimension(format!("node state must have dimension {n}")));
    }
    Ok(())
}

/// `S⁽⁰⁾ = N Cᵀ R⁻¹ C`, `I⁽⁰⁾ = N Cᵀ R⁻¹ y`; zeros for a naive node.
pub fn init_registers(sensor: &SensorModel, y: &Vector, node_count: usize) -> Result<FusionRegisters> {
    let n = sensor.c().ncols();
    if y.len() != sensor.measurement_dim() {
        return Err(Error::Usage(format!(
            "measurement has {} entries, sensor produces {}",
            y.len(),
            sensor.measurement_dim()
        )));
    }
    if sensor.is_naive() {
        return Ok(FusionRegisters::zeros(n));
    }
    let scale = node_count as f64;
    let ct_rinv = sensor.c().transpose() * numerics::spd_inverse(sensor.r())?;
    Ok(FusionRegisters {
        info: numerics::symmetrize(&(&ct_rinv * sensor.c() * scale)),
        vector: ct_rinv * y * scale,
    })
}

/// In-neighbor lists with weights, precomputed once per weight matrix.
#[derive(Debug, Clone)]
pub struct FusionPlan {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl FusionPlan {
    pub fn new(w: &WeightMatrix) -> Self {
        Self { neighbors: w.in_neighbors() }
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    fn mix_matrices(&self, values: &[Matrix]) -> Vec<Matrix> {
        self.neighbors
            .iter()
            .map(|nb| {
                let mut acc = &values[nb[0].0] * nb[0].1;
                for &(j, l) in &nb[1..] {
                    acc += &values[j] * l;
                }
                acc
            })
            .collect()
    }

    pub(crate) fn mix_vectors(&self, values: &[Vector]) -> Vec<Vector> {
        self.neighbors
            .iter()
            .map(|nb| {
                let mut acc = &values[nb[0].0] * nb[0].1;
                for &(j, l) in &nb[1..] {
                    acc += &values[j] * l;
                }
                acc
            })
            .collect()
    }

    pub fn round(&self, registers: &[FusionRegisters]) -> Result<Vec<FusionRegisters>> {
        if registers.len() != self.node_count() {
            return Err(Error::Usage(format!(
                "{} registers for {} nodes",
                registers.len(),
                self.node_count()
            )));
        }
        let infos: Vec<Matrix> = registers.iter().map(|r| r.info.clone()).collect();
        let vectors: Vec<Vector> = registers.iter().map(|r| r.vector.clone()).collect();
        Ok(self
            .mix_matrices(&infos)
            .into_iter()
            .zip(self.mix_vectors(&vectors))
            .map(|(info, vector)| FusionRegisters { info, vector })
            .collect())
    }

    fn fuse_infos(&self, mut infos: Vec<Matrix>, rounds: usize) -> Vec<Matrix> {
        for _ in 0..rounds {
            infos = self.mix_matrices(&infos);
        }
        infos
    }

    pub(crate) fn fuse_vectors(&self, mut vectors: Vec<Vector>, rounds: usize) -> Vec<Vector> {
        for _ in 0..rounds {
            vectors = self.mix_vectors(&vectors);
        }
        vectors
    }
}

/// One synchronous consensus round: `S_i ← Σ_j l_ij S_j`, `I_i ← Σ_j l_ij I_j`.
pub fn fuse_round(registers: &[FusionRegisters], w: &WeightMatrix) -> Result<Vec<FusionRegisters>> {
    FusionPlan::new(w).round(registers)
}

/// Returns `(P⁻¹_prior, P_post)` with `P_post = (P⁻¹_prior + S)⁻¹`.
fn correct_covariance(p_prior: &Matrix, info: &Matrix) -> Result<(Matrix, Matrix)> {
    let prior_inv = numerics::spd_inverse(p_prior)
        .map_err(|_| Error::Numerical("prior covariance is singular".into()))?;
    let post = numerics::spd_inverse(&(&prior_inv + info))
        .map_err(|_| Error::Numerical("posterior information is singular".into()))?;
    Ok((prior_inv, post))
}

pub(crate) fn correct_state(x_prior: &Vector, prior_inv: &Matrix, post: &Matrix, vector: &Vector) -> Vector {
    post * (prior_inv * x_prior + vector)
}

pub fn correct(state: &NodeFilterState, regs: &FusionRegisters) -> Result<NodeFilterState> {
    if state.phase != Phase::Prior {
        return Err(Error::Usage("correct needs a prior state".into()));
    }
    let n = state.x_hat.len();
    check_state_dims(state, n)?;
    if regs.info.shape() != (n, n) || regs.vector.len() != n {
        return Err(Error::Dimension("registers do not match state dimension".into()));
    }
    let (prior_inv, post) = correct_covariance(&state.p, &regs.info)?;
    Ok(NodeFilterState {
        x_hat: correct_state(&state.x_hat, &prior_inv, &post, &regs.vector),
        p: post,
        phase: Phase::Posterior,
    })
}

/// Prior states after [`predict`] and fused registers, exposed so callers
/// can inspect the instant's intermediate quantities.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub priors: Vec<NodeFilterState>,
    pub registers: Vec<FusionRegisters>,
}

/// Predict on every node, initialise registers from `measurements`
/// (empty vectors for naive nodes), run `depth` fusion rounds, correct.
pub fn step(
    net: &NetworkFilterState,
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    depth: usize,
    measurements: &[Vector],
) -> Result<NetworkFilterState> {
    step_traced(net, sys, sensors, &FusionPlan::new(w), depth, measurements).map(|(s, _)| s)
}

pub fn step_traced(
    net: &NetworkFilterState,
    sys: &SystemModel,
    sensors: &[SensorModel],
    plan: &FusionPlan,
    depth: usize,
    measurements: &[Vector],
) -> Result<(NetworkFilterState, StepTrace)> {
    check_sensors(sys, sensors)?;
    let nn = sensors.len();
    if net.nodes.len() != nn || measurements.len() != nn || plan.node_count() != nn {
        return Err(Error::Usage(format!(
            "expected {nn} node states, measurements and weight rows"
        )));
    }
    let priors = net
        .nodes
        .iter()
        .map(|s| predict(s, sys))
        .collect::<Result<Vec<_>>>()?;
    let mut registers = sensors
        .iter()
        .zip(measurements)
        .map(|(s, y)| init_registers(s, y, nn))
        .collect::<Result<Vec<_>>>()?;
    for _ in 0..depth {
        registers = plan.round(&registers)?;
    }
    let nodes = priors
        .iter()
        .zip(&registers)
        .map(|(s, r)| correct(s, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((NetworkFilterState { nodes, k: net.k + 1 }, StepTrace { priors, registers }))
}

/// Per-node covariance quantities of one sampling instant.
#[derive(Debug, Clone)]
pub struct InstantGains {
    pub prior: Vec<Matrix>,
    pub prior_inv: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

/// The covariance half of the filter for `steps` instants. Covariances do
/// not depend on the measurements, so Monte Carlo trials can share one
/// schedule and propagate only state estimates.
#[derive(Debug, Clone)]
pub struct CovarianceSchedule {
    pub instants: Vec<InstantGains>,
}

impl CovarianceSchedule {
    pub fn compute(
        sys: &SystemModel,
        sensors: &[SensorModel],
        plan: &FusionPlan,
        depth: usize,
        steps: usize,
        p0: &Matrix,
    ) -> Result<Self> {
        check_sensors(sys, sensors)?;
        let nn = sensors.len();
        if plan.node_count() != nn {
            return Err(Error::Usage("weight matrix does not match sensor count".into()));
        }
        let init: Vec<Matrix> = sensors
            .iter()
            .map(|s| init_registers(s, &Vector::zeros(s.measurement_dim()), nn).map(|r| r.info))
            .collect::<Result<_>>()?;
        // the fused information is the same at every instant
        let fused = plan.fuse_infos(init, depth);

        let mut posts = vec![p0.clone(); nn];
        let mut instants = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut prior = Vec::with_capacity(nn);
            let mut prior_inv = Vec::with_capacity(nn);
            let mut post = Vec::with_capacity(nn);
            for (i, p) in posts.iter().enumerate() {
                let pp = predict_covariance(sys, p);
                let (pi, pn) = correct_covariance(&pp, &fused[i])?;
                prior.push(pp);
                prior_inv.push(pi);
                post.push(pn);
            }
            posts.clone_from(&post);
            instants.push(InstantGains { prior, prior_inv, post });
        }
        Ok(Self { instants })
    }
}
