//! Seeded Monte Carlo runs of the network filter and the empirical mean
//! square error of its estimates.
//!
//! Every Gaussian draw comes from a stream keyed by `(seed, trial, step,
//! slot)`, where slot 0 is process noise and slot `j + 1` is node `j`'s
//! measurement noise. Trials therefore replay bit for bit no matter how they
//! are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{self, CovarianceSchedule, FusionPlan, NetworkFilterState};
use crate::model::{check_sensors, SensorModel, SystemModel};
use crate::network::WeightMatrix;
use crate::numerics::{self, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    /// Number of final steps averaged into the squared error.
    pub eval_window: usize,
    /// True initial state, also the filters' initial estimate.
    pub x0: Vector,
    /// Filters' initial covariance.
    pub p0: Matrix,
}

impl TrialConfig {
    /// 200 steps, 1000 trials, window 1, `x₀ = 0`, `P₀ = I`.
    pub fn new(state_dim: usize, seed: u64) -> Self {
        Self {
            steps: 200,
            trials: 1000,
            seed,
            eval_window: 1,
            x0: Vector::zeros(state_dim),
            p0: Matrix::identity(state_dim, state_dim),
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.eval_window == 0 || self.eval_window > self.steps {
            return Err(Error::InvalidInput(format!(
                "eval_window must lie in 1..={}, got {}",
                self.steps, self.eval_window
            )));
        }
        if self.x0.len() != state_dim || self.p0.shape() != (state_dim, state_dim) {
            return Err(Error::Dimension(format!("initial state must have dimension {state_dim}")));
        }
        numerics::check_positive_definite(&self.p0, "initial covariance")
    }
}

/// Deterministic Gaussian noise for one trial.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    key: [u8; 32],
    slots: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, trial: u64, node_count: usize) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&trial.to_le_bytes());
        Self { key, slots: node_count as u64 + 1 }
    }

    fn rng(&self, step: usize, slot: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(step as u64 * self.slots + slot as u64);
        rng
    }

    /// `dim` independent standard normals for `(step, slot)`.
    pub fn standard(&self, step: usize, slot: usize, dim: usize) -> Vector {
        let mut rng = self.rng(step, slot);
        Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng))
    }

    pub fn process(&self, step: usize, factor: &Matrix) -> Vector {
        factor * self.standard(step, 0, factor.ncols())
    }

    pub fn measurement(&self, step: usize, node: usize, factor: &Matrix) -> Vector {
        factor * self.standard(step, node + 1, factor.ncols())
    }
}

/// `F` with `F Fᵀ = X` for a symmetric positive semidefinite `X`.
pub fn covariance_factor(x: &Matrix) -> Result<Matrix> {
    if x.nrows() == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    if let Some(ch) = x.clone().cholesky() {
        return Ok(ch.l());
    }
    numerics::check_covariance(x, "noise covariance")?;
    let eig = numerics::symmetrize(x).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&roots))
}

/// Shared trajectory generator for one trial: the true state and every
/// node's measurement at each step.
struct Plant<'a> {
    sys: &'a SystemModel,
    sensors: &'a [SensorModel],
    q_factor: Matrix,
    r_factors: Vec<Matrix>,
    noise: NoiseStream,
}

impl<'a> Plant<'a> {
    fn new(sys: &'a SystemModel, sensors: &'a [SensorModel], seed: u64, trial: usize) -> Result<Self> {
        Ok(Self {
            sys,
            sensors,
            q_factor: covariance_factor(sys.q())?,
            r_factors: sensors.iter().map(|s| covariance_factor(s.r())).collect::<Result<_>>()?,
            noise: NoiseStream::new(seed, trial as u64, sensors.len()),
        })
    }

    /// `x_k = A x_{k−1} + ω_{k−1}`, with `ω` drawn at `step − 1`.
    fn advance(&self, x: &Vector, step: usize) -> Vector {
        self.sys.a() * x + self.noise.process(step - 1, &self.q_factor)
    }

    fn measure(&self, x: &Vector, step: usize) -> Vec<Vector> {
        self.sensors
            .iter()
            .zip(&self.r_factors)
            .enumerate()
            .map(|(j, (s, f))| {
                if s.is_naive() {
                    Vector::zeros(0)
                } else {
                    s.c() * x + self.noise.measurement(step, j, f)
                }
            })
            .collect()
    }
}

/// Full record of one trial, produced by the step-by-step filter.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `x_k` for `k = 1..=steps`.
    pub truth: Vec<Vector>,
    /// All node states after each step.
    pub states: Vec<NetworkFilterState>,
    pub measurements: Vec<Vec<Vector>>,
}

/// Runs [`filter::step`] for every instant of one trial.
pub fn run_trajectory(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    depth: usize,
    cfg: &TrialConfig,
    trial: usize,
) -> Result<Trajectory> {
    check_sensors(sys, sensors)?;
    cfg.validate(sys.dim())?;
    let plant = Plant::new(sys, sensors, cfg.seed, trial)?;
    let plan = FusionPlan::new(w);
    let mut net = NetworkFilterState::new(sensors.len(), cfg.x0.clone(), cfg.p0.clone());
    let mut x = cfg.x0.clone();
    let mut out = Trajectory {
        truth: Vec::with_capacity(cfg.steps),
        states: Vec::with_capacity(cfg.steps),
        measurements: Vec::with_capacity(cfg.steps),
    };
    for k in 1..=cfg.steps {
        x = plant.advance(&x, k);
        let y = plant.measure(&x, k);
        net = filter::step_traced(&net, sys, sensors, &plan, depth, &y)?.0;
        out.truth.push(x.clone());
        out.states.push(net.clone());
        out.measurements.push(y);
    }
    Ok(out)
}

/// Per-node errors of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// `‖x̂ᵢ − x‖²` averaged over the evaluation window.
    pub squared_error: Vec<f64>,
    /// Prior error `x̂ᵢ,k|k−1 − x_k` at the final step.
    pub prior_error: Vec<Vector>,
}

/// Trial context shared across trials: covariances do not depend on the
/// noise, so they are computed once.
struct Runner<'a> {
    sys: &'a SystemModel,
    sensors: &'a [SensorModel],
    plan: FusionPlan,
    depth: usize,
    cfg: &'a TrialConfig,
    schedule: CovarianceSchedule,
    /// `N Cᵢᵀ Rᵢ⁻¹`, empty for naive nodes.
    info_maps: Vec<Matrix>,
}

impl<'a> Runner<'a> {
    fn new(
        sys: &'a SystemModel,
        sensors: &'a [SensorModel],
        w: &WeightMatrix,
        depth: usize,
        cfg: &'a TrialConfig,
    ) -> Result<Self> {
        check_sensors(sys, sensors)?;
        cfg.validate(sys.dim())?;
        if w.size() != sensors.len() {
            return Err(Error::Dimension("weight matrix does not match sensor count".into()));
        }
        let plan = FusionPlan::new(w);
        let schedule = CovarianceSchedule::compute(sys, sensors, &plan, depth, cfg.steps, &cfg.p0)?;
        let scale = sensors.len() as f64;
        let info_maps = sensors
            .iter()
            .map(|s| {
                if s.is_naive() {
                    Ok(Matrix::zeros(sys.dim(), 0))
                } else {
                    Ok(s.c().transpose() * numerics::spd_inverse(s.r())? * scale)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { sys, sensors, plan, depth, cfg, schedule, info_maps })
    }

    fn run(&self, trial: usize) -> Result<TrialOutcome> {
        let nn = self.sensors.len();
        let cfg = self.cfg;
        let plant = Plant::new(self.sys, self.sensors, cfg.seed, trial)?;
        let mut x = cfg.x0.clone();
        let mut estimates = vec![cfg.x0.clone(); nn];
        let mut squared_error = vec![0.0; nn];
        let mut prior_error = Vec::new();
        let first_eval = cfg.steps + 1 - cfg.eval_window;
        for (k, gains) in (1..=cfg.steps).zip(&self.schedule.instants) {
            x = plant.advance(&x, k);
            let y = plant.measure(&x, k);
            let priors: Vec<Vector> = estimates.iter().map(|e| self.sys.a() * e).collect();
            let vectors: Vec<Vector> = self.info_maps.iter().zip(&y).map(|(m, yi)| m * yi).collect();
            let fused = self.plan.fuse_vectors(vectors, self.depth);
            for i in 0..nn {
                estimates[i] =
                    filter::correct_state(&priors[i], &gains.prior_inv[i], &gains.post[i], &fused[i]);
            }
            if k >= first_eval {
                for (acc, e) in squared_error.iter_mut().zip(&estimates) {
                    *acc += (e - &x).norm_squared();
                }
            }
            if k == cfg.steps {
                prior_error = priors.iter().map(|p| p - &x).collect();
            }
        }
        let window = cfg.eval_window as f64;
        squared_error.iter_mut().for_each(|s| *s /= window);
        Ok(TrialOutcome { squared_error, prior_error })
    }
}

pub fn run_trial(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    depth: usize,
    cfg: &TrialConfig,
    trial: usize,
) -> Result<TrialOutcome> {
    Runner::new(sys, sensors, w, depth, cfg)?.run(trial)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub depth: usize,
    pub trials: usize,
    /// Mean over trials of each node's squared error.
    pub mse: Vec<f64>,
    /// Standard error of `mse`.
    pub mse_stderr: Vec<f64>,
    /// Mean of `e eᵀ` for each node's final prior error.
    pub prior_covariance: Vec<Matrix>,
    /// Entrywise standard error of `prior_covariance`.
    pub prior_covariance_stderr: Vec<Matrix>,
}

/// Recursive halving keeps rounding error at `O(log n)` and makes the
/// result a fixed function of the item order.
fn pairwise_sum<T: Clone>(items: &[T], add: &impl Fn(&T, &T) -> T) -> T {
    match items.len() {
        0 => panic!("pairwise_sum of an empty slice"),
        1 => items[0].clone(),
        n => {
            let (lo, hi) = items.split_at(n / 2);
            add(&pairwise_sum(lo, add), &pairwise_sum(hi, add))
        }
    }
}

/// Mean and standard error of the mean, `√(s² / n)` with the unbiased
/// sample variance (zero for a single sample).
fn mean_and_stderr<T: Clone>(
    items: &[T],
    add: &impl Fn(&T, &T) -> T,
    map: &impl Fn(&T, &dyn Fn(f64) -> f64) -> T,
) -> (T, T) {
    let n = items.len() as f64;
    let mean = map(&pairwise_sum(items, add), &|v| v / n);
    let sq: Vec<T> = items
        .iter()
        .map(|x| map(&add(x, &map(&mean, &|v| -v)), &|v| v * v))
        .collect();
    let var = pairwise_sum(&sq, add);
    let denom = (n - 1.0).max(1.0);
    let stderr = map(&var, &|v| (v / denom / n).sqrt());
    (mean, stderr)
}

fn add_f64(a: &f64, b: &f64) -> f64 {
    a + b
}

fn map_f64(a: &f64, f: &dyn Fn(f64) -> f64) -> f64 {
    f(*a)
}

fn add_matrix(a: &Matrix, b: &Matrix) -> Matrix {
    a + b
}

fn map_matrix(a: &Matrix, f: &dyn Fn(f64) -> f64) -> Matrix {
    a.map(f)
}

pub fn monte_carlo_mse(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    depth: usize,
    cfg: &TrialConfig,
) -> Result<MonteCarloResult> {
    let runner = Runner::new(sys, sensors, w, depth, cfg)?;
    let outcomes = (0..cfg.trials)
        .into_par_iter()
        .map(|t| runner.run(t))
        .collect::<Result<Vec<_>>>()?;

    let nn = sensors.len();
    let mut result = MonteCarloResult {
        depth,
        trials: cfg.trials,
        mse: Vec::with_capacity(nn),
        mse_stderr: Vec::with_capacity(nn),
        prior_covariance: Vec::with_capacity(nn),
        prior_covariance_stderr: Vec::with_capacity(nn),
    };
    for i in 0..nn {
        let errs: Vec<f64> = outcomes.iter().map(|o| o.squared_error[i]).collect();
        let (m, s) = mean_and_stderr(&errs, &add_f64, &map_f64);
        result.mse.push(m);
        result.mse_stderr.push(s);

        let outer: Vec<Matrix> = outcomes
            .iter()
            .map(|o| &o.prior_error[i] * o.prior_error[i].transpose())
            .collect();
        let (c, s) = mean_and_stderr(&outer, &add_matrix, &map_matrix);
        result.prior_covariance.push(c);
        result.prior_covariance_stderr.push(s);
    }
    Ok(result)
}

/// The four-state tracking scenario with three position sensors on each
/// axis and fourteen sensors that measure nothing.
#[derive(Debug, Clone)]
pub struct ReferenceScenario {
    pub system: SystemModel,
    pub sensors: Vec<SensorModel>,
    pub node_count: usize,
    pub width: f64,
    pub radius: f64,
}

pub fn reference_scenario() -> ReferenceScenario {
    let a = Matrix::from_row_slice(
        4,
        4,
        &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    );
    let g = Matrix::from_row_slice(2, 2, &[1.0 / 3.0, 0.5, 0.5, 1.0]);
    let mut q = Matrix::zeros(4, 4);
    q.view_mut((0, 0), (2, 2)).copy_from(&g);
    q.view_mut((2, 2), (2, 2)).copy_from(&g);
    q.view_mut((0, 2), (2, 2)).copy_from(&(&g * 0.5));
    q.view_mut((2, 0), (2, 2)).copy_from(&(&g * 0.5));
    let system = SystemModel::new(a, q).expect("reference system is valid");

    let r = Matrix::identity(1, 1);
    let c1 = Matrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
    let c2 = Matrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]);
    let mut sensors = Vec::with_capacity(20);
    for c in [&c1, &c2] {
        for _ in 0..3 {
            sensors.push(SensorModel::new(c.clone(), r.clone()).expect("reference sensor is valid"));
        }
    }
    sensors.extend(std::iter::repeat_n(SensorModel::naive(4), 14));
    ReferenceScenario { system, sensors, node_count: 20, width: 300.0, radius: 130.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{metropolis_weights, Graph};
    use approx::assert_relative_eq;

    fn small() -> (SystemModel, Vec<SensorModel>, WeightMatrix) {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let sys = SystemModel::new(a, Matrix::identity(2, 2) * 0.1).unwrap();
        let sensors = vec![
            SensorModel::new(Matrix::from_row_slice(1, 2, &[1.0, 0.0]), Matrix::identity(1, 1)).unwrap(),
            SensorModel::naive(2),
            SensorModel::naive(2),
        ];
        let w = metropolis_weights(&Graph::path(3)).unwrap();
        (sys, sensors, w)
    }

    fn cfg(steps: usize, trials: usize) -> TrialConfig {
        TrialConfig { steps, trials, ..TrialConfig::new(2, 11) }
    }

    #[test]
    fn scenario_matrices() {
        let s = reference_scenario();
        assert_eq!(s.sensors.len(), 20);
        assert_eq!(s.sensors.iter().filter(|x| x.is_naive()).count(), 14);
        assert!(s.sensors.iter().filter(|x| !x.is_naive()).all(|x| x.r()[(0, 0)] == 1.0));
        assert_eq!(s.sensors[0].c()[(0, 0)], 1.0);
        assert_eq!(s.sensors[3].c()[(0, 2)], 1.0);
        assert_eq!(s.system.a()[(0, 1)], 1.0);
        assert_eq!(s.system.a()[(1, 2)], 0.0);
        assert_relative_eq!(s.system.q()[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.system.q()[(0, 3)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(s.system.q()[(3, 1)], 0.5, epsilon = 1e-15);
        assert_eq!((s.width, s.radius), (300.0, 130.0));
    }

    #[test]
    fn noise_is_keyed() {
        let a = NoiseStream::new(5, 2, 3);
        let b = NoiseStream::new(5, 2, 3);
        assert_eq!(a.standard(7, 1, 4), b.standard(7, 1, 4));
        assert_ne!(a.standard(7, 1, 4), a.standard(7, 2, 4));
        assert_ne!(a.standard(7, 1, 4), a.standard(8, 1, 4));
        assert_ne!(a.standard(7, 1, 4), NoiseStream::new(5, 3, 3).standard(7, 1, 4));
    }

    #[test]
    fn factor_reproduces_covariance() {
        let x = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let f = covariance_factor(&x).unwrap();
        assert!(numerics::norm2(&(&f * f.transpose() - &x)) < 1e-14);
        let singular = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = covariance_factor(&singular).unwrap();
        assert!(numerics::norm2(&(&f * f.transpose() - &singular)) < 1e-12);
    }

    #[test]
    fn fast_path_matches_stepwise_filter() {
        let (sys, sensors, w) = small();
        let c = TrialConfig { eval_window: 3, ..cfg(30, 1) };
        let traj = run_trajectory(&sys, &sensors, &w, 2, &c, 4).unwrap();
        let fast = run_trial(&sys, &sensors, &w, 2, &c, 4).unwrap();
        for i in 0..3 {
            let slow: f64 = (27..30)
                .map(|k| (&traj.states[k].nodes[i].x_hat - &traj.truth[k]).norm_squared())
                .sum::<f64>()
                / 3.0;
            assert_relative_eq!(fast.squared_error[i], slow, max_relative = 1e-12);
        }
    }

    #[test]
    fn deterministic_and_single_trial() {
        let (sys, sensors, w) = small();
        let c = cfg(20, 1);
        let one = run_trial(&sys, &sensors, &w, 1, &c, 0).unwrap();
        assert_eq!(one, run_trial(&sys, &sensors, &w, 1, &c, 0).unwrap());
        let mc = monte_carlo_mse(&sys, &sensors, &w, 1, &c).unwrap();
        assert_eq!(mc.mse, one.squared_error);
        assert_eq!(mc.trials, 1);
    }

    #[test]
    fn noiseless_limit() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let sys = SystemModel::new(a, Matrix::identity(2, 2) * 1e-12).unwrap();
        let sensors = vec![SensorModel::new(
            Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            Matrix::identity(1, 1) * 1e-12,
        )
        .unwrap()];
        let c = TrialConfig { x0: Vector::from_vec(vec![1.0, -2.0]), ..cfg(50, 1) };
        let out = run_trial(&sys, &sensors, &WeightMatrix::uniform(1), 0, &c, 0).unwrap();
        assert!(out.squared_error[0] < 1e-9, "{}", out.squared_error[0]);
    }

    #[test]
    fn invalid_config_rejected() {
        let (sys, sensors, w) = small();
        let bad = TrialConfig { eval_window: 0, ..cfg(5, 1) };
        assert!(run_trial(&sys, &sensors, &w, 1, &bad, 0).is_err());
        let bad = TrialConfig { trials: 0, ..cfg(5, 1) };
        assert!(monte_carlo_mse(&sys, &sensors, &w, 1, &bad).is_err());
    }

    #[test]
    fn pairwise_mean_and_stderr() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, s) = mean_and_stderr(&xs, &add_f64, &map_f64);
        assert_relative_eq!(m, 2.5, epsilon = 1e-15);
        // s² = 5/3, stderr = √(5/12)
        assert_relative_eq!(s, (5.0f64 / 12.0).sqrt(), epsilon = 1e-15);
    }
}
