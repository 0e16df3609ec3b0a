//! Closed-form steady state of every node, gap metrics against the
//! centralized filter, and exponential rate fits over the fusion depth.
//!
//! For node `i` and depth `L` three covariances matter:
//!
//! * `P`: the centralized DARE solution over all sensors;
//! * `Pᵢ⁽ᴸ⁾`: the limit of the node's own covariance recursion, a DARE on the
//!   modified pair `(C̃ᵢ⁽ᴸ⁾, R̃ᵢ⁽ᴸ⁾)`;
//! * `P̃ᵢ⁽ᴸ⁾`: the true steady-state prior error covariance, a DLE driven
//!   by the closed loop of `Pᵢ⁽ᴸ⁾` and the real noise `R̄ᵢ⁽ᴸ⁾`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    check_sensors, collective_observability, modified_observation_from_power, stacked,
    ModifiedObservation, SensorModel, SystemModel,
};
use crate::network::{weight_power, WeightMatrix};
use crate::numerics::{self, ClosedLoop, Matrix};

/// Gaps at or below this value are treated as solver noise.
pub const GAP_FLOOR: f64 = 1e-10;

pub fn centralized_steady(sys: &SystemModel, sensors: &[SensorModel]) -> Result<Matrix> {
    check_sensors(sys, sensors)?;
    if !collective_observability(sys, sensors) {
        return Err(Error::Unobservable("sensors are not collectively observable".into()));
    }
    let (c, r) = stacked(sensors, sys.dim());
    numerics::solve_dare(sys.a(), &c, sys.q(), &r)
}

/// Every steady-state quantity for one node at one depth.
#[derive(Debug, Clone)]
pub struct NodeSteadyState {
    pub observation: ModifiedObservation,
    /// `Pᵢ⁽ᴸ⁾`
    pub param: Matrix,
    pub closed_loop: ClosedLoop,
    /// `P̃ᵢ⁽ᴸ⁾`, prior error covariance.
    pub true_prior: Matrix,
    /// True posterior error covariance one correction after `true_prior`.
    pub true_posterior: Matrix,
}

/// [`NodeSteadyState`] from a precomputed `𝓛ᴸ`.
pub fn node_steady_from_power(
    sys: &SystemModel,
    sensors: &[SensorModel],
    power: &Matrix,
    node: usize,
    depth: usize,
) -> Result<NodeSteadyState> {
    let obs = modified_observation_from_power(sys, sensors, power, node, depth)?;
    if !obs.is_observable(sys.a()) {
        return Err(Error::NodeUnobservable { node, depth });
    }
    let a = sys.a();
    let param = numerics::solve_dare(a, &obs.c_tilde, sys.q(), &obs.r_tilde)?;
    let cl = numerics::closed_loop(a, &obs.c_tilde, &param, &obs.r_tilde)?;

    let drive = numerics::symmetrize(&(sys.q() + &cl.gain * &obs.r_bar * cl.gain.transpose()));
    let true_prior = numerics::solve_dle(&cl.feedback, &drive)?;

    // x̃⁺ = P̄ P⁻¹ x̃⁻ − P̄ C̃ᵀ R̃⁻¹ ṽ, with ṽ independent of x̃⁻
    let post = &cl.posterior;
    let carry = post * numerics::spd_inverse(&param)?;
    let noise_map = post * obs.c_tilde.transpose() * numerics::spd_inverse(&obs.r_tilde)?;
    let true_posterior = numerics::symmetrize(
        &(&carry * &true_prior * carry.transpose() + &noise_map * &obs.r_bar * noise_map.transpose()),
    );

    Ok(NodeSteadyState { observation: obs, param, closed_loop: cl, true_prior, true_posterior })
}

pub fn node_steady(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    node: usize,
    depth: usize,
) -> Result<NodeSteadyState> {
    node_steady_from_power(sys, sensors, &weight_power(w, depth), node, depth)
}

/// `Pᵢ⁽ᴸ⁾`, the limit of node `i`'s prior covariance recursion.
pub fn node_param_steady(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    node: usize,
    depth: usize,
) -> Result<Matrix> {
    let obs = modified_observation_from_power(sys, sensors, &weight_power(w, depth), node, depth)?;
    if !obs.is_observable(sys.a()) {
        return Err(Error::NodeUnobservable { node, depth });
    }
    numerics::solve_dare(sys.a(), &obs.c_tilde, sys.q(), &obs.r_tilde)
}

/// `P̃ᵢ⁽ᴸ⁾`, the true steady-state prior error covariance of node `i`.
pub fn node_true_steady(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    node: usize,
    depth: usize,
) -> Result<Matrix> {
    node_steady(sys, sensors, w, node, depth).map(|s| s.true_prior)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRow {
    pub depth: usize,
    pub node: usize,
    /// `‖P − Pᵢ⁽ᴸ⁾‖₂`
    pub gap_param: f64,
    /// `‖P̃ᵢ⁽ᴸ⁾ − Pᵢ⁽ᴸ⁾‖₂`
    pub gap_consistency: f64,
    /// `‖P̃ᵢ⁽ᴸ⁾ − P‖₂`
    pub gap_total: f64,
    /// `trace(P̃ᵢ⁽ᴸ⁾)`
    pub mse_theory: f64,
    pub mse_theory_posterior: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapMetric {
    Param,
    Consistency,
    Total,
}

impl GapMetric {
    pub const ALL: [GapMetric; 3] = [GapMetric::Param, GapMetric::Consistency, GapMetric::Total];

    pub fn name(self) -> &'static str {
        match self {
            GapMetric::Param => "gap_param",
            GapMetric::Consistency => "gap_consistency",
            GapMetric::Total => "gap_total",
        }
    }

    pub fn of(self, row: &GapRow) -> f64 {
        match self {
            GapMetric::Param => row.gap_param,
            GapMetric::Consistency => row.gap_consistency,
            GapMetric::Total => row.gap_total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyStateReport {
    pub central: Matrix,
    /// Rows ordered by depth, then node.
    pub rows: Vec<GapRow>,
}

impl SteadyStateReport {
    /// `(L, max_i gap)` for each depth in the report.
    pub fn worst_case(&self, metric: GapMetric) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for row in &self.rows {
            let v = metric.of(row);
            match out.last_mut() {
                Some((l, best)) if *l == row.depth => *best = best.max(v),
                _ => out.push((row.depth, v)),
            }
        }
        out
    }

    pub fn node_series(&self, metric: GapMetric, node: usize) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.node == node)
            .map(|r| (r.depth, metric.of(r)))
            .collect()
    }
}

/// Steady-state gaps for every node at every depth in `depths`.
pub fn gap_report(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    depths: &[usize],
) -> Result<SteadyStateReport> {
    let central = centralized_steady(sys, sensors)?;
    let central_trace = central.trace();
    let nn = sensors.len();
    if w.size() != nn {
        return Err(Error::Dimension("weight matrix does not match sensor count".into()));
    }
    let jobs: Vec<(usize, usize)> = depths
        .iter()
        .flat_map(|&l| (0..nn).map(move |i| (l, i)))
        .collect();
    let powers: Vec<(usize, Matrix)> = depths.iter().map(|&l| (l, weight_power(w, l))).collect();
    let power_of = |l: usize| &powers.iter().find(|(d, _)| *d == l).unwrap().1;
    // sequential pass so the reported failure is always the first one
    for &(l, i) in &jobs {
        if !modified_observation_from_power(sys, sensors, power_of(l), i, l)?.is_observable(sys.a()) {
            return Err(Error::NodeUnobservable { node: i, depth: l });
        }
    }

    let rows = jobs
        .par_iter()
        .map(|&(l, i)| {
            let s = node_steady_from_power(sys, sensors, power_of(l), i, l)?;
            let row = GapRow {
                depth: l,
                node: i,
                gap_param: numerics::norm2(&(&central - &s.param)),
                gap_consistency: numerics::norm2(&(&s.true_prior - &s.param)),
                gap_total: numerics::norm2(&(&s.true_prior - &central)),
                mse_theory: s.true_prior.trace(),
                mse_theory_posterior: s.true_posterior.trace(),
            };
            debug_assert!(row.mse_theory >= central_trace - 1e-8 * central_trace.abs().max(1.0));
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SteadyStateReport { central, rows })
}

/// `gap ≈ M·qᴸ`, fitted by least squares on `ln gap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub m: f64,
    pub q: f64,
    /// Smallest `M` with `gap ≤ M·qᴸ` at every fitted point.
    pub envelope_m: f64,
    pub l_min: usize,
    pub l_max: usize,
    /// Root-mean-square residual of the fit in natural-log units.
    pub residual: f64,
    pub points: usize,
}

impl RateFit {
    pub fn predict(&self, l: usize) -> f64 {
        self.m * self.q.powi(l as i32)
    }
}

/// Fits only the points above [`GAP_FLOOR`]; needs at least four of them.
pub fn fit_rate(series: &[(usize, f64)]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, g)| g.is_finite() && *g > GAP_FLOOR)
        .map(|&(l, g)| (l as f64, g.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} points above {GAP_FLOOR:e}, need 4",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let resid: Vec<f64> = pts.iter().map(|p| p.1 - (intercept + slope * p.0)).collect();
    let residual = (resid.iter().map(|r| r * r).sum::<f64>() / k).sqrt();
    let worst = resid.iter().copied().fold(0.0, f64::max);

    let in_fit = series.iter().filter(|(_, g)| g.is_finite() && *g > GAP_FLOOR);
    let l_min = in_fit.clone().map(|p| p.0).min().unwrap();
    let l_max = in_fit.map(|p| p.0).max().unwrap();
    Ok(RateFit {
        m: intercept.exp(),
        q: slope.exp(),
        envelope_m: (intercept + worst).exp(),
        l_min,
        l_max,
        residual,
        points: pts.len(),
    })
}

/// `l̃_ij⁽ᴸ⁾ = (N·l_ij⁽ᴸ⁾ − 1)² + (N·l_ij⁽ᴸ⁾ − 1)`, elementwise.
pub fn weight_deviation(w: &WeightMatrix, depth: usize) -> Matrix {
    let n = w.size() as f64;
    weight_power(w, depth).map(|l| {
        let e = n * l - 1.0;
        e * e + e
    })
}

/// For each node, the smallest `L ∈ [1, diameter]` whose modified pair is
/// observable, or `None` if none is.
pub fn minimal_fusion_scan(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    diameter: usize,
) -> Result<Vec<Option<usize>>> {
    check_sensors(sys, sensors)?;
    if !collective_observability(sys, sensors) {
        return Err(Error::Unobservable("sensors are not collectively observable".into()));
    }
    let nn = sensors.len();
    let mut found = vec![None; nn];
    let mut power = Matrix::identity(nn, nn);
    for l in 1..=diameter.max(1) {
        power = w.matrix() * power;
        for (i, slot) in found.iter_mut().enumerate() {
            if slot.is_none() && modified_observation_from_power(sys, sensors, &power, i, l)?.is_observable(sys.a()) {
                *slot = Some(l);
            }
        }
        if found.iter().all(Option::is_some) {
            break;
        }
    }
    Ok(found)
}

/// `‖(P − Pᵢ⁽ᴸ⁾) − Σ_{k<terms} …‖₂` for the series form of a DARE gap. Needs
/// every measuring sensor inside node `i`'s `L`-step neighborhood.
pub fn gap_series_mismatch(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    node: usize,
    depth: usize,
    terms: usize,
) -> Result<f64> {
    let central = centralized_steady(sys, sensors)?;
    let s = node_steady(sys, sensors, w, node, depth)?;
    let measuring = sensors.iter().filter(|s| !s.is_naive()).count();
    if s.observation.sources.len() != measuring {
        return Err(Error::InvalidInput(format!(
            "node {node} does not reach every sensor in {depth} rounds"
        )));
    }
    let obs = &s.observation;
    let series = numerics::dare_gap_series_from(
        sys.a(),
        &obs.c_tilde,
        &obs.r_bar,
        &obs.r_tilde,
        &central,
        &s.param,
        terms,
    )?;
    Ok(numerics::norm2(&(&central - &s.param - series)))
}
