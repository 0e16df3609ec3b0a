//! Plant and sensor descriptions, observability, and each node's effective
//! observation model after `L` fusion rounds.

use crate::error::{Error, Result};
use crate::network::{weight_power, WeightMatrix};
use crate::numerics::{self, Matrix};

/// `x_{k+1} = A x_k + w_k`, `w_k ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: Matrix,
    q: Matrix,
}

impl SystemModel {
    pub fn new(a: Matrix, q: Matrix) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::Dimension("A must be a non-empty square matrix".into()));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("A has non-finite entries".into()));
        }
        if q.shape() != (n, n) {
            return Err(Error::Dimension(format!("Q must be {n}x{n}")));
        }
        numerics::check_positive_definite(&q, "Q")?;
        Ok(Self { a, q })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// `y_i = C_i x + v_i`, `v_i ~ N(0, R_i)`. A sensor with zero rows is a
/// naive node: it measures nothing and only relays.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    c: Matrix,
    r: Matrix,
}

impl SensorModel {
    /// An all-zero observation matrix is normalized to the zero-row naive form.
    pub fn new(c: Matrix, r: Matrix) -> Result<Self> {
        let p = c.nrows();
        if r.shape() != (p, p) {
            return Err(Error::Dimension(format!("R must be {p}x{p}")));
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("C has non-finite entries".into()));
        }
        if c.iter().all(|&x| x == 0.0) {
            return Ok(Self::naive(c.ncols()));
        }
        numerics::check_positive_definite(&r, "R")?;
        Ok(Self { c, r })
    }

    pub fn naive(state_dim: usize) -> Self {
        Self { c: Matrix::zeros(0, state_dim), r: Matrix::zeros(0, 0) }
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn measurement_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_naive(&self) -> bool {
        self.c.nrows() == 0
    }

    /// `Cᵀ R⁻¹ C`, zero for a naive node.
    pub fn information(&self) -> Result<Matrix> {
        if self.is_naive() {
            let n = self.c.ncols();
            return Ok(Matrix::zeros(n, n));
        }
        Ok(numerics::symmetrize(&(self.c.transpose() * numerics::spd_inverse(&self.r)? * &self.c)))
    }
}

pub fn check_sensors(sys: &SystemModel, sensors: &[SensorModel]) -> Result<()> {
    if sensors.is_empty() {
        return Err(Error::InvalidInput("network has no nodes".into()));
    }
    for (i, s) in sensors.iter().enumerate() {
        if s.c().ncols() != sys.dim() {
            return Err(Error::Dimension(format!(
                "sensor {i}: C has {} columns, state has {}",
                s.c().ncols(),
                sys.dim()
            )));
        }
    }
    Ok(())
}

/// Rank test on `[C; CA; …; CA^{n−1}]`.
pub fn is_observable(a: &Matrix, c: &Matrix) -> bool {
    let n = a.nrows();
    if c.nrows() == 0 || c.ncols() != n {
        return false;
    }
    let mut blocks = Vec::with_capacity(n);
    let mut block = c.clone();
    for _ in 0..n {
        let next = &block * a;
        blocks.push(block);
        block = next;
    }
    numerics::numerical_rank(&numerics::vstack(&blocks, n)) == n
}

/// Stacked `C = [C_1; …; C_N]` and `R = diag(R_1, …, R_N)` over all sensors.
pub fn stacked(sensors: &[SensorModel], state_dim: usize) -> (Matrix, Matrix) {
    let cs: Vec<Matrix> = sensors.iter().map(|s| s.c().clone()).collect();
    let rs: Vec<Matrix> = sensors.iter().map(|s| s.r().clone()).collect();
    (numerics::vstack(&cs, state_dim), numerics::block_diag(&rs))
}

pub fn collective_observability(sys: &SystemModel, sensors: &[SensorModel]) -> bool {
    let (c, _) = stacked(sensors, sys.dim());
    is_observable(sys.a(), &c)
}

/// Node `i`'s effective observation after `L` rounds. Only sensors `j`
/// with `l_ij⁽ᴸ⁾ > 0` and at least one measurement row contribute a block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedObservation {
    pub node: usize,
    pub depth: usize,
    /// Contributing sensor indices, in the order their blocks are stacked.
    pub sources: Vec<usize>,
    pub c_tilde: Matrix,
    /// Blocks `R_j / (N·l_ij⁽ᴸ⁾)`.
    pub r_tilde: Matrix,
    /// Blocks `R_j`, the noise actually present in the fused measurements.
    pub r_bar: Matrix,
    /// `N·Σ_j l_ij⁽ᴸ⁾ C_jᵀ R_j⁻¹ C_j`.
    pub info: Matrix,
}

impl ModifiedObservation {
    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn is_observable(&self, a: &Matrix) -> bool {
        is_observable(a, &self.c_tilde)
    }
}

pub fn modified_observation(
    sys: &SystemModel,
    sensors: &[SensorModel],
    w: &WeightMatrix,
    node: usize,
    depth: usize,
) -> Result<ModifiedObservation> {
    modified_observation_from_power(sys, sensors, &weight_power(w, depth), node, depth)
}

/// Same as [`modified_observation`] with `𝓛ᴸ` precomputed.
pub fn modified_observation_from_power(
    sys: &SystemModel,
    sensors: &[SensorModel],
    power: &Matrix,
    node: usize,
    depth: usize,
) -> Result<ModifiedObservation> {
    check_sensors(sys, sensors)?;
    let nn = sensors.len();
    if power.shape() != (nn, nn) {
        return Err(Error::Dimension(format!("weight power must be {nn}x{nn}")));
    }
    if node >= nn {
        return Err(Error::InvalidInput(format!("node {node} outside 0..{nn}")));
    }
    let n = sys.dim();
    let scale = nn as f64;

    let mut sources = Vec::new();
    let mut cs = Vec::new();
    let mut r_tilde = Vec::new();
    let mut r_bar = Vec::new();
    let mut info = Matrix::zeros(n, n);
    for (j, s) in sensors.iter().enumerate() {
        let l = power[(node, j)];
        if !(l > 0.0) || s.is_naive() {
            continue;
        }
        sources.push(j);
        cs.push(s.c().clone());
        r_tilde.push(s.r() / (scale * l));
        r_bar.push(s.r().clone());
        info += s.information()? * (scale * l);
    }
    let c_tilde = numerics::vstack(&cs, n);
    let r_tilde = numerics::block_diag(&r_tilde);
    let info = numerics::symmetrize(&info);

    if !sources.is_empty() {
        let alt = c_tilde.transpose() * numerics::spd_inverse(&r_tilde)? * &c_tilde;
        let gap = numerics::norm2(&(&alt - &info)) / numerics::norm2(&info).max(f64::MIN_POSITIVE);
        if gap > 1e-9 {
            return Err(Error::Numerical(format!(
                "node {node}: information form disagrees with stacked form ({gap:e})"
            )));
        }
    }

    Ok(ModifiedObservation {
        node,
        depth,
        sources,
        c_tilde,
        r_tilde,
        r_bar: numerics::block_diag(&r_bar),
        info,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{metropolis_weights, Graph};

    fn tracking_a() -> Matrix {
        Matrix::from_row_slice(
            4,
            4,
            &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
    }

    fn row(v: &[f64]) -> Matrix {
        Matrix::from_row_slice(1, v.len(), v)
    }

    fn one() -> Matrix {
        Matrix::identity(1, 1)
    }

    #[test]
    fn observability_examples() {
        let a = tracking_a();
        let c12 = Matrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(is_observable(&a, &c12));
        assert!(!is_observable(&a, &row(&[1.0, 0.0, 0.0, 0.0])));
        assert!(is_observable(&a, &Matrix::identity(4, 4)));
        assert!(!is_observable(&a, &Matrix::zeros(0, 4)));
    }

    #[test]
    fn zero_row_sensor_is_naive() {
        let s = SensorModel::new(row(&[0.0, 0.0, 0.0, 0.0]), one()).unwrap();
        assert!(s.is_naive());
        assert_eq!(s.measurement_dim(), 0);
        assert_eq!(s.information().unwrap(), Matrix::zeros(4, 4));
        assert!(SensorModel::new(row(&[1.0, 0.0]), -one()).is_err());
    }

    #[test]
    fn collective_examples() {
        let sys = SystemModel::new(tracking_a(), Matrix::identity(4, 4)).unwrap();
        let naive = vec![SensorModel::naive(4); 3];
        assert!(!collective_observability(&sys, &naive));
        let full = vec![SensorModel::new(Matrix::identity(4, 4), Matrix::identity(4, 4)).unwrap()];
        assert!(collective_observability(&sys, &full));
    }

    #[test]
    fn uniform_weights_recover_stacked_model() {
        let sys = SystemModel::new(tracking_a(), Matrix::identity(4, 4)).unwrap();
        let sensors = vec![
            SensorModel::new(row(&[1.0, 0.0, 0.0, 0.0]), one() * 2.0).unwrap(),
            SensorModel::new(row(&[0.0, 0.0, 1.0, 0.0]), one()).unwrap(),
            SensorModel::naive(4),
        ];
        let mo = modified_observation(&sys, &sensors, &WeightMatrix::uniform(3), 1, 1).unwrap();
        let (c, r) = stacked(&sensors, 4);
        assert_eq!(mo.sources, vec![0, 1]);
        assert_eq!(mo.c_tilde, c);
        assert!((&mo.r_tilde - &r).norm() < 1e-14);
        let central = sensors.iter().map(|s| s.information().unwrap()).fold(Matrix::zeros(4, 4), |a, b| a + b);
        assert!((&mo.info - central).norm() < 1e-14);
    }

    #[test]
    fn zero_weight_blocks_are_dropped() {
        let sys = SystemModel::new(tracking_a(), Matrix::identity(4, 4)).unwrap();
        let sensors = vec![
            SensorModel::new(row(&[1.0, 0.0, 0.0, 0.0]), one()).unwrap(),
            SensorModel::new(row(&[0.0, 1.0, 0.0, 0.0]), one()).unwrap(),
            SensorModel::new(row(&[0.0, 0.0, 1.0, 0.0]), one()).unwrap(),
        ];
        let w = metropolis_weights(&Graph::path(3)).unwrap();
        let mo = modified_observation(&sys, &sensors, &w, 0, 1).unwrap();
        assert_eq!(mo.sources, vec![0, 1]);
        assert_eq!(mo.c_tilde.nrows(), 2);
        // N·l = 3·(2/3) and 3·(1/3)
        assert!((mo.r_tilde[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((mo.r_tilde[(1, 1)] - 1.0).abs() < 1e-14);
        assert_eq!(mo.r_bar, Matrix::identity(2, 2));
    }

    #[test]
    fn naive_only_network_has_empty_observation() {
        let sys = SystemModel::new(tracking_a(), Matrix::identity(4, 4)).unwrap();
        let sensors = vec![SensorModel::naive(4); 2];
        let mo = modified_observation(&sys, &sensors, &WeightMatrix::uniform(2), 0, 1).unwrap();
        assert!(mo.is_empty());
        assert_eq!(mo.info, Matrix::zeros(4, 4));
    }
}
