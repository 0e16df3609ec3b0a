//! Dense matrix analysis and the Riccati / Lyapunov solvers.
//!
//! Every steady-state quantity in this crate is the solution of either a
//! discrete algebraic Riccati equation (DARE)
//!
//! ```text
//! P = A P Aᵀ + Q − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ
//! ```
//!
//! or a discrete Lyapunov equation (DLE) `X = F X Fᵀ + W`. The DARE is
//! solved by plain fixed-point iteration of the Riccati recursion; the DLE
//! by a direct Kronecker-vectorized solve for small dimensions.

use nalgebra::linalg::{Schur, SymmetricEigen};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const EIGEN_MAX_ITER: usize = 10_000;

/// Solver tolerances. The defaults are the values the analysis pipeline is
/// validated against; callers may tighten or relax them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop the Riccati recursion when the relative Frobenius change of one
    /// step drops to this value.
    pub dare_step_tol: f64,
    pub dare_max_iter: usize,
    /// Required relative residual of an accepted DARE solution.
    pub dare_residual_tol: f64,
    /// Required relative residual of an accepted DLE solution.
    pub dle_residual_tol: f64,
    /// Largest dimension solved through the n²×n² Kronecker system.
    pub dle_direct_max_dim: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            dare_step_tol: 1e-12,
            dare_max_iter: 200_000,
            dare_residual_tol: 1e-9,
            dle_residual_tol: 1e-10,
            dle_direct_max_dim: 20,
        }
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest singular value.
pub fn norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

pub fn lambda_min(m: &Matrix) -> Result<f64> {
    symmetric_eigenvalues(m)?
        .first()
        .copied()
        .ok_or_else(|| Error::Dimension("empty matrix".into()))
}

pub fn lambda_max(m: &Matrix) -> Result<f64> {
    symmetric_eigenvalues(m)?
        .last()
        .copied()
        .ok_or_else(|| Error::Dimension("empty matrix".into()))
}

/// All eigenvalues of a general real square matrix as `(re, im)` pairs.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect())
}

/// `max |λ(M)|`.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

/// Numerical rank with the singular value cutoff `max(rows, cols)·ε·σ_max`.
pub fn numerical_rank(m: &Matrix) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let cutoff = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Checks the covariance invariants: symmetric and positive semidefinite,
/// both relative to `‖X‖₂`.
pub fn check_covariance(x: &Matrix, what: &str) -> Result<()> {
    if !x.is_square() {
        return Err(Error::Dimension(format!("{what} must be square")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    let scale = norm2(x);
    if norm2(&(x - x.transpose())) > 1e-10 * scale {
        return Err(Error::InvalidInput(format!("{what} is not symmetric")));
    }
    if !x.is_empty() && lambda_min(x)? < -1e-10 * scale {
        return Err(Error::InvalidInput(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

/// Checks symmetric positive definiteness through a Cholesky factorization.
pub fn check_positive_definite(x: &Matrix, what: &str) -> Result<()> {
    check_covariance(x, what)?;
    if x.is_empty() {
        return Ok(());
    }
    if symmetrize(x).cholesky().is_none() || lambda_min(x)? <= 0.0 {
        return Err(Error::InvalidInput(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Inverse of a general square matrix.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix is not invertible".into()))
}

/// Block diagonal assembly; empty blocks are skipped.
pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((at, at), (k, k)).copy_from(b);
        at += k;
    }
    out
}

/// Vertical stacking of row blocks with a common column count.
pub fn vstack(blocks: &[Matrix], ncols: usize) -> Matrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(n, ncols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), ncols)).copy_from(b);
        at += b.nrows();
    }
    out
}

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Upper bound on `‖Mᵏ‖₂` from the spectral radius and the largest
/// singular value alone:
///
/// ```text
/// √n · Σ_{j=0}^{n−1} C(n−1, j) · C(k, j) · ‖M‖₂ʲ · ρ(M)^{k−j}
/// ```
///
/// Overflow saturates to `+∞`.
pub fn power_norm_bound(m: &Matrix, k: u64) -> Result<f64> {
    let n = m.nrows();
    if !m.is_square() || n == 0 {
        return Err(Error::Dimension("power_norm_bound needs a non-empty square matrix".into()));
    }
    let rho = spectral_radius(m)?;
    let sigma = norm2(m);
    let mut sum = 0.0;
    for j in 0..n as u64 {
        if j > k {
            break;
        }
        let term = binomial(n as u64 - 1, j)
            * binomial(k, j)
            * sigma.powi(j as i32)
            * rho.powi((k - j) as i32);
        sum += term;
    }
    let bound = (n as f64).sqrt() * sum;
    Ok(if bound.is_nan() { f64::INFINITY } else { bound })
}

fn check_system_dims(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(Error::Dimension("A must be a non-empty square matrix".into()));
    }
    if c.ncols() != n {
        return Err(Error::Dimension(format!("C has {} columns, A is {n}x{n}", c.ncols())));
    }
    if q.shape() != (n, n) {
        return Err(Error::Dimension(format!("Q must be {n}x{n}")));
    }
    let p = c.nrows();
    if r.shape() != (p, p) {
        return Err(Error::Dimension(format!("R must be {p}x{p}")));
    }
    Ok(())
}

/// One step of the Riccati recursion `P ↦ A P Aᵀ + Q − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ`.
pub fn riccati_step(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let posterior = if c.nrows() == 0 {
        p.clone()
    } else {
        let cp = c * p;
        let innovation = symmetrize(&(&cp * c.transpose() + r));
        let chol = innovation
            .cholesky()
            .ok_or_else(|| Error::Singular("innovation covariance C P Cᵀ + R".into()))?;
        p - cp.transpose() * chol.solve(&cp)
    };
    Ok(symmetrize(&(a * posterior * a.transpose() + q)))
}

/// Relative Frobenius residual `‖P − ricc(P)‖_F / ‖P‖_F`.
pub fn dare_residual(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    let next = riccati_step(a, c, q, r, p)?;
    Ok(frobenius(&(&next - p)) / frobenius(p).max(f64::MIN_POSITIVE))
}

/// Stabilizing solution of the DARE by fixed-point iteration from `P₀ = Q`.
pub fn solve_dare(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    solve_dare_with(a, c, q, r, &SolverOptions::default())
}

pub fn solve_dare_with(
    a: &Matrix,
    c: &Matrix,
    q: &Matrix,
    r: &Matrix,
    opts: &SolverOptions,
) -> Result<Matrix> {
    check_system_dims(a, c, q, r)?;
    check_positive_definite(q, "Q")?;
    check_positive_definite(r, "R")?;

    let blowup = 1e15 * frobenius(q).max(1.0);
    let mut p = symmetrize(q);
    let mut last_change = f64::INFINITY;
    for it in 1..=opts.dare_max_iter {
        let next = riccati_step(a, c, q, r, &p)?;
        let size = frobenius(&next);
        if !size.is_finite() || size > blowup {
            return Err(Error::Divergence { iterations: it, norm: size });
        }
        let change = frobenius(&(&next - &p)) / size.max(f64::MIN_POSITIVE);
        p = next;
        last_change = change;
        if change <= opts.dare_step_tol {
            let residual = dare_residual(a, c, q, r, &p)?;
            if residual > opts.dare_residual_tol {
                return Err(Error::NotConverged { iterations: it, residual });
            }
            return Ok(p);
        }
    }
    let size = frobenius(&p);
    if riccati_step(a, c, q, r, &p).map(|n| frobenius(&n) > size)? {
        Err(Error::Divergence { iterations: opts.dare_max_iter, norm: size })
    } else {
        Err(Error::NotConverged { iterations: opts.dare_max_iter, residual: last_change })
    }
}

/// Relative Frobenius residual `‖X − F X Fᵀ − W‖_F / ‖X‖_F`.
pub fn dle_residual(f: &Matrix, w: &Matrix, x: &Matrix) -> f64 {
    let res = x - f * x * f.transpose() - w;
    frobenius(&res) / frobenius(x).max(f64::MIN_POSITIVE)
}

/// Solves `X = F X Fᵀ + W` for Schur-stable `F`.
pub fn solve_dle(f: &Matrix, w: &Matrix) -> Result<Matrix> {
    solve_dle_with(f, w, &SolverOptions::default())
}

pub fn solve_dle_with(f: &Matrix, w: &Matrix, opts: &SolverOptions) -> Result<Matrix> {
    let n = f.nrows();
    if !f.is_square() || n == 0 || w.shape() != (n, n) {
        return Err(Error::Dimension("DLE needs square F and W of equal size".into()));
    }
    let rho = spectral_radius(f)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }

    let mut x = if n <= opts.dle_direct_max_dim {
        // column-major vec: vec(F X Fᵀ) = (F ⊗ F) vec(X)
        let system = Matrix::identity(n * n, n * n) - f.kronecker(f);
        let rhs = Vector::from_column_slice(w.as_slice());
        let sol = system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("I − F⊗F".into()))?;
        Matrix::from_column_slice(n, n, sol.as_slice())
    } else {
        smith_iteration(f, w)?
    };

    let w_symmetric = frobenius(&(w - w.transpose())) <= 1e-14 * frobenius(w);
    if w_symmetric {
        x = symmetrize(&x);
    }
    let residual = dle_residual(f, w, &x);
    if residual > opts.dle_residual_tol && frobenius(&x) > 0.0 {
        return Err(Error::NotConverged { iterations: 0, residual });
    }
    Ok(x)
}

/// Squared-doubling accumulation `X = Σ Fᵏ W (Fᵀ)ᵏ`.
fn smith_iteration(f: &Matrix, w: &Matrix) -> Result<Matrix> {
    let mut x = w.clone();
    let mut fk = f.clone();
    for it in 0..64 {
        let inc = &fk * &x * fk.transpose();
        x += &inc;
        fk = &fk * &fk;
        if frobenius(&inc) <= f64::EPSILON * frobenius(&x) || frobenius(&fk) < 1e-300 {
            return Ok(x);
        }
        if !frobenius(&x).is_finite() {
            return Err(Error::Divergence { iterations: it, norm: f64::INFINITY });
        }
    }
    Err(Error::NotConverged { iterations: 64, residual: dle_residual(f, w, &x) })
}

/// Kalman gain, closed-loop feedback and posterior covariance of one Riccati solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    /// `K = A P Cᵀ (C P Cᵀ + R)⁻¹`
    pub gain: Matrix,
    /// `Ã = A − K C`
    pub feedback: Matrix,
    /// `P̄ = P − P Cᵀ (C P Cᵀ + R)⁻¹ C P = (P⁻¹ + Cᵀ R⁻¹ C)⁻¹`
    pub posterior: Matrix,
}

impl ClosedLoop {
    /// Relative mismatch in the Kalman identity `K = A P̄ Cᵀ R⁻¹`.
    pub fn kalman_identity_residual(&self, a: &Matrix, c: &Matrix, r: &Matrix) -> Result<f64> {
        if c.nrows() == 0 {
            return Ok(0.0);
        }
        let alt = a * &self.posterior * c.transpose() * spd_inverse(r)?;
        let scale = norm2(&self.gain).max(f64::MIN_POSITIVE);
        Ok(norm2(&(&alt - &self.gain)) / scale)
    }
}

pub fn closed_loop(a: &Matrix, c: &Matrix, p: &Matrix, r: &Matrix) -> Result<ClosedLoop> {
    let n = a.nrows();
    if !a.is_square() || p.shape() != (n, n) || c.ncols() != n || r.shape() != (c.nrows(), c.nrows()) {
        return Err(Error::Dimension("closed_loop: inconsistent A, C, P, R".into()));
    }
    if c.nrows() == 0 {
        return Ok(ClosedLoop {
            gain: Matrix::zeros(n, 0),
            feedback: a.clone(),
            posterior: p.clone(),
        });
    }
    let pct = p * c.transpose();
    let innovation = symmetrize(&(c * &pct + r));
    let inv = innovation
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("innovation covariance C P Cᵀ + R".into()))?;
    let gain = a * &pct * &inv;
    let feedback = a - &gain * c;
    let posterior = symmetrize(&(p - &pct * &inv * pct.transpose()));
    Ok(ClosedLoop { gain, feedback, posterior })
}

/// Upper bounds on the spectral radius and 2-norm of the closed loop of a
/// DARE solution `P` driven by process noise `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopBounds {
    /// `√(1 − λ_min(Q)/λ_max(P))`
    pub rho_bound: f64,
    /// `√(λ_max(P)/λ_min(Q))`
    pub norm_bound: f64,
}

pub fn closed_loop_bounds(p: &Matrix, q: &Matrix) -> Result<LoopBounds> {
    let lq = lambda_min(q)?;
    if lq <= 0.0 {
        return Err(Error::InvalidInput("λ_min(Q) must be positive".into()));
    }
    let lp = lambda_max(p)?;
    if lp <= 0.0 {
        return Err(Error::InvalidInput("λ_max(P) must be positive".into()));
    }
    Ok(LoopBounds {
        rho_bound: (1.0 - lq / lp).max(0.0).sqrt(),
        norm_bound: (lp / lq).sqrt(),
    })
}

/// Partial sum of the series expressing the difference of two DARE
/// solutions that share `(A, C, Q)` but differ in `R`:
///
/// ```text
/// P₁ − P₂ = Σ_k Ã₁ᵏ A P̄₁ Cᵀ (R₂⁻¹ − R₁⁻¹) C P̄₂ Aᵀ (Ã₂ᵀ)ᵏ
/// ```
pub fn dare_gap_series(
    a: &Matrix,
    c: &Matrix,
    q: &Matrix,
    r1: &Matrix,
    r2: &Matrix,
    terms: usize,
) -> Result<Matrix> {
    let p1 = solve_dare(a, c, q, r1)?;
    let p2 = solve_dare(a, c, q, r2)?;
    dare_gap_series_from(a, c, r1, r2, &p1, &p2, terms)
}

/// Same as [`dare_gap_series`] with both Riccati solutions supplied.
pub fn dare_gap_series_from(
    a: &Matrix,
    c: &Matrix,
    r1: &Matrix,
    r2: &Matrix,
    p1: &Matrix,
    p2: &Matrix,
    terms: usize,
) -> Result<Matrix> {
    let n = a.nrows();
    let loop1 = closed_loop(a, c, p1, r1)?;
    let loop2 = closed_loop(a, c, p2, r2)?;
    let dinv = spd_inverse(r2)? - spd_inverse(r1)?;
    let core = a * &loop1.posterior * c.transpose() * dinv * c * &loop2.posterior * a.transpose();

    let mut sum = Matrix::zeros(n, n);
    let mut left = Matrix::identity(n, n);
    let mut right = Matrix::identity(n, n);
    let f2t = loop2.feedback.transpose();
    for _ in 0..terms {
        sum += &left * &core * &right;
        left = &loop1.feedback * &left;
        right *= &f2t;
    }
    Ok(sum)
}

/// Relative mismatch between `(P⁻¹ + Cᵀ Q⁻¹ C)⁻¹` and `P − P Cᵀ (C P Cᵀ + Q)⁻¹ C P`.
pub fn inversion_lemma_gap(p: &Matrix, q: &Matrix, c: &Matrix) -> Result<f64> {
    let info_form = spd_inverse(&(spd_inverse(p)? + c.transpose() * spd_inverse(q)? * c))?;
    let gain_form = p - p * c.transpose() * spd_inverse(&(c * p * c.transpose() + q))? * c * p;
    Ok(norm2(&(&info_form - &gain_form)) / norm2(&info_form).max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    // P² − 0.25P − 1 = 0 for A = 0.5, C = Q = R = 1
    fn scalar_dare_root() -> f64 {
        (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0
    }

    #[test]
    fn spectral_radius_examples() {
        assert_relative_eq!(spectral_radius(&Matrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(spectral_radius(&m(2, 2, &[0.5, 0.0, 0.0, -0.2])).unwrap(), 0.5, epsilon = 1e-14);
        // λ² + 0.25 = 0
        assert_relative_eq!(spectral_radius(&m(2, 2, &[0.0, 1.0, -0.25, 0.0])).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_rejects_nan() {
        let bad = m(1, 1, &[f64::NAN]);
        assert!(spectral_radius(&bad).is_err());
    }

    #[test]
    fn power_bound_examples() {
        let half = m(1, 1, &[0.5]);
        assert_relative_eq!(power_norm_bound(&half, 3).unwrap(), 0.125, epsilon = 1e-15);
        let eye = Matrix::identity(2, 2);
        assert_relative_eq!(power_norm_bound(&eye, 5).unwrap(), 6.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(power_norm_bound(&eye, 0).unwrap(), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn power_bound_saturates() {
        let big = m(2, 2, &[1e200, 1e200, 0.0, 1e200]);
        assert_eq!(power_norm_bound(&big, 10).unwrap(), f64::INFINITY);
    }

    #[test]
    fn scalar_dare() {
        let one = m(1, 1, &[1.0]);
        let p = solve_dare(&m(1, 1, &[0.5]), &one, &one, &one).unwrap();
        assert_relative_eq!(p[(0, 0)], scalar_dare_root(), epsilon = 1e-11);
        assert_relative_eq!(p[(0, 0)], 1.1327822, epsilon = 1e-7);
    }

    #[test]
    fn zero_dynamics_dare_is_q() {
        let a = Matrix::zeros(2, 2);
        let c = m(1, 2, &[1.0, 0.5]);
        let q = m(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = m(1, 1, &[0.7]);
        let p = solve_dare(&a, &c, &q, &r).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn dare_rejects_bad_inputs() {
        let a = Matrix::identity(2, 2) * 1.1;
        let c = m(1, 2, &[1.0, 0.0]);
        let q = Matrix::identity(2, 2);
        let r = m(1, 1, &[1.0]);
        // second state unobservable and unstable
        let opts = SolverOptions { dare_max_iter: 5000, ..Default::default() };
        match solve_dare_with(&a, &c, &q, &r, &opts) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
        let r_bad = m(1, 1, &[-1.0]);
        assert!(matches!(solve_dare(&a, &c, &q, &r_bad), Err(Error::InvalidInput(_))));
        let c_bad = m(1, 3, &[1.0, 0.0, 0.0]);
        assert!(matches!(solve_dare(&a, &c_bad, &q, &r), Err(Error::Dimension(_))));
    }

    #[test]
    fn dle_examples() {
        let x = solve_dle(&m(1, 1, &[0.5]), &m(1, 1, &[0.75])).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
        let w = m(2, 2, &[1.0, 0.2, 0.2, 3.0]);
        let x = solve_dle(&Matrix::zeros(2, 2), &w).unwrap();
        assert_relative_eq!(x, w, epsilon = 1e-15);
        assert!(matches!(
            solve_dle(&m(1, 1, &[1.0]), &m(1, 1, &[1.0])),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn dle_smith_matches_direct() {
        let f = m(3, 3, &[0.5, 0.2, 0.0, -0.1, 0.3, 0.4, 0.0, 0.2, -0.6]);
        let w = m(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.0, 0.1, 0.0, 1.5]);
        let direct = solve_dle(&f, &w).unwrap();
        let opts = SolverOptions { dle_direct_max_dim: 0, ..Default::default() };
        let smith = solve_dle_with(&f, &w, &opts).unwrap();
        assert_relative_eq!(direct, smith, epsilon = 1e-12);
    }

    #[test]
    fn closed_loop_scalar() {
        let p = scalar_dare_root();
        let one = m(1, 1, &[1.0]);
        let a = m(1, 1, &[0.5]);
        let cl = closed_loop(&a, &one, &m(1, 1, &[p]), &one).unwrap();
        // K = A P / (P + 1)
        let k = 0.5 * p / (p + 1.0);
        assert_relative_eq!(cl.gain[(0, 0)], k, epsilon = 1e-14);
        assert_relative_eq!(cl.feedback[(0, 0)], 0.5 - k, epsilon = 1e-14);
        assert_relative_eq!(cl.gain[(0, 0)], 0.265564, epsilon = 1e-6);
        assert_relative_eq!(cl.posterior[(0, 0)], p / (p + 1.0), epsilon = 1e-14);
        assert!(cl.kalman_identity_residual(&a, &one, &one).unwrap() < 1e-9);
    }

    #[test]
    fn closed_loop_without_observation() {
        let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let p = Matrix::identity(2, 2);
        let cl = closed_loop(&a, &Matrix::zeros(0, 2), &p, &Matrix::zeros(0, 0)).unwrap();
        assert_eq!(cl.gain.shape(), (2, 0));
        assert_eq!(cl.feedback, a);
        // an all-zero observation row gives the same loop
        let cl0 = closed_loop(&a, &Matrix::zeros(1, 2), &p, &m(1, 1, &[1.0])).unwrap();
        assert!(cl0.gain.iter().all(|&g| g == 0.0));
        assert_eq!(cl0.feedback, a);
    }

    #[test]
    fn closed_loop_infinite_noise_limit() {
        let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let c = Matrix::identity(2, 2);
        let r = Matrix::identity(2, 2) * 1e12;
        let cl = closed_loop(&a, &c, &Matrix::identity(2, 2), &r).unwrap();
        assert!(norm2(&cl.gain) < 1e-6);
    }

    #[test]
    fn loop_bound_examples() {
        let p = m(1, 1, &[scalar_dare_root()]);
        let one = m(1, 1, &[1.0]);
        let b = closed_loop_bounds(&p, &one).unwrap();
        assert_relative_eq!(b.rho_bound, 0.34237, epsilon = 1e-5);
        let cl = closed_loop(&m(1, 1, &[0.5]), &one, &p, &one).unwrap();
        assert!(spectral_radius(&cl.feedback).unwrap() <= b.rho_bound);

        let eye = Matrix::identity(3, 3);
        let b = closed_loop_bounds(&eye, &eye).unwrap();
        assert_eq!(b.rho_bound, 0.0);
        assert_relative_eq!(b.norm_bound, 1.0, epsilon = 1e-14);
        assert!(closed_loop_bounds(&eye, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn gap_series_scalar() {
        let one = m(1, 1, &[1.0]);
        let two = m(1, 1, &[2.0]);
        let a = m(1, 1, &[0.5]);
        let series = dare_gap_series(&a, &one, &one, &one, &two, 200).unwrap();
        let direct = solve_dare(&a, &one, &one, &one).unwrap() - solve_dare(&a, &one, &one, &two).unwrap();
        assert_relative_eq!(series[(0, 0)], direct[(0, 0)], epsilon = 1e-9);
        let zero = dare_gap_series(&a, &one, &one, &two, &two, 50).unwrap();
        assert_eq!(zero[(0, 0)], 0.0);
    }

    #[test]
    fn dare_monotone_in_r() {
        let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let c = Matrix::identity(2, 2);
        let q = Matrix::identity(2, 2);
        let p1 = solve_dare(&a, &c, &q, &(Matrix::identity(2, 2) * 2.0)).unwrap();
        let p2 = solve_dare(&a, &c, &q, &Matrix::identity(2, 2)).unwrap();
        assert!(lambda_min(&(p1 - p2)).unwrap() >= -1e-12);
    }

    #[test]
    fn inversion_lemma() {
        let p = m(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let q = m(1, 1, &[0.5]);
        let c = m(1, 2, &[1.0, -2.0]);
        assert!(inversion_lemma_gap(&p, &q, &c).unwrap() < 1e-12);
    }

    #[test]
    fn rank_and_covariance_checks() {
        assert_eq!(numerical_rank(&m(2, 2, &[1.0, 2.0, 2.0, 4.0])), 1);
        assert_eq!(numerical_rank(&Matrix::zeros(3, 3)), 0);
        assert!(check_covariance(&m(2, 2, &[1.0, 0.5, 0.0, 1.0]), "X").is_err());
        assert!(check_covariance(&m(2, 2, &[1.0, 0.0, 0.0, -1.0]), "X").is_err());
        assert!(check_covariance(&m(2, 2, &[1.0, 1.0, 1.0, 1.0]), "X").is_ok());
        assert!(check_positive_definite(&m(2, 2, &[1.0, 1.0, 1.0, 1.0]), "X").is_err());
    }
}
