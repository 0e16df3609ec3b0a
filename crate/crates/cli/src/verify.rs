//! Property suites over randomized systems and the built-in scenario.
//!
//! Each randomized system is drawn from its own seed (`master + index`), so
//! a failure names a seed that reproduces it in isolation.

use cmdf_core::analysis::{self, GapMetric};
use cmdf_core::model::is_observable;
use cmdf_core::numerics::{
    self, closed_loop, closed_loop_bounds, dare_gap_series_from, inversion_lemma_gap, lambda_min, norm2,
    power_norm_bound, solve_dare, spectral_radius, Matrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::commands::Network;
use crate::error::CliResult;
use crate::scenario::{Scenario, BUILTIN_REFERENCE};

pub const DEFAULT_MASTER_SEED: u64 = 20_240_601;
pub const DEFAULT_SYSTEMS: usize = 100;
pub const MAX_STATE_DIM: usize = 6;
pub const MAX_POWER: u64 = 50;
pub const SERIES_TERMS: usize = 500;

const INVERSION_TOL: f64 = 1e-9;
const SERIES_TOL: f64 = 1e-6;
const MONOTONE_TOL: f64 = 1e-9;
/// Slack for round-off in the norm and eigenvalue comparisons.
const BOUND_SLACK: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub master_seed: u64,
    pub systems: usize,
    /// Multiplies every upper bound before it is compared. Values below 1
    /// break the bounds on purpose to exercise the failure path.
    pub bound_scale: f64,
    /// Also run the checks on the built-in scenario.
    pub builtin: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { master_seed: DEFAULT_MASTER_SEED, systems: DEFAULT_SYSTEMS, bound_scale: 1.0, builtin: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    /// Seed of the randomized system, `None` for the built-in scenario.
    pub seed: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub description: &'static str,
    pub checks: usize,
    pub failures: Vec<Counterexample>,
}

impl PropertyResult {
    fn new(name: &'static str, description: &'static str) -> Self {
        Self { name, description, checks: 0, failures: Vec::new() }
    }

    fn check(&mut self, seed: Option<u64>, ok: bool, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(Counterexample { seed, detail: detail() });
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(PropertyResult::passed)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }

    /// One line per property, followed by the counterexamples of failures.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.properties {
            let verdict = if p.passed() { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "{verdict} {:<14} {:>6} checks {:>4} failures  {}\n",
                p.name,
                p.checks,
                p.failures.len(),
                p.description
            ));
            for f in p.failures.iter().take(10) {
                let seed = f.seed.map_or_else(|| "builtin".to_string(), |s| format!("seed {s}"));
                out.push_str(&format!("    counterexample {seed}: {}\n", f.detail));
            }
        }
        let failed = self.properties.iter().filter(|p| !p.passed()).count();
        out.push_str(&format!("{} of {} properties hold\n", self.properties.len() - failed, self.properties.len()));
        out
    }
}

/// An observable `(A, C)` with noise covariances and a second, larger
/// measurement noise `R₁ = R₂ + E Eᵀ`.
#[derive(Debug, Clone)]
pub struct RandomSystem {
    pub a: Matrix,
    pub c: Matrix,
    pub q: Matrix,
    pub r_large: Matrix,
    pub r_small: Matrix,
    /// A generic positive definite matrix for the inversion identity.
    pub p: Matrix,
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let b = gaussian(rng, n, n);
    numerics::symmetrize(&(&b * b.transpose() / n as f64 + Matrix::identity(n, n) * floor))
}

impl RandomSystem {
    /// State dimension in `1..=6`, spectral radius of `A` in `[0.2, 1.2]`,
    /// `Q` and `R` bounded below by `0.5 I`.
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=MAX_STATE_DIM);
        let m = rng.random_range(1..=n);
        loop {
            let raw = gaussian(&mut rng, n, n);
            let rho = spectral_radius(&raw).unwrap_or(0.0);
            let target = rng.random_range(0.2..1.2);
            let c = gaussian(&mut rng, m, n);
            if rho < 1e-6 {
                continue;
            }
            let a = raw * (target / rho);
            if !is_observable(&a, &c) {
                continue;
            }
            let q = random_spd(&mut rng, n, 0.5);
            let r_small = random_spd(&mut rng, m, 0.5);
            let e = gaussian(&mut rng, m, m);
            let r_large = numerics::symmetrize(&(&r_small + &e * e.transpose()));
            let p = random_spd(&mut rng, n, 0.1);
            return Self { a, c, q, r_large, r_small, p };
        }
    }
}

struct Suites {
    inversion: PropertyResult,
    power: PropertyResult,
    loop_bounds: PropertyResult,
    series: PropertyResult,
    monotone: PropertyResult,
    rate: PropertyResult,
}

impl Suites {
    fn new() -> Self {
        Self {
            inversion: PropertyResult::new("inversion", "(P⁻¹+CᵀR⁻¹C)⁻¹ = P − PCᵀ(CPCᵀ+R)⁻¹CP to 1e-9"),
            power: PropertyResult::new("power_bound", "‖Mᵏ‖₂ ≤ power_norm_bound(M, k), k ≤ 50"),
            loop_bounds: PropertyResult::new("loop_bounds", "closed loop: ρ(Ã) < 1 and both bounds hold"),
            series: PropertyResult::new("gap_series", "500-term series equals P₁ − P₂ to 1e-6"),
            monotone: PropertyResult::new("monotone", "R₁ ≥ R₂ ⇒ P₁ ≥ P₂"),
            rate: PropertyResult::new("rate_bound", "fitted decay rates q ≤ slem + 0.05"),
        }
    }

    fn into_report(self) -> VerifyReport {
        VerifyReport {
            properties: vec![self.inversion, self.power, self.loop_bounds, self.series, self.monotone, self.rate],
        }
    }

    fn power_checks(&mut self, seed: Option<u64>, what: &str, m: &Matrix, scale: f64) {
        let n = m.nrows();
        let mut mk = Matrix::identity(n, n);
        for k in 0..=MAX_POWER {
            let actual = norm2(&mk);
            let bound = power_norm_bound(m, k).map(|b| b * scale);
            self.power.check(seed, matches!(bound, Ok(b) if actual <= b * (1.0 + BOUND_SLACK) + 1e-300), || {
                format!("{what}, k = {k}: ‖Mᵏ‖₂ = {actual:e}, bound {bound:?}")
            });
            mk = &mk * m;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn loop_checks(&mut self, seed: Option<u64>, what: &str, a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix, scale: f64) {
        let verdict = (|| -> cmdf_core::Result<(f64, f64, f64, f64)> {
            let cl = closed_loop(a, c, p, r)?;
            let b = closed_loop_bounds(p, q)?;
            Ok((spectral_radius(&cl.feedback)?, norm2(&cl.feedback), b.rho_bound * scale, b.norm_bound * scale))
        })();
        match verdict {
            Ok((rho, norm, rho_b, norm_b)) => {
                self.loop_bounds.check(seed, rho < 1.0 && rho <= rho_b * (1.0 + BOUND_SLACK), || {
                    format!("{what}: ρ(Ã) = {rho}, bound {rho_b}")
                });
                self.loop_bounds.check(seed, norm <= norm_b * (1.0 + BOUND_SLACK), || {
                    format!("{what}: ‖Ã‖₂ = {norm}, bound {norm_b}")
                });
            }
            Err(e) => self.loop_bounds.check(seed, false, || format!("{what}: {e}")),
        }
    }

    fn random_system(&mut self, seed: u64, scale: f64) {
        let s = RandomSystem::generate(seed);
        let some = Some(seed);

        let gap = inversion_lemma_gap(&s.p, &s.r_small, &s.c);
        self.inversion.check(some, matches!(gap, Ok(g) if g <= INVERSION_TOL), || format!("relative gap {gap:?}"));

        let (p1, p2) = match (solve_dare(&s.a, &s.c, &s.q, &s.r_large), solve_dare(&s.a, &s.c, &s.q, &s.r_small)) {
            (Ok(p1), Ok(p2)) => (p1, p2),
            (e1, e2) => {
                let detail = format!("DARE failed: {:?} / {:?}", e1.err(), e2.err());
                for suite in [&mut self.loop_bounds, &mut self.series, &mut self.monotone] {
                    suite.check(some, false, || detail.clone());
                }
                return;
            }
        };
        let gap = inversion_lemma_gap(&p2, &s.r_small, &s.c);
        self.inversion.check(some, matches!(gap, Ok(g) if g <= INVERSION_TOL), || format!("DARE P: relative gap {gap:?}"));

        self.power_checks(some, "A", &s.a, scale);
        match closed_loop(&s.a, &s.c, &p2, &s.r_small) {
            Ok(cl) => self.power_checks(some, "closed loop", &cl.feedback, scale),
            Err(e) => self.power.check(some, false, || format!("closed loop: {e}")),
        }

        self.loop_checks(some, "R₁", &s.a, &s.c, &s.q, &s.r_large, &p1, scale);
        self.loop_checks(some, "R₂", &s.a, &s.c, &s.q, &s.r_small, &p2, scale);

        let scale_p = norm2(&p1).max(1.0);
        let series = dare_gap_series_from(&s.a, &s.c, &s.r_large, &s.r_small, &p1, &p2, SERIES_TERMS)
            .map(|sum| norm2(&(&p1 - &p2 - sum)) / scale_p);
        self.series.check(some, matches!(series, Ok(g) if g <= SERIES_TOL), || format!("relative mismatch {series:?}"));

        let lo = lambda_min(&numerics::symmetrize(&(&p1 - &p2)));
        self.monotone.check(some, matches!(lo, Ok(l) if l >= -MONOTONE_TOL * scale_p), || {
            format!("λmin(P₁ − P₂) = {lo:?}")
        });
    }

    fn builtin(&mut self, scale: f64) -> CliResult<()> {
        let sc = Scenario::builtin(BUILTIN_REFERENCE)?;
        let net = Network::build(&sc)?;
        let (sys, sensors) = (&sc.system, &sc.sensors);
        let central = analysis::centralized_steady(sys, sensors)?;
        let (c, r) = cmdf_core::model::stacked(sensors, sys.dim());
        self.loop_checks(None, "centralized", sys.a(), &c, sys.q(), &r, &central, scale);

        let d = net.diameter;
        for node in 0..sc.node_count() {
            let st = analysis::node_steady(sys, sensors, &net.weights, node, d)?;
            let obs = &st.observation;
            self.loop_checks(None, &format!("node {node}"), sys.a(), &obs.c_tilde, sys.q(), &obs.r_tilde, &st.param, scale);
            self.power_checks(None, &format!("node {node} closed loop"), &st.closed_loop.feedback, scale);
            let mismatch = analysis::gap_series_mismatch(sys, sensors, &net.weights, node, d, SERIES_TERMS)
                .map(|g| g / norm2(&central).max(1.0));
            self.series.check(None, matches!(mismatch, Ok(g) if g <= SERIES_TOL), || {
                format!("node {node}, L = {d}: relative mismatch {mismatch:?}")
            });
        }

        let depths: Vec<usize> = (d..=d + 30).collect();
        let report = analysis::gap_report(sys, sensors, &net.weights, &depths)?;
        for metric in GapMetric::ALL {
            let fit = analysis::fit_rate(&report.worst_case(metric));
            let limit = (net.slem + 0.05) * scale;
            self.rate.check(None, matches!(fit, Ok(f) if f.q <= limit), || {
                format!("{}: fit {fit:?}, limit {limit}", metric.name())
            });
        }
        Ok(())
    }
}

pub fn verify(opts: &VerifyOptions) -> CliResult<VerifyReport> {
    let mut suites = Suites::new();
    for i in 0..opts.systems {
        suites.random_system(opts.master_seed.wrapping_add(i as u64), opts.bound_scale);
    }
    if opts.builtin {
        suites.builtin(opts.bound_scale)?;
    }
    Ok(suites.into_report())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic_and_observable() {
        for seed in 0..20 {
            let a = RandomSystem::generate(seed);
            let b = RandomSystem::generate(seed);
            assert_eq!(a.a, b.a);
            assert!(a.a.nrows() <= MAX_STATE_DIM);
            assert!(is_observable(&a.a, &a.c));
        }
    }

    #[test]
    fn small_sweep_passes() {
        let report = verify(&VerifyOptions { systems: 10, builtin: false, ..Default::default() }).unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn broken_bound_is_caught() {
        let report = verify(&VerifyOptions { systems: 3, builtin: false, bound_scale: 0.5, ..Default::default() }).unwrap();
        assert!(!report.passed());
        let p = report.property("power_bound").unwrap();
        assert!(p.failures.iter().all(|f| f.seed.is_some()));
        assert!(report.render().contains("counterexample seed"));
    }
}
