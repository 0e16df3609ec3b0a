//! Command implementations. Each returns its CSV text so callers decide
//! where it goes; [`write_output`] puts it on disk.

use std::path::{Path, PathBuf};

use cmdf_core::analysis::{self, GapMetric, RateFit};
use cmdf_core::network::{self, graph_metrics, Graph, WeightMatrix};
use cmdf_core::simulate;

use crate::error::{CliError, CliResult};
use crate::scenario::Scenario;

/// Fixed scientific notation with 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

/// The scenario's graph with its weights, diameter and SLEM.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: Graph,
    pub weights: WeightMatrix,
    pub diameter: usize,
    pub slem: f64,
}

impl Network {
    pub fn build(scenario: &Scenario) -> CliResult<Self> {
        let graph = scenario.build_graph()?;
        let metrics = graph_metrics(&graph);
        if !metrics.connected {
            return Err(CliError::Core(cmdf_core::Error::Disconnected));
        }
        let weights = scenario.build_weights(&graph)?;
        let slem = network::slem(&weights)?;
        Ok(Self { graph, weights, diameter: metrics.diameter, slem })
    }
}

fn pick_depths(explicit: &[usize], fallback: impl FnOnce() -> Vec<usize>) -> Vec<usize> {
    let mut depths = if explicit.is_empty() { fallback() } else { explicit.to_vec() };
    depths.sort_unstable();
    depths.dedup();
    depths
}

/// `d..=max(60, d + 30)` unless the scenario names its own depths.
pub fn analyze_depths(scenario: &Scenario, diameter: usize) -> Vec<usize> {
    pick_depths(&scenario.depths, || (diameter..=(diameter + 30).max(60)).collect())
}

/// `{d, d + 5, d + 10}` unless the scenario names its own depths.
pub fn simulate_depths(scenario: &Scenario, diameter: usize) -> Vec<usize> {
    pick_depths(&scenario.depths, || vec![diameter, diameter + 5, diameter + 10])
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutput {
    pub gaps_csv: String,
    pub rates_csv: String,
    pub fits: Vec<(GapMetric, Option<RateFit>)>,
}

fn fit_row(out: &mut String, metric: &str, scope: &str, fit: Option<&RateFit>, slem: f64) {
    match fit {
        Some(f) => out.push_str(&format!(
            "{metric},{scope},{},{},{},{},{},{},{}\n",
            fmt_num(f.m),
            fmt_num(f.q),
            fmt_num(f.residual),
            f.l_min,
            f.l_max,
            f.points,
            fmt_num(slem)
        )),
        None => out.push_str(&format!("{metric},{scope},NaN,NaN,NaN,,,0,{}\n", fmt_num(slem))),
    }
}

/// Steady-state gaps for every node and depth, plus rate fits over the
/// depths at or beyond the diameter.
pub fn analyze(scenario: &Scenario) -> CliResult<AnalyzeOutput> {
    let net = Network::build(scenario)?;
    let depths = analyze_depths(scenario, net.diameter);
    let report = analysis::gap_report(&scenario.system, &scenario.sensors, &net.weights, &depths)?;

    let mut gaps_csv =
        String::from("L,node,gap_param,gap_consistency,gap_total,mse_theory,mse_theory_posterior,slem\n");
    for r in &report.rows {
        gaps_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.depth,
            r.node,
            fmt_num(r.gap_param),
            fmt_num(r.gap_consistency),
            fmt_num(r.gap_total),
            fmt_num(r.mse_theory),
            fmt_num(r.mse_theory_posterior),
            fmt_num(net.slem)
        ));
    }

    let in_range = |series: Vec<(usize, f64)>| -> Vec<(usize, f64)> {
        series.into_iter().filter(|(l, _)| *l >= net.diameter).collect()
    };
    let mut rates_csv = String::from("metric,scope,M,q,residual,L_min,L_max,points,slem\n");
    let mut fits = Vec::new();
    for metric in GapMetric::ALL {
        let fit = analysis::fit_rate(&in_range(report.worst_case(metric))).ok();
        fit_row(&mut rates_csv, metric.name(), "max", fit.as_ref(), net.slem);
        fits.push((metric, fit));
    }
    for metric in GapMetric::ALL {
        for node in 0..scenario.node_count() {
            let fit = analysis::fit_rate(&in_range(report.node_series(metric, node))).ok();
            fit_row(&mut rates_csv, metric.name(), &node.to_string(), fit.as_ref(), net.slem);
        }
    }
    let deviation: Vec<(usize, f64)> = depths
        .iter()
        .filter(|&&l| l >= net.diameter)
        .map(|&l| (l, analysis::weight_deviation(&net.weights, l).amax()))
        .collect();
    fit_row(&mut rates_csv, "weight_deviation", "max", analysis::fit_rate(&deviation).ok().as_ref(), net.slem);

    Ok(AnalyzeOutput { gaps_csv, rates_csv, fits })
}

/// Monte Carlo MSE next to the steady-state theory for every node and depth.
pub fn simulate(scenario: &Scenario) -> CliResult<String> {
    let net = Network::build(scenario)?;
    let depths = simulate_depths(scenario, net.diameter);
    let report = analysis::gap_report(&scenario.system, &scenario.sensors, &net.weights, &depths)?;

    let mut csv = String::from("L,node,mse_empirical,mse_theory_prior,mse_theory_posterior,stderr,trials\n");
    for &l in &depths {
        let mc = simulate::monte_carlo_mse(&scenario.system, &scenario.sensors, &net.weights, l, &scenario.trials)?;
        for (row, (mse, se)) in report.rows.iter().filter(|r| r.depth == l).zip(mc.mse.iter().zip(&mc.mse_stderr)) {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                l,
                row.node,
                fmt_num(*mse),
                fmt_num(row.mse_theory),
                fmt_num(row.mse_theory_posterior),
                fmt_num(*se),
                mc.trials
            ));
        }
    }
    Ok(csv)
}

#[derive(Debug, Clone)]
pub struct GraphOutput {
    pub edge_list: String,
    pub summary: String,
}

/// Edge list of the scenario's graph and a short summary.
pub fn graph(scenario: &Scenario) -> CliResult<GraphOutput> {
    let net = Network::build(scenario)?;
    let scan = analysis::minimal_fusion_scan(&scenario.system, &scenario.sensors, &net.weights, net.diameter)?;
    let scan: Vec<String> = scan.iter().map(|l| l.map_or_else(|| "none".into(), |l| l.to_string())).collect();
    let summary = format!(
        "nodes {}\nedges {}\ndiameter {}\nslem {}\nminimal_depth {}\n",
        net.graph.node_count(),
        net.graph.edge_count(),
        net.diameter,
        fmt_num(net.slem),
        scan.join(" ")
    );
    Ok(GraphOutput { edge_list: net.graph.to_edge_list(), summary })
}

pub fn write_output(dir: &Path, name: &str, text: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global
/// pool when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("thread count must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(1.0), "1.00000000000e0");
        assert_eq!(fmt_num(-0.000123456789012345), "-1.23456789012e-4");
    }

    #[test]
    fn default_depths() {
        let s = Scenario::builtin("reference").unwrap();
        assert_eq!(simulate_depths(&s, 4), vec![4, 9, 14]);
        let a = analyze_depths(&s, 4);
        assert_eq!((a[0], *a.last().unwrap(), a.len()), (4, 60, 57));
    }
}
