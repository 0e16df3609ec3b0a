//! Sensor network topology and consensus weights.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

const STOCHASTIC_TOL: f64 = 1e-12;
const UNIT_EIGEN_TOL: f64 = 1e-9;
const MAX_GEOMETRIC_ATTEMPTS: usize = 1000;

/// Undirected graph on nodes `0..node_count`. Self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
    positions: Option<Vec<[f64; 2]>>,
}

impl Graph {
    pub fn new(node_count: usize) -> Self {
        Self { node_count, edges: BTreeSet::new(), positions: None }
    }

    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::new(node_count);
        for (i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    pub fn path(node_count: usize) -> Self {
        Self::from_edges(node_count, (1..node_count).map(|i| (i - 1, i))).expect("valid path")
    }

    pub fn complete(node_count: usize) -> Self {
        let edges = (0..node_count).flat_map(|i| (i + 1..node_count).map(move |j| (i, j)));
        Self::from_edges(node_count, edges).expect("valid complete graph")
    }

    /// Adds the undirected edge `{i, j}`; `i == j` is ignored.
    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        let n = self.node_count;
        if i >= n || j >= n {
            return Err(Error::InvalidInput(format!("edge ({i}, {j}) outside 0..{n}")));
        }
        if i != j {
            self.edges.insert((i.min(j), i.max(j)));
        }
        Ok(())
    }

    pub fn with_positions(mut self, positions: Vec<[f64; 2]>) -> Result<Self> {
        if positions.len() != self.node_count {
            return Err(Error::Dimension(format!(
                "{} positions for {} nodes",
                positions.len(),
                self.node_count
            )));
        }
        self.positions = Some(positions);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors().iter().map(Vec::len).collect()
    }

    /// Hop distances from `source`; `None` for unreachable nodes.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        bfs(&self.neighbors(), source)
    }

    /// Serializes as an edge list: a `# nodes N` header, `i j` edge lines,
    /// then `i x y` position lines when positions are known.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# nodes {}", self.node_count).unwrap();
        for (i, j) in self.edges() {
            writeln!(out, "{i} {j}").unwrap();
        }
        if let Some(pos) = &self.positions {
            for (i, p) in pos.iter().enumerate() {
                writeln!(out, "{i} {:.12e} {:.12e}", p[0], p[1]).unwrap();
            }
        }
        out
    }

    /// Parses the format written by [`Graph::to_edge_list`]. Without a
    /// `# nodes N` header the node count is one past the largest id seen.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut declared = None;
        let mut edges = Vec::new();
        let mut positions = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                let mut words = comment.split_whitespace();
                if words.next() == Some("nodes") {
                    let n = words
                        .next()
                        .and_then(|w| w.parse::<usize>().ok())
                        .ok_or_else(|| Error::InvalidInput(format!("line {}: bad node header", lineno + 1)))?;
                    declared = Some(n);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::InvalidInput(format!("line {}: cannot parse {raw:?}", lineno + 1));
            match fields.as_slice() {
                [i, j] => edges.push((i.parse::<usize>().map_err(|_| bad())?, j.parse::<usize>().map_err(|_| bad())?)),
                [i, x, y] => positions.push((
                    i.parse::<usize>().map_err(|_| bad())?,
                    x.parse::<f64>().map_err(|_| bad())?,
                    y.parse::<f64>().map_err(|_| bad())?,
                )),
                _ => return Err(bad()),
            }
        }
        let seen = edges
            .iter()
            .flat_map(|&(i, j)| [i, j])
            .chain(positions.iter().map(|p| p.0))
            .max()
            .map_or(0, |m| m + 1);
        let n = declared.unwrap_or(seen);
        if seen > n {
            return Err(Error::InvalidInput(format!("node id {} exceeds declared count {n}", seen - 1)));
        }
        let mut g = Graph::from_edges(n, edges)?;
        if !positions.is_empty() {
            let mut pos = vec![[f64::NAN; 2]; n];
            for (i, x, y) in positions {
                pos[i] = [x, y];
            }
            if pos.iter().any(|p| p[0].is_nan()) {
                return Err(Error::InvalidInput("positions given for only some nodes".into()));
            }
            g = g.with_positions(pos)?;
        }
        Ok(g)
    }
}

fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphMetrics {
    /// Longest shortest path over connected pairs.
    pub diameter: usize,
    pub connected: bool,
}

pub fn graph_metrics(g: &Graph) -> GraphMetrics {
    let adj = g.neighbors();
    let mut diameter = 0;
    let mut connected = true;
    for s in 0..g.node_count() {
        for d in bfs(&adj, s) {
            match d {
                Some(d) => diameter = diameter.max(d),
                None => connected = false,
            }
        }
    }
    GraphMetrics { diameter, connected }
}

/// `N` points uniform on `[0, width]²`, joined when at most `radius` apart.
/// Disconnected draws are discarded and the seed incremented.
pub fn random_geometric(n: usize, width: f64, radius: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one node".into()));
    }
    if !(width > 0.0) || !(radius > 0.0) {
        return Err(Error::InvalidInput("width and radius must be positive".into()));
    }
    for attempt in 0..MAX_GEOMETRIC_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let points: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random::<f64>() * width, rng.random::<f64>() * width])
            .collect();
        let mut g = Graph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                if dx.hypot(dy) <= radius {
                    g.add_edge(i, j)?;
                }
            }
        }
        if graph_metrics(&g).connected {
            return g.with_positions(points);
        }
    }
    Err(Error::GraphGeneration { attempts: MAX_GEOMETRIC_ATTEMPTS })
}

/// Doubly stochastic, non-negative consensus weights with a positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Matrix);

impl WeightMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        let n = m.nrows();
        if !m.is_square() || n == 0 {
            return Err(Error::Dimension("weight matrix must be non-empty and square".into()));
        }
        if m.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        for i in 0..n {
            if m[(i, i)] <= 0.0 {
                return Err(Error::InvalidInput(format!("diagonal weight {i} is not positive")));
            }
            let row: f64 = m.row(i).sum();
            let col: f64 = m.column(i).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidInput(format!("row/column {i} does not sum to one")));
            }
        }
        Ok(Self(m))
    }

    /// `(1/N)·𝟙𝟙ᵀ`, the exact-consensus matrix of a complete graph.
    pub fn uniform(n: usize) -> Self {
        Self(Matrix::from_element(n, n, 1.0 / n as f64))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Checks that every positive off-diagonal weight rests on an edge of `g`.
    pub fn check_support(&self, g: &Graph) -> Result<()> {
        if g.node_count() != self.size() {
            return Err(Error::Dimension("graph and weight matrix sizes differ".into()));
        }
        for i in 0..self.size() {
            for j in 0..self.size() {
                if i != j && self.0[(i, j)] > 0.0 && !g.has_edge(i, j) {
                    return Err(Error::InvalidInput(format!("weight ({i}, {j}) has no edge")));
                }
            }
        }
        Ok(())
    }

    /// Nodes with positive weight in row `i`, including `i` itself.
    pub fn in_neighbors(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.size())
            .map(|i| {
                (0..self.size())
                    .filter_map(|j| {
                        let w = self.0[(i, j)];
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect()
    }
}

/// Metropolis rule: `w_ij = 1/(1 + max(deg_i, deg_j))` on edges, the
/// remainder of each row on the diagonal.
pub fn metropolis_weights(g: &Graph) -> Result<WeightMatrix> {
    if !graph_metrics(g).connected {
        return Err(Error::Disconnected);
    }
    let n = g.node_count();
    let deg = g.degrees();
    let mut w = Matrix::zeros(n, n);
    for (i, j) in g.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = w.row(i).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::new(w)
}

/// `𝓛ᴸ` by repeated multiplication; `L = 0` is the identity.
pub fn weight_power(w: &WeightMatrix, l: usize) -> Matrix {
    let n = w.size();
    let mut out = Matrix::identity(n, n);
    for _ in 0..l {
        out = w.matrix() * out;
    }
    out
}

/// Second largest eigenvalue modulus: the largest `|λ|` after removing the
/// single eigenvalue at 1.
pub fn slem(w: &WeightMatrix) -> Result<f64> {
    let m = w.matrix();
    let symmetric = numerics::frobenius(&(m - m.transpose())) <= 1e-14;
    let eig: Vec<(f64, f64)> = if symmetric {
        numerics::symmetric_eigenvalues(m)?.into_iter().map(|x| (x, 0.0)).collect()
    } else {
        numerics::eigenvalues(m)?
    };
    let is_unit = |&(re, im): &(f64, f64)| (re - 1.0).hypot(im) <= UNIT_EIGEN_TOL;
    match eig.iter().filter(|e| is_unit(e)).count() {
        1 => {}
        0 => return Err(Error::InvalidInput("weight matrix has no eigenvalue at 1".into())),
        _ => return Err(Error::Disconnected),
    }
    let mut removed = false;
    let mut best = 0.0f64;
    for e in &eig {
        if !removed && is_unit(e) {
            removed = true;
            continue;
        }
        best = best.max(e.0.hypot(e.1));
    }
    Ok(best)
}

/// `max_ij |N·l_ij⁽ᴸ⁾ − 1|`.
pub fn consensus_error(w: &WeightMatrix, l: usize) -> f64 {
    let n = w.size() as f64;
    weight_power(w, l)
        .iter()
        .map(|&x| (n * x - 1.0).abs())
        .fold(0.0, f64::max)
}
