//! Spatial hypergraph convolution.
//!
//! Every pixel of a `1 x C x H x W` map becomes a node. Node `i` spawns
//! hyperedge `e_i` holding every node whose feature lies within the
//! threshold of `x_i` (itself included), so there are exactly `N`
//! hyperedges. Features then travel node -> hyperedge (mean over members,
//! after the `theta` projection) and hyperedge -> node (mean over the
//! hyperedges a node belongs to):
//!
//! ```text
//! X'  = D_e^-1 H^T X theta
//! X'' = D_v^-1 H X'
//! ```
//!
//! Membership is defined by one canonical predicate per metric
//! ([`Metric::contains`]), with distances accumulated in ascending
//! dimension order. Both construction strategies evaluate that predicate,
//! so they agree set-for-set; the bucketed strategy only skips pairs that
//! provably fail it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eigencam::principal_direction;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Gridized feature map: one row per pixel, row-major pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    features: Matrix,
    height: usize,
    width: usize,
}

impl NodeSet {
    /// Nodes without spatial layout (treated as an `N x 1` grid).
    pub fn from_matrix(features: Matrix) -> Self {
        let height = features.rows();
        Self {
            features,
            height,
            width: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }
}

/// Row `i`, column `c` = `map[0, c, i / W, i % W]`.
pub fn gridize(map: &Tensor) -> Result<NodeSet> {
    let (n, c, h, w) = map.nchw()?;
    if n != 1 {
        return Err(Error::ShapeMismatch(format!(
            "gridize expects batch size 1, got {n}"
        )));
    }
    let plane = h * w;
    let mut rows = vec![0.0; plane * c];
    for ch in 0..c {
        for (i, &v) in map.data()[ch * plane..(ch + 1) * plane].iter().enumerate() {
            rows[i * c + ch] = v;
        }
    }
    Ok(NodeSet {
        features: Matrix::new(plane, c, rows)?,
        height: h,
        width: w,
    })
}

/// Inverse of [`gridize`] for an `(H*W) x C'` matrix.
pub fn to_map(rows: &Matrix, height: usize, width: usize) -> Result<Tensor> {
    if rows.rows() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "{} rows cannot fill a {height}x{width} map",
            rows.rows()
        )));
    }
    let (plane, c) = (rows.rows(), rows.cols());
    let mut data = vec![0.0; plane * c];
    for i in 0..plane {
        for (ch, &v) in rows.row(i).iter().enumerate() {
            data[ch * plane + i] = v;
        }
    }
    Tensor::new(vec![1, c, height, width], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Manhattan,
    Euclidean,
    Chebyshev,
    #[serde(alias = "gaussian")]
    GaussianKernel,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Manhattan,
        MetricKind::Euclidean,
        MetricKind::Chebyshev,
        MetricKind::GaussianKernel,
    ];

    /// Distance between two feature vectors. The Gaussian kind measures
    /// Euclidean distance.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            MetricKind::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            MetricKind::Euclidean | MetricKind::GaussianKernel => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            MetricKind::Chebyshev => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Manhattan => "manhattan",
            MetricKind::Euclidean => "euclidean",
            MetricKind::Chebyshev => "chebyshev",
            MetricKind::GaussianKernel => "gaussian_kernel",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "manhattan" | "l1" => Ok(MetricKind::Manhattan),
            "euclidean" | "l2" => Ok(MetricKind::Euclidean),
            "chebyshev" | "linf" => Ok(MetricKind::Chebyshev),
            "gaussian" | "gaussian_kernel" => Ok(MetricKind::GaussianKernel),
            other => Err(Error::InvalidParameter(format!("unknown metric '{other}'"))),
        }
    }
}

/// Hyperedge membership rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    /// `||x_j - x_i||_1 < delta`
    Manhattan { delta: f64 },
    /// `||x_j - x_i||_2 < delta`
    Euclidean { delta: f64 },
    /// `||x_j - x_i||_inf < delta`
    Chebyshev { delta: f64 },
    /// `exp(-||x_j - x_i||_2^2 / (2 sigma^2)) > tau`
    Gaussian { tau: f64, sigma: f64 },
}

pub const DEFAULT_PERCENTILE: f64 = 10.0;
pub const DEFAULT_TAU: f64 = 0.5;
pub const MAX_SAMPLED_PAIRS: usize = 2048;

// Exponent-space slack for Gaussian pruning bounds.
const GAUSSIAN_SLACK: f64 = 1e-9;

impl Metric {
    pub fn new(kind: MetricKind, delta_or_tau: f64, sigma: f64) -> Result<Self> {
        let m = match kind {
            MetricKind::Manhattan => Metric::Manhattan { delta: delta_or_tau },
            MetricKind::Euclidean => Metric::Euclidean { delta: delta_or_tau },
            MetricKind::Chebyshev => Metric::Chebyshev { delta: delta_or_tau },
            MetricKind::GaussianKernel => Metric::Gaussian {
                tau: delta_or_tau,
                sigma,
            },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn kind(&self) -> MetricKind {
        match self {
            Metric::Manhattan { .. } => MetricKind::Manhattan,
            Metric::Euclidean { .. } => MetricKind::Euclidean,
            Metric::Chebyshev { .. } => MetricKind::Chebyshev,
            Metric::Gaussian { .. } => MetricKind::GaussianKernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Metric::Manhattan { delta } | Metric::Euclidean { delta } | Metric::Chebyshev { delta } => {
                if !(delta > 0.0 && delta.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "distance threshold must be positive and finite, got {delta}"
                    )));
                }
            }
            Metric::Gaussian { tau, sigma } => {
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "similarity threshold must lie in (0, 1), got {tau}"
                    )));
                }
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "kernel bandwidth must be positive and finite, got {sigma}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distance-space radius: membership implies distance below this.
    /// For the Gaussian kernel it is `sigma * sqrt(-2 ln tau)`, padded by a
    /// tiny slack in the exponent so round-off never excludes a member.
    pub fn radius(&self) -> f64 {
        match *self {
            Metric::Manhattan { delta } | Metric::Euclidean { delta } | Metric::Chebyshev { delta } => delta,
            Metric::Gaussian { tau, sigma } => sigma * (2.0 * (GAUSSIAN_SLACK - tau.ln())).sqrt(),
        }
    }

    /// The canonical membership predicate for `b` in the hyperedge of `a`.
    pub fn contains(&self, a: &[f64], b: &[f64]) -> bool {
        match *self {
            Metric::Manhattan { delta } => {
                let mut acc = 0.0;
                for (x, y) in a.iter().zip(b) {
                    acc += (x - y).abs();
                    // partial sums never decrease
                    if acc >= delta {
                        return false;
                    }
                }
                acc < delta
            }
            Metric::Euclidean { delta } => {
                let cutoff = delta * delta * (1.0 + 1e-9);
                let mut acc = 0.0;
                for (x, y) in a.iter().zip(b) {
                    acc += (x - y) * (x - y);
                    if acc > cutoff {
                        return false;
                    }
                }
                acc.sqrt() < delta
            }
            Metric::Chebyshev { delta } => a.iter().zip(b).all(|(x, y)| (x - y).abs() < delta),
            Metric::Gaussian { tau, sigma } => {
                let two_s2 = 2.0 * sigma * sigma;
                let cutoff = two_s2 * (GAUSSIAN_SLACK - tau.ln()) * (1.0 + 1e-12);
                let mut acc = 0.0;
                for (x, y) in a.iter().zip(b) {
                    acc += (x - y) * (x - y);
                    if acc > cutoff {
                        return false;
                    }
                }
                (-acc / two_s2).exp() > tau
            }
        }
    }

    /// Percentile threshold for distance kinds; median bandwidth and
    /// `tau` for the Gaussian kernel.
    pub fn from_percentile(
        kind: MetricKind,
        nodes: &NodeSet,
        percentile: f64,
        tau: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=100.0).contains(&percentile) {
            return Err(Error::InvalidParameter(format!(
                "percentile must lie in [0, 100], got {percentile}"
            )));
        }
        let mut dists = sample_pair_distances(nodes, kind, MAX_SAMPLED_PAIRS, seed);
        dists.sort_by(f64::total_cmp);
        let positive = |v: f64| if v > 0.0 { v } else { f64::EPSILON };
        match kind {
            MetricKind::GaussianKernel => {
                let sigma = positive(quantile(&dists, 50.0));
                Metric::new(kind, tau, sigma)
            }
            _ => Metric::new(kind, positive(quantile(&dists, percentile)), 0.0),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Metric::Gaussian { tau, sigma } => write!(f, "gaussian_kernel(tau={tau}, sigma={sigma})"),
            m => write!(f, "{}(delta={})", m.kind(), m.radius()),
        }
    }
}

/// Linear-interpolated quantile of sorted values; 0 for an empty slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = q / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

/// Pairwise distances used for threshold heuristics. All `i < j` pairs in
/// order when there are at most `max_pairs`, otherwise `max_pairs` random
/// distinct pairs drawn from `seed`.
pub fn sample_pair_distances(
    nodes: &NodeSet,
    kind: MetricKind,
    max_pairs: usize,
    seed: u64,
) -> Vec<f64> {
    let n = nodes.len();
    if n < 2 {
        return Vec::new();
    }
    let total = n * (n - 1) / 2;
    if total <= max_pairs {
        let mut out = Vec::with_capacity(total);
        for i in 0..n {
            for j in i + 1..n {
                out.push(kind.distance(nodes.row(i), nodes.row(j)));
            }
        }
        return out;
    }
    let mut rng = SeededRng::new(seed);
    (0..max_pairs)
        .map(|_| {
            let i = rng.below(n);
            let mut j = rng.below(n - 1);
            if j >= i {
                j += 1;
            }
            kind.distance(nodes.row(i), nodes.row(j))
        })
        .collect()
}

/// Incidence structure with one hyperedge per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hypergraph {
    n: usize,
    edges: Vec<Vec<usize>>,
    d_e: Vec<usize>,
    d_v: Vec<usize>,
}

#[derive(Deserialize)]
struct HypergraphRepr {
    n: usize,
    edges: Vec<Vec<usize>>,
    d_e: Vec<usize>,
    d_v: Vec<usize>,
}

impl<'de> Deserialize<'de> for Hypergraph {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = HypergraphRepr::deserialize(de)?;
        let g = Hypergraph::from_edges(raw.n, raw.edges).map_err(serde::de::Error::custom)?;
        if g.d_e != raw.d_e || g.d_v != raw.d_v {
            return Err(serde::de::Error::custom(
                "stored degrees disagree with the edge lists",
            ));
        }
        Ok(g)
    }
}

impl Hypergraph {
    /// Members are sorted and must be distinct node indices below `n`.
    pub fn from_edges(n: usize, mut edges: Vec<Vec<usize>>) -> Result<Self> {
        if edges.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: edges.len(),
            });
        }
        let mut d_v = vec![0; n];
        for (i, e) in edges.iter_mut().enumerate() {
            e.sort_unstable();
            if e.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "hyperedge {i} lists a node twice"
                )));
            }
            for &j in e.iter() {
                if j >= n {
                    return Err(Error::OutOfRange(format!(
                        "hyperedge {i} references node {j} of {n}"
                    )));
                }
                d_v[j] += 1;
            }
        }
        let d_e = edges.iter().map(Vec::len).collect();
        Ok(Self { n, edges, d_e, d_v })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn edge_degrees(&self) -> &[usize] {
        &self.d_e
    }

    pub fn node_degrees(&self) -> &[usize] {
        &self.d_v
    }

    /// Number of (node, hyperedge) incidences.
    pub fn incidences(&self) -> usize {
        self.d_e.iter().sum()
    }

    /// For every node, the ascending indices of the hyperedges holding it.
    pub fn node_memberships(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.d_v.iter().map(|&d| Vec::with_capacity(d)).collect();
        for (i, e) in self.edges.iter().enumerate() {
            for &j in e {
                out[j].push(i);
            }
        }
        out
    }

    /// Dense `|V| x |E|` incidence matrix.
    pub fn incidence_matrix(&self) -> Matrix {
        let mut h = Matrix::zeros(self.n, self.n);
        for (i, e) in self.edges.iter().enumerate() {
            for &j in e {
                h.set(j, i, 1.0);
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuildStrategy {
    /// Every ordered pair tested.
    Dense,
    /// Nodes sorted along a projection key; only pairs whose keys are close
    /// enough to possibly satisfy the metric are tested.
    Bucketed,
}

impl fmt::Display for BuildStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BuildStrategy::Dense => "dense",
            BuildStrategy::Bucketed => "bucketed",
        })
    }
}

pub fn build_hypergraph(nodes: &NodeSet, metric: &Metric) -> Result<Hypergraph> {
    build_hypergraph_with(nodes, metric, BuildStrategy::Bucketed)
}

pub fn build_hypergraph_with(
    nodes: &NodeSet,
    metric: &Metric,
    strategy: BuildStrategy,
) -> Result<Hypergraph> {
    metric.validate()?;
    if nodes.is_empty() {
        return Err(Error::InvalidParameter("hypergraph needs at least one node".into()));
    }
    let edges = match strategy {
        BuildStrategy::Dense => dense_edges(nodes, metric),
        BuildStrategy::Bucketed => bucketed_edges(nodes, metric),
    };
    Hypergraph::from_edges(nodes.len(), edges)
}

#[cfg(feature = "parallel")]
fn per_node<F>(n: usize, f: F) -> Vec<Vec<usize>>
where
    F: Fn(usize) -> Vec<usize> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn per_node<F>(n: usize, f: F) -> Vec<Vec<usize>>
where
    F: Fn(usize) -> Vec<usize>,
{
    (0..n).map(f).collect()
}

fn dense_edges(nodes: &NodeSet, metric: &Metric) -> Vec<Vec<usize>> {
    per_node(nodes.len(), |i| {
        let xi = nodes.row(i);
        (0..nodes.len())
            .filter(|&j| metric.contains(xi, nodes.row(j)))
            .collect()
    })
}

/// Norm of a projection direction dual to the metric's norm, so that
/// `|u . (x - y)| <= dual * dist(x, y)`.
fn dual_norm(kind: MetricKind, u: &[f64]) -> f64 {
    match kind {
        MetricKind::Manhattan => u.iter().map(|v| v.abs()).fold(0.0, f64::max),
        MetricKind::Euclidean | MetricKind::GaussianKernel => {
            u.iter().map(|v| v * v).sum::<f64>().sqrt()
        }
        MetricKind::Chebyshev => u.iter().map(|v| v.abs()).sum(),
    }
}

/// Principal direction of the centered features, or the first axis when
/// the features do not vary.
fn projection_direction(nodes: &NodeSet) -> Vec<f64> {
    let (n, c) = (nodes.len(), nodes.dim());
    let mut mean = vec![0.0; c];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(nodes.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = Vec::with_capacity(n * c);
    for i in 0..n {
        centered.extend(nodes.row(i).iter().zip(&mean).map(|(v, m)| v - m));
    }
    let centered = Matrix::new(n, c, centered).expect("consistent shape");
    principal_direction(&centered).unwrap_or_else(|_| {
        let mut e = vec![0.0; c];
        e[0] = 1.0;
        e
    })
}

fn bucketed_edges(nodes: &NodeSet, metric: &Metric) -> Vec<Vec<usize>> {
    let n = nodes.len();
    if n == 1 || nodes.dim() == 0 {
        return dense_edges(nodes, metric);
    }
    let u = projection_direction(nodes);
    let keys: Vec<f64> = (0..n)
        .map(|i| nodes.row(i).iter().zip(&u).map(|(x, w)| x * w).sum())
        .collect();
    // Round-off bound on the key computation.
    let scale = (0..n)
        .map(|i| nodes.row(i).iter().zip(&u).map(|(x, w)| (x * w).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let reach = dual_norm(metric.kind(), &u) * metric.radius();
    let window = reach * (1.0 + 1e-9) + 1e-9 * scale + f64::MIN_POSITIVE;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    let sorted_keys: Vec<f64> = order.iter().map(|&i| keys[i]).collect();

    per_node(n, |i| {
        let xi = nodes.row(i);
        let lo = keys[i] - window;
        let hi = keys[i] + window;
        let start = sorted_keys.partition_point(|&k| k < lo);
        let mut members: Vec<usize> = order[start..]
            .iter()
            .zip(&sorted_keys[start..])
            .take_while(|(_, &k)| k <= hi)
            .map(|(&j, _)| j)
            .filter(|&j| metric.contains(xi, nodes.row(j)))
            .collect();
        members.sort_unstable();
        members
    })
}

/// Both stages of one propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    /// `X' = D_e^-1 H^T X theta`, one row per hyperedge.
    pub edges: Matrix,
    /// `X'' = D_v^-1 H X'`, one row per node.
    pub nodes: Matrix,
}

pub fn propagate(x: &Matrix, graph: &Hypergraph, theta: &Matrix) -> Result<Matrix> {
    Ok(propagate_traced(x, graph, theta)?.nodes)
}

pub fn propagate_traced(x: &Matrix, graph: &Hypergraph, theta: &Matrix) -> Result<Propagation> {
    if x.rows() != graph.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for a {}-node hypergraph",
            x.rows(),
            graph.node_count()
        )));
    }
    if let Some(i) = graph.d_e.iter().position(|&d| d == 0) {
        return Err(Error::DegenerateGraph(format!("hyperedge {i} is empty")));
    }
    if let Some(j) = graph.d_v.iter().position(|&d| d == 0) {
        return Err(Error::DegenerateGraph(format!(
            "node {j} belongs to no hyperedge"
        )));
    }
    let projected = x.matmul(theta)?;
    let cols = projected.cols();

    let mut edges = Matrix::zeros(graph.n, cols);
    for (i, members) in graph.edges.iter().enumerate() {
        let mut acc = vec![0.0; cols];
        for &j in members {
            for (a, v) in acc.iter_mut().zip(projected.row(j)) {
                *a += v;
            }
        }
        let d = members.len() as f64;
        for (k, a) in acc.into_iter().enumerate() {
            edges.set(i, k, a / d);
        }
    }

    let mut nodes = Matrix::zeros(graph.n, cols);
    for (j, incident) in graph.node_memberships().into_iter().enumerate() {
        let mut acc = vec![0.0; cols];
        for i in &incident {
            for (a, v) in acc.iter_mut().zip(edges.row(*i)) {
                *a += v;
            }
        }
        let d = incident.len() as f64;
        for (k, a) in acc.into_iter().enumerate() {
            nodes.set(j, k, a / d);
        }
    }
    Ok(Propagation { edges, nodes })
}

/// gridize -> build (bucketed) -> propagate -> back to map layout.
pub fn hyperconv_layer(map: &Tensor, metric: &Metric, theta: &Matrix) -> Result<Tensor> {
    let nodes = gridize(map)?;
    let graph = build_hypergraph(&nodes, metric)?;
    let out = propagate(nodes.features(), &graph, theta)?;
    to_map(&out, nodes.height(), nodes.width())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_nodes(values: &[f64]) -> NodeSet {
        NodeSet::from_matrix(Matrix::new(values.len(), 1, values.to_vec()).unwrap())
    }

    fn random_nodes(n: usize, c: usize, seed: u64) -> NodeSet {
        NodeSet::from_matrix(Matrix::new(n, c, SeededRng::new(seed).fill_uniform(n * c, 0.0, 1.0)).unwrap())
    }

    /// All-pairs construction written straight from the threshold rule.
    fn brute_force(nodes: &NodeSet, metric: &Metric) -> Vec<Vec<usize>> {
        let n = nodes.len();
        let mut edges = vec![Vec::new(); n];
        for (i, e) in edges.iter_mut().enumerate() {
            for j in 0..n {
                let (a, b) = (nodes.row(i), nodes.row(j));
                let inside = match *metric {
                    Metric::Manhattan { delta } => {
                        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() < delta
                    }
                    Metric::Euclidean { delta } => {
                        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() < delta
                    }
                    Metric::Chebyshev { delta } => {
                        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) < delta
                    }
                    Metric::Gaussian { tau, sigma } => {
                        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
                        (-d2 / (2.0 * sigma * sigma)).exp() > tau
                    }
                };
                if inside {
                    e.push(j);
                }
            }
        }
        edges
    }

    #[test]
    fn gridize_examples() {
        let map = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let nodes = gridize(&map).unwrap();
        assert_eq!(nodes.len(), 4);
        assert_eq!(nodes.features().data(), &[1.0, 2.0, 3.0, 4.0]);

        let map = Tensor::new(vec![1, 2, 1, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let nodes = gridize(&map).unwrap();
        assert_eq!(nodes.row(0), &[5.0, 7.0]);
        assert_eq!(nodes.row(1), &[6.0, 8.0]);
        assert_eq!(to_map(nodes.features(), 1, 2).unwrap(), map);

        let batch = Tensor::zeros(&[2, 1, 2, 2]).unwrap();
        assert!(gridize(&batch).is_err());
    }

    #[test]
    fn four_node_example() {
        let nodes = scalar_nodes(&[0.0, 1.0, 2.0, 3.0]);
        let metric = Metric::Manhattan { delta: 1.5 };
        for strategy in [BuildStrategy::Dense, BuildStrategy::Bucketed] {
            let g = build_hypergraph_with(&nodes, &metric, strategy).unwrap();
            assert_eq!(
                g.edges(),
                &[vec![0, 1], vec![0, 1, 2], vec![1, 2, 3], vec![2, 3]]
            );
            assert_eq!(g.edge_degrees(), &[2, 3, 3, 2]);
            assert_eq!(g.node_degrees(), &[2, 3, 3, 2]);
        }
        let g = build_hypergraph(&nodes, &metric).unwrap();
        let p = propagate_traced(nodes.features(), &g, &Matrix::identity(1)).unwrap();
        assert_eq!(p.edges.data(), &[0.5, 1.0, 2.0, 2.5]);
        let want = [0.75, 7.0 / 6.0, 11.0 / 6.0, 2.25];
        for (got, want) in p.nodes.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_threshold_gives_identity() {
        let nodes = scalar_nodes(&[3.0, 1.0, 4.0, 5.0, 9.0]);
        let g = build_hypergraph(&nodes, &Metric::Manhattan { delta: 1e-9 }).unwrap();
        for (i, e) in g.edges().iter().enumerate() {
            assert_eq!(e, &vec![i]);
        }
        let x = nodes.features().clone();
        assert_eq!(propagate(&x, &g, &Matrix::identity(1)).unwrap(), x);
    }

    #[test]
    fn huge_threshold_gives_complete_graph() {
        let nodes = random_nodes(12, 3, 4);
        let g = build_hypergraph(&nodes, &Metric::Euclidean { delta: 100.0 }).unwrap();
        assert!(g.edge_degrees().iter().all(|&d| d == 12));
        assert!(g.node_degrees().iter().all(|&d| d == 12));
        let x = nodes.features();
        let out = propagate(x, &g, &Matrix::identity(3)).unwrap();
        for c in 0..3 {
            let mean = (0..12).map(|i| x.get(i, c)).sum::<f64>() / 12.0;
            for i in 0..12 {
                assert!((out.get(i, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_metrics_rejected() {
        assert!(Metric::new(MetricKind::Manhattan, 0.0, 0.0).is_err());
        assert!(Metric::new(MetricKind::Chebyshev, f64::NAN, 0.0).is_err());
        assert!(Metric::new(MetricKind::GaussianKernel, 1.0, 1.0).is_err());
        assert!(Metric::new(MetricKind::GaussianKernel, 0.5, 0.0).is_err());
        assert!("cosine".parse::<MetricKind>().is_err());
        assert_eq!("gaussian".parse::<MetricKind>().unwrap(), MetricKind::GaussianKernel);
    }

    #[test]
    fn degenerate_graph_reported() {
        let g = Hypergraph::from_edges(2, vec![vec![0, 1], vec![]]).unwrap();
        let x = Matrix::zeros(2, 1);
        assert!(matches!(
            propagate(&x, &g, &Matrix::identity(1)),
            Err(Error::DegenerateGraph(_))
        ));
        let g = Hypergraph::from_edges(2, vec![vec![0], vec![0]]).unwrap();
        assert!(matches!(
            propagate(&x, &g, &Matrix::identity(1)),
            Err(Error::DegenerateGraph(_))
        ));
    }

    #[test]
    fn from_edges_validates() {
        assert!(Hypergraph::from_edges(2, vec![vec![0, 2], vec![1]]).is_err());
        assert!(Hypergraph::from_edges(2, vec![vec![0, 0], vec![1]]).is_err());
        assert!(Hypergraph::from_edges(3, vec![vec![0]]).is_err());
    }

    #[test]
    fn percentile_threshold_is_scale_adaptive() {
        let nodes = random_nodes(40, 4, 1);
        let m = Metric::from_percentile(MetricKind::Manhattan, &nodes, 10.0, DEFAULT_TAU, 0).unwrap();
        let mut d = sample_pair_distances(&nodes, MetricKind::Manhattan, MAX_SAMPLED_PAIRS, 0);
        d.sort_by(f64::total_cmp);
        let below = d.iter().filter(|&&v| v < m.radius()).count() as f64 / d.len() as f64;
        assert!((below - 0.1).abs() < 0.01);

        let constant = scalar_nodes(&[2.0; 5]);
        let m = Metric::from_percentile(MetricKind::Euclidean, &constant, 10.0, DEFAULT_TAU, 0).unwrap();
        let g = build_hypergraph(&constant, &m).unwrap();
        assert!(g.edge_degrees().iter().all(|&k| k == 5));
    }

    #[test]
    fn layer_on_constant_map_is_constant() {
        let map = Tensor::full(&[1, 3, 4, 5], 0.25).unwrap();
        let metric = Metric::Manhattan { delta: 0.5 };
        let out = hyperconv_layer(&map, &metric, &Matrix::identity(3)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn json_layout_and_validation() {
        let g = Hypergraph::from_edges(2, vec![vec![0, 1], vec![1]]).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"n":2,"edges":[[0,1],[1]],"d_e":[2,1],"d_v":[1,2]}"#);
        let back: Hypergraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"n":2,"edges":[[0,1],[1]],"d_e":[2,2],"d_v":[1,2]}"#;
        assert!(serde_json::from_str::<Hypergraph>(bad).is_err());
    }

    fn any_metric() -> impl proptest::strategy::Strategy<Value = MetricKind> {
        prop::sample::select(MetricKind::ALL.to_vec())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn strategies_match_brute_force(seed in any::<u64>(), n in 1usize..80, c in 1usize..10, kind in any_metric(), q in 1.0f64..60.0) {
            let nodes = random_nodes(n, c, seed);
            let metric = Metric::from_percentile(kind, &nodes, q, 0.3 + q / 100.0, seed).unwrap();
            let oracle = brute_force(&nodes, &metric);
            for strategy in [BuildStrategy::Dense, BuildStrategy::Bucketed] {
                let g = build_hypergraph_with(&nodes, &metric, strategy).unwrap();
                prop_assert_eq!(g.edges(), oracle.as_slice());
            }
        }

        #[test]
        fn degree_sums_agree(seed in any::<u64>(), n in 1usize..60, kind in any_metric()) {
            let nodes = random_nodes(n, 3, seed);
            let metric = Metric::from_percentile(kind, &nodes, 20.0, DEFAULT_TAU, seed).unwrap();
            let g = build_hypergraph(&nodes, &metric).unwrap();
            prop_assert_eq!(g.edge_degrees().iter().sum::<usize>(), g.node_degrees().iter().sum::<usize>());
            for (i, e) in g.edges().iter().enumerate() {
                prop_assert!(e.contains(&i));
            }
        }

        #[test]
        fn monotone_in_delta(seed in any::<u64>(), d1 in 0.01f64..2.0, extra in 0.0f64..2.0) {
            let nodes = random_nodes(30, 4, seed);
            let small = build_hypergraph(&nodes, &Metric::Manhattan { delta: d1 }).unwrap();
            let large = build_hypergraph(&nodes, &Metric::Manhattan { delta: d1 + extra }).unwrap();
            for (a, b) in small.edges().iter().zip(large.edges()) {
                prop_assert!(a.iter().all(|v| b.contains(v)));
            }
        }

        #[test]
        fn permutation_equivariance(seed in any::<u64>(), n in 2usize..40) {
            let nodes = random_nodes(n, 3, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            SeededRng::new(seed ^ 0xabc).shuffle(&mut perm);
            // row perm[i] of the permuted set is node i
            let mut rows = vec![0.0; n * 3];
            for i in 0..n {
                rows[perm[i] * 3..perm[i] * 3 + 3].copy_from_slice(nodes.row(i));
            }
            let permuted = NodeSet::from_matrix(Matrix::new(n, 3, rows).unwrap());
            let metric = Metric::Manhattan { delta: 0.8 };
            let g = build_hypergraph(&nodes, &metric).unwrap();
            let gp = build_hypergraph(&permuted, &metric).unwrap();
            let theta = Matrix::new(3, 2, vec![1.0, 0.5, -0.25, 2.0, 0.0, 1.0]).unwrap();
            let x = propagate(nodes.features(), &g, &theta).unwrap();
            let xp = propagate(permuted.features(), &gp, &theta).unwrap();
            for i in 0..n {
                let mut mapped: Vec<usize> = g.edges()[i].iter().map(|&j| perm[j]).collect();
                mapped.sort_unstable();
                prop_assert_eq!(&gp.edges()[perm[i]], &mapped);
                prop_assert_eq!(gp.node_degrees()[perm[i]], g.node_degrees()[i]);
                for k in 0..2 {
                    prop_assert!((xp.get(perm[i], k) - x.get(i, k)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn constant_rows_project_to_c_theta(seed in any::<u64>(), n in 1usize..30) {
            let mut rng = SeededRng::new(seed);
            let row = rng.fill_uniform(3, -1.0, 1.0);
            let features = random_nodes(n, 2, seed);
            let g = build_hypergraph(&features, &Metric::Chebyshev { delta: 0.3 }).unwrap();
            let x = Matrix::new(n, 3, row.iter().cycle().take(n * 3).copied().collect()).unwrap();
            let theta = Matrix::new(3, 2, rng.fill_uniform(6, -1.0, 1.0)).unwrap();
            let want = Matrix::new(1, 3, row).unwrap().matmul(&theta).unwrap();
            let out = propagate(&x, &g, &theta).unwrap();
            for i in 0..n {
                for k in 0..2 {
                    prop_assert!((out.get(i, k) - want.get(0, k)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn metric_orderings(a in proptest::collection::vec(-5.0f64..5.0, 4), b in proptest::collection::vec(-5.0f64..5.0, 4), c in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let l1 = MetricKind::Manhattan.distance(&a, &b);
            let l2 = MetricKind::Euclidean.distance(&a, &b);
            let linf = MetricKind::Chebyshev.distance(&a, &b);
            prop_assert!(linf <= l2 + 1e-12 && l2 <= l1 + 1e-12);
            let via = MetricKind::Manhattan.distance(&a, &c) + MetricKind::Manhattan.distance(&c, &b);
            prop_assert!(l1 <= via + 1e-12);
        }
    }
}
