//! Dense vs bucketed hypergraph construction timing.

use std::fmt::Write as _;
use std::time::Instant;

use hgkit_core::hyperconv::{build_hypergraph_with, BuildStrategy, Metric, MetricKind, NodeSet};
use hgkit_core::{Matrix, SeededRng};

pub const WARMUP: usize = 2;
pub const HEADER: &str = "metric,strategy,n,c,mean_ns,p95_ns,edges";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub n: usize,
    pub c: usize,
    pub metrics: Vec<MetricKind>,
    pub reps: usize,
    pub seed: u64,
    pub percentile: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub metric: MetricKind,
    pub strategy: BuildStrategy,
    pub n: usize,
    pub c: usize,
    pub mean_ns: f64,
    pub p95_ns: u128,
    /// Total hyperedge memberships.
    pub edges: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("bench needs n >= 2 and reps >= 3 (got n={n}, reps={reps})")]
    Params { n: usize, reps: usize },
    #[error("{metric}: dense and bucketed construction disagree on node {node}")]
    Disagreement { metric: MetricKind, node: usize },
    #[error(transparent)]
    Core(#[from] hgkit_core::Error),
}

/// Uniform `[0, 1)` features, the same for every metric.
pub fn random_nodes(n: usize, c: usize, seed: u64) -> NodeSet {
    let data = SeededRng::new(seed).fill_uniform(n * c, 0.0, 1.0);
    NodeSet::from_matrix(Matrix::new(n, c, data).expect("n * c values"))
}

/// Nearest-rank p95 of the sorted samples.
fn p95(sorted: &[u128]) -> u128 {
    let rank = (0.95 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn run(spec: &BenchSpec) -> Result<Vec<BenchRow>, BenchError> {
    if spec.n < 2 || spec.reps < 3 {
        return Err(BenchError::Params {
            n: spec.n,
            reps: spec.reps,
        });
    }
    let nodes = random_nodes(spec.n, spec.c, spec.seed);
    let mut rows = Vec::new();
    for &kind in &spec.metrics {
        let metric = Metric::from_percentile(kind, &nodes, spec.percentile, spec.tau, spec.seed)?;

        // Correctness before timing.
        let dense = build_hypergraph_with(&nodes, &metric, BuildStrategy::Dense)?;
        let bucketed = build_hypergraph_with(&nodes, &metric, BuildStrategy::Bucketed)?;
        if let Some(node) = (0..spec.n).find(|&i| dense.edges()[i] != bucketed.edges()[i]) {
            return Err(BenchError::Disagreement { metric: kind, node });
        }

        for strategy in [BuildStrategy::Dense, BuildStrategy::Bucketed] {
            let mut samples = Vec::with_capacity(spec.reps);
            for rep in 0..WARMUP + spec.reps {
                let start = Instant::now();
                let g = build_hypergraph_with(&nodes, &metric, strategy)?;
                let elapsed = start.elapsed().as_nanos();
                std::hint::black_box(&g);
                if rep >= WARMUP {
                    samples.push(elapsed);
                }
            }
            samples.sort_unstable();
            rows.push(BenchRow {
                metric: kind,
                strategy,
                n: spec.n,
                c: spec.c,
                mean_ns: samples.iter().sum::<u128>() as f64 / samples.len() as f64,
                p95_ns: p95(&samples),
                edges: dense.incidences(),
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.0},{},{}",
            r.metric, r.strategy, r.n, r.c, r.mean_ns, r.p95_ns, r.edges
        );
    }
    out
}
