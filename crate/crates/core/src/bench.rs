//! Per-query latency of path retrieval against exhaustive scoring.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::em::ScoreTable;
use crate::error::{DrError, Result};
use crate::model::DeepRetrievalModel;
use crate::reranker::SoftmaxModel;
use crate::retrieval::ItemPathMapping;
use crate::rng;
use crate::structure::{StructureConfig, StructureParams, UserContext};

/// Fewest timed queries a report may rest on.
pub const MIN_QUERIES: usize = 1000;
/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "DR_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub queries: usize,
    /// Untimed queries run first by every worker.
    pub warmup: usize,
    pub k: usize,
    /// Defaults to the model's configured beam.
    pub beam: Option<usize>,
    /// Defaults to the available parallelism; always capped by `DR_THREADS`.
    pub threads: Option<usize>,
    pub max_history: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            queries: MIN_QUERIES,
            warmup: 100,
            k: 10,
            beam: None,
            threads: None,
            max_history: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodLatency {
    pub name: String,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub samples: usize,
}

impl MethodLatency {
    fn from_samples(name: &str, mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let rank = |q: f64| ms[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        let median = if n % 2 == 1 {
            ms[n / 2]
        } else {
            0.5 * (ms[n / 2 - 1] + ms[n / 2])
        };
        Self {
            name: name.to_string(),
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            median_ms: median,
            p99_ms: rank(0.99),
            samples: n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub corpus_size: usize,
    pub queries: usize,
    pub k: usize,
    pub beam: usize,
    pub threads: usize,
    pub methods: Vec<MethodLatency>,
    /// Brute-force mean latency over path-retrieval mean latency.
    pub speedup: f64,
    pub mean_candidates: f64,
}

/// Worker count: the request (or available parallelism), capped by `DR_THREADS`.
pub fn worker_count(requested: Option<usize>) -> usize {
    let base =
        requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&c| c > 0);
    cap.map_or(base, |c| base.min(c)).max(1)
}

/// A randomly initialised model over `num_items` items with a uniform
/// random item-path mapping, for latency measurements.
pub fn random_model(
    config: &StructureConfig,
    num_items: usize,
    seed: u64,
) -> Result<DeepRetrievalModel> {
    config.validate()?;
    let mut init = rng::stream(seed, rng::INIT);
    let params = StructureParams::random(config, num_items, &mut init)?;
    let reranker = SoftmaxModel::random(num_items, config.emb_dim, &mut init);
    let mut assign = rng::stream(seed, rng::ASSIGN);
    let mapping = ItemPathMapping::random(num_items, config.k, config.d, config.j, &mut assign)?;
    let scores = ScoreTable::new(num_items, config.score_capacity)?;
    Ok(DeepRetrievalModel {
        config: config.clone(),
        params,
        reranker,
        mapping,
        scores,
    })
}

fn random_queries(num_items: usize, cfg: &BenchConfig) -> Vec<UserContext> {
    let mut r = rng::stream(cfg.seed, rng::BENCH);
    (0..cfg.warmup + cfg.queries)
        .map(|_| {
            let len = r.random_range(1..=cfg.max_history);
            let items = (0..len).map(|_| r.random_range(0..num_items)).collect();
            UserContext::new(items, cfg.max_history)
        })
        .collect()
}

/// Run `f` over the queries on `threads` workers. Each worker warms up on
/// the first `warmup` queries, then times its contiguous share of the rest.
fn timed<F>(
    queries: &[UserContext],
    warmup: usize,
    threads: usize,
    f: F,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&UserContext) -> Result<usize> + Sync,
{
    let (warm, timed) = queries.split_at(warmup);
    let chunk = timed.len().div_ceil(threads);
    let per_worker: Vec<Result<(Vec<f64>, usize)>> = std::thread::scope(|s| {
        let handles: Vec<_> = timed
            .chunks(chunk.max(1))
            .map(|part| {
                let f = &f;
                s.spawn(move || -> Result<(Vec<f64>, usize)> {
                    for q in warm {
                        std::hint::black_box(f(q)?);
                    }
                    let mut ms = Vec::with_capacity(part.len());
                    let mut total = 0;
                    for q in part {
                        let start = Instant::now();
                        let n = std::hint::black_box(f(q)?);
                        ms.push(start.elapsed().as_secs_f64() * 1e3);
                        total += n;
                    }
                    Ok((ms, total))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    let mut all = Vec::with_capacity(timed.len());
    let mut total = 0;
    for part in per_worker {
        let (ms, n) = part?;
        all.extend(ms);
        total += n;
    }
    Ok((all, total))
}

/// Time beam search plus reranking against exhaustive top-k on the same
/// random queries.
pub fn bench(model: &DeepRetrievalModel, cfg: &BenchConfig) -> Result<BenchReport> {
    let v = model.num_items();
    if cfg.k == 0 || cfg.k > v {
        return Err(DrError::input(format!("k = {} must be in 1..={v}", cfg.k)));
    }
    if cfg.queries < MIN_QUERIES {
        return Err(DrError::input(format!(
            "at least {MIN_QUERIES} queries are required"
        )));
    }
    if cfg.max_history == 0 {
        return Err(DrError::input("max_history must be at least 1"));
    }
    let beam = cfg.beam.unwrap_or(model.config.beam);
    if beam == 0 {
        return Err(DrError::input("beam size must be at least 1"));
    }
    let threads = worker_count(cfg.threads);
    let queries = random_queries(v, cfg);
    let retriever = model.retriever();

    let (dr_ms, candidates) = timed(&queries, cfg.warmup, threads, |q| {
        retriever.retrieve(q, cfg.k, beam).map(|r| r.candidates)
    })?;
    let (bf_ms, _) = timed(&queries, cfg.warmup, threads, |q| {
        retriever.brute_force(q, cfg.k).map(|r| r.len())
    })?;

    let dr = MethodLatency::from_samples("deep_retrieval", dr_ms);
    let bf = MethodLatency::from_samples("brute_force", bf_ms);
    let speedup = if dr.mean_ms > 0.0 {
        bf.mean_ms / dr.mean_ms
    } else {
        f64::INFINITY
    };
    Ok(BenchReport {
        corpus_size: v,
        queries: cfg.queries,
        k: cfg.k,
        beam,
        threads,
        mean_candidates: candidates as f64 / cfg.queries as f64,
        methods: vec![dr, bf],
        speedup,
    })
}
