//! Training-free search: sample a population, score every candidate, then
//! normalize over the full population and keep the top-k by TVT score.
//!
//! Min-max normalization makes scores population-relative, so the search is
//! two-pass: raw metrics for all candidates are collected first (in parallel,
//! keyed by candidate index) and combined afterwards.

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::proxy::{score_population, ProxyConfig, ProxyContext, RawMetrics, ScoredCandidate};
use crate::space::{sample_population, Genome, SearchSpaceSpec};
use crate::tensor::{child_seed, Rng};

pub const DEFAULT_POPULATION: usize = 1000;
pub const DEFAULT_TOPK: usize = 10;

/// Child stream of the master seed used to sample genomes.
pub const SAMPLE_STREAM: u64 = 0;
/// Child stream of the master seed from which per-candidate init seeds derive.
pub const INIT_STREAM: u64 = 1;

/// Anything that can produce raw proxy metrics for a candidate.
pub trait MetricSource: Sync {
    fn raw_metrics(&self, index: usize, genome: &Genome, seed: u64) -> Result<RawMetrics>;
}

impl MetricSource for ProxyContext {
    fn raw_metrics(&self, _index: usize, genome: &Genome, seed: u64) -> Result<RawMetrics> {
        self.score(genome, seed)
    }
}

/// Weight-init seed of candidate `index` under `master_seed`.
pub fn candidate_seed(master_seed: u64, index: usize) -> u64 {
    child_seed(child_seed(master_seed, INIT_STREAM), index as u64)
}

/// Genomes of a population drawn from `master_seed`'s sampling stream.
pub fn sample_for_seed(space: &SearchSpaceSpec, n: usize, master_seed: u64) -> Result<Vec<Genome>> {
    let mut rng = Rng::new(child_seed(master_seed, SAMPLE_STREAM));
    sample_population(space, n, &mut rng)
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        b = b.num_threads(w);
    }
    b.build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Raw metrics for every genome, computed on at most `workers` threads. The
/// output order follows the input; on failure the lowest failing index is
/// reported.
pub fn collect_raw_metrics(
    genomes: &[Genome],
    seeds: &[u64],
    source: &dyn MetricSource,
    workers: Option<usize>,
) -> Result<Vec<RawMetrics>> {
    assert_eq!(genomes.len(), seeds.len());
    let results: Vec<Result<RawMetrics>> = pool(workers)?.install(|| {
        genomes
            .par_iter()
            .zip(seeds.par_iter())
            .enumerate()
            .map(|(i, (g, &s))| {
                source.raw_metrics(i, g, s).map_err(|e| Error::Candidate {
                    index: Some(i),
                    hash: g.hash(),
                    source: Box::new(e),
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub space: SearchSpaceSpec,
    pub population_size: usize,
    pub topk: usize,
    pub proxy: ProxyConfig,
    pub master_seed: u64,
    /// Upper bound on scoring threads; `None` uses every core.
    pub workers: Option<usize>,
}

impl SearchConfig {
    pub fn new(space: SearchSpaceSpec, master_seed: u64) -> Self {
        Self {
            space,
            population_size: DEFAULT_POPULATION,
            topk: DEFAULT_TOPK,
            proxy: ProxyConfig::default(),
            master_seed,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.topk == 0 || self.topk > self.population_size {
            return Err(Error::Config(format!(
                "topk must satisfy 1 <= k <= N, got k={} N={}",
                self.topk, self.population_size
            )));
        }
        self.space.validate()?;
        self.proxy.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ScoredCandidate,
    /// Sorted by TVT score, highest first; `topk[0] == best`.
    pub topk: Vec<ScoredCandidate>,
    /// SHA-256 over the genome hashes of the population, in sampling order.
    pub population_digest: String,
    /// Seconds spent; kept out of the serialized result so result files are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: f64,
    /// Every scored candidate in sampling order.
    #[serde(skip)]
    pub population: Vec<ScoredCandidate>,
}

/// Ranking order: higher TVT first, then lower genome hash.
fn rank_order(a: &(ScoredCandidate, String), b: &(ScoredCandidate, String)) -> Ordering {
    b.0.tvt.total_cmp(&a.0.tvt).then_with(|| a.1.cmp(&b.1))
}

/// Merges two lists sorted by (TVT descending, genome hash ascending) and
/// keeps the first `k`.
pub fn topk_merge(a: &[ScoredCandidate], b: &[ScoredCandidate], k: usize) -> Vec<ScoredCandidate> {
    let keyed = |v: &[ScoredCandidate]| -> Vec<(ScoredCandidate, String)> {
        v.iter().map(|c| (c.clone(), c.genome.hash())).collect()
    };
    let (a, b) = (keyed(a), keyed(b));
    let mut out = Vec::with_capacity(k.min(a.len() + b.len()));
    let (mut i, mut j) = (0, 0);
    while out.len() < k && (i < a.len() || j < b.len()) {
        let take_a = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => rank_order(x, y) != Ordering::Greater,
            (Some(_), None) => true,
            _ => false,
        };
        if take_a {
            out.push(a[i].0.clone());
            i += 1;
        } else {
            out.push(b[j].0.clone());
            j += 1;
        }
    }
    out
}

pub fn population_digest(genomes: &[Genome]) -> String {
    let mut h = Sha256::new();
    for g in genomes {
        h.update(g.hash().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Second pass of the search: normalize over the whole population, score,
/// and keep the top `k`.
pub fn rank_population(
    genomes: &[Genome],
    metrics: &[RawMetrics],
    seeds: &[u64],
    proxy: &ProxyConfig,
    k: usize,
) -> Result<SearchResult> {
    if genomes.is_empty() || k == 0 {
        return Err(Error::Config("ranking needs at least one candidate and k >= 1".into()));
    }
    let population = score_population(genomes, metrics, seeds, proxy.alpha, proxy.beta)?;
    let mut topk = Vec::new();
    for c in &population {
        topk = topk_merge(&topk, std::slice::from_ref(c), k);
    }
    Ok(SearchResult {
        best: topk[0].clone(),
        topk,
        population_digest: population_digest(genomes),
        wall_time: 0.0,
        population,
    })
}

/// Samples `N` candidates, scores each with `source`, and returns the
/// argmax and top-k. Any candidate failure aborts the whole search.
pub fn run_search(cfg: &SearchConfig, source: &dyn MetricSource) -> Result<SearchResult> {
    cfg.validate()?;
    let start = Instant::now();
    let genomes = sample_for_seed(&cfg.space, cfg.population_size, cfg.master_seed)?;
    let seeds: Vec<u64> = (0..genomes.len())
        .map(|i| candidate_seed(cfg.master_seed, i))
        .collect();
    let metrics = collect_raw_metrics(&genomes, &seeds, source, cfg.workers)?;
    let mut result = rank_population(&genomes, &metrics, &seeds, &cfg.proxy, cfg.topk)?;
    result.wall_time = start.elapsed().as_secs_f64();
    log::info!(
        "scored {} candidates in {:.2}s; best tvt {:.4}",
        genomes.len(),
        result.wall_time,
        result.best.tvt
    );
    Ok(result)
}
