//! Rank-consistency evaluation of the proxy.
//!
//! Each run samples `n` genomes, scores them as one population, asks an
//! [`Oracle`] for their accuracies and records Kendall's tau-b between TVT
//! scores and accuracies. The report averages tau over all runs.

mod kendall;
mod oracle;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use kendall::kendall_tau;
pub use oracle::{
    export_accuracy_table, import_accuracy_table, AccuracyTable, Oracle, OracleQuery,
    SyntheticKind, SyntheticOracle,
};

use crate::error::{Error, Result};
use crate::proxy::{population_scores, ProxyConfig};
use crate::search::{candidate_seed, collect_raw_metrics, sample_for_seed, MetricSource};
use crate::space::SearchSpaceSpec;
use crate::tensor::child_seed;

pub const DEFAULT_EVAL_N: usize = 100;
pub const DEFAULT_EVAL_RUNS: usize = 3;
pub const TAU_VARIANT: &str = "tau_b";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTau {
    pub run: usize,
    pub tau: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub proxy_name: String,
    pub tau_variant: String,
    pub space_id: String,
    pub dataset_tag: String,
    pub per_run: Vec<RunTau>,
    pub mean_tau: f64,
}

/// One (score, accuracy) point, for scatter plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub run: usize,
    pub genome_hash: String,
    pub tvt: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: RankReport,
    pub scatter: Vec<ScatterPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n: usize,
    pub runs: usize,
    pub proxy: ProxyConfig,
    pub master_seed: u64,
    /// Reuse one genome sample for every run (only weights are re-drawn).
    pub fix_genomes: bool,
    pub workers: Option<usize>,
    pub dataset_tag: String,
}

impl EvalConfig {
    pub fn new(master_seed: u64) -> Self {
        Self {
            n: DEFAULT_EVAL_N,
            runs: DEFAULT_EVAL_RUNS,
            proxy: ProxyConfig::default(),
            master_seed,
            fix_genomes: false,
            workers: None,
            dataset_tag: "unspecified".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        self.proxy.validate()
    }
}

/// Seed of run `run` under `master_seed`.
pub fn run_seed(master_seed: u64, run: usize) -> u64 {
    child_seed(master_seed, run as u64)
}

/// Runs the sampling → scoring → oracle → tau protocol `cfg.runs` times.
pub fn evaluate_proxy(
    space: &SearchSpaceSpec,
    oracle: &Oracle,
    cfg: &EvalConfig,
    source: &dyn MetricSource,
) -> Result<Evaluation> {
    cfg.validate()?;
    oracle.validate()?;
    let fixed = if cfg.fix_genomes {
        Some(sample_for_seed(space, cfg.n, cfg.master_seed)?)
    } else {
        None
    };

    let mut per_run = Vec::with_capacity(cfg.runs);
    let mut scatter = Vec::with_capacity(cfg.runs * cfg.n);
    for run in 0..cfg.runs {
        let seed = run_seed(cfg.master_seed, run);
        let genomes = match &fixed {
            Some(g) => g.clone(),
            None => sample_for_seed(space, cfg.n, seed)?,
        };
        let seeds: Vec<u64> = (0..cfg.n).map(|i| candidate_seed(seed, i)).collect();
        let metrics = collect_raw_metrics(&genomes, &seeds, source, cfg.workers)?;
        let scores = population_scores(&metrics, cfg.proxy.alpha, cfg.proxy.beta)?;
        let queries: Vec<OracleQuery<'_>> = genomes
            .iter()
            .zip(&metrics)
            .zip(&scores.tvt)
            .map(|((g, &m), &tvt)| OracleQuery {
                genome: g,
                hash: g.hash(),
                metrics: m,
                tvt,
            })
            .collect();
        let acc = oracle.accuracies(&queries, seed)?;
        let tau = kendall_tau(&scores.tvt, &acc)?;
        log::info!("run {run}: tau_b = {tau:.4} over {} candidates", cfg.n);
        per_run.push(RunTau {
            run,
            tau,
            n: cfg.n,
            seed,
        });
        scatter.extend(queries.iter().zip(&acc).map(|(q, &a)| ScatterPoint {
            run,
            genome_hash: q.hash.clone(),
            tvt: q.tvt,
            accuracy: a,
        }));
    }
    let mean_tau = per_run.iter().map(|r| r.tau).sum::<f64>() / per_run.len() as f64;
    Ok(Evaluation {
        report: RankReport {
            proxy_name: "tvt".into(),
            tau_variant: TAU_VARIANT.into(),
            space_id: space.space_id.clone(),
            dataset_tag: cfg.dataset_tag.clone(),
            per_run,
            mean_tau,
        },
        scatter,
    })
}

pub fn export_report(r: &RankReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(r).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn import_report(path: impl AsRef<Path>) -> Result<RankReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(Some(path.to_path_buf()), Some(e.line() as u64), e))
}
