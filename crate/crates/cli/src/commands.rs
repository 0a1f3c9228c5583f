use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::Utc;
use serde::Serialize;
use tvt_core::eval::{evaluate_proxy, export_report, EvalConfig};
use tvt_core::proxy::{score_population, ProxyContext, ScoredCandidate};
use tvt_core::search::{candidate_seed, collect_raw_metrics, run_search, sample_for_seed, SearchConfig};
use tvt_core::space::{param_count, Genome};
use tvt_core::Error;

use crate::config::Resolved;
use crate::manifest::RunManifest;

pub struct Run<'a> {
    pub cfg: &'a Resolved,
    pub out_dir: &'a Path,
    pub dry_run: bool,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn finish(run: &Run, command: &str, started: chrono::DateTime<Utc>, outputs: Vec<PathBuf>) -> Result<()> {
    let path = RunManifest::path(run.out_dir, command);
    write_json(&path, &RunManifest::new(command, run.cfg, started, outputs))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn dry_run_report(run: &Run, command: &str) -> Result<()> {
    println!("{command}: configuration is valid (dry run, nothing scored)");
    println!("{}", serde_json::to_string_pretty(run.cfg)?);
    Ok(())
}

/// Writes `n` genomes as JSON Lines and prints parameter-count statistics.
pub fn sample(run: &Run, n: usize, out: Option<PathBuf>) -> Result<()> {
    let started = Utc::now();
    let space = run.cfg.space_spec()?;
    if n == 0 {
        return Err(Error::Config("--n must be at least 1".into()).into());
    }
    if run.dry_run {
        return dry_run_report(run, "sample");
    }
    let genomes = sample_for_seed(&space, n, run.cfg.seed)?;
    let out = out.unwrap_or_else(|| run.out_dir.join("population.jsonl"));
    write_jsonl(&out, &genomes)?;

    let mut counts: Vec<u64> = genomes.iter().map(param_count).collect();
    counts.sort_unstable();
    let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
    println!(
        "sampled {n} genomes from `{}` (range {}..={}) -> {}",
        space.space_id,
        space.param_range.0,
        space.param_range.1,
        out.display()
    );
    println!(
        "params: min {} median {} mean {:.0} max {}",
        counts[0],
        counts[counts.len() / 2],
        mean,
        counts[counts.len() - 1]
    );
    finish(run, "sample", started, vec![out])
}

/// Reads a genome JSON Lines file; errors carry the line number.
fn read_genomes(path: &Path) -> Result<Vec<Genome>> {
    let f = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut genomes = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: Some(path.to_path_buf()),
            line: Some(i as u64 + 1),
            message,
        };
        let g: Genome = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        g.validate().map_err(|e| parse_err(e.to_string()))?;
        genomes.push(g);
    }
    if genomes.is_empty() {
        return Err(Error::Config(format!("{} contains no genomes", path.display())).into());
    }
    Ok(genomes)
}

/// Scores every genome of a population file, normalizing over the file.
pub fn score(run: &Run, genomes_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let started = Utc::now();
    let genomes = read_genomes(genomes_path)?;
    let (c, size) = (genomes[0].in_channels, genomes[0].image_size);
    if let Some((i, _)) = genomes
        .iter()
        .enumerate()
        .find(|(_, g)| (g.in_channels, g.image_size) != (c, size))
    {
        return Err(Error::Config(format!(
            "genome {} uses a different input size than genome 1; one file must share one teacher",
            i + 1
        ))
        .into());
    }
    let teacher = run.cfg.teacher(c, size)?;
    let batch = run.cfg.proxy.batch.materialize(c, size)?;
    if run.dry_run {
        return dry_run_report(run, "score");
    }
    let ctx = ProxyContext::new(&teacher, batch, run.cfg.proxy.clone())?;
    let seeds: Vec<u64> = (0..genomes.len()).map(|i| candidate_seed(run.cfg.seed, i)).collect();
    let metrics = collect_raw_metrics(&genomes, &seeds, &ctx, run.cfg.workers)?;
    let scored = score_population(&genomes, &metrics, &seeds, run.cfg.proxy.alpha, run.cfg.proxy.beta)?;
    let out = out.unwrap_or_else(|| run.out_dir.join("scored.jsonl"));
    write_jsonl(&out, &scored)?;
    println!("scored {} genomes -> {}", scored.len(), out.display());
    finish(run, "score", started, vec![out])
}

#[derive(Serialize)]
struct Bin {
    lo: f64,
    hi: f64,
    count: usize,
}

/// Equal-width histogram of scores, for plotting the score distribution.
fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| Bin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count,
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn search(run: &Run) -> Result<()> {
    let started = Utc::now();
    let space = run.cfg.space_spec()?;
    let cfg = SearchConfig {
        population_size: run.cfg.population_size,
        topk: run.cfg.topk,
        proxy: run.cfg.proxy.clone(),
        workers: run.cfg.workers,
        ..SearchConfig::new(space.clone(), run.cfg.seed)
    };
    cfg.validate()?;
    let teacher = run.cfg.teacher(space.in_channels, space.image_size)?;
    let batch = run.cfg.proxy.batch.materialize(space.in_channels, space.image_size)?;
    if run.dry_run {
        return dry_run_report(run, "search");
    }
    let ctx = ProxyContext::new(&teacher, batch, cfg.proxy.clone())?;
    let result = run_search(&cfg, &ctx)?;

    let d = run.out_dir;
    let paths: Vec<PathBuf> = ["best.json", "topk.json", "population.jsonl", "result.json", "tvt_histogram.csv"]
        .iter()
        .map(|f| d.join(f))
        .collect();
    write_json(&paths[0], &result.best)?;
    write_json(&paths[1], &result.topk)?;
    write_jsonl(&paths[2], &result.population)?;
    write_json(&paths[3], &result)?;
    let scores: Vec<f64> = result.population.iter().map(|c| c.tvt).collect();
    write_csv(&paths[4], &histogram(&scores, 20))?;

    let best: &ScoredCandidate = &result.best;
    println!(
        "searched {} candidates of `{}` in {:.2}s",
        result.population.len(),
        space.space_id,
        result.wall_time
    );
    println!(
        "best: genome {} tvt {:.6} (m_s {:.6}, m_t {:.6}) params {}",
        best.genome.hash(),
        best.tvt,
        best.m_s,
        best.m_t,
        best.params
    );
    finish(run, "search", started, paths)
}

pub fn eval_rank(run: &Run) -> Result<()> {
    let started = Utc::now();
    let space = run.cfg.space_spec()?;
    let oracle = run.cfg.oracle()?;
    oracle.validate()?;
    let cfg = EvalConfig {
        n: run.cfg.eval_n,
        runs: run.cfg.eval_runs,
        proxy: run.cfg.proxy.clone(),
        master_seed: run.cfg.seed,
        fix_genomes: run.cfg.fix_genomes,
        workers: run.cfg.workers,
        dataset_tag: run.cfg.dataset_tag.clone(),
    };
    cfg.validate()?;
    let teacher = run.cfg.teacher(space.in_channels, space.image_size)?;
    let batch = run.cfg.proxy.batch.materialize(space.in_channels, space.image_size)?;
    if run.dry_run {
        return dry_run_report(run, "eval-rank");
    }
    let ctx = ProxyContext::new(&teacher, batch, cfg.proxy.clone())?;
    let e = evaluate_proxy(&space, &oracle, &cfg, &ctx)?;

    let report = run.out_dir.join("report.json");
    let scatter = run.out_dir.join("scatter.csv");
    std::fs::create_dir_all(run.out_dir)
        .with_context(|| format!("creating {}", run.out_dir.display()))?;
    export_report(&e.report, &report)?;
    write_csv(&scatter, &e.scatter)?;
    for r in &e.report.per_run {
        println!("run {}: tau_b {:.6} (n={})", r.run, r.tau, r.n);
    }
    println!(
        "mean tau_b over {} runs: {:.6} (oracle {})",
        e.report.per_run.len(),
        e.report.mean_tau,
        oracle.name()
    );
    finish(run, "eval-rank", started, vec![report, scatter])
}
