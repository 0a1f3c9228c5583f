use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proxy::RawMetrics;
use crate::space::{param_count, Genome};
use crate::tensor::{child_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `50 + 10 · tvt`.
    Monotone,
    /// `50 − 10 · tvt`.
    Antitone,
    /// `10 · ln(parameter count)`; ignores the proxy entirely.
    LogParams,
}

/// Deterministic stand-in for trained accuracies.
///
/// After computing the clean values, each position is swapped with a
/// uniformly chosen position with probability `noise`, which perturbs the
/// ranking by a controllable amount.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticOracle {
    pub kind: SyntheticKind,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Accuracies keyed by genome hash.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccuracyTable {
    entries: BTreeMap<String, f64>,
}

impl AccuracyTable {
    /// Adds an entry; duplicate hashes and values outside `[0, 100]` are
    /// rejected.
    pub fn insert(&mut self, hash: impl Into<String>, accuracy: f64) -> Result<()> {
        self.try_insert(hash.into(), accuracy).map_err(Error::Config)
    }

    fn try_insert(&mut self, hash: String, accuracy: f64) -> std::result::Result<(), String> {
        if !(0.0..=100.0).contains(&accuracy) {
            return Err(format!("accuracy {accuracy} for {hash} is outside [0, 100]"));
        }
        if self.entries.contains_key(&hash) {
            return Err(format!("duplicate genome hash {hash}"));
        }
        self.entries.insert(hash, accuracy);
        Ok(())
    }

    pub fn get(&self, hash: &str) -> Result<f64> {
        self.entries
            .get(hash)
            .copied()
            .ok_or_else(|| Error::OracleMiss(hash.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

const HEADER: [&str; 2] = ["genome_hash", "accuracy"];

/// Reads a `genome_hash,accuracy` CSV table (header required).
pub fn import_accuracy_table(path: impl AsRef<Path>) -> Result<AccuracyTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let perr = |line: Option<u64>, msg: String| Error::parse(Some(path.to_path_buf()), line, msg);

    let headers = rdr.headers().map_err(|e| perr(Some(1), e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(perr(
            Some(1),
            format!(
                "expected header `genome_hash,accuracy`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut table = AccuracyTable::default();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            perr(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line());
        if record.len() != 2 {
            return Err(perr(line, format!("expected 2 fields, got {}", record.len())));
        }
        let acc: f64 = record[1]
            .parse()
            .map_err(|_| perr(line, format!("bad accuracy `{}`", &record[1])))?;
        table
            .try_insert(record[0].to_string(), acc)
            .map_err(|msg| perr(line, msg))?;
    }
    Ok(table)
}

pub fn export_accuracy_table(table: &AccuracyTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(HEADER).map_err(io)?;
    for (hash, acc) in table.iter() {
        w.write_record([hash, &acc.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Oracle {
    Table(AccuracyTable),
    Synthetic(SyntheticOracle),
}

/// What the oracle may look at for one candidate.
#[derive(Clone, Debug)]
pub struct OracleQuery<'a> {
    pub genome: &'a Genome,
    pub hash: String,
    pub metrics: RawMetrics,
    pub tvt: f64,
}

impl Oracle {
    pub fn name(&self) -> String {
        match self {
            Oracle::Table(t) => format!("table({} entries)", t.len()),
            Oracle::Synthetic(s) => format!("synthetic({:?}, noise={})", s.kind, s.noise),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Oracle::Synthetic(s) if !(0.0..=1.0).contains(&s.noise) => Err(Error::Config(
                format!("oracle noise {} must lie in [0, 1]", s.noise),
            )),
            _ => Ok(()),
        }
    }

    /// Accuracies for one run's population, in query order.
    pub fn accuracies(&self, queries: &[OracleQuery<'_>], run_seed: u64) -> Result<Vec<f64>> {
        match self {
            Oracle::Table(t) => queries.iter().map(|q| t.get(&q.hash)).collect(),
            Oracle::Synthetic(s) => {
                self.validate()?;
                let mut acc: Vec<f64> = queries
                    .iter()
                    .map(|q| match s.kind {
                        SyntheticKind::Monotone => 50.0 + 10.0 * q.tvt,
                        SyntheticKind::Antitone => 50.0 - 10.0 * q.tvt,
                        SyntheticKind::LogParams => 10.0 * (param_count(q.genome) as f64).ln(),
                    })
                    .collect();
                if s.noise > 0.0 {
                    let mut rng = Rng::new(child_seed(s.seed, run_seed));
                    let n = acc.len();
                    for i in 0..n {
                        if rng.unit() < s.noise {
                            let j = rng.below(n);
                            acc.swap(i, j);
                        }
                    }
                }
                Ok(acc)
            }
        }
    }
}
