//! The TVT zero-cost proxy.
//!
//! A candidate is scored by two raw metrics:
//!
//! - `m_t`, the teacher-aware metric: the L2 distance between the spatial
//!   attention map of the teacher's features (resized to the student's token
//!   grid) and that of the student's token grid, averaged over the batch.
//!   A spatial attention map squares every channel, sums over channels and
//!   normalizes the resulting grid with `phi`.
//! - `m_s`, the student-capability metric: the sum over building blocks of
//!   the L2 norm of that block's weight matrices.
//!
//! Both are min-max normalized across the scored population and combined as
//! `alpha · f(m_s) + beta · f(m_t)` (defaults 2 and −3), so scores are only
//! comparable within one population.

use serde::{Deserialize, Serialize};

use crate::batch::BatchSource;
use crate::error::{Error, Result};
use crate::model::{build_student, student_tokens, teacher_features, StudentModel, TeacherModel};
use crate::space::{param_count, Genome};
use crate::tensor::ops::{self, bilinear_resize, sum_of_squares};
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_BETA: f64 = -3.0;

/// Normalization applied to a channel-collapsed map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    /// Divide by the L2 norm of the flattened map.
    #[default]
    L2,
    /// Divide by the sum of the flattened map.
    L1,
    /// Softmax over the flattened map.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    Teacher,
    Student,
}

/// How weight tensors are grouped before taking norms in `m_s`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One norm per building block (patch embedding, each encoder block,
    /// each pooling layer, classifier head).
    #[default]
    PerBlock,
    /// One norm per weight matrix.
    PerTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub values: Tensor,
    pub source: MapSource,
    pub phi: Phi,
    /// Set when the input was identically zero; `values` is then all zeros.
    pub degenerate: bool,
}

/// Spatial attention map of a `C × H × W` feature tensor.
pub fn attention_map(feat: &Tensor, source: MapSource, phi: Phi) -> Result<AttentionMap> {
    let (_, h, w) = feat.dims3()?;
    let mut energy = vec![0.0f64; h * w];
    for plane in feat.data().chunks_exact(h * w) {
        for (e, &v) in energy.iter_mut().zip(plane) {
            *e += (v as f64) * (v as f64);
        }
    }
    let degenerate = energy.iter().all(|&e| e == 0.0);
    let values: Vec<f32> = if degenerate {
        vec![0.0; h * w]
    } else {
        match phi {
            Phi::L2 => {
                let norm = energy.iter().map(|e| e * e).sum::<f64>().sqrt();
                energy.iter().map(|e| (e / norm) as f32).collect()
            }
            Phi::L1 => {
                let sum: f64 = energy.iter().sum();
                energy.iter().map(|e| (e / sum) as f32).collect()
            }
            Phi::Softmax => {
                let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = energy.iter().map(|e| (e - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                exps.iter().map(|e| (e / sum) as f32).collect()
            }
        }
    };
    Ok(AttentionMap {
        values: Tensor::new(vec![h, w], values)?,
        source,
        phi,
        degenerate,
    })
}

/// Euclidean distance between two equally sized maps.
pub fn map_distance(a: &AttentionMap, b: &AttentionMap) -> Result<f64> {
    if a.values.shape() != b.values.shape() {
        return Err(Error::Dimension {
            op: "map_distance",
            lhs: a.values.shape().to_vec(),
            rhs: b.values.shape().to_vec(),
        });
    }
    let sq: f64 = a
        .values
        .data()
        .iter()
        .zip(b.values.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

/// Batch-mean distance between teacher and student attention maps. Teacher
/// features are bilinearly resized to the student grid before mapping.
pub fn teacher_aware_metric(t_feat: &Tensor, s_feat: &Tensor, phi: Phi) -> Result<f64> {
    if t_feat.rank() != 4 || s_feat.rank() != 4 || t_feat.shape()[0] != s_feat.shape()[0] {
        return Err(Error::Dimension {
            op: "teacher_aware_metric",
            lhs: t_feat.shape().to_vec(),
            rhs: s_feat.shape().to_vec(),
        });
    }
    let (sh, sw) = (s_feat.shape()[2], s_feat.shape()[3]);
    let batch = t_feat.shape()[0];
    let mut total = 0.0;
    for b in 0..batch {
        let t = bilinear_resize(&t_feat.select(b)?, sh, sw)?;
        let tm = attention_map(&t, MapSource::Teacher, phi)?;
        let sm = attention_map(&s_feat.select(b)?, MapSource::Student, phi)?;
        total += map_distance(&tm, &sm)?;
    }
    Ok(total / batch as f64)
}

/// Sum over weight groups of each group's L2 norm.
pub fn student_capability_metric(m: &StudentModel, grouping: Grouping) -> f64 {
    let groups = m.weight_groups();
    match grouping {
        Grouping::PerBlock => groups
            .iter()
            .map(|(_, ts)| ts.iter().map(|t| sum_of_squares(t)).sum::<f64>().sqrt())
            .sum(),
        Grouping::PerTensor => groups
            .iter()
            .flat_map(|(_, ts)| ts.iter().map(|t| ops::l2_norm(t)))
            .sum(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// All inputs were equal; every output is 0.
    pub degenerate: bool,
}

/// `(v − min) / (max − min)` over the list.
pub fn minmax_normalize(values: &[f64]) -> Result<Normalized> {
    if values.is_empty() {
        return Err(Error::Config("cannot normalize an empty population".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("cannot normalize non-finite value {v}")));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        log::warn!(
            "degenerate population: all {} values equal {min}; normalizing to zeros",
            values.len()
        );
        return Ok(Normalized {
            values: vec![0.0; values.len()],
            degenerate: true,
        });
    }
    let range = max - min;
    Ok(Normalized {
        values: values.iter().map(|v| (v - min) / range).collect(),
        degenerate: false,
    })
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub batch: BatchSource,
    /// Student block whose output is compared; `None` means the last block.
    #[serde(default)]
    pub student_block: Option<usize>,
    #[serde(default)]
    pub phi: Phi,
    #[serde(default)]
    pub grouping: Grouping,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            batch: BatchSource::default(),
            student_block: None,
            phi: Phi::default(),
            grouping: Grouping::default(),
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Config("alpha and beta must be finite".into()));
        }
        Ok(())
    }

    fn block_for(&self, depth: usize) -> Result<usize> {
        match self.student_block {
            _ if depth == 0 => Err(Error::Config("genome has no encoder blocks".into())),
            None => Ok(depth - 1),
            Some(b) if b < depth => Ok(b),
            Some(b) => Err(Error::Config(format!(
                "student block {b} out of range for depth {depth}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawMetrics {
    pub m_s: f64,
    pub m_t: f64,
}

/// Normalized metrics and combined scores of one population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationScores {
    pub f_m_s: Vec<f64>,
    pub f_m_t: Vec<f64>,
    pub tvt: Vec<f64>,
    pub degenerate_m_s: bool,
    pub degenerate_m_t: bool,
}

/// Normalizes both metrics over exactly this population and combines them.
pub fn population_scores(metrics: &[RawMetrics], alpha: f64, beta: f64) -> Result<PopulationScores> {
    let ms: Vec<f64> = metrics.iter().map(|m| m.m_s).collect();
    let mt: Vec<f64> = metrics.iter().map(|m| m.m_t).collect();
    let fs = minmax_normalize(&ms)?;
    let ft = minmax_normalize(&mt)?;
    let tvt = fs
        .values
        .iter()
        .zip(&ft.values)
        .map(|(s, t)| alpha * s + beta * t)
        .collect();
    Ok(PopulationScores {
        f_m_s: fs.values,
        f_m_t: ft.values,
        tvt,
        degenerate_m_s: fs.degenerate,
        degenerate_m_t: ft.degenerate,
    })
}

/// `alpha · f(m_s) + beta · f(m_t)` for every candidate.
pub fn tvt_scores(metrics: &[RawMetrics], cfg: &ProxyConfig) -> Result<Vec<f64>> {
    Ok(population_scores(metrics, cfg.alpha, cfg.beta)?.tvt)
}

/// One scored candidate; serialized as a JSON Lines record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub genome: Genome,
    pub m_t: f64,
    pub m_s: f64,
    pub f_m_t: f64,
    pub f_m_s: f64,
    pub tvt: f64,
    pub params: u64,
    pub seed: u64,
}

/// Joins genomes, their raw metrics and init seeds into scored candidates,
/// normalizing over the whole slice.
pub fn score_population(
    genomes: &[Genome],
    metrics: &[RawMetrics],
    seeds: &[u64],
    alpha: f64,
    beta: f64,
) -> Result<Vec<ScoredCandidate>> {
    if genomes.len() != metrics.len() || genomes.len() != seeds.len() {
        return Err(Error::Config(format!(
            "{} genomes, {} metric pairs and {} seeds do not line up",
            genomes.len(),
            metrics.len(),
            seeds.len()
        )));
    }
    let scores = population_scores(metrics, alpha, beta)?;
    Ok(genomes
        .iter()
        .enumerate()
        .map(|(i, g)| ScoredCandidate {
            genome: g.clone(),
            m_t: metrics[i].m_t,
            m_s: metrics[i].m_s,
            f_m_t: scores.f_m_t[i],
            f_m_s: scores.f_m_s[i],
            tvt: scores.tvt[i],
            params: param_count(g),
            seed: seeds[i],
        })
        .collect())
}

/// The scoring minibatch and its teacher features, computed once and shared
/// by every candidate.
#[derive(Clone, Debug)]
pub struct ProxyContext {
    cfg: ProxyConfig,
    batch: Tensor,
    teacher_features: Tensor,
}

impl ProxyContext {
    pub fn new(teacher: &TeacherModel, batch: Tensor, cfg: ProxyConfig) -> Result<Self> {
        cfg.validate()?;
        let teacher_features = teacher_features(teacher, &batch)?;
        Ok(Self {
            cfg,
            batch,
            teacher_features,
        })
    }

    pub fn config(&self) -> &ProxyConfig {
        &self.cfg
    }

    pub fn batch(&self) -> &Tensor {
        &self.batch
    }

    pub fn teacher_features(&self) -> &Tensor {
        &self.teacher_features
    }

    /// Raw metrics of an already built student.
    pub fn score_model(&self, m: &StudentModel) -> Result<RawMetrics> {
        let block = self.cfg.block_for(m.genome().depth)?;
        let s_feat = student_tokens(m, &self.batch, block)?;
        Ok(RawMetrics {
            m_s: student_capability_metric(m, self.cfg.grouping),
            m_t: teacher_aware_metric(&self.teacher_features, &s_feat, self.cfg.phi)?,
        })
    }

    /// Builds the student for `(genome, seed)` and returns its raw metrics.
    pub fn score(&self, genome: &Genome, seed: u64) -> Result<RawMetrics> {
        build_student(genome, seed).and_then(|m| self.score_model(&m))
    }
}

/// Raw `(m_s, m_t)` for one candidate; errors carry the genome hash.
pub fn score_candidate(
    genome: &Genome,
    teacher: &TeacherModel,
    batch: &Tensor,
    cfg: &ProxyConfig,
    seed: u64,
) -> Result<RawMetrics> {
    let wrap = |e: Error| Error::Candidate {
        index: None,
        hash: genome.hash(),
        source: Box::new(e),
    };
    let ctx = ProxyContext::new(teacher, batch.clone(), cfg.clone()).map_err(wrap)?;
    ctx.score(genome, seed).map_err(wrap)
}
