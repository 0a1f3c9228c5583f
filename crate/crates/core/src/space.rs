//! Candidate ViT genomes, their parameter accounting, and budget-constrained
//! sampling.
//!
//! Two families are supported:
//!
//! - [`Family::FlatVit`]: an isotropic ViT (patch embedding, class token,
//!   learned position embedding, `depth` pre-norm encoder blocks of width
//!   `embed_dim`, final norm and linear classifier).
//! - [`Family::HierarchicalVit`]: a pooling ViT. Blocks are split into
//!   stages; stage `s` has width `embed_dim · 2^s`. Between stages the token
//!   grid is downsampled by a depthwise 3×3 stride-2 convolution that doubles
//!   the channel count, and the class token by a linear layer. The position
//!   embedding is a `embed_dim × G × G` grid added after patch embedding.
//!
//! For hierarchical spaces the `depth` choice list holds per-stage block
//! counts and `num_stages` fixes the number of stages.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Rejection-sampling attempts before a budget is declared infeasible.
pub const MAX_SAMPLE_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FlatVit,
    HierarchicalVit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneChoices {
    pub depth: Vec<usize>,
    pub embed_dim: Vec<usize>,
    pub num_heads: Vec<usize>,
    pub mlp_ratio: Vec<f64>,
    pub patch_size: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpaceSpec {
    pub space_id: String,
    pub family: Family,
    pub image_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Inclusive bounds on the learnable scalar count.
    pub param_range: (u64, u64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_stages: Option<usize>,
    pub choices: GeneChoices,
}

const BUNDLED: &[(&str, &str)] = &[
    ("autoformer_ti", include_str!("../spaces/autoformer_ti.json")),
    ("pit", include_str!("../spaces/pit.json")),
    ("tiny", include_str!("../spaces/tiny.json")),
];

fn invariant(gene: &str, reason: impl Into<String>) -> Error {
    Error::Invariant {
        gene: gene.to_string(),
        reason: reason.into(),
    }
}

impl SearchSpaceSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| {
            Error::parse(None, Some(e.line() as u64), e)
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Names of the spaces shipped with the crate.
    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    /// A bundled space by name (`"autoformer_ti"`, `"pit"`, `"tiny"`); a
    /// trailing `.json` is ignored.
    pub fn bundled(name: &str) -> Option<Self> {
        let name = name.strip_suffix(".json").unwrap_or(name);
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_json(text).expect("bundled space is valid"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.space_id.is_empty() {
            return Err(invariant("space_id", "must be non-empty"));
        }
        let c = &self.choices;
        for (gene, empty) in [
            ("depth", c.depth.is_empty()),
            ("embed_dim", c.embed_dim.is_empty()),
            ("num_heads", c.num_heads.is_empty()),
            ("mlp_ratio", c.mlp_ratio.is_empty()),
            ("patch_size", c.patch_size.is_empty()),
        ] {
            if empty {
                return Err(invariant(gene, "option list is empty"));
            }
        }
        let (lo, hi) = self.param_range;
        if lo >= hi {
            return Err(invariant("param_range", format!("min {lo} must be below max {hi}")));
        }
        for (gene, v) in [
            ("image_size", self.image_size),
            ("in_channels", self.in_channels),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return Err(invariant(gene, "must be positive"));
            }
        }
        if let Some(&d) = c.depth.iter().find(|&&d| d == 0) {
            return Err(invariant("depth", format!("option {d} must be at least 1")));
        }
        for &p in &c.patch_size {
            if p == 0 || !self.image_size.is_multiple_of(p) {
                return Err(invariant(
                    "patch_size",
                    format!("{p} does not divide image size {}", self.image_size),
                ));
            }
        }
        if c.embed_dim.contains(&0) {
            return Err(invariant("embed_dim", "options must be positive"));
        }
        for &h in &c.num_heads {
            if h == 0 {
                return Err(invariant("num_heads", "options must be positive"));
            }
            if let Some(e) = c.embed_dim.iter().find(|&&e| e % h != 0) {
                return Err(invariant(
                    "num_heads",
                    format!("{h} heads do not divide embed dim {e}"),
                ));
            }
        }
        for &r in &c.mlp_ratio {
            if !(r.is_finite() && r > 0.0) {
                return Err(invariant("mlp_ratio", format!("{r} must be positive")));
            }
            if let Some(e) = c.embed_dim.iter().find(|&&e| hidden_dim(e, r) == 0) {
                return Err(invariant("mlp_ratio", format!("{r} gives no hidden units at {e}")));
            }
        }
        match (self.family, self.num_stages) {
            (Family::FlatVit, Some(_)) => {
                Err(invariant("num_stages", "only valid for hierarchical_vit"))
            }
            (Family::HierarchicalVit, None | Some(0)) => {
                Err(invariant("num_stages", "hierarchical_vit needs at least one stage"))
            }
            _ => Ok(()),
        }
    }
}

pub fn load_space(path: impl AsRef<Path>) -> Result<SearchSpaceSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SearchSpaceSpec::from_json(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::parse(Some(path.to_path_buf()), line, message),
        other => other,
    })
}

/// MLP hidden width for an embedding width and ratio.
pub fn hidden_dim(embed_dim: usize, mlp_ratio: f64) -> usize {
    (embed_dim as f64 * mlp_ratio).round() as usize
}

/// One candidate architecture.
///
/// Field order is the canonical JSON key order; [`Genome::hash`] depends on
/// it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genome {
    pub space_id: String,
    pub family: Family,
    pub image_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: Vec<usize>,
    pub mlp_ratio: Vec<f64>,
    /// Blocks per stage; present only for hierarchical genomes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<usize>>,
}

impl Genome {
    pub fn validate(&self) -> Result<()> {
        if self.heads.len() != self.depth || self.mlp_ratio.len() != self.depth {
            return Err(Error::Config(format!(
                "genome depth {} disagrees with {} heads and {} mlp ratios",
                self.depth,
                self.heads.len(),
                self.mlp_ratio.len()
            )));
        }
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "patch size {} does not divide image size {}",
                self.patch_size, self.image_size
            )));
        }
        if self.embed_dim == 0 || self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config("genome widths must be positive".into()));
        }
        for (j, (&h, &r)) in self.heads.iter().zip(&self.mlp_ratio).enumerate() {
            if h == 0 || !self.embed_dim.is_multiple_of(h) {
                return Err(Error::Config(format!(
                    "block {j}: {h} heads do not divide embed dim {}",
                    self.embed_dim
                )));
            }
            if !(r.is_finite() && r > 0.0) || hidden_dim(self.embed_dim, r) == 0 {
                return Err(Error::Config(format!("block {j}: bad mlp ratio {r}")));
            }
        }
        match (self.family, &self.stages) {
            (Family::FlatVit, None) => Ok(()),
            (Family::HierarchicalVit, Some(st)) if !st.is_empty() => {
                if st.iter().sum::<usize>() != self.depth || st.contains(&0) {
                    return Err(Error::Config(format!(
                        "stage depths {st:?} must be positive and sum to depth {}",
                        self.depth
                    )));
                }
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "stage descriptor does not match family {:?}",
                self.family
            ))),
        }
    }

    /// Canonical JSON encoding (fixed key order, no whitespace).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("genome serializes")
    }

    /// Hex SHA-256 of [`Genome::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Side of the patch grid, `image_size / patch_size`.
    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Blocks per stage; a flat genome is a single stage.
    pub fn stage_depths(&self) -> Vec<usize> {
        match &self.stages {
            Some(s) => s.clone(),
            None => vec![self.depth],
        }
    }

    /// Width of each stage.
    pub fn stage_dims(&self) -> Vec<usize> {
        (0..self.stage_depths().len())
            .map(|s| self.embed_dim << s)
            .collect()
    }

    /// Stage index of every block.
    pub fn block_stages(&self) -> Vec<usize> {
        self.stage_depths()
            .iter()
            .enumerate()
            .flat_map(|(s, &d)| std::iter::repeat_n(s, d))
            .collect()
    }

    /// Token grid side at each stage.
    pub fn stage_grids(&self) -> Vec<usize> {
        let mut g = self.grid_size();
        let mut out = Vec::new();
        for _ in self.stage_depths() {
            out.push(g);
            g = pooled_size(g);
        }
        out
    }

    pub fn block_hidden_dim(&self, block: usize) -> usize {
        let width = self.embed_dim << self.block_stages()[block];
        hidden_dim(width, self.mlp_ratio[block])
    }
}

/// Output side of a 3×3, stride-2, padding-1 pooling convolution.
pub fn pooled_size(side: usize) -> usize {
    (side + 2 - 3) / 2 + 1
}

/// Exact count of learnable scalars in the model a genome describes.
pub fn param_count(g: &Genome) -> u64 {
    let c0 = g.embed_dim as u64;
    let grid = g.grid_size() as u64;
    let tokens = grid * grid;
    let patch = g.patch_size as u64;
    let dims = g.stage_dims();
    let stage_of = g.block_stages();

    let mut total = c0 * g.in_channels as u64 * patch * patch + c0; // patch embedding
    total += c0; // class token
    total += match g.family {
        Family::FlatVit => (tokens + 1) * c0,
        Family::HierarchicalVit => tokens * c0,
    };
    for j in 0..g.depth {
        let c = dims[stage_of[j]] as u64;
        let h = g.block_hidden_dim(j) as u64;
        total += 2 * c; // norm1
        total += c * 3 * c + 3 * c; // qkv
        total += c * c + c; // proj
        total += 2 * c; // norm2
        total += c * h + h; // fc1
        total += h * c + c; // fc2
    }
    for pair in dims.windows(2) {
        let (c, next) = (pair[0] as u64, pair[1] as u64);
        total += next * 9 + next; // depthwise pooling conv
        total += c * next + next; // class-token projection
    }
    let last = *dims.last().expect("at least one stage") as u64;
    total += 2 * last; // final norm
    total += last * g.num_classes as u64 + g.num_classes as u64; // head
    total
}

fn draw(spec: &SearchSpaceSpec, rng: &mut Rng) -> Genome {
    let c = &spec.choices;
    let patch_size = *rng.choose(&c.patch_size);
    let embed_dim = *rng.choose(&c.embed_dim);
    let stages = match spec.family {
        Family::FlatVit => None,
        Family::HierarchicalVit => {
            let n = spec.num_stages.unwrap_or(1);
            Some((0..n).map(|_| *rng.choose(&c.depth)).collect::<Vec<_>>())
        }
    };
    let depth = match &stages {
        Some(s) => s.iter().sum(),
        None => *rng.choose(&c.depth),
    };
    let heads = (0..depth).map(|_| *rng.choose(&c.num_heads)).collect();
    let mlp_ratio = (0..depth).map(|_| *rng.choose(&c.mlp_ratio)).collect();
    Genome {
        space_id: spec.space_id.clone(),
        family: spec.family,
        image_size: spec.image_size,
        in_channels: spec.in_channels,
        num_classes: spec.num_classes,
        patch_size,
        depth,
        embed_dim,
        heads,
        mlp_ratio,
        stages,
    }
}

/// Draws genes uniformly, retrying until the parameter count falls inside
/// the space's budget.
pub fn sample_genome(spec: &SearchSpaceSpec, rng: &mut Rng) -> Result<Genome> {
    let (lo, hi) = spec.param_range;
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let g = draw(spec, rng);
        if (lo..=hi).contains(&param_count(&g)) {
            return Ok(g);
        }
    }
    Err(Error::InfeasibleBudget {
        min: lo,
        max: hi,
        attempts: MAX_SAMPLE_ATTEMPTS,
    })
}

/// `n` independent draws; duplicates are kept.
pub fn sample_population(spec: &SearchSpaceSpec, n: usize, rng: &mut Rng) -> Result<Vec<Genome>> {
    if n == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    (0..n).map(|_| sample_genome(spec, rng)).collect()
}
