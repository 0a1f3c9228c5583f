use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::space::{Family, Genome};
use crate::tensor::ops::{self, linear};
use crate::tensor::{trunc_normal_init, Rng, Tensor};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f32 = 0.02;
pub const LN_EPS: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

/// Every learnable tensor of the student in construction order, with its
/// initializer. Linear weights are stored `in × out`.
pub(crate) fn student_layout(g: &Genome) -> Vec<(String, Vec<usize>, Init)> {
    use Init::*;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init| out.push((name, shape, init));

    let c0 = g.embed_dim;
    let p = g.patch_size;
    let grid = g.grid_size();
    push("patch_embed.weight".into(), vec![c0, g.in_channels, p, p], TruncNormal);
    push("patch_embed.bias".into(), vec![c0], Zeros);
    push("cls_token".into(), vec![1, c0], TruncNormal);
    match g.family {
        Family::FlatVit => push("pos_embed".into(), vec![grid * grid + 1, c0], TruncNormal),
        Family::HierarchicalVit => push("pos_embed".into(), vec![c0, grid, grid], TruncNormal),
    }

    let dims = g.stage_dims();
    let stage_of = g.block_stages();
    for j in 0..g.depth {
        let c = dims[stage_of[j]];
        let h = g.block_hidden_dim(j);
        let b = format!("blocks.{j}");
        push(format!("{b}.norm1.weight"), vec![c], Ones);
        push(format!("{b}.norm1.bias"), vec![c], Zeros);
        push(format!("{b}.attn.qkv.weight"), vec![c, 3 * c], TruncNormal);
        push(format!("{b}.attn.qkv.bias"), vec![3 * c], Zeros);
        push(format!("{b}.attn.proj.weight"), vec![c, c], TruncNormal);
        push(format!("{b}.attn.proj.bias"), vec![c], Zeros);
        push(format!("{b}.norm2.weight"), vec![c], Ones);
        push(format!("{b}.norm2.bias"), vec![c], Zeros);
        push(format!("{b}.mlp.fc1.weight"), vec![c, h], TruncNormal);
        push(format!("{b}.mlp.fc1.bias"), vec![h], Zeros);
        push(format!("{b}.mlp.fc2.weight"), vec![h, c], TruncNormal);
        push(format!("{b}.mlp.fc2.bias"), vec![c], Zeros);
    }
    for (s, pair) in dims.windows(2).enumerate() {
        let (c, next) = (pair[0], pair[1]);
        push(format!("pools.{s}.conv.weight"), vec![next, 1, 3, 3], TruncNormal);
        push(format!("pools.{s}.conv.bias"), vec![next], Zeros);
        push(format!("pools.{s}.cls.weight"), vec![c, next], TruncNormal);
        push(format!("pools.{s}.cls.bias"), vec![next], Zeros);
    }
    let last = *dims.last().expect("at least one stage");
    push("norm.weight".into(), vec![last], Ones);
    push("norm.bias".into(), vec![last], Zeros);
    push("head.weight".into(), vec![last, g.num_classes], TruncNormal);
    push("head.bias".into(), vec![g.num_classes], Zeros);
    out
}

/// Weight matrices (no biases, norm affines, or embeddings) grouped by
/// building block: patch embedding, each encoder block, each pooling layer,
/// and the classifier head.
pub(crate) fn weight_groups(g: &Genome) -> Vec<(String, Vec<String>)> {
    let mut groups = vec![("patch_embed".to_string(), vec!["patch_embed.weight".to_string()])];
    for j in 0..g.depth {
        let b = format!("blocks.{j}");
        groups.push((
            b.clone(),
            ["attn.qkv", "attn.proj", "mlp.fc1", "mlp.fc2"]
                .iter()
                .map(|l| format!("{b}.{l}.weight"))
                .collect(),
        ));
    }
    for s in 0..g.stage_dims().len().saturating_sub(1) {
        groups.push((
            format!("pools.{s}"),
            vec![format!("pools.{s}.conv.weight"), format!("pools.{s}.cls.weight")],
        ));
    }
    groups.push(("head".to_string(), vec!["head.weight".to_string()]));
    groups
}

/// A forward-executable student ViT built from a [`Genome`].
#[derive(Clone, Debug)]
pub struct StudentModel {
    genome: Genome,
    weights: BTreeMap<String, Tensor>,
    init_seed: u64,
}

impl StudentModel {
    /// Materializes all weights: truncated normal (std 0.02) for weight
    /// matrices and embeddings, zeros for biases, ones for norm scales.
    pub fn build(genome: &Genome, seed: u64) -> Result<Self> {
        genome.validate()?;
        let mut rng = Rng::new(seed);
        let weights = student_layout(genome)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::TruncNormal => trunc_normal_init(&mut rng, &shape, INIT_STD),
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::ones(&shape),
                };
                (name, t)
            })
            .collect();
        Ok(Self {
            genome: genome.clone(),
            weights,
            init_seed: seed,
        })
    }

    /// Wraps explicit weights, checking names and shapes against the genome.
    pub fn from_weights(genome: &Genome, weights: BTreeMap<String, Tensor>, seed: u64) -> Result<Self> {
        genome.validate()?;
        let layout = student_layout(genome);
        if layout.len() != weights.len() {
            return Err(Error::Config(format!(
                "expected {} student tensors, got {}",
                layout.len(),
                weights.len()
            )));
        }
        for (name, shape, _) in &layout {
            let t = weights
                .get(name)
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension {
                    op: "student weight",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            genome: genome.clone(),
            weights,
            init_seed: seed,
        })
    }

    pub fn genome(&self) -> &Genome {
        &self.genome
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor> {
        &self.weights
    }

    pub fn into_weights(self) -> BTreeMap<String, Tensor> {
        self.weights
    }

    /// Total number of scalars across all weight tensors.
    pub fn num_scalars(&self) -> u64 {
        self.weights.values().map(|t| t.numel() as u64).sum()
    }

    /// Applies `f` to every weight tensor, keeping shapes.
    pub fn map_weights(&self, f: impl Fn(&str, &Tensor) -> Tensor) -> Result<Self> {
        let weights = self
            .weights
            .iter()
            .map(|(n, t)| (n.clone(), f(n, t)))
            .collect();
        Self::from_weights(&self.genome, weights, self.init_seed)
    }

    /// Weight matrices grouped per building block, in model order.
    pub fn weight_groups(&self) -> Vec<(String, Vec<&Tensor>)> {
        weight_groups(&self.genome)
            .into_iter()
            .map(|(g, names)| (g, names.iter().map(|n| self.w(n)).collect()))
            .collect()
    }

    fn w(&self, name: &str) -> &Tensor {
        &self.weights[name]
    }

    /// Patch embedding with class token and position embedding; row 0 of the
    /// result is the class token.
    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let g = &self.genome;
        let expected = [g.in_channels, g.image_size, g.image_size];
        if x.shape() != expected {
            return Err(Error::Dimension {
                op: "student input",
                lhs: expected.to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        let p = g.patch_size;
        let feat = ops::conv2d(x, self.w("patch_embed.weight"), p, 0)?;
        let mut feat = ops::add_channel_bias(&feat, self.w("patch_embed.bias"))?;
        if g.family == Family::HierarchicalVit {
            feat = ops::add(&feat, self.w("pos_embed"))?;
        }
        let (c, gh, gw) = feat.dims3()?;
        let grid = feat.reshape(&[c, gh * gw])?.transpose()?;
        let seq = Tensor::concat_rows(&[self.w("cls_token"), &grid])?;
        match g.family {
            Family::FlatVit => ops::add(&seq, self.w("pos_embed")),
            Family::HierarchicalVit => Ok(seq),
        }
    }

    fn block(&self, x: &Tensor, j: usize, probe: &mut Option<&mut Vec<Tensor>>) -> Result<Tensor> {
        let b = format!("blocks.{j}");
        let w = |n: &str| self.w(&format!("{b}.{n}"));
        let (_, c) = x.dims2()?;
        let heads = self.genome.heads[j];
        let d = c / heads;

        let h = ops::layernorm_affine(x, w("norm1.weight"), w("norm1.bias"), LN_EPS)?;
        let qkv = linear(&h, w("attn.qkv.weight"), Some(w("attn.qkv.bias")))?;
        let scale = 1.0 / (d as f32).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let q = qkv.columns(i * d, (i + 1) * d)?;
            let k = qkv.columns(c + i * d, c + (i + 1) * d)?;
            let v = qkv.columns(2 * c + i * d, 2 * c + (i + 1) * d)?;
            let probs = ops::softmax(&ops::matmul_nt(&q, &k)?.scale(scale), 1)?;
            outs.push(ops::matmul(&probs, &v)?);
            if let Some(p) = probe.as_mut() {
                p.push(probs);
            }
        }
        let attn = Tensor::concat_columns(&outs)?;
        let attn = linear(&attn, w("attn.proj.weight"), Some(w("attn.proj.bias")))?;
        let x = ops::add(x, &attn)?;

        let h = ops::layernorm_affine(&x, w("norm2.weight"), w("norm2.bias"), LN_EPS)?;
        let h = ops::gelu(&linear(&h, w("mlp.fc1.weight"), Some(w("mlp.fc1.bias")))?);
        let h = linear(&h, w("mlp.fc2.weight"), Some(w("mlp.fc2.bias")))?;
        ops::add(&x, &h)
    }

    /// Downsamples the token grid between stages `s` and `s + 1`.
    fn pool(&self, x: &Tensor, s: usize) -> Result<Tensor> {
        let (n, c) = x.dims2()?;
        let side = grid_side(n - 1)?;
        let pre = format!("pools.{s}");
        let w = |n: &str| self.w(&format!("{pre}.{n}"));
        let cls = x.rows(0, 1)?;
        let grid = x.rows(1, n)?.transpose()?.reshape(&[c, side, side])?;
        let pooled = ops::conv2d_grouped(&grid, w("conv.weight"), 2, 1, c)?;
        let pooled = ops::add_channel_bias(&pooled, w("conv.bias"))?;
        let (c2, ph, pw) = pooled.dims3()?;
        let tokens = pooled.reshape(&[c2, ph * pw])?.transpose()?;
        let cls = linear(&cls, w("cls.weight"), Some(w("cls.bias")))?;
        Tensor::concat_rows(&[&cls, &tokens])
    }

    /// Runs one image through blocks `0..=block_index` and returns the
    /// sequence (class token first). Attention probabilities of every head
    /// are appended to `probe` when given.
    pub fn forward_to(
        &self,
        x: &Tensor,
        block_index: usize,
        mut probe: Option<&mut Vec<Tensor>>,
    ) -> Result<Tensor> {
        if block_index >= self.genome.depth {
            return Err(Error::Config(format!(
                "block index {block_index} out of range for depth {}",
                self.genome.depth
            )));
        }
        let stage_of = self.genome.block_stages();
        let mut seq = self.embed(x)?;
        let mut stage = 0;
        for (j, &s) in stage_of.iter().enumerate().take(block_index + 1) {
            while stage < s {
                seq = self.pool(&seq, stage)?;
                stage += 1;
            }
            seq = self.block(&seq, j, &mut probe)?;
        }
        Ok(seq)
    }

    /// Channel-first token grid `C × P × P` of one image after `block_index`,
    /// with the class token dropped.
    pub fn token_grid(&self, x: &Tensor, block_index: usize) -> Result<Tensor> {
        let seq = self.forward_to(x, block_index, None)?;
        let (n, c) = seq.dims2()?;
        let side = grid_side(n - 1)?;
        seq.rows(1, n)?.transpose()?.reshape(&[c, side, side])
    }
}

fn grid_side(tokens: usize) -> Result<usize> {
    let side = (tokens as f64).sqrt().round() as usize;
    if side * side != tokens || tokens == 0 {
        return Err(Error::Config(format!(
            "{tokens} patch tokens cannot form a square grid"
        )));
    }
    Ok(side)
}

/// Token grids for a batch `B × 3 × H × W`, shaped `B × C_i × P × P`.
pub fn student_tokens(m: &StudentModel, x: &Tensor, block_index: usize) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "expected a B×C×H×W batch, got {:?}",
            x.shape()
        )));
    }
    let grids = (0..x.shape()[0])
        .map(|b| m.token_grid(&x.select(b)?, block_index))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&grids)
}

pub fn build_student(g: &Genome, seed: u64) -> Result<StudentModel> {
    StudentModel::build(g, seed)
}
