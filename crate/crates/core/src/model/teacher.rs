use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::io::{load_tensor, save_tensor};
use crate::tensor::ops;
use crate::tensor::{trunc_normal_init, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// conv → norm → ReLU, repeated.
    Plain,
    /// ResNet basic blocks with a projection shortcut where shapes change.
    Basic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

fn default_kernel() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub kind: StageKind,
    pub channels: usize,
    /// Applied by the first block of the stage.
    pub stride: usize,
    pub blocks: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub stem: ConvSpec,
    pub stages: Vec<StageSpec>,
    /// `"stem"` or `"stage{i}"`; the feature map handed to the proxy.
    pub tap_point: String,
}

impl TeacherConfig {
    /// Compact three-stage ResNet: 3×3 stem, then basic-block stages of
    /// 16, 32 and 64 channels (the last two downsample by 2). Tapped after
    /// the last stage.
    pub fn resnet_small(in_channels: usize, image_size: usize) -> Self {
        let stage = |channels, stride| StageSpec {
            kind: StageKind::Basic,
            channels,
            stride,
            blocks: 1,
            kernel: 3,
        };
        Self {
            in_channels,
            image_size,
            stem: ConvSpec {
                channels: 16,
                kernel: 3,
                stride: 1,
            },
            stages: vec![stage(16, 1), stage(32, 2), stage(64, 2)],
            tap_point: "stage2".into(),
        }
    }

    pub fn tap_points(&self) -> Vec<String> {
        std::iter::once("stem".to_string())
            .chain((0..self.stages.len()).map(|i| format!("stage{i}")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.image_size == 0 {
            return Err(Error::Config("teacher input size must be positive".into()));
        }
        let convs = std::iter::once((self.stem.channels, self.stem.kernel, self.stem.stride))
            .chain(self.stages.iter().map(|s| (s.channels, s.kernel, s.stride)));
        for (c, k, s) in convs {
            if c == 0 || k == 0 || s == 0 {
                return Err(Error::Config(
                    "teacher channels, kernels and strides must be positive".into(),
                ));
            }
        }
        if self.stages.iter().any(|s| s.blocks == 0) {
            return Err(Error::Config("teacher stages need at least one block".into()));
        }
        if !self.tap_points().contains(&self.tap_point) {
            return Err(Error::Config(format!(
                "unknown teacher tap point `{}` (expected one of {:?})",
                self.tap_point,
                self.tap_points()
            )));
        }
        Ok(())
    }

    fn tap_index(&self) -> usize {
        self.tap_points()
            .iter()
            .position(|t| *t == self.tap_point)
            .expect("validated tap point")
    }
}

#[derive(Clone, Copy)]
enum Init {
    Kaiming { fan_in: usize },
    Zeros,
    Ones,
}

fn conv_entry(
    out: &mut Vec<(String, Vec<usize>, Init)>,
    prefix: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
) {
    out.push((
        format!("{prefix}.conv.weight"),
        vec![c_out, c_in, k, k],
        Init::Kaiming {
            fan_in: c_in * k * k,
        },
    ));
    out.push((format!("{prefix}.norm.weight"), vec![c_out], Init::Ones));
    out.push((format!("{prefix}.norm.bias"), vec![c_out], Init::Zeros));
}

fn teacher_layout(cfg: &TeacherConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    conv_entry(&mut out, "stem", cfg.stem.channels, cfg.in_channels, cfg.stem.kernel);
    let mut c_in = cfg.stem.channels;
    for (s, stage) in cfg.stages.iter().enumerate() {
        for b in 0..stage.blocks {
            let pre = format!("stages.{s}.{b}");
            let stride = if b == 0 { stage.stride } else { 1 };
            match stage.kind {
                StageKind::Plain => conv_entry(&mut out, &pre, stage.channels, c_in, stage.kernel),
                StageKind::Basic => {
                    conv_entry(&mut out, &format!("{pre}.a"), stage.channels, c_in, stage.kernel);
                    conv_entry(
                        &mut out,
                        &format!("{pre}.b"),
                        stage.channels,
                        stage.channels,
                        stage.kernel,
                    );
                    if stride != 1 || c_in != stage.channels {
                        conv_entry(
                            &mut out,
                            &format!("{pre}.shortcut"),
                            stage.channels,
                            c_in,
                            1,
                        );
                    }
                }
            }
            c_in = stage.channels;
        }
    }
    out
}

/// Convolutional teacher exposing the feature map at its tap point.
#[derive(Clone, Debug)]
pub struct TeacherModel {
    config: TeacherConfig,
    weights: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: TeacherConfig,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl TeacherModel {
    /// Kaiming-style truncated-normal convolution weights (std
    /// `sqrt(2 / fan_in)`), identity normalization.
    pub fn random(config: &TeacherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let weights = teacher_layout(config)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::Kaiming { fan_in } => {
                        trunc_normal_init(&mut rng, &shape, (2.0 / fan_in as f32).sqrt())
                    }
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::ones(&shape),
                };
                (name, t)
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            weights,
        })
    }

    pub fn from_weights(config: &TeacherConfig, mut weights: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let mut checked = BTreeMap::new();
        for (name, shape, _) in teacher_layout(config) {
            let t = weights
                .remove(&name)
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "teacher tensor `{name}` has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
            checked.insert(name, t);
        }
        if let Some(extra) = weights.keys().next() {
            return Err(Error::Config(format!("unexpected teacher tensor `{extra}`")));
        }
        Ok(Self {
            config: config.clone(),
            weights: checked,
        })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor> {
        &self.weights
    }

    /// Same weights, different tap point.
    pub fn with_tap_point(mut self, tap: &str) -> Result<Self> {
        self.config.tap_point = tap.to_string();
        self.config.validate()?;
        Ok(self)
    }

    fn conv_norm(&self, x: &Tensor, prefix: &str, stride: usize, relu: bool) -> Result<Tensor> {
        let w = &self.weights[&format!("{prefix}.conv.weight")];
        let k = w.shape()[2];
        let y = ops::conv2d(x, w, stride, k / 2)?;
        let y = ops::channel_affine(
            &y,
            &self.weights[&format!("{prefix}.norm.weight")],
            &self.weights[&format!("{prefix}.norm.bias")],
        )?;
        Ok(if relu { ops::relu(&y) } else { y })
    }

    /// Feature map of one image `C_in × H × W` at the tap point.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        let expected = [cfg.in_channels, cfg.image_size, cfg.image_size];
        if x.shape() != expected {
            return Err(Error::Dimension {
                op: "teacher input",
                lhs: expected.to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        let tap = cfg.tap_index();
        let mut h = self.conv_norm(x, "stem", cfg.stem.stride, true)?;
        for (s, stage) in cfg.stages.iter().enumerate().take(tap) {
            for b in 0..stage.blocks {
                let pre = format!("stages.{s}.{b}");
                let stride = if b == 0 { stage.stride } else { 1 };
                h = match stage.kind {
                    StageKind::Plain => self.conv_norm(&h, &pre, stride, true)?,
                    StageKind::Basic => {
                        let y = self.conv_norm(&h, &format!("{pre}.a"), stride, true)?;
                        let y = self.conv_norm(&y, &format!("{pre}.b"), 1, false)?;
                        let shortcut = format!("{pre}.shortcut");
                        let skip = if self.weights.contains_key(&format!("{shortcut}.conv.weight")) {
                            self.conv_norm(&h, &shortcut, stride, false)?
                        } else {
                            h
                        };
                        ops::relu(&ops::add(&y, &skip)?)
                    }
                };
            }
        }
        Ok(h)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = Vec::with_capacity(self.weights.len());
        for (name, t) in &self.weights {
            let file = format!("{name}.bin");
            save_tensor(dir.join(&file), t)?;
            tensors.push(ManifestEntry {
                name: name.clone(),
                file,
                shape: t.shape().to_vec(),
            });
        }
        let manifest = Manifest {
            config: self.config.clone(),
            tensors,
        };
        let path = dir.join(MANIFEST_FILE);
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &manifest)
            .map_err(|e| Error::io(&path, e.into()))
    }
}

/// Feature maps `B × C_T × H_t × W_t` for a batch `B × C_in × H × W`.
pub fn teacher_features(t: &TeacherModel, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "expected a B×C×H×W batch, got {:?}",
            x.shape()
        )));
    }
    let maps = (0..x.shape()[0])
        .map(|b| t.features(&x.select(b)?))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&maps)
}

pub fn random_teacher(cfg: &TeacherConfig, seed: u64) -> Result<TeacherModel> {
    TeacherModel::random(cfg, seed)
}

/// Loads a checkpoint directory: a `manifest.json` naming the config and
/// every tensor file, plus one binary tensor file per weight.
pub fn load_teacher(dir: impl AsRef<Path>) -> Result<TeacherModel> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(Some(path.clone()), Some(e.line() as u64), e))?;
    let mut weights = BTreeMap::new();
    for entry in &manifest.tensors {
        let t = load_tensor(dir.join(&entry.file))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Config(format!(
                "tensor file for `{}` has shape {:?}, manifest says {:?}",
                entry.name,
                t.shape(),
                entry.shape
            )));
        }
        weights.insert(entry.name.clone(), t);
    }
    TeacherModel::from_weights(&manifest.config, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> TeacherConfig {
        TeacherConfig {
            in_channels: 1,
            image_size: 2,
            stem: ConvSpec {
                channels: 2,
                kernel: 1,
                stride: 1,
            },
            stages: vec![StageSpec {
                kind: StageKind::Plain,
                channels: 1,
                stride: 1,
                blocks: 1,
                kernel: 1,
            }],
            tap_point: "stage0".into(),
        }
    }

    #[test]
    fn hand_traced_two_layer_teacher() {
        let cfg = toy_config();
        let t = |shape: &[usize], d: &[f32]| Tensor::new(shape.to_vec(), d.to_vec()).unwrap();
        let mut w = BTreeMap::new();
        // stem: ch0 = 2x, ch1 = -x ; norm: ch0 scale 1 shift 0, ch1 scale 1 shift 1
        w.insert("stem.conv.weight".into(), t(&[2, 1, 1, 1], &[2., -1.]));
        w.insert("stem.norm.weight".into(), t(&[2], &[1., 1.]));
        w.insert("stem.norm.bias".into(), t(&[2], &[0., 1.]));
        // layer 2: out = 1·ch0 + 3·ch1, then scale 0.5
        w.insert("stages.0.0.conv.weight".into(), t(&[1, 2, 1, 1], &[1., 3.]));
        w.insert("stages.0.0.norm.weight".into(), t(&[1], &[0.5]));
        w.insert("stages.0.0.norm.bias".into(), t(&[1], &[0.]));
        let teacher = TeacherModel::from_weights(&cfg, w).unwrap();

        let x = t(&[1, 1, 2, 2], &[1., -1., 0.5, 2.]);
        let got = teacher_features(&teacher, &x).unwrap();
        // by hand: ch0 = relu(2x), ch1 = relu(1 - x); out = relu(0.5(ch0 + 3 ch1))
        let want: Vec<f32> = [1f32, -1., 0.5, 2.]
            .iter()
            .map(|&v| {
                let c0 = (2.0 * v).max(0.0);
                let c1 = (1.0 - v).max(0.0);
                (0.5 * (c0 + 3.0 * c1)).max(0.0)
            })
            .collect();
        assert_eq!(got.shape(), &[1, 1, 2, 2]);
        assert_eq!(got.data(), &want[..]);
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let t = random_teacher(&TeacherConfig::resnet_small(3, 16), 0).unwrap();
        let f = teacher_features(&t, &Tensor::zeros(&[1, 3, 16, 16])).unwrap();
        assert_eq!(f.shape(), &[1, 64, 4, 4]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_and_repeatable() {
        let cfg = TeacherConfig::resnet_small(3, 8);
        let a = random_teacher(&cfg, 3).unwrap();
        let b = random_teacher(&cfg, 3).unwrap();
        assert_eq!(a.weights(), b.weights());
        let x = Tensor::from_fn(&[2, 3, 8, 8], |i| (i as f32 * 0.37).sin() * 3.0);
        let f1 = teacher_features(&a, &x).unwrap();
        assert_eq!(f1, teacher_features(&a, &x).unwrap());
        assert!(f1.is_finite());
    }

    #[test]
    fn rejects_wrong_input_and_bad_tap() {
        let t = random_teacher(&TeacherConfig::resnet_small(3, 8), 0).unwrap();
        assert!(teacher_features(&t, &Tensor::zeros(&[1, 3, 16, 16])).is_err());
        assert!(t.clone().with_tap_point("stage9").is_err());
        let stem = t.with_tap_point("stem").unwrap();
        let f = teacher_features(&stem, &Tensor::zeros(&[1, 3, 8, 8])).unwrap();
        assert_eq!(f.shape(), &[1, 16, 8, 8]);
    }
}
