use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::io::load_tensor;
use crate::tensor::{Rng, Tensor};

pub const DEFAULT_BATCH_SIZE: usize = 16;

/// Where the single scoring minibatch comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSource {
    /// Standard-normal pixels drawn from a fixed seed.
    Synthetic { size: usize, seed: u64 },
    /// A `B × C × H × W` binary tensor file.
    File { path: PathBuf },
}

impl Default for BatchSource {
    fn default() -> Self {
        BatchSource::Synthetic {
            size: DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

impl BatchSource {
    pub fn materialize(&self, in_channels: usize, image_size: usize) -> Result<Tensor> {
        let expected = [in_channels, image_size, image_size];
        match self {
            BatchSource::Synthetic { size, seed } => {
                if *size == 0 {
                    return Err(Error::Config("batch size must be at least 1".into()));
                }
                let mut rng = Rng::new(*seed);
                let shape = [*size, in_channels, image_size, image_size];
                Ok(Tensor::from_fn(&shape, |_| rng.standard_normal() as f32))
            }
            BatchSource::File { path } => {
                let t = load_tensor(path)?;
                if t.rank() != 4 || t.shape()[1..] != expected {
                    return Err(Error::Config(format!(
                        "batch {} has shape {:?}, expected B×{in_channels}×{image_size}×{image_size}",
                        path.display(),
                        t.shape()
                    )));
                }
                Ok(t)
            }
        }
    }
}
