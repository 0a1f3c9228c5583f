//! Run configuration: a JSON file whose fields are overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tvt_core::batch::BatchSource;
use tvt_core::eval::{import_accuracy_table, Oracle, SyntheticOracle, DEFAULT_EVAL_N, DEFAULT_EVAL_RUNS};
use tvt_core::model::{load_teacher, random_teacher, TeacherConfig, TeacherModel};
use tvt_core::search::{DEFAULT_POPULATION, DEFAULT_TOPK};
use tvt_core::space::load_space;
use tvt_core::{Error, ProxyConfig, SearchSpaceSpec};

/// Where the teacher comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherSource {
    /// Seeded random weights. Without an explicit architecture the compact
    /// three-stage ResNet sized for the space's images is used.
    Random {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        config: Option<TeacherConfig>,
    },
    /// Checkpoint directory holding `manifest.json` and tensor files.
    Checkpoint(PathBuf),
}

impl Default for TeacherSource {
    fn default() -> Self {
        TeacherSource::Random { seed: 0, config: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSource {
    Synthetic(SyntheticOracle),
    /// CSV file with a `genome_hash,accuracy` header.
    Table(PathBuf),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n: Option<usize>,
    pub runs: Option<usize>,
    #[serde(default)]
    pub fix_genomes: bool,
    pub dataset_tag: Option<String>,
    pub oracle: Option<OracleSource>,
}

/// Schema of `--config` files. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Bundled space name (`tiny`, `autoformer_ti`, `pit`) or a path.
    pub space: Option<String>,
    pub population_size: Option<usize>,
    pub topk: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub teacher: Option<TeacherSource>,
    pub proxy: Option<ProxyConfig>,
    pub eval: Option<EvalSection>,
}

impl FileConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: FileConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: Some(path.to_path_buf()),
            line: Some(e.line() as u64),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(s) = &mut self.space {
            if SearchSpaceSpec::bundled(s).is_none() {
                let mut p = PathBuf::from(&*s);
                fix(&mut p);
                *s = p.to_string_lossy().into_owned();
            }
        }
        if let Some(TeacherSource::Checkpoint(p)) = &mut self.teacher {
            fix(p);
        }
        if let Some(ProxyConfig { batch: BatchSource::File { path }, .. }) = &mut self.proxy {
            fix(path);
        }
        if let Some(EvalSection { oracle: Some(OracleSource::Table(p)), .. }) = &mut self.eval {
            fix(p);
        }
    }
}

/// A space argument is either a bundled name or a JSON file.
pub fn resolve_space(arg: &str) -> Result<SearchSpaceSpec, Error> {
    match SearchSpaceSpec::bundled(arg) {
        Some(s) => Ok(s),
        None if Path::new(arg).exists() => load_space(arg),
        None => Err(Error::Config(format!(
            "unknown space `{arg}`: not a bundled space ({}) and no such file",
            SearchSpaceSpec::bundled_names().collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Fully resolved settings, recorded verbatim in run manifests.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub space: String,
    pub population_size: usize,
    pub topk: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    pub teacher: TeacherSource,
    pub proxy: ProxyConfig,
    pub eval_n: usize,
    pub eval_runs: usize,
    pub fix_genomes: bool,
    pub dataset_tag: String,
    pub oracle: Option<OracleSource>,
}

/// Flag values; `None` leaves the file or default value in place.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub space: Option<String>,
    pub population_size: Option<usize>,
    pub topk: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub teacher_checkpoint: Option<PathBuf>,
    pub batch_file: Option<PathBuf>,
    pub eval_n: Option<usize>,
    pub eval_runs: Option<usize>,
    pub fix_genomes: bool,
    pub oracle_table: Option<PathBuf>,
}

impl Resolved {
    pub fn new(file: FileConfig, flags: Overrides) -> Self {
        let eval = file.eval.unwrap_or_default();
        let mut proxy = file.proxy.unwrap_or_default();
        if let Some(path) = flags.batch_file {
            proxy.batch = BatchSource::File { path };
        }
        Resolved {
            space: flags.space.or(file.space).unwrap_or_else(|| "tiny".into()),
            population_size: flags
                .population_size
                .or(file.population_size)
                .unwrap_or(DEFAULT_POPULATION),
            topk: flags.topk.or(file.topk).unwrap_or(DEFAULT_TOPK),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            workers: flags.workers.or(file.workers),
            teacher: flags
                .teacher_checkpoint
                .map(TeacherSource::Checkpoint)
                .or(file.teacher)
                .unwrap_or_default(),
            proxy,
            eval_n: flags.eval_n.or(eval.n).unwrap_or(DEFAULT_EVAL_N),
            eval_runs: flags.eval_runs.or(eval.runs).unwrap_or(DEFAULT_EVAL_RUNS),
            fix_genomes: flags.fix_genomes || eval.fix_genomes,
            dataset_tag: eval.dataset_tag.unwrap_or_else(|| "synthetic".into()),
            oracle: flags.oracle_table.map(OracleSource::Table).or(eval.oracle),
        }
    }

    pub fn space_spec(&self) -> Result<SearchSpaceSpec, Error> {
        resolve_space(&self.space)
    }

    pub fn teacher(&self, in_channels: usize, image_size: usize) -> Result<TeacherModel, Error> {
        let t = match &self.teacher {
            TeacherSource::Random { seed, config } => {
                let cfg = config
                    .clone()
                    .unwrap_or_else(|| TeacherConfig::resnet_small(in_channels, image_size));
                random_teacher(&cfg, *seed)?
            }
            TeacherSource::Checkpoint(dir) => load_teacher(dir)?,
        };
        let c = t.config();
        if (c.in_channels, c.image_size) != (in_channels, image_size) {
            return Err(Error::Config(format!(
                "teacher expects {}×{}×{} images, candidates use {in_channels}×{image_size}×{image_size}",
                c.in_channels, c.image_size, c.image_size
            )));
        }
        Ok(t)
    }

    pub fn oracle(&self) -> Result<Oracle, Error> {
        match &self.oracle {
            None => Err(Error::Config(
                "eval-rank needs an oracle: set eval.oracle in the config or pass --oracle-table".into(),
            )),
            Some(OracleSource::Synthetic(s)) => Ok(Oracle::Synthetic(s.clone())),
            Some(OracleSource::Table(p)) => Ok(Oracle::Table(import_accuracy_table(p)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = FileConfig {
            population_size: Some(50),
            topk: Some(4),
            seed: Some(9),
            ..FileConfig::default()
        };
        let flags = Overrides {
            seed: Some(1),
            ..Overrides::default()
        };
        let r = Resolved::new(file, flags);
        assert_eq!((r.population_size, r.topk, r.seed), (50, 4, 1));
        assert_eq!(r.space, "tiny");
        assert_eq!(r.eval_n, 100);
        assert_eq!(r.eval_runs, 3);
    }

    #[test]
    fn config_schema_parses() {
        let text = r#"{
            "space": "tiny",
            "teacher": {"random": {"seed": 3}},
            "proxy": {"alpha": 2.0, "beta": -3.0, "batch": {"synthetic": {"size": 4, "seed": 1}}},
            "eval": {"n": 10, "oracle": {"synthetic": {"kind": "monotone", "noise": 0.1}}}
        }"#;
        let cfg: FileConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.teacher, Some(TeacherSource::Random { seed: 3, config: None }));
        assert!(serde_json::from_str::<FileConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg: FileConfig =
            serde_json::from_str(r#"{"space": "spaces/x.json", "teacher": {"checkpoint": "t"}}"#).unwrap();
        cfg.rebase(Path::new("/cfg"));
        assert_eq!(cfg.space.as_deref(), Some("/cfg/spaces/x.json"));
        assert_eq!(cfg.teacher, Some(TeacherSource::Checkpoint("/cfg/t".into())));
    }
}
