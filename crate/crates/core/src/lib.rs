//! Training-free architecture search for vision transformers, guided by a
//! convolutional teacher.
//!
//! Candidates are scored at initialization by combining how closely their
//! spatial attention matches a teacher's ([`proxy::teacher_aware_metric`]) with
//! the magnitude of their weights ([`proxy::student_capability_metric`]).

pub mod batch;
pub mod error;
pub mod eval;
pub mod model;
pub mod proxy;
pub mod search;
pub mod space;
pub mod tensor;

pub use batch::BatchSource;
pub use error::{Error, Result};
pub use eval::{evaluate_proxy, kendall_tau, EvalConfig, Oracle, RankReport};
pub use model::{StudentModel, TeacherConfig, TeacherModel};
pub use proxy::{ProxyConfig, ProxyContext, RawMetrics, ScoredCandidate};
pub use search::{run_search, MetricSource, SearchConfig, SearchResult};
pub use space::{param_count, Family, Genome, SearchSpaceSpec};
pub use tensor::{Rng, Tensor};
