//! Token-level cause/effect tagging with relation-typed graph attention over
//! temporal relation masks, attention over a causal knowledge graph, and a
//! learned gate that mixes those features with contextual embeddings.
//!
//! Pipeline: [`corpus`] parses and validates annotated sentences,
//! [`graph`] builds time matrices and the knowledge graph, [`encoder`]
//! produces token features, [`gat`] and [`head`] form the model assembled in
//! [`model`], and [`train`] fits and scores it. [`tensor`] is the small
//! reverse-mode autodiff engine everything runs on.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod gat;
pub mod gradsuite;
pub mod graph;
pub mod head;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use corpus::{AnnotatedSentence, CausalTag, TemporalRelation};
pub use error::ModelError;
pub use model::{ModelConfig, TcGat, Variant};
pub use params::ParamStore;
pub use tensor::{Graph, Tensor};
pub use train::{EvalReport, TrainConfig};
