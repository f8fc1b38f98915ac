//! Networks built on the autodiff tape.

pub mod layers;
pub mod masker;
pub mod sep;
pub mod tpe;
pub mod tsr;

pub use masker::{suggested_chunk, CoreConfig};
pub use sep::{best_permutation, pit_loss, RandomAssociation, SepConfig, SepNet};
pub use tpe::{tpe_loss, TpeConfig, TpeNet, TpeParts};
pub use tsr::{tsr_loss, MatchGroup, MatchOutput, TsrConfig, TsrNet};
