//! Relational triple extraction by cascade binary tagging.
//!
//! A sentence is encoded once; a subject tagger marks start and end tokens
//! of every subject, and for each detected subject a relation-specific
//! object tagger marks that relation's objects (or nothing at all).

pub mod autodiff;
pub mod datasets;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod io;
pub mod model;
pub mod tagging;
pub mod training;

pub use error::{Error, Result};
pub use model::Model;
