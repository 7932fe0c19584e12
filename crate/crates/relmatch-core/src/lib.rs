//! Scoring and ranking of knowledge-base relation candidates for a natural
//! language question, via bilateral multi-perspective matching over
//! relation names and mined tail-entity types.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`graph`]), gradient-descent training ([`optim`]), the shared BiLSTM
//! encoder ([`encoder`]), the multi-perspective matcher ([`matcher`]),
//! input embeddings ([`embed`]), tail-type mining from KB dumps
//! ([`typeminer`]), the model assembly and trainer ([`model`]), and
//! dataset/metrics plumbing ([`data`]).

pub mod checkpoint;
pub mod data;
pub mod embed;
pub mod encoder;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod matcher;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod typeminer;

pub use error::{Error, Result};
pub use tensor::Tensor;
