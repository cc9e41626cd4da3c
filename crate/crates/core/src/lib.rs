//! Knowledge selection and knowledge-grounded response generation over a
//! graph that fuses factoid triples with free-text sentences.

pub mod graph;
pub mod tensor;
pub mod text;
pub mod env;
pub mod reader;
pub mod policy;
pub mod testing;
pub mod vocab;
pub mod trainer;
pub mod eval;
pub mod generator;
pub mod config;
pub mod chat;
pub mod service;
