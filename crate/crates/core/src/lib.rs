pub mod corpus;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod features;
pub mod recursive;
pub mod sequence;
pub mod model;
pub mod eval;
pub mod trainer;
pub mod serialize;
pub mod fixtures;
pub mod cli;
