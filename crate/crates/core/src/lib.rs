pub mod ast;
pub mod decompose;
pub mod error;
pub mod grammar;
pub mod reference;
pub mod sampler;
pub mod guider;
pub mod engine;
pub mod search;
pub mod eval;
pub mod cli;
