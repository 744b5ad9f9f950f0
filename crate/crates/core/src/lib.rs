//! Coverage-policy adjudication support: passage retrieval over plan
//! documents, a boolean-attribute rule language, a forward-chaining engine
//! that produces auditable traces, and the evaluation and cost tooling
//! around them.

pub mod authoring;
pub mod cost;
pub mod engine;
pub mod eval;
pub mod net;
pub mod pipeline;
pub mod plan;
pub mod retrieval;
pub mod synthetic;
pub mod rulelang;
pub mod service;
pub mod workspace;
