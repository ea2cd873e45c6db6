pub mod env;
pub mod eval;
pub mod grpo;
pub mod klst;
pub mod nn;
pub mod router;
