//! Hybrid SMS classifier: a small transformer encoder over subword tokens and
//! a multi-width character CNN, fused through additive attention pooling and
//! trained with cross-entropy and AdamW. Everything numeric is implemented
//! here, from the tensor tape up.

pub mod tensor;
pub mod text;
pub mod model;
pub mod training;
pub mod baselines;
pub mod cli_io;
