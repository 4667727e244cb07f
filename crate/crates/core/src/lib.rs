pub mod colorspace;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod inference;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod training;
