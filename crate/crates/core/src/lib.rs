pub mod numerics;
pub mod data;
pub mod alinear;
pub mod model;
pub mod training;
pub mod eval;
pub mod cli;
