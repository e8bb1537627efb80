pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod models;
pub mod nn;
pub mod synthetic;
pub mod text;
pub mod train;
