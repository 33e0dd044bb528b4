pub mod corpus;
pub mod registry;
pub mod seed;
pub mod text;
pub mod augment;
pub mod head;
pub mod nn;
pub mod loss;
pub mod encoder;
pub mod memory;
pub mod model;
pub mod thresholds;
pub mod eval;
pub mod train;
pub mod checkpoint;
pub mod diagnostics;
