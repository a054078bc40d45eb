pub mod config;
pub mod flow;
pub mod geom;
pub mod graph_recovery;
pub mod mesh_io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod shapes;
pub mod sparse_grid;
pub mod vae;
