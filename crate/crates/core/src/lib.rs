pub mod audit;
pub mod cli;
pub mod geometry;
pub mod he;
pub mod netsim;
pub mod pc_oracle;
pub mod protocol;
pub mod rng;
pub mod scenario;
