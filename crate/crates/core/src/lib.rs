pub mod asymptotics;
pub mod energy;
pub mod geometry;
pub mod groundstate;
pub mod harness;
pub mod minimizer;
pub mod spectral;
