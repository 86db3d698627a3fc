pub mod birthdeath;
pub mod car;
pub mod cli;
pub mod harness;
pub mod lattice;
pub mod numerics;
