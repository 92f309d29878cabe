pub mod cli;
pub mod densities;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod sde;
pub mod smoluchowski;
pub mod special;
