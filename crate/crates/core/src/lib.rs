//! Sequence formats, progressive alignment, phylogenetic likelihood,
//! Metropolis-coupled MCMC and the job workflow behind the PhyloGrid portal.

pub mod aligner;
pub mod executor;
pub mod mcmc;
pub mod phylomodel;
pub mod scalar;
pub mod seqio;
pub mod workflow;

pub use scalar::Real;

pub type PhyloTreeF64 = phylomodel::PhyloTree<f64>;
pub type PhyloTreeF32 = phylomodel::PhyloTree<f32>;
pub type SubstitutionModelF64 = phylomodel::SubstitutionModel<f64>;
pub type SubstitutionModelF32 = phylomodel::SubstitutionModel<f32>;
