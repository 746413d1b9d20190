//! Probabilistic robustness certification for Bayesian neural networks with
//! diagonal Gaussian weight posteriors.
//!
//! A certificate is a set of weight boxes, each verified safe for every input
//! in the specification's region; its posterior mass lower-bounds the
//! probability that a sampled network satisfies the specification.

pub mod boundprop;
pub mod certify;
pub mod error;
pub mod evalkit;
pub mod gradient;
pub mod io;
pub mod model;
pub mod probmass;
pub mod report;
pub mod toy;

pub use boundprop::{BoundBox, Verdict, Verifier, VerifierMode};
pub use certify::{Certificate, CertifyParams, Method};
pub use error::{Error, Result};
pub use model::{
    forward, sample_weights, HalfSpace, LayerSpec, Network, PosteriorParams, RobustnessSpec, WeightBox,
    WeightVector,
};
pub use probmass::{MassMethod, MassResult};
