//! Fourier-sparsity membership testers for structured discrete distributions.

pub mod dft;
pub mod dist_core;
pub mod error;
pub mod fourier_sparsity;
pub mod framework;
pub mod l2_identity;
pub mod ledger;
pub mod logconcave;
pub mod numeric;
pub mod pmd;
pub mod projection;
pub mod report;
pub mod rng;
pub mod siirv;

pub use dist_core::{Counts, DistSpec, MultiPmf, PmdSpec, Pmf, Point, Sampler, SiirvSpec, VecSampler};
pub use error::{Error, Result};
pub use ledger::Ledger;
pub use report::{Hypothesis, Stage, TestReport, Verdict};
pub use rng::{RngTree, TestRng};
