#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod denoiser;
pub mod error;
pub mod estimator;
pub mod oracle;
pub mod process;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod schedules;
pub mod special;
pub mod theorem;
pub mod trainer;
pub mod weightings;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/schedules.md")]
    mod schedules {}
    #[doc = include_str!("../../../book/src/weightings.md")]
    mod weightings {}
    #[doc = include_str!("../../../book/src/process.md")]
    mod process {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/theorem.md")]
    mod theorem {}
    #[doc = include_str!("../../../book/src/sampler.md")]
    mod sampler {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
