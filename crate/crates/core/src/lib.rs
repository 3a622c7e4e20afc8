//! Refined exponential solvers (RES) for diffusion probability-flow ODEs.
//!
//! In logSNR time `λ = -log σ` the probability-flow ODE of a diffusion model
//! becomes semilinear, `dx/dλ = -x + D(x, e^{-λ})`. The exponential schemes in
//! this crate integrate the linear part exactly and approximate only the
//! denoiser term, with Butcher weights built from the φ-functions.
//!
//! - [`phi`]: stable φ-function evaluation.
//! - [`tableau`]: exponential and classical tableaus, ψ order-condition audits.
//! - [`param`]: parametrizations, coordinate maps and σ-schedules.
//! - [`denoiser`]: analytic denoiser oracles and guidance combinators.
//! - [`stepper`]: single-step, multistep and churned samplers.
//! - [`analysis`]: defect measurement, order estimation and CSV output.
//!
//! ```
//! use res_core::denoiser::{mixture_denoiser, GaussianMixture};
//! use res_core::param::{edm_schedule, NoiseLevel, Parametrization};
//! use res_core::stepper::{solve, Method, SolveOptions};
//! use res_core::tableau::SchemeId;
//!
//! let model = mixture_denoiser(GaussianMixture::toy(2, 3, 7));
//! let sched = edm_schedule(NoiseLevel::new(0.002)?, NoiseLevel::new(80.0)?, 11, 7.0)?;
//! let run = solve(&sched, &Method::scheme(SchemeId::Res2), Parametrization::LogSnr,
//!     &model, &SolveOptions { seed: 1, ..Default::default() })?;
//! assert_eq!(run.nfe, 20);
//! # Ok::<(), res_core::Error>(())
//! ```

pub mod analysis;
pub mod denoiser;
mod error;
pub mod param;
pub mod phi;
pub mod stepper;
pub mod tableau;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/phi.md")]
    mod phi {}
    #[doc = include_str!("../../../book/src/tableaus.md")]
    mod tableaus {}
    #[doc = include_str!("../../../book/src/parametrizations.md")]
    mod parametrizations {}
    #[doc = include_str!("../../../book/src/denoisers.md")]
    mod denoisers {}
    #[doc = include_str!("../../../book/src/samplers.md")]
    mod samplers {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
}
