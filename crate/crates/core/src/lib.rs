//! Oracle laboratory for discrete diffusion samplers.
//!
//! A known sparse Markov chain plays the role of the data distribution.
//! Exact posterior marginals over partially masked sequences come from
//! forward-backward smoothing and stand in for a learned denoiser, so any
//! distributional error in the generated samples is attributable to the
//! sampler alone.

pub mod corpus;
pub mod harness;
pub mod kernel;
pub mod logspace;
pub mod metrics;
pub mod posterior;
pub mod rng;
pub mod samplers;

pub use corpus::{decode_text8, encode_text8, TextMode, DOC_SEPARATOR};
pub use kernel::{
    build_kernel, count_bigrams, sample_ar, sample_ar_sharpened, sparsify, stationary, BigramCounts,
    KernelError, NuSmoothing, OracleChain, TransitionKernel,
};
pub use metrics::{evaluate, Metrics, MetricsReport, RunKind, TransitionStats};
pub use posterior::{MaskedSequence, Smoother, MASK};
pub use samplers::{sample, Family, SamplerConfig};
