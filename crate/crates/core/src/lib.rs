//! Polar and Reed-Muller block codes over a BPSK/AWGN channel, decoded to the
//! maximum-likelihood codeword by a stack sphere decoder.
//!
//! The decoder runs a best-first search over the code tree induced by the
//! lower-triangular generator `F = [1 0; 1 1]^{⊗n}`. Paths are ordered by one
//! of four sort metrics ([`MetricKind`]) and pruned against a shrinking
//! squared-Euclidean radius, so every metric returns the same ML decision and
//! only the amount of search differs.
//!
//! Numeric code is generic over the floating-point scalar (see [`Scalar`]);
//! the `*F64` / `*F32` aliases below fix the common choices.

pub mod channel;
pub mod codes;
pub mod decoder;
pub mod error;
pub mod metrics;
pub mod scalar;
pub mod sim;

pub use channel::{bpsk_map, ebn0_to_params, transmit, trial_rng, ChannelParams};
pub use codes::{
    bit_reverse_permute, build_generator, construct_polar, construct_rm, encode, unscramble,
    CodeSpec, Construction, EncodedBlock, GeneratorMatrix,
};
pub use decoder::{
    ml_oracle, ssd_decode, DecodeResult, DecodeStats, DecoderOptions, StackSphereDecoder,
};
pub use error::{Error, Result};
pub use metrics::{MetricKind, MetricTable};
pub use scalar::Scalar;
pub use sim::{run_sweep, CodeFamily, SweepConfig, SweepRecord};

pub type ChannelParamsF64 = ChannelParams<f64>;
pub type ChannelParamsF32 = ChannelParams<f32>;
pub type MetricTableF64 = MetricTable<f64>;
pub type MetricTableF32 = MetricTable<f32>;
pub type DecodeResultF64 = DecodeResult<f64>;
pub type DecodeResultF32 = DecodeResult<f32>;
pub type StackSphereDecoderF64<'a> = StackSphereDecoder<'a, f64>;
pub type StackSphereDecoderF32<'a> = StackSphereDecoder<'a, f32>;
