//! Neural speech codec with two-stage training and an exact oracle for the
//! rate-distortion-perception tradeoff of small discrete sources.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bitstream;
pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod discriminators;
pub mod error;
pub mod losses;
pub mod model;
mod ops;
pub mod params;
pub mod rdp_oracle;
pub mod rvq;
pub mod signal;
pub mod trainer;

pub use bitstream::{pack_codes, unpack_codes, Bitstream, Header, Strictness};
pub use checkpoint::Checkpoint;
pub use codec::{Codec, DecoderKind};
pub use data::{synth_corpus, BatchPlan, Corpus, Example, NoiseMixSpec};
pub use discriminators::{DiscriminatorSet, DiscriminatorSetConfig};
pub use error::{Error, Result};
pub use losses::{multiscale_spectral_loss, si_snr, LossWeights, SpectralLossConfig};
pub use model::{Decoder, Encoder, LatentSequence, ModelConfig};
pub use params::ParameterDigest;
pub use rdp_oracle::{GridSpec, Pmf, RdpInstance};
pub use rvq::{bitrate, CodeFrames, Codebook, QuantizerConfig};
pub use signal::{load_wav, save_wav, stft, Waveform};
pub use trainer::{train_stage1, train_stage2, StageOneConfig, StageTwoConfig, StepLog};
