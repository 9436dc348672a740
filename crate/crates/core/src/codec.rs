//! Inference: waveform → codes → bitstream and back.

use std::path::Path;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::bitstream::{pack_codes, unpack_codes, Bitstream, Strictness};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{Decoder, Encoder, ModelConfig};
use crate::rvq::{bitrate, CodeFrames, Codebook, QuantizerConfig};
use crate::signal::Waveform;
use crate::trainer::TRAIN_DTYPE;

/// Which decoder reconstructs the waveform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// `G_d`, trained on distortion only.
    Distortion,
    /// `G_p`, trained adversarially in stage 2.
    Perceptual,
}

/// Trained encoder, codebook and decoder(s).
#[derive(Debug)]
pub struct Codec {
    model: ModelConfig,
    quantizer: QuantizerConfig,
    encoder: Encoder,
    codebook: Codebook,
    decoder: Decoder,
    perceptual: Option<Decoder>,
    stage: u8,
}

impl Codec {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.verify()?;
        let get =
            |k: &str| ck.config.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("config snapshot lacks {k}")));
        let model: ModelConfig = serde_json::from_value(get("model")?)?;
        let quantizer: QuantizerConfig = serde_json::from_value(get("quantizer")?)?;
        model.validate()?;
        quantizer.validate()?;
        let device = Device::Cpu;
        let encoder = Encoder::new(&model, 0, TRAIN_DTYPE, &device)?;
        encoder.params().load_host(&ck.group("encoder"))?;
        let decoder = Decoder::new(&model, 0, TRAIN_DTYPE, &device)?;
        decoder.params().load_host(&ck.group("decoder"))?;
        let perceptual = if ck.has_group("perceptual_decoder") {
            let d = Decoder::new(&model, 0, TRAIN_DTYPE, &device)?;
            d.params().load_host(&ck.group("perceptual_decoder"))?;
            Some(d)
        } else {
            None
        };
        let g = ck.group("codebook");
        let part = |k: &str| g.get(k).ok_or_else(|| Error::Checkpoint(format!("codebook/{k} missing")));
        let codebook = Codebook::from_host(part("entries")?, part("ema_counts")?, part("ema_sums")?)?;
        if codebook.stages() != quantizer.num_quantizers || codebook.size() != quantizer.codebook_size {
            return Err(Error::Checkpoint("codebook shape disagrees with quantizer config".into()));
        }
        Ok(Self { model, quantizer, encoder, codebook, decoder, perceptual, stage: ck.stage })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn quantizer(&self) -> &QuantizerConfig {
        &self.quantizer
    }

    pub fn stage(&self) -> u8 {
        self.stage
    }

    pub fn has_perceptual(&self) -> bool {
        self.perceptual.is_some()
    }

    /// Payload bit-rate with `nq` active stages.
    pub fn bitrate(&self, nq: usize) -> f64 {
        bitrate(nq, self.quantizer.codebook_size, self.model.frame_rate())
    }

    pub fn encode(&self, w: &Waveform, nq: usize) -> Result<CodeFrames> {
        if w.sample_rate() != self.model.sample_rate {
            return Err(Error::Config(format!(
                "input sample rate {} differs from model rate {}",
                w.sample_rate(),
                self.model.sample_rate
            )));
        }
        if nq == 0 || nq > self.quantizer.num_quantizers {
            return Err(Error::QuantizerRange { requested: nq, available: self.quantizer.num_quantizers });
        }
        let z = self.encoder.encode(w)?;
        Ok(self.codebook.quantize(&z, nq)?.codes)
    }

    /// Output has `frames × hop` samples.
    pub fn decode(&self, codes: &CodeFrames, kind: DecoderKind) -> Result<Waveform> {
        let dec = match kind {
            DecoderKind::Distortion => &self.decoder,
            DecoderKind::Perceptual => self.perceptual.as_ref().ok_or_else(|| {
                Error::Checkpoint(format!(
                    "stage-{} checkpoint has no perceptual decoder; run stage 2 first",
                    self.stage
                ))
            })?,
        };
        if codes.frames == 0 {
            return Waveform::new(Vec::new(), self.model.sample_rate);
        }
        dec.decode(&self.codebook.dequantize(codes)?)
    }

    pub fn encode_bitstream(&self, w: &Waveform, nq: usize) -> Result<Bitstream> {
        let codes = self.encode(w, nq)?;
        let hop = u16::try_from(self.model.hop()).map_err(|_| Error::Bitstream("hop exceeds 16 bits".into()))?;
        pack_codes(&codes, self.model.sample_rate, hop, self.quantizer.bits_per_index() as u8)
    }

    pub fn decode_bitstream(&self, b: &Bitstream, kind: DecoderKind, strictness: Strictness) -> Result<Waveform> {
        let h = &b.header;
        if h.sample_rate != self.model.sample_rate || h.hop as usize != self.model.hop() {
            return Err(Error::Bitstream(format!(
                "stream is {} Hz / hop {}, model is {} Hz / hop {}",
                h.sample_rate,
                h.hop,
                self.model.sample_rate,
                self.model.hop()
            )));
        }
        if h.bits_per_index as u32 != self.quantizer.bits_per_index() {
            return Err(Error::Bitstream(format!(
                "stream uses {} bits per index, codebook needs {}",
                h.bits_per_index,
                self.quantizer.bits_per_index()
            )));
        }
        self.decode(&unpack_codes(b, strictness)?, kind)
    }
}
