//! `SES1` bitstream container.
//!
//! ```text
//! offset size field
//! 0      4    magic "SES1"
//! 4      1    version (1)
//! 5      4    sample rate, u32 LE
//! 9      2    hop (samples per frame), u16 LE
//! 11     1    quantizer stages used
//! 12     1    bits per index
//! 13     4    frame count, u32 LE
//! 17     ..   indices, MSB first, frame-major then stage-major,
//!             zero-padded to a byte boundary
//! ```

use crate::error::{Error, Result};
use crate::rvq::CodeFrames;

pub const MAGIC: [u8; 4] = *b"SES1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub sample_rate: u32,
    pub hop: u16,
    pub nq_used: u8,
    pub bits_per_index: u8,
    pub num_frames: u32,
}

impl Header {
    pub fn payload_bits(&self) -> u64 {
        self.num_frames as u64 * self.nq_used as u64 * self.bits_per_index as u64
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_bits().div_ceil(8) as usize
    }

    /// Payload bits per second of audio.
    pub fn bitrate(&self) -> f64 {
        self.nq_used as f64 * self.bits_per_index as f64 * self.sample_rate as f64 / self.hop as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub header: Header,
    pub payload: Vec<u8>,
}

/// Whether nonzero padding bits after the payload are an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Strict,
    Lenient,
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    n: u32,
}

impl BitWriter {
    fn with_capacity(bytes: usize) -> Self {
        Self { bytes: Vec::with_capacity(bytes), acc: 0, n: 0 }
    }

    fn put(&mut self, value: u32, bits: u32) {
        self.acc = (self.acc << bits) | value as u64;
        self.n += bits;
        while self.n >= 8 {
            self.n -= 8;
            self.bytes.push((self.acc >> self.n) as u8);
        }
        self.acc &= (1u64 << self.n) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            self.bytes.push((self.acc << (8 - self.n)) as u8);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u64,
    n: u32,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0, acc: 0, n: 0 }
    }

    fn get(&mut self, bits: u32) -> u32 {
        while self.n < bits {
            self.acc = (self.acc << 8) | self.bytes[self.pos] as u64;
            self.pos += 1;
            self.n += 8;
        }
        self.n -= bits;
        let v = (self.acc >> self.n) as u32 & ((1u64 << bits) - 1) as u32;
        self.acc &= (1u64 << self.n) - 1;
        v
    }

    fn remaining_bits(&self) -> u64 {
        self.acc
    }
}

/// Packs code indices behind a header.
pub fn pack_codes(codes: &CodeFrames, sample_rate: u32, hop: u16, bits_per_index: u8) -> Result<Bitstream> {
    if !(1..=16).contains(&bits_per_index) {
        return Err(Error::Bitstream(format!("bits per index {bits_per_index} not in 1..=16")));
    }
    let nq_used = u8::try_from(codes.stages)
        .map_err(|_| Error::Bitstream(format!("{} stages do not fit the header", codes.stages)))?;
    let num_frames = u32::try_from(codes.frames)
        .map_err(|_| Error::Bitstream(format!("{} frames do not fit the header", codes.frames)))?;
    let header = Header { sample_rate, hop, nq_used, bits_per_index, num_frames };
    let limit = 1u32 << bits_per_index;
    let mut w = BitWriter::with_capacity(header.payload_bytes());
    for &ix in &codes.indices {
        if ix >= limit {
            return Err(Error::Bitstream(format!("index {ix} does not fit in {bits_per_index} bits")));
        }
        w.put(ix, bits_per_index as u32);
    }
    Ok(Bitstream { header, payload: w.finish() })
}

/// Unpacks code indices.
pub fn unpack_codes(b: &Bitstream, strictness: Strictness) -> Result<CodeFrames> {
    let h = &b.header;
    if !(1..=16).contains(&h.bits_per_index) {
        return Err(Error::Bitstream(format!("bits per index {} not in 1..=16", h.bits_per_index)));
    }
    let expected = h.payload_bits();
    let available = b.payload.len() as u64 * 8;
    if available < expected {
        return Err(Error::Bitstream(format!("truncated payload: expected {expected} bits, found {available}")));
    }
    if b.payload.len() != h.payload_bytes() {
        return Err(Error::Bitstream(format!(
            "payload has {} bytes, header implies {}",
            b.payload.len(),
            h.payload_bytes()
        )));
    }
    let mut r = BitReader::new(&b.payload);
    let count = h.num_frames as usize * h.nq_used as usize;
    let indices: Vec<u32> = (0..count).map(|_| r.get(h.bits_per_index as u32)).collect();
    if strictness == Strictness::Strict && r.remaining_bits() != 0 {
        return Err(Error::Bitstream("nonzero padding bits".into()));
    }
    CodeFrames::new(h.num_frames as usize, h.nq_used as usize, indices)
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&h.sample_rate.to_le_bytes());
        out.extend_from_slice(&h.hop.to_le_bytes());
        out.push(h.nq_used);
        out.push(h.bits_per_index);
        out.extend_from_slice(&h.num_frames.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses the header and takes the rest as payload. Payload length is
    /// checked by [`unpack_codes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Bitstream(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Bitstream(format!("bad magic {:?}", &bytes[..4])));
        }
        if bytes[4] != VERSION {
            return Err(Error::Bitstream(format!("unsupported version {}", bytes[4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let header = Header {
            sample_rate: u32_at(5),
            hop: u16::from_le_bytes([bytes[9], bytes[10]]),
            nq_used: bytes[11],
            bits_per_index: bytes[12],
            num_frames: u32_at(13),
        };
        Ok(Self { header, payload: bytes[HEADER_LEN..].to_vec() })
    }
}
