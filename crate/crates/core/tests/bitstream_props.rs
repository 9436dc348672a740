//! Bit packing against a bit-vector oracle.

use proptest::prelude::*;
use ses_core::bitstream::{pack_codes, unpack_codes, Bitstream, Strictness, HEADER_LEN};
use ses_core::rvq::CodeFrames;

fn codes() -> impl Strategy<Value = (CodeFrames, u8)> {
    (1u8..=16, 0usize..20, 1usize..=8).prop_flat_map(|(bits, frames, stages)| {
        prop::collection::vec(0u32..(1u32 << bits), frames * stages)
            .prop_map(move |ix| (CodeFrames::new(frames, stages, ix).unwrap(), bits))
    })
}

/// MSB-first, frame-major, zero-padded to a byte.
fn oracle_payload(c: &CodeFrames, bits: u8) -> Vec<u8> {
    let mut v: Vec<bool> = Vec::new();
    for t in 0..c.frames {
        for &ix in c.frame(t) {
            for b in (0..bits).rev() {
                v.push(ix >> b & 1 == 1);
            }
        }
    }
    v.chunks(8).map(|ch| ch.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn round_trip_is_exact((c, bits) in codes()) {
        let b = pack_codes(&c, 24000, 320, bits).unwrap();
        prop_assert_eq!(b.payload.len() as u64, (c.frames as u64 * c.stages as u64 * bits as u64).div_ceil(8));
        prop_assert_eq!(&b.payload, &oracle_payload(&c, bits));
        let bytes = b.to_bytes();
        prop_assert_eq!(bytes.len(), HEADER_LEN + b.payload.len());
        let parsed = Bitstream::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&parsed, &b);
        prop_assert_eq!(unpack_codes(&parsed, Strictness::Strict).unwrap(), c);
    }

    #[test]
    fn truncation_is_reported((c, bits) in codes()) {
        let bytes = pack_codes(&c, 24000, 320, bits).unwrap().to_bytes();
        prop_assume!(bytes.len() > HEADER_LEN);
        let cut = Bitstream::from_bytes(&bytes[..bytes.len() - 1]).unwrap();
        let err = unpack_codes(&cut, Strictness::Lenient).unwrap_err().to_string();
        prop_assert!(err.contains("expected"), "{}", err);
    }
}

#[test]
fn oversize_index_is_rejected() {
    let c = CodeFrames::new(1, 1, vec![1024]).unwrap();
    assert!(pack_codes(&c, 24000, 320, 10).is_err());
}

#[test]
fn nonzero_padding_is_strict_only() {
    let c = CodeFrames::new(1, 1, vec![5]).unwrap();
    let mut b = pack_codes(&c, 24000, 320, 3).unwrap();
    b.payload[0] |= 1;
    assert!(unpack_codes(&b, Strictness::Strict).is_err());
    assert_eq!(unpack_codes(&b, Strictness::Lenient).unwrap(), c);
}
