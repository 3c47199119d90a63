//! Raw grayscale frame stacks and the `AVF1` container.
//!
//! Layout: `b"AVF1"`, then `T`, `H`, `W` as little-endian `u32`, then
//! `T·H·W` bytes, row-major.

use std::path::Path;

use crate::error::{ensure, Error, Result};

pub const AVF_MAGIC: &[u8; 4] = b"AVF1";
const HEADER_LEN: usize = 16;

/// `T × H × W` 8-bit grayscale frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrames {
    t: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl RawFrames {
    pub fn new(t: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        let expected = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::InvalidArgument("frame dimensions overflow".into()))?;
        ensure!(
            data.len() == expected,
            Error::ShapeMismatch {
                expected: vec![t, h, w],
                actual: vec![data.len()],
            }
        );
        Ok(Self { t, h, w, data })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let n = self.h * self.w;
        &self.data[i * n..(i + 1) * n]
    }

    /// First `t` frames.
    pub fn truncated(&self, t: usize) -> Result<Self> {
        ensure!(
            t <= self.t,
            Error::InvalidArgument(format!("cannot take {t} of {} frames", self.t))
        );
        Self::new(t, self.h, self.w, self.data[..t * self.h * self.w].to_vec())
    }

    /// Frames `[start, start + t)`.
    pub fn window(&self, start: usize, t: usize) -> Result<Self> {
        ensure!(
            start + t <= self.t,
            Error::InvalidArgument(format!("frames [{start}, {}) out of {}", start + t, self.t))
        );
        let n = self.h * self.w;
        Self::new(t, self.h, self.w, self.data[start * n..(start + t) * n].to_vec())
    }
}

pub fn encode_avf(frames: &RawFrames) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frames.data.len());
    out.extend_from_slice(AVF_MAGIC);
    for d in [frames.t, frames.h, frames.w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&frames.data);
    out
}

pub fn decode_avf(bytes: &[u8]) -> Result<RawFrames> {
    ensure!(
        bytes.len() >= HEADER_LEN,
        Error::malformed("avf", "shorter than header")
    );
    ensure!(&bytes[..4] == AVF_MAGIC, Error::malformed("avf", "bad magic"));
    let dim = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
    };
    let (t, h, w) = (dim(0), dim(1), dim(2));
    let payload = &bytes[HEADER_LEN..];
    let expected = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::malformed("avf", "dimensions overflow"))?;
    ensure!(
        payload.len() == expected,
        Error::malformed(
            "avf",
            format!("payload has {} bytes, header implies {expected}", payload.len())
        )
    );
    RawFrames::new(t, h, w, payload.to_vec())
}

pub fn read_avf(path: impl AsRef<Path>) -> Result<RawFrames> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_avf(&bytes)
}

pub fn write_avf(path: impl AsRef<Path>, frames: &RawFrames) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_avf(frames)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let f = RawFrames::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let enc = encode_avf(&f);
        assert_eq!(&enc[..4], b"AVF1");
        assert_eq!(&enc[4..16], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&enc[16..], &[1, 2, 3, 4, 5, 6]);
        assert_eq!(decode_avf(&enc).unwrap(), f);
    }

    #[test]
    fn rejects_size_mismatch() {
        let f = RawFrames::new(1, 2, 2, vec![0; 4]).unwrap();
        let mut enc = encode_avf(&f);
        enc.pop();
        assert!(decode_avf(&enc).is_err());
        let mut huge = encode_avf(&f);
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_avf(&huge).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(t in 0usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u8>()) {
            let data: Vec<u8> = (0..t * h * w).map(|i| (i as u8).wrapping_mul(seed)).collect();
            let f = RawFrames::new(t, h, w, data).unwrap();
            prop_assert_eq!(decode_avf(&encode_avf(&f)).unwrap(), f);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_avf(&bytes);
        }
    }
}
