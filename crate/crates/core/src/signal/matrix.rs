//! Self-describing binary container for multichannel series.
//!
//! ```text
//! BASEN-MAT 1\n
//! rate=<float>\n
//! shape=<C>x<T>\n
//! \n
//! C*T little-endian f32, channel-major
//! ```

use std::io::Write;
use std::path::Path;

use super::buffer::MultiChannelSeries;
use crate::error::{BasenError, Result};

const MAGIC: &str = "BASEN-MAT 1";

pub fn encode_matrix(m: &MultiChannelSeries) -> Vec<u8> {
    let mut out = format!(
        "{MAGIC}\nrate={}\nshape={}x{}\n\n",
        m.rate(),
        m.channel_count(),
        m.len()
    )
    .into_bytes();
    out.reserve(4 * m.channel_count() * m.len());
    for row in m.channels() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Splits off one `\n`-terminated header line.
fn header_line<'a>(bytes: &mut &'a [u8]) -> Result<&'a str> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| BasenError::MalformedMatrix("unterminated header".into()))?;
    let line = std::str::from_utf8(&bytes[..end])
        .map_err(|_| BasenError::MalformedMatrix("header is not UTF-8".into()))?;
    *bytes = &bytes[end + 1..];
    Ok(line)
}

pub fn decode_matrix(mut bytes: &[u8]) -> Result<MultiChannelSeries> {
    let bad = |m: String| BasenError::MalformedMatrix(m);
    if header_line(&mut bytes)? != MAGIC {
        return Err(bad("bad magic line".into()));
    }
    let rate: f64 = header_line(&mut bytes)?
        .strip_prefix("rate=")
        .and_then(|r| r.parse().ok())
        .ok_or_else(|| bad("missing or invalid rate".into()))?;
    let shape = header_line(&mut bytes)?
        .strip_prefix("shape=")
        .ok_or_else(|| bad("missing shape".into()))?
        .to_owned();
    let (c, t) = shape
        .split_once('x')
        .and_then(|(c, t)| Some((c.parse::<usize>().ok()?, t.parse::<usize>().ok()?)))
        .ok_or_else(|| bad(format!("invalid shape {shape:?}")))?;
    if !header_line(&mut bytes)?.is_empty() {
        return Err(bad("missing blank line after header".into()));
    }
    let need = c
        .checked_mul(t)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("shape overflows".into()))?;
    if bytes.len() < need {
        return Err(bad("payload shorter than header shape".into()));
    }
    if bytes.len() > need {
        return Err(bad("payload longer than header shape".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    let data = if t == 0 {
        vec![Vec::new(); c]
    } else {
        values.chunks(t).map(|r| r.to_vec()).collect()
    };
    MultiChannelSeries::new(data, rate)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &MultiChannelSeries) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| BasenError::io(path, e))?;
    f.write_all(&encode_matrix(m))
        .map_err(|e| BasenError::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MultiChannelSeries> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| BasenError::io(path, e))?;
    decode_matrix(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f32_grid(c: usize, t: usize) -> MultiChannelSeries {
        let data = (0..c)
            .map(|i| (0..t).map(|j| f64::from(((i * t + j) as f32 * 0.37).sin())).collect())
            .collect();
        MultiChannelSeries::new(data, 128.0).unwrap()
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mat");
        let m = f32_grid(4, 100);
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);

        let eeg = f32_grid(128, 256);
        write_matrix(&p, &eeg).unwrap();
        let back = read_matrix(&p).unwrap();
        assert_eq!(back.channel_count(), 128);
        assert_eq!(back, eeg);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_matrix(&f32_grid(2, 3));
        assert!(bytes.starts_with(b"BASEN-MAT 1\nrate=128\nshape=2x3\n\n"));
        assert_eq!(bytes.len(), 32 + 24);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_matrix(&f32_grid(4, 100));
        bytes.truncate(bytes.len() - 3);
        let err = decode_matrix(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload shorter than header shape"));
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_matrix(b"").is_err());
        assert!(decode_matrix(b"BASEN-MAT 2\nrate=1\nshape=1x1\n\n\0\0\0\0").is_err());
        assert!(decode_matrix(b"BASEN-MAT 1\nrate=x\nshape=1x1\n\n\0\0\0\0").is_err());
        assert!(decode_matrix(b"BASEN-MAT 1\nrate=1\nshape=1by1\n\n\0\0\0\0").is_err());
        assert!(decode_matrix(b"BASEN-MAT 1\nrate=1\nshape=1x1\n\0\0\0\0").is_err());
        assert!(decode_matrix(b"BASEN-MAT 1\nrate=1\nshape=1x1\n\n\0\0\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn f32_values_roundtrip(v in prop::collection::vec(-1e6f32..1e6, 1..64), rate in 1.0f64..50000.0) {
            let m = MultiChannelSeries::new(vec![v.iter().map(|&x| f64::from(x)).collect()], rate).unwrap();
            prop_assert_eq!(decode_matrix(&encode_matrix(&m)).unwrap(), m);
        }
    }
}
