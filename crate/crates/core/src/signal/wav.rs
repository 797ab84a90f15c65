//! 16-bit PCM mono WAV I/O. Quantization happens here and nowhere else.

use std::path::Path;

use super::buffer::SampleBuffer;
use crate::error::{BasenError, Result};

const FULL_SCALE: f64 = 32768.0;

pub fn read_wav(path: impl AsRef<Path>) -> Result<SampleBuffer> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| BasenError::io(path, e))?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file))
        .map_err(|e| BasenError::MalformedWav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(BasenError::UnsupportedWav(format!(
            "{} channels (mono only)",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(BasenError::UnsupportedWav(format!(
            "{:?} {}-bit (16-bit PCM only)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| BasenError::MalformedWav(e.to_string()))?;
    SampleBuffer::new(samples, f64::from(spec.sample_rate))
}

/// Writes `x` as 16-bit PCM. Samples outside [-1, 1) are clamped.
pub fn write_wav(path: impl AsRef<Path>, x: &SampleBuffer) -> Result<()> {
    let path = path.as_ref();
    let rate = x.rate().round();
    if (rate - x.rate()).abs() > 1e-9 || rate > f64::from(u32::MAX) {
        return Err(BasenError::UnsupportedWav(format!(
            "non-integer sample rate {}",
            x.rate()
        )));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => BasenError::io(path, io),
        other => BasenError::MalformedWav(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    let mut clamped = 0usize;
    for &s in x.samples() {
        let q = (s * FULL_SCALE).round();
        let v = q.clamp(-FULL_SCALE, FULL_SCALE - 1.0);
        if v != q {
            clamped += 1;
        }
        writer.write_sample(v as i16).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)?;
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} samples outside [-1, 1)", path.display());
    }
    Ok(())
}
