//! Band-limited rational resampling with a Kaiser-windowed sinc.
//!
//! The prototype spans 64 taps at the lower of the two rates. For a rate
//! pair reducible to `up/down` with a small `up`, one filter per output
//! phase is precomputed; otherwise taps are evaluated per output sample.
//! Input samples beyond either end are replaced by the nearest edge sample,
//! which keeps constant signals exact everywhere and the map linear.

use super::buffer::{MultiChannelSeries, SampleBuffer};
use crate::error::{BasenError, Result};

const PROTOTYPE_TAPS: f64 = 64.0;
const KAISER_BETA: f64 = 8.0;
/// Cutoff as a fraction of the lower Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.92;
const MAX_PRECOMPUTED_PHASES: u64 = 4096;

/// Polyphase bank: up factor, down factor, (first input index, taps) per phase.
type PhaseBank = (u64, u64, Vec<(isize, Vec<f64>)>);

pub struct Resampler {
    old_rate: f64,
    new_rate: f64,
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    half_width: f64,
    phases: Option<PhaseBank>,
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn as_integer(rate: f64) -> Option<u64> {
    let r = rate.round();
    ((rate - r).abs() < 1e-9 && r >= 1.0).then_some(r as u64)
}

impl Resampler {
    pub fn new(old_rate: f64, new_rate: f64) -> Result<Self> {
        for r in [old_rate, new_rate] {
            if !(r.is_finite() && r > 0.0) {
                return Err(BasenError::invalid(format!("sample rate must be positive, got {r}")));
            }
        }
        let ratio = (new_rate / old_rate).min(1.0);
        let cutoff = 0.5 * ratio * CUTOFF_FRACTION;
        let half_width = PROTOTYPE_TAPS / 2.0 / ratio;
        let mut rs = Self {
            old_rate,
            new_rate,
            cutoff,
            half_width,
            phases: None,
        };
        if let (Some(o), Some(n)) = (as_integer(old_rate), as_integer(new_rate)) {
            let g = gcd(o, n);
            let (up, down) = (n / g, o / g);
            if up <= MAX_PRECOMPUTED_PHASES {
                let bank = (0..up)
                    .map(|p| rs.taps_at(p as f64 / up as f64))
                    .collect();
                rs.phases = Some((up, down, bank));
            }
        }
        Ok(rs)
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len as f64 * self.new_rate / self.old_rate).round() as usize
    }

    /// Normalized taps for an output sample whose position falls `frac`
    /// (in [0,1)) past an integer input index. Returns the offset of the first
    /// tap relative to that index.
    fn taps_at(&self, frac: f64) -> (isize, Vec<f64>) {
        let first = (frac - self.half_width).ceil() as isize;
        let last = (frac + self.half_width).floor() as isize;
        let mut taps: Vec<f64> = (first..=last)
            .map(|i| {
                let tau = i as f64 - frac;
                let u = tau / self.half_width;
                if u.abs() >= 1.0 {
                    return 0.0;
                }
                let arg = 2.0 * self.cutoff * tau;
                let sinc = if arg == 0.0 {
                    1.0
                } else {
                    (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
                };
                sinc * bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt())
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        (first, taps)
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        if self.old_rate == self.new_rate || x.is_empty() {
            return if x.is_empty() { Vec::new() } else { x.to_vec() };
        }
        let n_out = self.output_len(x.len());
        let last = x.len() as isize - 1;
        let apply = |base: isize, first: isize, taps: &[f64]| -> f64 {
            taps.iter()
                .enumerate()
                .map(|(j, t)| {
                    let idx = (base + first + j as isize).clamp(0, last) as usize;
                    t * x[idx]
                })
                .sum()
        };
        match &self.phases {
            Some((up, down, bank)) => (0..n_out as u64)
                .map(|n| {
                    let pos = n * down;
                    let (first, taps) = &bank[(pos % up) as usize];
                    apply((pos / up) as isize, *first, taps)
                })
                .collect(),
            None => (0..n_out)
                .map(|n| {
                    let pos = n as f64 * self.old_rate / self.new_rate;
                    let base = pos.floor();
                    let (first, taps) = self.taps_at(pos - base);
                    apply(base as isize, first, &taps)
                })
                .collect(),
        }
    }
}

pub fn resample_slice(x: &[f64], old_rate: f64, new_rate: f64) -> Result<Vec<f64>> {
    Ok(Resampler::new(old_rate, new_rate)?.process(x))
}

/// Types that can be brought to a new sample rate.
pub trait Resample: Sized {
    fn resample_to(&self, new_rate: f64) -> Result<Self>;
}

impl Resample for SampleBuffer {
    fn resample_to(&self, new_rate: f64) -> Result<Self> {
        let out = resample_slice(self.samples(), self.rate(), new_rate)?;
        SampleBuffer::new(out, new_rate)
    }
}

impl Resample for MultiChannelSeries {
    fn resample_to(&self, new_rate: f64) -> Result<Self> {
        let rs = Resampler::new(self.rate(), new_rate)?;
        let data = self.channels().iter().map(|c| rs.process(c)).collect();
        MultiChannelSeries::new(data, new_rate)
    }
}

pub fn resample<T: Resample>(x: &T, new_rate: f64) -> Result<T> {
    x.resample_to(new_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, rate: f64, len: usize) -> Vec<f64> {
        (0..len).map(|n| (2.0 * PI * freq * n as f64 / rate).sin()).collect()
    }

    /// Amplitude of `freq` in `x[range]` by single-bin correlation.
    fn tone_amplitude(x: &[f64], freq: f64, rate: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * n as f64 / rate;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    #[test]
    fn eeg_rate_lengths() {
        let x = SampleBuffer::new(tone(3.0, 512.0, 512), 512.0).unwrap();
        let y = resample(&x, 256.0).unwrap();
        let z = resample(&y, 128.0).unwrap();
        assert_eq!(y.len(), 256);
        assert_eq!(z.len(), 128);
        assert_eq!(resample(&x, 128.0).unwrap().len(), 128);
    }

    #[test]
    fn identity_is_exact() {
        let x = SampleBuffer::new(tone(440.0, 8000.0, 1000), 8000.0).unwrap();
        assert_eq!(resample(&x, 8000.0).unwrap(), x);
    }

    #[test]
    fn dc_preserved() {
        for (a, b) in [(44100.0, 14700.0), (8000.0, 14700.0), (512.0, 128.0), (1000.0, 333.3)] {
            let y = resample_slice(&vec![0.7; 2000], a, b).unwrap();
            assert!(y.iter().all(|v| (v - 0.7).abs() < 1e-3), "{a}->{b}");
        }
    }

    #[test]
    fn tone_survives() {
        for (a, b, f) in [(44100.0, 14700.0, 2000.0), (14700.0, 44100.0, 3000.0), (512.0, 128.0, 20.0), (8000.0, 14700.0, 1000.0)] {
            let x = tone(f, a, (a * 2.0) as usize);
            let y = resample_slice(&x, a, b).unwrap();
            assert_eq!(y.len(), (x.len() as f64 * b / a).round() as usize);
            let q = y.len() / 4;
            let mid = &y[q..y.len() - q];
            let amp = tone_amplitude(mid, f, b);
            assert!((amp - 1.0).abs() < 0.01, "{a}->{b} at {f}: {amp}");
        }
    }

    #[test]
    fn rejects_aliases() {
        let x = tone(100.0, 512.0, 2048);
        let y = resample_slice(&x, 512.0, 128.0).unwrap();
        let q = y.len() / 4;
        // 100 Hz is above the output Nyquist and would fold to 28 Hz.
        assert!(tone_amplitude(&y[q..y.len() - q], 28.0, 128.0) < 0.01);
    }

    #[test]
    fn linear_in_amplitude() {
        let x = tone(300.0, 8000.0, 800);
        let a = 3.7;
        let y1 = resample_slice(&x, 8000.0, 14700.0).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| a * v).collect();
        let y2 = resample_slice(&xs, 8000.0, 14700.0).unwrap();
        for (p, q) in y1.iter().zip(&y2) {
            assert!((a * p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn non_integer_rates_use_direct_path() {
        let rs = Resampler::new(1000.5, 333.0).unwrap();
        assert!(rs.phases.is_none());
        assert!(Resampler::new(0.0, 10.0).is_err());
    }
}
