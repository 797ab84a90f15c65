//! Butterworth band filters as second-order sections, applied forward and
//! backward for zero phase.

use crate::error::{BasenError, Result};

/// Pass band in Hz. `low_hz == 0` means low-pass only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub const fn new(low_hz: f64, high_hz: f64) -> Self {
        Self { low_hz, high_hz }
    }

    pub fn validate(&self, rate: f64) -> Result<()> {
        let ok = self.low_hz.is_finite()
            && self.high_hz.is_finite()
            && self.low_hz >= 0.0
            && self.low_hz < self.high_hz
            && self.high_hz < rate / 2.0;
        if ok {
            Ok(())
        } else {
            Err(BasenError::invalid(format!(
                "band {}-{} Hz is invalid at {} Hz (need 0 <= low < high < {} Hz)",
                self.low_hz,
                self.high_hz,
                rate,
                rate / 2.0
            )))
        }
    }
}

/// Butterworth order used for each band edge.
pub const FILTER_ORDER: usize = 8;

/// One biquad, `b0 b1 b2 / 1 a1 a2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State of the transposed direct form II realization after a unit step
    /// has settled.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Edge {
    Low,
    High,
}

/// Sections for a digital Butterworth low- or high-pass, bilinear transform
/// with pre-warping.
fn butterworth(order: usize, cutoff_hz: f64, rate: f64, edge: Edge) -> Vec<Biquad> {
    let w = (std::f64::consts::PI * cutoff_hz / rate).tan();
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 0..order / 2 {
        // s^2 + q s + 1 for the conjugate pole pair at angle (2k+1)pi/2n.
        let q = 2.0 * (std::f64::consts::PI * (2 * k + 1) as f64 / (2 * order) as f64).sin();
        let a0 = 1.0 + q * w + w * w;
        let a = [(2.0 * w * w - 2.0) / a0, (1.0 - q * w + w * w) / a0];
        let b = match edge {
            Edge::Low => [w * w / a0, 2.0 * w * w / a0, w * w / a0],
            Edge::High => [1.0 / a0, -2.0 / a0, 1.0 / a0],
        };
        sections.push(Biquad { b, a });
    }
    if order % 2 == 1 {
        let a0 = 1.0 + w;
        let a = [(w - 1.0) / a0, 0.0];
        let b = match edge {
            Edge::Low => [w / a0, w / a0, 0.0],
            Edge::High => [1.0 / a0, -1.0 / a0, 0.0],
        };
        sections.push(Biquad { b, a });
    }
    sections
}

/// Sections realizing `band` at `rate`.
pub fn design_bandpass(band: BandSpec, rate: f64, order: usize) -> Result<Vec<Biquad>> {
    band.validate(rate)?;
    let mut sos = butterworth(order, band.high_hz, rate, Edge::Low);
    if band.low_hz > 0.0 {
        sos.extend(butterworth(order, band.low_hz, rate, Edge::High));
    }
    Ok(sos)
}

fn sosfilt(sos: &[Biquad], x: &mut [f64], initial: Option<f64>) {
    let mut scale = 1.0;
    for s in sos {
        let [mut z1, mut z2] = match initial {
            Some(x0) => {
                let st = s.step_state();
                [st[0] * scale * x0, st[1] * scale * x0]
            }
            None => [0.0, 0.0],
        };
        scale *= s.dc_gain();
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b[0] * xin + z1;
            z1 = s.b[1] * xin - s.a[0] * y + z2;
            z2 = s.b[2] * xin - s.a[1] * y;
            *v = y;
        }
    }
}

/// Zero-phase filtering with odd-extension padding and steady-state initial
/// conditions at both ends.
pub fn sosfiltfilt(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * sos.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let x0 = ext[0];
    sosfilt(sos, &mut ext, Some(x0));
    ext.reverse();
    let y0 = ext[0];
    sosfilt(sos, &mut ext, Some(y0));
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase band-pass of one channel.
pub fn bandpass_slice(x: &[f64], band: BandSpec, rate: f64) -> Result<Vec<f64>> {
    let sos = design_bandpass(band, rate, FILTER_ORDER)?;
    Ok(sosfiltfilt(&sos, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(f: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / rate).cos()).collect()
    }

    /// Single-bin DFT amplitude of `f` over `x`.
    fn dft_amplitude(x: &[f64], f: f64, rate: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * f * n as f64 / rate;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        2.0 * re.hypot(im) / x.len() as f64
    }

    fn mid(x: &[f64]) -> &[f64] {
        &x[x.len() / 4..3 * x.len() / 4]
    }

    #[test]
    fn lowpass_dc_gain_is_one() {
        for s in butterworth(FILTER_ORDER, 45.0, 128.0, Edge::Low) {
            assert!((s.dc_gain() - 1.0).abs() < 1e-12);
        }
        for s in butterworth(5, 2.0, 128.0, Edge::High) {
            assert!(s.dc_gain().abs() < 1e-12);
        }
    }

    #[test]
    fn mains_tone_rejected() {
        let band = BandSpec::new(0.1, 45.0);
        let rate = 128.0;
        // 64 s keeps whole cycles of both tones in the middle half.
        let x = tone(50.0, rate, 128 * 64);
        let y = bandpass_slice(&x, band, rate).unwrap();
        let att = 20.0 * (dft_amplitude(mid(&y), 50.0, rate) / dft_amplitude(mid(&x), 50.0, rate)).log10();
        assert!(att <= -40.0, "50 Hz attenuation {att} dB");
    }

    #[test]
    fn in_band_tone_kept() {
        let rate = 128.0;
        let x = tone(10.0, rate, 128 * 64);
        let y = bandpass_slice(&x, BandSpec::new(0.1, 45.0), rate).unwrap();
        let a = dft_amplitude(mid(&y), 10.0, rate);
        assert!((a - 1.0).abs() < 0.05, "{a}");
    }

    #[test]
    fn octave_below_rejected() {
        let rate = 128.0;
        let x = tone(0.25, rate, 128 * 256);
        let y = bandpass_slice(&x, BandSpec::new(0.5, 4.0), rate).unwrap();
        let a = dft_amplitude(mid(&y), 0.25, rate);
        assert!(20.0 * a.log10() <= -40.0, "{a}");
    }

    #[test]
    fn zero_phase() {
        let rate = 128.0;
        let x = tone(10.0, rate, 2048);
        let y = bandpass_slice(&x, BandSpec::new(0.1, 45.0), rate).unwrap();
        let (a, b) = (mid(&x), mid(&y));
        let xcorr = |lag: isize| -> f64 {
            (16..a.len() - 16)
                .map(|i| a[i] * b[(i as isize + lag) as usize])
                .sum()
        };
        let best = (-6..=6).max_by(|&p, &q| xcorr(p).total_cmp(&xcorr(q))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn zero_in_zero_out() {
        let y = bandpass_slice(&[0.0; 300], BandSpec::new(0.1, 45.0), 128.0).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(bandpass_slice(&[], BandSpec::new(0.1, 45.0), 128.0).unwrap().is_empty());
        assert_eq!(bandpass_slice(&[1.0], BandSpec::new(0.1, 45.0), 128.0).unwrap().len(), 1);
    }

    #[test]
    fn band_validation() {
        assert!(BandSpec::new(0.1, 45.0).validate(128.0).is_ok());
        assert!(BandSpec::new(0.1, 64.0).validate(128.0).is_err());
        assert!(BandSpec::new(5.0, 4.0).validate(128.0).is_err());
        assert!(BandSpec::new(-1.0, 4.0).validate(128.0).is_err());
        assert!(bandpass_slice(&[0.0; 10], BandSpec::new(30.0, 70.0), 128.0).is_err());
    }
}
