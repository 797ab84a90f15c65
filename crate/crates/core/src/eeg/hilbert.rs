//! FFT-based analytic signal.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Instantaneous amplitude and phase of a real sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSignal {
    pub amplitude: Vec<f64>,
    /// Wrapped to (-pi, pi]; 0 wherever the amplitude is exactly 0.
    pub phase: Vec<f64>,
}

/// Complex analytic signal `x + i H{x}`.
pub fn analytic(x: &[f64]) -> Vec<Complex<f64>> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // Keep DC (and Nyquist for even n), double positive bins, drop negatives.
    let half = n.div_ceil(2);
    for v in &mut buf[1..half] {
        *v *= 2.0;
    }
    for v in &mut buf[n / 2 + 1..] {
        *v = Complex::new(0.0, 0.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

pub(crate) fn wrapped_phase(z: Complex<f64>) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let p = z.im.atan2(z.re);
    if p <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        p
    }
}

pub fn analytic_signal(x: &[f64]) -> AnalyticSignal {
    let z = analytic(x);
    AnalyticSignal {
        amplitude: z.iter().map(|v| v.norm()).collect(),
        phase: z.iter().map(|&v| wrapped_phase(v)).collect(),
    }
}
