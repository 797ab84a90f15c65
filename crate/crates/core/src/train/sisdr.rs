//! Scale-invariant signal-to-distortion ratio.

use crate::error::{BasenError, Result};
use crate::signal::SampleBuffer;

/// Reported SI-SDR is clamped to +-this many dB so aggregates stay finite.
pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Projection of an estimate onto its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SiSdrTerms {
    /// `(est . s / |s|^2) s`, colinear with the reference.
    pub target: Vec<f64>,
    /// `target - est`.
    pub residual: Vec<f64>,
    /// `est . s`.
    pub dot: f64,
    pub target_energy: f64,
    pub residual_energy: f64,
}

impl SiSdrTerms {
    pub fn compute(est: &[f64], reference: &[f64]) -> Result<Self> {
        if est.len() != reference.len() {
            return Err(BasenError::shape(format!(
                "SI-SDR length mismatch: estimate {} vs reference {}",
                est.len(),
                reference.len()
            )));
        }
        let ref_energy: f64 = reference.iter().map(|s| s * s).sum();
        if ref_energy == 0.0 {
            return Err(BasenError::invalid("SI-SDR reference is silent"));
        }
        let dot: f64 = est.iter().zip(reference).map(|(e, s)| e * s).sum();
        let alpha = dot / ref_energy;
        let target: Vec<f64> = reference.iter().map(|s| alpha * s).collect();
        let residual: Vec<f64> = target.iter().zip(est).map(|(t, e)| t - e).collect();
        Ok(Self {
            target_energy: target.iter().map(|v| v * v).sum(),
            residual_energy: residual.iter().map(|v| v * v).sum(),
            target,
            residual,
            dot,
        })
    }

    /// Unclamped ratio in dB; `+inf` for a zero residual.
    pub fn db(&self) -> f64 {
        10.0 * (self.target_energy / self.residual_energy).log10()
    }
}

/// SI-SDR in dB, clamped to `[-60, 60]`.
pub fn si_sdr_slice(est: &[f64], reference: &[f64]) -> Result<f64> {
    let db = SiSdrTerms::compute(est, reference)?.db();
    Ok(if db.is_nan() { -SI_SDR_CAP_DB } else { db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB) })
}

pub fn si_sdr(est: &SampleBuffer, reference: &SampleBuffer) -> Result<f64> {
    si_sdr_slice(est.samples(), reference.samples())
}
