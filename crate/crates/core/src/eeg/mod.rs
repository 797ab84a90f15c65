//! EEG front end: band filtering, analytic signal and the multiunit-activity
//! surrogate that the EEG encoder consumes.

mod filter;
mod hilbert;

pub use filter::{bandpass_slice, design_bandpass, sosfiltfilt, BandSpec, Biquad, FILTER_ORDER};
pub use hilbert::{analytic, analytic_signal, AnalyticSignal};

use crate::error::Result;
use crate::signal::MultiChannelSeries;

/// Broadband cleanup applied to raw EEG before feature extraction.
pub const PREFILTER_BAND: BandSpec = BandSpec::new(0.1, 45.0);
pub const GAMMA_BAND: BandSpec = BandSpec::new(30.0, 45.0);
pub const DELTA_BAND: BandSpec = BandSpec::new(0.5, 4.0);

/// Weights and bands of the neural-activity surrogate
/// `N(t) = a_gamma * |gamma(t)| + a_delta * arg delta(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuaConfig {
    pub a_gamma: f64,
    pub a_delta: f64,
    pub gamma_band: BandSpec,
    pub delta_band: BandSpec,
}

impl Default for MuaConfig {
    fn default() -> Self {
        Self {
            a_gamma: 0.5,
            a_delta: 0.5,
            gamma_band: GAMMA_BAND,
            delta_band: DELTA_BAND,
        }
    }
}

impl MuaConfig {
    pub fn validate(&self, rate: f64) -> Result<()> {
        if !(self.a_gamma.is_finite() && self.a_delta.is_finite()) {
            return Err(crate::BasenError::invalid("MUA weights must be finite"));
        }
        self.gamma_band.validate(rate)?;
        self.delta_band.validate(rate)
    }
}

/// Zero-phase band-pass of every channel.
pub fn bandpass(x: &MultiChannelSeries, band: BandSpec) -> Result<MultiChannelSeries> {
    band.validate(x.rate())?;
    x.map_channels(|c| bandpass_slice(c, band, x.rate()))
}

/// Gamma-band envelope and delta-band phase of one channel.
pub fn mua_terms(x: &[f64], cfg: &MuaConfig, rate: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let gamma = analytic_signal(&bandpass_slice(x, cfg.gamma_band, rate)?).amplitude;
    let delta = analytic_signal(&bandpass_slice(x, cfg.delta_band, rate)?).phase;
    Ok((gamma, delta))
}

/// Per-channel multiunit-activity surrogate. Same shape and rate as `x`.
pub fn mua(x: &MultiChannelSeries, cfg: &MuaConfig) -> Result<MultiChannelSeries> {
    cfg.validate(x.rate())?;
    x.map_channels(|c| {
        let (amp, phase) = mua_terms(c, cfg, x.rate())?;
        Ok(amp
            .iter()
            .zip(&phase)
            .map(|(a, p)| cfg.a_gamma * a + cfg.a_delta * p)
            .collect())
    })
}

/// Full front end: broadband prefilter, then [`mua`].
pub fn preprocess(x: &MultiChannelSeries, cfg: &MuaConfig) -> Result<MultiChannelSeries> {
    mua(&bandpass(x, PREFILTER_BAND)?, cfg)
}
