//! Synthetic two-talker scene with an EEG-like cue that follows the
//! attended talker's amplitude envelope.
//!
//! Both "talkers" are band-limited noises under a slow sinusoidal amplitude
//! modulation. Talker 0 sits low (400-800 Hz carrier, 1.0-1.6 Hz modulation),
//! talker 1 high (1.6-2.4 kHz carrier, 2.4-3.4 Hz modulation). Without the
//! cue nothing in the mixture says which one is attended.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{value, KeyValue};
use crate::eeg::{analytic_signal, bandpass_slice, preprocess, BandSpec, MuaConfig};
use crate::error::{BasenError, Result};
use crate::rng::SeedTree;
use crate::signal::{resample_slice, MultiChannelSeries, SampleBuffer};

const CARRIER_HALF_WIDTH_HZ: f64 = 150.0;
const ENVELOPE_FLOOR: f64 = 0.1;

/// Size and signal parameters of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub audio_rate: f64,
    pub eeg_rate: f64,
    pub eeg_channels: usize,
    pub segment_seconds: f64,
    /// Cue-to-noise ratio of every EEG channel, dB.
    pub cue_snr: f64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 20,
            n_test: 40,
            audio_rate: 8000.0,
            eeg_rate: 128.0,
            eeg_channels: 16,
            segment_seconds: 2.0,
            cue_snr: 10.0,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BasenError::Config(m));
        if !(self.audio_rate > 0.0 && self.eeg_rate > 0.0 && self.segment_seconds > 0.0) {
            return bad("rates and segment length must be positive".into());
        }
        if self.eeg_channels == 0 {
            return bad("eeg_channels must be positive".into());
        }
        if !self.cue_snr.is_finite() {
            return bad("cue_snr must be finite".into());
        }
        for (name, rate) in [("audio_rate", self.audio_rate), ("eeg_rate", self.eeg_rate)] {
            let n = self.segment_seconds * rate;
            if (n - n.round()).abs() > 1e-9 {
                return bad(format!("segment_seconds {} is not a whole number of {name} samples", self.segment_seconds));
            }
        }
        if self.audio_rate < 2.0 * (2400.0 + CARRIER_HALF_WIDTH_HZ) {
            return bad(format!("audio_rate {} cannot carry the 2.55 kHz upper talker", self.audio_rate));
        }
        if self.eeg_rate < 96.0 {
            return bad(format!("eeg_rate {} is below the 96 Hz needed for the gamma band", self.eeg_rate));
        }
        Ok(())
    }

    pub fn audio_len(&self) -> usize {
        (self.segment_seconds * self.audio_rate).round() as usize
    }

    pub fn eeg_len(&self) -> usize {
        (self.segment_seconds * self.eeg_rate).round() as usize
    }
}

impl KeyValue for SyntheticTaskConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "n_train" => self.n_train = value(key, v)?,
            "n_val" => self.n_val = value(key, v)?,
            "n_test" => self.n_test = value(key, v)?,
            "audio_rate" => self.audio_rate = value(key, v)?,
            "eeg_rate" => self.eeg_rate = value(key, v)?,
            "eeg_channels" => self.eeg_channels = value(key, v)?,
            "segment_seconds" => self.segment_seconds = value(key, v)?,
            "cue_snr" => self.cue_snr = value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn pairs(&self) -> Vec<(String, String)> {
        [
            ("n_train", self.n_train.to_string()),
            ("n_val", self.n_val.to_string()),
            ("n_test", self.n_test.to_string()),
            ("audio_rate", self.audio_rate.to_string()),
            ("eeg_rate", self.eeg_rate.to_string()),
            ("eeg_channels", self.eeg_channels.to_string()),
            ("segment_seconds", self.segment_seconds.to_string()),
            ("cue_snr", self.cue_snr.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }
}

/// One generated scene. References are the two scaled addends of the
/// mixture; `eeg` is the raw cue before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExample {
    pub mixture: SampleBuffer,
    pub eeg: MultiChannelSeries,
    pub target: SampleBuffer,
    pub interferer: SampleBuffer,
    pub attended: usize,
}

fn talker(cfg: &SyntheticTaskConfig, rng: &mut impl Rng, which: usize) -> Result<Vec<f64>> {
    let (carrier, am) = if which == 0 { ((400.0, 800.0), (1.0, 1.6)) } else { ((1600.0, 2400.0), (2.4, 3.4)) };
    let fc: f64 = rng.random_range(carrier.0..carrier.1);
    let fm: f64 = rng.random_range(am.0..am.1);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let n = cfg.audio_len();
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let band = BandSpec::new(fc - CARRIER_HALF_WIDTH_HZ, fc + CARRIER_HALF_WIDTH_HZ);
    let carrier = bandpass_slice(&white, band, cfg.audio_rate)?;
    Ok(carrier
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let t = i as f64 / cfg.audio_rate;
            let env = 0.5 + 0.5 * (std::f64::consts::TAU * fm * t + phase).sin();
            c * (ENVELOPE_FLOOR + (1.0 - ENVELOPE_FLOOR) * env)
        })
        .collect())
}

/// Hilbert envelope of `x`, resampled to the EEG rate, zero mean.
pub fn cue_envelope(x: &SampleBuffer, eeg_rate: f64, eeg_len: usize) -> Result<Vec<f64>> {
    let amp = analytic_signal(x.samples()).amplitude;
    let mut env = resample_slice(&amp, x.rate(), eeg_rate)?;
    env.resize(eeg_len, *env.last().unwrap_or(&0.0));
    let mean = env.iter().sum::<f64>() / env.len().max(1) as f64;
    env.iter_mut().for_each(|v| *v -= mean);
    Ok(env)
}

/// Builds one scene. Audio and EEG draw from separate streams of `seeds`,
/// so both values of `attended` give the same mixture.
pub fn make_synthetic_example(cfg: &SyntheticTaskConfig, seeds: &SeedTree, attended: usize) -> Result<SyntheticExample> {
    cfg.validate()?;
    if attended > 1 {
        return Err(BasenError::invalid(format!("attended must be 0 or 1, got {attended}")));
    }
    let mut audio_rng = seeds.stream("audio", 0);
    let s0 = SampleBuffer::new(talker(cfg, &mut audio_rng, 0)?, cfg.audio_rate)?;
    let s1 = SampleBuffer::new(talker(cfg, &mut audio_rng, 1)?, cfg.audio_rate)?;
    let (a, b) = crate::signal::scale_pair(&s0, &s1, 0.0)?;
    let (target, interferer) = if attended == 0 { (a, b) } else { (b, a) };
    let mixture: Vec<f64> = target
        .samples()
        .iter()
        .zip(interferer.samples())
        .map(|(x, y)| x + y)
        .collect();

    let env = cue_envelope(&target, cfg.eeg_rate, cfg.eeg_len())?;
    let env_rms = (env.iter().map(|v| v * v).sum::<f64>() / env.len() as f64).sqrt();
    let noise_std = env_rms * 10f64.powf(-cfg.cue_snr / 20.0);
    let mut eeg_rng = seeds.stream("eeg", 0);
    let channels = (0..cfg.eeg_channels)
        .map(|_| {
            let gain: f64 = eeg_rng.random_range(0.5..1.5);
            env.iter()
                .map(|v| gain * v + noise_std * eeg_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    Ok(SyntheticExample {
        mixture: SampleBuffer::new(mixture, cfg.audio_rate)?,
        eeg: MultiChannelSeries::new(channels, cfg.eeg_rate)?,
        target,
        interferer,
        attended,
    })
}

/// A training-ready scene: EEG already preprocessed.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub mixture: SampleBuffer,
    pub eeg: MultiChannelSeries,
    pub target: SampleBuffer,
    pub interferer: SampleBuffer,
    pub attended: usize,
}

/// Dataset split names, in generation order.
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Attended labels for `n` scenes: as balanced as possible, shuffled.
pub fn attended_labels(n: usize, seeds: &SeedTree, split: &str) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut seeds.stream("labels", split_index(split)));
    labels
}

fn split_index(split: &str) -> u64 {
    SPLITS.iter().position(|s| *s == split).unwrap_or(SPLITS.len()) as u64
}

/// Generates `n` raw scenes of one split. Scene `i` of a split depends only
/// on `(seed, split, i)` and the balanced label draw.
pub fn synthetic_scenes(cfg: &SyntheticTaskConfig, seed: u64, split: &str, n: usize) -> Result<Vec<SyntheticExample>> {
    let root = SeedTree::new(seed);
    let labels = attended_labels(n, &root, split);
    let tree = root.child(split, 0);
    labels
        .iter()
        .enumerate()
        .map(|(i, &attended)| make_synthetic_example(cfg, &tree.child("example", i as u64), attended))
        .collect()
}

/// Example id of scene `i` in `split`.
pub fn example_id(split: &str, i: usize) -> String {
    format!("{split}-{i:04}")
}

impl Example {
    /// Preprocesses the raw cue of a generated scene.
    pub fn from_scene(id: String, scene: SyntheticExample, mua: &MuaConfig) -> Result<Self> {
        Ok(Self {
            id,
            eeg: preprocess(&scene.eeg, mua)?,
            mixture: scene.mixture,
            target: scene.target,
            interferer: scene.interferer,
            attended: scene.attended,
        })
    }
}

/// Generates `n` scenes of one split with preprocessed EEG.
pub fn synthetic_split(cfg: &SyntheticTaskConfig, seed: u64, split: &str, n: usize, mua: &MuaConfig) -> Result<Vec<Example>> {
    synthetic_scenes(cfg, seed, split, n)?
        .into_iter()
        .enumerate()
        .map(|(i, scene)| Example::from_scene(example_id(split, i), scene, mua))
        .collect()
}
