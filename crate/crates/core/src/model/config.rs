use std::fmt;
use std::str::FromStr;

use crate::config::{join, list, value, KeyValue};
use crate::error::{BasenError, Result};

/// How the audio and EEG branches are combined inside the separator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Coupled multi-layer cross attention.
    Cmca,
    /// Channel concatenation followed by a 1x1 convolution.
    Concat,
    /// The cross-attention network fed an all-zero EEG input.
    AudioOnly,
}

impl Fusion {
    pub const ALL: [Fusion; 3] = [Fusion::AudioOnly, Fusion::Concat, Fusion::Cmca];

    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::Cmca => "cmca",
            Fusion::Concat => "concat",
            Fusion::AudioOnly => "audio-only",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fusion {
    type Err = BasenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cmca" => Ok(Fusion::Cmca),
            "concat" => Ok(Fusion::Concat),
            "audio-only" | "audio_only" => Ok(Fusion::AudioOnly),
            _ => Err(BasenError::Config(format!("unknown fusion {s:?} (cmca, concat, audio-only)"))),
        }
    }
}

/// Architecture of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct BasenConfig {
    pub audio_rate: f64,
    pub eeg_rate: f64,
    pub eeg_channels: usize,
    /// Feature channels `C` shared by both branches.
    pub channels: usize,
    /// Hidden channels inside each depthwise block.
    pub hidden: usize,
    /// Kernel of every audio encoder/decoder convolution.
    pub kernel: usize,
    pub encoder_strides: Vec<usize>,
    /// Blocks per separator stack; dilations run 1, 2, ..., 2^(D-1).
    pub stack_depth: usize,
    pub n_stacks: usize,
    pub eeg_layers: usize,
    pub eeg_stride: usize,
    pub cmca_layers: usize,
    pub n_sources: usize,
    pub cmca_groups: usize,
    pub block_kernel: usize,
    pub attention_kernel: usize,
    pub fusion: Fusion,
}

impl Default for BasenConfig {
    /// 14.7 kHz audio, 128-channel EEG, about 0.6M parameters.
    fn default() -> Self {
        Self {
            audio_rate: 14700.0,
            eeg_rate: 128.0,
            eeg_channels: 128,
            channels: 64,
            hidden: 64,
            kernel: 16,
            encoder_strides: vec![8, 8],
            stack_depth: 8,
            n_stacks: 3,
            eeg_layers: 8,
            eeg_stride: 8,
            cmca_layers: 3,
            n_sources: 2,
            cmca_groups: 1,
            block_kernel: 3,
            attention_kernel: 3,
            fusion: Fusion::Cmca,
        }
    }
}

impl BasenConfig {
    /// 8 kHz audio with 16 EEG channels, sized for CPU training.
    pub fn desk() -> Self {
        Self {
            audio_rate: 8000.0,
            eeg_channels: 16,
            channels: 32,
            hidden: 32,
            stack_depth: 4,
            ..Self::default()
        }
    }

    /// Smallest useful network: 2 kHz audio, 4 EEG channels, C=8.
    pub fn tiny() -> Self {
        Self {
            audio_rate: 2000.0,
            eeg_channels: 4,
            channels: 8,
            hidden: 8,
            stack_depth: 2,
            cmca_layers: 2,
            ..Self::default()
        }
    }

    pub fn with_fusion(mut self, fusion: Fusion) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BasenError::Config(m));
        if !(self.audio_rate > 0.0 && self.audio_rate.is_finite()) || !(self.eeg_rate > 0.0 && self.eeg_rate.is_finite()) {
            return bad("sample rates must be positive".into());
        }
        if self.channels == 0 || self.hidden == 0 || self.eeg_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.stack_depth == 0 || self.cmca_layers == 0 || self.eeg_layers == 0 {
            return bad("stack_depth, cmca_layers and eeg_layers must be at least 1".into());
        }
        if self.n_stacks < 2 {
            return bad(format!("n_stacks must be at least 2, got {}", self.n_stacks));
        }
        if self.n_sources < 2 {
            return bad(format!("n_sources must be at least 2, got {}", self.n_sources));
        }
        if self.cmca_groups == 0 || !self.channels.is_multiple_of(self.cmca_groups) {
            return bad(format!("channels {} not divisible by cmca_groups {}", self.channels, self.cmca_groups));
        }
        if self.encoder_strides.is_empty() || self.encoder_strides.iter().any(|&s| s == 0 || s > self.kernel) {
            return bad(format!(
                "encoder strides {:?} must be non-empty and within 1..=kernel ({})",
                self.encoder_strides, self.kernel
            ));
        }
        if self.eeg_stride == 0 {
            return bad("eeg_stride must be positive".into());
        }
        if self.block_kernel.is_multiple_of(2) || self.attention_kernel.is_multiple_of(2) {
            return bad("block_kernel and attention_kernel must be odd".into());
        }
        Ok(())
    }

    /// Total audio downsampling factor.
    pub fn hop(&self) -> usize {
        self.encoder_strides.iter().product()
    }

    /// Input samples seen by one output frame of the encoder chain.
    pub fn receptive_field(&self) -> usize {
        let mut span = 1;
        let mut jump = 1;
        for &s in &self.encoder_strides {
            span += (self.kernel - 1) * jump;
            jump *= s;
        }
        span
    }

    /// Shortest accepted waveform.
    pub fn min_samples(&self) -> usize {
        self.hop()
    }

    /// Encoder frames for `len` samples: the input is zero-extended at the
    /// end to the shortest length the conv chain covers exactly.
    pub fn frames_for(&self, len: usize) -> usize {
        let span = self.receptive_field();
        if len <= span {
            1
        } else {
            (len - span).div_ceil(self.hop()) + 1
        }
    }

    /// Zero-extended input length for `len` samples.
    pub fn padded_len(&self, len: usize) -> usize {
        (self.frames_for(len) - 1) * self.hop() + self.receptive_field()
    }
}

impl KeyValue for BasenConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "audio_rate" => self.audio_rate = value(key, v)?,
            "eeg_rate" => self.eeg_rate = value(key, v)?,
            "eeg_channels" => self.eeg_channels = value(key, v)?,
            "channels" => self.channels = value(key, v)?,
            "hidden" => self.hidden = value(key, v)?,
            "kernel" => self.kernel = value(key, v)?,
            "encoder_strides" => self.encoder_strides = list(key, v)?,
            "stack_depth" => self.stack_depth = value(key, v)?,
            "n_stacks" => self.n_stacks = value(key, v)?,
            "eeg_layers" => self.eeg_layers = value(key, v)?,
            "eeg_stride" => self.eeg_stride = value(key, v)?,
            "cmca_layers" => self.cmca_layers = value(key, v)?,
            "n_sources" => self.n_sources = value(key, v)?,
            "cmca_groups" => self.cmca_groups = value(key, v)?,
            "block_kernel" => self.block_kernel = value(key, v)?,
            "attention_kernel" => self.attention_kernel = value(key, v)?,
            "fusion" => self.fusion = v.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn pairs(&self) -> Vec<(String, String)> {
        [
            ("audio_rate", self.audio_rate.to_string()),
            ("eeg_rate", self.eeg_rate.to_string()),
            ("eeg_channels", self.eeg_channels.to_string()),
            ("channels", self.channels.to_string()),
            ("hidden", self.hidden.to_string()),
            ("kernel", self.kernel.to_string()),
            ("encoder_strides", join(&self.encoder_strides)),
            ("stack_depth", self.stack_depth.to_string()),
            ("n_stacks", self.n_stacks.to_string()),
            ("eeg_layers", self.eeg_layers.to_string()),
            ("eeg_stride", self.eeg_stride.to_string()),
            ("cmca_layers", self.cmca_layers.to_string()),
            ("n_sources", self.n_sources.to_string()),
            ("cmca_groups", self.cmca_groups.to_string()),
            ("block_kernel", self.block_kernel.to_string()),
            ("attention_kernel", self.attention_kernel.to_string()),
            ("fusion", self.fusion.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{apply_all, parse_kv};

    #[test]
    fn kv_round_trip() {
        for cfg in [BasenConfig::default(), BasenConfig::desk(), BasenConfig::tiny().with_fusion(Fusion::Concat)] {
            let text = cfg.to_kv_text();
            let mut back = BasenConfig::default();
            apply_all(&mut back, &parse_kv(&text).unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = BasenConfig::default();
        let err = apply_all(&mut cfg, &parse_kv("chanels=3").unwrap()).unwrap_err();
        assert!(err.to_string().contains("chanels"));
    }

    #[test]
    fn validation() {
        for cfg in [BasenConfig::default(), BasenConfig::desk(), BasenConfig::tiny()] {
            cfg.validate().unwrap();
        }
        let cases: Vec<fn(&mut BasenConfig)> = vec![
            |c| c.channels = 0,
            |c| c.stack_depth = 0,
            |c| c.cmca_layers = 0,
            |c| c.n_sources = 1,
            |c| c.cmca_groups = 3,
            |c| c.encoder_strides = vec![],
            |c| c.encoder_strides = vec![32],
            |c| c.block_kernel = 4,
        ];
        for f in cases {
            let mut cfg = BasenConfig::default();
            f(&mut cfg);
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn encoder_geometry() {
        let cfg = BasenConfig::default();
        assert_eq!(cfg.hop(), 64);
        assert_eq!(cfg.receptive_field(), 136);
        // Two stride-8 K=16 convs with ceil rounding.
        for len in [64usize, 136, 137, 200, 14700, 16000, 29400] {
            let l1 = if len <= 16 { 1 } else { (len - 16).div_ceil(8) + 1 };
            let l1 = l1.max(16);
            let l2 = (l1 - 16).div_ceil(8) + 1;
            assert_eq!(cfg.frames_for(len), l2, "len {len}");
            let p = cfg.padded_len(len);
            assert!(p >= len && p - len < 64 + 136);
            assert_eq!((p - 16) % 8, 0);
        }
        assert_eq!(cfg.frames_for(29400), 459);
    }
}
