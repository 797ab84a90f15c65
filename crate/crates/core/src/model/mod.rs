//! End-to-end brain-assisted speech enhancement network.
//!
//! Audio is encoded by strided convolutions, EEG by a strided convolution
//! and residual depthwise blocks. The separator runs one stack on the audio
//! embedding, fuses it with the time-aligned EEG embedding, runs the
//! remaining stacks and turns the summed skip paths into one sigmoid mask per
//! source. Masked embeddings are decoded by mirrored transposed convolutions.

mod checkpoint;
mod config;
mod gradcheck;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvGeom, Graph, ParamStore, Real, Tensor, Var};
use crate::error::{BasenError, Result};
use crate::signal::{MultiChannelSeries, SampleBuffer};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
pub use config::{BasenConfig, Fusion};
pub use gradcheck::{model_gradcheck, GRADCHECK_TOLERANCE};
use layers::{Cmca, Conv, DepthConvBlock, PRelu, Stack};

#[derive(Debug, Clone)]
enum FusionModule {
    Cmca(Cmca),
    Concat(Conv),
}

/// Parameters and structure of one network.
#[derive(Debug, Clone)]
pub struct BasenModel<S: Real> {
    cfg: BasenConfig,
    store: ParamStore<S>,
    encoder: Vec<Conv>,
    encoder_acts: Vec<PRelu>,
    eeg_in: Conv,
    eeg_blocks: Vec<DepthConvBlock>,
    stacks: Vec<Stack>,
    fusion: FusionModule,
    mask_act: PRelu,
    mask_out: Conv,
    decoder: Vec<Conv>,
    decoder_acts: Vec<PRelu>,
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `1 x len` waveform per source; index 0 is the attended speaker.
    pub outputs: Vec<Var>,
    /// `C x L_a` mask per source.
    pub masks: Vec<Var>,
    /// Audio embedding `w_x`.
    pub embedding: Var,
}

/// One bounded mask per source, shaped like the audio embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet<S> {
    pub masks: Vec<Tensor<S>>,
}

/// Per-channel linear interpolation of `x` (C x L_e) to `len` frames.
pub fn align_time<S: Real>(g: &mut Graph<'_, S>, x: Var, len: usize) -> Result<Var> {
    g.interp_frames(x, len)
}

impl<S: Real> BasenModel<S> {
    /// Freshly initialized network; weights are a function of `seed`.
    pub fn new(cfg: BasenConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (c, k) = (cfg.channels, cfg.kernel);
        let n_enc = cfg.encoder_strides.len();

        let mut encoder = Vec::with_capacity(n_enc);
        let mut encoder_acts = Vec::new();
        for i in 0..n_enc {
            let cin = if i == 0 { 1 } else { c };
            encoder.push(Conv::new(&mut store, &mut rng, &format!("encoder.{i}"), c, cin, k)?);
            if i + 1 < n_enc {
                encoder_acts.push(PRelu::new(&mut store, &format!("encoder.act{i}"))?);
            }
        }

        let eeg_in = Conv::new(&mut store, &mut rng, "eeg.in", c, cfg.eeg_channels, cfg.eeg_stride)?;
        let eeg_blocks = (0..cfg.eeg_layers)
            .map(|d| DepthConvBlock::new(&mut store, &mut rng, &format!("eeg.{d}"), c, cfg.hidden, cfg.block_kernel, 1 << d, true, false))
            .collect::<Result<_>>()?;

        let mut stacks = vec![Stack::new(&mut store, &mut rng, "stack.0", cfg.stack_depth, c, cfg.hidden, cfg.block_kernel, false)?];
        let fusion = match cfg.fusion {
            Fusion::Cmca | Fusion::AudioOnly => FusionModule::Cmca(Cmca::new(
                &mut store,
                &mut rng,
                cfg.cmca_layers,
                c,
                cfg.attention_kernel,
                cfg.cmca_groups,
            )?),
            Fusion::Concat => FusionModule::Concat(Conv::new(&mut store, &mut rng, "concat.out", c, 2 * c, 1)?),
        };
        for s in 1..cfg.n_stacks {
            let last = s + 1 == cfg.n_stacks;
            stacks.push(Stack::new(&mut store, &mut rng, &format!("stack.{s}"), cfg.stack_depth, c, cfg.hidden, cfg.block_kernel, last)?);
        }
        let mask_act = PRelu::new(&mut store, "mask.act")?;
        let mask_out = Conv::new(&mut store, &mut rng, "mask.out", cfg.n_sources * c, c, 1)?;

        let mut decoder = Vec::with_capacity(n_enc);
        let mut decoder_acts = Vec::new();
        for i in 0..n_enc {
            let cout = if i + 1 == n_enc { 1 } else { c };
            decoder.push(Conv::transposed(&mut store, &mut rng, &format!("decoder.{i}"), c, cout, k)?);
            if i + 1 < n_enc {
                decoder_acts.push(PRelu::new(&mut store, &format!("decoder.act{i}"))?);
            }
        }

        Ok(Self {
            cfg,
            store,
            encoder,
            encoder_acts,
            eeg_in,
            eeg_blocks,
            stacks,
            fusion,
            mask_act,
            mask_out,
            decoder,
            decoder_acts,
        })
    }

    pub fn config(&self) -> &BasenConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Same network in another precision.
    pub fn cast<T: Real>(&self) -> BasenModel<T> {
        BasenModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            encoder_acts: self.encoder_acts.clone(),
            eeg_in: self.eeg_in,
            eeg_blocks: self.eeg_blocks.clone(),
            stacks: self.stacks.clone(),
            fusion: self.fusion.clone(),
            mask_act: self.mask_act,
            mask_out: self.mask_out,
            decoder: self.decoder.clone(),
            decoder_acts: self.decoder_acts.clone(),
        }
    }

    /// Builds a graph over this model's parameters.
    pub fn graph(&self) -> Graph<'_, S> {
        Graph::new(&self.store)
    }

    /// `1 x len` waveform to `C x L_a` embedding; the input is zero-extended
    /// to the padded length first.
    pub fn encode_audio(&self, g: &mut Graph<'_, S>, audio: &[S]) -> Result<Var> {
        let min = self.cfg.min_samples();
        if audio.len() < min {
            return Err(BasenError::invalid(format!(
                "audio input has {} samples; the encoder needs at least {min}",
                audio.len()
            )));
        }
        let mut padded = audio.to_vec();
        padded.resize(self.cfg.padded_len(audio.len()), S::zero());
        let n = padded.len();
        let mut h = g.input(Tensor::new(vec![1, n], padded)?);
        for (i, (conv, &stride)) in self.encoder.iter().zip(&self.cfg.encoder_strides).enumerate() {
            h = conv.apply(g, h, ConvGeom::new(stride, 1, 0))?;
            if let Some(act) = self.encoder_acts.get(i) {
                h = act.apply(g, h)?;
            }
        }
        Ok(h)
    }

    /// `E x frames` EEG to the `C x L_e` multi-level embedding.
    pub fn encode_eeg(&self, g: &mut Graph<'_, S>, eeg: Var) -> Result<Var> {
        let (ch, frames) = g.value(eeg).dims2()?;
        if ch != self.cfg.eeg_channels {
            return Err(BasenError::shape(format!(
                "EEG has {ch} channels, model expects {}",
                self.cfg.eeg_channels
            )));
        }
        if frames < self.cfg.eeg_stride {
            return Err(BasenError::invalid(format!(
                "EEG input has {frames} frames; the encoder needs at least {}",
                self.cfg.eeg_stride
            )));
        }
        let mut h = self.eeg_in.apply(g, eeg, ConvGeom::new(self.cfg.eeg_stride, 1, 0))?;
        let mut total: Option<Var> = None;
        for block in &self.eeg_blocks {
            h = block.apply(g, h)?.0;
            total = Some(match total {
                Some(t) => g.add(t, h)?,
                None => h,
            });
        }
        Ok(total.expect("at least one EEG layer"))
    }

    /// Masks for an audio embedding and an aligned EEG embedding.
    pub fn separate(&self, g: &mut Graph<'_, S>, w_x: Var, e_x: Var) -> Result<Vec<Var>> {
        let (a_x, skip0) = self.stacks[0].apply(g, w_x)?;
        let fused = match &self.fusion {
            FusionModule::Cmca(cmca) => cmca.apply(g, a_x, e_x)?,
            FusionModule::Concat(conv) => {
                let cat = g.concat_rows(&[a_x, e_x])?;
                conv.pointwise(g, cat)?
            }
        };
        let mut h = fused;
        let mut skips = skip0;
        for stack in &self.stacks[1..] {
            let (out, skip) = stack.apply(g, h)?;
            h = out;
            skips = g.add(skips, skip)?;
        }
        let s = self.mask_act.apply(g, skips)?;
        let logits = self.mask_out.pointwise(g, s)?;
        let c = self.cfg.channels;
        (0..self.cfg.n_sources)
            .map(|t| {
                let part = g.slice_rows(logits, t * c, c)?;
                Ok(g.sigmoid(part))
            })
            .collect()
    }

    /// `C x L_a` embedding back to a `1 x len` waveform.
    pub fn decode(&self, g: &mut Graph<'_, S>, h: Var, len: usize) -> Result<Var> {
        let mut h = h;
        let strides: Vec<usize> = self.cfg.encoder_strides.iter().rev().copied().collect();
        for (i, (conv, stride)) in self.decoder.iter().zip(strides).enumerate() {
            h = conv.apply_transposed(g, h, stride)?;
            if let Some(act) = self.decoder_acts.get(i) {
                h = act.apply(g, h)?;
            }
        }
        g.fit_frames(h, len)
    }

    /// Full forward pass on raw samples. `eeg` is `eeg_channels x frames`;
    /// the audio-only variant replaces it with zeros.
    pub fn forward_graph(&self, g: &mut Graph<'_, S>, audio: &[S], eeg: Tensor<S>) -> Result<ForwardVars> {
        let eeg = if self.cfg.fusion == Fusion::AudioOnly {
            Tensor::zeros(eeg.shape())
        } else {
            eeg
        };
        let w_x = self.encode_audio(g, audio)?;
        let e_in = g.input(eeg);
        let e_x = self.encode_eeg(g, e_in)?;
        let frames = g.shape(w_x)[1];
        let e_x = align_time(g, e_x, frames)?;
        let masks = self.separate(g, w_x, e_x)?;
        let outputs = masks
            .iter()
            .map(|&m| {
                let masked = g.mul(w_x, m)?;
                self.decode(g, masked, audio.len())
            })
            .collect::<Result<_>>()?;
        Ok(ForwardVars {
            outputs,
            masks,
            embedding: w_x,
        })
    }

    fn check_inputs(&self, x: &SampleBuffer, eeg: &MultiChannelSeries) -> Result<()> {
        if x.rate() != self.cfg.audio_rate {
            return Err(BasenError::invalid(format!(
                "audio rate {} Hz does not match the model's {} Hz",
                x.rate(),
                self.cfg.audio_rate
            )));
        }
        if eeg.rate() != self.cfg.eeg_rate {
            return Err(BasenError::invalid(format!(
                "EEG rate {} Hz does not match the model's {} Hz",
                eeg.rate(),
                self.cfg.eeg_rate
            )));
        }
        let gap = (x.duration() - eeg.len() as f64 / eeg.rate()).abs();
        if gap > 1.0 / eeg.rate() + 1e-12 {
            return Err(BasenError::invalid(format!(
                "audio spans {:.4} s but EEG spans {:.4} s",
                x.duration(),
                eeg.len() as f64 / eeg.rate()
            )));
        }
        Ok(())
    }

    fn eeg_tensor(eeg: &MultiChannelSeries) -> Result<Tensor<S>> {
        let data = eeg.channels().iter().flatten().map(|&v| S::of(v)).collect();
        Tensor::new(vec![eeg.channel_count(), eeg.len()], data)
    }

    /// One waveform per source, each as long as `x`.
    pub fn forward(&self, x: &SampleBuffer, eeg: &MultiChannelSeries) -> Result<Vec<SampleBuffer>> {
        self.check_inputs(x, eeg)?;
        let audio: Vec<S> = x.samples().iter().map(|&v| S::of(v)).collect();
        let mut g = self.graph();
        let vars = self.forward_graph(&mut g, &audio, Self::eeg_tensor(eeg)?)?;
        vars.outputs
            .iter()
            .map(|&o| SampleBuffer::new(g.value(o).to_f64(), x.rate()))
            .collect()
    }

    /// Masks for one input pair.
    pub fn masks(&self, x: &SampleBuffer, eeg: &MultiChannelSeries) -> Result<MaskSet<S>> {
        self.check_inputs(x, eeg)?;
        let audio: Vec<S> = x.samples().iter().map(|&v| S::of(v)).collect();
        let mut g = self.graph();
        let vars = self.forward_graph(&mut g, &audio, Self::eeg_tensor(eeg)?)?;
        Ok(MaskSet {
            masks: vars.masks.iter().map(|&m| g.value(m).clone()).collect(),
        })
    }

    /// Names and shapes of every parameter of the audio path (encoder,
    /// separator stacks, mask head and decoder).
    pub fn audio_branch_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.store
            .iter()
            .filter(|p| !(p.name().starts_with("eeg.") || p.name().starts_with("cmca.") || p.name().starts_with("concat.")))
            .map(|p| (p.name().to_owned(), p.value().shape().to_vec()))
            .collect()
    }
}

#[cfg(test)]
mod tests;
