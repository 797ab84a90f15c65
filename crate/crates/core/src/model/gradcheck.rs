use rand::Rng;

use super::{BasenConfig, BasenModel};
use crate::autodiff::gradcheck::{check_params, GradCheck, FD_STEP};
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::rng::SeedTree;

/// Largest per-tensor relative error accepted by [`model_gradcheck`] callers.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

fn noise(seeds: &SeedTree, label: &str, n: usize) -> Vec<f64> {
    let mut rng = seeds.stream(label, 0);
    (0..n).map(|_| rng.random_range(-0.3..0.3)).collect()
}

/// Finite-difference check of every parameter of a freshly initialized
/// 64-bit model, on random audio, EEG and references of `seconds` length.
/// The scalar is the mean negative SI-SDR over both outputs.
pub fn model_gradcheck(cfg: &BasenConfig, seconds: f64, seed: u64) -> Result<Vec<GradCheck>> {
    let seeds = SeedTree::new(seed);
    let mut model = BasenModel::<f64>::new(cfg.clone(), seed)?;
    let n = (seconds * cfg.audio_rate).round() as usize;
    let frames = (seconds * cfg.eeg_rate).round() as usize;
    let eeg = Tensor::new(vec![cfg.eeg_channels, frames], noise(&seeds, "eeg", cfg.eeg_channels * frames))?;
    let refs: Vec<Vec<f64>> = (0..cfg.n_sources)
        .map(|t| noise(&seeds, &format!("reference{t}"), n))
        .collect();
    let audio: Vec<f64> = (0..n).map(|i| refs.iter().map(|r| r[i]).sum()).collect();
    let skeleton = model.clone();
    check_params(model.params_mut(), FD_STEP, |g| {
        let vars = skeleton.forward_graph(g, &audio, eeg.clone())?;
        let mut total = None;
        for (out, r) in vars.outputs.iter().zip(&refs) {
            let l = g.neg_si_sdr(*out, r, 60.0)?;
            total = Some(match total {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
        let total = total.expect("at least one output");
        Ok(g.scale(total, 1.0 / refs.len() as f64))
    })
}
