use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{attend, CmcaLayer, CrossAttention};
use super::*;
use crate::autodiff::ParamStore;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-0.3..0.3)).collect()
}

fn inputs(cfg: &BasenConfig, seconds: f64, seed: u64) -> (SampleBuffer, MultiChannelSeries) {
    let n = (seconds * cfg.audio_rate).round() as usize;
    let f = (seconds * cfg.eeg_rate).round() as usize;
    let x = SampleBuffer::new(noise(n, seed), cfg.audio_rate).unwrap();
    let eeg = (0..cfg.eeg_channels).map(|c| noise(f, seed + 100 + c as u64)).collect();
    (x, MultiChannelSeries::new(eeg, cfg.eeg_rate).unwrap())
}

fn tensor(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], noise(rows * cols, seed)).unwrap()
}

#[test]
fn parameter_budget() {
    let n3 = BasenModel::<f32>::new(BasenConfig::default(), 0).unwrap().param_count();
    let rel = (n3 as f64 - 0.64e6).abs() / 0.64e6;
    assert!(rel < 0.15, "{n3} parameters");
    let n1 = BasenModel::<f32>::new(BasenConfig { cmca_layers: 1, ..BasenConfig::default() }, 0)
        .unwrap()
        .param_count();
    assert!(n1 < n3);
}

#[test]
fn shape_contract() {
    for base in [BasenConfig::desk(), BasenConfig { eeg_channels: 16, ..BasenConfig::default() }] {
        let model = BasenModel::<f32>::new(base.clone(), 1).unwrap();
        for secs in [1.0, 2.0] {
            let (x, eeg) = inputs(&base, secs, 3);
            let out = model.forward(&x, &eeg).unwrap();
            assert_eq!(out.len(), 2);
            for o in &out {
                assert_eq!(o.len(), x.len());
                assert_eq!(o.rate(), x.rate());
                assert!(o.samples().iter().all(|v| v.is_finite()));
            }
        }
    }
}

#[test]
fn odd_lengths_keep_their_length() {
    let cfg = BasenConfig::tiny();
    let model = BasenModel::<f64>::new(cfg.clone(), 2).unwrap();
    for n in [64, 65, 135, 137, 500, 777] {
        let mut g = model.graph();
        let audio = noise(n, n as u64);
        let frames = (n as f64 / cfg.audio_rate * cfg.eeg_rate).ceil().max(8.0) as usize;
        let vars = model.forward_graph(&mut g, &audio, tensor(4, frames, 5)).unwrap();
        for o in vars.outputs {
            assert_eq!(g.shape(o), &[1, n]);
        }
    }
}

#[test]
fn audio_encoder_geometry_and_errors() {
    let cfg = BasenConfig::default();
    let model = BasenModel::<f32>::new(cfg.clone(), 0).unwrap();
    let mut g = model.graph();
    let w = model.encode_audio(&mut g, &vec![0.0; 29400]).unwrap();
    assert_eq!(g.shape(w), &[64, 459]);
    // Zero input leaves only the bias path: every row is constant.
    for r in 0..64 {
        let row = g.value(w).row(r);
        assert!(row.iter().all(|&v| v == row[0]));
    }
    let err = model.encode_audio(&mut g, &[0.0; 63]).unwrap_err();
    assert!(err.to_string().contains("at least 64"), "{err}");
    for n in [64, 1000, 14700] {
        let w = model.encode_audio(&mut g, &vec![0.1; n]).unwrap();
        assert_eq!(g.shape(w)[0], 64);
        assert_eq!(g.shape(w)[1], cfg.frames_for(n));
    }
}

#[test]
fn eeg_encoder_geometry() {
    let cfg = BasenConfig::desk();
    let model = BasenModel::<f64>::new(cfg.clone(), 0).unwrap();
    assert_eq!(model.eeg_blocks.len(), 8);
    let mut g = model.graph();
    let e = g.input(tensor(16, 256, 1));
    let out = model.encode_eeg(&mut g, e).unwrap();
    assert_eq!(g.shape(out), &[32, 32]);

    let z1 = g.input(Tensor::zeros(&[16, 256]));
    let a = model.encode_eeg(&mut g, z1).unwrap();
    let z2 = g.input(Tensor::zeros(&[16, 256]));
    let b = model.encode_eeg(&mut g, z2).unwrap();
    assert_eq!(g.value(a), g.value(b));

    let wrong = g.input(tensor(15, 256, 2));
    let err = model.encode_eeg(&mut g, wrong).unwrap_err();
    assert!(err.to_string().contains("15 channels"));
}

#[test]
fn align_time_cases() {
    let mut g = Graph::<f64>::detached();
    let x = g.input(tensor(3, 7, 4));
    let same = align_time(&mut g, x, 7).unwrap();
    assert_eq!(g.value(same), g.value(x));
    let ramp = g.input(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let up = align_time(&mut g, ramp, 10).unwrap();
    for (j, v) in g.value(up).data().iter().enumerate() {
        assert!((v - (1.0 + j as f64 / 3.0)).abs() < 1e-12);
    }
    let c = g.input(Tensor::full(&[2, 5], -0.7));
    let down = align_time(&mut g, c, 3).unwrap();
    assert!(g.value(down).data().iter().all(|&v| v == -0.7));
}

#[test]
fn attention_hand_case() {
    let mut g = Graph::<f64>::detached();
    let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let (q, k, v) = (g.input(eye.clone()), g.input(eye.clone()), g.input(eye));
    let out = attend(&mut g, q, k, v).unwrap();
    // W = I scaled by 1/sqrt(L) with L = 2.
    let s = 1.0 / 2f64.sqrt();
    let hi = s.exp() / (s.exp() + 1.0);
    let lo = 1.0 / (s.exp() + 1.0);
    let expect = [hi, lo, lo, hi];
    for (a, b) in g.value(out.weights).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    // V = I, so A equals the weights.
    assert_eq!(g.value(out.attended), g.value(out.weights));
}

#[test]
fn attention_with_identity_projections() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let att = CrossAttention::new(&mut store, &mut rng, "att", 2, 3).unwrap();
    for conv in [att.q, att.k, att.v] {
        *store.get_mut(conv.w).value_mut() = Tensor::new(vec![2, 1, 3], vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        store.get_mut(conv.b).value_mut().fill(0.0);
    }
    let mut g = Graph::new(&store);
    let q = g.input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let kv = g.input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let out = att.apply(&mut g, q, kv).unwrap();
    let s = 1.0 / 2f64.sqrt();
    let p = s.exp() / (s.exp() + 1.0);
    let a = g.value(out.attended).data();
    assert!((a[0] - p).abs() < 1e-15 && (a[1] - (1.0 - p)).abs() < 1e-15);
}

#[test]
fn attention_shapes_and_rows() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let att = CrossAttention::new(&mut store, &mut rng, "att", 6, 3).unwrap();
    for len in [3, 17, 100] {
        let mut g = Graph::new(&store);
        let (a, b) = (g.input(tensor(6, len, 1)), g.input(tensor(6, len, 2)));
        let out = att.apply(&mut g, a, b).unwrap();
        assert_eq!(g.shape(out.weights), &[6, 6]);
        assert_eq!(g.shape(out.attended), &[6, len]);
        for r in 0..6 {
            let s: f64 = g.value(out.weights).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let c = g.input(tensor(6, len + 1, 3));
        assert!(att.apply(&mut g, a, c).is_err());
    }
    // V = 0 gives A = 0.
    let mut g = Graph::<f64>::detached();
    let (q, k) = (g.input(tensor(4, 9, 5)), g.input(tensor(4, 9, 6)));
    let v = g.input(Tensor::zeros(&[4, 9]));
    let out = attend(&mut g, q, k, v).unwrap();
    assert!(g.value(out.attended).data().iter().all(|&x| x == 0.0));
}

#[test]
fn cmca_layer_residual_path() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layer = CmcaLayer::new(&mut store, &mut rng, "l", 4, 3, 2).unwrap();
    for conv in [layer.audio_att.v, layer.eeg_att.v] {
        store.get_mut(conv.w).value_mut().fill(0.0);
        store.get_mut(conv.b).value_mut().fill(0.0);
    }
    let mut g = Graph::new(&store);
    let (a, e) = (g.input(tensor(4, 10, 7)), g.input(tensor(4, 10, 8)));
    let (a1, e1) = layer.apply(&mut g, a, e).unwrap();
    assert_eq!(g.shape(a1), g.shape(a));
    assert_eq!(g.shape(e1), g.shape(e));
    let na = layer.audio_norm.apply(&mut g, a).unwrap();
    let ne = layer.eeg_norm.apply(&mut g, e).unwrap();
    assert_eq!(g.value(a1), g.value(na));
    assert_eq!(g.value(e1), g.value(ne));
}

#[test]
fn zero_eeg_still_fuses() {
    let cfg = BasenConfig::tiny();
    let model = BasenModel::<f64>::new(cfg, 3).unwrap();
    let mut g = model.graph();
    let w = g.input(tensor(8, 12, 1));
    let z = g.input(Tensor::zeros(&[8, 12]));
    let masks = model.separate(&mut g, w, z).unwrap();
    assert_eq!(masks.len(), 2);
    for m in masks {
        assert_eq!(g.shape(m), &[8, 12]);
    }
}

#[test]
fn separator_structure() {
    let model = BasenModel::<f32>::new(BasenConfig::default(), 0).unwrap();
    assert_eq!(model.stacks.len(), 3);
    for s in &model.stacks {
        let dil: Vec<usize> = s.blocks.iter().map(|b| b.dilation()).collect();
        assert_eq!(dil, vec![1, 2, 4, 8, 16, 32, 64, 128]);
    }
    match &model.fusion {
        FusionModule::Cmca(c) => assert_eq!(c.layers.len(), 3),
        FusionModule::Concat(_) => panic!("default fusion is cross attention"),
    }
}

#[test]
fn masks_are_bounded() {
    let cfg = BasenConfig::desk();
    let model = BasenModel::<f32>::new(cfg.clone(), 4).unwrap();
    let (x, eeg) = inputs(&cfg, 1.0, 9);
    let set = model.masks(&x, &eeg).unwrap();
    assert_eq!(set.masks.len(), 2);
    for m in &set.masks {
        assert_eq!(m.shape(), &[32, cfg.frames_for(x.len())]);
        assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn decoder_lengths_and_bias_path() {
    let cfg = BasenConfig { eeg_channels: 4, ..BasenConfig::default() };
    let mut model = BasenModel::<f64>::new(cfg.clone(), 0).unwrap();
    for n in [14700, 29400] {
        let mut g = model.graph();
        let w = model.encode_audio(&mut g, &noise(n, 1)).unwrap();
        let y = model.decode(&mut g, w, n).unwrap();
        assert_eq!(g.shape(y), &[1, n]);
    }
    let frames = cfg.frames_for(14700);
    let out = {
        let mut g = model.graph();
        let z = g.input(Tensor::zeros(&[64, frames]));
        let y = model.decode(&mut g, z, 14700).unwrap();
        g.value(y).clone()
    };
    // Bias-only response is periodic with the final stride away from the edges.
    let d = out.data();
    for t in 200..1000 {
        assert!((d[t] - d[t + 8]).abs() < 1e-12);
    }
    for conv in model.decoder.clone() {
        model.params_mut().get_mut(conv.b).value_mut().fill(0.0);
    }
    let mut g = model.graph();
    let z = g.input(Tensor::zeros(&[64, frames]));
    let y = model.decode(&mut g, z, 14700).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_input_checks() {
    let cfg = BasenConfig::tiny();
    let model = BasenModel::<f32>::new(cfg.clone(), 0).unwrap();
    let (x, eeg) = inputs(&cfg, 0.5, 1);
    model.forward(&x, &eeg).unwrap();
    let short = MultiChannelSeries::new(eeg.channels().iter().map(|c| c[..40].to_vec()).collect(), 128.0).unwrap();
    assert!(model.forward(&x, &short).unwrap_err().to_string().contains("spans"));
    let wrong_rate = SampleBuffer::new(x.samples().to_vec(), 4000.0).unwrap();
    assert!(model.forward(&wrong_rate, &eeg).is_err());
    let tiny = SampleBuffer::new(vec![0.1; 16], cfg.audio_rate).unwrap();
    let one = MultiChannelSeries::new(vec![vec![0.0; 1]; 4], 128.0).unwrap();
    assert!(model.forward(&tiny, &one).is_err());
}

#[test]
fn forward_is_bit_identical() {
    let cfg = BasenConfig::desk();
    let model = BasenModel::<f32>::new(cfg.clone(), 5).unwrap();
    let (x, eeg) = inputs(&cfg, 1.0, 2);
    let a = model.forward(&x, &eeg).unwrap();
    let b = model.forward(&x, &eeg).unwrap();
    assert_eq!(a, b);
    let again = BasenModel::<f32>::new(cfg, 5).unwrap();
    assert_eq!(again.forward(&x, &eeg).unwrap(), a);
}

#[test]
fn variants_share_audio_branch() {
    let base = BasenConfig::desk();
    let shapes: Vec<_> = Fusion::ALL
        .iter()
        .map(|&f| BasenModel::<f32>::new(base.clone().with_fusion(f), 0).unwrap().audio_branch_shapes())
        .collect();
    assert!(!shapes[0].is_empty());
    assert_eq!(shapes[0], shapes[1]);
    assert_eq!(shapes[1], shapes[2]);
}

#[test]
fn audio_only_ignores_eeg() {
    let cfg = BasenConfig::tiny().with_fusion(Fusion::AudioOnly);
    let model = BasenModel::<f32>::new(cfg.clone(), 0).unwrap();
    let (x, eeg) = inputs(&cfg, 0.5, 1);
    let (_, other) = inputs(&cfg, 0.5, 77);
    assert_eq!(model.forward(&x, &eeg).unwrap(), model.forward(&x, &other).unwrap());
    let full = BasenModel::<f32>::new(cfg.with_fusion(Fusion::Cmca), 0).unwrap();
    assert_ne!(full.forward(&x, &eeg).unwrap(), full.forward(&x, &other).unwrap());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = BasenConfig::tiny().with_fusion(Fusion::Concat);
    let model = BasenModel::<f32>::new(cfg.clone(), 9).unwrap();
    save_checkpoint(&path, &model).unwrap();
    let back: BasenModel<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), &cfg);
    for (a, b) in model.params().iter().zip(back.params().iter()) {
        assert_eq!(a.name(), b.name());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.value()), bits(b.value()));
    }
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"BASEN-CKPT 1\naudio_rate=2000\n"));
    assert_eq!(Checkpoint::decode(&bytes).unwrap().encode(), bytes);
}

#[test]
fn checkpoint_mismatches() {
    let cfg = BasenConfig::tiny();
    let model = BasenModel::<f32>::new(cfg.clone(), 0).unwrap();
    let full = Checkpoint::from_model(&model);

    let mut missing = full.clone();
    let (name, _) = missing.tensors.remove(3);
    let mut m = model.clone();
    let err = m.load_params(&missing).unwrap_err().to_string();
    assert!(err.contains(&format!("missing {name}")), "{err}");

    let mut extra = full.clone();
    extra.tensors.push(("bogus.w".into(), Tensor::zeros(&[2])));
    let err = m.load_params(&extra).unwrap_err().to_string();
    assert!(err.contains("unexpected bogus.w"), "{err}");

    let mut reshaped = full.clone();
    reshaped.tensors[0].1 = Tensor::zeros(&[1]);
    assert!(m.load_params(&reshaped).unwrap_err().to_string().contains("shape"));

    let other = BasenModel::<f32>::new(BasenConfig { channels: 4, hidden: 4, ..cfg }, 0).unwrap();
    let err = m.load_params(&Checkpoint::from_model(&other)).unwrap_err().to_string();
    assert!(err.contains("channels: checkpoint 4, model 8"), "{err}");

    let bytes = full.encode();
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::decode(b"BASEN-CKPT 2\n").is_err());
}

#[test]
fn every_parameter_gradient_matches_finite_differences() {
    let cfg = BasenConfig::tiny();
    let report = model_gradcheck(&cfg, 0.25, 5).unwrap();
    assert_eq!(report.len(), BasenModel::<f64>::new(cfg, 11).unwrap().params().len());
    for r in &report {
        assert!(r.max_abs_grad > 0.0, "{} has no gradient", r.name);
        assert!(r.rel_error < GRADCHECK_TOLERANCE, "{}: {}", r.name, r.rel_error);
    }
}
