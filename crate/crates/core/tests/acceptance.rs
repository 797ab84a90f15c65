//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the full training experiments (about 25 minutes on one core).

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use basen_core::autodiff::{ConvGeom, Graph, Tensor};
use basen_core::eeg::{analytic, analytic_signal, bandpass, preprocess, BandSpec, MuaConfig};
use basen_core::model::{model_gradcheck, BasenConfig, BasenModel, Checkpoint, Fusion, GRADCHECK_TOLERANCE};
use basen_core::signal::matrix::{decode_matrix, encode_matrix};
use basen_core::signal::wav::{read_wav, write_wav};
use basen_core::signal::{MultiChannelSeries, SampleBuffer};
use basen_core::train::{
    evaluate, run_ablation, si_sdr_slice, synthetic_split, train, AblationReport, Example, SyntheticTaskConfig,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn gradient_integrity() -> Outcome {
    let cfg = BasenConfig::tiny();
    assert_eq!((cfg.channels, cfg.stack_depth, cfg.cmca_layers, cfg.n_sources), (8, 2, 2, 2));
    assert_eq!((cfg.audio_rate, cfg.eeg_channels), (2000.0, 4));
    let t = Instant::now();
    let report = match model_gradcheck(&cfg, 0.25, 0) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let secs = t.elapsed().as_secs_f64();
    let worst = report.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).unwrap();
    let dead: Vec<&str> = report.iter().filter(|r| r.max_abs_grad == 0.0).map(|r| r.name.as_str()).collect();
    let entries: usize = report.iter().map(|r| r.entries).sum();
    Outcome::new(
        worst.rel_error < GRADCHECK_TOLERANCE && secs < 120.0 && dead.is_empty(),
        format!(
            "{} tensors / {entries} values, worst {:.2e} ({}), {secs:.1}s, zero-gradient tensors {dead:?}",
            report.len(),
            worst.rel_error,
            worst.name
        ),
    )
}

fn si_sdr_invariances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(16..512);
        let s = noise(&mut rng, n);
        let level = 10f64.powf(rng.random_range(-1.5..1.0));
        let e: Vec<f64> = s.iter().map(|v| v + level * rng.random_range(-1.0..1.0)).collect();
        let base = si_sdr_slice(&e, &s).unwrap();
        for _ in 0..2 {
            let a = 10f64.powf(rng.random_range(-3.0..3.0)) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let scaled: Vec<f64> = e.iter().map(|v| a * v).collect();
            worst = worst.max((si_sdr_slice(&scaled, &s).unwrap() - base).abs());
            let scaled: Vec<f64> = s.iter().map(|v| a * v).collect();
            worst = worst.max((si_sdr_slice(&e, &scaled).unwrap() - base).abs());
        }
    }
    let hand = si_sdr_slice(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    Outcome::new(
        worst <= 1e-9 && hand.abs() <= 1e-9,
        format!("max scale deviation {worst:.2e} dB, ref=[1,0] est=[1,1] -> {hand:.2e} dB"),
    )
}

/// Analytic signal from the direct O(n^2) DFT.
fn direct_analytic(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    let spectrum: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let w = -2.0 * PI * (k * t) as f64 / n as f64;
                (re + v * w.cos(), im + v * w.sin())
            })
        })
        .collect();
    let weight = |k: usize| {
        if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        }
    };
    (0..n)
        .map(|t| {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, &(xr, xi)) in spectrum.iter().enumerate() {
                let w = 2.0 * PI * (k * t) as f64 / n as f64;
                let h = weight(k) / n as f64;
                re += h * (xr * w.cos() - xi * w.sin());
                im += h * (xr * w.sin() + xi * w.cos());
            }
            (re, im)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(x: &[f64], cin: usize, len: usize, w: &[f64], cout: usize, k: usize, b: &[f64], g: ConvGeom) -> Vec<f64> {
    let span = g.dilation * (k - 1) + 1;
    let out_len = (len + 2 * g.padding - span) / g.stride + 1;
    let mut y = vec![0.0; cout * out_len];
    for o in 0..cout {
        for t in 0..out_len {
            let mut acc = b[o];
            for c in 0..cin {
                for j in 0..k {
                    let pos = (t * g.stride + j * g.dilation) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        acc += w[(o * cin + c) * k + j] * x[c * len + pos as usize];
                    }
                }
            }
            y[o * out_len + t] = acc;
        }
    }
    y
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dsp_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hilbert: f64 = 0.0;
    for _ in 0..20 {
        let x = noise(&mut rng, 64);
        let fast = analytic(&x);
        let slow = direct_analytic(&x);
        for (f, (re, im)) in fast.iter().zip(slow) {
            hilbert = hilbert.max((f.re - re).abs()).max((f.im - im).abs());
        }
    }

    let mut conv: f64 = 0.0;
    let mut depthwise: f64 = 0.0;
    let mut matmul: f64 = 0.0;
    for trial in 0..20 {
        let (cin, cout, k, len) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..9), rng.random_range(20..90));
        let g = ConvGeom {
            stride: 1 + trial % 4,
            dilation: 1 + trial % 3,
            padding: trial % 5,
        };
        let x = noise(&mut rng, cin * len);
        let w = noise(&mut rng, cout * cin * k);
        let b = noise(&mut rng, cout);
        let mut graph = Graph::<f64>::detached();
        let xv = graph.input(Tensor::new(vec![cin, len], x.clone()).unwrap());
        let wv = graph.input(Tensor::new(vec![cout, cin, k], w.clone()).unwrap());
        let bv = graph.input(Tensor::new(vec![cout], b.clone()).unwrap());
        let y = graph.conv1d(xv, wv, Some(bv), g).unwrap();
        conv = conv.max(max_diff(graph.value(y).data(), &naive_conv(&x, cin, len, &w, cout, k, &b, g)));

        let wd = noise(&mut rng, cin * k);
        let bd = noise(&mut rng, cin);
        let (dil, pad) = (g.dilation, g.dilation * (k - 1) / 2);
        let wdv = graph.input(Tensor::new(vec![cin, 1, k], wd.clone()).unwrap());
        let bdv = graph.input(Tensor::new(vec![cin], bd.clone()).unwrap());
        let yd = graph.depthwise_conv1d(xv, wdv, Some(bdv), dil, pad).unwrap();
        let geom = ConvGeom {
            stride: 1,
            dilation: dil,
            padding: pad,
        };
        let oracle: Vec<f64> = (0..cin)
            .flat_map(|c| naive_conv(&x[c * len..(c + 1) * len], 1, len, &wd[c * k..(c + 1) * k], 1, k, &bd[c..c + 1], geom))
            .collect();
        depthwise = depthwise.max(max_diff(graph.value(yd).data(), &oracle));

        let (m, n, p) = (rng.random_range(1..12), rng.random_range(1..40), rng.random_range(1..12));
        let a = noise(&mut rng, m * n);
        let bm = noise(&mut rng, n * p);
        let av = graph.input(Tensor::new(vec![m, n], a.clone()).unwrap());
        let bmv = graph.input(Tensor::new(vec![n, p], bm.clone()).unwrap());
        let c = graph.matmul(av, bmv).unwrap();
        let oracle: Vec<f64> = (0..m * p)
            .map(|ij| (0..n).map(|l| a[(ij / p) * n + l] * bm[l * p + ij % p]).sum())
            .collect();
        matmul = matmul.max(max_diff(graph.value(c).data(), &oracle));
    }
    Outcome::new(
        hilbert < 1e-9 && conv < 1e-10 && depthwise < 1e-10 && matmul < 1e-10,
        format!("analytic {hilbert:.1e}, conv1d {conv:.1e}, depthwise {depthwise:.1e}, matmul {matmul:.1e}"),
    )
}

fn shape_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut seen = Vec::new();
    let mut pass = true;
    for cfg in [BasenConfig::desk(), BasenConfig::default()] {
        let model = BasenModel::<f32>::new(cfg.clone(), 0).unwrap();
        for secs in [1.0, 2.0] {
            let n = (secs * cfg.audio_rate) as usize;
            let frames = (secs * cfg.eeg_rate) as usize;
            let x = SampleBuffer::new(noise(&mut rng, n).iter().map(|v| 0.3 * v).collect(), cfg.audio_rate).unwrap();
            let eeg = MultiChannelSeries::new((0..cfg.eeg_channels).map(|_| noise(&mut rng, frames)).collect(), cfg.eeg_rate).unwrap();
            let out = model.forward(&x, &eeg).unwrap();
            let ok = out.len() == 2 && out.iter().all(|o| o.len() == n && o.rate() == cfg.audio_rate);
            pass &= ok;
            seen.push(format!("{}Hz/{secs}s->{}x{}", cfg.audio_rate, out.len(), out[0].len()));
        }
    }
    Outcome::new(pass, seen.join(", "))
}

fn parameter_budget() -> Outcome {
    let n3 = BasenModel::<f32>::new(BasenConfig::default(), 0).unwrap().param_count();
    let n1 = BasenModel::<f32>::new(
        BasenConfig {
            cmca_layers: 1,
            ..BasenConfig::default()
        },
        0,
    )
    .unwrap()
    .param_count();
    let rel = (n3 as f64 - 0.64e6) / 0.64e6;
    Outcome::new(
        rel.abs() <= 0.15 && n1 < n3,
        format!("N=3: {n3} ({:+.1}% of 0.64M), N=1: {n1}", 100.0 * rel),
    )
}

fn overfit(artifacts: &mut Vec<String>) -> Outcome {
    let task = SyntheticTaskConfig::default();
    let data = synthetic_split(&task, 7, "train", 4, &MuaConfig::default()).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        epochs: 500,
        max_lr: 1e-3,
        threads: 1,
        ..TrainConfig::default()
    };
    let steps = cfg.epochs * cfg.steps_per_epoch(data.len());
    let t = Instant::now();
    let mut model = BasenModel::<f32>::new(BasenConfig::desk(), 0).unwrap();
    let log = train(&mut model, &data, &data, &cfg, None).unwrap();
    let report = evaluate(&model, &data, 1).unwrap();
    artifacts.push(log.to_tsv());
    artifacts.push(report.to_tsv());
    let mean = report.si_sdr.mean;
    Outcome::new(
        mean >= 10.0 && steps <= 500,
        format!(
            "{steps} steps, mean train SI-SDR {mean:.2} dB (best epoch {}), {:.0}s",
            log.best_epoch,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn ablation_data() -> (Vec<Example>, Vec<Example>, Vec<Example>) {
    let task = SyntheticTaskConfig::default();
    let mua = MuaConfig::default();
    let split = |name: &str, n: usize| synthetic_split(&task, 1, name, n, &mua).unwrap();
    (split("train", task.n_train), split("val", task.n_val), split("test", task.n_test))
}

fn ablation(artifacts: &mut Vec<String>) -> AblationReport {
    let (tr, va, te) = ablation_data();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 8,
        max_lr: 1e-3,
        threads: 1,
        ..TrainConfig::default()
    };
    let report = run_ablation(&BasenConfig::desk(), &cfg, &tr, &va, &te, &Fusion::ALL).unwrap();
    artifacts.push(report.to_tsv());
    for row in &report.rows {
        artifacts.push(row.log.to_tsv());
        artifacts.push(row.report.to_tsv());
    }
    report
}

fn conditioning(r: &AblationReport) -> Outcome {
    let full = r.row("cmca").unwrap().report.improvement.median;
    let blind = r.row("audio-only").unwrap().report.improvement.median;
    let n = r.rows[0].report.rows.len();
    Outcome::new(
        full >= 5.0 && blind < 2.0,
        format!("median improvement over {n} test scenes: cmca {full:.2} dB, audio-only {blind:.2} dB"),
    )
}

fn ordering(r: &AblationReport) -> Outcome {
    let m = |label: &str| r.row(label).unwrap().report.si_sdr.median;
    let (cmca, concat, blind) = (m("cmca"), m("concat"), m("audio-only"));
    Outcome::new(
        cmca >= concat && concat >= blind && cmca - blind >= 3.0,
        format!("median test SI-SDR: cmca {cmca:.2}, concat {concat:.2}, audio-only {blind:.2} dB"),
    )
}

fn round_trips() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let dir = tempfile::tempdir().unwrap();

    let model = BasenModel::<f32>::new(BasenConfig::desk(), 9).unwrap();
    let bytes = Checkpoint::from_model(&model).encode();
    let path = dir.path().join("model.ckpt");
    basen_core::model::save_checkpoint(&path, &model).unwrap();
    let loaded = basen_core::model::load_checkpoint::<f32>(&path).unwrap();
    let same_values = model.params().iter().zip(loaded.params().iter()).all(|(a, b)| {
        a.name() == b.name() && a.value().data().iter().zip(b.value().data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let ckpt_ok = same_values
        && std::fs::read(&path).unwrap() == bytes
        && Checkpoint::from_model(&loaded).encode() == bytes
        && loaded.config() == model.config();
    pass &= ckpt_ok;
    notes.push(format!("checkpoint {}", if ckpt_ok { "bit-exact" } else { "differs" }));

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = MultiChannelSeries::new(
        (0..5).map(|_| noise(&mut rng, 300).iter().map(|&v| f64::from(v as f32)).collect()).collect(),
        128.0,
    )
    .unwrap();
    let enc = encode_matrix(&m);
    let back = decode_matrix(&enc).unwrap();
    let matrix_ok = back == m && encode_matrix(&back) == enc;
    pass &= matrix_ok;
    notes.push(format!("matrix {}", if matrix_ok { "bit-exact" } else { "differs" }));

    let x = SampleBuffer::new(noise(&mut rng, 4000).iter().map(|v| 0.999 * v).collect(), 8000.0).unwrap();
    let wav = dir.path().join("x.wav");
    write_wav(&wav, &x).unwrap();
    let y = read_wav(&wav).unwrap();
    let err = max_diff(x.samples(), y.samples());
    let wav_ok = err <= 1.0 / 32768.0 && y.rate() == x.rate();
    pass &= wav_ok;
    notes.push(format!("wav max error {:.3} LSB", err * 32768.0));

    let perm = [3, 0, 4, 1, 2];
    let raw = MultiChannelSeries::new((0..5).map(|_| noise(&mut rng, 1024)).collect(), 128.0).unwrap();
    let shuffled = MultiChannelSeries::new(perm.iter().map(|&c| raw.channel(c).to_vec()).collect(), 128.0).unwrap();
    let mua = MuaConfig::default();
    let (a, b) = (preprocess(&raw, &mua).unwrap(), preprocess(&shuffled, &mua).unwrap());
    let indep = perm.iter().enumerate().all(|(i, &c)| a.channel(c) == b.channel(i));
    pass &= indep;
    notes.push(format!("channel permutation {}", if indep { "commutes" } else { "differs" }));

    let s = noise(&mut rng, 512);
    let (pos, neg) = (analytic_signal(&s), analytic_signal(&s.iter().map(|v| -v).collect::<Vec<_>>()));
    let amp = max_diff(&pos.amplitude, &neg.amplitude);
    let phase = pos
        .phase
        .iter()
        .zip(&neg.phase)
        .zip(&pos.amplitude)
        .filter(|(_, &a)| a > 1e-3)
        .map(|((p, n), _)| {
            let d = (p - n - PI).rem_euclid(2.0 * PI);
            d.min(2.0 * PI - d)
        })
        .fold(0.0, f64::max);
    let flip = amp < 1e-12 && phase < 1e-9;
    pass &= flip;
    notes.push(format!("sign flip: amplitude {amp:.1e}, phase-pi {phase:.1e}"));

    let rate = 128.0;
    let mut lag0 = true;
    for (band, f) in [(BandSpec::new(0.5, 4.0), 2.0), (BandSpec::new(30.0, 45.0), 37.0)] {
        let tone: Vec<f64> = (0..2048).map(|t| (2.0 * PI * f * t as f64 / rate + 0.3).sin()).collect();
        let out = bandpass(&MultiChannelSeries::new(vec![tone.clone()], rate).unwrap(), band).unwrap();
        let y = out.channel(0);
        let xcorr = |lag: isize| -> f64 {
            (512..1536).map(|t| tone[t] * y[(t as isize + lag) as usize]).sum()
        };
        let peak = (-16..=16).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
        lag0 &= peak == 0;
    }
    pass &= lag0;
    notes.push(format!("band-pass cross-correlation peak {}", if lag0 { "at lag 0" } else { "shifted" }));

    Outcome::new(pass, notes.join(", "))
}

fn main() -> ExitCode {
    // Optional criterion numbers on the command line select a subset.
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |id: usize| wanted.is_empty() || wanted.contains(&id);
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, o: Outcome| {
        println!("{} {id:>2} {name}: {} [{:.0}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, start.elapsed().as_secs_f64());
        results.push((id, name, o));
    };
    if on(1) {
        report(1, "gradient integrity", gradient_integrity());
    }
    if on(2) {
        report(2, "SI-SDR invariances", si_sdr_invariances());
    }
    if on(3) {
        report(3, "DSP oracle equivalence", dsp_oracles());
    }
    if on(4) {
        report(4, "shape contract", shape_contract());
    }
    if on(5) {
        report(5, "parameter budget", parameter_budget());
    }

    let mut first = Vec::new();
    if on(6) || on(9) {
        let o = overfit(&mut first);
        if on(6) {
            report(6, "overfit sanity", o);
        }
    }
    if on(7) || on(8) || on(9) {
        let table = ablation(&mut first);
        print!("{}", table.to_tsv());
        if on(7) {
            report(7, "EEG conditioning", conditioning(&table));
        }
        if on(8) {
            report(8, "ablation ordering", ordering(&table));
        }
    }
    if on(9) {
        let mut second = Vec::new();
        overfit(&mut second);
        ablation(&mut second);
        let differing = first.iter().zip(&second).filter(|(a, b)| a != b).count();
        report(
            9,
            "determinism",
            Outcome::new(
                first.len() == second.len() && differing == 0,
                format!("{} logs and reports repeated, {differing} differ", first.len()),
            ),
        );
    }
    if on(10) {
        report(10, "round trips", round_trips());
    }

    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
