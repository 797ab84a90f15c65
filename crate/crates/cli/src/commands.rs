use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use basen_core::eeg::{preprocess, BandSpec};
use basen_core::model::{load_checkpoint, model_gradcheck, BasenConfig, BasenModel, Fusion, GRADCHECK_TOLERANCE};
use basen_core::signal::matrix::{read_matrix, write_matrix};
use basen_core::signal::wav::{read_wav, write_wav};
use basen_core::train::{evaluate, evaluate_with, run_ablation, run_layer_sweep, threads_from_env, train, EvalReport};
use clap::Args;

use crate::data::{load_split, write_synthetic};
use crate::run_config::RunConfig;
use crate::{Command, ConfigArgs};

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::SynthData(c) => c.run().map(|_| ExitCode::SUCCESS),
        Command::PreprocessEeg(c) => c.run().map(|_| ExitCode::SUCCESS),
        Command::Train(c) => c.run().map(|_| ExitCode::SUCCESS),
        Command::Enhance(c) => c.run().map(|_| ExitCode::SUCCESS),
        Command::Evaluate(c) => c.run().map(|_| ExitCode::SUCCESS),
        Command::Ablate(c) => c.run().map(|_| ExitCode::SUCCESS),
        Command::Gradcheck(c) => c.run(),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Optimizer flags; unset ones keep the config value.
#[derive(Debug, Args, Clone, Default)]
pub struct TrainArgs {
    /// Training epochs [default: 60]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate [default: 0.0002]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fraction of steps spent in linear warmup [default: 0.05]
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    /// Seed for initialization and shuffling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let t = &mut cfg.train;
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.max_lr = self.lr.unwrap_or(t.max_lr);
        t.warmup_ratio = self.warmup_ratio.unwrap_or(t.warmup_ratio);
        t.seed = self.seed.unwrap_or(t.seed);
        t.threads = threads_from_env()?;
        cfg.validate()
    }
}

#[derive(Debug, Args)]
pub struct SynthData {
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Training scenes [default: 200]
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Validation scenes [default: 20]
    #[arg(long)]
    pub n_val: Option<usize>,
    /// Test scenes [default: 40]
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Dataset seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// SNR of the cue inside the synthetic EEG, dB [default: 10]
    #[arg(long)]
    pub cue_snr: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

impl SynthData {
    fn run(self) -> Result<()> {
        let mut cfg = RunConfig::load(self.config.config.as_deref(), &self.config.overrides)?;
        let task = &mut cfg.task;
        task.n_train = self.n_train.unwrap_or(task.n_train);
        task.n_val = self.n_val.unwrap_or(task.n_val);
        task.n_test = self.n_test.unwrap_or(task.n_test);
        task.cue_snr = self.cue_snr.unwrap_or(task.cue_snr);
        task.validate()?;
        let entries = write_synthetic(&self.out, &cfg.task, self.seed)?;
        println!("wrote {} scenes to {}", entries.len(), self.out.display());
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct PreprocessEeg {
    /// Raw EEG matrix container
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Output matrix container
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Gamma band lower edge, Hz
    #[arg(long, default_value_t = 30.0)]
    pub gamma_lo: f64,
    /// Gamma band upper edge, Hz
    #[arg(long, default_value_t = 45.0)]
    pub gamma_hi: f64,
    /// Delta band lower edge, Hz
    #[arg(long, default_value_t = 0.5)]
    pub delta_lo: f64,
    /// Delta band upper edge, Hz
    #[arg(long, default_value_t = 4.0)]
    pub delta_hi: f64,
    /// Weight of the gamma amplitude
    #[arg(long, default_value_t = 0.5)]
    pub a_gamma: f64,
    /// Weight of the delta phase
    #[arg(long, default_value_t = 0.5)]
    pub a_delta: f64,
}

impl PreprocessEeg {
    fn run(self) -> Result<()> {
        let raw = read_matrix(&self.input)?;
        let mua = basen_core::eeg::MuaConfig {
            a_gamma: self.a_gamma,
            a_delta: self.a_delta,
            gamma_band: BandSpec::new(self.gamma_lo, self.gamma_hi),
            delta_band: BandSpec::new(self.delta_lo, self.delta_hi),
        };
        mua.validate(raw.rate())?;
        write_matrix(&self.out, &preprocess(&raw, &mua)?)?;
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Train {
    /// Dataset directory written by synth-data
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for model.ckpt, train_log.tsv and config.txt
    #[arg(long)]
    pub out: PathBuf,
    /// EEG fusion: cmca, concat or audio-only [default: cmca]
    #[arg(long)]
    pub fusion: Option<Fusion>,
    /// Treat stored EEG as already preprocessed
    #[arg(long)]
    pub preprocessed: bool,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

impl Train {
    fn run(self) -> Result<()> {
        let mut cfg = RunConfig::load(self.config.config.as_deref(), &self.config.overrides)?;
        self.train.apply(&mut cfg)?;
        if let Some(f) = self.fusion {
            cfg.model.fusion = f;
        }
        let train_set = load_split(&self.data, "train", &cfg.mua, self.preprocessed)?;
        let val_set = load_split(&self.data, "val", &cfg.mua, self.preprocessed)?;
        let mut model = BasenModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
        log::info!("{} parameters, {} training scenes", model.param_count(), train_set.len());
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        write(&self.out.join("config.txt"), &cfg.to_text())?;
        let log = train(&mut model, &train_set, &val_set, &cfg.train, Some(&self.out.join("model.ckpt")))?;
        write(&self.out.join("train_log.tsv"), &log.to_tsv())?;
        println!("best epoch {} with validation SI-SDR {:.3} dB", log.best_epoch, log.best_val_si_sdr);
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Enhance {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Mixture WAV
    #[arg(long)]
    pub mixture: PathBuf,
    /// EEG matrix container aligned with the mixture
    #[arg(long)]
    pub eeg: PathBuf,
    /// Output WAV of the attended-talker estimate
    #[arg(long)]
    pub output: PathBuf,
    /// Treat the EEG as already preprocessed
    #[arg(long)]
    pub preprocessed: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

impl Enhance {
    fn run(self) -> Result<()> {
        let cfg = RunConfig::load(self.config.config.as_deref(), &self.config.overrides)?;
        let model = load_checkpoint::<f32>(&self.checkpoint)?;
        let mixture = read_wav(&self.mixture)?;
        let raw = read_matrix(&self.eeg)?;
        let eeg = if self.preprocessed { raw } else { preprocess(&raw, &cfg.mua)? };
        let out = model.forward(&mixture, &eeg)?;
        write_wav(&self.output, &out[0])?;
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Evaluate {
    /// Checkpoint to score
    #[arg(long, required_unless_present = "identity", conflicts_with = "identity")]
    pub checkpoint: Option<PathBuf>,
    /// Score the unprocessed mixture instead of a model
    #[arg(long)]
    pub identity: bool,
    /// Dataset directory written by synth-data
    #[arg(long)]
    pub data: PathBuf,
    /// Split to score
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report TSV path
    #[arg(long)]
    pub report: PathBuf,
    /// Treat stored EEG as already preprocessed
    #[arg(long)]
    pub preprocessed: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

impl Evaluate {
    fn run(self) -> Result<()> {
        let cfg = RunConfig::load(self.config.config.as_deref(), &self.config.overrides)?;
        let data = load_split(&self.data, &self.split, &cfg.mua, self.preprocessed)?;
        ensure!(!data.is_empty(), "split {:?} of {} is empty", self.split, self.data.display());
        let threads = threads_from_env()?;
        let report: EvalReport = match &self.checkpoint {
            Some(path) => evaluate(&load_checkpoint::<f32>(path)?, &data, threads)?,
            None => evaluate_with(&data, threads, |ex| Ok(ex.mixture.samples().to_vec()))?,
        };
        write(&self.report, &report.to_tsv())?;
        println!(
            "median SI-SDR {:.3} dB, median improvement {:.3} dB over {} scenes",
            report.si_sdr.median,
            report.improvement.median,
            report.rows.len()
        );
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Ablate {
    /// Dataset directory written by synth-data
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for ablation.tsv and layers.tsv
    #[arg(long)]
    pub out: PathBuf,
    /// Cross-attention depths to sweep; empty to skip the sweep
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub layers: Vec<usize>,
    /// Treat stored EEG as already preprocessed
    #[arg(long)]
    pub preprocessed: bool,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

impl Ablate {
    fn run(self) -> Result<()> {
        let mut cfg = RunConfig::load(self.config.config.as_deref(), &self.config.overrides)?;
        self.train.apply(&mut cfg)?;
        let split = |s: &str| load_split(&self.data, s, &cfg.mua, self.preprocessed);
        let (train_set, val_set, test_set) = (split("train")?, split("val")?, split("test")?);
        ensure!(!test_set.is_empty(), "test split of {} is empty", self.data.display());
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        write(&self.out.join("config.txt"), &cfg.to_text())?;
        let table = run_ablation(&cfg.model, &cfg.train, &train_set, &val_set, &test_set, &Fusion::ALL)?;
        write(&self.out.join("ablation.tsv"), &table.to_tsv())?;
        print!("{}", table.to_tsv());
        if !self.layers.is_empty() {
            let sweep = run_layer_sweep(&cfg.model, &cfg.train, &train_set, &val_set, &test_set, &self.layers)?;
            write(&self.out.join("layers.tsv"), &sweep.to_tsv())?;
            print!("{}", sweep.to_tsv());
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Gradcheck {
    /// Seed for the weights and random inputs
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input duration, seconds
    #[arg(long, default_value_t = 0.25)]
    pub seconds: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = GRADCHECK_TOLERANCE)]
    pub tolerance: f64,
    #[command(flatten)]
    pub config: ConfigArgs,
}

impl Gradcheck {
    fn run(self) -> Result<ExitCode> {
        let base = RunConfig {
            model: BasenConfig::tiny(),
            ..RunConfig::default()
        };
        let cfg = base.extend(self.config.config.as_deref(), &self.config.overrides)?;
        if self.seconds <= 0.0 {
            bail!("--seconds must be positive");
        }
        let report = model_gradcheck(&cfg.model, self.seconds, self.seed)?;
        println!("parameter\tentries\tmax_abs_grad\trel_error\tstraddled");
        let mut worst = 0.0f64;
        for r in &report {
            println!("{}\t{}\t{:.3e}\t{:.3e}\t{}", r.name, r.entries, r.max_abs_grad, r.rel_error, r.straddled);
            worst = worst.max(r.rel_error);
        }
        let ok = worst < self.tolerance;
        println!("worst {worst:.3e} ({})", if ok { "ok" } else { "above tolerance" });
        Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
    }
}
