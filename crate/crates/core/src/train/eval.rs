use super::parallel::ordered_map;
use super::sisdr::si_sdr_slice;
use super::synth::Example;
use super::trainer::{estimate, train, Prepared, TrainConfig, TrainLog};
use crate::error::{BasenError, Result};
use crate::model::{BasenConfig, BasenModel, Fusion};

/// Quantile of sorted data with linear interpolation between order
/// statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median, quartiles and mean of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub mean: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
        Self {
            median: quantile(&s, 0.5),
            q1,
            q3,
            iqr: q3 - q1,
            mean: if s.is_empty() { f64::NAN } else { s.iter().sum::<f64>() / s.len() as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub attended: usize,
    /// SI-SDR of the attended-speaker estimate, dB.
    pub si_sdr: f64,
    /// SI-SDR of the unprocessed mixture against the same reference, dB.
    pub mixture_si_sdr: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub si_sdr: Aggregate,
    pub improvement: Aggregate,
}

impl EvalReport {
    fn from_rows(rows: Vec<EvalRow>) -> Self {
        let s: Vec<f64> = rows.iter().map(|r| r.si_sdr).collect();
        let i: Vec<f64> = rows.iter().map(|r| r.improvement).collect();
        Self {
            si_sdr: Aggregate::of(&s),
            improvement: Aggregate::of(&i),
            rows,
        }
    }

    /// Per-example rows, a blank line, then the aggregate block.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("id\tattended\tsi_sdr\tmixture_si_sdr\timprovement\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
                r.id, r.attended, r.si_sdr, r.mixture_si_sdr, r.improvement
            ));
        }
        s.push_str("\nmetric\tmedian\tq1\tq3\tiqr\tmean\n");
        for (name, a) in [("si_sdr", &self.si_sdr), ("improvement", &self.improvement)] {
            s.push_str(&format!(
                "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                a.median, a.q1, a.q3, a.iqr, a.mean
            ));
        }
        s
    }
}

/// Scores the attended-speaker estimate produced by `f` for every example.
pub fn evaluate_with<F>(data: &[Example], threads: usize, f: F) -> Result<EvalReport>
where
    F: Fn(&Example) -> Result<Vec<f64>> + Sync,
{
    let rows = ordered_map(data, threads, |ex| -> Result<EvalRow> {
        let est = f(ex)?;
        let si = si_sdr_slice(&est, ex.target.samples())?;
        let base = si_sdr_slice(ex.mixture.samples(), ex.target.samples())?;
        Ok(EvalRow {
            id: ex.id.clone(),
            attended: ex.attended,
            si_sdr: si,
            mixture_si_sdr: base,
            improvement: si - base,
        })
    });
    Ok(EvalReport::from_rows(rows.into_iter().collect::<Result<_>>()?))
}

/// Scores output 0 of `model` on every example.
pub fn evaluate(model: &BasenModel<f32>, data: &[Example], threads: usize) -> Result<EvalReport> {
    evaluate_with(data, threads, |ex| {
        let prepared = Prepared::new(ex)?;
        Ok(estimate(model, &prepared)?.swap_remove(0))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub params: usize,
    pub log: TrainLog,
    pub report: EvalReport,
}

/// One trained-and-evaluated network per row.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant\tparams\tbest_epoch\tmedian_si_sdr\tq1\tq3\tmedian_improvement\tmean_improvement\n");
        for r in &self.rows {
            let (a, i) = (&r.report.si_sdr, &r.report.improvement);
            s.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                r.label, r.params, r.log.best_epoch, a.median, a.q1, a.q3, i.median, i.mean
            ));
        }
        s
    }
}

fn train_and_score(
    label: String,
    cfg: BasenConfig,
    tcfg: &TrainConfig,
    sets: (&[Example], &[Example], &[Example]),
) -> Result<AblationRow> {
    let mut model = BasenModel::<f32>::new(cfg, tcfg.seed)?;
    log::info!("training {label} ({} parameters)", model.param_count());
    let log = train(&mut model, sets.0, sets.1, tcfg, None)?;
    let report = evaluate(&model, sets.2, tcfg.threads)?;
    Ok(AblationRow {
        label,
        params: model.param_count(),
        log,
        report,
    })
}

/// Trains every fusion variant from the same seed and data and scores it on
/// `test`. Variants differ only in how EEG is fused.
pub fn run_ablation(
    base: &BasenConfig,
    tcfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
    test_set: &[Example],
    variants: &[Fusion],
) -> Result<AblationReport> {
    if variants.is_empty() {
        return Err(BasenError::invalid("no variants to compare"));
    }
    let rows = variants
        .iter()
        .map(|&v| train_and_score(v.to_string(), base.clone().with_fusion(v), tcfg, (train_set, val_set, test_set)))
        .collect::<Result<_>>()?;
    Ok(AblationReport { rows })
}

/// Same comparison over the number of cross-attention layers.
pub fn run_layer_sweep(
    base: &BasenConfig,
    tcfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
    test_set: &[Example],
    layers: &[usize],
) -> Result<AblationReport> {
    let rows = layers
        .iter()
        .map(|&n| {
            let cfg = BasenConfig {
                cmca_layers: n,
                fusion: Fusion::Cmca,
                ..base.clone()
            };
            train_and_score(format!("cmca-n{n}"), cfg, tcfg, (train_set, val_set, test_set))
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport { rows })
}
