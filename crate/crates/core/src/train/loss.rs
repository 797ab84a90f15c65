use std::fmt;
use std::str::FromStr;

use super::sisdr::SI_SDR_CAP_DB;
use crate::autodiff::{Graph, Real, Var};
use crate::error::{BasenError, Result};

/// Which outputs the training loss scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Negative SI-SDR of output 0 against the attended source.
    #[default]
    TargetOnly,
    /// Mean negative SI-SDR of output 0 against the attended source and
    /// output 1 against the interferer.
    BothSources,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::TargetOnly => "target-only",
            LossMode::BothSources => "both-sources",
        })
    }
}

impl FromStr for LossMode {
    type Err = BasenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target-only" => Ok(LossMode::TargetOnly),
            "both-sources" => Ok(LossMode::BothSources),
            _ => Err(BasenError::Config(format!("unknown loss mode {s:?} (target-only, both-sources)"))),
        }
    }
}

/// Scalar loss node in dB; lower is better, `-60` at best.
pub fn si_sdr_loss<S: Real>(g: &mut Graph<'_, S>, outputs: &[Var], target: &[S], interferer: &[S], mode: LossMode) -> Result<Var> {
    if outputs.is_empty() || (mode == LossMode::BothSources && outputs.len() < 2) {
        return Err(BasenError::invalid(format!("{mode} loss needs more than {} outputs", outputs.len())));
    }
    let l0 = g.neg_si_sdr(outputs[0], target, SI_SDR_CAP_DB)?;
    match mode {
        LossMode::TargetOnly => Ok(l0),
        LossMode::BothSources => {
            let l1 = g.neg_si_sdr(outputs[1], interferer, SI_SDR_CAP_DB)?;
            let s = g.add(l0, l1)?;
            Ok(g.scale(s, 0.5))
        }
    }
}
