//! Four-stage multi-state detection: pattern generation with lumped
//! assignment errors, table decoding, post-selection and survival.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::Level;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Dark,
    Bright,
}

use Stage::{Bright as B, Dark as D};

impl Stage {
    pub fn bit(self) -> u8 {
        match self {
            Stage::Dark => 0,
            Stage::Bright => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    Zero,
    One,
    Leak,
    EarlyLoss,
}

impl Symbol {
    pub fn name(self) -> &'static str {
        match self {
            Symbol::Zero => "Zero",
            Symbol::One => "One",
            Symbol::Leak => "Leak",
            Symbol::EarlyLoss => "EarlyLoss",
        }
    }

    /// Decoded qubit value, `None` for discarded symbols.
    pub fn bit(self) -> Option<u8> {
        match self {
            Symbol::Zero => Some(0),
            Symbol::One => Some(1),
            _ => None,
        }
    }
}

/// Stage outcomes of one ion and the symbol they decode to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub stages: [Stage; 4],
    pub decoded: Symbol,
}

impl DetectionRecord {
    pub fn from_stages(stages: [Stage; 4]) -> DetectionRecord {
        DetectionRecord { stages, decoded: decode(stages) }
    }
}

/// Lookup table: the first bright stage decides; all dark means leak.
pub fn decode(pattern: [Stage; 4]) -> Symbol {
    match pattern {
        [B, _, _, _] => Symbol::EarlyLoss,
        [D, B, _, _] => Symbol::Zero,
        [D, D, B, _] => Symbol::Leak,
        [D, D, D, B] => Symbol::One,
        [D, D, D, D] => Symbol::Leak,
    }
}

/// Lumped assignment fidelities of the protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignmentModel {
    /// P(decoded Zero | true Zero).
    pub f0: f64,
    /// P(decoded One | true One).
    pub f1: f64,
    /// P(flagged Leak | true leak); unflagged leaks read as Zero or One.
    pub leak_id: f64,
    /// Share of flagged leaks caught at stage III rather than stage IV.
    pub stage3_fraction: f64,
    /// Per-ion probability of an early-loss event before stage I.
    pub early_loss: f64,
}

impl Default for AssignmentModel {
    fn default() -> AssignmentModel {
        AssignmentModel { f0: 0.996, f1: 0.981, leak_id: 1.0, stage3_fraction: 0.5, early_loss: 0.0 }
    }
}

impl AssignmentModel {
    pub fn perfect() -> AssignmentModel {
        AssignmentModel { f0: 1.0, f1: 1.0, ..AssignmentModel::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("f0", self.f0),
            ("f1", self.f1),
            ("leak_id", self.leak_id),
            ("stage3_fraction", self.stage3_fraction),
            ("early_loss", self.early_loss),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("detection.{k} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

const EARLY: [Stage; 4] = [B, D, D, D];
const ZERO: [Stage; 4] = [D, B, D, D];
const LEAK3: [Stage; 4] = [D, D, B, D];
const ONE: [Stage; 4] = [D, D, D, B];
const LEAK4: [Stage; 4] = [D, D, D, D];

/// Stage pattern for one ion. Stages after the deciding one are recorded dark.
pub fn detect_ion<R: Rng + ?Sized>(truth: Level, model: &AssignmentModel, rng: &mut R) -> DetectionRecord {
    if model.early_loss > 0.0 && rng.random::<f64>() < model.early_loss {
        return DetectionRecord::from_stages(EARLY);
    }
    let stages = match truth {
        Level::Zero => {
            if rng.random::<f64>() < model.f0 {
                ZERO
            } else {
                ONE
            }
        }
        Level::One => {
            if rng.random::<f64>() < model.f1 {
                ONE
            } else {
                ZERO
            }
        }
        Level::Leak => {
            if rng.random::<f64>() < model.leak_id {
                if rng.random::<f64>() < model.stage3_fraction {
                    LEAK3
                } else {
                    LEAK4
                }
            } else if rng.random::<f64>() < 0.5 {
                ZERO
            } else {
                ONE
            }
        }
    };
    DetectionRecord::from_stages(stages)
}

pub fn detect<R: Rng + ?Sized>(truth: &[Level], model: &AssignmentModel, rng: &mut R) -> Vec<DetectionRecord> {
    truth.iter().map(|&t| detect_ion(t, model, rng)).collect()
}

pub fn detect_seeded(truth: &[Level], model: &AssignmentModel, seed: u64) -> Vec<DetectionRecord> {
    detect(truth, model, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A trial is kept iff no ion decoded as Leak or EarlyLoss.
pub fn is_kept(trial: &[DetectionRecord]) -> bool {
    trial.iter().all(|r| r.decoded.bit().is_some())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostSelection {
    pub kept: Vec<usize>,
    pub total: usize,
    pub survival: f64,
}

/// Indices of kept trials and the surviving fraction.
pub fn postselect(trials: &[Vec<DetectionRecord>]) -> Result<PostSelection> {
    if trials.is_empty() {
        return Err(Error::UndefinedStatistic("survival of zero trials".into()));
    }
    let kept: Vec<usize> = (0..trials.len()).filter(|&i| is_kept(&trials[i])).collect();
    let survival = kept.len() as f64 / trials.len() as f64;
    Ok(PostSelection { kept, total: trials.len(), survival })
}

/// Closed-form survival `e^{−nλT}` per storage time.
pub fn survival_curve(rate: f64, times: &[f64], n_ions: usize) -> Result<Vec<f64>> {
    if rate < 0.0 {
        return Err(Error::InvalidArgument(format!("leak rate {rate} must be ≥ 0")));
    }
    Ok(times.iter().map(|t| (-(n_ions as f64) * rate * t).exp()).collect())
}

/// One CSV row per trial: stage bits per ion, decoded symbols, kept flag.
pub fn write_records_csv<W: Write>(out: W, trials: &[Vec<DetectionRecord>]) -> Result<()> {
    let n = trials.first().map_or(0, |t| t.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = Vec::new();
    for i in 0..n {
        for s in 1..=4 {
            header.push(format!("ion{i}_stage{s}"));
        }
    }
    header.extend((0..n).map(|i| format!("ion{i}_symbol")));
    header.push("kept".into());
    w.write_record(&header)?;
    for trial in trials {
        if trial.len() != n {
            return Err(Error::InvalidArgument("trials with different ion counts".into()));
        }
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for r in trial {
            row.extend(r.stages.iter().map(|s| s.bit().to_string()));
        }
        row.extend(trial.iter().map(|r| r.decoded.name().to_string()));
        row.push(u8::from(is_kept(trial)).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
