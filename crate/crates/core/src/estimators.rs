//! Four-qubit GHZ fidelity from the three-term decomposition
//! `F = (2⟨O₁⟩ + ⟨O₂⟩ − ⟨O₃⟩)/4`, evaluated exactly or by phase-sampled
//! shots, plus parity readout.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{
    build_analysis_circuit_for, rotation_matrix, run_circuit, BellTarget, Component, Family, Layout,
};
use crate::detection::{detect, AssignmentModel};
use crate::error::{Error, Result};
use crate::qstate::{Level, Observable, QubitType, Register};

/// Shots per independent RNG stream; fixes the merge order regardless of
/// the thread count.
const CHUNK: usize = 32;

/// `O₁` on the four memory sites: the projector onto the two support
/// strings of the family.
pub fn observable_o1(family: Family, sites: [usize; 4]) -> Observable {
    let terms: [(f64, &str); 8] = match family {
        Family::Psi => [
            (1.0, "IIII"),
            (1.0, "ZZZZ"),
            (1.0, "IZZI"),
            (1.0, "ZIIZ"),
            (-1.0, "ZIZI"),
            (-1.0, "IZIZ"),
            (-1.0, "ZZII"),
            (-1.0, "IIZZ"),
        ],
        // same pattern with the last two qubits exchanged
        Family::Phi => [
            (1.0, "IIII"),
            (1.0, "ZZZZ"),
            (1.0, "IZIZ"),
            (1.0, "ZIZI"),
            (-1.0, "ZIIZ"),
            (-1.0, "IZZI"),
            (-1.0, "ZZII"),
            (-1.0, "IIZZ"),
        ],
    };
    Observable::from_strings(sites.to_vec(), &terms).expect("static Pauli strings").scaled(0.125)
}

pub fn observable_o2(sites: [usize; 4]) -> Observable {
    Observable::from_strings(
        sites.to_vec(),
        &[
            (3.0, "XXXX"),
            (3.0, "YYYY"),
            (1.0, "XYXY"),
            (1.0, "YXYX"),
            (1.0, "XXYY"),
            (1.0, "YYXX"),
            (1.0, "XYYX"),
            (1.0, "YXXY"),
        ],
    )
    .expect("static Pauli strings")
    .scaled(0.125)
}

pub fn observable_o3(family: Family, sites: [usize; 4]) -> Observable {
    let (a, b, c, d, e, f) = match family {
        Family::Psi => ("XYXY", "YXYX", "XXYY", "YYXX", "XYYX", "YXXY"),
        Family::Phi => ("XYYX", "YXXY", "XXYY", "YYXX", "XYXY", "YXYX"),
    };
    Observable::from_strings(
        sites.to_vec(),
        &[
            (1.0, "XXXX"),
            (1.0, "YYYY"),
            (-1.0, a),
            (-1.0, b),
            (-1.0, c),
            (-1.0, d),
            (3.0, e),
            (3.0, f),
        ],
    )
    .expect("static Pauli strings")
    .scaled(0.125)
}

pub fn analytic_o1(reg: &Register, family: Family, sites: [usize; 4]) -> Result<f64> {
    reg.expectation(&observable_o1(family, sites))
}

pub fn analytic_o2(reg: &Register, sites: [usize; 4]) -> Result<f64> {
    reg.expectation(&observable_o2(sites))
}

pub fn analytic_o3(reg: &Register, family: Family, sites: [usize; 4]) -> Result<f64> {
    reg.expectation(&observable_o3(family, sites))
}

/// Value with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Tallies of one sampled term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShotStats {
    pub kept: usize,
    pub discarded: usize,
    /// Kept shots with a positive outcome.
    pub positive: usize,
    /// Kept shots with a negative outcome.
    pub negative: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ShotStats {
    fn record(&mut self, v: f64) {
        self.kept += 1;
        self.sum += v;
        self.sum_sq += v * v;
        if v > 0.0 {
            self.positive += 1;
        } else if v < 0.0 {
            self.negative += 1;
        }
    }

    pub fn merge(mut self, o: ShotStats) -> ShotStats {
        self.kept += o.kept;
        self.discarded += o.discarded;
        self.positive += o.positive;
        self.negative += o.negative;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self
    }

    pub fn raw(&self) -> usize {
        self.kept + self.discarded
    }

    /// Sample mean and standard error of the kept shots.
    pub fn estimate(&self) -> Result<Estimate> {
        if self.kept == 0 {
            return Err(Error::UndefinedStatistic("no kept shots".into()));
        }
        let n = self.kept as f64;
        let mean = self.sum / n;
        let var = if self.kept > 1 { ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        Ok(Estimate { value: mean, stderr: (var / n).sqrt() })
    }
}

/// How sampled outcomes are read out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum Readout {
    /// Exact computational-basis outcome; shots with any leaked ion are
    /// discarded.
    #[default]
    Ideal,
    /// Outcome passed through the multi-state detection model.
    Detected(AssignmentModel),
}

/// Sampling options for the shot-based estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct McOptions {
    pub memory: [usize; 4],
    pub readout: Readout,
}

impl Default for McOptions {
    fn default() -> McOptions {
        McOptions { memory: crate::circuits::MEMORY_SITES, readout: Readout::Ideal }
    }
}

fn memory_type(reg: &Register, memory: &[usize]) -> QubitType {
    memory.iter().map(|&s| reg.label(s)).find(|&l| l != QubitType::ShelvedD).unwrap_or(QubitType::S)
}

/// Reads `bits` through the readout model; `None` means discarded.
fn read_bits<R: Rng + ?Sized>(truth: &[Level], readout: &Readout, rng: &mut R) -> Option<Vec<u8>> {
    match readout {
        Readout::Ideal => truth
            .iter()
            .map(|l| match l {
                Level::Zero => Some(0),
                Level::One => Some(1),
                Level::Leak => None,
            })
            .collect(),
        Readout::Detected(model) => detect(truth, model, rng).iter().map(|r| r.decoded.bit()).collect(),
    }
}

fn shot_value(which: Component, family: Family, bits: &[u8]) -> f64 {
    match which {
        Component::O1 => {
            let (a, b) = match family {
                Family::Psi => BellTarget::PsiPlus.support(),
                Family::Phi => BellTarget::PhiPlus.support(),
            };
            if bits == a || bits == b {
                1.0
            } else {
                0.0
            }
        }
        _ => {
            if bits.iter().filter(|&&b| b == 1).count() % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Shot-based estimate of one term. For `O₂`/`O₃` each shot draws an
/// analysis phase uniformly from `[0, 2π)` and records the four-fold parity;
/// for `O₁` it records whether the outcome lies on the target support.
pub fn estimate_mc(
    reg: &Register,
    which: Component,
    family: Family,
    shots: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<ShotStats> {
    if shots == 0 {
        return Err(Error::InvalidArgument("need at least one shot".into()));
    }
    let reduced = reg.partial_trace(&opts.memory)?;
    let layout = Layout { n_sites: 4, memory: [0, 1, 2, 3], qubit_type: memory_type(reg, &opts.memory) };
    let chunks = shots.div_ceil(CHUNK);
    let parts: Vec<Result<ShotStats>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(shots - c * CHUNK);
            let mut stats = ShotStats::default();
            for _ in 0..n {
                let phi = rng.random::<f64>() * 2.0 * PI;
                let mut r = reduced.clone();
                let circuit = build_analysis_circuit_for(which, phi, family, &layout)?;
                run_circuit(&mut r, &circuit, None)?;
                let truth = r.sample_zbasis(&[0, 1, 2, 3], &mut rng)?;
                match read_bits(&truth, &opts.readout, &mut rng) {
                    Some(bits) => stats.record(shot_value(which, family, &bits)),
                    None => stats.discarded += 1,
                }
            }
            Ok(stats)
        })
        .collect();
    let mut total = ShotStats::default();
    for p in parts {
        total = total.merge(p?);
    }
    Ok(total)
}

/// Exact parity after the analysis circuit at a fixed phase.
pub fn analysis_parity(reg: &Register, which: Component, phi: f64, family: Family, memory: [usize; 4]) -> Result<f64> {
    let mut r = reg.partial_trace(&memory)?;
    let layout = Layout { n_sites: 4, memory: [0, 1, 2, 3], qubit_type: memory_type(reg, &memory) };
    run_circuit(&mut r, &build_analysis_circuit_for(which, phi, family, &layout)?, None)?;
    r.expectation(&Observable::from_strings(vec![0, 1, 2, 3], &[(1.0, "ZZZZ")])?)
}

/// Average of [`analysis_parity`] over a uniform phase grid of `n` points.
pub fn phase_grid_average(
    reg: &Register,
    which: Component,
    family: Family,
    memory: [usize; 4],
    n: usize,
) -> Result<f64> {
    let mut s = 0.0;
    for k in 0..n {
        s += analysis_parity(reg, which, 2.0 * PI * k as f64 / n as f64, family, memory)?;
    }
    Ok(s / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FidelityMode {
    Analytic,
    MonteCarlo { shots: usize, seed: u64 },
}

/// Components, combined fidelity and shot bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub o1: Estimate,
    pub o2: Estimate,
    pub o3: Estimate,
    pub fidelity: Estimate,
    /// Target sign of the coherence term (+1 for the plus states).
    pub sign: f64,
    pub shots_per_term: usize,
    pub kept: [usize; 3],
    pub discarded_leak: usize,
    /// Raw per-term statistics (empty in analytic mode).
    pub stats: Vec<ShotStats>,
}

impl FidelityEstimate {
    fn combine(o1: Estimate, o2: Estimate, o3: Estimate, sign: f64) -> Estimate {
        Estimate {
            value: (2.0 * o1.value + sign * (o2.value - o3.value)) / 4.0,
            stderr: (4.0 * o1.stderr.powi(2) + o2.stderr.powi(2) + o3.stderr.powi(2)).sqrt() / 4.0,
        }
    }

    /// Combine sampled `O₁`, `O₂`, `O₃` tallies (in that order).
    pub fn from_stats(stats: Vec<ShotStats>, sign: f64, shots_per_term: usize) -> Result<FidelityEstimate> {
        if stats.len() != 3 {
            return Err(Error::InvalidArgument(format!("{} term tallies; need 3", stats.len())));
        }
        let o1 = stats[0].estimate()?;
        let o2 = stats[1].estimate()?;
        let o3 = stats[2].estimate()?;
        Ok(FidelityEstimate {
            o1,
            o2,
            o3,
            fidelity: FidelityEstimate::combine(o1, o2, o3, sign),
            sign,
            shots_per_term,
            kept: [stats[0].kept, stats[1].kept, stats[2].kept],
            discarded_leak: stats.iter().map(|s| s.discarded).sum(),
            stats,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fidelity with `target` on the four memory sites, either from the exact
/// Pauli expansions or from sampled shots.
pub fn ghz_fidelity(
    reg: &Register,
    target: BellTarget,
    mode: &FidelityMode,
    opts: &McOptions,
) -> Result<FidelityEstimate> {
    let family = target.family();
    let sign = target.sign();
    match mode {
        FidelityMode::Analytic => {
            let e = |v: f64| Estimate { value: v, stderr: 0.0 };
            let o1 = e(analytic_o1(reg, family, opts.memory)?);
            let o2 = e(analytic_o2(reg, opts.memory)?);
            let o3 = e(analytic_o3(reg, family, opts.memory)?);
            Ok(FidelityEstimate {
                o1,
                o2,
                o3,
                fidelity: FidelityEstimate::combine(o1, o2, o3, sign),
                sign,
                shots_per_term: 0,
                kept: [0; 3],
                discarded_leak: 0,
                stats: Vec::new(),
            })
        }
        FidelityMode::MonteCarlo { shots, seed } => {
            let mut stats = Vec::with_capacity(3);
            for (k, which) in [Component::O1, Component::O2, Component::O3].into_iter().enumerate() {
                let term_seed = seed.wrapping_mul(3).wrapping_add(k as u64);
                stats.push(estimate_mc(reg, which, family, *shots, term_seed, opts)?);
            }
            FidelityEstimate::from_stats(stats, sign, *shots)
        }
    }
}

/// `⟨⊗Z⟩` over `sites` after a global `π/2` rotation with phase `phi`.
pub fn parity_expectation(reg: &Register, phi: f64, sites: &[usize]) -> Result<f64> {
    if sites.is_empty() {
        return Err(Error::InvalidArgument("parity over no sites".into()));
    }
    let mut r = reg.partial_trace(sites)?;
    let u = rotation_matrix(FRAC_PI_2, phi);
    for s in 0..sites.len() {
        r.apply_kraus_unchecked(std::slice::from_ref(&u), &[s])?;
    }
    let z = "Z".repeat(sites.len());
    r.expectation(&Observable::from_strings((0..sites.len()).collect(), &[(1.0, &z)])?)
}
