//! TOML experiment configuration. Every section is optional and every key
//! has a default; unknown keys are rejected. Units are SI (s, Hz, 1/s).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::circuits::{calibrate_p2, BellTarget, GateNoise};
use crate::detection::AssignmentModel;
use crate::error::{Error, Result};
use crate::gatedesign::{ChainModel, GateRequest, PhaseSymmetry, SolveOptions, SUB_GATE_THETA};
use crate::noise::{FieldProfile, NoiseModel};

/// Measured transverse mode frequencies of the six-ion chain, Hz.
pub const MEASURED_MODES: [f64; 6] = [1.303e6, 1.347e6, 1.385e6, 1.416e6, 1.441e6, 1.458e6];
/// Storage schedule: times (s) and samples per observable.
pub const SCHEDULE_TIMES: [f64; 6] = [2.0, 30.0, 60.0, 120.0, 240.0, 960.0];
pub const SCHEDULE_SHOTS: [usize; 6] = [250, 80, 70, 60, 50, 30];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub chain: ChainSection,
    pub noise: NoiseSection,
    pub gate: GateSection,
    pub detection: AssignmentModel,
    pub run: RunSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    pub n_ions: usize,
    /// Transverse centre-of-mass frequency, Hz.
    pub transverse_com_freq: f64,
    /// Axial frequency, Hz; fitted to `measured_modes` when absent.
    pub axial_freq: Option<f64>,
    pub measured_modes: Vec<f64>,
    /// Use `measured_modes` in place of the computed spectrum.
    pub use_measured_modes: bool,
}

impl Default for ChainSection {
    fn default() -> ChainSection {
        ChainSection {
            n_ions: 6,
            transverse_com_freq: 1.458e6,
            axial_freq: None,
            measured_modes: MEASURED_MODES.to_vec(),
            use_measured_modes: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Leak rate per ion, 1/s.
    pub leak_rate: f64,
    /// Residual Markovian dephasing per memory ion, 1/s.
    pub dephasing_rate: f64,
    /// Differential OU RMS, Hz.
    pub ou_sigma: f64,
    pub ou_tau: f64,
    /// Common-mode OU RMS, Hz.
    pub common_sigma: f64,
    /// Uniform field offset, Hz.
    pub b0: f64,
    /// Linear coefficient, Hz per length unit; derived from
    /// `pair_splitting` when absent.
    pub grad: Option<f64>,
    /// Quadratic coefficient, Hz per length unit²; derived from
    /// `second_order_period` when absent.
    pub curv: Option<f64>,
    /// Detuning difference of the central ion pair from the gradient, Hz.
    pub pair_splitting: f64,
    /// Logical oscillation period of the four-ion state from curvature, s.
    pub second_order_period: f64,
    pub n_steps: usize,
}

impl Default for NoiseSection {
    fn default() -> NoiseSection {
        NoiseSection {
            leak_rate: 0.0,
            dephasing_rate: 0.0,
            ou_sigma: 0.0,
            ou_tau: 0.1,
            common_sigma: 0.0,
            b0: 0.0,
            grad: None,
            curv: None,
            pair_splitting: 3.716,
            second_order_period: 9.9,
            n_steps: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSection {
    pub p1: f64,
    /// Two-site depolarizing strength; calibrated from `bell_fidelity`
    /// when absent.
    pub p2: Option<f64>,
    pub bell_fidelity: f64,
    /// Beat note, Hz.
    pub mu: f64,
    pub t_gate: f64,
    pub n_segments: usize,
    pub symmetry: PhaseSymmetry,
    pub drift_nulling: bool,
    pub starts: usize,
    /// Thermal occupation of every mode.
    pub nbar: f64,
    /// Common mode drift for the fidelity estimate, Hz.
    pub drift: f64,
    /// Ions whose pairs are designed.
    pub ions: Vec<usize>,
    /// Carrier detuning, Hz. Documentation only: it does not enter the
    /// effective force model.
    pub carrier_detuning: f64,
}

impl Default for GateSection {
    fn default() -> GateSection {
        GateSection {
            p1: 0.0,
            p2: None,
            bell_fidelity: 0.991,
            mu: 1.337e6,
            t_gate: 150e-6,
            n_segments: 24,
            symmetry: PhaseSymmetry::Antisymmetric,
            drift_nulling: true,
            starts: 48,
            nbar: 0.1,
            drift: 1000.0,
            ions: vec![1, 2, 3, 4],
            carrier_detuning: 26e6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Field-insensitive clock states.
    Clock,
    /// Field-sensitive states.
    Sensitive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Ideal,
    Detected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// One of `psi+`, `psi-`, `phi+`, `phi-`.
    pub target: String,
    /// Samples per observable for the prep-fidelity run.
    pub prep_shots: usize,
    pub times: Vec<f64>,
    pub shots: Vec<usize>,
    /// Spin echo during storage; defaults to on for the storage scan and
    /// off for the parity scan.
    pub echo: Option<bool>,
    /// Compose gate noise into the storage-scan preparation.
    pub prep_noise: bool,
    pub readout: ReadoutKind,
    /// Defaults to clock states for the storage scan and field-sensitive
    /// states for the parity scan.
    pub encoding: Option<Encoding>,
    pub dfs_order: u8,
    /// Parity-scan windows `[start, end]`, s.
    pub windows: Vec<[f64; 2]>,
    /// Parity-scan grid step, s.
    pub dt: f64,
    /// Field trajectories averaged per parity point.
    pub trajectories: usize,
    /// Trials per symbol for detection calibration.
    pub detect_trials: usize,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> RunSection {
        RunSection {
            seed: 0,
            target: "psi+".into(),
            prep_shots: 250,
            times: SCHEDULE_TIMES.to_vec(),
            shots: SCHEDULE_SHOTS.to_vec(),
            echo: None,
            prep_noise: false,
            readout: ReadoutKind::Ideal,
            encoding: None,
            dfs_order: 2,
            windows: vec![[0.0, 0.35], [6.0, 6.35]],
            dt: 0.005,
            trajectories: 64,
            detect_trials: 100_000,
            threads: 0,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("{v} must be > 0")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("{v} must be ≥ 0")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.chain;
        if c.n_ions < 2 {
            return Err(Error::config("chain.n_ions", "need at least 2 ions"));
        }
        positive("chain.transverse_com_freq", c.transverse_com_freq)?;
        if let Some(f) = c.axial_freq {
            positive("chain.axial_freq", f)?;
        }
        if c.use_measured_modes && c.measured_modes.len() != c.n_ions {
            return Err(Error::config(
                "chain.measured_modes",
                format!("{} values for {} ions", c.measured_modes.len(), c.n_ions),
            ));
        }
        for &m in &c.measured_modes {
            positive("chain.measured_modes", m)?;
        }

        let n = &self.noise;
        non_negative("noise.leak_rate", n.leak_rate)?;
        non_negative("noise.dephasing_rate", n.dephasing_rate)?;
        non_negative("noise.ou_sigma", n.ou_sigma)?;
        non_negative("noise.common_sigma", n.common_sigma)?;
        positive("noise.ou_tau", n.ou_tau)?;
        positive("noise.second_order_period", n.second_order_period)?;
        non_negative("noise.pair_splitting", n.pair_splitting)?;
        for (k, v) in [("noise.b0", Some(n.b0)), ("noise.grad", n.grad), ("noise.curv", n.curv)] {
            if v.is_some_and(|x| !x.is_finite()) {
                return Err(Error::config(k, "must be finite"));
            }
        }
        if n.n_steps < 2 || !n.n_steps.is_multiple_of(2) {
            return Err(Error::config("noise.n_steps", format!("{} must be even and ≥ 2", n.n_steps)));
        }

        let g = &self.gate;
        if !(0.0..=1.0).contains(&g.p1) {
            return Err(Error::config("gate.p1", format!("{} outside [0, 1]", g.p1)));
        }
        if let Some(p) = g.p2 {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("gate.p2", format!("{p} outside [0, 1]")));
            }
        }
        if !(0.25..=1.0).contains(&g.bell_fidelity) {
            return Err(Error::config("gate.bell_fidelity", format!("{} outside [0.25, 1]", g.bell_fidelity)));
        }
        positive("gate.mu", g.mu)?;
        positive("gate.t_gate", g.t_gate)?;
        if !(2..=64).contains(&g.n_segments) {
            return Err(Error::config("gate.n_segments", format!("{} outside [2, 64]", g.n_segments)));
        }
        if g.starts == 0 {
            return Err(Error::config("gate.starts", "need at least one start"));
        }
        non_negative("gate.nbar", g.nbar)?;
        if !g.drift.is_finite() {
            return Err(Error::config("gate.drift", "must be finite"));
        }
        if g.ions.len() < 2 || g.ions.iter().any(|&i| i >= c.n_ions) {
            return Err(Error::config("gate.ions", format!("need ≥ 2 ion indices below {}", c.n_ions)));
        }

        self.detection.validate().map_err(|e| Error::config("detection", e.to_string()))?;

        let r = &self.run;
        r.target.parse::<BellTarget>().map_err(|e| Error::config("run.target", e.to_string()))?;
        if r.prep_shots == 0 {
            return Err(Error::config("run.prep_shots", "must be ≥ 1"));
        }
        if r.times.len() != r.shots.len() {
            return Err(Error::config(
                "run.shots",
                format!("{} shot counts for {} times", r.shots.len(), r.times.len()),
            ));
        }
        if r.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || r.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("run.times", "times must be non-negative and ascending"));
        }
        if r.shots.contains(&0) {
            return Err(Error::config("run.shots", "shot counts must be ≥ 1"));
        }
        if !matches!(r.dfs_order, 1 | 2) {
            return Err(Error::config("run.dfs_order", format!("{} must be 1 or 2", r.dfs_order)));
        }
        positive("run.dt", r.dt)?;
        for w in &r.windows {
            if !(w[0] >= 0.0 && w[1] >= w[0] && w[1].is_finite()) {
                return Err(Error::config("run.windows", format!("bad window {w:?}")));
            }
        }
        if r.windows.windows(2).any(|p| p[1][0] < p[0][1]) {
            return Err(Error::config("run.windows", "windows must be ordered and disjoint"));
        }
        if r.trajectories == 0 {
            return Err(Error::config("run.trajectories", "must be ≥ 1"));
        }
        if r.detect_trials == 0 {
            return Err(Error::config("run.detect_trials", "must be ≥ 1"));
        }
        Ok(())
    }

    pub fn target(&self) -> BellTarget {
        self.run.target.parse().expect("validated")
    }

    pub fn chain_model(&self) -> Result<ChainModel> {
        let c = &self.chain;
        let model = match c.axial_freq {
            Some(f) => ChainModel::new(c.n_ions, f, c.transverse_com_freq)?,
            None if c.measured_modes.len() == c.n_ions => ChainModel::fitted_to(&c.measured_modes)?,
            None => {
                return Err(Error::config("chain.axial_freq", "required when measured_modes does not match n_ions"))
            }
        };
        if c.use_measured_modes {
            model.with_mode_freqs(&c.measured_modes)
        } else {
            Ok(model)
        }
    }

    pub fn gate_noise(&self) -> Result<GateNoise> {
        let p2 = match self.gate.p2 {
            Some(p) => p,
            None => calibrate_p2(self.gate.bell_fidelity)?,
        };
        let g = GateNoise { p1: self.gate.p1, p2 };
        g.validate()?;
        Ok(g)
    }

    /// Field profile over the chain equilibrium positions with the
    /// gradient and curvature filled in from their calibration targets.
    pub fn field_profile(&self) -> Result<FieldProfile> {
        let positions = crate::gatedesign::equilibrium_positions(self.chain.n_ions)?;
        let probe = FieldProfile::new(0.0, 0.0, 0.0, positions.clone())?;
        let n = &self.noise;
        let grad = n.grad.unwrap_or(n.pair_splitting / probe.central_spacing());
        let curv = match n.curv {
            Some(c) => c,
            None => curvature_for_period(&positions, n.second_order_period)?,
        };
        FieldProfile::new(n.b0, grad, curv, positions)
    }

    pub fn noise_model(&self, encoding: Encoding) -> NoiseModel {
        let n = &self.noise;
        let sensitive = encoding == Encoding::Sensitive;
        NoiseModel {
            leak_rate: n.leak_rate,
            ou_sigma: n.ou_sigma,
            ou_tau: n.ou_tau,
            common_sigma: n.common_sigma,
            dephasing_rate: n.dephasing_rate,
            sensitivity_mask: vec![sensitive; self.chain.n_ions],
        }
    }

    pub fn gate_request(&self) -> GateRequest {
        GateRequest {
            pair: (self.gate.ions[0], self.gate.ions[1]),
            mu: self.gate.mu,
            t_gate: self.gate.t_gate,
            n_segments: self.gate.n_segments,
            target_theta: SUB_GATE_THETA,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            symmetry: self.gate.symmetry,
            drift_nulling: self.gate.drift_nulling,
            starts: self.gate.starts,
            seed: self.run.seed,
            ..SolveOptions::robust()
        }
    }
}

/// Load and validate a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml(&text)
}

/// Curvature giving the four-ion logical state on ions `1..=4` an
/// oscillation period `period`: the logical detuning is
/// `c·(x₁² + x₄² − x₂² − x₃²)`.
pub fn curvature_for_period(positions: &[f64], period: f64) -> Result<f64> {
    if positions.len() < 5 {
        return Err(Error::config("chain.n_ions", "second-order calibration needs at least 5 ions"));
    }
    let x = positions;
    let lever = x[1] * x[1] + x[4] * x[4] - x[2] * x[2] - x[3] * x[3];
    if lever.abs() < 1e-12 {
        return Err(Error::config("noise.curv", "curvature does not split the logical state"));
    }
    Ok(1.0 / (period * lever.abs()))
}
