//! Storage-time noise: static field inhomogeneity, Ornstein–Uhlenbeck field
//! fluctuations, residual dephasing and collision-induced leakage.
//!
//! Every channel here is diagonal in the computational basis (or maps
//! populations into `|L⟩`), so all of them commute with each other. Between
//! echo pulses the slices can therefore be accumulated into one phase per ion
//! and one leak probability per ion without approximation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::circuits::{apply_op, dephasing_kraus, GateOp};
use crate::error::{Error, Result};
use crate::qstate::{QubitType, Register, Role, SITE_DIM};

/// Static detuning profile `δ(x) = b0 + grad·x + curv·x²` in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldProfile {
    pub b0: f64,
    pub grad: f64,
    pub curv: f64,
    pub positions: Vec<f64>,
}

impl FieldProfile {
    pub fn new(b0: f64, grad: f64, curv: f64, positions: Vec<f64>) -> Result<FieldProfile> {
        let p = FieldProfile { b0, grad, curv, positions };
        p.validate()?;
        Ok(p)
    }

    /// Uniform offset only.
    pub fn uniform(b0: f64, positions: Vec<f64>) -> Result<FieldProfile> {
        FieldProfile::new(b0, 0.0, 0.0, positions)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("ion positions must be strictly increasing".into()));
        }
        if ![self.b0, self.grad, self.curv].iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("field coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.positions.len();
        (0..n).all(|i| (self.positions[i] + self.positions[n - 1 - i]).abs() <= tol)
    }

    /// Distance between the two central ions (or the only pair).
    pub fn central_spacing(&self) -> f64 {
        let n = self.positions.len();
        if n < 2 {
            return 1.0;
        }
        let hi = n / 2;
        self.positions[hi] - self.positions[hi - 1]
    }
}

/// Rates and stochastic field parameters for storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Leak rate per ion, 1/s.
    pub leak_rate: f64,
    /// RMS of the differential OU mode (detuning between the central pair), Hz.
    pub ou_sigma: f64,
    /// OU correlation time, s.
    pub ou_tau: f64,
    /// RMS of the common OU mode, Hz.
    pub common_sigma: f64,
    /// Residual Markovian dephasing rate per memory ion, 1/s.
    pub dephasing_rate: f64,
    /// Per-ion field sensitivity; clock-state storage uses `false`.
    pub sensitivity_mask: Vec<bool>,
}

impl Default for NoiseModel {
    fn default() -> NoiseModel {
        NoiseModel {
            leak_rate: 0.0,
            ou_sigma: 0.0,
            ou_tau: 0.1,
            common_sigma: 0.0,
            dephasing_rate: 0.0,
            sensitivity_mask: Vec::new(),
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("leak_rate", self.leak_rate),
            ("ou_sigma", self.ou_sigma),
            ("common_sigma", self.common_sigma),
            ("dephasing_rate", self.dephasing_rate),
        ];
        for (k, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("noise.{k} = {v} must be a finite value ≥ 0")));
            }
        }
        if !(self.ou_tau > 0.0 && self.ou_tau.is_finite()) {
            return Err(Error::Validation(format!("noise.ou_tau = {} must be > 0", self.ou_tau)));
        }
        Ok(())
    }

    /// Sensitivity of ion `i`; an empty mask means all sensitive.
    pub fn sensitive(&self, i: usize) -> bool {
        self.sensitivity_mask.get(i).copied().unwrap_or(self.sensitivity_mask.is_empty())
    }

    fn mask_vec(&self, n: usize) -> Vec<bool> {
        (0..n).map(|i| self.sensitive(i)).collect()
    }
}

/// Per-ion static detuning in Hz, zeroed where `mask` is false.
pub fn detuning_vector(profile: &FieldProfile, mask: &[bool]) -> Vec<f64> {
    profile
        .positions
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if mask.get(i).copied().unwrap_or(true) {
                profile.b0 + profile.grad * x + profile.curv * x * x
            } else {
                0.0
            }
        })
        .collect()
}

/// Phase `2π δ_i t` picked up by `|1⟩` relative to `|0⟩` on each ion.
pub fn dephasing_phases(detunings: &[f64], t: f64) -> Vec<f64> {
    detunings.iter().map(|d| 2.0 * PI * d * t).collect()
}

/// Dense `⊗_i diag(1, e^{-i2πδ_i t}, 1)`.
pub fn dephasing_unitary(detunings: &[f64], t: f64) -> Result<DMatrix<C64>> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("negative time {t}")));
    }
    let n = detunings.len();
    let dim = SITE_DIM.pow(n as u32);
    let phases = dephasing_phases(detunings, t);
    Ok(DMatrix::from_fn(dim, dim, |r, c| {
        if r != c {
            return C64::new(0.0, 0.0);
        }
        let mut idx = r;
        let mut ph = 0.0;
        for p in &phases {
            if idx % SITE_DIM == 1 {
                ph += p;
            }
            idx /= SITE_DIM;
        }
        C64::from_polar(1.0, -ph)
    }))
}

/// Leak probability `1 − e^{−λt}`.
pub fn leak_probability(rate: f64, t: f64) -> f64 {
    -(-rate * t).exp_m1()
}

/// Single-site incoherent transfer of `|0⟩` and `|1⟩` into `|L⟩`.
pub fn leakage_kraus(rate: f64, t: f64) -> Result<Vec<DMatrix<C64>>> {
    if rate < 0.0 || t < 0.0 {
        return Err(Error::InvalidArgument(format!("leak rate {rate} and time {t} must be ≥ 0")));
    }
    Ok(leakage_kraus_p(leak_probability(rate, t)))
}

pub fn leakage_kraus_p(p: f64) -> Vec<DMatrix<C64>> {
    let keep = C64::new((1.0 - p).sqrt(), 0.0);
    let go = C64::new(p.sqrt(), 0.0);
    let mut k0 = DMatrix::<C64>::identity(SITE_DIM, SITE_DIM);
    k0[(0, 0)] = keep;
    k0[(1, 1)] = keep;
    let mut k1 = DMatrix::<C64>::zeros(SITE_DIM, SITE_DIM);
    k1[(2, 0)] = go;
    let mut k2 = DMatrix::<C64>::zeros(SITE_DIM, SITE_DIM);
    k2[(2, 1)] = go;
    vec![k0, k1, k2]
}

/// Stationary Ornstein–Uhlenbeck process with exact discrete updates.
#[derive(Clone, Debug)]
pub struct OuProcess {
    pub sigma: f64,
    pub tau: f64,
    pub x: f64,
}

impl OuProcess {
    /// Start from a draw of the stationary distribution.
    pub fn stationary<R: rand::Rng + ?Sized>(sigma: f64, tau: f64, rng: &mut R) -> OuProcess {
        let xi: f64 = StandardNormal.sample(rng);
        OuProcess { sigma, tau, x: sigma * xi }
    }

    pub fn step<R: rand::Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        let a = (-dt / self.tau).exp();
        let xi: f64 = StandardNormal.sample(rng);
        self.x = self.x * a + self.sigma * (1.0 - a * a).sqrt() * xi;
        self.x
    }

    /// Advance by `dt` and return `∫ x ds` over the step, sampled jointly
    /// with the endpoint from their exact conditional Gaussian.
    pub fn step_integrated<R: rand::Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        let (s, tau) = (self.sigma, self.tau);
        let a = (-dt / tau).exp();
        let var_x = s * s * (1.0 - a * a);
        let var_i = s * s * tau * tau * (2.0 * dt / tau - 3.0 + 4.0 * a - a * a);
        let cov = s * s * tau * (1.0 - a) * (1.0 - a);
        let mean_x = self.x * a;
        let mean_i = self.x * tau * (1.0 - a);
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let (x_new, integral) = if var_x > 0.0 {
            let sx = var_x.sqrt();
            let c = cov / sx;
            let rest = (var_i - c * c).max(0.0).sqrt();
            (mean_x + sx * z1, mean_i + c * z1 + rest * z2)
        } else {
            (mean_x, mean_i + var_i.max(0.0).sqrt() * z2)
        };
        self.x = x_new;
        integral
    }
}

/// Sampled field fluctuation: `detunings[k][i]` is the OU detuning of ion `i`
/// at `times[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub common: Vec<f64>,
    pub differential: Vec<f64>,
    pub detunings: Vec<Vec<f64>>,
}

/// Ion `i` sees `c + d·x_i/s`, with `s` the central-pair spacing, so the
/// central pair differs by exactly `d`.
fn mode_weights(profile: &FieldProfile, mask: &[bool]) -> Vec<(f64, f64)> {
    let s = profile.central_spacing();
    profile
        .positions
        .iter()
        .enumerate()
        .map(|(i, &x)| if mask.get(i).copied().unwrap_or(true) { (1.0, x / s) } else { (0.0, 0.0) })
        .collect()
}

pub fn ou_trajectory(
    model: &NoiseModel,
    profile: &FieldProfile,
    t_total: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("time step {dt} must be > 0")));
    }
    if t_total < 0.0 {
        return Err(Error::InvalidArgument(format!("negative duration {t_total}")));
    }
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut common = OuProcess::stationary(model.common_sigma, model.ou_tau, &mut rng);
    let mut diff = OuProcess::stationary(model.ou_sigma, model.ou_tau, &mut rng);
    let weights = mode_weights(profile, &model.mask_vec(profile.positions.len()));
    let n = (t_total / dt).floor() as usize + 1;
    let mut tr = Trajectory {
        times: Vec::with_capacity(n),
        common: Vec::with_capacity(n),
        differential: Vec::with_capacity(n),
        detunings: Vec::with_capacity(n),
    };
    for k in 0..n {
        if k > 0 {
            common.step(dt, &mut rng);
            diff.step(dt, &mut rng);
        }
        tr.times.push(k as f64 * dt);
        tr.common.push(common.x);
        tr.differential.push(diff.x);
        tr.detunings.push(weights.iter().map(|(wc, wd)| wc * common.x + wd * diff.x).collect());
    }
    Ok(tr)
}

/// Draws the accumulated OU phase of every ion over successive intervals.
pub struct PhaseSampler {
    common: OuProcess,
    diff: OuProcess,
    weights: Vec<(f64, f64)>,
    rng: ChaCha8Rng,
}

impl PhaseSampler {
    pub fn new(model: &NoiseModel, profile: &FieldProfile, seed: u64) -> PhaseSampler {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let common = OuProcess::stationary(model.common_sigma, model.ou_tau, &mut rng);
        let diff = OuProcess::stationary(model.ou_sigma, model.ou_tau, &mut rng);
        let weights = mode_weights(profile, &model.mask_vec(profile.positions.len()));
        PhaseSampler { common, diff, weights, rng }
    }

    /// Per-ion phase `2π ∫ δ_OU dt` over the next `dt` seconds.
    pub fn advance(&mut self, dt: f64) -> Vec<f64> {
        let ic = self.common.step_integrated(dt, &mut self.rng);
        let id = self.diff.step_integrated(dt, &mut self.rng);
        self.weights.iter().map(|(wc, wd)| 2.0 * PI * (wc * ic + wd * id)).collect()
    }
}

/// Storage parameters for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub duration: f64,
    pub echo: bool,
    pub n_steps: usize,
}

fn memory_echo_type(reg: &Register) -> Result<QubitType> {
    let mut t = None;
    for s in reg.memory_sites() {
        let l = reg.label(s);
        if l == QubitType::ShelvedD {
            continue;
        }
        match t {
            None => t = Some(l),
            Some(prev) if prev != l => {
                return Err(Error::Protocol("memory ions hold mixed qubit types".into()))
            }
            _ => {}
        }
    }
    t.ok_or_else(|| Error::Protocol("no unshelved memory ion to echo".into()))
}

fn noisy_sites(reg: &Register) -> Vec<usize> {
    (0..reg.n_sites())
        .filter(|&s| reg.roles()[s] == Role::Memory && reg.label(s) != QubitType::ShelvedD)
        .collect()
}

/// Evolve `reg` through `n_steps` storage slices of length `T/n_steps`, with
/// a global `π` echo on the memory qubit type after slice `n_steps/2` when
/// `echo` is set. Only unshelved memory ions are affected.
pub fn storage_evolution(
    reg: &mut Register,
    duration: f64,
    model: &NoiseModel,
    profile: &FieldProfile,
    echo: bool,
    n_steps: usize,
    seed: u64,
) -> Result<()> {
    check_storage_args(reg, duration, model, profile, echo, n_steps)?;
    let dt = duration / n_steps as f64;
    let static_det = detuning_vector(profile, &model.mask_vec(reg.n_sites()));
    let targets = noisy_sites(reg);
    let mut sampler = PhaseSampler::new(model, profile, seed);
    let halves: Vec<usize> = if echo { vec![n_steps / 2, n_steps / 2] } else { vec![n_steps] };
    for (h, &steps) in halves.iter().enumerate() {
        if h == 1 {
            let target = memory_echo_type(reg)?;
            apply_op(reg, &GateOp::EchoPi { target }, None)?;
        }
        let mut phases = vec![0.0; reg.n_sites()];
        for _ in 0..steps {
            let ou = sampler.advance(dt);
            for &s in &targets {
                phases[s] += 2.0 * PI * static_det[s] * dt + ou[s];
            }
        }
        let span = steps as f64 * dt;
        reg.apply_site_phases(&phases)?;
        apply_incoherent(reg, &targets, model, span)?;
    }
    Ok(())
}

pub(crate) fn check_storage_args(
    reg: &Register,
    duration: f64,
    model: &NoiseModel,
    profile: &FieldProfile,
    echo: bool,
    n_steps: usize,
) -> Result<()> {
    model.validate()?;
    profile.validate()?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!("storage time {duration} must be ≥ 0")));
    }
    if n_steps == 0 || (echo && (n_steps < 2 || !n_steps.is_multiple_of(2))) {
        return Err(Error::InvalidArgument(format!(
            "n_steps = {n_steps}; need ≥ 1, and an even count ≥ 2 with echo"
        )));
    }
    if profile.positions.len() != reg.n_sites() {
        return Err(Error::InvalidArgument(format!(
            "{} ion positions for {} sites",
            profile.positions.len(),
            reg.n_sites()
        )));
    }
    Ok(())
}

/// Residual dephasing and leakage accumulated over `span` seconds.
pub(crate) fn apply_incoherent(reg: &mut Register, sites: &[usize], model: &NoiseModel, span: f64) -> Result<()> {
    if model.dephasing_rate > 0.0 {
        let p = leak_probability(model.dephasing_rate, span);
        let k = dephasing_kraus(p);
        for &s in sites {
            reg.apply_kraus_unchecked(&k, &[s])?;
        }
    }
    if model.leak_rate > 0.0 {
        let k = leakage_kraus(model.leak_rate, span)?;
        for &s in sites {
            reg.apply_kraus_unchecked(&k, &[s])?;
        }
    }
    Ok(())
}

/// Ensemble coherence `⟨e^{iφ}⟩` after time `t` for OU detuning noise of
/// RMS `sigma` (Hz) and correlation time `tau`.
pub fn ou_coherence(sigma: f64, tau: f64, t: f64) -> f64 {
    let var = (2.0 * PI).powi(2) * 2.0 * sigma * sigma * tau * (t - tau * (1.0 - (-t / tau).exp()));
    (-var / 2.0).exp()
}

/// Differential OU RMS that gives a long-time coherence decay time `tau_d`.
pub fn ou_sigma_for_decay(tau_d: f64, tau_c: f64) -> f64 {
    1.0 / (2.0 * PI * (tau_c * tau_d).sqrt())
}
