//! Scripted experiment pipelines and their tabular outputs.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Encoding, ExperimentConfig, ReadoutKind};
use super::fit::{fit_sinusoid_decay, BinomialPoint, SinusoidFit};
use crate::circuits::{
    bell_state_vector, bell_target_state, build_prep_circuit, default_register, default_roles, rotation_matrix, run_circuit,
    Component,
    COOLANT_SITES, MEMORY_SITES,
};
use crate::detection::{detect_ion, Symbol};
use crate::error::{Error, Result};
use crate::estimators::{estimate_mc, FidelityEstimate, McOptions, Readout, ShotStats};
use crate::gatedesign::{bell_fidelity_estimate, solve_all_pairs, GateSolution};
use crate::noise::{detuning_vector, storage_evolution, PhaseSampler};
use crate::qstate::{Level, Register, Role};

/// Independent seed for work item `tag` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tag.wrapping_add(1));
    r.next_u64()
}

fn mc_options(cfg: &ExperimentConfig) -> McOptions {
    McOptions {
        memory: MEMORY_SITES,
        readout: match cfg.run.readout {
            ReadoutKind::Ideal => Readout::Ideal,
            ReadoutKind::Detected => Readout::Detected(cfg.detection.clone()),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub target: String,
    pub p1: f64,
    pub p2: f64,
    pub estimate: FidelityEstimate,
    /// Exact fidelity of the simulated state, for reference.
    pub exact_fidelity: f64,
    /// `|0⟩` population of each coolant ion after preparation.
    pub coolant_zero_population: Vec<f64>,
}

/// Prepare the configured target with calibrated gate noise and estimate its
/// fidelity from `prep_shots` samples per term.
pub fn run_prep_fidelity(cfg: &ExperimentConfig) -> Result<PrepReport> {
    let target = cfg.target();
    let noise = cfg.gate_noise()?;
    let mut reg = default_register();
    run_circuit(&mut reg, &build_prep_circuit(target), Some(&noise))?;
    let opts = mc_options(cfg);
    let mut stats = Vec::with_capacity(3);
    for (k, which) in [Component::O1, Component::O2, Component::O3].into_iter().enumerate() {
        let s = estimate_mc(&reg, which, target.family(), cfg.run.prep_shots, derive_seed(cfg.run.seed, k as u64), &opts)?;
        stats.push(s);
    }
    let estimate = FidelityEstimate::from_stats(stats, target.sign(), cfg.run.prep_shots)?;
    Ok(PrepReport {
        target: cfg.run.target.clone(),
        p1: noise.p1,
        p2: noise.p2,
        estimate,
        exact_fidelity: reg.fidelity_pure(&bell_target_state(target))?,
        coolant_zero_population: COOLANT_SITES.iter().map(|&s| reg.population(s, Level::Zero)).collect(),
    })
}

/// One storage time of the lifetime scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageRow {
    pub time: f64,
    /// Requested kept samples per observable.
    pub shots: usize,
    /// Shots drawn over all three observables.
    pub raw: usize,
    pub kept: usize,
    pub discarded: usize,
    /// `kept / raw`.
    pub survival: f64,
    /// Kept `O₂`/`O₃` shots whose parity agrees with the target sign.
    pub successes: usize,
    /// Kept `O₂` plus `O₃` shots.
    pub trials: usize,
    pub fidelity: f64,
    pub fidelity_stderr: f64,
    pub o1: f64,
    pub o2: f64,
    pub o3: f64,
}

impl StorageRow {
    pub fn binomial(&self) -> BinomialPoint {
        BinomialPoint { t: self.time, successes: self.successes as u64, trials: self.trials as u64 }
    }
}

/// Samples one term until `target` shots are kept or `20·target` are drawn.
fn sample_until_kept(
    reg: &Register,
    which: Component,
    cfg: &ExperimentConfig,
    target: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<ShotStats> {
    let cap = 20 * target;
    let mut total = ShotStats::default();
    let mut round = 0u64;
    while total.kept < target && total.raw() < cap {
        let survival = if total.raw() == 0 { 1.0 } else { (total.kept as f64 / total.raw() as f64).max(0.05) };
        let want = (((target - total.kept) as f64 / survival).ceil() as usize).clamp(1, cap - total.raw());
        let s = estimate_mc(reg, which, cfg.target().family(), want, derive_seed(seed, round), opts)?;
        total = total.merge(s);
        round += 1;
    }
    Ok(total)
}

/// Lifetime scan: for each configured time, prepare, store with the echo and
/// sample the three fidelity terms with leak discard.
pub fn run_storage_scan(cfg: &ExperimentConfig) -> Result<Vec<StorageRow>> {
    let target = cfg.target();
    let encoding = cfg.run.encoding.unwrap_or(Encoding::Clock);
    let echo = cfg.run.echo.unwrap_or(true);
    let model = cfg.noise_model(encoding);
    let profile = cfg.field_profile()?;
    let prepared = if cfg.run.prep_noise {
        let mut r = default_register();
        run_circuit(&mut r, &build_prep_circuit(target), Some(&cfg.gate_noise()?))?;
        r
    } else {
        Register::from_pure(&default_roles(), &bell_target_state(target))?
    };
    let opts = mc_options(cfg);
    let mut rows = Vec::with_capacity(cfg.run.times.len());
    for (i, (&t, &m)) in cfg.run.times.iter().zip(&cfg.run.shots).enumerate() {
        let point_seed = derive_seed(cfg.run.seed, i as u64);
        let mut reg = prepared.clone();
        storage_evolution(&mut reg, t, &model, &profile, echo, cfg.noise.n_steps, point_seed)?;
        let mut stats = Vec::with_capacity(3);
        for (k, which) in [Component::O1, Component::O2, Component::O3].into_iter().enumerate() {
            stats.push(sample_until_kept(&reg, which, cfg, m, derive_seed(point_seed, 1 + k as u64), &opts)?);
        }
        let raw: usize = stats.iter().map(|s| s.raw()).sum();
        let kept: usize = stats.iter().map(|s| s.kept).sum();
        let discarded: usize = stats.iter().map(|s| s.discarded).sum();
        let (o2, o3) = (&stats[1], &stats[2]);
        let successes =
            if target.sign() > 0.0 { o2.positive + o3.negative } else { o2.negative + o3.positive };
        let trials = o2.kept + o3.kept;
        let est = FidelityEstimate::from_stats(stats, target.sign(), m)?;
        rows.push(StorageRow {
            time: t,
            shots: m,
            raw,
            kept,
            discarded,
            survival: kept as f64 / raw as f64,
            successes,
            trials,
            fidelity: est.fidelity.value,
            fidelity_stderr: est.fidelity.stderr,
            o1: est.o1.value,
            o2: est.o2.value,
            o3: est.o3.value,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub time: f64,
    pub parity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityScan {
    pub dfs_order: u8,
    /// Chain sites carrying the state.
    pub sites: Vec<usize>,
    pub rows: Vec<ParityRow>,
    /// Damped-cosine fit, absent when the trace cannot be fitted (for
    /// example a flat trace).
    pub fit: Option<SinusoidFit>,
    pub fit_error: Option<String>,
}

/// Grid times over all windows, ascending.
pub fn window_grid(windows: &[[f64; 2]], dt: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for w in windows {
        let n = ((w[1] - w[0]) / dt + 1e-9).floor() as usize;
        out.extend((0..=n).map(|k| w[0] + k as f64 * dt));
    }
    out
}

/// State and sites for a DFS order: order 1 is `(|01⟩ + |10⟩)/√2` on the
/// central pair, order 2 is the four-ion `ψ⁺` on the memory ions.
fn dfs_state(order: u8, n_ions: usize) -> Result<(Vec<usize>, Vec<C64>)> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match order {
        1 => {
            let c = n_ions / 2;
            let psi = crate::qstate::basis_superposition(
                2,
                &[(C64::new(h, 0.0), &[Level::Zero, Level::One]), (C64::new(h, 0.0), &[Level::One, Level::Zero])],
            );
            Ok((vec![c - 1, c], psi))
        }
        2 => {
            if n_ions != 6 {
                return Err(Error::config("chain.n_ions", "the four-ion DFS state uses the six-ion layout"));
            }
            Ok((MEMORY_SITES.to_vec(), bell_state_vector(crate::circuits::BellTarget::PsiPlus, 4, &[0, 1, 2, 3])))
        }
        o => Err(Error::config("run.dfs_order", format!("{o} must be 1 or 2"))),
    }
}

/// `U† Z^{⊗n} U` with `U` the global `π/2` analysis pulse at phase `phi`;
/// the leak level is left alone by both factors.
fn parity_operator(n: usize, phi: f64) -> DMatrix<C64> {
    let r = rotation_matrix(FRAC_PI_2, phi);
    let mut u = DMatrix::<C64>::identity(1, 1);
    for _ in 0..n {
        u = u.kronecker(&r);
    }
    let d = u.nrows();
    let z = DMatrix::from_fn(d, d, |i, j| {
        if i != j {
            return C64::new(0.0, 0.0);
        }
        let mut sign = 1.0;
        let mut k = i;
        for _ in 0..n {
            if k % 3 == 1 {
                sign = -sign;
            }
            k /= 3;
        }
        C64::new(sign, 0.0)
    });
    u.adjoint() * z * u
}

/// `Re tr(ρ O)`.
fn expectation_of(reg: &Register, op: &DMatrix<C64>) -> f64 {
    let d = reg.dim();
    let rho = reg.rho();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += (rho[i * d + j] * op[(j, i)]).re;
        }
    }
    acc
}

/// Parity oscillation of a DFS state under the static field profile and
/// OU field noise, averaged over `trajectories` seeded field histories.
/// Runs without echo on field-sensitive states.
pub fn run_parity_scan(cfg: &ExperimentConfig) -> Result<ParityScan> {
    if cfg.run.echo == Some(true) {
        return Err(Error::config("run.echo", "the parity scan runs without the spin echo"));
    }
    if cfg.run.encoding == Some(Encoding::Clock) {
        return Err(Error::config("run.encoding", "the parity scan needs field-sensitive states"));
    }
    let (sites, psi) = dfs_state(cfg.run.dfs_order, cfg.chain.n_ions)?;
    let model = cfg.noise_model(Encoding::Sensitive);
    let profile = cfg.field_profile()?;
    let static_det = detuning_vector(&profile, &vec![true; cfg.chain.n_ions]);
    let times = window_grid(&cfg.run.windows, cfg.run.dt);
    if times.is_empty() {
        return Err(Error::config("run.windows", "no grid points"));
    }
    let roles = vec![Role::Memory; sites.len()];
    let base = Register::from_pure(&roles, &psi)?;
    let parity_op = parity_operator(sites.len(), 0.0);
    let noisy = model.ou_sigma > 0.0 || model.common_sigma > 0.0;
    let n_traj = if noisy { cfg.run.trajectories } else { 1 };
    let per_traj: Vec<Result<Vec<f64>>> = (0..n_traj)
        .into_par_iter()
        .map(|j| {
            let mut sampler = PhaseSampler::new(&model, &profile, derive_seed(cfg.run.seed, j as u64));
            let mut ou = vec![0.0; cfg.chain.n_ions];
            let mut t_prev = 0.0;
            let mut out = Vec::with_capacity(times.len());
            for &t in &times {
                if t > t_prev {
                    for (acc, d) in ou.iter_mut().zip(sampler.advance(t - t_prev)) {
                        *acc += d;
                    }
                    t_prev = t;
                }
                let phases: Vec<f64> = sites.iter().map(|&s| 2.0 * PI * static_det[s] * t + ou[s]).collect();
                let mut r = base.clone();
                r.apply_site_phases(&phases)?;
                out.push(expectation_of(&r, &parity_op));
            }
            Ok(out)
        })
        .collect();
    let mut sum = vec![0.0; times.len()];
    for tr in per_traj {
        for (acc, v) in sum.iter_mut().zip(tr?) {
            *acc += v;
        }
    }
    let rows: Vec<ParityRow> =
        times.iter().zip(&sum).map(|(&time, &s)| ParityRow { time, parity: s / n_traj as f64 }).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.parity).collect();
    let (fit, fit_error) = match fit_sinusoid_decay(&times, &ys) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ParityScan { dfs_order: cfg.run.dfs_order, sites, rows, fit, fit_error })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairFidelity {
    pub pair: (usize, usize),
    pub fidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDesignReport {
    pub axial_freq: f64,
    pub mode_freqs: Vec<f64>,
    pub nbar: f64,
    pub drift: f64,
    pub solutions: Vec<GateSolution>,
    pub fidelities: Vec<PairFidelity>,
    pub mean_fidelity: f64,
}

/// Design every pair among the configured ions and estimate each Bell
/// fidelity at the configured drift and thermal occupation.
pub fn run_gate_design(cfg: &ExperimentConfig) -> Result<GateDesignReport> {
    let chain = cfg.chain_model()?;
    let solutions = solve_all_pairs(&chain, &cfg.gate.ions, &cfg.gate_request(), &cfg.solve_options())?;
    let nbar = vec![cfg.gate.nbar; chain.n_ions];
    let fidelities: Vec<PairFidelity> = solutions
        .iter()
        .map(|s| PairFidelity { pair: s.target_pair, fidelity: bell_fidelity_estimate(s, &chain, &nbar, cfg.gate.drift) })
        .collect();
    let mean_fidelity = fidelities.iter().map(|p| p.fidelity).sum::<f64>() / fidelities.len() as f64;
    Ok(GateDesignReport {
        axial_freq: chain.axial_freq,
        mode_freqs: chain.mode_freqs.clone(),
        nbar: cfg.gate.nbar,
        drift: cfg.gate.drift,
        solutions,
        fidelities,
        mean_fidelity,
    })
}

/// Decoded-symbol tallies for one prepared level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub truth: String,
    pub trials: usize,
    pub zero: usize,
    pub one: usize,
    pub leak: usize,
    pub early_loss: usize,
    /// Fraction decoded as the prepared symbol.
    pub accuracy: f64,
    pub stderr: f64,
}

/// Monte-Carlo assignment accuracies of the detection model.
pub fn run_detection_calibration(cfg: &ExperimentConfig) -> Result<Vec<CalibrationRow>> {
    cfg.detection.validate()?;
    let n = cfg.run.detect_trials;
    [(Level::Zero, Symbol::Zero), (Level::One, Symbol::One), (Level::Leak, Symbol::Leak)]
        .iter()
        .enumerate()
        .map(|(k, &(level, expect))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.run.seed, k as u64));
            let mut counts = [0usize; 4];
            for _ in 0..n {
                let idx = match detect_ion(level, &cfg.detection, &mut rng).decoded {
                    Symbol::Zero => 0,
                    Symbol::One => 1,
                    Symbol::Leak => 2,
                    Symbol::EarlyLoss => 3,
                };
                counts[idx] += 1;
            }
            let hit = counts[match expect {
                Symbol::Zero => 0,
                Symbol::One => 1,
                _ => 2,
            }];
            let acc = hit as f64 / n as f64;
            Ok(CalibrationRow {
                truth: expect.name().to_string(),
                trials: n,
                zero: counts[0],
                one: counts[1],
                leak: counts[2],
                early_loss: counts[3],
                accuracy: acc,
                stderr: (acc * (1.0 - acc) / n as f64).sqrt(),
            })
        })
        .collect()
}

/// Synthetic binomial data from `(A, τ)` at the given schedule.
pub fn synthetic_dataset<R: Rng + ?Sized>(
    a: f64,
    tau: f64,
    times: &[f64],
    shots: &[usize],
    rng: &mut R,
) -> Vec<BinomialPoint> {
    times
        .iter()
        .zip(shots)
        .map(|(&t, &n)| {
            let p = (1.0 + a * (-t / tau).exp()) / 2.0;
            let k = (0..n).filter(|_| rng.random::<f64>() < p).count();
            BinomialPoint { t, successes: k as u64, trials: n as u64 }
        })
        .collect()
}

pub const STORAGE_HEADER: [&str; 13] = [
    "time_s",
    "shots",
    "raw",
    "kept",
    "discarded",
    "survival",
    "successes",
    "trials",
    "fidelity",
    "fidelity_stderr",
    "o1",
    "o2",
    "o3",
];

pub fn write_storage_csv<W: Write>(out: W, rows: &[StorageRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STORAGE_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.time.to_string(),
            r.shots.to_string(),
            r.raw.to_string(),
            r.kept.to_string(),
            r.discarded.to_string(),
            r.survival.to_string(),
            r.successes.to_string(),
            r.trials.to_string(),
            r.fidelity.to_string(),
            r.fidelity_stderr.to_string(),
            r.o1.to_string(),
            r.o2.to_string(),
            r.o3.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `time_s`, `successes` and `trials` columns (other columns ignored).
pub fn read_binomial_csv<R: Read>(input: R) -> Result<Vec<BinomialPoint>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    };
    let (ct, ck, cn) = (col("time_s")?, col("successes")?, col("trials")?);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim().to_string();
        let bad = |c: usize| Error::Parse(format!("row {}: bad value {:?} in `{}`", line + 2, field(c), &headers[c]));
        out.push(BinomialPoint {
            t: field(ct).parse().map_err(|_| bad(ct))?,
            successes: field(ck).parse().map_err(|_| bad(ck))?,
            trials: field(cn).parse().map_err(|_| bad(cn))?,
        });
    }
    Ok(out)
}

pub fn write_parity_csv<W: Write>(out: W, rows: &[ParityRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "parity"])?;
    for r in rows {
        w.write_record(&[r.time.to_string(), r.parity.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Symmetric pairwise fidelity matrix over `ions`; the diagonal is empty.
pub fn write_fidelity_matrix_csv<W: Write>(out: W, ions: &[usize], pairs: &[PairFidelity]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["ion".to_string()];
    header.extend(ions.iter().map(|i| format!("q{i}")));
    w.write_record(&header)?;
    for &i in ions {
        let mut row = vec![format!("q{i}")];
        for &j in ions {
            let f = pairs.iter().find(|p| p.pair == (i, j) || p.pair == (j, i)).map(|p| p.fidelity);
            row.push(f.map_or(String::new(), |v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_calibration_csv<W: Write>(out: W, rows: &[CalibrationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["truth", "trials", "zero", "one", "leak", "early_loss", "accuracy", "stderr"])?;
    for r in rows {
        w.write_record(&[
            r.truth.clone(),
            r.trials.to_string(),
            r.zero.to_string(),
            r.one.to_string(),
            r.leak.to_string(),
            r.early_loss.to_string(),
            r.accuracy.to_string(),
            r.stderr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::parity_expectation;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    #[test]
    fn noiseless_prep_is_exact() {
        let c = cfg("[gate]\np2 = 0.0\n[run]\nprep_shots = 64\n");
        let r = run_prep_fidelity(&c).unwrap();
        assert!((r.estimate.fidelity.value - 1.0).abs() < 1e-12, "{:?}", r.estimate.fidelity);
        assert!((r.exact_fidelity - 1.0).abs() < 1e-9);
        assert!(r.coolant_zero_population.iter().all(|p| (p - 1.0).abs() < 1e-9));
    }

    #[test]
    fn flat_storage_without_noise() {
        let c = cfg("[run]\ntimes = [0.0, 100.0]\nshots = [40, 40]\n");
        let rows = run_storage_scan(&c).unwrap();
        for r in &rows {
            assert_eq!(r.fidelity, 1.0);
            assert_eq!(r.successes, r.trials);
            assert_eq!(r.discarded, 0);
        }
    }

    #[test]
    fn discard_accounting_is_exact() {
        let c = cfg("[noise]\nleak_rate = 1e-3\n[run]\ntimes = [500.0]\nshots = [60]\n");
        let r = &run_storage_scan(&c).unwrap()[0];
        assert_eq!(r.kept + r.discarded, r.raw);
        assert_eq!((r.survival * r.raw as f64).round() as usize, r.kept);
        assert!(r.discarded > 0 && r.kept >= 3 * 60);
        // leakage never corrupts kept shots
        assert_eq!(r.fidelity, 1.0);
    }

    #[test]
    fn parity_operator_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reg = Register::random_qubit_state(&[Role::Memory; 3], &mut rng).unwrap();
        for phi in [0.0, 0.7, 2.5] {
            let direct = parity_expectation(&reg, phi, &[0, 1, 2]).unwrap();
            assert!((expectation_of(&reg, &parity_operator(3, phi)) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_covers_windows() {
        let g = window_grid(&[[0.0, 0.35], [6.0, 6.35]], 0.005);
        assert_eq!(g.len(), 142);
        assert_eq!(g[71], 6.0);
        assert!((g[141] - 6.35).abs() < 1e-12);
    }

    #[test]
    fn parity_scan_rejects_echo() {
        assert!(run_parity_scan(&cfg("[run]\necho = true\n")).is_err());
        assert!(run_parity_scan(&cfg("[run]\nencoding = \"clock\"\n")).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = run_storage_scan(&cfg("[run]\ntimes = [1.0]\nshots = [8]\n")).unwrap();
        let mut buf = Vec::new();
        write_storage_csv(&mut buf, &rows).unwrap();
        let back = read_binomial_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![rows[0].binomial()]);
    }
}
