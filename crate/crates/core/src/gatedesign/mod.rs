//! Segmented phase-modulated entangling-gate design on a transverse mode
//! spectrum: loop closure, geometric phase, drift robustness and a Bell
//! fidelity budget.
//!
//! Frequencies are in Hz at the API boundary and angular inside. Ion `i`
//! driven with Rabi frequency `Ω` displaces mode `k` by
//! `α_{k,i}(t) = η_{k,i} (Ω/2) g_k(t)`, and the pair `(i, j)` acquires
//! `Θ = −Ω² Σ_k η_{k,i} η_{k,j} A_k` with `A_k` the enclosed loop area.

pub mod chain;
pub mod sdf;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use chain::{equilibrium_positions, fit_axial_frequency, transverse_modes, ChainModel};

use crate::error::{Error, Result};
use crate::optim::{levenberg_marquardt, LmOptions};

/// Composed sub-gates per entangling gate.
pub const SUB_GATES: usize = 5;
/// Geometric phase per sub-gate.
pub const SUB_GATE_THETA: f64 = PI / 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSymmetry {
    /// `φ_s = −φ_{N−1−s}`.
    Antisymmetric,
    /// `φ_s = φ_{N−1−s}`.
    Symmetric,
    /// Every segment phase independent.
    Free,
}

impl PhaseSymmetry {
    fn n_params(self, n: usize) -> usize {
        match self {
            PhaseSymmetry::Antisymmetric => n / 2,
            PhaseSymmetry::Symmetric => n.div_ceil(2),
            PhaseSymmetry::Free => n,
        }
    }

    /// Parameters left after removing the global-phase gauge.
    fn effective_params(self, n: usize) -> usize {
        match self {
            PhaseSymmetry::Antisymmetric => n / 2,
            _ => self.n_params(n).saturating_sub(1),
        }
    }

    /// Real constraints per mode for closure (the antisymmetric form makes
    /// the centred loop end point real).
    fn constraints_per_mode(self) -> usize {
        match self {
            PhaseSymmetry::Antisymmetric => 1,
            _ => 2,
        }
    }

    /// Full phase list and `∂φ_s/∂p_m` as `(segment, param, sign)` triples.
    fn expand(self, p: &[f64], n: usize) -> (Vec<f64>, Vec<(usize, usize, f64)>) {
        let mut phases = vec![0.0; n];
        let mut map = Vec::with_capacity(n);
        match self {
            PhaseSymmetry::Free => {
                for s in 0..n {
                    phases[s] = p[s];
                    map.push((s, s, 1.0));
                }
            }
            PhaseSymmetry::Antisymmetric | PhaseSymmetry::Symmetric => {
                let sign = if self == PhaseSymmetry::Antisymmetric { -1.0 } else { 1.0 };
                for (m, &v) in p.iter().enumerate() {
                    let mirror = n - 1 - m;
                    phases[m] = v;
                    map.push((m, m, 1.0));
                    if mirror != m {
                        phases[mirror] = sign * v;
                        map.push((mirror, m, sign));
                    }
                }
            }
        }
        (phases, map)
    }
}

/// Solved segment sequence for one ion pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSolution {
    pub n_segments: usize,
    pub t_gate: f64,
    /// Beat-note frequency, Hz.
    pub mu: f64,
    pub segment_phases: Vec<f64>,
    /// Rabi frequency `Ω/2π`, Hz.
    pub rabi: f64,
    /// Per-mode residual displacement `|α_k|` summed in quadrature over
    /// the two driven ions.
    pub residual_alpha: Vec<f64>,
    pub geom_phase: f64,
    pub target_pair: (usize, usize),
    pub symmetry: PhaseSymmetry,
    pub drift_nulled: bool,
}

impl GateSolution {
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.rabi
    }

    pub fn with_rabi(&self, rabi: f64, chain: &ChainModel) -> GateSolution {
        let mut s = self.clone();
        s.rabi = rabi;
        s.residual_alpha = residual_alphas(&s, chain, 0.0);
        s.geom_phase = geometric_phase(&s, chain);
        s
    }
}

fn deltas(mu: f64, chain: &ChainModel, drift: f64) -> Vec<f64> {
    chain.mode_freqs.iter().map(|f| 2.0 * PI * (mu - f - drift)).collect()
}

/// `g_k(T)` for every mode with all mode frequencies shifted by `drift` Hz.
pub fn loop_ends(sol: &GateSolution, chain: &ChainModel, drift: f64) -> Vec<C64> {
    deltas(sol.mu, chain, drift).iter().map(|&d| sdf::closure(&sol.segment_phases, d, sol.t_gate)).collect()
}

/// Per-mode residual displacement at the gate end.
pub fn residual_alphas(sol: &GateSolution, chain: &ChainModel, drift: f64) -> Vec<f64> {
    let (i, j) = sol.target_pair;
    loop_ends(sol, chain, drift)
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let w = (chain.eta(k, i).powi(2) + chain.eta(k, j).powi(2)).sqrt();
            0.5 * sol.omega() * g.norm() * w
        })
        .collect()
}

/// `Θ` of the pair with mode frequencies shifted by `drift` Hz.
pub fn geometric_phase_at(sol: &GateSolution, chain: &ChainModel, drift: f64) -> f64 {
    let (i, j) = sol.target_pair;
    let om = sol.omega();
    deltas(sol.mu, chain, drift)
        .iter()
        .enumerate()
        .map(|(k, &d)| -om * om * chain.eta(k, i) * chain.eta(k, j) * sdf::enclosed_area(&sol.segment_phases, d, sol.t_gate))
        .sum()
}

pub fn geometric_phase(sol: &GateSolution, chain: &ChainModel) -> f64 {
    geometric_phase_at(sol, chain, 0.0)
}

/// Displacement `α_k(t)` of every mode seen by `ion`, at `n_points` equally
/// spaced times from 0 to `T` inclusive.
pub fn trajectories(sol: &GateSolution, chain: &ChainModel, ion: usize, n_points: usize) -> Vec<Vec<C64>> {
    let ds = deltas(sol.mu, chain, 0.0);
    let half = 0.5 * sol.omega();
    (0..ds.len())
        .map(|k| {
            (0..n_points)
                .map(|p| {
                    let t = if n_points > 1 { sol.t_gate * p as f64 / (n_points - 1) as f64 } else { sol.t_gate };
                    sdf::loop_at(&sol.segment_phases, ds[k], sol.t_gate, t) * (half * chain.eta(k, ion))
                })
                .collect()
        })
        .collect()
}

/// Solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub symmetry: PhaseSymmetry,
    /// Also null `∂g_k/∂ω` so the closure holds to first order in a
    /// common mode-frequency drift.
    pub drift_nulling: bool,
    pub starts: usize,
    pub seed: u64,
    /// Candidates are ranked by their summed infidelity at `±rank_drift` Hz.
    pub rank_drift: f64,
}

impl SolveOptions {
    /// Antisymmetric with drift nulling.
    pub fn robust() -> SolveOptions {
        SolveOptions {
            symmetry: PhaseSymmetry::Antisymmetric,
            drift_nulling: true,
            starts: 48,
            seed: 1,
            rank_drift: 1000.0,
        }
    }

    /// Symmetric closure-only baseline.
    pub fn symmetric() -> SolveOptions {
        SolveOptions { symmetry: PhaseSymmetry::Symmetric, drift_nulling: false, ..SolveOptions::robust() }
    }
}

/// Design request for one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRequest {
    pub pair: (usize, usize),
    /// Beat-note frequency, Hz.
    pub mu: f64,
    pub t_gate: f64,
    pub n_segments: usize,
    pub target_theta: f64,
}

/// Find segment phases closing every mode loop, then scale `Ω` to reach the
/// target geometric phase. The closure equations have a discrete solution
/// set; among converged multi-start solutions with the right sign of `Θ`,
/// the one with the lowest summed infidelity at `±rank_drift` is returned.
pub fn solve_phases(chain: &ChainModel, req: &GateRequest, opts: &SolveOptions) -> Result<GateSolution> {
    let n = req.n_segments;
    if !(2..=64).contains(&n) {
        return Err(Error::InvalidArgument(format!("n_segments = {n} outside [2, 64]")));
    }
    let (i, j) = req.pair;
    if i == j || i >= chain.n_ions || j >= chain.n_ions {
        return Err(Error::InvalidArgument(format!("invalid ion pair ({i}, {j})")));
    }
    if !(req.t_gate > 0.0 && req.mu > 0.0) {
        return Err(Error::InvalidArgument("gate time and beat note must be positive".into()));
    }
    if req.target_theta == 0.0 {
        return Err(Error::InvalidArgument("target geometric phase must be non-zero".into()));
    }
    let n_modes = chain.mode_freqs.len();
    let per_mode = opts.symmetry.constraints_per_mode();
    let constraints = n_modes * per_mode * if opts.drift_nulling { 2 } else { 1 };
    let available = opts.symmetry.effective_params(n);
    if constraints > available {
        return Err(Error::Solver(format!(
            "{constraints} real constraints ({n_modes} mode closures{}) exceed the {available} free phases of {n} {:?} segments",
            if opts.drift_nulling { " plus drift derivatives" } else { "" },
            opts.symmetry
        )));
    }

    let ds = deltas(req.mu, chain, 0.0);
    let t = sdf::boundaries(req.t_gate, n);
    let e: Vec<Vec<C64>> = ds.iter().map(|&d| (0..n).map(|s| sdf::seg_integral(d, t[s], t[s + 1])).collect()).collect();
    let de: Vec<Vec<C64>> =
        ds.iter().map(|&d| (0..n).map(|s| sdf::seg_integral_ddelta(d, t[s], t[s + 1])).collect()).collect();
    let scale_g = 1.0 / req.t_gate;
    let scale_d = 1.0 / (req.t_gate * req.t_gate);
    let n_par = opts.symmetry.n_params(n);
    let rows = 2 * n_modes * if opts.drift_nulling { 2 } else { 1 };

    let residual = |p: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let (phases, map) = opts.symmetry.expand(p.as_slice(), n);
        let rot: Vec<C64> = phases.iter().map(|&ph| C64::from_polar(1.0, ph)).collect();
        let mut r = DVector::<f64>::zeros(rows);
        let mut jac = DMatrix::<f64>::zeros(rows, n_par);
        let mut row = 0;
        let blocks: Vec<(&Vec<Vec<C64>>, f64)> =
            if opts.drift_nulling { vec![(&e, scale_g), (&de, scale_d)] } else { vec![(&e, scale_g)] };
        for (table, sc) in blocks {
            for tk in table.iter() {
                let g: C64 = (0..n).map(|s| rot[s] * tk[s]).sum::<C64>() * sc;
                r[row] = g.re;
                r[row + 1] = g.im;
                for &(s, m, sign) in &map {
                    let dg = C64::new(0.0, sign) * rot[s] * tk[s] * sc;
                    jac[(row, m)] += dg.re;
                    jac[(row + 1, m)] += dg.im;
                }
                row += 2;
            }
        }
        (r, jac)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lm = LmOptions { max_iter: 400, tol_residual: 1e-15, tol_step: 1e-16 };
    let mut best: Option<(f64, GateSolution)> = None;
    let mut min_residual = f64::INFINITY;
    for _ in 0..opts.starts.max(1) {
        let x0 = DVector::from_fn(n_par, |_, _| rng.random::<f64>() * 2.0 * PI - PI);
        let res = levenberg_marquardt(residual, x0, &lm);
        min_residual = min_residual.min(res.residual_norm);
        if res.residual_norm > 1e-11 {
            continue;
        }
        let (phases, _) = opts.symmetry.expand(res.x.as_slice(), n);
        let phases: Vec<f64> = phases.iter().map(|p| wrap_phase(*p)).collect();
        let mut sol = GateSolution {
            n_segments: n,
            t_gate: req.t_gate,
            mu: req.mu,
            segment_phases: phases,
            rabi: 1.0 / (2.0 * PI),
            residual_alpha: Vec::new(),
            geom_phase: 0.0,
            target_pair: req.pair,
            symmetry: opts.symmetry,
            drift_nulled: opts.drift_nulling,
        };
        let theta_unit = geometric_phase(&sol, chain);
        if theta_unit == 0.0 || theta_unit.signum() != req.target_theta.signum() {
            continue;
        }
        let omega = (req.target_theta / theta_unit).sqrt();
        sol = sol.with_rabi(omega / (2.0 * PI), chain);
        let zero = vec![0.0; n_modes];
        let score = robustness_scan(&sol, chain, &[-opts.rank_drift, opts.rank_drift], &zero).iter().sum::<f64>();
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, sol));
        }
    }
    best.map(|(_, s)| s).ok_or_else(|| {
        Error::Solver(format!(
            "no start closed all {n_modes} mode loops with the requested sign of Θ \
             (best residual {min_residual:.3e} over {} starts)",
            opts.starts
        ))
    })
}

fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    // keep exact antisymmetry: −π and π are the same phase
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Bell-state fidelity of `SUB_GATES` composed sub-gates with per-sub-gate
/// residual displacements `alpha`, thermal occupations `nbar`, and
/// geometric-phase error `dtheta` per sub-gate.
pub fn composed_fidelity(alpha: &[f64], nbar: &[f64], dtheta: f64) -> f64 {
    let loss: f64 =
        alpha.iter().enumerate().map(|(k, a)| a * a * (2.0 * nbar.get(k).copied().unwrap_or(0.0) + 1.0) / 2.0).sum();
    let per_gate = (1.0 - loss).max(0.0);
    per_gate.powi(SUB_GATES as i32) * (SUB_GATES as f64 * dtheta / 2.0).cos().powi(2)
}

/// Infidelity at each common mode-frequency drift (Hz).
pub fn robustness_scan(sol: &GateSolution, chain: &ChainModel, drifts: &[f64], nbar: &[f64]) -> Vec<f64> {
    drifts
        .iter()
        .map(|&d| {
            let a = residual_alphas(sol, chain, d);
            let dtheta = geometric_phase_at(sol, chain, d) - sol.geom_phase;
            1.0 - composed_fidelity(&a, nbar, dtheta)
        })
        .collect()
}

/// Bell fidelity of the composed gate at a fixed drift.
pub fn bell_fidelity_estimate(sol: &GateSolution, chain: &ChainModel, nbar: &[f64], drift: f64) -> f64 {
    1.0 - robustness_scan(sol, chain, &[drift], nbar)[0]
}

/// Displacement-only part of the composed infidelity at a drift (Hz).
pub fn displacement_infidelity(sol: &GateSolution, chain: &ChainModel, drift: f64, nbar: &[f64]) -> f64 {
    1.0 - composed_fidelity(&residual_alphas(sol, chain, drift), nbar, 0.0)
}

/// Pairwise gate design over `ions`: one solution per unordered pair, in
/// lexicographic order.
pub fn solve_all_pairs(
    chain: &ChainModel,
    ions: &[usize],
    template: &GateRequest,
    opts: &SolveOptions,
) -> Result<Vec<GateSolution>> {
    let mut out = Vec::new();
    for (a, &i) in ions.iter().enumerate() {
        for &j in &ions[a + 1..] {
            out.push(solve_phases(chain, &GateRequest { pair: (i, j), ..template.clone() }, opts)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn paper_chain() -> ChainModel {
        let measured = [1.303e6, 1.347e6, 1.385e6, 1.416e6, 1.441e6, 1.458e6];
        ChainModel::fitted_to(&measured).unwrap().with_mode_freqs(&measured).unwrap()
    }

    fn request(n: usize) -> GateRequest {
        GateRequest { pair: (2, 3), mu: 1.337e6, t_gate: 150e-6, n_segments: n, target_theta: SUB_GATE_THETA }
    }

    #[test]
    fn two_segments_are_infeasible() {
        let e = solve_phases(&paper_chain(), &request(2), &SolveOptions::robust()).unwrap_err();
        assert!(matches!(e, Error::Solver(_)));
        assert!(e.to_string().contains("6 mode closures"), "{e}");
    }

    #[test]
    fn symmetric_gauge_makes_24_segments_infeasible() {
        let e = solve_phases(&paper_chain(), &request(24), &SolveOptions::symmetric()).unwrap_err();
        assert!(matches!(e, Error::Solver(_)));
    }

    #[test]
    fn antisymmetric_solution_closes_loops() {
        let chain = paper_chain();
        let sol = solve_phases(&chain, &request(24), &SolveOptions { starts: 12, ..SolveOptions::robust() }).unwrap();
        assert!(sol.residual_alpha.iter().all(|&a| a <= 1e-8), "{:?}", sol.residual_alpha);
        assert!((sol.geom_phase - SUB_GATE_THETA).abs() < 1e-9);
        for s in 0..24 {
            assert!((sol.segment_phases[s] + sol.segment_phases[23 - s]).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_laws() {
        let chain = paper_chain();
        let sol = GateSolution {
            n_segments: 4,
            t_gate: 1e-4,
            mu: 1.33e6,
            segment_phases: vec![0.2, -0.7, 1.9, 0.4],
            rabi: 5e3,
            residual_alpha: vec![],
            geom_phase: 0.0,
            target_pair: (1, 4),
            symmetry: PhaseSymmetry::Free,
            drift_nulled: false,
        };
        let a = sol.with_rabi(5e3, &chain);
        let b = sol.with_rabi(15e3, &chain);
        for k in 0..6 {
            assert!((b.residual_alpha[k] - 3.0 * a.residual_alpha[k]).abs() <= 1e-10 * b.residual_alpha[k]);
        }
        assert!((b.geom_phase - 9.0 * a.geom_phase).abs() <= 1e-10 * b.geom_phase.abs());
        let zero = sol.with_rabi(0.0, &chain);
        assert_eq!(zero.geom_phase, 0.0);
        assert!(zero.residual_alpha.iter().all(|&x| x == 0.0));
        // global phase offset is a gauge
        let mut shifted = a.clone();
        shifted.segment_phases.iter_mut().for_each(|p| *p += 0.77);
        let shifted = shifted.with_rabi(5e3, &chain);
        for k in 0..6 {
            assert!((shifted.residual_alpha[k] - a.residual_alpha[k]).abs() < 1e-10 * a.residual_alpha[k]);
        }
        assert!((shifted.geom_phase - a.geom_phase).abs() < 1e-10 * a.geom_phase.abs());
    }

    #[test]
    fn budget_oracle() {
        let mut alpha = vec![0.0; 6];
        alpha[2] = 0.05;
        let f = composed_fidelity(&alpha, &[0.1; 6], 0.0);
        let per = 1.0 - 0.05f64.powi(2) * 1.2 / 2.0;
        assert!((f - per.powi(5)).abs() < 1e-15);
        assert_eq!(composed_fidelity(&[0.0; 6], &[0.0; 6], 0.0), 1.0);
    }

    #[test]
    fn resonant_trajectory_grows_linearly() {
        let mut chain = paper_chain();
        chain.mode_freqs[0] = 1.3e6;
        let sol = GateSolution {
            n_segments: 1,
            t_gate: 1e-4,
            mu: 1.3e6,
            segment_phases: vec![0.0],
            rabi: 1e3,
            residual_alpha: vec![],
            geom_phase: 0.0,
            target_pair: (0, 1),
            symmetry: PhaseSymmetry::Free,
            drift_nulled: false,
        };
        let tr = trajectories(&sol, &chain, 0, 3);
        let expect = chain.eta(0, 0).abs() * 2.0 * PI * 1e3 * 1e-4 / 2.0;
        assert!((tr[0][2].norm() - expect).abs() < 1e-12 * expect);
        assert!((tr[0][1].norm() - expect / 2.0).abs() < 1e-12 * expect);
    }
}
