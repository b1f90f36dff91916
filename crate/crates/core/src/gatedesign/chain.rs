//! Linear Coulomb crystal: equilibrium positions and transverse modes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::golden_min;

/// Coulomb constant `e²/(4πε₀)` in J·m.
const COULOMB: f64 = 2.307_077_552e-28;
/// Mass of one ¹⁷¹Yb⁺ ion in kg.
pub const YB171_MASS: f64 = 170.936_323_6 * 1.660_539_066_60e-27;

/// Chain geometry and transverse normal modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub n_ions: usize,
    /// Axial trap frequency, Hz.
    pub axial_freq: f64,
    /// Transverse centre-of-mass frequency, Hz.
    pub transverse_com_freq: f64,
    /// Equilibrium positions in units of the length scale `l`.
    pub positions: Vec<f64>,
    /// Mode frequencies in Hz, ascending.
    pub mode_freqs: Vec<f64>,
    /// `mode_vectors[(ion, mode)]`, orthonormal columns.
    pub mode_vectors: DMatrix<f64>,
}

impl ChainModel {
    pub fn new(n_ions: usize, axial_freq: f64, transverse_com_freq: f64) -> Result<ChainModel> {
        let positions = equilibrium_positions(n_ions)?;
        let (mode_freqs, mode_vectors) = transverse_modes(&positions, transverse_com_freq, axial_freq)?;
        Ok(ChainModel { n_ions, axial_freq, transverse_com_freq, positions, mode_freqs, mode_vectors })
    }

    /// Chain whose axial frequency is fitted so the computed transverse
    /// spectrum best matches `measured` (Hz, highest = COM).
    pub fn fitted_to(measured: &[f64]) -> Result<ChainModel> {
        let n = measured.len();
        let mut sorted = measured.to_vec();
        sorted.sort_by(f64::total_cmp);
        let com = sorted[n - 1];
        let fax = fit_axial_frequency(&sorted, com)?;
        ChainModel::new(n, fax, com)
    }

    /// Replace the computed frequencies by a measured list, keeping vectors.
    pub fn with_mode_freqs(mut self, measured: &[f64]) -> Result<ChainModel> {
        if measured.len() != self.n_ions {
            return Err(Error::Configuration(format!(
                "{} mode frequencies for {} ions",
                measured.len(),
                self.n_ions
            )));
        }
        let mut m = measured.to_vec();
        m.sort_by(f64::total_cmp);
        self.mode_freqs = m;
        Ok(self)
    }

    /// Length scale `(e²/(4πε₀ m ω_ax²))^{1/3}` in metres.
    pub fn length_scale(&self, mass: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * self.axial_freq;
        (COULOMB / (mass * w * w)).cbrt()
    }

    pub fn eta(&self, mode: usize, ion: usize) -> f64 {
        self.mode_vectors[(ion, mode)]
    }
}

fn energy(x: &[f64]) -> f64 {
    let mut u = 0.5 * x.iter().map(|v| v * v).sum::<f64>();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            u += 1.0 / (x[i] - x[j]).abs();
        }
    }
    u
}

fn gradient_hessian(x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let mut g = DVector::from_iterator(n, x.iter().copied());
    let mut h = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = x[i] - x[j];
            g[i] -= d.signum() / (d * d);
            let c = 2.0 / d.abs().powi(3);
            h[(i, i)] += c;
            h[(i, j)] -= c;
        }
    }
    (g, h)
}

/// Minimize `Σ x²/2 + Σ_{i<j} 1/|x_i − x_j|` by damped Newton iteration.
pub fn equilibrium_positions(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("chain needs at least one ion".into()));
    }
    if n == 1 {
        return Ok(vec![0.0]);
    }
    let half = 0.6 * (n as f64).powf(0.56);
    let mut x: Vec<f64> = (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect();
    for _ in 0..200 {
        let (g, h) = gradient_hessian(&x);
        if g.norm() <= 1e-13 {
            break;
        }
        let step = h.lu().solve(&(-&g)).ok_or_else(|| Error::Solver("singular chain Hessian".into()))?;
        let e0 = energy(&x);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let ordered = trial.windows(2).all(|w| w[1] > w[0]);
            if ordered && energy(&trial) <= e0 + 1e-15 * e0.abs() {
                x = trial;
                break;
            }
            t /= 2.0;
            if t < 1e-12 {
                return Err(Error::Solver("line search failed for chain equilibrium".into()));
            }
        }
    }
    // enforce the mirror symmetry of the exact solution
    let sym: Vec<f64> = (0..n).map(|i| 0.5 * (x[i] - x[n - 1 - i])).collect();
    let (g, _) = gradient_hessian(&sym);
    if g.norm() > 1e-12 {
        return Err(Error::Solver(format!("chain equilibrium gradient {:e} after Newton", g.norm())));
    }
    Ok(sym)
}

/// Transverse normal modes: frequencies in Hz (ascending) and orthonormal
/// vectors `[(ion, mode)]`. The centre-of-mass mode is the highest.
pub fn transverse_modes(positions: &[f64], com_freq: f64, axial_freq: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty chain".into()));
    }
    let beta2 = (com_freq / axial_freq).powi(2);
    let mut b = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut diag = beta2;
        for j in 0..n {
            if i != j {
                let c = 1.0 / (positions[i] - positions[j]).abs().powi(3);
                b[(i, j)] = c;
                diag -= c;
            }
        }
        b[(i, i)] = diag;
    }
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
    if eig.eigenvalues[order[0]] <= 0.0 {
        return Err(Error::Configuration(format!(
            "transverse mode with eigenvalue {:e}: linear chain is unstable (zig-zag)",
            eig.eigenvalues[order[0]]
        )));
    }
    let freqs: Vec<f64> = order.iter().map(|&k| axial_freq * eig.eigenvalues[k].sqrt()).collect();
    let mut vecs = DMatrix::<f64>::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // fix the sign so the largest component is positive
        let big = v.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        if big < 0.0 {
            v = -v;
        }
        vecs.set_column(col, &v);
    }
    Ok((freqs, vecs))
}

/// Axial frequency minimizing the squared mismatch between the computed
/// transverse spectrum (COM pinned to `com_freq`) and `measured`.
pub fn fit_axial_frequency(measured: &[f64], com_freq: f64) -> Result<f64> {
    let n = measured.len();
    let pos = equilibrium_positions(n)?;
    let cost = |fax: f64| -> f64 {
        match transverse_modes(&pos, com_freq, fax) {
            Ok((f, _)) => f.iter().zip(measured).map(|(a, b)| (a - b).powi(2)).sum(),
            Err(_) => f64::INFINITY,
        }
    };
    // scan for a bracket, then refine
    let lo = com_freq * 0.01;
    let hi = com_freq * 0.5;
    let grid = 400;
    let mut best = (f64::INFINITY, lo);
    for k in 0..=grid {
        let f = lo + (hi - lo) * k as f64 / grid as f64;
        let c = cost(f);
        if c < best.0 {
            best = (c, f);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Solver("no stable axial frequency found".into()));
    }
    let step = (hi - lo) / grid as f64;
    Ok(golden_min(cost, best.1 - step, best.1 + step, 1e-14))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_ion_closed_form() {
        let x = equilibrium_positions(2).unwrap();
        let a = 0.5f64.powf(2.0 / 3.0);
        assert!((x[0] + a).abs() < 1e-12 && (x[1] - a).abs() < 1e-12);
    }

    #[test]
    fn three_ion_solution() {
        let x = equilibrium_positions(3).unwrap();
        let a = (5.0f64 / 4.0).cbrt();
        assert!((x[2] - a).abs() < 1e-12 && x[1].abs() < 1e-14);
        assert!((x[2] - 1.0772).abs() < 1e-4);
    }

    #[test]
    fn positions_are_centred() {
        for n in 2..=12 {
            let x = equilibrium_positions(n).unwrap();
            assert!(x.iter().sum::<f64>().abs() < 1e-12);
            let (g, _) = gradient_hessian(&x);
            assert!(g.norm() <= 1e-12);
        }
    }

    #[test]
    fn single_ion_mode() {
        let (f, v) = transverse_modes(&[0.0], 1.0e6, 0.2e6).unwrap();
        assert_eq!(f, vec![1.0e6]);
        assert_eq!(v[(0, 0)], 1.0);
    }

    #[test]
    fn com_mode_is_highest_and_uniform() {
        let c = ChainModel::new(6, 0.22e6, 1.458e6).unwrap();
        assert!((c.mode_freqs[5] - 1.458e6).abs() < 1e-9 * 1.458e6);
        let u = 1.0 / 6f64.sqrt();
        for i in 0..6 {
            assert!((c.mode_vectors[(i, 5)] - u).abs() < 1e-10);
        }
        let id = c.mode_vectors.transpose() * &c.mode_vectors;
        assert!((id - DMatrix::<f64>::identity(6, 6)).amax() < 1e-10);
    }

    #[test]
    fn weak_confinement_is_rejected() {
        let x = equilibrium_positions(6).unwrap();
        assert!(matches!(transverse_modes(&x, 0.3e6, 0.22e6), Err(Error::Configuration(_))));
    }

    #[test]
    fn fitted_spectrum_matches_measured_modes() {
        let measured = [1.303e6, 1.347e6, 1.385e6, 1.416e6, 1.441e6, 1.458e6];
        let c = ChainModel::fitted_to(&measured).unwrap();
        for (f, m) in c.mode_freqs.iter().zip(&measured) {
            assert!((f - m).abs() <= 3.0e3, "{f} vs {m}");
        }
        // completeness: Σ_k b_ik b_jk = δ_ij
        let p = &c.mode_vectors * c.mode_vectors.transpose();
        assert!((p - DMatrix::<f64>::identity(6, 6)).amax() < 1e-10);
    }
}
