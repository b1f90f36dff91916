//! Dense density-matrix engine over registers of three-level sites.
//!
//! Every site carries the levels `|0⟩, |1⟩, |L⟩` (in that order). The first
//! two span the qubit; `|L⟩` aggregates every leaked Zeeman level of the ion
//! and is never touched coherently. Basis indices are little-endian in the
//! site index: `index = Σ_s digit_s · 3^s`, so site 0 is the fastest-varying
//! digit and outcome strings are written site 0 first.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SITE_DIM: usize = 3;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// What an ion is used for in the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Memory,
    Coolant,
}

/// Which manifold currently hosts the qubit of a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QubitType {
    S,
    F,
    ShelvedD,
}

/// Computational level of a single site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Zero,
    One,
    Leak,
}

impl Level {
    pub fn index(self) -> usize {
        match self {
            Level::Zero => 0,
            Level::One => 1,
            Level::Leak => 2,
        }
    }

    pub fn from_index(i: usize) -> Level {
        match i {
            0 => Level::Zero,
            1 => Level::One,
            _ => Level::Leak,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Level::Zero => '0',
            Level::One => '1',
            Level::Leak => 'L',
        }
    }
}

/// Render an outcome as a string, site 0 first (e.g. `"01L0"`).
pub fn outcome_string(levels: &[Level]) -> String {
    levels.iter().map(|l| l.as_char()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Result<Pauli> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(Error::InvalidArgument(format!("unknown Pauli symbol {other:?}"))),
        }
    }

    /// 3x3 matrix acting on `|0⟩,|1⟩` and as identity on `|L⟩`.
    pub fn site_matrix(self) -> DMatrix<C64> {
        let i = C64::new(0.0, 1.0);
        let mut m = DMatrix::<C64>::identity(SITE_DIM, SITE_DIM);
        match self {
            Pauli::I => {}
            Pauli::X => {
                m[(0, 0)] = ZERO;
                m[(1, 1)] = ZERO;
                m[(0, 1)] = ONE;
                m[(1, 0)] = ONE;
            }
            Pauli::Y => {
                m[(0, 0)] = ZERO;
                m[(1, 1)] = ZERO;
                m[(0, 1)] = -i;
                m[(1, 0)] = i;
            }
            Pauli::Z => {
                m[(1, 1)] = -ONE;
            }
        }
        m
    }

    /// Action on a basis digit: returns (new digit, phase).
    #[inline]
    fn act(self, digit: usize) -> (usize, C64) {
        if digit == 2 {
            return (2, ONE);
        }
        match self {
            Pauli::I => (digit, ONE),
            Pauli::X => (1 - digit, ONE),
            Pauli::Y => {
                if digit == 0 {
                    (1, C64::new(0.0, 1.0))
                } else {
                    (0, C64::new(0.0, -1.0))
                }
            }
            Pauli::Z => (digit, if digit == 0 { ONE } else { -ONE }),
        }
    }
}

/// One weighted Pauli product, aligned with [`Observable::sites`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub coeff: f64,
    pub paulis: Vec<Pauli>,
}

impl PauliTerm {
    pub fn parse(coeff: f64, s: &str) -> Result<PauliTerm> {
        let paulis = s.chars().map(Pauli::from_char).collect::<Result<Vec<_>>>()?;
        Ok(PauliTerm { coeff, paulis })
    }
}

/// Real linear combination of Pauli strings on a list of sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub sites: Vec<usize>,
    pub terms: Vec<PauliTerm>,
}

impl Observable {
    pub fn new(sites: Vec<usize>, terms: Vec<PauliTerm>) -> Result<Observable> {
        for t in &terms {
            if t.paulis.len() != sites.len() {
                return Err(Error::InvalidArgument(format!(
                    "Pauli string of length {} on {} sites",
                    t.paulis.len(),
                    sites.len()
                )));
            }
        }
        check_distinct(&sites)?;
        Ok(Observable { sites, terms })
    }

    /// Build from `(coefficient, "XYZI")` pairs.
    pub fn from_strings(sites: Vec<usize>, terms: &[(f64, &str)]) -> Result<Observable> {
        let terms = terms
            .iter()
            .map(|(c, s)| PauliTerm::parse(*c, s))
            .collect::<Result<Vec<_>>>()?;
        Observable::new(sites, terms)
    }

    pub fn scaled(mut self, factor: f64) -> Observable {
        for t in &mut self.terms {
            t.coeff *= factor;
        }
        self
    }

    /// Value of the observable on a computational basis state restricted to
    /// the Z-type terms; `None` if any term carries X or Y.
    pub fn z_eigenvalue(&self, digits: &[usize]) -> Option<f64> {
        let mut total = 0.0;
        for t in &self.terms {
            let mut v = t.coeff;
            for (p, &d) in t.paulis.iter().zip(digits) {
                match p {
                    Pauli::I => {}
                    Pauli::Z => {
                        if d == 1 {
                            v = -v;
                        }
                    }
                    _ => return None,
                }
            }
            total += v;
        }
        Some(total)
    }
}

pub(crate) fn check_distinct(sites: &[usize]) -> Result<()> {
    for (a, &s) in sites.iter().enumerate() {
        if sites[..a].contains(&s) {
            return Err(Error::InvalidArgument(format!("repeated site {s}")));
        }
    }
    Ok(())
}

/// Density matrix over `n` three-level sites with per-site role and type labels.
#[derive(Clone, Debug)]
pub struct Register {
    roles: Vec<Role>,
    labels: Vec<QubitType>,
    dim: usize,
    rho: Vec<C64>,
}

/// Fresh register in `|0…0⟩` with all type labels `S`.
pub fn init_register(n: usize, roles: &[Role]) -> Result<Register> {
    if n == 0 {
        return Err(Error::InvalidArgument("register needs at least one site".into()));
    }
    if roles.len() != n {
        return Err(Error::InvalidArgument(format!("{} roles for {n} sites", roles.len())));
    }
    Register::new(roles)
}

impl Register {
    pub fn new(roles: &[Role]) -> Result<Register> {
        if roles.is_empty() {
            return Err(Error::InvalidArgument("register needs at least one site".into()));
        }
        let dim = SITE_DIM.pow(roles.len() as u32);
        let mut rho = vec![ZERO; dim * dim];
        rho[0] = ONE;
        Ok(Register { roles: roles.to_vec(), labels: vec![QubitType::S; roles.len()], dim, rho })
    }

    /// All-memory register of `n` sites.
    pub fn memory(n: usize) -> Result<Register> {
        init_register(n, &vec![Role::Memory; n])
    }

    /// Register holding the pure state `psi` (length `3^n`).
    pub fn from_pure(roles: &[Role], psi: &[C64]) -> Result<Register> {
        let mut reg = Register::new(roles)?;
        if psi.len() != reg.dim {
            return Err(Error::InvalidArgument(format!(
                "state vector of length {} for dimension {}",
                psi.len(),
                reg.dim
            )));
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!("state vector norm² = {norm}")));
        }
        for i in 0..reg.dim {
            for j in 0..reg.dim {
                reg.rho[i * reg.dim + j] = psi[i] * psi[j].conj();
            }
        }
        Ok(reg)
    }

    /// Register holding an arbitrary density matrix; validated for trace,
    /// Hermiticity and positivity.
    pub fn from_density(roles: &[Role], rho: &DMatrix<C64>) -> Result<Register> {
        let mut reg = Register::new(roles)?;
        if rho.nrows() != reg.dim || rho.ncols() != reg.dim {
            return Err(Error::InvalidArgument(format!(
                "{}x{} matrix for dimension {}",
                rho.nrows(),
                rho.ncols(),
                reg.dim
            )));
        }
        for i in 0..reg.dim {
            for j in 0..reg.dim {
                reg.rho[i * reg.dim + j] = rho[(i, j)];
            }
        }
        reg.check_physical(1e-10)?;
        Ok(reg)
    }

    /// Uniform mixture over the qubit subspace of every site.
    pub fn maximally_mixed(roles: &[Role]) -> Result<Register> {
        let mut reg = Register::new(roles)?;
        reg.rho.iter_mut().for_each(|z| *z = ZERO);
        let n = roles.len();
        let w = 1.0 / (1u64 << n) as f64;
        for i in 0..reg.dim {
            if reg.digits(i).iter().all(|&d| d < 2) {
                reg.rho[i * reg.dim + i] = C64::new(w, 0.0);
            }
        }
        Ok(reg)
    }

    /// Random full-rank state on the qubit subspace (Ginibre ensemble).
    pub fn random_qubit_state<R: Rng + ?Sized>(roles: &[Role], rng: &mut R) -> Result<Register> {
        let n = roles.len();
        let q = 1usize << n;
        let g = DMatrix::<C64>::from_fn(q, q, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let mut m = &g * g.adjoint();
        let tr: C64 = m.trace();
        m /= tr;
        let mut reg = Register::new(roles)?;
        reg.rho.iter_mut().for_each(|z| *z = ZERO);
        let embed: Vec<usize> = (0..q).map(|b| qubit_to_index(b, n)).collect();
        for a in 0..q {
            for b in 0..q {
                reg.rho[embed[a] * reg.dim + embed[b]] = m[(a, b)];
            }
        }
        Ok(reg)
    }

    pub fn n_sites(&self) -> usize {
        self.roles.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn labels(&self) -> &[QubitType] {
        &self.labels
    }

    pub fn label(&self, site: usize) -> QubitType {
        self.labels[site]
    }

    pub fn set_label(&mut self, site: usize, label: QubitType) {
        self.labels[site] = label;
    }

    pub fn memory_sites(&self) -> Vec<usize> {
        (0..self.n_sites()).filter(|&s| self.roles[s] == Role::Memory).collect()
    }

    /// Row-major density matrix entries.
    pub fn rho(&self) -> &[C64] {
        &self.rho
    }

    #[inline]
    pub fn element(&self, i: usize, j: usize) -> C64 {
        self.rho[i * self.dim + j]
    }

    pub fn to_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.rho[i * self.dim + j])
    }

    /// Base-3 digits of a basis index, site 0 first.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.n_sites());
        for _ in 0..self.n_sites() {
            d.push(index % SITE_DIM);
            index /= SITE_DIM;
        }
        d
    }

    pub fn index_of(&self, levels: &[Level]) -> usize {
        levels.iter().rev().fold(0, |acc, l| acc * SITE_DIM + l.index())
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.rho[i * self.dim + i]).sum()
    }

    pub fn purity(&self) -> f64 {
        // tr(ρ²) = Σ_ij ρ_ij ρ_ji = Σ |ρ_ij|² for Hermitian ρ
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in i..self.dim {
                let e = (self.rho[i * self.dim + j] - self.rho[j * self.dim + i].conj()).norm();
                worst = worst.max(e);
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.to_matrix();
        let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Check trace, Hermiticity (within `tol`) and positivity (within `100·tol`).
    pub fn check_physical(&self, tol: f64) -> Result<()> {
        let tr = self.trace();
        if (tr - ONE).norm() > tol {
            return Err(Error::Validation(format!("trace = {tr}")));
        }
        let h = self.hermiticity_error();
        if h > tol {
            return Err(Error::Validation(format!("non-Hermitian by {h:e}")));
        }
        let ev = self.min_eigenvalue();
        if ev < -100.0 * tol {
            return Err(Error::Validation(format!("negative eigenvalue {ev:e}")));
        }
        Ok(())
    }

    /// Max elementwise distance to another register of the same shape.
    pub fn distance(&self, other: &Register) -> f64 {
        self.rho
            .iter()
            .zip(&other.rho)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn population(&self, site: usize, level: Level) -> f64 {
        let stride = SITE_DIM.pow(site as u32);
        (0..self.dim)
            .filter(|i| (i / stride) % SITE_DIM == level.index())
            .map(|i| self.rho[i * self.dim + i].re)
            .sum()
    }

    fn layout(&self, sites: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        check_distinct(sites)?;
        if let Some(&s) = sites.iter().find(|&&s| s >= self.n_sites()) {
            return Err(Error::InvalidArgument(format!(
                "site {s} outside register of {} sites",
                self.n_sites()
            )));
        }
        let strides: Vec<usize> = sites.iter().map(|&s| SITE_DIM.pow(s as u32)).collect();
        let m = SITE_DIM.pow(sites.len() as u32);
        let offsets = (0..m)
            .map(|l| {
                let mut l = l;
                let mut off = 0;
                for st in &strides {
                    off += (l % SITE_DIM) * st;
                    l /= SITE_DIM;
                }
                off
            })
            .collect();
        let bases = (0..self.dim)
            .filter(|i| strides.iter().all(|st| (i / st) % SITE_DIM == 0))
            .collect();
        Ok((bases, offsets))
    }

    /// `ρ ← (U⊗I) ρ (U⊗I)†` for a unitary on `sites` (first site = least
    /// significant local digit).
    pub fn apply_unitary(&mut self, u: &DMatrix<C64>, sites: &[usize]) -> Result<()> {
        let m = SITE_DIM.pow(sites.len() as u32);
        if u.nrows() != m || u.ncols() != m {
            return Err(Error::InvalidArgument(format!(
                "{}x{} operator on {} sites",
                u.nrows(),
                u.ncols(),
                sites.len()
            )));
        }
        let dev = (u.adjoint() * u - DMatrix::<C64>::identity(m, m)).camax();
        if dev > 1e-10 {
            return Err(Error::Validation(format!("operator is not unitary (deviation {dev:e})")));
        }
        self.apply_kraus_unchecked(std::slice::from_ref(u), sites)
    }

    /// `ρ ← Σ K ρ K†` for a trace-preserving Kraus set on `sites`.
    pub fn apply_kraus(&mut self, kraus: &[DMatrix<C64>], sites: &[usize]) -> Result<()> {
        let m = SITE_DIM.pow(sites.len() as u32);
        if kraus.is_empty() {
            return Err(Error::Validation("empty Kraus set".into()));
        }
        let mut sum = DMatrix::<C64>::zeros(m, m);
        for k in kraus {
            if k.nrows() != m || k.ncols() != m {
                return Err(Error::InvalidArgument(format!(
                    "{}x{} Kraus operator on {} sites",
                    k.nrows(),
                    k.ncols(),
                    sites.len()
                )));
            }
            sum += k.adjoint() * k;
        }
        let dev = (sum - DMatrix::<C64>::identity(m, m)).camax();
        if dev > 1e-10 {
            return Err(Error::Validation(format!("Kraus set is not trace preserving ({dev:e})")));
        }
        self.apply_kraus_unchecked(kraus, sites)
    }

    pub(crate) fn apply_kraus_unchecked(
        &mut self,
        kraus: &[DMatrix<C64>],
        sites: &[usize],
    ) -> Result<()> {
        let (bases, offsets) = self.layout(sites)?;
        let m = offsets.len();
        let dim = self.dim;
        // row-major copies of the operators and their adjoints
        let ks: Vec<Vec<C64>> = kraus
            .iter()
            .map(|k| (0..m * m).map(|x| k[(x / m, x % m)]).collect())
            .collect();
        let mut block = vec![ZERO; m * m];
        let mut tmp = vec![ZERO; m * m];
        let mut acc = vec![ZERO; m * m];
        for &br in &bases {
            for &bc in &bases {
                for a in 0..m {
                    let row = (br + offsets[a]) * dim + bc;
                    for b in 0..m {
                        block[a * m + b] = self.rho[row + offsets[b]];
                    }
                }
                acc.iter_mut().for_each(|z| *z = ZERO);
                for k in &ks {
                    // tmp = K · block
                    for a in 0..m {
                        for b in 0..m {
                            let mut s = ZERO;
                            for c in 0..m {
                                s += k[a * m + c] * block[c * m + b];
                            }
                            tmp[a * m + b] = s;
                        }
                    }
                    // acc += tmp · K†
                    for a in 0..m {
                        for b in 0..m {
                            let mut s = ZERO;
                            for c in 0..m {
                                s += tmp[a * m + c] * k[b * m + c].conj();
                            }
                            acc[a * m + b] += s;
                        }
                    }
                }
                for a in 0..m {
                    let row = (br + offsets[a]) * dim + bc;
                    for b in 0..m {
                        self.rho[row + offsets[b]] = acc[a * m + b];
                    }
                }
            }
        }
        Ok(())
    }

    /// Multiply by the diagonal unitary `⊗_s diag(1, e^{-iθ_s}, 1)`.
    pub fn apply_site_phases(&mut self, phases: &[f64]) -> Result<()> {
        if phases.len() != self.n_sites() {
            return Err(Error::InvalidArgument(format!(
                "{} phases for {} sites",
                phases.len(),
                self.n_sites()
            )));
        }
        let phase_of: Vec<f64> = (0..self.dim)
            .map(|i| {
                self.digits(i)
                    .iter()
                    .zip(phases)
                    .filter(|(&d, _)| d == 1)
                    .map(|(_, &p)| p)
                    .sum()
            })
            .collect();
        let rot: Vec<C64> = phase_of.iter().map(|&p| C64::from_polar(1.0, -p)).collect();
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.rho[i * self.dim + j] *= rot[i] * rot[j].conj();
            }
        }
        Ok(())
    }

    /// Marginal distribution of the computational outcome on `sites`,
    /// indexed by the local little-endian index over those sites.
    pub fn marginal_probs(&self, sites: &[usize]) -> Result<Vec<f64>> {
        let (_, _) = self.layout(sites)?;
        let m = SITE_DIM.pow(sites.len() as u32);
        let mut p = vec![0.0; m];
        for i in 0..self.dim {
            let mut local = 0;
            let mut w = 1;
            for &s in sites {
                local += ((i / SITE_DIM.pow(s as u32)) % SITE_DIM) * w;
                w *= SITE_DIM;
            }
            p[local] += self.rho[i * self.dim + i].re;
        }
        Ok(p)
    }

    /// Draw a computational-basis outcome on `sites` and collapse onto it.
    pub fn sample_zbasis<R: Rng + ?Sized>(&mut self, sites: &[usize], rng: &mut R) -> Result<Vec<Level>> {
        let probs = self.marginal_probs(sites)?;
        let local = sample_index(&probs, rng);
        let outcome: Vec<Level> =
            (0..sites.len()).map(|j| Level::from_index((local / SITE_DIM.pow(j as u32)) % SITE_DIM)).collect();
        let p = probs[local];
        let matches = |i: usize| {
            sites
                .iter()
                .zip(&outcome)
                .all(|(&s, l)| (i / SITE_DIM.pow(s as u32)) % SITE_DIM == l.index())
        };
        let keep: Vec<bool> = (0..self.dim).map(matches).collect();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let z = &mut self.rho[i * self.dim + j];
                if keep[i] && keep[j] {
                    *z /= p;
                } else {
                    *z = ZERO;
                }
            }
        }
        Ok(outcome)
    }

    /// Reduced state on `keep` (in the given order).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Register> {
        let (_, _) = self.layout(keep)?;
        let roles: Vec<Role> = keep.iter().map(|&s| self.roles[s]).collect();
        let mut out = Register::new(&roles)?;
        out.labels = keep.iter().map(|&s| self.labels[s]).collect();
        out.rho.iter_mut().for_each(|z| *z = ZERO);
        let traced: Vec<usize> = (0..self.n_sites()).filter(|s| !keep.contains(s)).collect();
        let (kept_bases, kept_offsets) = self.layout(keep)?;
        let _ = kept_bases;
        let (_, env_offsets) = self.layout(&traced)?;
        let m = kept_offsets.len();
        for a in 0..m {
            for b in 0..m {
                let mut s = ZERO;
                for &e in &env_offsets {
                    s += self.rho[(kept_offsets[a] + e) * self.dim + kept_offsets[b] + e];
                }
                out.rho[a * m + b] = s;
            }
        }
        Ok(out)
    }

    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        let strides: Vec<usize> = obs
            .sites
            .iter()
            .map(|&s| {
                if s >= self.n_sites() {
                    Err(Error::InvalidArgument(format!("observable site {s} outside register")))
                } else {
                    Ok(SITE_DIM.pow(s as u32))
                }
            })
            .collect::<Result<_>>()?;
        let mut total = ZERO;
        for term in &obs.terms {
            let mut t = ZERO;
            for i in 0..self.dim {
                let mut j = i;
                let mut ph = ONE;
                for (p, &st) in term.paulis.iter().zip(&strides) {
                    let d = (i / st) % SITE_DIM;
                    let (nd, f) = p.act(d);
                    j = j - d * st + nd * st;
                    ph *= f;
                }
                // ⟨i|ρ P|i⟩ with P|i⟩ = ph |j⟩
                t += ph * self.rho[i * self.dim + j];
            }
            total += t * term.coeff;
        }
        if total.im.abs() > 1e-8 {
            return Err(Error::Validation(format!("expectation has imaginary part {:e}", total.im)));
        }
        Ok(total.re)
    }

    /// `⟨t|ρ|t⟩` for a normalized target vector over the full register.
    pub fn fidelity_pure(&self, target: &[C64]) -> Result<f64> {
        if target.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "target of length {} for dimension {}",
                target.len(),
                self.dim
            )));
        }
        let norm: f64 = target.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!("target norm² = {norm}")));
        }
        let nz: Vec<usize> = (0..self.dim).filter(|&i| target[i] != ZERO).collect();
        let mut f = ZERO;
        for &i in &nz {
            for &j in &nz {
                f += target[i].conj() * self.rho[i * self.dim + j] * target[j];
            }
        }
        Ok(f.re)
    }
}

/// Embed a qubit-register index (bit `s` = site `s`) into the three-level basis.
pub fn qubit_to_index(bits: usize, n: usize) -> usize {
    (0..n).rev().fold(0, |acc, s| acc * SITE_DIM + ((bits >> s) & 1))
}

/// State vector over `n` three-level sites from `(amplitude, levels)` pairs.
pub fn basis_superposition(n: usize, terms: &[(C64, &[Level])]) -> Vec<C64> {
    let dim = SITE_DIM.pow(n as u32);
    let mut v = vec![ZERO; dim];
    for (amp, levels) in terms {
        let idx = levels.iter().rev().fold(0, |acc, l| acc * SITE_DIM + l.index());
        v[idx] += amp;
    }
    v
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        let p = p.max(0.0);
        if u < p {
            return i;
        }
        u -= p;
    }
    // rounding: fall back to the last outcome with positive weight
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
