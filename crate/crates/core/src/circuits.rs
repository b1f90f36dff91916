//! Native gate set, Bell-state preparation and analysis circuits, and circuit
//! execution with optional gate noise.
//!
//! Text format (one op per line, `#` starts a comment, angles in radians or
//! as `[-][k]pi[/d]`):
//!
//! ```text
//! sites <n>
//! grot <X|Y> <angle> <phase> <S|F>
//! rz <site> <angle>
//! rzz <i> <j> <angle> <echo|noecho>
//! echo <S|F>
//! shelve <site>
//! unshelve <site>
//! convert <site,site,...> <from> <to>
//! ```

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{check_distinct, Level, Pauli, QubitType, Register, Role, SITE_DIM};

/// Default chain layout: coolants at both ends, memory ions in the middle.
pub const COOLANT_SITES: [usize; 2] = [0, 5];
pub const MEMORY_SITES: [usize; 4] = [1, 2, 3, 4];

pub fn default_roles() -> [Role; 6] {
    [Role::Coolant, Role::Memory, Role::Memory, Role::Memory, Role::Memory, Role::Coolant]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GateOp {
    GlobalRot { axis: Axis, angle: f64, phase: f64, target: QubitType },
    Rz { site: usize, angle: f64 },
    /// `exp(-i angle/2 Z_i Z_j)`, followed by `⊗Y` on every unshelved site
    /// of the gated type when `echo` is set.
    Rzz { i: usize, j: usize, angle: f64, echo: bool },
    EchoPi { target: QubitType },
    Shelve { site: usize },
    Unshelve { site: usize },
    ConvertType { sites: Vec<usize>, from: QubitType, to: QubitType },
}

impl GateOp {
    fn sites(&self) -> Vec<usize> {
        match self {
            GateOp::Rz { site, .. } | GateOp::Shelve { site } | GateOp::Unshelve { site } => vec![*site],
            GateOp::Rzz { i, j, .. } => vec![*i, *j],
            GateOp::ConvertType { sites, .. } => sites.clone(),
            GateOp::GlobalRot { .. } | GateOp::EchoPi { .. } => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    n_sites: usize,
    ops: Vec<GateOp>,
}

impl Circuit {
    pub fn new(n_sites: usize) -> Circuit {
        Circuit { n_sites, ops: Vec::new() }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn ops(&self) -> &[GateOp] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn push(&mut self, op: GateOp) -> Result<&mut Circuit> {
        for s in op.sites() {
            if s >= self.n_sites {
                return Err(Error::InvalidArgument(format!(
                    "site {s} outside circuit of {} sites",
                    self.n_sites
                )));
            }
        }
        match &op {
            GateOp::Rzz { i, j, angle, .. } => {
                if i == j {
                    return Err(Error::InvalidArgument(format!("Rzz on a single site {i}")));
                }
                if (angle.abs() - FRAC_PI_2).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("Rzz angle {angle} is not ±π/2")));
                }
            }
            GateOp::ConvertType { sites, .. } => check_distinct(sites)?,
            _ => {}
        }
        self.ops.push(op);
        Ok(self)
    }

    pub fn extend(&mut self, other: &Circuit) -> Result<()> {
        for op in &other.ops {
            self.push(op.clone())?;
        }
        Ok(())
    }

    pub fn global(&mut self, axis: Axis, angle: f64, phase: f64) -> Result<&mut Circuit> {
        self.push(GateOp::GlobalRot { axis, angle, phase, target: QubitType::S })
    }

    pub fn rz(&mut self, site: usize, angle: f64) -> Result<&mut Circuit> {
        self.push(GateOp::Rz { site, angle })
    }

    pub fn rzz(&mut self, i: usize, j: usize, angle: f64) -> Result<&mut Circuit> {
        self.push(GateOp::Rzz { i, j, angle, echo: true })
    }

    /// Serialize to the line-based text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("sites {}\n", self.n_sites);
        for op in &self.ops {
            out.push_str(&op_to_line(op));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Circuit> {
        let mut circuit: Option<Circuit> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse(format!("line {}: {msg}", lineno + 1));
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok[0] == "sites" {
                if circuit.is_some() {
                    return Err(err("duplicate `sites` header".into()));
                }
                let n = tok.get(1).ok_or_else(|| err("missing site count".into()))?;
                circuit = Some(Circuit::new(n.parse().map_err(|_| err(format!("bad count {n:?}")))?));
                continue;
            }
            let c = circuit.as_mut().ok_or_else(|| err("`sites` header must come first".into()))?;
            let op = parse_op(&tok).map_err(|e| err(e.to_string()))?;
            c.push(op).map_err(|e| err(e.to_string()))?;
        }
        circuit.ok_or_else(|| Error::Parse("missing `sites` header".into()))
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for Circuit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Circuit> {
        Circuit::parse(s)
    }
}

fn type_name(t: QubitType) -> &'static str {
    match t {
        QubitType::S => "S",
        QubitType::F => "F",
        QubitType::ShelvedD => "D",
    }
}

fn parse_type(s: &str) -> Result<QubitType> {
    match s {
        "S" => Ok(QubitType::S),
        "F" => Ok(QubitType::F),
        "D" => Ok(QubitType::ShelvedD),
        _ => Err(Error::Parse(format!("unknown qubit type {s:?}"))),
    }
}

/// Parse `1.25`, `pi`, `-pi/2`, `3pi/2`.
fn parse_angle(s: &str) -> Result<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    let bad = || Error::Parse(format!("bad angle {s:?}"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (num, den) = match body.split_once('/') {
        Some((a, b)) => (a, b.parse::<f64>().map_err(|_| bad())?),
        None => (body, 1.0),
    };
    let k = num.strip_suffix("pi").ok_or_else(bad)?;
    let k = if k.is_empty() { 1.0 } else { k.parse::<f64>().map_err(|_| bad())? };
    let v = k * PI / den;
    Ok(if neg { -v } else { v })
}

fn format_angle(a: f64) -> String {
    let q = a * 4.0 / PI;
    let k = q.round();
    if (q - k).abs() < 1e-9 && k != 0.0 {
        let (mut num, mut den) = (k.abs() as i64, 4i64);
        while num % 2 == 0 && den > 1 {
            num /= 2;
            den /= 2;
        }
        let sign = if k < 0.0 { "-" } else { "" };
        let head = if num == 1 { String::new() } else { num.to_string() };
        let expr = if den == 1 { format!("{sign}{head}pi") } else { format!("{sign}{head}pi/{den}") };
        if parse_angle(&expr).ok() == Some(a) {
            return expr;
        }
    }
    format!("{a:?}")
}

fn op_to_line(op: &GateOp) -> String {
    match op {
        GateOp::GlobalRot { axis, angle, phase, target } => format!(
            "grot {} {} {} {}",
            if *axis == Axis::X { "X" } else { "Y" },
            format_angle(*angle),
            format_angle(*phase),
            type_name(*target)
        ),
        GateOp::Rz { site, angle } => format!("rz {site} {}", format_angle(*angle)),
        GateOp::Rzz { i, j, angle, echo } => {
            format!("rzz {i} {j} {} {}", format_angle(*angle), if *echo { "echo" } else { "noecho" })
        }
        GateOp::EchoPi { target } => format!("echo {}", type_name(*target)),
        GateOp::Shelve { site } => format!("shelve {site}"),
        GateOp::Unshelve { site } => format!("unshelve {site}"),
        GateOp::ConvertType { sites, from, to } => format!(
            "convert {} {} {}",
            sites.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            type_name(*from),
            type_name(*to)
        ),
    }
}

fn parse_op(tok: &[&str]) -> Result<GateOp> {
    let arg = |k: usize| -> Result<&str> {
        tok.get(k).copied().ok_or_else(|| Error::Parse(format!("`{}` needs more arguments", tok[0])))
    };
    let site = |k: usize| -> Result<usize> {
        let s = arg(k)?;
        s.parse().map_err(|_| Error::Parse(format!("bad site {s:?}")))
    };
    let expected = match tok[0] {
        "grot" => 5,
        "rz" => 3,
        "rzz" => 5,
        "echo" | "shelve" | "unshelve" => 2,
        "convert" => 4,
        other => return Err(Error::Parse(format!("unknown op {other:?}"))),
    };
    if tok.len() != expected {
        return Err(Error::Parse(format!("`{}` takes {} arguments", tok[0], expected - 1)));
    }
    Ok(match tok[0] {
        "grot" => GateOp::GlobalRot {
            axis: match arg(1)? {
                "X" => Axis::X,
                "Y" => Axis::Y,
                a => return Err(Error::Parse(format!("unknown axis {a:?}"))),
            },
            angle: parse_angle(arg(2)?)?,
            phase: parse_angle(arg(3)?)?,
            target: parse_type(arg(4)?)?,
        },
        "rz" => GateOp::Rz { site: site(1)?, angle: parse_angle(arg(2)?)? },
        "rzz" => GateOp::Rzz {
            i: site(1)?,
            j: site(2)?,
            angle: parse_angle(arg(3)?)?,
            echo: match arg(4)? {
                "echo" => true,
                "noecho" => false,
                e => return Err(Error::Parse(format!("expected echo|noecho, got {e:?}"))),
            },
        },
        "echo" => GateOp::EchoPi { target: parse_type(arg(1)?)? },
        "shelve" => GateOp::Shelve { site: site(1)? },
        "unshelve" => GateOp::Unshelve { site: site(1)? },
        _ => GateOp::ConvertType {
            sites: arg(1)?
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad site {s:?}"))))
                .collect::<Result<Vec<_>>>()?,
            from: parse_type(arg(2)?)?,
            to: parse_type(arg(3)?)?,
        },
    })
}

/// Single-site rotation `exp(-iθ/2 (X cos φ + Y sin φ))`, identity on `|L⟩`.
pub fn rotation_matrix(theta: f64, phi: f64) -> DMatrix<C64> {
    let (s, c) = (theta / 2.0).sin_cos();
    let mut m = DMatrix::<C64>::identity(SITE_DIM, SITE_DIM);
    m[(0, 0)] = C64::new(c, 0.0);
    m[(1, 1)] = C64::new(c, 0.0);
    m[(0, 1)] = C64::new(0.0, -s) * C64::from_polar(1.0, -phi);
    m[(1, 0)] = C64::new(0.0, -s) * C64::from_polar(1.0, phi);
    m
}

pub fn rz_matrix(theta: f64) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::identity(SITE_DIM, SITE_DIM);
    m[(0, 0)] = C64::from_polar(1.0, -theta / 2.0);
    m[(1, 1)] = C64::from_polar(1.0, theta / 2.0);
    m
}

/// `exp(-iθ/2 Z⊗Z)` on two sites (first site least significant), identity
/// wherever either site is in `|L⟩`.
pub fn zz_matrix(theta: f64) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::identity(SITE_DIM * SITE_DIM, SITE_DIM * SITE_DIM);
    for a in 0..2 {
        for b in 0..2 {
            let zz = if a == b { 1.0 } else { -1.0 };
            let idx = a + SITE_DIM * b;
            m[(idx, idx)] = C64::from_polar(1.0, -theta / 2.0 * zz);
        }
    }
    m
}

fn axis_phase(axis: Axis, phase: f64) -> f64 {
    match axis {
        Axis::X => phase,
        Axis::Y => phase + FRAC_PI_2,
    }
}

/// The op as an ordered product of local unitaries `(matrix, sites)`,
/// applied first to last. Label-changing ops yield no factors.
pub fn gate_factors(op: &GateOp, labels: &[QubitType]) -> Result<Vec<(DMatrix<C64>, Vec<usize>)>> {
    let n = labels.len();
    let shelved = |s: usize| -> Result<()> {
        if s >= n {
            return Err(Error::InvalidArgument(format!("site {s} outside register of {n} sites")));
        }
        if labels[s] == QubitType::ShelvedD {
            return Err(Error::Protocol(format!("gate addresses shelved site {s}")));
        }
        Ok(())
    };
    Ok(match op {
        GateOp::GlobalRot { axis, angle, phase, target } => {
            let u = rotation_matrix(*angle, axis_phase(*axis, *phase));
            (0..n).filter(|&s| labels[s] == *target).map(|s| (u.clone(), vec![s])).collect()
        }
        GateOp::EchoPi { target } => {
            let u = rotation_matrix(PI, FRAC_PI_2);
            (0..n).filter(|&s| labels[s] == *target).map(|s| (u.clone(), vec![s])).collect()
        }
        GateOp::Rz { site, angle } => {
            shelved(*site)?;
            vec![(rz_matrix(*angle), vec![*site])]
        }
        GateOp::Rzz { i, j, angle, echo } => {
            if i == j {
                return Err(Error::InvalidArgument(format!("Rzz on a single site {i}")));
            }
            shelved(*i)?;
            shelved(*j)?;
            let mut f = vec![(zz_matrix(*angle), vec![*i, *j])];
            if *echo {
                let y = Pauli::Y.site_matrix();
                let t = labels[*i];
                f.extend((0..n).filter(|&s| labels[s] == t).map(|s| (y.clone(), vec![s])));
            }
            f
        }
        GateOp::Shelve { .. } | GateOp::Unshelve { .. } | GateOp::ConvertType { .. } => vec![],
    })
}

/// Dense unitary of `op` on the full register (dimension `3^n`).
pub fn gate_unitary(op: &GateOp, labels: &[QubitType]) -> Result<DMatrix<C64>> {
    let n = labels.len();
    let dim = SITE_DIM.pow(n as u32);
    let mut total = DMatrix::<C64>::identity(dim, dim);
    for (u, sites) in gate_factors(op, labels)? {
        apply_left(&mut total, &u, &sites);
    }
    Ok(total)
}

/// `M ← (U ⊗ I) M` for a local operator on `sites`.
fn apply_left(m: &mut DMatrix<C64>, u: &DMatrix<C64>, sites: &[usize]) {
    let dim = m.nrows();
    let k = u.nrows();
    let offsets: Vec<usize> = (0..k)
        .map(|l| {
            sites
                .iter()
                .enumerate()
                .map(|(j, &s)| ((l / SITE_DIM.pow(j as u32)) % SITE_DIM) * SITE_DIM.pow(s as u32))
                .sum()
        })
        .collect();
    let bases: Vec<usize> = (0..dim)
        .filter(|i| sites.iter().all(|&s| (i / SITE_DIM.pow(s as u32)).is_multiple_of(SITE_DIM)))
        .collect();
    let mut buf = vec![C64::new(0.0, 0.0); k];
    for c in 0..dim {
        for &b in &bases {
            for (a, slot) in buf.iter_mut().enumerate() {
                *slot = (0..k).map(|x| u[(a, x)] * m[(b + offsets[x], c)]).sum();
            }
            for (a, v) in buf.iter().enumerate() {
                m[(b + offsets[a], c)] = *v;
            }
        }
    }
}

/// Embed a local operator on `sites` into the full `3^n` space.
pub fn embed(u: &DMatrix<C64>, sites: &[usize], n: usize) -> DMatrix<C64> {
    let dim = SITE_DIM.pow(n as u32);
    let mut m = DMatrix::<C64>::identity(dim, dim);
    apply_left(&mut m, u, sites);
    m
}

/// Logical Bell states of the four memory ions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellTarget {
    PsiPlus,
    PsiMinus,
    PhiPlus,
    PhiMinus,
}

impl BellTarget {
    pub const ALL: [BellTarget; 4] =
        [BellTarget::PsiPlus, BellTarget::PsiMinus, BellTarget::PhiPlus, BellTarget::PhiMinus];

    pub fn family(self) -> Family {
        match self {
            BellTarget::PsiPlus | BellTarget::PsiMinus => Family::Psi,
            BellTarget::PhiPlus | BellTarget::PhiMinus => Family::Phi,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            BellTarget::PsiPlus | BellTarget::PhiPlus => 1.0,
            BellTarget::PsiMinus | BellTarget::PhiMinus => -1.0,
        }
    }

    /// The two support strings over the memory qubits q1..q4.
    pub fn support(self) -> ([u8; 4], [u8; 4]) {
        match self.family() {
            Family::Psi => ([1, 0, 0, 1], [0, 1, 1, 0]),
            Family::Phi => ([1, 0, 1, 0], [0, 1, 0, 1]),
        }
    }
}

impl FromStr for BellTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<BellTarget> {
        match s {
            "psi+" | "psi_plus" => Ok(BellTarget::PsiPlus),
            "psi-" | "psi_minus" => Ok(BellTarget::PsiMinus),
            "phi+" | "phi_plus" => Ok(BellTarget::PhiPlus),
            "phi-" | "phi_minus" => Ok(BellTarget::PhiMinus),
            _ => Err(Error::InvalidArgument(format!("unknown Bell target {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Psi,
    Phi,
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Family> {
        match s {
            "psi" => Ok(Family::Psi),
            "phi" => Ok(Family::Phi),
            _ => Err(Error::InvalidArgument(format!("unknown state family {s:?}"))),
        }
    }
}

/// State vector of `target` on `memory` sites of an `n`-site register, every
/// other site in `|0⟩`.
pub fn bell_state_vector(target: BellTarget, n: usize, memory: &[usize; 4]) -> Vec<C64> {
    let (a, b) = target.support();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let levels = |bits: [u8; 4]| -> Vec<Level> {
        let mut l = vec![Level::Zero; n];
        for (k, &s) in memory.iter().enumerate() {
            l[s] = if bits[k] == 1 { Level::One } else { Level::Zero };
        }
        l
    };
    crate::qstate::basis_superposition(
        n,
        &[(C64::new(h, 0.0), &levels(a)), (C64::new(h * target.sign(), 0.0), &levels(b))],
    )
}

/// Six-site target for the default layout.
pub fn bell_target_state(target: BellTarget) -> Vec<C64> {
    bell_state_vector(target, 6, &MEMORY_SITES)
}

/// Preparation circuit for the default `[C, M, M, M, M, C]` layout acting on
/// `|000000⟩`. The φ-family differs only in the site of one `Rz(π)`; the
/// minus states append a final `Rz(π)` on one memory ion.
pub fn build_prep_circuit(target: BellTarget) -> Circuit {
    let mut c = Circuit::new(6);
    let q = 3.0 * FRAC_PI_2;
    let moved = match target.family() {
        Family::Psi => 4,
        Family::Phi => 3,
    };
    (|| -> Result<()> {
        c.global(Axis::X, FRAC_PI_2, 0.0)?;
        c.rzz(1, 2, FRAC_PI_2)?.rzz(2, 3, FRAC_PI_2)?.rzz(2, 4, FRAC_PI_2)?;
        // coolant compensation for the three echo byproducts
        c.rz(COOLANT_SITES[0], q)?.rz(COOLANT_SITES[1], q)?;
        c.global(Axis::X, -FRAC_PI_2, 0.0)?;
        c.rz(1, PI)?.rz(2, q)?.rz(moved, PI)?;
        c.global(Axis::Y, FRAC_PI_2, 0.0)?;
        if target.sign() < 0.0 {
            c.rz(1, PI)?;
        }
        Ok(())
    })()
    .expect("static preparation circuit is valid");
    c
}

/// Which term of the fidelity decomposition a circuit analyses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    O1,
    O2,
    O3,
}

/// Register layout used when building analysis circuits.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub n_sites: usize,
    pub memory: [usize; 4],
    pub qubit_type: QubitType,
}

impl Default for Layout {
    fn default() -> Layout {
        Layout { n_sites: 6, memory: MEMORY_SITES, qubit_type: QubitType::S }
    }
}

/// Analysis circuit on the default layout.
pub fn build_analysis_circuit(which: Component, phi: f64, family: Family) -> Result<Circuit> {
    build_analysis_circuit_for(which, phi, family, &Layout::default())
}

pub fn build_analysis_circuit_for(
    which: Component,
    phi: f64,
    family: Family,
    layout: &Layout,
) -> Result<Circuit> {
    if !(0.0..2.0 * PI).contains(&phi) {
        return Err(Error::InvalidArgument(format!("analysis phase {phi} outside [0, 2π)")));
    }
    let mut c = Circuit::new(layout.n_sites);
    let pulse = GateOp::GlobalRot { axis: Axis::X, angle: FRAC_PI_2, phase: phi, target: layout.qubit_type };
    match which {
        Component::O1 => {}
        Component::O2 => {
            c.push(pulse)?;
        }
        Component::O3 => {
            let m = layout.memory;
            let second = match family {
                Family::Psi => m[2],
                Family::Phi => m[3],
            };
            c.rz(m[1], FRAC_PI_2)?.rz(second, FRAC_PI_2)?;
            c.push(pulse)?;
        }
    }
    Ok(c)
}

/// Gate error model: per-site dephasing after global pulses, two-site
/// depolarizing after each `Rzz`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateNoise {
    /// `ρ → (1 − p₁/2)ρ + (p₁/2) ZρZ` on each rotated site.
    pub p1: f64,
    /// `ρ → (1 − p₂)ρ + p₂ · (I/4 ⊗ tr_ij ρ)` on the gated pair.
    pub p2: f64,
}

impl GateNoise {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("p1", self.p1), ("p2", self.p2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("gate noise {k} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn dephasing_kraus(p: f64) -> Vec<DMatrix<C64>> {
    vec![
        DMatrix::identity(SITE_DIM, SITE_DIM) * C64::new((1.0 - p / 2.0).sqrt(), 0.0),
        Pauli::Z.site_matrix() * C64::new((p / 2.0).sqrt(), 0.0),
    ]
}

/// Two-site depolarizing channel as 16 weighted Pauli products.
pub fn depolarizing2_kraus(p: f64) -> Vec<DMatrix<C64>> {
    let paulis = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    let mut out = Vec::with_capacity(16);
    for (a, pa) in paulis.iter().enumerate() {
        for (b, pb) in paulis.iter().enumerate() {
            let w = if a == 0 && b == 0 { 1.0 - 15.0 * p / 16.0 } else { p / 16.0 };
            // site order: first site is the least significant local digit
            let m = pb.site_matrix().kronecker(&pa.site_matrix());
            out.push(m * C64::new(w.sqrt(), 0.0));
        }
    }
    out
}

/// Apply `c` to `reg` in place.
pub fn run_circuit(reg: &mut Register, c: &Circuit, noise: Option<&GateNoise>) -> Result<()> {
    if c.n_sites() != reg.n_sites() {
        return Err(Error::InvalidArgument(format!(
            "circuit on {} sites, register of {}",
            c.n_sites(),
            reg.n_sites()
        )));
    }
    if let Some(n) = noise {
        n.validate()?;
    }
    for op in c.ops() {
        apply_op(reg, op, noise)?;
    }
    Ok(())
}

pub fn apply_op(reg: &mut Register, op: &GateOp, noise: Option<&GateNoise>) -> Result<()> {
    match op {
        GateOp::Shelve { site } => {
            reg.set_label(*site, QubitType::ShelvedD);
            return Ok(());
        }
        GateOp::Unshelve { site } => {
            if reg.label(*site) != QubitType::ShelvedD {
                return Err(Error::Protocol(format!("site {site} is not shelved")));
            }
            reg.set_label(*site, QubitType::S);
            return Ok(());
        }
        GateOp::ConvertType { sites, from, to } => {
            for &s in sites {
                if reg.label(s) != *from {
                    return Err(Error::Protocol(format!(
                        "site {s} has type {:?}, expected {from:?}",
                        reg.label(s)
                    )));
                }
            }
            for &s in sites {
                reg.set_label(s, *to);
            }
            return Ok(());
        }
        _ => {}
    }
    let factors = gate_factors(op, reg.labels())?;
    for (u, sites) in &factors {
        reg.apply_kraus_unchecked(std::slice::from_ref(u), sites)?;
    }
    if let Some(n) = noise {
        match op {
            GateOp::Rzz { i, j, .. } if n.p2 > 0.0 => {
                reg.apply_kraus_unchecked(&depolarizing2_kraus(n.p2), &[*i, *j])?;
            }
            GateOp::GlobalRot { target, .. } | GateOp::EchoPi { target } if n.p1 > 0.0 => {
                let k = dephasing_kraus(n.p1);
                for s in 0..reg.n_sites() {
                    if reg.label(s) == *target {
                        reg.apply_kraus_unchecked(&k, &[s])?;
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Two-ion Bell-pair circuit used to calibrate the entangling-gate error.
pub fn bell_pair_circuit() -> Circuit {
    let mut c = Circuit::new(2);
    c.global(Axis::X, FRAC_PI_2, 0.0).and_then(|c| c.rzz(0, 1, FRAC_PI_2)).expect("valid circuit");
    c
}

/// Bell fidelity of [`bell_pair_circuit`] with depolarizing strength `p2`,
/// measured against its ideal output.
pub fn bell_pair_fidelity(p2: f64) -> Result<f64> {
    let c = bell_pair_circuit();
    let roles = [Role::Memory; 2];
    let mut ideal = Register::new(&roles)?;
    run_circuit(&mut ideal, &c, None)?;
    // the ideal output is pure: recover its state vector from the first
    // non-zero column
    let dim = ideal.dim();
    let col = (0..dim).find(|&j| ideal.element(j, j).re > 1e-12).expect("nonzero state");
    let norm = ideal.element(col, col).re.sqrt();
    let psi: Vec<C64> = (0..dim).map(|i| ideal.element(i, col) / norm).collect();
    let mut noisy = Register::new(&roles)?;
    run_circuit(&mut noisy, &c, Some(&GateNoise { p1: 0.0, p2 }))?;
    noisy.fidelity_pure(&psi)
}

/// Depolarizing strength that gives the requested Bell-pair fidelity.
/// Fidelity is affine in `p2`, so two simulations fix the line.
pub fn calibrate_p2(target_fidelity: f64) -> Result<f64> {
    let f0 = bell_pair_fidelity(0.0)?;
    let f1 = bell_pair_fidelity(1.0)?;
    let p = (f0 - target_fidelity) / (f0 - f1);
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Validation(format!(
            "Bell fidelity {target_fidelity} not reachable (range [{f1}, {f0}])"
        )));
    }
    Ok(p)
}

/// Shorthand for an all-zero register with the default roles.
pub fn default_register() -> Register {
    Register::new(&default_roles()).expect("six sites")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::Level;

    const ZERO: C64 = C64::new(0.0, 0.0);

    fn s_labels(n: usize) -> Vec<QubitType> {
        vec![QubitType::S; n]
    }

    #[test]
    fn rz_pi_maps_plus_to_minus() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut reg = Register::from_pure(&[Role::Memory], &[C64::new(h, 0.0), C64::new(h, 0.0), ZERO]).unwrap();
        let u = gate_unitary(&GateOp::Rz { site: 0, angle: PI }, &s_labels(1)).unwrap();
        reg.apply_unitary(&u, &[0]).unwrap();
        let minus = [C64::new(h, 0.0), C64::new(-h, 0.0), ZERO];
        assert!((reg.fidelity_pure(&minus).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zz_without_echo_is_phase_only() {
        let u = gate_unitary(&GateOp::Rzz { i: 0, j: 1, angle: -FRAC_PI_2, echo: false }, &s_labels(2)).unwrap();
        assert!((u[(0, 0)] - C64::from_polar(1.0, PI / 4.0)).norm() < 1e-12);
        for r in 1..9 {
            assert!(u[(r, 0)].norm() < 1e-15);
        }
    }

    #[test]
    fn zz_with_echo_flips_every_site() {
        let op = GateOp::Rzz { i: 2, j: 4, angle: -FRAC_PI_2, echo: true };
        let u = gate_unitary(&op, &s_labels(6)).unwrap();
        let all_one = (0..6).fold(0, |acc, _| acc * 3 + 1);
        assert!((u[(all_one, 0)].norm() - 1.0).abs() < 1e-12);
        // unitary: columns orthonormal
        for c in [0, 1, 100, 728] {
            let norm: f64 = u.column(c).iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zz_rejects_single_site() {
        let op = GateOp::Rzz { i: 1, j: 1, angle: FRAC_PI_2, echo: false };
        assert!(matches!(gate_unitary(&op, &s_labels(3)), Err(Error::InvalidArgument(_))));
        assert!(Circuit::new(3).push(op).is_err());
    }

    #[test]
    fn ideal_prep_reaches_every_target() {
        for t in BellTarget::ALL {
            let mut reg = default_register();
            run_circuit(&mut reg, &build_prep_circuit(t), None).unwrap();
            let f = reg.fidelity_pure(&bell_target_state(t)).unwrap();
            assert!((f - 1.0).abs() < 1e-10, "{t:?}: {f}");
            for s in COOLANT_SITES {
                assert!((reg.population(s, Level::Zero) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn phi_circuit_moves_one_rz() {
        let a = build_prep_circuit(BellTarget::PsiPlus);
        let b = build_prep_circuit(BellTarget::PhiPlus);
        let diffs: Vec<_> = a.ops().iter().zip(b.ops()).filter(|(x, y)| x != y).collect();
        assert_eq!(a.len(), b.len());
        assert_eq!(diffs.len(), 1);
        assert_eq!(diffs[0].0, &GateOp::Rz { site: 4, angle: PI });
        assert_eq!(diffs[0].1, &GateOp::Rz { site: 3, angle: PI });
    }

    #[test]
    fn analysis_circuits() {
        assert!(build_analysis_circuit(Component::O1, 0.3, Family::Psi).unwrap().is_empty());
        let o2 = build_analysis_circuit(Component::O2, 0.0, Family::Psi).unwrap();
        assert_eq!(
            o2.ops(),
            &[GateOp::GlobalRot { axis: Axis::X, angle: FRAC_PI_2, phase: 0.0, target: QubitType::S }]
        );
        let o3 = build_analysis_circuit(Component::O3, 1.0, Family::Psi).unwrap();
        let rz_sites: Vec<usize> = o3
            .ops()
            .iter()
            .filter_map(|op| match op {
                GateOp::Rz { site, .. } => Some(*site),
                _ => None,
            })
            .collect();
        assert_eq!(rz_sites, vec![2, 3]);
        assert!(build_analysis_circuit(Component::O2, 2.0 * PI, Family::Psi).is_err());
        assert!("chi".parse::<Family>().is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = build_prep_circuit(BellTarget::PhiMinus);
        c.push(GateOp::ConvertType { sites: vec![1, 2, 3, 4], from: QubitType::S, to: QubitType::F }).unwrap();
        c.push(GateOp::EchoPi { target: QubitType::F }).unwrap();
        c.push(GateOp::Shelve { site: 2 }).unwrap();
        c.push(GateOp::Unshelve { site: 2 }).unwrap();
        c.push(GateOp::Rz { site: 0, angle: 0.123456789 }).unwrap();
        let text = c.to_text();
        assert_eq!(Circuit::parse(&text).unwrap(), c);
    }

    #[test]
    fn prep_circuit_golden_text() {
        let expected = "\
sites 6
grot X pi/2 0.0 S
rzz 1 2 pi/2 echo
rzz 2 3 pi/2 echo
rzz 2 4 pi/2 echo
rz 0 3pi/2
rz 5 3pi/2
grot X -pi/2 0.0 S
rz 1 pi
rz 2 3pi/2
rz 4 pi
grot Y pi/2 0.0 S
";
        assert_eq!(build_prep_circuit(BellTarget::PsiPlus).to_text(), expected);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = Circuit::parse("sites 2\nrz 0 pi\nfoo 1\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(Circuit::parse("rz 0 1.0").is_err());
        assert!(Circuit::parse("sites 2\nrz 5 1.0").is_err());
    }

    #[test]
    fn shelved_site_cannot_be_gated() {
        let mut reg = Register::memory(2).unwrap();
        let mut c = Circuit::new(2);
        c.push(GateOp::Shelve { site: 1 }).unwrap();
        c.rz(1, 0.5).unwrap();
        assert!(matches!(run_circuit(&mut reg, &c, None), Err(Error::Protocol(_))));
    }

    #[test]
    fn global_rotation_skips_shelved_sites() {
        let mut reg = Register::memory(2).unwrap();
        let mut c = Circuit::new(2);
        c.push(GateOp::Shelve { site: 1 }).unwrap();
        c.global(Axis::X, PI, 0.0).unwrap();
        run_circuit(&mut reg, &c, None).unwrap();
        assert!((reg.population(0, Level::One) - 1.0).abs() < 1e-12);
        assert!((reg.population(1, Level::Zero) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p2_calibration_matches_closed_form() {
        // isotropic two-qubit depolarizing: F = 1 − 3p/4
        let p = calibrate_p2(0.991).unwrap();
        assert!((p - 0.012).abs() < 1e-12, "{p}");
        assert!((bell_pair_fidelity(p).unwrap() - 0.991).abs() < 1e-12);
    }

    #[test]
    fn depolarizing_is_trace_preserving() {
        let mut reg = Register::memory(2).unwrap();
        reg.apply_kraus(&depolarizing2_kraus(0.3), &[0, 1]).unwrap();
        reg.check_physical(1e-12).unwrap();
        reg.apply_kraus(&dephasing_kraus(0.4), &[1]).unwrap();
    }
}
