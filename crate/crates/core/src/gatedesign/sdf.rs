//! Closed-form segment integrals for a phase-modulated spin-dependent force.
//!
//! With drive `f(t) = e^{i(δt + φ_s)}` on segment `s` (angular detuning `δ`),
//! the phase-space loop is `g(t) = ∫₀ᵗ f` and the enclosed area is
//! `Im ∫₀ᵀ f(t) conj(g(t)) dt`.

use num_complex::Complex64 as C64;

/// `sin(x)/x`, exact at 0.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `∫_a^b e^{iδt} dt`, stable for any `δ`.
pub fn seg_integral(delta: f64, a: f64, b: f64) -> C64 {
    let tau = b - a;
    C64::from_polar(tau * sinc(delta * tau / 2.0), delta * (a + b) / 2.0)
}

/// `∂/∂δ ∫_a^b e^{iδt} dt = ∫_a^b i t e^{iδt} dt`.
pub fn seg_integral_ddelta(delta: f64, a: f64, b: f64) -> C64 {
    let tau = b - a;
    if (delta * tau).abs() < 1e-3 {
        // midpoint expansion, error O(δτ³)
        let m = (a + b) / 2.0;
        return C64::new(0.0, m) * seg_integral(delta, a, b) - C64::new(delta * tau.powi(3) / 12.0, 0.0)
            * C64::from_polar(1.0, delta * m);
    }
    let e = seg_integral(delta, a, b);
    (C64::from_polar(b, delta * b) - C64::from_polar(a, delta * a) - e) / delta
}

/// `Im ∫_0^τ dt ∫_0^t dt' e^{iδ(t−t')} = (δτ − sin δτ)/δ²`.
pub fn self_area(delta: f64, tau: f64) -> f64 {
    let x = delta * tau;
    if x.abs() < 1e-3 {
        tau * tau * x / 6.0 * (1.0 - x * x / 20.0)
    } else {
        (x - x.sin()) / (delta * delta)
    }
}

/// Segment boundaries `t_s = sT/N`.
pub fn boundaries(t_gate: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|s| t_gate * s as f64 / n as f64).collect()
}

/// Loop end point `g(T)` for one mode.
pub fn closure(phases: &[f64], delta: f64, t_gate: f64) -> C64 {
    let t = boundaries(t_gate, phases.len());
    phases.iter().enumerate().map(|(s, &p)| C64::from_polar(1.0, p) * seg_integral(delta, t[s], t[s + 1])).sum()
}

/// `g(t)` at an arbitrary time inside the gate.
pub fn loop_at(phases: &[f64], delta: f64, t_gate: f64, time: f64) -> C64 {
    let t = boundaries(t_gate, phases.len());
    let mut g = C64::new(0.0, 0.0);
    for (s, &p) in phases.iter().enumerate() {
        if time <= t[s] {
            break;
        }
        let end = t[s + 1].min(time);
        g += C64::from_polar(1.0, p) * seg_integral(delta, t[s], end);
    }
    g
}

/// Enclosed area `Im ∫ f conj(g)` for one mode.
pub fn enclosed_area(phases: &[f64], delta: f64, t_gate: f64) -> f64 {
    let t = boundaries(t_gate, phases.len());
    let tau = t_gate / phases.len() as f64;
    let mut g = C64::new(0.0, 0.0);
    let mut area = 0.0;
    for (s, &p) in phases.iter().enumerate() {
        let e = C64::from_polar(1.0, p) * seg_integral(delta, t[s], t[s + 1]);
        area += (e * g.conj()).im + self_area(delta, tau);
        g += e;
    }
    area
}
