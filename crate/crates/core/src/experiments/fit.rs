//! Binomial maximum-likelihood fit of `p(T) = (1 + A e^{−T/τ})/2` with a
//! profile-likelihood interval on `τ`, and a damped-sinusoid fit for
//! parity traces.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::optim::{brent_root, golden_min, levenberg_marquardt, LmOptions};

/// One storage time with its success count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialPoint {
    pub t: f64,
    pub successes: u64,
    pub trials: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    /// Lifetime in s; `f64::INFINITY` when the best fit has no decay.
    pub tau: f64,
    pub loglik: f64,
    /// 68% profile-likelihood interval on `τ`; the upper end may be infinite.
    pub ci68: (f64, f64),
    pub n_points: usize,
    /// Set when the likelihood stays within the threshold as `τ → ∞`.
    pub upper_unbounded: bool,
}

/// Coverage of the reported interval.
pub const CI_LEVEL: f64 = 0.68;

/// Half the `level` quantile of χ² with one degree of freedom.
pub fn profile_threshold(level: f64) -> f64 {
    ChiSquared::new(1.0).expect("1 dof").inverse_cdf(level) / 2.0
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn loglik(data: &[BinomialPoint], a: f64, r: f64) -> f64 {
    data.iter()
        .map(|d| {
            let e = a * (-r * d.t).exp();
            let k = d.successes as f64;
            let n = d.trials as f64;
            xlogy(k, (1.0 + e) / 2.0) + xlogy(n - k, (1.0 - e) / 2.0)
        })
        .sum()
}

/// Maximize over `A ∈ [0, 1]` at fixed decay rate `r`. The log-likelihood
/// is concave in `A`, so a bracketed root of the derivative suffices.
fn profile_a(data: &[BinomialPoint], r: f64) -> (f64, f64) {
    let score = |a: f64| -> f64 {
        data.iter()
            .map(|d| {
                let e = (-r * d.t).exp();
                let k = d.successes as f64;
                let n = d.trials as f64;
                let mut s = 0.0;
                if k > 0.0 {
                    s += k * e / (1.0 + a * e);
                }
                if n - k > 0.0 {
                    s -= (n - k) * e / (1.0 - a * e);
                }
                s
            })
            .sum()
    };
    let hi = 1.0 - 1e-15;
    let a = if score(0.0) <= 0.0 {
        0.0
    } else if score(hi) >= 0.0 {
        1.0
    } else {
        brent_root(score, 0.0, hi, 1e-15).unwrap_or(hi)
    };
    (a, loglik(data, a, r))
}

/// Maximum-likelihood fit of `(A, τ)` with a 68% profile interval on `τ`.
pub fn mle_fit_exponential(data: &[BinomialPoint]) -> Result<FitResult> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument(format!("{} time points; need ≥ 2", data.len())));
    }
    for d in data {
        if d.trials == 0 || d.successes > d.trials || !(d.t >= 0.0 && d.t.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad data point {d:?}")));
        }
    }
    let t_max = data.iter().map(|d| d.t).fold(0.0, f64::max);
    let t_min_pos = data.iter().map(|d| d.t).filter(|&t| t > 0.0).fold(f64::INFINITY, f64::min);
    if !t_min_pos.is_finite() {
        return Err(Error::Fit("all points at T = 0; τ is not identifiable".into()));
    }
    // work in u = ln r over a range wide enough for any resolvable decay
    let r_lo = 1e-4 / t_max;
    let r_hi = 50.0 / t_min_pos;
    let prof = |r: f64| profile_a(data, r).1;
    let grid = 400;
    let (u_lo, u_hi) = (r_lo.ln(), r_hi.ln());
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 0..=grid {
        let l = prof((u_lo + (u_hi - u_lo) * k as f64 / grid as f64).exp());
        if l > best.0 {
            best = (l, k);
        }
    }
    let l_zero = prof(0.0);
    let du = (u_hi - u_lo) / grid as f64;
    let (r_hat, l_hat) = if l_zero >= best.0 {
        (0.0, l_zero)
    } else {
        let u0 = u_lo + du * best.1 as f64;
        let u = golden_min(|u| -prof(u.exp()), u0 - du, u0 + du, 1e-13);
        let r = u.exp();
        let l = prof(r);
        // the maximum may sit at the decay-free boundary
        if l_zero >= l {
            (0.0, l_zero)
        } else {
            (r, l)
        }
    };
    let a_hat = profile_a(data, r_hat).0;
    let delta = profile_threshold(CI_LEVEL);
    let cut = l_hat - delta;
    let f = |r: f64| prof(r) - cut;

    // τ lower bound ↔ largest r inside the region
    let mut hi = r_hat.max(r_lo) * 2.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e6 * r_hi {
            return Err(Error::Fit("profile likelihood does not fall below the threshold at fast decay".into()));
        }
    }
    let r_upper = brent_root(f, r_hat, hi, 1e-14 * hi)?;
    // τ upper bound ↔ smallest r inside the region
    let (tau_upper, unbounded) = if f(0.0) >= 0.0 {
        (f64::INFINITY, true)
    } else {
        let r_lower = brent_root(f, 0.0, r_hat, 1e-14 * r_hat.max(r_lo))?;
        (1.0 / r_lower, false)
    };
    let tau = if r_hat > 0.0 { 1.0 / r_hat } else { f64::INFINITY };
    Ok(FitResult {
        a: a_hat,
        tau,
        loglik: l_hat,
        ci68: (1.0 / r_upper, tau_upper),
        n_points: data.len(),
        upper_unbounded: unbounded,
    })
}

/// Damped cosine `A e^{−t/τ_d} cos(2πt/T_p + θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub amplitude: f64,
    pub period: f64,
    /// Amplitude decay time; infinite when the fitted decay rate is ≤ 0.
    pub decay_time: f64,
    pub phase: f64,
    /// Decay rate `1/τ_d` and its standard error.
    pub decay_rate: f64,
    pub decay_rate_stderr: f64,
    /// `1/(rate + stderr)`: a one-sigma lower bound on `τ_d`.
    pub decay_time_lower: f64,
    pub period_stderr: f64,
    pub rms_residual: f64,
    /// Set when no significant decay is resolved.
    pub no_decay: bool,
    /// Covariance of `(A, rate, f, θ)`.
    pub covariance: Vec<Vec<f64>>,
}

fn model_and_jacobian(p: &DVector<f64>, t: &[f64], y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let (a, g, f, th) = (p[0], p[1], p[2], p[3]);
    let mut r = DVector::zeros(t.len());
    let mut j = DMatrix::zeros(t.len(), 4);
    for (k, &tk) in t.iter().enumerate() {
        let e = (-g * tk).exp();
        let ph = 2.0 * PI * f * tk + th;
        let (s, c) = ph.sin_cos();
        r[k] = a * e * c - y[k];
        j[(k, 0)] = e * c;
        j[(k, 1)] = -tk * a * e * c;
        j[(k, 2)] = -a * e * s * 2.0 * PI * tk;
        j[(k, 3)] = -a * e * s;
    }
    (r, j)
}

/// Least-squares fit of a damped cosine. The frequency is seeded by a
/// periodogram-style grid search (linear in amplitude and phase at each
/// trial frequency), then all four parameters are refined together.
pub fn fit_sinusoid_decay(t: &[f64], y: &[f64]) -> Result<SinusoidFit> {
    if t.len() != y.len() {
        return Err(Error::InvalidArgument("time and value lists differ in length".into()));
    }
    if t.len() < 8 {
        return Err(Error::InvalidArgument(format!("{} points; need ≥ 8", t.len())));
    }
    let span = t.iter().copied().fold(f64::NEG_INFINITY, f64::max) - t.iter().copied().fold(f64::INFINITY, f64::min);
    if span.is_nan() || span <= 0.0 {
        return Err(Error::InvalidArgument("zero time span".into()));
    }
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min_dt = sorted.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    // slow branch: allow periods up to four spans
    let f_lo = 0.25 / span;
    let f_hi = 0.5 / min_dt;
    let df = 0.02 / span;
    let n_grid = (((f_hi - f_lo) / df).ceil() as usize).min(2_000_000);
    let mut best = (f64::INFINITY, f_lo, 0.0, 0.0);
    for k in 0..=n_grid {
        let f = f_lo + (f_hi - f_lo) * k as f64 / n_grid.max(1) as f64;
        let (mut scc, mut sss, mut scs, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&tk, &yk) in t.iter().zip(y) {
            let (s, c) = (2.0 * PI * f * tk).sin_cos();
            scc += c * c;
            sss += s * s;
            scs += c * s;
            syc += yk * c;
            sys += yk * s;
        }
        let det = scc * sss - scs * scs;
        if det.abs() < 1e-12 * (scc * sss).max(1e-300) {
            continue;
        }
        let p = (syc * sss - sys * scs) / det;
        let q = (sys * scc - syc * scs) / det;
        let sse: f64 = t
            .iter()
            .zip(y)
            .map(|(&tk, &yk)| {
                let (s, c) = (2.0 * PI * f * tk).sin_cos();
                (yk - p * c - q * s).powi(2)
            })
            .sum();
        if sse < best.0 {
            best = (sse, f, p, q);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Fit("frequency grid search found no admissible frequency".into()));
    }
    let (_, f0, p, q) = best;
    // p cos − q·(−sin) ⇒ A cos(ωt + θ) with A cos θ = p, −A sin θ = q
    let x0 = DVector::from_vec(vec![(p * p + q * q).sqrt(), 0.0, f0, (-q).atan2(p)]);
    let opts = LmOptions { max_iter: 2000, tol_residual: 0.0, tol_step: 1e-15 };
    let res = levenberg_marquardt(|x| model_and_jacobian(x, t, y), x0, &opts);
    let (r, j) = model_and_jacobian(&res.x, t, y);
    let sse = r.norm_squared();
    let dof = (t.len() - 4) as f64;
    let s2 = (sse / dof).max(1e-30);
    let cov = (j.transpose() * &j)
        .try_inverse()
        .ok_or_else(|| Error::Fit(format!("singular normal matrix; rms residual {:.3e}", (sse / t.len() as f64).sqrt())))?
        * s2;
    let mut x = res.x.clone();
    if x[0] < 0.0 {
        x[0] = -x[0];
        x[3] += PI;
    }
    if x[2] < 0.0 {
        x[2] = -x[2];
        x[3] = -x[3];
    }
    let phase = (x[3] + PI).rem_euclid(2.0 * PI) - PI;
    let rate = x[1];
    let rate_se = cov[(1, 1)].max(0.0).sqrt();
    let f_se = cov[(2, 2)].max(0.0).sqrt();
    if x[2] <= 0.0 || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Fit(format!("fit diverged; rms residual {:.3e}", (sse / t.len() as f64).sqrt())));
    }
    let no_decay = rate <= rate_se;
    Ok(SinusoidFit {
        amplitude: x[0],
        period: 1.0 / x[2],
        decay_time: if rate > 0.0 { 1.0 / rate } else { f64::INFINITY },
        phase,
        decay_rate: rate,
        decay_rate_stderr: rate_se,
        decay_time_lower: if rate + rate_se > 0.0 { 1.0 / (rate + rate_se) } else { f64::INFINITY },
        period_stderr: f_se / (x[2] * x[2]),
        rms_residual: (sse / t.len() as f64).sqrt(),
        no_decay,
        covariance: (0..4).map(|a| (0..4).map(|b| cov[(a, b)]).collect()).collect(),
    })
}
