//! Small numerical solvers shared by gate design and fitting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop once the residual norm falls below this.
    pub tol_residual: f64,
    /// Stop once the relative step falls below this.
    pub tol_step: f64,
}

impl Default for LmOptions {
    fn default() -> LmOptions {
        LmOptions { max_iter: 500, tol_residual: 1e-14, tol_step: 1e-15 }
    }
}

#[derive(Clone, Debug)]
pub struct LmResult {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Levenberg–Marquardt with Marquardt diagonal scaling. `f` returns the
/// residual vector and its Jacobian at `x`.
pub fn levenberg_marquardt<F>(mut f: F, x0: DVector<f64>, opts: &LmOptions) -> LmResult
where
    F: FnMut(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let mut x = x0;
    let (mut r, mut j) = f(&x);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut it = 0;
    while it < opts.max_iter && cost.sqrt() > opts.tol_residual {
        it += 1;
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match a.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let x_new = &x + &step;
            let (r_new, j_new) = f(&x_new);
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                let small = step.norm() <= opts.tol_step * (x.norm() + opts.tol_step);
                x = x_new;
                r = r_new;
                j = j_new;
                cost = cost_new;
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if small {
                    return LmResult { x, residual_norm: cost.sqrt(), iterations: it };
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    LmResult { x, residual_norm: cost.sqrt(), iterations: it }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Root of `f` on a sign-changing bracket `[a, b]` (Brent's method).
pub fn brent_root<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Solver(format!("root not bracketed on [{a}, {b}]")));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..500 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(Error::Solver("root search did not converge".into()))
}
