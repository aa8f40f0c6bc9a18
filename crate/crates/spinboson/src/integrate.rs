//! Fixed-step RK4 and adaptive Dormand-Prince RK45 steppers.
//!
//! The steppers are generic over the state container so the same control
//! logic drives real variational-parameter vectors and dense complex Fock
//! vectors.

use crate::error::{Error, Result};
use crate::C64;
use ndarray::Array1;

/// Minimal vector-space interface required by the steppers.
pub trait StateVec: Clone {
    fn zeros_like(&self) -> Self;
    fn assign(&mut self, other: &Self);
    /// self += a * other
    fn axpy(&mut self, a: f64, other: &Self);
    fn scale(&mut self, a: f64);
    /// Weighted RMS norm of `err` with scale atol + rtol * max(|y0|, |y1|).
    fn error_norm(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64;
    fn is_finite(&self) -> bool;
}

impl StateVec for Vec<f64> {
    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }
    fn assign(&mut self, other: &Self) {
        self.copy_from_slice(other);
    }
    fn axpy(&mut self, a: f64, other: &Self) {
        for (s, o) in self.iter_mut().zip(other) {
            *s += a * o;
        }
    }
    fn scale(&mut self, a: f64) {
        for s in self.iter_mut() {
            *s *= a;
        }
    }
    fn error_norm(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..err.len() {
            let scale = atol + rtol * y0[i].abs().max(y1[i].abs());
            let e = err[i] / scale;
            acc += e * e;
        }
        (acc / err.len().max(1) as f64).sqrt()
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl StateVec for Array1<C64> {
    fn zeros_like(&self) -> Self {
        Array1::zeros(self.len())
    }
    fn assign(&mut self, other: &Self) {
        self.clone_from(other);
    }
    fn axpy(&mut self, a: f64, other: &Self) {
        self.zip_mut_with(other, |s, o| *s += a * o);
    }
    fn scale(&mut self, a: f64) {
        self.mapv_inplace(|v| v * a);
    }
    fn error_norm(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..err.len() {
            let scale = atol + rtol * y0[i].norm().max(y1[i].norm());
            let e = err[i].norm() / scale;
            acc += e * e;
        }
        (acc / err.len().max(1) as f64).sqrt()
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Right-hand side of an ODE system; may carry mutable workspaces and
/// diagnostics counters.
pub trait Ode<S: StateVec> {
    fn rhs(&mut self, t: f64, y: &S, dy: &mut S) -> Result<()>;
}

impl<S: StateVec, F: FnMut(f64, &S, &mut S) -> Result<()>> Ode<S> for F {
    fn rhs(&mut self, t: f64, y: &S, dy: &mut S) -> Result<()> {
        self(t, y, dy)
    }
}

/// Statistics from one integration call.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub rhs_evals: usize,
    pub min_dt: f64,
}

/// Integrate with fixed-step classical RK4 from `t0` to `t1`.
///
/// The final step is shortened to land exactly on `t1`.
pub fn rk4<S: StateVec>(
    sys: &mut dyn Ode<S>,
    y: &mut S,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<StepStats> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("rk4 step must be positive".into()));
    }
    let mut stats = StepStats {
        min_dt: dt,
        ..Default::default()
    };
    let mut k1 = y.zeros_like();
    let mut k2 = y.zeros_like();
    let mut k3 = y.zeros_like();
    let mut k4 = y.zeros_like();
    let mut tmp = y.zeros_like();
    let mut t = t0;
    while t < t1 - 1e-14 * t1.abs().max(1.0) {
        let h = dt.min(t1 - t);
        sys.rhs(t, y, &mut k1)?;
        tmp.assign(y);
        tmp.axpy(0.5 * h, &k1);
        sys.rhs(t + 0.5 * h, &tmp, &mut k2)?;
        tmp.assign(y);
        tmp.axpy(0.5 * h, &k2);
        sys.rhs(t + 0.5 * h, &tmp, &mut k3)?;
        tmp.assign(y);
        tmp.axpy(h, &k3);
        sys.rhs(t + h, &tmp, &mut k4)?;
        y.axpy(h / 6.0, &k1);
        y.axpy(h / 3.0, &k2);
        y.axpy(h / 3.0, &k3);
        y.axpy(h / 6.0, &k4);
        if !y.is_finite() {
            return Err(Error::Integration(format!("non-finite state at t={t}")));
        }
        stats.steps_accepted += 1;
        stats.rhs_evals += 4;
        stats.min_dt = stats.min_dt.min(h);
        t += h;
    }
    Ok(stats)
}

/// Adaptive-step options.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOpts {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; 0.0 picks (t1-t0)/100.
    pub h_init: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveOpts {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 0.0,
            max_steps: 10_000_000,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// 4th-order embedded weights.
const E1: f64 = 5179.0 / 57600.0;
const E3: f64 = 7571.0 / 16695.0;
const E4: f64 = 393.0 / 640.0;
const E5: f64 = -92097.0 / 339200.0;
const E6: f64 = 187.0 / 2100.0;
const E7: f64 = 1.0 / 40.0;

/// Integrate with adaptive Dormand-Prince RK45 from `t0` to `t1`.
pub fn rk45<S: StateVec>(
    sys: &mut dyn Ode<S>,
    y: &mut S,
    t0: f64,
    t1: f64,
    opts: &AdaptiveOpts,
) -> Result<StepStats> {
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(StepStats::default());
    }
    let mut h = if opts.h_init > 0.0 {
        opts.h_init.min(span)
    } else {
        span / 100.0
    };
    let mut stats = StepStats {
        min_dt: h,
        ..Default::default()
    };
    let mut k = vec![y.zeros_like(); 7];
    let mut ytmp = y.zeros_like();
    let mut y5 = y.zeros_like();
    let mut err = y.zeros_like();
    let mut t = t0;
    // FSAL: k[0] holds f(t, y) for the next attempt.
    sys.rhs(t, y, &mut k[0])?;
    stats.rhs_evals += 1;
    let mut have_k0 = true;

    while t < t1 - 1e-14 * t1.abs().max(1.0) {
        if stats.steps_accepted + stats.steps_rejected > opts.max_steps {
            return Err(Error::Integration(format!(
                "step limit exceeded at t={t} (h={h:.3e})"
            )));
        }
        let h_eff = h.min(t1 - t);
        if !have_k0 {
            sys.rhs(t, y, &mut k[0])?;
            stats.rhs_evals += 1;
            have_k0 = true;
        }

        // Trial-point failures (a stage landing outside the solvable
        // region) reject the step instead of aborting; only a failure that
        // persists down to the step-size floor propagates.
        let attempt: Result<()> = 'att: {
            macro_rules! stage {
                ($ki:expr, $c:expr, $($ai:expr => $kj:expr),+) => {{
                    ytmp.assign(y);
                    $(ytmp.axpy(h_eff * $ai, &k[$kj]);)+
                    let (pre, post) = k.split_at_mut($ki);
                    let r = sys.rhs(t + $c * h_eff, &ytmp, &mut post[0]);
                    let _ = pre;
                    stats.rhs_evals += 1;
                    if let Err(e) = r {
                        break 'att Err(e);
                    }
                }};
            }
            stage!(1, 0.2, A21 => 0);
            stage!(2, 0.3, A31 => 0, A32 => 1);
            stage!(3, 0.8, A41 => 0, A42 => 1, A43 => 2);
            stage!(4, 8.0/9.0, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
            stage!(5, 1.0, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);

            y5.assign(y);
            y5.axpy(h_eff * B1, &k[0]);
            y5.axpy(h_eff * B3, &k[2]);
            y5.axpy(h_eff * B4, &k[3]);
            y5.axpy(h_eff * B5, &k[4]);
            y5.axpy(h_eff * B6, &k[5]);
            // FSAL stage evaluated at the candidate solution.
            let (pre, post) = k.split_at_mut(6);
            let r = sys.rhs(t + h_eff, &y5, &mut post[0]);
            let _ = pre;
            stats.rhs_evals += 1;
            if let Err(e) = r {
                break 'att Err(e);
            }
            Ok(())
        };
        if let Err(e) = attempt {
            stats.steps_rejected += 1;
            have_k0 = true; // k[0] still valid at unchanged t
            h = 0.25 * h_eff;
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(e);
            }
            continue;
        }
        err.assign(&y5);
        err.scale(0.0);
        err.axpy(h_eff * (B1 - E1), &k[0]);
        err.axpy(h_eff * (B3 - E3), &k[2]);
        err.axpy(h_eff * (B4 - E4), &k[3]);
        err.axpy(h_eff * (B5 - E5), &k[4]);
        err.axpy(h_eff * (B6 - E6), &k[5]);
        err.axpy(h_eff * (-E7), &k[6]);

        let enorm = S::error_norm(&err, y, &y5, opts.atol, opts.rtol);
        if enorm.is_finite() && enorm <= 1.0 && y5.is_finite() {
            t += h_eff;
            y.assign(&y5);
            k.swap(0, 6); // FSAL reuse
            stats.steps_accepted += 1;
            stats.min_dt = stats.min_dt.min(h_eff);
            let factor = if enorm > 0.0 {
                (0.9 * enorm.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            h = (h_eff * factor).min(span);
        } else {
            stats.steps_rejected += 1;
            have_k0 = true; // k[0] still valid at unchanged t
            let factor = if enorm.is_finite() && enorm > 0.0 {
                (0.9 * enorm.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h = h_eff * factor;
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integration(format!(
                    "step size underflow at t={t} (error norm {enorm:.3e})"
                )));
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl Ode<Vec<f64>> for Decay {
        fn rhs(&mut self, _t: f64, y: &Vec<f64>, dy: &mut Vec<f64>) -> Result<()> {
            dy[0] = -y[0];
            dy[1] = y[0];
            Ok(())
        }
    }

    #[test]
    fn rk4_exponential_decay() {
        let mut y = vec![1.0, 0.0];
        rk4(&mut Decay, &mut y, 0.0, 2.0, 1e-3).unwrap();
        assert!((y[0] - (-2.0_f64).exp()).abs() < 1e-10);
        assert!((y[1] - (1.0 - (-2.0_f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn rk45_oscillator() {
        // y'' = -y integrated as first-order system over many periods.
        let mut sys = |_t: f64, y: &Vec<f64>, dy: &mut Vec<f64>| -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        };
        let mut y = vec![1.0, 0.0];
        let t1 = 20.0 * std::f64::consts::PI;
        let stats = rk45(&mut sys, &mut y, 0.0, t1, &AdaptiveOpts::default()).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-7, "y0={} stats={stats:?}", y[0]);
        assert!(y[1].abs() < 1e-7);
        assert!(stats.steps_rejected < stats.steps_accepted);
    }

    #[test]
    fn rk45_complex_rotation() {
        let mut sys = |_t: f64, y: &Array1<C64>, dy: &mut Array1<C64>| -> Result<()> {
            dy.assign(y);
            dy.mapv_inplace(|v| -C64::i() * v);
            Ok(())
        };
        let mut y = ndarray::array![C64::new(1.0, 0.0)];
        rk45(&mut sys, &mut y, 0.0, 1.0, &AdaptiveOpts::default()).unwrap();
        let expect = C64::new(1.0_f64.cos(), -(1.0_f64.sin()));
        assert!((y[0] - expect).norm() < 1e-9);
    }

    #[test]
    fn rk4_lands_exactly_on_endpoint() {
        let mut calls = 0usize;
        let mut sys = |t: f64, _y: &Vec<f64>, dy: &mut Vec<f64>| -> Result<()> {
            assert!(t <= 0.95 + 1e-12);
            calls += 1;
            dy[0] = 1.0;
            Ok(())
        };
        let mut y = vec![0.0];
        rk4(&mut sys, &mut y, 0.0, 0.95, 0.1).unwrap();
        assert!((y[0] - 0.95).abs() < 1e-14);
        assert!(calls > 0);
    }
}
