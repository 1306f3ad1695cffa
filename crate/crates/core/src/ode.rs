//! Dormand-Prince 5(4) integrator with PI step control and dense output.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrator settings.
#[derive(Clone, Copy, Debug)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step magnitude; chosen automatically when `None`.
    pub h_init: Option<f64>,
    /// Largest step magnitude.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options { rtol: 1e-10, atol: 1e-12, h_init: None, h_max: f64::INFINITY, max_steps: 200_000 }
    }
}

/// One accepted step with its continuous extension.
#[derive(Clone, Debug)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    /// Derivative at `t1`.
    pub f1: [f64; N],
    rcont: [[f64; N]; 4],
}

impl<const N: usize> DenseStep<N> {
    /// Evaluates the fourth-order continuous extension at `t` in the step.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        let th = (t - self.t0) / h;
        let th1 = 1.0 - th;
        let mut out = [0.0; N];
        for i in 0..N {
            let [r2, r3, r4, r5] = [self.rcont[0][i], self.rcont[1][i], self.rcont[2][i], self.rcont[3][i]];
            out[i] = self.y0[i] + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
        }
        out
    }
}

/// What the step observer asks the integrator to do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Reason the integration ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Finish {
    ReachedEnd,
    Stopped,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut s = 0.0;
        for (c, k) in terms {
            s += c * k[i];
        }
        out[i] += h * s;
    }
    out
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end` (either direction).
///
/// `f` returns `None` where the right-hand side cannot be evaluated; the step
/// is then retried with half the size. `observe` sees every accepted step and
/// may stop the integration.
pub fn integrate<const N: usize, F, O>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &Dopri5Options,
    mut observe: O,
) -> Result<Finish>
where
    F: FnMut(f64, &[f64; N]) -> Option<[f64; N]>,
    O: FnMut(&DenseStep<N>) -> Control,
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let span = (t_end - t0).abs();
    if span == 0.0 {
        return Ok(Finish::ReachedEnd);
    }
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y).ok_or_else(|| Error::Integration(format!("right-hand side undefined at start t = {t0}")))?;
    let sk = |y: &[f64; N], i: usize| opts.atol + opts.rtol * y[i].abs();
    let mut h = match opts.h_init {
        Some(h) => h.abs(),
        None => {
            let d0 = (0..N).map(|i| (y[i] / sk(&y, i)).powi(2)).sum::<f64>() / N as f64;
            let d1 = (0..N).map(|i| (k1[i] / sk(&y, i)).powi(2)).sum::<f64>() / N as f64;
            let h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * (d0 / d1).sqrt() };
            h0.min(span)
        }
    }
    .min(opts.h_max)
    .min(span);
    let mut facold: f64 = 1e-4;
    let mut reject = false;
    let min_h = 1e-14 * span.max(t0.abs()).max(1.0);
    let mut steps = 0usize;

    loop {
        if steps >= opts.max_steps {
            return Err(Error::Integration(format!(
                "maximum of {} steps exceeded at t = {t}, state = {y:?}",
                opts.max_steps
            )));
        }
        steps += 1;
        let remaining = (t_end - t).abs();
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = dir * h;
        let stage = (|| {
            let k2 = f(t + C2 * hs, &axpy(&y, hs, &[(A21, &k1)]))?;
            let k3 = f(t + C3 * hs, &axpy(&y, hs, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = f(t + C4 * hs, &axpy(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
            let k5 = f(t + C5 * hs, &axpy(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
            let ys = axpy(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
            let k6 = f(t + hs, &ys)?;
            let y1 = axpy(&y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let t1 = if last { t_end } else { t + hs };
            let k7 = f(t1, &y1)?;
            Some((k2, k3, k4, k5, k6, k7, y1))
        })();
        let Some((_k2, k3, k4, k5, k6, k7, y1)) = stage else {
            h *= 0.5;
            reject = true;
            if h < min_h {
                return Err(Error::Integration(format!("step size underflow at t = {t}, state = {y:?}")));
            }
            continue;
        };
        let mut err = 0.0;
        for i in 0..N {
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let s = opts.atol + opts.rtol * y[i].abs().max(y1[i].abs());
            err += (e / s).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            h *= 0.5;
            reject = true;
            if h < min_h {
                return Err(Error::Integration(format!("non-finite error estimate at t = {t}")));
            }
            continue;
        }
        let fac11 = err.powf(0.17);
        if err <= 1.0 {
            let mut fac = fac11 / facold.powf(0.04);
            fac = (fac / 0.9).clamp(0.1, 5.0);
            let mut hnew = h / fac;
            if reject {
                hnew = hnew.min(h);
            }
            facold = err.max(1e-4);
            let t1 = if last { t_end } else { t + hs };
            let mut rcont = [[0.0; N]; 4];
            for i in 0..N {
                let ydiff = y1[i] - y[i];
                let bspl = hs * k1[i] - ydiff;
                rcont[0][i] = ydiff;
                rcont[1][i] = bspl;
                rcont[2][i] = ydiff - hs * k7[i] - bspl;
                rcont[3][i] = hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            let step = DenseStep { t0: t, t1, y0: y, y1, f1: k7, rcont };
            t = t1;
            y = y1;
            k1 = k7;
            reject = false;
            if observe(&step) == Control::Stop {
                return Ok(Finish::Stopped);
            }
            if last {
                return Ok(Finish::ReachedEnd);
            }
            h = hnew.min(opts.h_max);
        } else {
            h /= (fac11 / 0.9).min(5.0);
            reject = true;
            if h < min_h {
                return Err(Error::Integration(format!("step size underflow at t = {t}, state = {y:?}")));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_backward() {
        let opts = Dopri5Options::default();
        let mut last = [0.0];
        integrate(|_, y: &[f64; 1]| Some([-y[0]]), 2.0, [1.0], 0.0, &opts, |s| {
            last = s.y1;
            Control::Continue
        })
        .unwrap();
        assert!((last[0] - 2f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn dense_output_is_accurate() {
        let opts = Dopri5Options { rtol: 1e-9, atol: 1e-12, ..Default::default() };
        let mut worst: f64 = 0.0;
        integrate(
            |_, y: &[f64; 2]| Some([y[1], -y[0]]),
            0.0,
            [0.0, 1.0],
            10.0,
            &opts,
            |s| {
                for k in 1..10 {
                    let t = s.t0 + (s.t1 - s.t0) * k as f64 / 10.0;
                    let v = s.eval(t);
                    worst = worst.max((v[0] - t.sin()).abs()).max((v[1] - t.cos()).abs());
                }
                Control::Continue
            },
        )
        .unwrap();
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn undefined_rhs_shrinks_step() {
        let opts = Dopri5Options::default();
        let mut end = 0.0;
        let res = integrate(
            |t, y: &[f64; 1]| if t > 1.0 { None } else { Some([y[0]]) },
            0.0,
            [1.0],
            2.0,
            &opts,
            |s| {
                end = s.t1;
                Control::Continue
            },
        );
        assert!(res.is_err());
        assert!(end <= 1.0 && end > 0.99);
    }

    #[test]
    fn max_steps_reported() {
        let opts = Dopri5Options { max_steps: 3, h_max: 0.01, ..Default::default() };
        let r = integrate(|_, y: &[f64; 1]| Some([y[0]]), 0.0, [1.0], 1.0, &opts, |_| Control::Continue);
        assert!(matches!(r, Err(Error::Integration(_))));
    }
}
