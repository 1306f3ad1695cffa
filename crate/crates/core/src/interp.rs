//! Monotone piecewise-cubic Hermite interpolation.

use crate::error::{Error, Result};

/// Cubic Hermite interpolant with Fritsch-Carlson slope limiting.
#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl MonotoneCubic {
    /// Builds the interpolant. When `slopes` is `None`, nodal slopes are
    /// estimated by weighted harmonic means of adjacent secants.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, slopes: Option<Vec<f64>>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n || slopes.as_ref().is_some_and(|d| d.len() != n) {
            return Err(Error::InvalidParameter("interpolation needs at least two matching nodes".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("interpolation abscissae must be strictly increasing".into()));
        }
        let sec: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])).collect();
        let mut ds = match slopes {
            Some(d) => d,
            None => estimate_slopes(&xs, &sec),
        };
        limit(&sec, &mut ds);
        Ok(MonotoneCubic { xs, ys, ds })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Index `k` of the interval `[x_k, x_{k+1}]` holding `x` (clamped).
    pub fn locate(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Value and derivative on interval `k`.
    pub fn eval_in(&self, k: usize, x: f64) -> (f64, f64) {
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (y0, y1, d0, d1) = (self.ys[k], self.ys[k + 1], self.ds[k] * h, self.ds[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let v = h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1;
        let dv = ((6.0 * t2 - 6.0 * t) * (y0 - y1) + (3.0 * t2 - 4.0 * t + 1.0) * d0 + (3.0 * t2 - 2.0 * t) * d1) / h;
        (v, dv)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_in(self.locate(x), x).0
    }

    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        self.eval_in(self.locate(x), x)
    }
}

fn estimate_slopes(xs: &[f64], sec: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut d = vec![0.0; n];
    d[0] = sec[0];
    d[n - 1] = sec[n - 2];
    for k in 1..n - 1 {
        let (s0, s1) = (sec[k - 1], sec[k]);
        if s0 * s1 > 0.0 {
            let (h0, h1) = (xs[k] - xs[k - 1], xs[k + 1] - xs[k]);
            let w1 = 2.0 * h1 + h0;
            let w2 = h1 + 2.0 * h0;
            d[k] = (w1 + w2) / (w1 / s0 + w2 / s1);
        }
    }
    d
}

fn limit(sec: &[f64], d: &mut [f64]) {
    for k in 0..sec.len() {
        let s = sec[k];
        if s == 0.0 {
            d[k] = 0.0;
            d[k + 1] = 0.0;
            continue;
        }
        let mut a = d[k] / s;
        let mut b = d[k + 1] / s;
        if a < 0.0 {
            d[k] = 0.0;
            a = 0.0;
        }
        if b < 0.0 {
            d[k + 1] = 0.0;
            b = 0.0;
        }
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            d[k] = tau * a * s;
            d[k + 1] = tau * b * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubic_with_exact_slopes() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let f = |x: f64| x * x * x + x + 1.0;
        let df = |x: f64| 3.0 * x * x + 1.0;
        let it = MonotoneCubic::new(xs.clone(), xs.iter().map(|&x| f(x)).collect(), Some(xs.iter().map(|&x| df(x)).collect()))
            .unwrap();
        for i in 0..100 {
            let x = i as f64 / 100.0;
            let (v, dv) = it.eval_with_derivative(x);
            assert!((v - f(x)).abs() < 1e-13);
            assert!((dv - df(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn preserves_monotonicity_of_step_data() {
        let xs = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = vec![0.0, 0.0, 1.0, 1.0, 1.0];
        let it = MonotoneCubic::new(xs, ys, None).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=400 {
            let v = it.eval(i as f64 / 100.0);
            assert!(v >= prev - 1e-15);
            assert!((-1e-15..=1.0 + 1e-15).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn rejects_unsorted() {
        assert!(MonotoneCubic::new(vec![0.0, 0.0], vec![1.0, 2.0], None).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn monotone_data_gives_monotone_interpolant(
                steps in prop::collection::vec((0.01..2.0f64, 0.0..3.0f64), 2..20),
            ) {
                let mut xs = vec![0.0];
                let mut ys = vec![0.0];
                for (dx, dy) in &steps {
                    xs.push(xs.last().unwrap() + dx);
                    ys.push(ys.last().unwrap() + dy);
                }
                let it = MonotoneCubic::new(xs.clone(), ys.clone(), None).unwrap();
                for (x, y) in xs.iter().zip(&ys) {
                    prop_assert!((it.eval(*x) - y).abs() <= 1e-12 * (1.0 + y.abs()));
                }
                let hi = *xs.last().unwrap();
                let mut prev = it.eval(0.0);
                for i in 1..=500 {
                    let v = it.eval(hi * i as f64 / 500.0);
                    prop_assert!(v >= prev - 1e-12, "decrease {prev} -> {v}");
                    prev = v;
                }
            }
        }
    }
}
