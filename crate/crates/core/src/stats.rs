//! Small numerical helpers shared by the estimators: compensated summation,
//! ordinary least squares, jackknife errors, and the normal distribution.

/// Kahan-compensated accumulator. Aggregation stays deterministic to the
/// reported precision as long as the summation order is fixed.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Kahan sum of a slice in index order.
pub fn kahan_sum(values: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Sample mean with jackknife standard error (requires at least 2 samples).
pub fn jackknife_mean(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 2, "jackknife needs at least 2 samples");
    let total = kahan_sum(values);
    let mean = total / n as f64;
    let mut ss = KahanSum::new();
    for &v in values {
        let leave_out = (total - v) / (n - 1) as f64;
        let d = leave_out - mean;
        ss.add(d * d);
    }
    let var = ss.value() * (n - 1) as f64 / n as f64;
    (mean, var.max(0.0).sqrt())
}

/// Ordinary least squares fit of `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> OlsFit {
    let n = x.len();
    assert!(n >= 2 && n == y.len());
    let nf = n as f64;
    let mx = kahan_sum(x) / nf;
    let my = kahan_sum(y) / nf;
    let mut sxx = KahanSum::new();
    let mut sxy = KahanSum::new();
    let mut syy = KahanSum::new();
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx.add(dx * dx);
        sxy.add(dx * dy);
        syy.add(dy * dy);
    }
    let sxx = sxx.value();
    let sxy = sxy.value();
    let syy = syy.value();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = (syy - slope * sxy).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_se = if n > 2 {
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    OlsFit {
        slope,
        intercept,
        slope_se,
        r_squared,
    }
}

/// Complementary error function, fractional error below 1.2e-7.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail `P(N(0,1) > z)`.
pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF by bisection on `normal_cdf`
/// (deterministic and consistent with the CDF above).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_matches_exact_sum() {
        let values: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let naive: f64 = values.iter().sum();
        assert!((kahan_sum(&values) - naive).abs() < 1e-12);
    }

    #[test]
    fn jackknife_equals_standard_error_of_mean() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (mean, se) = jackknife_mean(&values);
        assert!((mean - 3.5).abs() < 1e-14);
        // sd = sqrt(3.5), se = sd / sqrt(6)
        let expected = (3.5f64 / 6.0).sqrt();
        assert!((se - expected).abs() < 1e-12, "{se} vs {expected}");
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = ols(&x, &y);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!(fit.slope_se < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_reference_values() {
        // erfc is good to ~1.2e-7 fractional error
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.0) - 0.841344746).abs() < 1e-6);
        assert!((normal_upper_tail(3.0) - 1.349898e-3).abs() < 1e-8);
        assert!((normal_upper_tail(3.4808) - 2.5e-4).abs() < 1e-6);
        let z = normal_quantile(1.0 - 2.5e-4);
        assert!((z - 3.4808).abs() < 2e-3, "{z}");
    }
}
