use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sample, one-tailed t-test of `mean > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`).
    pub stddev: f64,
    pub t: f64,
    pub df: usize,
    pub p_one_tailed: f64,
}

pub fn t_test_one_tailed(samples: &[f64]) -> Result<TTestResult> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "t-test needs at least 2 samples, got {n}"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("t-test samples must be finite".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let stddev = var.sqrt();
    if !(stddev > 0.0) {
        return Err(Error::Degenerate(
            "all samples are equal; the t statistic is undefined".into(),
        ));
    }
    let t = mean * (n as f64).sqrt() / stddev;
    let df = n - 1;
    Ok(TTestResult {
        n,
        mean,
        stddev,
        t,
        df,
        p_one_tailed: student_t_sf(t, df as f64),
    })
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() || !(df > 0.0) {
        return f64::NAN;
    }
    if df == 1.0 {
        return 0.5 - t.atan() / PI;
    }
    if df == 2.0 {
        return 0.5 * (1.0 - t / (2.0 + t * t).sqrt());
    }
    let tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularised incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, x)) / a
    } else {
        1.0 - (ln_front.exp() * beta_cf(b, a, 1.0 - x)) / b
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Equal-width histogram with Freedman–Diaconis bin width
/// `2 IQR / n^(1/3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn freedman_diaconis(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("histogram needs finite samples".into()));
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let (lo, hi) = (s[0], s[s.len() - 1]);
        let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
        let width = 2.0 * iqr / (s.len() as f64).cbrt();
        let bins = if width > 0.0 && hi > lo {
            (((hi - lo) / width).ceil() as usize).clamp(1, 10_000)
        } else {
            1
        };
        let step = if hi > lo {
            (hi - lo) / bins as f64
        } else {
            1.0
        };
        let edges: Vec<f64> = (0..=bins).map(|i| lo + step * i as f64).collect();
        let mut counts = vec![0; bins];
        for x in &s {
            let i = (((x - lo) / step) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Self { edges, counts })
    }

    /// `bin_lo,bin_hi,count`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "{:e},{:e},{c}\n",
                self.edges[i],
                self.edges[i + 1]
            ));
        }
        out
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < s.len() {
        s[i] * (1.0 - f) + s[i + 1] * f
    } else {
        s[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_two_three() {
        let r = t_test_one_tailed(&[1.0, 2.0, 3.0]).unwrap();
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 2);
        let oracle = 0.5 * (1.0 - r.t / (2.0 + r.t * r.t).sqrt());
        assert!((r.p_one_tailed - oracle).abs() < 1e-15);
        assert!((r.p_one_tailed - 0.0371).abs() < 1e-4);
    }

    #[test]
    fn degenerate_and_symmetric() {
        assert!(matches!(
            t_test_one_tailed(&[2.0, 2.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            t_test_one_tailed(&[2.0]),
            Err(Error::Degenerate(_))
        ));
        let r = t_test_one_tailed(&[-1.0, 1.0, -2.0, 2.0, -0.5, 0.5]).unwrap();
        assert!((r.p_one_tailed - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gamma_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_symmetry() {
        for &(a, b, x) in &[(2.0, 3.0, 0.3), (0.5, 4.5, 0.9), (10.0, 0.5, 0.7)] {
            let l = reg_inc_beta(a, b, x);
            let r = 1.0 - reg_inc_beta(b, a, 1.0 - x);
            assert!((l - r).abs() < 1e-13);
        }
        // I_x(1, 1) = x
        assert!((reg_inc_beta(1.0, 1.0, 0.37) - 0.37).abs() < 1e-14);
    }

    #[test]
    fn cauchy_tail() {
        assert!((student_t_sf(1.0, 1.0) - 0.25).abs() < 1e-15);
        assert!((student_t_sf(0.0, 7.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts() {
        let data: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let h = Histogram::freedman_diaconis(&data).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        // IQR 49.5, width 2 * 49.5 / 100^(1/3) ~ 21.3 -> 5 bins over [0, 99]
        assert_eq!(h.counts.len(), 5);
        let h = Histogram::freedman_diaconis(&[3.0; 4]).unwrap();
        assert_eq!(h.counts, vec![4]);
    }
}
