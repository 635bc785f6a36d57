//! Regression metrics, the AAMI check and a paired t-test.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean-error limit in mmHg.
pub const AAMI_MAX_ME: f64 = 5.0;
/// Error standard-deviation limit in mmHg.
pub const AAMI_MAX_SDE: f64 = 8.0;

fn check_pair(pred: &[f64], truth: &[f64], min: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape("metrics", format!("{} predictions vs {} labels", pred.len(), truth.len())));
    }
    if pred.len() < min {
        return Err(Error::Usage(format!("need at least {min} samples, got {}", pred.len())));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth, 2)?;
    let (mp, mt) = (mean(pred), mean(truth));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (a, b) = (p - mp, t - mt);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Mean and population standard deviation of `pred - truth`.
pub fn me_sde(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    check_pair(pred, truth, 1)?;
    let err: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let me = mean(&err);
    let var = err.iter().map(|e| (e - me) * (e - me)).sum::<f64>() / err.len() as f64;
    Ok((me, var.sqrt()))
}

pub fn aami_check(me: f64, sde: f64) -> bool {
    me.abs() < AAMI_MAX_ME && sde < AAMI_MAX_SDE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub pearson_r: Option<f64>,
    pub me: f64,
    pub sde: f64,
    pub aami_pass: bool,
    pub n_test: usize,
}

impl MetricsReport {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let rmse = rmse(pred, truth)?;
        let pearson_r = if pred.len() >= 2 { pearson(pred, truth)? } else { None };
        let (me, sde) = me_sde(pred, truth)?;
        let gap = (rmse * rmse - (me * me + sde * sde)).abs();
        assert!(
            gap <= 1e-9 * (rmse * rmse).max(1.0),
            "rmse identity violated: rmse²={} me²+sde²={}",
            rmse * rmse,
            me * me + sde * sde
        );
        Ok(Self { rmse, pearson_r, me, sde, aami_pass: aami_check(me, sde), n_test: pred.len() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
    pub significant_at_05: bool,
}

/// Two-sided paired t-test on `a[i] - b[i]`.
///
/// Identical inputs give `statistic = 0, p = 1`. A nonzero constant
/// difference has an unbounded statistic, reported as `±f64::MAX` with
/// `p = 0`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    check_pair(a, b, 3)?;
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let var = d.iter().map(|v| (v - md) * (v - md)).sum::<f64>() / (n - 1) as f64;
    let dof = n - 1;
    let (statistic, p_value) = if var == 0.0 {
        if md == 0.0 {
            warn!("paired t-test: all differences are zero");
            (0.0, 1.0)
        } else {
            warn!("paired t-test: constant nonzero difference {md}");
            (md.signum() * f64::MAX, 0.0)
        }
    } else {
        let t = md / (var / n as f64).sqrt();
        (t, student_t_two_sided(t, dof as f64))
    };
    Ok(TTestResult { statistic, p_value, dof, significant_at_05: p_value < 0.05 })
}

/// `P(|T| > |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    reg_inc_beta(0.5 * dof, 0.5, x).clamp(0.0, 1.0)
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9), x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
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
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(80.0..160.0)).collect();
        let p = t.iter().map(|v| v + rng.gen_range(-10.0..12.0)).collect();
        (p, t)
    }

    #[test]
    fn perfect_prediction() {
        let t = [110.0, 120.0, 125.0, 131.0];
        let r = MetricsReport::compute(&t, &t).unwrap();
        assert_eq!((r.rmse, r.me, r.sde), (0.0, 0.0, 0.0));
        assert_eq!(r.pearson_r, Some(1.0));
        assert!(r.aami_pass);
    }

    #[test]
    fn mean_error_edge_fails_aami() {
        let t = [110.0, 120.0, 125.0, 131.0];
        let p: Vec<f64> = t.iter().map(|v| v + 5.1).collect();
        let r = MetricsReport::compute(&p, &t).unwrap();
        assert!((r.me - 5.1).abs() < 1e-12);
        assert!(!r.aami_pass);
        assert!(aami_check(4.99, 7.99));
        assert!(!aami_check(-5.0, 1.0));
        assert!(!aami_check(0.0, 8.0));
    }

    #[test]
    fn anti_correlation() {
        let t = [1.0, 4.0, 2.0, 8.0];
        let p: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((pearson(&p, &t).unwrap().unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_pearson_is_none() {
        assert_eq!(pearson(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap(), None);
        let r = MetricsReport::compute(&[3.0, 3.0], &[1.0, 2.0]).unwrap();
        assert!(serde_json::to_string(&r).unwrap().contains("\"pearson_r\":null"));
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn naive_loop_oracle() {
        let (p, t) = random(1, 100);
        let n = p.len() as f64;
        let mut se = 0.0;
        let mut sum_e = 0.0;
        let (mut sp, mut st) = (0.0, 0.0);
        for i in 0..p.len() {
            se += (p[i] - t[i]).powi(2);
            sum_e += p[i] - t[i];
            sp += p[i];
            st += t[i];
        }
        let me = sum_e / n;
        let mut var_e = 0.0;
        for i in 0..p.len() {
            var_e += (p[i] - t[i] - me).powi(2);
        }
        let (mp, mt) = (sp / n, st / n);
        let (mut num, mut dp, mut dt) = (0.0, 0.0, 0.0);
        for i in 0..p.len() {
            num += (p[i] - mp) * (t[i] - mt);
            dp += (p[i] - mp).powi(2);
            dt += (t[i] - mt).powi(2);
        }
        let r = MetricsReport::compute(&p, &t).unwrap();
        assert!((r.rmse - (se / n).sqrt()).abs() < 1e-10);
        assert!((r.me - me).abs() < 1e-10);
        assert!((r.sde - (var_e / n).sqrt()).abs() < 1e-10);
        assert!((r.pearson_r.unwrap() - num / (dp * dt).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn identical_errors_give_p_one() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let r = paired_ttest(&a, &a).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert!(!r.significant_at_05);
    }

    #[test]
    fn constant_difference_gives_p_zero() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b: Vec<f64> = a.iter().map(|v| v - 0.5).collect();
        let r = paired_ttest(&a, &b).unwrap();
        assert_eq!(r.statistic, f64::MAX);
        assert_eq!(r.p_value, 0.0);
        assert!(serde_json::to_string(&r).is_ok());
    }

    #[test]
    fn ttest_needs_three() {
        assert!(paired_ttest(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(10.5) - 1133278.3889487855f64.ln()).abs() < 1e-12);
    }

    fn t_density(x: f64, nu: f64) -> f64 {
        let c = (ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0)).exp() / (nu * std::f64::consts::PI).sqrt();
        c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0)
    }

    /// `2 ∫_{|t|}^{∞}` of the density by composite Simpson on `s = 1/x`.
    fn integrated_two_sided(t: f64, nu: f64) -> f64 {
        // central part ∫_0^{|t|} then subtract from one half
        let n = 20_000;
        let h = t.abs() / n as f64;
        let mut acc = t_density(0.0, nu) + t_density(t.abs(), nu);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * t_density(i as f64 * h, nu);
        }
        2.0 * (0.5 - acc * h / 3.0)
    }

    #[test]
    fn t_cdf_matches_numerical_integration() {
        for &(t, nu) in &[(0.3, 9.0), (1.0, 9.0), (2.262, 9.0), (3.5, 4.0), (-1.7, 20.0), (0.05, 2.0)] {
            let p = student_t_two_sided(t, nu);
            let q = integrated_two_sided(t, nu);
            assert!((p - q).abs() < 1e-9, "t={t} nu={nu}: {p} vs {q}");
        }
    }

    #[test]
    fn n10_fixture_matches_table() {
        // t(0.975, 9) = 2.262 is the textbook critical value
        assert!((student_t_two_sided(2.262, 9.0) - 0.05).abs() < 1e-3);
        let a = [2.1, 3.4, 1.9, 5.0, 4.2, 3.3, 2.8, 4.7, 3.9, 2.5];
        let b = [1.8, 2.9, 2.0, 4.1, 3.6, 3.5, 2.2, 4.0, 3.1, 2.4];
        let r = paired_ttest(&a, &b).unwrap();
        assert_eq!(r.dof, 9);
        let q = integrated_two_sided(r.statistic, 9.0);
        assert!((r.p_value - q).abs() < 1e-3);
        assert!(r.significant_at_05);
    }

    #[test]
    fn inc_beta_symmetry_and_closed_form() {
        for &(a, b, x) in &[(2.0, 3.0, 0.4), (0.5, 0.5, 0.2), (4.5, 0.5, 0.9)] {
            let lhs = reg_inc_beta(a, b, x);
            let rhs = 1.0 - reg_inc_beta(b, a, 1.0 - x);
            assert!((lhs - rhs).abs() < 1e-13);
        }
        // I_x(1, b) = 1 - (1 - x)^b
        assert!((reg_inc_beta(1.0, 3.0, 0.3) - (1.0 - 0.7f64.powi(3))).abs() < 1e-14);
        // I_x(1/2, 1/2) = (2/π) asin(√x)
        let x: f64 = 0.35;
        assert!((reg_inc_beta(0.5, 0.5, x) - 2.0 / std::f64::consts::PI * x.sqrt().asin()).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn rmse_identity(seed in any::<u64>(), n in 2usize..200) {
            let (p, t) = random(seed, n);
            let (me, sde) = me_sde(&p, &t).unwrap();
            let r = rmse(&p, &t).unwrap();
            prop_assert!((r * r - (me * me + sde * sde)).abs() < 1e-10 * (r * r).max(1.0));
        }

        #[test]
        fn pearson_affine_invariant(seed in any::<u64>(), a in 0.01f64..100.0, b in -500.0f64..500.0) {
            let (p, t) = random(seed, 50);
            let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            let r0 = pearson(&p, &t).unwrap().unwrap();
            let r1 = pearson(&q, &t).unwrap().unwrap();
            prop_assert!((r0 - r1).abs() < 1e-10);
        }

        #[test]
        fn p_value_in_unit_interval(seed in any::<u64>(), n in 3usize..60) {
            let (p, t) = random(seed, n);
            let r = paired_ttest(&p, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
