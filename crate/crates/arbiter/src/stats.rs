//! Two-sample and paired t-tests with p-values from the Student-t
//! distribution, evaluated through the regularized incomplete beta function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TTestKind {
    WelchTwoSample,
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub mean_diff: f64,
    pub ci95: (f64, f64),
    pub kind: TTestKind,
}

impl TTestResult {
    pub fn significant_at(&self, alpha: f64) -> bool {
        self.p_two_sided < alpha
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("samples must have equal length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(&'static str),
    #[error("degrees of freedom must be positive, got {0}")]
    InvalidDof(f64),
    #[error("sample contains a non-finite value")]
    NonFinite,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn check_sample(xs: &[f64], need: usize) -> Result<(), StatsError> {
    if xs.len() < need {
        return Err(StatsError::TooFewSamples { need, got: xs.len() });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Welch's unequal-variance two-sample t-test, two-sided, with a 95% CI on
/// the difference of means.
pub fn welch_two_sample(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    check_sample(a, 2)?;
    check_sample(b, 2)?;

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a), variance(b));
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Err(StatsError::DegenerateVariance(
            "both samples have zero variance",
        ));
    }
    let se = se2.sqrt();
    let mean_diff = mean(a) - mean(b);
    let t = mean_diff / se;

    // Welch-Satterthwaite approximation.
    let df = se2.powi(2)
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));

    let p_two_sided = 2.0 * student_t_sf(t.abs(), df)?;
    let half = student_t_quantile(0.975, df)? * se;
    Ok(TTestResult {
        t,
        df,
        p_two_sided,
        mean_diff,
        ci95: (mean_diff - half, mean_diff + half),
        kind: TTestKind::WelchTwoSample,
    })
}

/// Paired t-test on the differences `after - before`.
///
/// Identical samples (all differences exactly zero) report no effect
/// (t = 0, p = 1) rather than a degenerate-variance error; a constant
/// nonzero difference is still degenerate.
pub fn paired_t(before: &[f64], after: &[f64]) -> Result<TTestResult, StatsError> {
    if before.len() != after.len() {
        return Err(StatsError::LengthMismatch(before.len(), after.len()));
    }
    check_sample(before, 2)?;
    check_sample(after, 2)?;

    let d: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let mean_diff = mean(&d);
    let sd = variance(&d).sqrt();
    let df = n - 1.0;

    if sd == 0.0 {
        if mean_diff == 0.0 {
            return Ok(TTestResult {
                t: 0.0,
                df,
                p_two_sided: 1.0,
                mean_diff: 0.0,
                ci95: (0.0, 0.0),
                kind: TTestKind::Paired,
            });
        }
        return Err(StatsError::DegenerateVariance(
            "differences are constant and nonzero",
        ));
    }

    let se = sd / n.sqrt();
    let t = mean_diff / se;
    let p_two_sided = 2.0 * student_t_sf(t.abs(), df)?;
    let half = student_t_quantile(0.975, df)? * se;
    Ok(TTestResult {
        t,
        df,
        p_two_sided,
        mean_diff,
        ci95: (mean_diff - half, mean_diff + half),
        kind: TTestKind::Paired,
    })
}

/// One-sided survival function P(T > t) of the Student-t distribution.
pub fn student_t_sf(t: f64, df: f64) -> Result<f64, StatsError> {
    if df.is_nan() || df <= 0.0 {
        return Err(StatsError::InvalidDof(df));
    }
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_incomplete_beta(x, df / 2.0, 0.5);
    Ok(if t >= 0.0 { tail } else { 1.0 - tail })
}

/// Upper quantile of the Student-t distribution: the value q with
/// CDF(q) = p, for p in (0.5, 1). Solved by bisection on the monotone
/// survival function, which is plenty for confidence-interval widths.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64, StatsError> {
    if df.is_nan() || df <= 0.0 {
        return Err(StatsError::InvalidDof(df));
    }
    assert!(p > 0.5 && p < 1.0, "quantile only implemented for p in (0.5, 1)");
    let target = 1.0 - p;
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while student_t_sf(hi, df)? > target {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_sf(mid, df)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Regularized incomplete beta function I_x(a, b) by continued fraction
/// (Lentz), with the standard symmetry switch for convergence.
fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };

    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - (a + b) * x / (a + 1.0));
    let mut f = d;

    for m in 1..=MAX_ITER {
        let m = m as f64;
        let even = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 / clamp(1.0 + even * d);
        c = clamp(1.0 + even / c);
        f *= c * d;

        let odd = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 / clamp(1.0 + odd * d);
        c = clamp(1.0 + odd / c);
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    f
}

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
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
        let s = std::f64::consts::PI / (std::f64::consts::PI * x).sin();
        return s.ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS[1..].iter().enumerate() {
        acc += c / (x + 1.0 + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_samples_give_t_zero_p_one() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = welch_two_sample(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_two_sided - 1.0).abs() < 1e-12);
    }

    #[test]
    fn welch_anchor_case() {
        let a = [0.8, 0.7, 0.9];
        let b = [0.6, 0.5, 0.7];
        let r = welch_two_sample(&a, &b).unwrap();
        assert!((r.t - 2.4495).abs() < 1e-3, "t = {}", r.t);
        assert!((r.df - 4.0).abs() < 1e-9, "df = {}", r.df);
        assert!((r.p_two_sided - 0.0705).abs() < 1e-3, "p = {}", r.p_two_sided);
    }

    #[test]
    fn welch_rejects_zero_variance_in_both() {
        let a = [1.0, 1.0, 1.0];
        assert_eq!(
            welch_two_sample(&a, &a),
            Err(StatsError::DegenerateVariance("both samples have zero variance"))
        );
    }

    #[test]
    fn welch_tolerates_one_constant_sample() {
        let a = [1.0, 1.0, 1.0];
        let b = [1.0, 2.0, 3.0];
        let r = welch_two_sample(&a, &b).unwrap();
        assert!((r.df - 2.0).abs() < 1e-9);
    }

    #[test]
    fn paired_equal_inputs_report_no_effect() {
        let xs = [0.5, 0.6, 0.7];
        let r = paired_t(&xs, &xs).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn paired_constant_nonzero_differences_are_degenerate() {
        // Exactly representable so the differences are exactly constant.
        let before = [1.0, 2.0, 3.0];
        let after = [3.0, 4.0, 5.0];
        assert!(matches!(
            paired_t(&before, &after),
            Err(StatsError::DegenerateVariance(_))
        ));
    }

    #[test]
    fn paired_anchor_case() {
        let before = [0.70, 0.75, 0.80, 0.72];
        let after = [0.66, 0.70, 0.74, 0.69];
        let r = paired_t(&before, &after).unwrap();
        assert!((r.t - -6.971_370_023).abs() < 1e-6, "t = {}", r.t);
        assert!((r.p_two_sided - 0.006_056_848_796).abs() < 1e-6);
        assert!((r.ci95.0 - -0.065_542_602_57).abs() < 1e-6);
        assert!((r.ci95.1 - -0.024_457_397_43).abs() < 1e-6);
    }

    #[test]
    fn paired_length_mismatch() {
        assert_eq!(
            paired_t(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch(2, 1))
        );
    }

    #[test]
    fn sf_known_values() {
        assert!((student_t_sf(0.0, 7.0).unwrap() - 0.5).abs() < 1e-14);
        // Cauchy closed form: 1/2 - atan(1)/pi = 1/4.
        assert!((student_t_sf(1.0, 1.0).unwrap() - 0.25).abs() < 1e-12);
        assert!((student_t_sf(2.0, 10.0).unwrap() - 0.03669).abs() < 1e-5);
    }

    #[test]
    fn sf_rejects_bad_dof() {
        assert_eq!(student_t_sf(1.0, 0.0), Err(StatsError::InvalidDof(0.0)));
        assert_eq!(student_t_sf(1.0, -2.0), Err(StatsError::InvalidDof(-2.0)));
    }

    #[test]
    fn quantile_inverts_sf() {
        for df in [1.0, 3.0, 10.0, 120.0] {
            let q = student_t_quantile(0.975, df).unwrap();
            let back = 1.0 - student_t_sf(q, df).unwrap();
            assert!((back - 0.975).abs() < 1e-10, "df {df}: {back}");
        }
    }

    proptest! {
        #[test]
        fn sf_symmetry(t in -50.0f64..50.0, df in 1.0f64..500.0) {
            let a = student_t_sf(t, df).unwrap();
            let b = student_t_sf(-t, df).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn p_monotone_in_abs_t(t in 0.0f64..20.0, dt in 0.01f64..5.0, df in 1.0f64..200.0) {
            let p_small = student_t_sf(t, df).unwrap();
            let p_large = student_t_sf(t + dt, df).unwrap();
            prop_assert!(p_large <= p_small);
        }

        #[test]
        fn welch_antisymmetric(
            a in prop::collection::vec(-10.0f64..10.0, 3..12),
            b in prop::collection::vec(-10.0f64..10.0, 3..12),
        ) {
            if let (Ok(fwd), Ok(rev)) = (welch_two_sample(&a, &b), welch_two_sample(&b, &a)) {
                prop_assert!((fwd.t + rev.t).abs() < 1e-10);
                prop_assert!((fwd.p_two_sided - rev.p_two_sided).abs() < 1e-10);
            }
        }

        #[test]
        fn welch_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 3..10),
            b in prop::collection::vec(-10.0f64..10.0, 3..10),
            c in 0.1f64..100.0,
        ) {
            let scale = |xs: &[f64]| xs.iter().map(|x| x * c).collect::<Vec<_>>();
            if let (Ok(base), Ok(scaled)) =
                (welch_two_sample(&a, &b), welch_two_sample(&scale(&a), &scale(&b)))
            {
                prop_assert!((base.t - scaled.t).abs() < 1e-8);
                prop_assert!((base.df - scaled.df).abs() < 1e-8);
                prop_assert!((base.p_two_sided - scaled.p_two_sided).abs() < 1e-8);
                prop_assert!((scaled.ci95.0 - base.ci95.0 * c).abs() < 1e-6 * c.max(1.0));
            }
        }

        #[test]
        fn ci_brackets_mean_diff(
            a in prop::collection::vec(-5.0f64..5.0, 2..20),
            b in prop::collection::vec(-5.0f64..5.0, 2..20),
        ) {
            if let Ok(r) = welch_two_sample(&a, &b) {
                prop_assert!(r.ci95.0 <= r.mean_diff && r.mean_diff <= r.ci95.1);
                prop_assert!((0.0..=1.0).contains(&r.p_two_sided));
            }
        }
    }
}
