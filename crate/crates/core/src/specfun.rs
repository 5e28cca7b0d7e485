//! Scalar special functions: log-gamma, Euler beta, the regularized
//! incomplete beta function and the volume of the unit n-ball.
//!
//! Everything here is pure and re-entrant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, Scalar};

/// Lanczos approximation, g = 7, nine terms.
const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Per-step relative tolerance of the continued fraction.
pub const CF_TOLERANCE: f64 = 1e-15;
/// Iteration cap for the continued fraction.
pub const CF_MAX_ITERATIONS: usize = 500;

/// Shape parameters of a beta distribution, both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams<T> {
    a: T,
    b: T,
}

impl<T: Scalar> BetaParams<T> {
    pub fn new(a: T, b: T) -> Result<Self> {
        if !(a > T::zero() && a.is_finite()) || !(b > T::zero() && b.is_finite()) {
            return Err(Error::domain(
                "BetaParams::new",
                format!("shape parameters must be positive and finite, got a={a}, b={b}"),
            ));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn swapped(&self) -> Self {
        Self {
            a: self.b,
            b: self.a,
        }
    }
}

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma<T: Scalar>(x: T) -> Result<T> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(Error::domain(
            "log_gamma",
            format!("argument must be positive and finite, got {x}"),
        ));
    }
    Ok(ln_gamma_positive(x))
}

fn ln_gamma_positive<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        // Reflection keeps the series in its accurate range.
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma_positive(T::one() - x);
    }
    let z = x - T::one();
    let mut series = T::lit(LANCZOS_COEF[0]);
    for (k, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        series += T::lit(c) / (z + from_usize(k));
    }
    let t = z + T::lit(LANCZOS_G) + half;
    let half_ln_two_pi = T::lit(0.918_938_533_204_672_8);
    half_ln_two_pi + (z + half) * t.ln() - t + series.ln()
}

/// ln B(a, b).
pub fn ln_beta<T: Scalar>(p: BetaParams<T>) -> T {
    ln_gamma_positive(p.a) + ln_gamma_positive(p.b) - ln_gamma_positive(p.a + p.b)
}

/// Euler beta function B(a, b) = Γ(a)Γ(b)/Γ(a+b), evaluated in log space.
pub fn euler_beta<T: Scalar>(p: BetaParams<T>) -> Result<T> {
    Ok(ln_beta(p).exp())
}

/// Regularized incomplete beta function I(x; a, b).
pub fn reg_inc_beta<T: Scalar>(x: T, p: BetaParams<T>) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::domain(
            "reg_inc_beta",
            format!("x must lie in [0, 1], got {x}"),
        ));
    }
    reg_inc_beta_split(x, T::one() - x, p)
}

/// I(x; a, b) with the complement `y = 1 - x` supplied by the caller.
///
/// Callers that can form `1 - x` without cancellation (for example
/// `x = 1 - r^2`, `y = r^2`) keep full relative precision in both tails.
pub(crate) fn reg_inc_beta_split<T: Scalar>(x: T, y: T, p: BetaParams<T>) -> Result<T> {
    if x <= T::zero() {
        return Ok(T::zero());
    }
    if y <= T::zero() {
        return Ok(T::one());
    }
    let (a, b) = (p.a, p.b);
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(p);
    let front = ln_front.exp();
    let two = T::lit(2.0);
    if x > (a + T::one()) / (a + b + two) {
        let tail = front * beta_continued_fraction(y, b, a)? / b;
        Ok((T::one() - tail).max(T::zero()))
    } else {
        Ok((front * beta_continued_fraction(x, a, b)? / a).min(T::one()))
    }
}

/// Continued fraction for the incomplete beta function, modified Lentz.
fn beta_continued_fraction<T: Scalar>(x: T, a: T, b: T) -> Result<T> {
    let one = T::one();
    let tol = T::lit(CF_TOLERANCE).max(T::epsilon());
    let tiny = T::min_positive_value() / T::epsilon();
    let guard = |v: T| if v.abs() < tiny { tiny } else { v };

    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one / guard(one - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITERATIONS {
        let m_t: T = from_usize(m);
        let m2 = m_t + m_t;

        let even = m_t * (b - m_t) * x / ((qam + m2) * (a + m2));
        d = one / guard(one + even * d);
        c = guard(one + even / c);
        h *= d * c;

        let odd = -(a + m_t) * (qab + m_t) * x / ((a + m2) * (qap + m2));
        d = one / guard(one + odd * d);
        c = guard(one + odd / c);
        let delta = d * c;
        h *= delta;

        if (delta - one).abs() < tol {
            return Ok(h);
        }
    }
    Err(Error::NonConvergence {
        iterations: CF_MAX_ITERATIONS,
        x: x.to_f64_lossless(),
        a: a.to_f64_lossless(),
        b: b.to_f64_lossless(),
    })
}

/// Volume of the unit n-ball, π^{n/2} / Γ(1 + n/2).
pub fn unit_ball_volume<T: Scalar>(n: usize) -> Result<T> {
    if n < 1 {
        return Err(Error::domain(
            "unit_ball_volume",
            "dimension must be at least 1",
        ));
    }
    Ok(ln_unit_ball_volume::<T>(n).exp())
}

/// ln C_n; finite for dimensions where C_n itself under- or overflows.
pub(crate) fn ln_unit_ball_volume<T: Scalar>(n: usize) -> T {
    let half_n = from_usize::<T>(n) * T::lit(0.5);
    half_n * T::lit(std::f64::consts::PI).ln() - ln_gamma_positive(T::one() + half_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(a: f64, b: f64) -> BetaParams<f64> {
        BetaParams::new(a, b).unwrap()
    }

    /// Adaptive Simpson quadrature, test-only oracle.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
        }
        #[allow(clippy::too_many_arguments)]
        fn recurse(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            whole: f64,
            m: f64,
            fm: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let (lm, flm, left) = simpson(f, a, fa, m, fm);
            let (rm, frm, right) = simpson(f, m, fm, b, fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
        let (fa, fb) = (f(lo), f(hi));
        let (m, fm, whole) = simpson(f, lo, fa, hi, fb);
        recurse(f, lo, fa, hi, fb, whole, m, fm, tol, 60)
    }

    #[test]
    fn log_gamma_reference_values() {
        assert!(log_gamma(1.0f64).unwrap().abs() < 1e-15);
        assert!((log_gamma(0.5f64).unwrap() - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((log_gamma(10.0f64).unwrap() - 362_880f64.ln()).abs() < 1e-13);
        assert!(log_gamma(2.0f64).unwrap().abs() < 1e-14);
    }

    #[test]
    fn log_gamma_rejects_nonpositive() {
        assert!(matches!(log_gamma(0.0f64), Err(Error::Domain { .. })));
        assert!(matches!(log_gamma(-1.5f64), Err(Error::Domain { .. })));
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn log_gamma_small_argument() {
        // ln Γ(x) = -ln x - γ_E x + O(x^2)
        let x = 1e-6f64;
        let euler_mascheroni = 0.577_215_664_901_532_9;
        let approx = -x.ln() - euler_mascheroni * x + 0.822_467_033_424_113_2 * x * x;
        assert!((log_gamma(x).unwrap() - approx).abs() < 1e-13);
    }

    #[test]
    fn log_gamma_matches_log_factorial_sums() {
        // Independent oracle: ln((n-1)!) by direct summation.
        let mut ln_fact = 0.0f64;
        for n in 2..=200_000u32 {
            ln_fact += f64::from(n - 1).ln();
            if [2, 3, 17, 171, 1_000, 50_000, 200_000].contains(&n) {
                let got = log_gamma(f64::from(n)).unwrap();
                let scale = ln_fact.abs().max(1.0);
                assert!(
                    (got - ln_fact).abs() / scale < 1e-13,
                    "n={n}: {got} vs {ln_fact}"
                );
            }
        }
    }

    #[test]
    fn log_gamma_at_one_million_is_relatively_exact() {
        // Stirling series with three correction terms, exact to f64 here.
        let x = 1e6f64;
        let stirling =
            (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
                - 1.0 / (360.0 * x.powi(3));
        assert_relative_eq!(log_gamma(x).unwrap(), stirling, max_relative = 1e-14);
    }

    #[test]
    fn euler_beta_reference_values() {
        assert!((euler_beta(params(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-14);
        assert!((euler_beta(params(1.0, 0.5)).unwrap() - 2.0).abs() < 1e-14);
        assert!((euler_beta(params(2.0, 3.0)).unwrap() - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn beta_params_validate() {
        assert!(BetaParams::new(0.0f64, 1.0).is_err());
        assert!(BetaParams::new(1.0f64, -0.5).is_err());
        assert!(BetaParams::new(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn reg_inc_beta_endpoints_and_uniform() {
        let p = params(2.5, 0.5);
        assert_eq!(reg_inc_beta(0.0, p).unwrap(), 0.0);
        assert_eq!(reg_inc_beta(1.0, p).unwrap(), 1.0);
        for &x in &[0.0, 0.1, 0.37, 0.5, 0.99, 1.0] {
            assert!((reg_inc_beta(x, params(1.0, 1.0)).unwrap() - x).abs() < 1e-14);
        }
        assert!((reg_inc_beta(0.5, params(0.5, 0.5)).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn reg_inc_beta_rejects_out_of_range() {
        assert!(reg_inc_beta(-0.1, params(1.0, 1.0)).is_err());
        assert!(reg_inc_beta(1.1, params(1.0, 1.0)).is_err());
        assert!(reg_inc_beta(f64::NAN, params(1.0, 1.0)).is_err());
    }

    #[test]
    fn reg_inc_beta_closed_form_b_half_a_one() {
        // I(x; 1, 1/2) = 1 - sqrt(1 - x)
        for i in 0..=100 {
            let x = f64::from(i) / 100.0;
            let want = 1.0 - (1.0 - x).sqrt();
            assert!((reg_inc_beta(x, params(1.0, 0.5)).unwrap() - want).abs() < 1e-14);
        }
    }

    #[test]
    fn reg_inc_beta_against_quadrature() {
        // (0.75, a=1.5, b=0.5). Substituting 1 - t = s^2 removes the endpoint
        // singularity: the integrand becomes 2 (1 - s^2)^{a-1}.
        let a = 1.5;
        let f = |s: f64| 2.0 * (1.0 - s * s).max(0.0).powf(a - 1.0);
        let partial = adaptive_simpson(&f, 0.25f64.sqrt(), 1.0, 1e-15);
        let total = adaptive_simpson(&f, 0.0, 1.0, 1e-15);
        let oracle = partial / total;
        let got = reg_inc_beta(0.75, params(1.5, 0.5)).unwrap();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
        // Frozen from the oracle above.
        assert!((got - 0.391_002_218_955_770_64).abs() < 1e-10);
    }

    #[test]
    fn reg_inc_beta_against_quadrature_grid() {
        for &(a, b) in &[(2.0, 3.0), (5.5, 0.5), (3.0, 7.0), (0.9, 1.7)] {
            // u = t^a turns the integrand into (1 - u^{1/a})^{b-1} / a.
            let f = |u: f64| (1.0 - u.powf(1.0 / a)).powf(b - 1.0) / a;
            let beta = euler_beta(params(a, b)).unwrap();
            for &x in &[0.05f64, 0.3, 0.6, 0.9] {
                let oracle = adaptive_simpson(&f, 0.0, x.powf(a), 1e-14) / beta;
                let got = reg_inc_beta(x, params(a, b)).unwrap();
                assert!(
                    (got - oracle).abs() < 1e-8,
                    "a={a} b={b} x={x}: {got} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn unit_ball_volumes() {
        assert!((unit_ball_volume::<f64>(1).unwrap() - 2.0).abs() < 1e-14);
        assert!((unit_ball_volume::<f64>(2).unwrap() - std::f64::consts::PI).abs() < 1e-14);
        assert!(
            (unit_ball_volume::<f64>(3).unwrap() - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-14
        );
        assert!(unit_ball_volume::<f64>(0).is_err());
    }

    #[test]
    fn single_precision_is_usable() {
        let p = BetaParams::new(2.0f32, 0.5).unwrap();
        let v = reg_inc_beta(0.3f32, p).unwrap();
        let reference = reg_inc_beta(0.3f64, params(2.0, 0.5)).unwrap();
        assert!((f64::from(v) - reference).abs() < 1e-5);
        assert!((unit_ball_volume::<f32>(2).unwrap() - std::f32::consts::PI).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn reflection_identity(x in 0.0f64..=1.0, a in 0.25f64..30.0, b in 0.25f64..30.0) {
            let lhs = reg_inc_beta(x, params(a, b)).unwrap();
            let rhs = reg_inc_beta(1.0 - x, params(b, a)).unwrap();
            prop_assert!((lhs + rhs - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_x(x1 in 0.0f64..=1.0, x2 in 0.0f64..=1.0, a in 0.25f64..30.0, b in 0.25f64..30.0) {
            let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
            let p = params(a, b);
            prop_assert!(reg_inc_beta(lo, p).unwrap() <= reg_inc_beta(hi, p).unwrap() + 1e-14);
        }

        #[test]
        fn beta_is_symmetric(a in 0.1f64..50.0, b in 0.1f64..50.0) {
            let ab = euler_beta(params(a, b)).unwrap();
            let ba = euler_beta(params(b, a)).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-13 * ab.abs());
        }

        #[test]
        fn gamma_recurrence(x in 0.5f64..50.0) {
            let lhs = log_gamma(x + 1.0).unwrap().exp();
            let rhs = x * log_gamma(x).unwrap().exp();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
        }
    }
}
