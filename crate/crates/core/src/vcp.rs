//! Margins, per-point counterfactual-validity probabilities and their
//! dataset-level aggregate.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geom::{self, ShellSampler};
use crate::model::{label_of, LinearModel, ScoringModel};
use crate::rng::{self, LabRng};
use crate::scalar::{from_usize, norm, Scalar};

/// Gradient norms below this give an infinite margin.
pub const GRADIENT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginMethod {
    ExactLinear,
    GradientFirstOrder,
}

impl MarginMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MarginMethod::ExactLinear => "exact-linear",
            MarginMethod::GradientFirstOrder => "gradient-first-order",
        }
    }
}

/// Distance from a point to the decision boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate<T> {
    /// `+inf` flags a flat score plateau (no nearby boundary detected).
    pub value: T,
    pub method: MarginMethod,
    pub gradient_norm: Option<T>,
}

impl<T: Scalar> MarginEstimate<T> {
    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

/// `|w.x + b| / ||w||`.
pub fn margin_exact_linear<T: Scalar>(
    model: &LinearModel<T>,
    x: &[T],
) -> Result<MarginEstimate<T>> {
    model.check_dim(x)?;
    let w_norm = norm(&model.weights);
    if w_norm == T::zero() {
        return Err(Error::ZeroWeights);
    }
    Ok(MarginEstimate {
        value: model.score_unchecked(x).abs() / w_norm,
        method: MarginMethod::ExactLinear,
        gradient_norm: Some(w_norm),
    })
}

/// First-order estimate `|h(x)| / ||grad h(x)||`.
pub fn margin_gradient_estimate<T: Scalar, M: ScoringModel<T> + ?Sized>(
    model: &M,
    x: &[T],
) -> Result<MarginEstimate<T>> {
    let score = model.score(x)?;
    let g_norm = norm(&model.input_gradient_unchecked(x));
    let value = if score == T::zero() {
        T::zero()
    } else if g_norm < T::lit(GRADIENT_FLOOR) {
        T::infinity()
    } else {
        score.abs() / g_norm
    };
    Ok(MarginEstimate {
        value,
        method: MarginMethod::GradientFirstOrder,
        gradient_norm: Some(g_norm),
    })
}

/// Exact margin for linear models, gradient estimate otherwise.
pub fn margin<T: Scalar, M: ScoringModel<T> + ?Sized>(
    model: &M,
    x: &[T],
) -> Result<MarginEstimate<T>> {
    match model.as_linear() {
        Some(linear) => margin_exact_linear(linear, x),
        None => margin_gradient_estimate(model, x),
    }
}

/// Perturbation region: the full `epsilon`-ball or the shell `[gamma, epsilon)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    #[default]
    Ball,
    Shell,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Ball => "ball",
            Region::Shell => "shell",
        })
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ball" => Ok(Region::Ball),
            "shell" => Ok(Region::Shell),
            other => Err(Error::config(
                "region",
                format!("expected `ball` or `shell`, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VcpMethod {
    #[default]
    MonteCarlo,
    Analytic,
}

impl VcpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            VcpMethod::MonteCarlo => "monte-carlo",
            VcpMethod::Analytic => "analytic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcpEstimate<T> {
    pub p: T,
    pub samples: usize,
    pub stderr: T,
    pub region: Region,
    pub method: VcpMethod,
}

impl<T: Scalar> VcpEstimate<T> {
    fn analytic(p: T, region: Region) -> Self {
        Self {
            p,
            samples: 0,
            stderr: T::zero(),
            region,
            method: VcpMethod::Analytic,
        }
    }
}

fn check_epsilon<T: Scalar>(op: &'static str, epsilon: T) -> Result<()> {
    if !(epsilon > T::zero() && epsilon.is_finite()) {
        return Err(Error::domain(
            op,
            format!("epsilon must be positive and finite, got {epsilon}"),
        ));
    }
    Ok(())
}

/// Fraction of uniform perturbations `x + r` whose label differs from that
/// of `x`, with `r` drawn from the ball of radius `epsilon` or from the
/// shell `[gamma, epsilon)`.
pub fn vcp_monte_carlo<T: Scalar, M: ScoringModel<T> + ?Sized>(
    model: &M,
    x: &[T],
    epsilon: T,
    region: Region,
    gamma: Option<T>,
    samples: usize,
    rng: &mut LabRng,
) -> Result<VcpEstimate<T>> {
    check_epsilon("vcp_monte_carlo", epsilon)?;
    if samples == 0 {
        return Err(Error::domain("vcp_monte_carlo", "need at least one sample"));
    }
    let inner = match region {
        Region::Ball => T::zero(),
        Region::Shell => {
            gamma.ok_or_else(|| Error::domain("vcp_monte_carlo", "shell region needs gamma"))?
        }
    };
    let sampler = ShellSampler::new(x.len(), inner, epsilon)?;
    let base = model.score(x)?;
    if !base.is_finite() {
        return Err(Error::domain(
            "vcp_monte_carlo",
            "non-finite score at the unperturbed point",
        ));
    }
    let label = label_of(base);
    let mut direction = vec![T::zero(); x.len()];
    let mut point = vec![T::zero(); x.len()];
    let mut flips = 0usize;
    for sample in 0..samples {
        let radius = sampler.sample_into(&mut direction, rng);
        for ((p, &c), &d) in point.iter_mut().zip(x).zip(&direction) {
            *p = c + radius * d;
        }
        let s = model.score_unchecked(&point);
        if !s.is_finite() {
            return Err(Error::NonFiniteScore { sample });
        }
        if label_of(s) != label {
            flips += 1;
        }
    }
    let n: T = from_usize(samples);
    let p = from_usize::<T>(flips) / n;
    Ok(VcpEstimate {
        p,
        samples,
        stderr: (p * (T::one() - p) / n).sqrt(),
        region,
        method: VcpMethod::MonteCarlo,
    })
}

/// Closed-form probability for a linear model: the shell region uses the
/// point's own margin as the inner radius.
pub fn vcp_analytic_linear<T: Scalar>(
    model: &LinearModel<T>,
    x: &[T],
    epsilon: T,
    region: Region,
) -> Result<VcpEstimate<T>> {
    check_epsilon("vcp_analytic_linear", epsilon)?;
    let gamma = margin_exact_linear(model, x)?.value;
    let n = x.len();
    let p = match region {
        Region::Ball => geom::vcp_linear_uniform_ball(gamma, epsilon, n)?,
        Region::Shell => geom::vcp_linear_uniform(gamma, epsilon, n)?.p,
    };
    Ok(VcpEstimate::analytic(p, region))
}

/// `epsilon * sqrt(n_prime / n)`.
pub fn rescale_epsilon<T: Scalar>(epsilon: T, n: usize, n_prime: usize) -> Result<T> {
    check_epsilon("rescale_epsilon", epsilon)?;
    if n == 0 || n_prime == 0 {
        return Err(Error::domain(
            "rescale_epsilon",
            "dimensions must be positive",
        ));
    }
    Ok(epsilon * (from_usize::<T>(n_prime) / from_usize::<T>(n)).sqrt())
}

/// Settings for [`aggregate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateSettings<T> {
    pub epsilon: T,
    pub region: Region,
    pub samples: usize,
    pub method: VcpMethod,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointVcp<T> {
    pub index: usize,
    pub margin: Option<MarginEstimate<T>>,
    pub estimate: Option<VcpEstimate<T>>,
    /// Set when this point could not be estimated.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateVcp<T> {
    pub epsilon: T,
    pub dim: usize,
    /// Mean over points with an estimate.
    pub mean_p: T,
    /// Standard error of `mean_p` from the per-point standard errors.
    pub mean_stderr: T,
    /// Mean over finite margins; `None` when every margin is excluded.
    pub mean_margin: Option<T>,
    pub excluded_margins: usize,
    pub failed_points: usize,
    /// `g(mean_margin)` in the model's input dimension, when
    /// `0 < mean_margin < epsilon`.
    pub jensen_bound: Option<T>,
    pub per_point: Vec<PointVcp<T>>,
}

fn estimate_point<T: Scalar, M: ScoringModel<T> + ?Sized>(
    model: &M,
    x: &[T],
    index: usize,
    settings: &AggregateSettings<T>,
) -> PointVcp<T> {
    let margin_result = margin(model, x);
    let margin_value = margin_result.as_ref().ok().copied();
    let estimate = (|| -> Result<VcpEstimate<T>> {
        let m = margin_result
            .as_ref()
            .map_err(|e| Error::Data(e.to_string()));
        match (settings.method, settings.region) {
            (VcpMethod::Analytic, region) => {
                let linear = model.as_linear().ok_or_else(|| {
                    Error::config("vcp.method", "analytic estimation needs a linear model")
                })?;
                vcp_analytic_linear(linear, x, settings.epsilon, region)
            }
            (VcpMethod::MonteCarlo, Region::Shell) => {
                let gamma = m?.value;
                if gamma >= settings.epsilon {
                    return Ok(VcpEstimate::analytic(T::zero(), Region::Shell));
                }
                let mut rng = point_rng(settings.seed, index);
                vcp_monte_carlo(
                    model,
                    x,
                    settings.epsilon,
                    Region::Shell,
                    Some(gamma),
                    settings.samples,
                    &mut rng,
                )
            }
            (VcpMethod::MonteCarlo, Region::Ball) => {
                let mut rng = point_rng(settings.seed, index);
                vcp_monte_carlo(
                    model,
                    x,
                    settings.epsilon,
                    Region::Ball,
                    None,
                    settings.samples,
                    &mut rng,
                )
            }
        }
    })();
    let error = match (&margin_result, &estimate) {
        (_, Err(e)) => Some(e.to_string()),
        (Err(e), Ok(_)) => Some(e.to_string()),
        _ => None,
    };
    PointVcp {
        index,
        margin: margin_value,
        estimate: estimate.ok(),
        error,
    }
}

/// Independent stream for point `index` under run seed `seed`.
pub fn point_rng(seed: u64, index: usize) -> LabRng {
    rng::stream(rng::derive_seed(seed, rng::tag::VCP), index as u64)
}

/// Per-point margins and probabilities over `data`, their means and the
/// Jensen-type bound. Points are processed in parallel; results and sums
/// follow point order, so the output does not depend on thread count.
pub fn aggregate<T: Scalar, M: ScoringModel<T> + ?Sized>(
    model: &M,
    data: &Dataset<T>,
    settings: &AggregateSettings<T>,
) -> Result<AggregateVcp<T>> {
    check_epsilon("aggregate", settings.epsilon)?;
    if settings.method == VcpMethod::MonteCarlo && settings.samples == 0 {
        return Err(Error::config("vcp.samples", "must be at least 1"));
    }
    model.check_dim(&data.features()[0])?;
    let per_point: Vec<PointVcp<T>> = data
        .features()
        .par_iter()
        .enumerate()
        .map(|(i, x)| estimate_point(model, x, i, settings))
        .collect();
    summarize(per_point, settings.epsilon, model.input_dim())
}

/// Reduces per-point results in index order.
pub fn summarize<T: Scalar>(
    per_point: Vec<PointVcp<T>>,
    epsilon: T,
    dim: usize,
) -> Result<AggregateVcp<T>> {
    let estimates: Vec<&VcpEstimate<T>> = per_point
        .iter()
        .filter_map(|p| p.estimate.as_ref())
        .collect();
    if estimates.is_empty() {
        let first = per_point
            .iter()
            .find_map(|p| p.error.clone())
            .unwrap_or_else(|| "no points".to_string());
        return Err(Error::Data(format!(
            "every point failed; first error: {first}"
        )));
    }
    let count: T = from_usize(estimates.len());
    let mean_p = estimates.iter().map(|e| e.p).sum::<T>() / count;
    let mean_stderr = estimates
        .iter()
        .map(|e| e.stderr * e.stderr)
        .sum::<T>()
        .sqrt()
        / count;
    let finite: Vec<T> = per_point
        .iter()
        .filter_map(|p| p.margin.map(|m| m.value))
        .filter(|v| v.is_finite())
        .collect();
    let excluded_margins = per_point
        .iter()
        .filter(|p| p.margin.is_some_and(|m| m.is_infinite()))
        .count();
    let mean_margin =
        (!finite.is_empty()).then(|| finite.iter().copied().sum::<T>() / from_usize(finite.len()));
    let jensen_bound = match mean_margin {
        Some(g) if g > T::zero() && g < epsilon => Some(geom::g_of_mean_margin(g, epsilon, dim)?),
        _ => None,
    };
    Ok(AggregateVcp {
        epsilon,
        dim,
        mean_p,
        mean_stderr,
        mean_margin,
        excluded_margins,
        failed_points: per_point.len() - estimates.len(),
        jensen_bound,
        per_point,
    })
}

/// Per-point CSV: `point_index, margin, margin_method, p, stderr, samples, region`.
/// Failed fields are left empty.
pub fn write_per_point_csv<T: Scalar, W: Write>(agg: &AggregateVcp<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| Error::Data(format!("writing per-point CSV: {e}"));
    w.write_record([
        "point_index",
        "margin",
        "margin_method",
        "p",
        "stderr",
        "samples",
        "region",
    ])
    .map_err(to_io)?;
    for point in &agg.per_point {
        let (margin, method) = match &point.margin {
            Some(m) => (m.value.to_string(), m.method.as_str().to_string()),
            None => (String::new(), String::new()),
        };
        let (p, stderr, samples, region) = match &point.estimate {
            Some(e) => (
                e.p.to_string(),
                e.stderr.to_string(),
                e.samples.to_string(),
                e.region.to_string(),
            ),
            None => Default::default(),
        };
        w.write_record([
            point.index.to_string(),
            margin,
            method,
            p,
            stderr,
            samples,
            region,
        ])
        .map_err(to_io)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing per-point CSV: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{sample_unit_direction, vcp_linear_uniform, vcp_linear_uniform_ball};
    use crate::model::{Activation, MlpModel};
    use proptest::prelude::*;

    fn linear(w: &[f64], b: f64) -> LinearModel<f64> {
        LinearModel::new(w.to_vec(), b).unwrap()
    }

    #[test]
    fn exact_margin_examples() {
        let m = linear(&[3.0, 4.0], 0.0);
        assert!((margin_exact_linear(&m, &[1.0, 1.0]).unwrap().value - 1.4).abs() < 1e-15);
        let on = linear(&[3.0, 4.0], -7.0);
        assert_eq!(margin_exact_linear(&on, &[1.0, 1.0]).unwrap().value, 0.0);
        let scaled = linear(&[30.0, 40.0], 5.0);
        let base = linear(&[3.0, 4.0], 0.5);
        let x = [0.3, -2.0];
        let a = margin_exact_linear(&scaled, &x).unwrap().value;
        let b = margin_exact_linear(&base, &x).unwrap().value;
        assert!((a - b).abs() < 1e-14);
        assert!(matches!(
            margin_exact_linear(&LinearModel::zeros(2, true), &x),
            Err(Error::ZeroWeights)
        ));
    }

    #[test]
    fn gradient_margin_edge_cases() {
        let zero = MlpModel::<f64>::zeros(2, &[3], Activation::Tanh, 0.0).unwrap();
        let m = margin_gradient_estimate(&zero, &[1.0, 1.0]).unwrap();
        assert_eq!(m.value, 0.0);
        // Nonzero constant output with zero gradient: plateau sentinel.
        let mut plateau = zero.clone();
        plateau.layers[1].biases[0] = 0.5;
        let m = margin_gradient_estimate(&plateau, &[1.0, 1.0]).unwrap();
        assert!(m.is_infinite());
        assert_eq!(m.gradient_norm, Some(0.0));
    }

    /// Bisection along the normalized gradient direction towards the
    /// boundary; returns the distance at which the score changes sign.
    fn line_search_distance(m: &MlpModel<f64>, x: &[f64], max_t: f64) -> Option<f64> {
        let s0 = m.score(x).unwrap();
        let g = m.input_gradient(x).unwrap();
        let gn = norm(&g);
        let dir: Vec<f64> = g.iter().map(|v| -s0.signum() * v / gn).collect();
        let at = |t: f64| {
            let p: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            m.score(&p).unwrap()
        };
        if at(max_t).signum() == s0.signum() {
            return None;
        }
        let (mut lo, mut hi) = (0.0, max_t);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if at(mid).signum() == s0.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    #[test]
    fn gradient_margin_matches_line_search_near_boundary() {
        let mut rng = rng::seeded(17);
        let mut checked = 0;
        for seed in 0..40 {
            let m =
                MlpModel::<f64>::init_uniform(3, &[16, 8], Activation::Tanh, 0.0, seed).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..3)
                    .map(|_| f64::sample_standard_normal(&mut rng))
                    .collect();
                let est = margin_gradient_estimate(&m, &x).unwrap().value;
                // Feature scale is 1 for standard normal inputs.
                if est >= 0.1 {
                    continue;
                }
                if let Some(d) = line_search_distance(&m, &x, 1.0) {
                    assert!(
                        (est - d).abs() <= 0.2 * d,
                        "estimate {est}, line search {d}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked >= 10, "only {checked} near-boundary points");
    }

    #[test]
    fn monte_carlo_matches_closed_form_on_hyperplane() {
        for (n, ratio) in [(2usize, 0.3f64), (3, 0.6), (5, 0.2), (9, 0.5)] {
            let mut w: Vec<f64> = sample_unit_direction(n, &mut rng::seeded(n as u64));
            w.iter_mut().for_each(|v| *v *= 2.5);
            let m = linear(&w, -1.0);
            let x = vec![0.0; n];
            let gamma = margin_exact_linear(&m, &x).unwrap().value;
            let eps = gamma / ratio;
            let est = vcp_monte_carlo(
                &m,
                &x,
                eps,
                Region::Shell,
                Some(gamma),
                20_000,
                &mut rng::seeded(1),
            )
            .unwrap();
            let exact = vcp_linear_uniform(gamma, eps, n).unwrap().p;
            assert!(
                (est.p - exact).abs() <= 3.0 * est.stderr,
                "n={n}: {} vs {exact}",
                est.p
            );
            let ball =
                vcp_monte_carlo(&m, &x, eps, Region::Ball, None, 20_000, &mut rng::seeded(2))
                    .unwrap();
            let exact_ball = vcp_linear_uniform_ball(gamma, eps, n).unwrap();
            assert!(
                (ball.p - exact_ball).abs() <= 3.0 * ball.stderr,
                "n={n} ball"
            );
        }
    }

    #[test]
    fn monte_carlo_zero_cases() {
        let m = linear(&[1.0, 0.0], -2.0);
        let x = [0.0, 0.0];
        let est =
            vcp_monte_carlo(&m, &x, 1.5, Region::Ball, None, 1000, &mut rng::seeded(0)).unwrap();
        assert_eq!(est.p, 0.0);
        assert_eq!(est.stderr, 0.0);
        let zero = MlpModel::<f64>::zeros(2, &[4], Activation::Tanh, 0.0).unwrap();
        let est =
            vcp_monte_carlo(&zero, &x, 3.0, Region::Ball, None, 500, &mut rng::seeded(0)).unwrap();
        assert_eq!(est.p, 0.0);
        assert!(matches!(
            vcp_monte_carlo(
                &m,
                &x,
                1.0,
                Region::Shell,
                Some(1.0),
                10,
                &mut rng::seeded(0)
            ),
            Err(Error::DegenerateShell { .. })
        ));
        assert!(
            vcp_monte_carlo(&m, &x, 1.0, Region::Shell, None, 10, &mut rng::seeded(0)).is_err()
        );
    }

    #[test]
    fn non_finite_score_names_sample() {
        let m = linear(&[f64::MAX, f64::MAX], 0.0);
        match vcp_monte_carlo(
            &m,
            &[0.0, 0.0],
            1.0,
            Region::Ball,
            None,
            10,
            &mut rng::seeded(0),
        ) {
            Err(Error::NonFiniteScore { sample }) => assert!(sample < 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_epsilon(1.5, 9, 9).unwrap(), 1.5);
        assert!((rescale_epsilon(1.5f64, 9, 5005).unwrap() - 35.373).abs() < 1e-3);
        assert_eq!(rescale_epsilon(2.0, 4, 16).unwrap(), 4.0);
        assert!(rescale_epsilon(0.0, 4, 16).is_err());
    }

    fn settings(eps: f64, region: Region, method: VcpMethod) -> AggregateSettings<f64> {
        AggregateSettings {
            epsilon: eps,
            region,
            samples: 1000,
            method,
            seed: 5,
        }
    }

    #[test]
    fn single_point_aggregate_equals_point() {
        let m = linear(&[1.0, 1.0], -0.5);
        let data = Dataset::new(vec![vec![0.1, 0.2]], vec![0], vec![]).unwrap();
        let agg = aggregate(
            &m,
            &data,
            &settings(1.0, Region::Ball, VcpMethod::MonteCarlo),
        )
        .unwrap();
        let point = agg.per_point[0].estimate.unwrap();
        assert_eq!(agg.mean_p, point.p);
        assert_eq!(
            agg.mean_margin,
            Some(agg.per_point[0].margin.unwrap().value)
        );
        let direct = vcp_monte_carlo(
            &m,
            &[0.1, 0.2],
            1.0,
            Region::Ball,
            None,
            1000,
            &mut point_rng(5, 0),
        )
        .unwrap();
        assert_eq!(direct, point);
    }

    #[test]
    fn equal_margins_give_equality_in_jensen() {
        // Points on the plane x0 = 0.4 all sit at margin 0.4 from x0 = 0.
        let m = linear(&[1.0, 0.0, 0.0], 0.0);
        let data = Dataset::new(
            vec![
                vec![0.4, 0.0, 1.0],
                vec![0.4, 2.0, -1.0],
                vec![-0.4, 0.5, 0.5],
            ],
            vec![1, 1, 0],
            vec![],
        )
        .unwrap();
        let agg = aggregate(
            &m,
            &data,
            &settings(1.0, Region::Shell, VcpMethod::Analytic),
        )
        .unwrap();
        let per = vcp_linear_uniform(0.4, 1.0, 3).unwrap().p;
        assert!((agg.jensen_bound.unwrap() - per).abs() < 1e-15);
        assert!((agg.mean_p - per).abs() < 1e-15);
    }

    #[test]
    fn aggregate_is_thread_count_independent() {
        let data: Dataset<f64> = crate::dataset::make_synthetic_gaussians(24, 3, 1.0, 2).unwrap();
        let m = MlpModel::<f64>::init_uniform(3, &[8], Activation::Tanh, 0.0, 2).unwrap();
        let s = settings(0.8, Region::Ball, VcpMethod::MonteCarlo);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| aggregate(&m, &data, &s).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one, four);
        let recomputed = one
            .per_point
            .iter()
            .map(|p| p.estimate.unwrap().p)
            .sum::<f64>()
            / 24.0;
        assert!((recomputed - one.mean_p).abs() <= 1e-15);
    }

    #[test]
    fn infinite_margins_are_excluded() {
        let zero = MlpModel::<f64>::zeros(2, &[3], Activation::Tanh, 0.0).unwrap();
        let mut plateau = zero;
        plateau.layers[1].biases[0] = 0.5;
        let data = Dataset::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0, 1], vec![]).unwrap();
        let agg = aggregate(
            &plateau,
            &data,
            &settings(1.0, Region::Ball, VcpMethod::MonteCarlo),
        )
        .unwrap();
        assert_eq!(agg.excluded_margins, 2);
        assert_eq!(agg.mean_margin, None);
        assert_eq!(agg.jensen_bound, None);
        assert_eq!(agg.mean_p, 0.0);
        // Shell with an infinite inner radius is empty.
        let agg = aggregate(
            &plateau,
            &data,
            &settings(1.0, Region::Shell, VcpMethod::MonteCarlo),
        )
        .unwrap();
        assert_eq!(
            agg.per_point[0].estimate.unwrap().method,
            VcpMethod::Analytic
        );
    }

    #[test]
    fn all_points_failing_is_an_error() {
        let m = LinearModel::<f64>::zeros(2, true);
        let data = Dataset::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0, 1], vec![]).unwrap();
        assert!(aggregate(
            &m,
            &data,
            &settings(1.0, Region::Shell, VcpMethod::Analytic)
        )
        .is_err());
        // Ball estimation still works without a margin; only the margin is missing.
        let agg = aggregate(
            &m,
            &data,
            &settings(1.0, Region::Ball, VcpMethod::MonteCarlo),
        )
        .unwrap();
        assert_eq!(agg.failed_points, 0);
        assert!(agg
            .per_point
            .iter()
            .all(|p| p.margin.is_none() && p.error.is_some()));
    }

    #[test]
    fn per_point_csv_layout() {
        let m = linear(&[1.0, 0.0], 0.0);
        let data =
            Dataset::new(vec![vec![0.5, 0.0], vec![-0.25, 1.0]], vec![1, 0], vec![]).unwrap();
        let agg = aggregate(&m, &data, &settings(1.0, Region::Ball, VcpMethod::Analytic)).unwrap();
        let mut buf = Vec::new();
        write_per_point_csv(&agg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "point_index,margin,margin_method,p,stderr,samples,region"
        );
        assert!(lines[1].starts_with("0,0.5,exact-linear,"));
        assert!(lines[2].starts_with("1,0.25,exact-linear,"));
        assert_eq!(lines.len(), 3);
    }

    proptest! {
        #[test]
        fn gradient_margin_equals_exact_for_linear(
            w in prop::collection::vec(-3.0f64..3.0, 1..8),
            b in -2.0f64..2.0,
            seed in any::<u64>(),
        ) {
            prop_assume!(norm(&w) > 1e-3);
            let m = linear(&w, b);
            let mut r = rng::seeded(seed);
            let x: Vec<f64> = (0..w.len()).map(|_| f64::sample_standard_normal(&mut r)).collect();
            let a = margin_exact_linear(&m, &x).unwrap().value;
            let g = margin_gradient_estimate(&m, &x).unwrap().value;
            prop_assert!((a - g).abs() <= 1e-12);
        }

        #[test]
        fn analytic_ball_vcp_monotone_in_epsilon(gamma in 0.01f64..2.0, n in 1usize..12) {
            let m = linear(&vec![1.0; n], 0.0);
            let scale = (n as f64).sqrt();
            let mut x = vec![0.0; n];
            x[0] = gamma * scale;
            let mut prev = 0.0;
            for k in 1..=40 {
                let eps = 0.1 * k as f64;
                let p = vcp_analytic_linear(&m, &x, eps, Region::Ball).unwrap().p;
                prop_assert!(p >= prev);
                prev = p;
            }
        }

        /// The bound holds for n >= 3, where g is convex on (0, eps).
        #[test]
        fn jensen_on_linear_fixture(
            margins in prop::collection::vec(0.05f64..0.95, 2..30),
            n in 3usize..10,
        ) {
            let mut rows = Vec::new();
            for &g in &margins {
                let mut x = vec![0.0; n];
                x[0] = g;
                rows.push(x);
            }
            let m = rows.len();
            let data = Dataset::new(rows, vec![1; m], vec![]).unwrap();
            let mut w = vec![0.0; n];
            w[0] = 1.0;
            let agg = aggregate(&linear(&w, 0.0), &data, &settings(1.0, Region::Shell, VcpMethod::Analytic)).unwrap();
            prop_assert!(agg.mean_p >= agg.jensen_bound.unwrap() - 1e-9);
        }
    }
}
