//! Quick oracle-agreement checks runnable from the command line.

use serde::Serialize;

use crate::dataset::ExpansionSpec;
use crate::geom::{
    g_of_mean_margin, sample_unit_direction, vcp_linear_uniform, vcp_nonlinear_asymptotic,
};
use crate::model::{Activation, LinearModel, MlpModel, ScoringModel};
use crate::rng;
use crate::scalar::Scalar;
use crate::specfun::{reg_inc_beta, BetaParams};
use crate::vcp::{
    margin_exact_linear, margin_gradient_estimate, rescale_epsilon, vcp_monte_carlo, Region,
};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

fn inc_beta_identities(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let x = f64::sample_unit(&mut r);
        let a = 0.25 + 29.75 * f64::sample_unit(&mut r);
        let b = 0.25 + 29.75 * f64::sample_unit(&mut r);
        let p = BetaParams::new(a, b).expect("positive");
        let lhs = reg_inc_beta(x, p).unwrap_or(f64::NAN);
        let rhs = 1.0 - reg_inc_beta(1.0 - x, p.swapped()).unwrap_or(f64::NAN);
        let unit =
            (reg_inc_beta(x, BetaParams::new(1.0, 1.0).expect("positive")).unwrap_or(f64::NAN) - x)
                .abs();
        let half =
            (reg_inc_beta(0.5, BetaParams::new(a, a).expect("positive")).unwrap_or(f64::NAN) - 0.5)
                .abs();
        worst = worst.max((lhs - rhs).abs()).max(unit).max(half);
    }
    check(
        "incomplete-beta-identities",
        worst <= 1e-12,
        format!("max abs error {worst:e}"),
    )
}

fn closed_form_vs_monte_carlo(seed: u64) -> Check {
    let mut within = 0;
    let mut cells = 0;
    for n in [2usize, 3, 5] {
        for ratio in [0.2, 0.5, 0.8] {
            cells += 1;
            let w: Vec<f64> = sample_unit_direction(n, &mut rng::seeded(seed ^ n as u64));
            let model = LinearModel::new(w, -ratio).expect("finite");
            let x = vec![0.0; n];
            let exact = vcp_linear_uniform(ratio, 1.0, n)
                .map(|v| v.p)
                .unwrap_or(f64::NAN);
            let mut r = rng::stream(seed, cells);
            if let Ok(est) =
                vcp_monte_carlo(&model, &x, 1.0, Region::Shell, Some(ratio), 20_000, &mut r)
            {
                if (est.p - exact).abs() <= 3.0 * est.stderr {
                    within += 1;
                }
            }
        }
    }
    check(
        "closed-form-vs-monte-carlo",
        within + 1 >= cells,
        format!("{within}/{cells} cells within 3 standard errors"),
    )
}

fn limits() -> Check {
    let mut ok = true;
    for n in 1..=20 {
        let p = vcp_linear_uniform(1e-9, 1.0, n)
            .map(|v| v.p)
            .unwrap_or(f64::NAN);
        ok &= (0.4999..=0.5).contains(&p);
        if n >= 2 {
            let q = vcp_linear_uniform(1.0 - 1e-9, 1.0, n)
                .map(|v| v.p)
                .unwrap_or(f64::NAN);
            ok &= q <= 1e-3;
        }
    }
    check(
        "limits",
        ok,
        "gamma -> 0 gives 1/2, gamma -> epsilon gives 0".into(),
    )
}

fn asymptotic_ratio() -> Check {
    let mut worst = 0.0f64;
    for n in [2usize, 3, 5] {
        let eps = 1.0 + 1e-5;
        let exact = vcp_linear_uniform(1.0, eps, n)
            .map(|v| v.p)
            .unwrap_or(f64::NAN);
        let approx = vcp_nonlinear_asymptotic(1.0, eps, n).unwrap_or(f64::NAN);
        worst = worst.max((approx / exact - 1.0).abs());
    }
    check(
        "asymptotic-ratio",
        worst <= 0.01,
        format!("max |ratio - 1| = {worst:e} at delta 1e-5"),
    )
}

fn g_monotone() -> Check {
    let mut ok = true;
    for n in [2usize, 5, 10, 50] {
        for eps in [1.0, 35.0] {
            let g: Vec<f64> = (1..=1000)
                .map(|j| g_of_mean_margin(eps * j as f64 / 1001.0, eps, n).unwrap_or(f64::NAN))
                .collect();
            ok &= g.windows(2).all(|w| w[1] < w[0]);
        }
    }
    check("g-strictly-decreasing", ok, "1000-point grids".into())
}

fn gradient_check(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let mut worst = 0.0f64;
    for k in 0..5 {
        let m = match MlpModel::<f64>::init_uniform(9, &[100, 30], Activation::Tanh, 0.0, seed + k)
        {
            Ok(m) => m,
            Err(e) => return check("input-gradient", false, e.to_string()),
        };
        let x: Vec<f64> = (0..9)
            .map(|_| f64::sample_standard_normal(&mut r))
            .collect();
        let g = m.input_gradient_unchecked(&x);
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for j in 0..9 {
            let mut up = x.clone();
            let mut down = x.clone();
            up[j] += 1e-5;
            down[j] -= 1e-5;
            let fd = (m.score_unchecked(&up) - m.score_unchecked(&down)) / 2e-5;
            diff += (g[j] - fd).powi(2);
            scale += fd * fd;
        }
        // Relative error of the whole gradient vector.
        worst = worst.max(diff.sqrt() / scale.sqrt().max(1e-8));
    }
    check(
        "input-gradient",
        worst <= 1e-4,
        format!("max relative error {worst:e}"),
    )
}

fn margins() -> Check {
    let m = LinearModel::new(vec![3.0, 4.0], 0.0).expect("finite");
    let exact = margin_exact_linear(&m, &[1.0, 1.0])
        .map(|e| e.value)
        .unwrap_or(f64::NAN);
    let grad = margin_gradient_estimate(&m, &[1.0, 1.0])
        .map(|e| e.value)
        .unwrap_or(f64::NAN);
    check(
        "linear-margin",
        (exact - 1.4).abs() < 1e-12 && (grad - exact).abs() < 1e-12,
        format!("exact {exact}, gradient {grad}"),
    )
}

fn combinatorics() -> Check {
    let dim = ExpansionSpec::new(9, 6, true)
        .map(|s| s.output_dim)
        .unwrap_or(0);
    let eps = rescale_epsilon(1.5, 9, 5005).unwrap_or(f64::NAN);
    check(
        "expansion-and-rescale",
        dim == 5005 && (eps - 35.37).abs() <= 0.01,
        format!("dimension {dim}, rescaled epsilon {eps}"),
    )
}

pub fn run_selftest(seed: u64) -> Vec<Check> {
    vec![
        inc_beta_identities(seed),
        closed_form_vs_monte_carlo(seed),
        limits(),
        asymptotic_ratio(),
        g_monotone(),
        gradient_check(seed),
        margins(),
        combinatorics(),
    ]
}
