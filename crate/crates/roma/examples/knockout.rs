//! Scratch knockout experiment (dev only): isolate the source of null
//! over-rejection by (A) fixing hyperparameters, (B) replacing outcomes by
//! pure iid noise so no structural leakage exists.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use roma::inference::{residual_covariances, test_nde_with, test_nie_with};
use roma::kernels::KernelSpec;
use roma::object_spaces::{MetricKind, ObjectPoint, QuantileGridSpec};
use roma::simulation::{generate, KernelMode, ScenarioId, ScenarioSpec};
use roma::{fit, EffectChannel};

fn main() {
    let reps: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(100);
    let n = 100;
    let m: usize = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(100);
    let grid = QuantileGridSpec::midpoints(100);
    let q = 0.05;

    // A: Direct-null structure with FIXED hyperparameters.
    for (label, pure_noise) in [("A: fixed hp, structured null", false), ("B: fixed hp, iid-noise outcomes", true)] {
        let mut rej_nde = 0usize;
        let mut rej_nie = 0usize;
        for rep in 0..reps {
            let mut rng = ChaCha12Rng::seed_from_u64(777 + rep as u64);
            // Direct-null DGP pieces generated by hand to allow knockout.
            let e = std::f64::consts::E;
            let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut med = Vec::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            let normal_q: Vec<f64> = grid
                .levels()
                .iter()
                .map(|&t| statrs::distribution::ContinuousCDF::inverse_cdf(
                    &statrs::distribution::Normal::new(0.0, 1.0).unwrap(), t))
                .collect();
            for &x in &xs {
                let g1 = e / (1.0 + (-x * x).exp());
                let u: f64 = rng.gen_range(-1.0..1.0);
                let mu_m = g1 + u;
                let draws: Vec<f64> =
                    (0..m).map(|_| mu_m + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
                med.push(ObjectPoint::empirical_distribution(draws).unwrap());
                if pure_noise {
                    let mu_y: f64 = 0.3 * rng.sample::<f64, _>(StandardNormal);
                    let draws: Vec<f64> =
                        (0..m).map(|_| mu_y + rng.sample::<f64, _>(StandardNormal)).collect();
                    out.push(ObjectPoint::empirical_distribution(draws).unwrap());
                } else {
                    // sigma_y = ip(M, N(0.7, 0.5)) on the grid, mu_y = 2 + noise
                    let ip: f64 = normal_q
                        .iter()
                        .map(|&z| (mu_m + 0.5 * z) * (0.7 + 0.5f64.sqrt() * z))
                        .sum::<f64>()
                        / normal_q.len() as f64;
                    let mu_y = 2.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
                    let sd = ip.max(0.0).sqrt();
                    let draws: Vec<f64> =
                        (0..m).map(|_| mu_y + sd * rng.sample::<f64, _>(StandardNormal)).collect();
                    out.push(ObjectPoint::empirical_distribution(draws).unwrap());
                }
            }
            let xp: Vec<ObjectPoint> = xs.iter().map(|&v| ObjectPoint::scalar(v)).collect();
            let kx = KernelSpec::gaussian(MetricKind::Euclidean, 0.5).unwrap();
            let km = KernelSpec::gaussian(MetricKind::Wasserstein2, 0.05).unwrap();
            let model = fit(&xp, &med, &out, kx, km, 0.05, 0.05, &grid).unwrap();
            let rc = residual_covariances(&model).unwrap();
            let x1 = ObjectPoint::scalar(1.0);
            let x0 = ObjectPoint::scalar(0.0);
            let t1 = test_nde_with(&model, &rc, &x1, &x0, 100).unwrap();
            let t2 = test_nie_with(&model, &rc, &x1, &x0, 100).unwrap();
            if t1.p_value < q {
                rej_nde += 1;
            }
            if t2.p_value < q {
                rej_nie += 1;
            }
        }
        println!(
            "{label}: NDE rejection {:.3}, NIE rejection {:.3}",
            rej_nde as f64 / reps as f64,
            rej_nie as f64 / reps as f64
        );
    }
    // C: structured direct-null, fixed bandwidths, GCV-selected eps/eps_tilde.
    // D: structured direct-null, GCV bandwidths and eps (full pipeline).
    for (label, auto_bw, df_adjust, narrow) in [
        ("C: fixed bw, GCV eps", false, false, false),
        ("D: GCV bw and eps", true, false, false),
        ("E: GCV bw+eps, df-adjusted spectrum", true, true, false),
        ("F: GCV bw+eps, narrow eps grid", true, false, true),
        ("G: E+F", true, true, true),
        ("H: narrow bw span + df-adjust", false, true, false),
    ] {
        let mut rej_nde = 0usize;
        for rep in 0..reps {
            let mut rng = ChaCha12Rng::seed_from_u64(777 + rep as u64);
            let e = std::f64::consts::E;
            let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut med = Vec::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            let normal_q: Vec<f64> = grid
                .levels()
                .iter()
                .map(|&t| statrs::distribution::ContinuousCDF::inverse_cdf(
                    &statrs::distribution::Normal::new(0.0, 1.0).unwrap(), t))
                .collect();
            for &x in &xs {
                let g1 = e / (1.0 + (-x * x).exp());
                let u: f64 = rng.gen_range(-1.0..1.0);
                let mu_m = g1 + u;
                let draws: Vec<f64> =
                    (0..m).map(|_| mu_m + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
                med.push(ObjectPoint::empirical_distribution(draws).unwrap());
                let ip: f64 = normal_q
                    .iter()
                    .map(|&z| (mu_m + 0.5 * z) * (0.7 + 0.5f64.sqrt() * z))
                    .sum::<f64>()
                    / normal_q.len() as f64;
                let mu_y = 2.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
                let sd = ip.max(0.0).sqrt();
                let draws: Vec<f64> =
                    (0..m).map(|_| mu_y + sd * rng.sample::<f64, _>(StandardNormal)).collect();
                out.push(ObjectPoint::empirical_distribution(draws).unwrap());
            }
            let xp: Vec<ObjectPoint> = xs.iter().map(|&v| ObjectPoint::scalar(v)).collect();
            let narrow_bw = label.starts_with("H");
            let (fx, fm) = if narrow_bw {
                let bx = roma::bandwidth_grid(&xp, MetricKind::Euclidean, 1).unwrap()[0];
                let bm = roma::bandwidth_grid(&med, MetricKind::Wasserstein2, 1).unwrap()[0];
                (
                    roma::tuning::KernelFamily::GaussianGrid {
                        metric: MetricKind::Euclidean,
                        bandwidths: (0..5).map(|i| bx * 10f64.powf(-1.0 + 2.0 * i as f64 / 4.0)).collect(),
                    },
                    roma::tuning::KernelFamily::GaussianGrid {
                        metric: MetricKind::Wasserstein2,
                        bandwidths: (0..5).map(|i| bm * 10f64.powf(-1.0 + 2.0 * i as f64 / 4.0)).collect(),
                    },
                )
            } else if auto_bw {
                (
                    roma::tuning::KernelFamily::GaussianAuto { metric: MetricKind::Euclidean },
                    roma::tuning::KernelFamily::GaussianAuto { metric: MetricKind::Wasserstein2 },
                )
            } else {
                (
                    roma::tuning::KernelFamily::Fixed(
                        KernelSpec::gaussian(MetricKind::Euclidean, 0.5).unwrap(),
                    ),
                    roma::tuning::KernelFamily::Fixed(
                        KernelSpec::gaussian(MetricKind::Wasserstein2, 0.05).unwrap(),
                    ),
                )
            };
            let sel = roma::tuning::select(
                &xp,
                &med,
                &out,
                &fx,
                &fm,
                &grid,
                &roma::tuning::SelectConfig {
                    eps_grid_size: 15,
                    bandwidth_grid_size: 5,
                    eps_tilde_grid: if narrow {
                        Some((0..15).map(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / 14.0)).collect())
                    } else {
                        None
                    },
                    ..Default::default()
                },
            )
            .unwrap();
            let model =
                fit(&xp, &med, &out, sel.kernel_x, sel.kernel_m, sel.eps, sel.eps_tilde, &grid)
                    .unwrap();
            let rc = residual_covariances(&model).unwrap();
            let x1 = ObjectPoint::scalar(1.0);
            let x0 = ObjectPoint::scalar(0.0);
            let t1 = test_nde_with(&model, &rc, &x1, &x0, 100).unwrap();
            let p = if df_adjust {
                let factor = n as f64 / (n as f64 - rc.df);
                let spectrum: Vec<f64> = t1.spectrum.iter().map(|l| l * factor).collect();
                1.0 - roma::weighted_chisq_cdf(&spectrum, t1.statistic).unwrap().p
            } else {
                t1.p_value
            };
            if p < q {
                rej_nde += 1;
            }
        }
        println!("{label}: NDE rejection {:.3}", rej_nde as f64 / reps as f64);
    }
    let _ = (generate, ScenarioSpec::new(ScenarioId::I1, 10, 10, 1, KernelMode::Linear));
    let _ = EffectChannel::Direct;
    let _: DVector<f64> = DVector::zeros(1);
}
