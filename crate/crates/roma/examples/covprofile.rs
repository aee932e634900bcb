//! Scratch per-gridpoint coverage profile (dev only).

use roma::inference::{ci_nde_with, ci_nie_with, residual_covariances};
use roma::object_spaces::{HilbertVector, ObjectPoint, QuantileGridSpec};
use roma::simulation::{
    generate_for_stream, true_effects, KernelMode, ScenarioId, ScenarioSpec,
};
use roma::tuning::{select, KernelFamily, SelectConfig};
use roma::MetricKind;

fn main() {
    let scenario: String = std::env::args().nth(1).unwrap_or_else(|| "I.4".into());
    let reps: usize = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(30);
    let m: usize = std::env::args().nth(3).and_then(|v| v.parse().ok()).unwrap_or(100);
    let id = ScenarioId::parse(&scenario).unwrap();
    let spec = ScenarioSpec::new(id, 100, m, 7, KernelMode::Nonlinear).unwrap();
    let grid = QuantileGridSpec::midpoints(100);
    let truth = true_effects(&spec, 1.0, 0.0, 150_000).unwrap();
    let truth_nde = truth.nde.grid_values().unwrap();
    let truth_nie = truth.nie.grid_values().unwrap();

    let mut cover_nde = vec![0usize; 100];
    let mut cover_nie = vec![0usize; 100];
    let mut halfw_nde = vec![0f64; 100];
    let mut err_nde = vec![0f64; 100];
    let mut nie_centers: Vec<Vec<f64>> = vec![Vec::new(); 100];
    let mut nde_centers: Vec<Vec<f64>> = vec![Vec::new(); 100];
    let mut halfw_nie = vec![0f64; 100];
    for rep in 0..reps as u64 {
        let data = generate_for_stream(&spec, rep).unwrap();
        let fixed_bw = std::env::var("ROMA_FIXED_BW").is_ok();
        let (fx, fm) = if fixed_bw {
            let bx = roma::bandwidth_grid(&data.x, MetricKind::Euclidean, 1).unwrap();
            let bm = roma::bandwidth_grid(&data.m, MetricKind::Wasserstein2, 1).unwrap();
            (
                KernelFamily::GaussianGrid { metric: MetricKind::Euclidean, bandwidths: bx },
                KernelFamily::GaussianGrid { metric: MetricKind::Wasserstein2, bandwidths: bm },
            )
        } else {
            (
                KernelFamily::GaussianAuto { metric: MetricKind::Euclidean },
                KernelFamily::GaussianAuto { metric: MetricKind::Wasserstein2 },
            )
        };
        let sel = select(
            &data.x,
            &data.m,
            &data.y,
            &fx,
            &fm,
            &grid,
            &SelectConfig { exhaustive: true, eps_grid_size: 15, ..Default::default() },
        )
        .unwrap();
        let deflate: f64 = std::env::var("ROMA_ET_DEFLATE")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(1.0);
        let model = roma::fit(
            &data.x,
            &data.m,
            &data.y,
            sel.kernel_x,
            sel.kernel_m,
            sel.eps * deflate,
            sel.eps_tilde * deflate,
            &grid,
        )
        .unwrap();
        let rc = residual_covariances(&model).unwrap();
        let x1 = ObjectPoint::scalar(1.0);
        let x0 = ObjectPoint::scalar(0.0);
        for k in 0..100 {
            let v = HilbertVector::pointwise_direction(&grid, k);
            let ci = ci_nde_with(&model, &rc, &x1, &x0, &v, 0.05).unwrap();
            if ci.covers(truth_nde[k]) {
                cover_nde[k] += 1;
            }
            halfw_nde[k] += ci.halfwidth;
            err_nde[k] += (ci.center - truth_nde[k]).abs();
            nde_centers[k].push(ci.center);
            let ci = ci_nie_with(&model, &rc, &x1, &x0, &v, 0.05).unwrap();
            if ci.covers(truth_nie[k]) {
                cover_nie[k] += 1;
            }
            nie_centers[k].push(ci.center);
            halfw_nie[k] += ci.halfwidth;
        }
    }
    println!("{} (m={m}, reps={reps}) per-decile coverage:", spec.id.label());
    println!("  t-bin | NDE cover | NIE cover | mean |err| NDE | mean halfwidth NDE");
    for b in 0..10 {
        let lo = b * 10;
        let hi = lo + 10;
        let c1: usize = cover_nde[lo..hi].iter().sum();
        let c2: usize = cover_nie[lo..hi].iter().sum();
        let e: f64 = err_nde[lo..hi].iter().sum::<f64>() / (10 * reps) as f64;
        let h: f64 = halfw_nde[lo..hi].iter().sum::<f64>() / (10 * reps) as f64;
        let sd = |vals: &[Vec<f64>]| -> f64 {
            let mut acc = 0.0;
            for k in lo..hi {
                let v = &vals[k];
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                acc += (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                    / (v.len() - 1) as f64)
                    .sqrt();
            }
            acc / 10.0
        };
        let sd_nde = sd(&nde_centers);
        let sd_nie = sd(&nie_centers);
        let h_nie: f64 = halfw_nie[lo..hi].iter().sum::<f64>() / (10 * reps) as f64;
        println!(
            "  {:4.2}-{:4.2} | {:.3} | {:.3} | {:.4} | {:.4} | sd/width NDE {:.2} NIE {:.2}",
            lo as f64 / 100.0,
            hi as f64 / 100.0,
            c1 as f64 / (10 * reps) as f64,
            c2 as f64 / (10 * reps) as f64,
            e,
            h,
            sd_nde / (h / 1.96),
            sd_nie / (h_nie / 1.96),
        );
    }
}
