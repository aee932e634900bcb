//! Scratch probe (dev only): bandwidth landscape on one II.5 replicate.

use roma::kernels::KernelSpec;
use roma::object_spaces::{MetricKind, ObjectPoint, QuantileGridSpec};
use roma::simulation::{generate, true_effects, KernelMode, ScenarioId, ScenarioSpec};
use roma::tuning::{gcv_outcome, gcv_phi, default_eps_grid_for};
use roma::{fit, bandwidth_grid};

fn main() {
    let scenario: String = std::env::args().nth(1).unwrap_or_else(|| "II.5".into());
    let id = ScenarioId::parse(&scenario).unwrap();
    let spec = ScenarioSpec::new(id, 100, 100, 21, KernelMode::Nonlinear).unwrap();
    let data = generate(&spec).unwrap();
    let truth = true_effects(&spec, 1.0, 0.0, 100_000).unwrap();
    let grid = QuantileGridSpec::midpoints(100);

    let bx_center = bandwidth_grid(&data.x, MetricKind::Euclidean, 1).unwrap()[0];
    let bm_center = bandwidth_grid(&data.m, MetricKind::Wasserstein2, 1).unwrap()[0];
    println!("median-heuristic centers: bx {bx_center:.3} bm {bm_center:.3}");
    println!("truth: nde {:.3} nie {:.3} te {:.3}", truth.nde.coords[0], truth.nie.coords[0], truth.te.coords[0]);

    for fx in [0.01, 0.1, 1.0, 4.0, 10.0] {
        for fm in [0.01, 0.1, 1.0, 10.0] {
            let bx = bx_center * fx;
            let bm = bm_center * fm;
            let kx = KernelSpec::gaussian(MetricKind::Euclidean, bx).unwrap();
            let km = KernelSpec::gaussian(MetricKind::Wasserstein2, bm).unwrap();

            // GCV-minimal eps for each criterion.
            let kxg = roma::gram(&kx, &data.x).unwrap();
            let eps_grid = default_eps_grid_for(kxg.entries(), 15);
            let (mut best_phi, mut best_eps) = (f64::INFINITY, eps_grid[0]);
            for &e in &eps_grid {
                if let Ok(s) = gcv_phi(&data.x, &data.m, &kx, &km, e) {
                    if s < best_phi {
                        best_phi = s;
                        best_eps = e;
                    }
                }
            }
            let kmg = roma::gram(&km, &data.m).unwrap();
            let kz = kxg.entries() + kmg.entries();
            let ets = default_eps_grid_for(&kz, 15);
            let (mut best_out, mut best_et) = (f64::INFINITY, ets[0]);
            for &e in &ets {
                if let Ok(s) = gcv_outcome(&data.x, &data.m, &data.y, &kx, &km, e, &grid) {
                    if s < best_out {
                        best_out = s;
                        best_et = e;
                    }
                }
            }
            let model = fit(&data.x, &data.m, &data.y, kx, km, best_eps, best_et, &grid).unwrap();
            let x1 = ObjectPoint::scalar(1.0);
            let x0 = ObjectPoint::scalar(0.0);
            let nde = model.estimate_nde(&x1, &x0).unwrap().value;
            let nie = model.estimate_nie(&x1, &x0).unwrap().value;
            let e_nde = nde.sub(&truth.nde).unwrap().norm();
            let e_nie = nie.sub(&truth.nie).unwrap().norm();
            println!(
                "bx {bx:8.3} bm {bm:8.4} | gcv_phi {best_phi:9.4} (eps {best_eps:.2e}) gcv_out {best_out:9.4} (et {best_et:.2e}) | err nde {e_nde:6.3} nie {e_nie:6.3}"
            );
        }
    }
}
