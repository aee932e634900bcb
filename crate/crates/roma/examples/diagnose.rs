//! Scratch diagnosis of one null replicate (dev only).

use roma::inference::{residual_covariances, test_nde_with, variance_functional_z};
use roma::simulation::{EffectChannel, SizePowerSpec};
use roma::ObjectPoint;

fn main() {
    let spec = SizePowerSpec {
        channel: EffectChannel::Direct,
        amplitude: 0.0,
        n: 100,
        m: 100,
        seed: 13,
        grid_size: 100,
    };
    for rep in 0..6u64 {
        let (data, model) = roma::simulation::debug_replicate(&spec, rep).unwrap();
        let _ = data;
        let rc = residual_covariances(&model).unwrap();
        let x = ObjectPoint::scalar(1.0);
        let xs = ObjectPoint::scalar(0.0);
        let t = test_nde_with(&model, &rc, &x, &xs, 100).unwrap();
        let d = model.exposure_contrast_eval(&x, &xs).unwrap();
        let theta = variance_functional_z(&model, &d).unwrap();
        let tr_check: f64 = (0..model.outcome_dim()).map(|i| rc.sigma_w_check[(i, i)]).sum();
        let tr_hat: f64 = (0..model.outcome_dim()).map(|i| rc.sigma_w_hat[(i, i)]).sum();
        let spectrum_sum: f64 = t.spectrum.iter().sum();
        println!(
            "rep {rep}: bw_x {:?} bw_m {:?} eps {:.3e} eps_t {:.3e} df {:.1} | theta {:.3e} T {:.3} p {:.4} | tr_check {:.4} tr_hat {:.4} specsum {:.4} lam1 {:.4}",
            model.kernel_x().bandwidth(),
            model.kernel_m().bandwidth(),
            model.sys_x().eps(),
            model.sys_z().eps(),
            rc.df,
            theta,
            t.statistic,
            t.p_value,
            tr_check,
            tr_hat,
            spectrum_sum,
            t.spectrum[0],
        );
    }
}
