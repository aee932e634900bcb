//! Scratch variance decomposition for the NIE interval (dev only).
//!
//! Freezes one I.4-style design, then (a) resamples only the outcome noise,
//! (b) resamples mediators and outcomes, and compares the empirical sd of
//! ⟨NIE-hat, v⟩ with the two pooled-variance terms.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use roma::inference::{residual_covariances, variance_functional_x, variance_functional_z};
use roma::kernels::KernelSpec;
use roma::object_spaces::{HilbertVector, MetricKind, ObjectPoint, QuantileGridSpec};
use roma::statrs_normal_quantiles;

fn main() {
    let n = 100;
    let m = 100;
    let grid = QuantileGridSpec::midpoints(100);
    let z = statrs_normal_quantiles(&grid);
    let e = std::f64::consts::E;
    let _ = e;

    let mut rng = ChaCha12Rng::seed_from_u64(5150);
    let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let h1 = |x: f64| -(-x * x).exp() + 2.0;

    // I.4: mu_m = U (independent of X), sd_m = 0.5;
    //      mu_y = ip(M, N(0.7, 0.5)) + noise(0.1), sd_y = sqrt(h1(x)).
    let gen_mediators = |rng: &mut ChaCha12Rng| -> (Vec<f64>, Vec<ObjectPoint>) {
        let mut mus = Vec::with_capacity(n);
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let mu: f64 = rng.gen_range(-1.0..1.0);
            mus.push(mu);
            let draws: Vec<f64> =
                (0..m).map(|_| mu + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
            pts.push(ObjectPoint::empirical_distribution(draws).unwrap());
        }
        (mus, pts)
    };
    let gen_outcomes = |mus: &[f64], rng: &mut ChaCha12Rng| -> Vec<ObjectPoint> {
        xs.iter()
            .zip(mus.iter())
            .map(|(&x, &mu_m)| {
                let ip: f64 = z
                    .iter()
                    .map(|&zz| (mu_m + 0.5 * zz) * (0.7 + 0.5f64.sqrt() * zz))
                    .sum::<f64>()
                    / z.len() as f64;
                let mu_y = ip + 0.1 * rng.sample::<f64, _>(StandardNormal);
                let sd = h1(x).sqrt();
                let draws: Vec<f64> =
                    (0..m).map(|_| mu_y + sd * rng.sample::<f64, _>(StandardNormal)).collect();
                ObjectPoint::empirical_distribution(draws).unwrap()
            })
            .collect()
    };

    let xp: Vec<ObjectPoint> = xs.iter().map(|&v| ObjectPoint::scalar(v)).collect();
    let (mus0, med0) = gen_mediators(&mut rng);
    let kx = KernelSpec::gaussian(MetricKind::Euclidean, 0.8).unwrap();
    let km = KernelSpec::gaussian(MetricKind::Wasserstein2, 0.5).unwrap();
    let (eps, eps_t) = (0.1, 0.02);
    let x1 = ObjectPoint::scalar(1.0);
    let x0 = ObjectPoint::scalar(0.0);
    let k_mid = 50;
    let v: DVector<f64> = HilbertVector::pointwise_direction(&grid, k_mid);

    // Reference fit for the claimed variance terms.
    let y0 = gen_outcomes(&mus0, &mut rng);
    let model = roma::fit(&xp, &med0, &y0, kx.clone(), km.clone(), eps, eps_t, &grid).unwrap();
    let rc = residual_covariances(&model).unwrap();
    let d_phi = model.phi_contrast_eval(&x1, &x0).unwrap();
    let theta_z = variance_functional_z(&model, &d_phi).unwrap();
    let d_x = model.exposure_contrast_eval(&x1, &x0).unwrap();
    let theta_x = variance_functional_x(&model, &d_x).unwrap();
    let quad_w = (v.transpose() * &rc.sigma_w_hat * &v)[(0, 0)].max(0.0);
    let quad_wc = (v.transpose() * &rc.sigma_w_check * &v)[(0, 0)].max(0.0);
    let quad_r = (v.transpose() * &rc.sigma_r_hat * &v)[(0, 0)].max(0.0);
    let term1 = theta_z * quad_w / n as f64;
    let term1c = theta_z * quad_wc / n as f64;
    let term2 = theta_x * quad_r / n as f64;
    println!("claimed: term1 (W) {:.3e} [check-form {:.3e}], term2 (U) {:.3e}, total sd {:.4}",
        term1, term1c, term2, (term1 + term2).sqrt());

    let reps = 200;
    // (a) outcome-noise-only resampling: fixed X, fixed mediators.
    let mut vals = Vec::with_capacity(reps);
    for _ in 0..reps {
        let y = gen_outcomes(&mus0, &mut rng);
        let f = roma::fit(&xp, &med0, &y, kx.clone(), km.clone(), eps, eps_t, &grid).unwrap();
        let nie = f.estimate_nie(&x1, &x0).unwrap();
        vals.push(nie.value.coords.dot(&v));
    }
    let sd_w = sd(&vals);
    println!("empirical W-only sd {:.4}  (claimed term1 sd {:.4})", sd_w, term1.sqrt());

    // (b) full resampling of mediators and outcomes (X fixed).
    let mut vals = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (mus, med) = gen_mediators(&mut rng);
        let y = gen_outcomes(&mus, &mut rng);
        let f = roma::fit(&xp, &med, &y, kx.clone(), km.clone(), eps, eps_t, &grid).unwrap();
        let nie = f.estimate_nie(&x1, &x0).unwrap();
        vals.push(nie.value.coords.dot(&v));
    }
    let sd_full = sd(&vals);
    println!(
        "empirical full sd {:.4}  (claimed pooled sd {:.4}); U-part implied {:.4} vs term2 sd {:.4}",
        sd_full,
        (term1 + term2).sqrt(),
        (sd_full * sd_full - sd_w * sd_w).max(0.0).sqrt(),
        term2.sqrt()
    );
}

fn sd(vals: &[f64]) -> f64 {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}
