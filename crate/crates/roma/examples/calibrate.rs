//! Scratch calibration driver (dev only).

use roma::simulation::{
    run_campaign, run_size_power, CampaignConfig, EffectChannel, KernelMode, ScenarioId,
    ScenarioSpec, SizePowerSpec, TuningMode,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("coverage");
    let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let m: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(100);
    let tuning = match args.get(4).map(|s| s.as_str()) {
        Some("pinned") => TuningMode::GcvPinnedBandwidths { eps_grid_size: 15 },
        _ => TuningMode::default(),
    };

    match which {
        "coverage_n" => {
            let n: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(100);
            for id in [ScenarioId::I1, ScenarioId::I2, ScenarioId::I3, ScenarioId::I4] {
                let mut spec = ScenarioSpec::new(id, n, m, 7, id.default_kernel_mode()).unwrap();
                spec.grid_size = 100;
                let mut cfg = CampaignConfig::new(reps);
                cfg.oracle_draws = 100_000;
                let t = std::time::Instant::now();
                let rep = run_campaign(&spec, &cfg).unwrap();
                println!(
                    "{:>5} n={} m={}: cover NDE {:.3} NIE {:.3} | mse nde {:.4} nie {:.4} | {:.0}s",
                    rep.scenario, n, m,
                    rep.coverage_nde, rep.coverage_nie,
                    rep.mse_nde.mean, rep.mse_nie.mean,
                    t.elapsed().as_secs_f64()
                );
            }
        }
        "coverage" => {
            let n: usize = std::env::var("ROMA_N").ok().and_then(|v| v.parse().ok()).unwrap_or(100);
            for id in [ScenarioId::I1, ScenarioId::I2, ScenarioId::I3, ScenarioId::I4, ScenarioId::II5] {
                let spec = ScenarioSpec::new(id, n, m, 7, id.default_kernel_mode()).unwrap();
                let mut cfg = CampaignConfig::new(reps);
                cfg.oracle_draws = 100_000;
                cfg.tuning = tuning.clone();
                let t = std::time::Instant::now();
                let rep = run_campaign(&spec, &cfg).unwrap();
                println!(
                    "{:>5}: cover NDE {:.3} NIE {:.3} | mse te {:.4} nde {:.4} nie {:.4} | rej {:.2}/{:.2} | fail {} | {:.1}s",
                    rep.scenario,
                    rep.coverage_nde,
                    rep.coverage_nie,
                    rep.mse_te.mean,
                    rep.mse_nde.mean,
                    rep.mse_nie.mean,
                    rep.rejection_nde,
                    rep.rejection_nie,
                    rep.failures,
                    t.elapsed().as_secs_f64()
                );
            }
        }
        "size" => {
            for (label, channel, amp) in [
                ("NDE null", EffectChannel::Direct, 0.0),
                ("NIE null", EffectChannel::Indirect, 0.0),
                ("NDE power", EffectChannel::Direct, 3.0),
                ("NIE power", EffectChannel::Indirect, 3.0),
            ] {
                let spec = SizePowerSpec {
                    channel,
                    amplitude: amp,
                    n: 100,
                    m,
                    seed: 13,
                    grid_size: 100,
                };
                let t = std::time::Instant::now();
                let rep = run_size_power(&spec, reps, 0.05, 100, &tuning).unwrap();
                let mut ps = rep.p_values.clone();
                ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let q = |f: f64| ps[((f * (ps.len() - 1) as f64).round() as usize).min(ps.len() - 1)];
                println!(
                    "{label}: rejection {:.3} (fail {}) | p deciles {:.3} {:.3} {:.3} {:.3} {:.3} | {:.1}s",
                    rep.rejection,
                    rep.failures,
                    q(0.05),
                    q(0.1),
                    q(0.25),
                    q(0.5),
                    q(0.9),
                    t.elapsed().as_secs_f64()
                );
            }
        }
        "mse" => {
            for (id, mode) in [
                (ScenarioId::II1, KernelMode::Linear),
                (ScenarioId::II2, KernelMode::Linear),
                (ScenarioId::II4, KernelMode::Linear),
                (ScenarioId::II5, KernelMode::Nonlinear),
                (ScenarioId::II7, KernelMode::Nonlinear),
            ] {
                let spec = ScenarioSpec::new(id, 100, 100, 7, mode).unwrap();
                let mut cfg = CampaignConfig::new(reps);
                cfg.oracle_draws = 100_000;
                cfg.tuning = tuning.clone();
                let t = std::time::Instant::now();
                let rep = run_campaign(&spec, &cfg).unwrap();
                println!(
                    "{:>5} {}: mse te {:.4} ({:.4}) nde {:.4} ({:.4}) nie {:.4} ({:.4}) | {:.1}s",
                    rep.scenario,
                    rep.kernel_mode,
                    rep.mse_te.mean,
                    rep.mse_te.se,
                    rep.mse_nde.mean,
                    rep.mse_nde.se,
                    rep.mse_nie.mean,
                    rep.mse_nie.se,
                    t.elapsed().as_secs_f64()
                );
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
