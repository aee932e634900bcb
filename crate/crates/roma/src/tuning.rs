//! Generalized cross-validation for the two regularization constants and
//! the Gaussian kernel bandwidths.
//!
//! Both criteria are exact GCV scores of linear smoothers. The mediator
//! model smooths kernel sections with W = (1/n)11ᵀ + G_X(G_X + εI)⁻¹, so
//!
//!   GCV(ε) = (1/n) Σᵢ ‖τ_M(Mᵢ) − Φ̂(Xᵢ)‖²  /  (1 − df(ε)/n)²,
//!
//! with df(ε) = tr[QG_X(G_X+εI)⁻¹ + 11ᵀ/n] = tr[G_X(G_X+εI)⁻¹] + 1, and
//! the squared RKHS residual norms computed through Gram identities.
//! The outcome model scores ε̃ analogously with G_Z and the embedded
//! outcomes. Candidates whose degrees of freedom reach n are rejected.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RomaError};
use crate::gram_algebra::center;
use crate::kernels::{bandwidth_grid, gram, KernelSpec};
use crate::object_spaces::{embed_outcome, MetricKind, ObjectPoint, QuantileGridSpec};

/// One evaluated tuning candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcvCandidate {
    pub eps: f64,
    pub bandwidth_x: Option<f64>,
    pub bandwidth_m: Option<f64>,
}

/// Grid of evaluated candidates with their scores and the argmin.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GcvTrace {
    pub candidates: Vec<GcvCandidate>,
    pub scores: Vec<f64>,
    pub argmin: usize,
}

impl GcvTrace {
    pub fn best(&self) -> (&GcvCandidate, f64) {
        (&self.candidates[self.argmin], self.scores[self.argmin])
    }
}

/// Kernel search space for one variable.
#[derive(Clone, Debug)]
pub enum KernelFamily {
    /// A fully specified kernel; nothing to search.
    Fixed(KernelSpec),
    /// Gaussian RBF with bandwidths from the median heuristic grid.
    GaussianAuto { metric: MetricKind },
    /// Gaussian RBF over an explicit bandwidth grid.
    GaussianGrid { metric: MetricKind, bandwidths: Vec<f64> },
}

/// Tuning configuration.
#[derive(Clone, Debug)]
pub struct SelectConfig {
    /// Explicit ε grid; defaults to 20 log-spaced points in
    /// [10⁻⁶, 1]·tr(G_X)/n.
    pub eps_grid: Option<Vec<f64>>,
    /// Explicit ε̃ grid; defaults to the same recipe on G_Z.
    pub eps_tilde_grid: Option<Vec<f64>>,
    pub eps_grid_size: usize,
    pub bandwidth_grid_size: usize,
    /// When set, kernel bandwidths are scored by the sum of the two GCV
    /// minima instead of the mediator criterion alone.
    pub exhaustive: bool,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            eps_grid: None,
            eps_tilde_grid: None,
            eps_grid_size: 20,
            bandwidth_grid_size: 5,
            exhaustive: false,
        }
    }
}

/// Selected kernels and regularization constants with both score traces.
#[derive(Clone, Debug)]
pub struct Selection {
    pub kernel_x: KernelSpec,
    pub kernel_m: KernelSpec,
    pub eps: f64,
    pub eps_tilde: f64,
    pub trace_phi: GcvTrace,
    pub trace_outcome: GcvTrace,
}

/// Default ε grid: log-spaced in [10⁻⁶, 1] times the Gram scale tr(G)/n.
pub fn default_eps_grid(g: &DMatrix<f64>, size: usize) -> Vec<f64> {
    let anchor = (g.trace() / g.nrows() as f64).max(f64::MIN_POSITIVE);
    if size == 1 {
        return vec![anchor];
    }
    (0..size)
        .map(|i| anchor * 10f64.powf(-6.0 + 6.0 * i as f64 / (size - 1) as f64))
        .collect()
}

/// Shared pieces of the mediator-model score for one (G_X, ε) pair.
struct PhiPieces {
    /// (I − W)², with W the in-sample smoother.
    e2: DMatrix<f64>,
    denom: f64,
}

fn phi_pieces(gx: &DMatrix<f64>, eps: f64) -> Result<PhiPieces> {
    let n = gx.nrows();
    let nf = n as f64;
    let mut reg = gx.clone();
    for i in 0..n {
        reg[(i, i)] += eps;
    }
    let chol = Cholesky::new(reg)
        .ok_or_else(|| RomaError::Numerical("Cholesky failed in GCV scoring".into()))?;
    let a = chol.solve(gx);
    let df = a.trace() + 1.0;
    if !(df < nf) {
        return Err(RomaError::SaturatedModel(format!(
            "effective degrees of freedom {df} reach n = {n} at eps = {eps}"
        )));
    }
    // E = Q − G_X(G_X+εI)⁻¹ is the residual smoother.
    let mut e = -a;
    for i in 0..n {
        for j in 0..n {
            e[(i, j)] += if i == j { 1.0 - 1.0 / nf } else { -1.0 / nf };
        }
    }
    let e2 = &e * &e;
    let denom = (1.0 - df / nf) * (1.0 - df / nf);
    Ok(PhiPieces { e2, denom })
}

fn phi_score(pieces: &PhiPieces, km: &DMatrix<f64>) -> f64 {
    let n = km.nrows() as f64;
    let numerator = km.iter().zip(pieces.e2.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
    numerator / pieces.denom
}

/// GCV score of the mediator model at one ε candidate.
pub fn gcv_phi(
    x: &[ObjectPoint],
    m: &[ObjectPoint],
    kernel_x: &KernelSpec,
    kernel_m: &KernelSpec,
    eps: f64,
) -> Result<f64> {
    let kx = gram(kernel_x, x)?;
    let km = gram(kernel_m, m)?;
    let gx = center(kx.entries());
    let pieces = phi_pieces(&gx, eps)?;
    Ok(phi_score(&pieces, km.entries()))
}

fn embed_matrix(y: &[ObjectPoint], grid: &QuantileGridSpec) -> Result<DMatrix<f64>> {
    let first = embed_outcome(&y[0], grid)?;
    let d = first.dim();
    let mut hv = DMatrix::zeros(y.len(), d);
    for (i, yi) in y.iter().enumerate() {
        let v = embed_outcome(yi, grid)?;
        if v.dim() != d {
            return Err(RomaError::Dimension(format!("outcome {i} embeds to a different dimension")));
        }
        hv.row_mut(i).copy_from(&v.coords.transpose());
    }
    Ok(hv)
}

fn center_rows(hv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = hv.nrows() as f64;
    let mut out = hv.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        for v in col.iter_mut() {
            *v -= mean;
        }
    }
    out
}

fn outcome_score(gz: &DMatrix<f64>, qhv: &DMatrix<f64>, eps_tilde: f64) -> Result<f64> {
    let n = gz.nrows();
    let nf = n as f64;
    let mut reg = gz.clone();
    for i in 0..n {
        reg[(i, i)] += eps_tilde;
    }
    let chol = Cholesky::new(reg)
        .ok_or_else(|| RomaError::Numerical("Cholesky failed in GCV scoring".into()))?;
    let df = chol.solve(gz).trace() + 1.0;
    if !(df < nf) {
        return Err(RomaError::SaturatedModel(format!(
            "effective degrees of freedom {df} reach n = {n} at eps_tilde = {eps_tilde}"
        )));
    }
    let resid = chol.solve(qhv) * eps_tilde;
    let numerator = resid.iter().map(|v| v * v).sum::<f64>() / nf;
    let denom = (1.0 - df / nf) * (1.0 - df / nf);
    Ok(numerator / denom)
}

/// GCV score of the outcome model at one ε̃ candidate.
pub fn gcv_outcome(
    x: &[ObjectPoint],
    m: &[ObjectPoint],
    y: &[ObjectPoint],
    kernel_x: &KernelSpec,
    kernel_m: &KernelSpec,
    eps_tilde: f64,
    grid: &QuantileGridSpec,
) -> Result<f64> {
    let kx = gram(kernel_x, x)?;
    let km = gram(kernel_m, m)?;
    let kz = kx.entries() + km.entries();
    let gz = center(&kz);
    let qhv = center_rows(&embed_matrix(y, grid)?);
    outcome_score(&gz, &qhv, eps_tilde)
}

fn resolve_family(
    family: &KernelFamily,
    points: &[ObjectPoint],
    grid_size: usize,
) -> Result<Vec<KernelSpec>> {
    match family {
        KernelFamily::Fixed(spec) => Ok(vec![spec.clone()]),
        KernelFamily::GaussianAuto { metric } => {
            let grid = bandwidth_grid(points, *metric, grid_size)?;
            grid.into_iter().map(|g| KernelSpec::gaussian(*metric, g)).collect()
        }
        KernelFamily::GaussianGrid { metric, bandwidths } => {
            if bandwidths.is_empty() {
                return Err(RomaError::Config("empty bandwidth grid".into()));
            }
            bandwidths.iter().map(|&g| KernelSpec::gaussian(*metric, g)).collect()
        }
    }
}

/// Candidate ordering: lower score wins; ties (within a 10⁻¹² relative
/// band, so rounding noise cannot flip them) break toward larger
/// regularization, then toward smaller bandwidths.
fn better(
    score: f64,
    cand: &GcvCandidate,
    best_score: f64,
    best: &GcvCandidate,
) -> bool {
    let tol = 1e-12 * score.abs().max(best_score.abs()).max(f64::MIN_POSITIVE);
    if score < best_score - tol {
        return true;
    }
    if score > best_score + tol {
        return false;
    }
    if cand.eps != best.eps {
        return cand.eps > best.eps;
    }
    let bw = |c: &GcvCandidate| (c.bandwidth_x.unwrap_or(0.0), c.bandwidth_m.unwrap_or(0.0));
    bw(cand) < bw(best)
}

/// Selects kernels and (ε, ε̃) by grid search: the mediator criterion picks
/// ε and the bandwidths, then the outcome criterion picks ε̃ with the
/// kernels held fixed. The exhaustive mode instead scores each bandwidth
/// pair by the sum of the two per-pair GCV minima.
pub fn select(
    x: &[ObjectPoint],
    m: &[ObjectPoint],
    y: &[ObjectPoint],
    family_x: &KernelFamily,
    family_m: &KernelFamily,
    grid: &QuantileGridSpec,
    cfg: &SelectConfig,
) -> Result<Selection> {
    let kernels_x = resolve_family(family_x, x, cfg.bandwidth_grid_size)?;
    let kernels_m = resolve_family(family_m, m, cfg.bandwidth_grid_size)?;
    let qhv = center_rows(&embed_matrix(y, grid)?);

    // Mediator Grams depend only on the mediator kernel; cache per candidate.
    let kms: Vec<DMatrix<f64>> =
        kernels_m.iter().map(|k| gram(k, m).map(|g| g.into_entries())).collect::<Result<_>>()?;
    let kxs: Vec<DMatrix<f64>> =
        kernels_x.iter().map(|k| gram(k, x).map(|g| g.into_entries())).collect::<Result<_>>()?;

    let mut phi_candidates = Vec::new();
    let mut phi_scores = Vec::new();
    // Indexed (ix, im, eps) of each surviving candidate for later lookup.
    let mut phi_index = Vec::new();

    for (ix, kx_raw) in kxs.iter().enumerate() {
        let gx = center(kx_raw);
        let eps_grid = cfg.eps_grid.clone().unwrap_or_else(|| default_eps_grid(&gx, cfg.eps_grid_size));
        for &eps in &eps_grid {
            let pieces = match phi_pieces(&gx, eps) {
                Ok(p) => p,
                Err(RomaError::SaturatedModel(_)) => continue,
                Err(e) => return Err(e),
            };
            for (im, km_raw) in kms.iter().enumerate() {
                let score = phi_score(&pieces, km_raw);
                if !score.is_finite() || score < 0.0 {
                    continue;
                }
                phi_candidates.push(GcvCandidate {
                    eps,
                    bandwidth_x: kernels_x[ix].bandwidth(),
                    bandwidth_m: kernels_m[im].bandwidth(),
                });
                phi_scores.push(score);
                phi_index.push((ix, im, eps));
            }
        }
    }
    if phi_candidates.is_empty() {
        return Err(RomaError::TuningFailed("all mediator-model candidates were rejected".into()));
    }

    let mut best = 0;
    for i in 1..phi_candidates.len() {
        if better(phi_scores[i], &phi_candidates[i], phi_scores[best], &phi_candidates[best]) {
            best = i;
        }
    }

    let (mut ix, mut im, mut eps) = phi_index[best];

    if cfg.exhaustive {
        // Score every bandwidth pair by the product of its two GCV minima
        // (scale-free in both criteria, so neither model's units dominate).
        let mut pair_best: Option<(usize, usize, f64, f64)> = None;
        for cix in 0..kxs.len() {
            for cim in 0..kms.len() {
                let mut phi_min: Option<(f64, f64)> = None;
                for (k, &(pix, pim, peps)) in phi_index.iter().enumerate() {
                    if pix == cix && pim == cim {
                        let s = phi_scores[k];
                        if phi_min.map_or(true, |(bs, be)| s < bs || (s == bs && peps > be)) {
                            phi_min = Some((s, peps));
                        }
                    }
                }
                let Some((phi_s, phi_e)) = phi_min else { continue };
                let gz = center(&(&kxs[cix] + &kms[cim]));
                let grid_t = cfg
                    .eps_tilde_grid
                    .clone()
                    .unwrap_or_else(|| default_eps_grid(&gz, cfg.eps_grid_size));
                let mut out_min: Option<(f64, f64)> = None;
                for &et in &grid_t {
                    if let Ok(s) = outcome_score(&gz, &qhv, et) {
                        if out_min.map_or(true, |(bs, be)| s < bs || (s == bs && et > be)) {
                            out_min = Some((s, et));
                        }
                    }
                }
                let Some((out_s, _)) = out_min else { continue };
                let total = phi_s.max(f64::MIN_POSITIVE).ln() + out_s.max(f64::MIN_POSITIVE).ln();
                if pair_best.map_or(true, |(_, _, _, bt)| total < bt) {
                    pair_best = Some((cix, cim, phi_e, total));
                }
            }
        }
        if let Some((cix, cim, peps, _)) = pair_best {
            ix = cix;
            im = cim;
            eps = peps;
        }
    }

    let kernel_x = kernels_x[ix].clone();
    let kernel_m = kernels_m[im].clone();

    let gz = center(&(&kxs[ix] + &kms[im]));
    let eps_tilde_grid =
        cfg.eps_tilde_grid.clone().unwrap_or_else(|| default_eps_grid(&gz, cfg.eps_grid_size));
    let mut out_candidates = Vec::new();
    let mut out_scores = Vec::new();
    for &et in &eps_tilde_grid {
        let score = match outcome_score(&gz, &qhv, et) {
            Ok(s) => s,
            Err(RomaError::SaturatedModel(_)) => continue,
            Err(e) => return Err(e),
        };
        if !score.is_finite() || score < 0.0 {
            continue;
        }
        out_candidates.push(GcvCandidate {
            eps: et,
            bandwidth_x: kernel_x.bandwidth(),
            bandwidth_m: kernel_m.bandwidth(),
        });
        out_scores.push(score);
    }
    if out_candidates.is_empty() {
        return Err(RomaError::TuningFailed("all outcome-model candidates were rejected".into()));
    }
    let mut best_out = 0;
    for i in 1..out_candidates.len() {
        if better(out_scores[i], &out_candidates[i], out_scores[best_out], &out_candidates[best_out])
        {
            best_out = i;
        }
    }
    let eps_tilde = out_candidates[best_out].eps;

    // Rebuild the mediator trace argmin against the possibly exhaustive
    // choice so the recorded argmin always matches the returned tuple.
    let trace_phi_argmin = phi_index
        .iter()
        .position(|&(pix, pim, peps)| pix == ix && pim == im && peps == eps)
        .unwrap_or(best);

    Ok(Selection {
        kernel_x,
        kernel_m,
        eps,
        eps_tilde,
        trace_phi: GcvTrace { candidates: phi_candidates, scores: phi_scores, argmin: trace_phi_argmin },
        trace_outcome: GcvTrace {
            candidates: out_candidates,
            scores: out_scores,
            argmin: best_out,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn scalars(v: &[f64]) -> Vec<ObjectPoint> {
        v.iter().map(|&x| ObjectPoint::scalar(x)).collect()
    }

    fn linear() -> KernelSpec {
        KernelSpec::linear(MetricKind::Euclidean)
    }

    fn noisy_linear_data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let m: Vec<f64> =
            x.iter().map(|&v| 0.8 * v + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .zip(&m)
            .map(|(&a, &b)| a - b + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, m, y)
    }

    #[test]
    fn gcv_phi_heavy_regularization_limit() {
        // ε → ∞: the smoother collapses to the mean, the numerator becomes
        // the mean RKHS deviance tr(G_M)/n, the denominator (1 − 1/n)².
        let (x, m, _) = noisy_linear_data(30, 1);
        let score = gcv_phi(&scalars(&x), &scalars(&m), &linear(), &linear(), 1e12).unwrap();
        let km = gram(&linear(), &scalars(&m)).unwrap();
        let gm = center(km.entries());
        let n = 30.0;
        let expected = (gm.trace() / n) / ((1.0 - 1.0 / n) * (1.0 - 1.0 / n));
        assert_abs_diff_eq!(score, expected, epsilon = 1e-6 * expected);
    }

    #[test]
    fn gcv_phi_matches_hand_computation() {
        // Two effective points are below the n ≥ 2 Gram minimum only for
        // the fit; GCV itself just needs the Grams, so use n = 2 with
        // centered x = (±1): G_X = xxᵀ has a single eigenvalue 2.
        let x = scalars(&[1.0, -1.0]);
        let m = scalars(&[2.0, 0.0]);
        let eps = 0.5;
        // E = Q − G(G+ε)⁻¹: along the centered direction u = (1,−1)/√2 the
        // smoother eats 2/(2+ε); E has eigenvalue 1 − 2/2.5 = 0.2 there.
        // Residual norms: ‖τ(Mᵢ) − Φ̂(Xᵢ)‖² summed = tr(K_M E²) with
        // K_M = mmᵀ: uᵀm = √2, so tr = 0.04·2 = 0.08; numerator 0.04.
        // df = 2/2.5 + 1 = 1.8; denominator (1 − 0.9)² = 0.01.
        let score = gcv_phi(&x, &m, &linear(), &linear(), eps).unwrap();
        assert_abs_diff_eq!(score, 0.04 / 0.01, epsilon = 1e-10);
    }

    #[test]
    fn gcv_phi_stays_finite_in_interpolation_limit() {
        let (x, m, _) = noisy_linear_data(25, 2);
        let score = gcv_phi(&scalars(&x), &scalars(&m), &linear(), &linear(), 1e-9).unwrap();
        assert!(score.is_finite() && score >= 0.0);
    }

    #[test]
    fn gcv_outcome_heavy_regularization_gives_total_variance() {
        let (x, m, y) = noisy_linear_data(30, 3);
        let grid = QuantileGridSpec::midpoints(4);
        let score = gcv_outcome(
            &scalars(&x),
            &scalars(&m),
            &scalars(&y),
            &linear(),
            &linear(),
            1e12,
            &grid,
        )
        .unwrap();
        let mean = y.iter().sum::<f64>() / 30.0;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 30.0;
        let n = 30.0;
        let expected = var / ((1.0 - 1.0 / n) * (1.0 - 1.0 / n));
        assert_abs_diff_eq!(score, expected, epsilon = 1e-6 * expected);
    }

    #[test]
    fn gcv_scores_are_permutation_invariant() {
        let (x, m, y) = noisy_linear_data(24, 4);
        let mut idx: Vec<usize> = (0..24).collect();
        idx.shuffle(&mut ChaCha12Rng::seed_from_u64(5));
        let perm = |v: &[f64]| -> Vec<f64> { idx.iter().map(|&i| v[i]).collect() };
        let grid = QuantileGridSpec::midpoints(4);
        for eps in [1e-3, 1e-1] {
            let a = gcv_phi(&scalars(&x), &scalars(&m), &linear(), &linear(), eps).unwrap();
            let b =
                gcv_phi(&scalars(&perm(&x)), &scalars(&perm(&m)), &linear(), &linear(), eps).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-9 * (1.0 + a));
            let c = gcv_outcome(
                &scalars(&x),
                &scalars(&m),
                &scalars(&y),
                &linear(),
                &linear(),
                eps,
                &grid,
            )
            .unwrap();
            let d = gcv_outcome(
                &scalars(&perm(&x)),
                &scalars(&perm(&m)),
                &scalars(&perm(&y)),
                &linear(),
                &linear(),
                eps,
                &grid,
            )
            .unwrap();
            assert_abs_diff_eq!(c, d, epsilon = 1e-9 * (1.0 + c));
        }
    }

    #[test]
    fn noise_free_linear_data_prefers_small_eps_tilde() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let m: Vec<f64> = x.iter().map(|&v| 0.5 * v + rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().zip(&m).map(|(&a, &b)| 2.0 * a - b).collect();
        let grid = QuantileGridSpec::midpoints(4);
        let mut best = (f64::INFINITY, f64::INFINITY);
        for expo in (-8..=0).map(|e| 10f64.powi(e)) {
            let s = gcv_outcome(
                &scalars(&x),
                &scalars(&m),
                &scalars(&y),
                &linear(),
                &linear(),
                expo,
                &grid,
            )
            .unwrap();
            if s < best.0 {
                best = (s, expo);
            }
        }
        assert!(best.1 <= 1e-6, "noise-free data should drive eps_tilde down, got {}", best.1);
    }

    #[test]
    fn select_single_candidate_grids() {
        let (x, m, y) = noisy_linear_data(20, 7);
        let cfg = SelectConfig {
            eps_grid: Some(vec![0.37]),
            eps_tilde_grid: Some(vec![0.11]),
            ..Default::default()
        };
        let sel = select(
            &scalars(&x),
            &scalars(&m),
            &scalars(&y),
            &KernelFamily::Fixed(linear()),
            &KernelFamily::Fixed(linear()),
            &QuantileGridSpec::midpoints(4),
            &cfg,
        )
        .unwrap();
        assert_eq!(sel.eps, 0.37);
        assert_eq!(sel.eps_tilde, 0.11);
    }

    #[test]
    fn select_is_invariant_to_grid_order() {
        let (x, m, y) = noisy_linear_data(30, 8);
        let grid = QuantileGridSpec::midpoints(4);
        let forward = vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0];
        let mut reversed = forward.clone();
        reversed.reverse();
        let run = |eps_grid: Vec<f64>| {
            let cfg = SelectConfig {
                eps_grid: Some(eps_grid.clone()),
                eps_tilde_grid: Some(eps_grid),
                ..Default::default()
            };
            select(
                &scalars(&x),
                &scalars(&m),
                &scalars(&y),
                &KernelFamily::Fixed(linear()),
                &KernelFamily::Fixed(linear()),
                &grid,
                &cfg,
            )
            .unwrap()
        };
        let a = run(forward);
        let b = run(reversed);
        assert_eq!(a.eps, b.eps);
        assert_eq!(a.eps_tilde, b.eps_tilde);
    }

    #[test]
    fn select_finds_interior_argmin_on_noisy_data() {
        let (x, m, y) = noisy_linear_data(80, 9);
        let grid = QuantileGridSpec::midpoints(4);
        let sel = select(
            &scalars(&x),
            &scalars(&m),
            &scalars(&y),
            &KernelFamily::Fixed(linear()),
            &KernelFamily::Fixed(linear()),
            &grid,
            &SelectConfig::default(),
        )
        .unwrap();
        let trace = &sel.trace_outcome;
        assert!(trace.argmin > 0 && trace.argmin + 1 < trace.candidates.len(),
            "outcome argmin sits at the grid boundary: {} of {}",
            trace.argmin, trace.candidates.len());
        assert!(trace.scores.iter().all(|s| s.is_finite() && *s >= 0.0));
        let min = trace.scores.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(trace.scores[trace.argmin] <= min * (1.0 + 1e-9));
    }

    #[test]
    fn tie_comparator_prefers_larger_eps() {
        let cand = |eps: f64| GcvCandidate { eps, bandwidth_x: None, bandwidth_m: None };
        assert!(better(1.0, &cand(0.1), 2.0, &cand(1.0)));
        assert!(!better(2.0, &cand(1.0), 1.0, &cand(0.1)));
        // Ties (exact or within rounding) go to the larger regularization.
        assert!(better(1.0, &cand(1.0), 1.0, &cand(0.1)));
        assert!(!better(1.0, &cand(0.1), 1.0, &cand(1.0)));
        assert!(better(1.0 + 1e-14, &cand(1.0), 1.0, &cand(0.1)));
    }

    #[test]
    fn ties_break_toward_larger_regularization() {
        // A zero mediator kernel (all mediators at the origin under the
        // linear kernel) zeroes every residual norm exactly, so all ε
        // candidates score identically and the largest must win.
        let (x, _, y) = noisy_linear_data(20, 10);
        let m = vec![0.0; 20];
        let cfg = SelectConfig {
            eps_grid: Some(vec![1e-4, 1e-2, 1.0]),
            eps_tilde_grid: Some(vec![1e-2]),
            ..Default::default()
        };
        let sel = select(
            &scalars(&x),
            &scalars(&m),
            &scalars(&y),
            &KernelFamily::Fixed(linear()),
            &KernelFamily::Fixed(linear()),
            &QuantileGridSpec::midpoints(4),
            &cfg,
        )
        .unwrap();
        assert_eq!(sel.eps, 1.0);
    }

    #[test]
    fn gaussian_bandwidths_are_searched() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let m: Vec<f64> =
            x.iter().map(|&v| (v * 2.0).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> =
            m.iter().map(|&v| v * v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let sel = select(
            &scalars(&x),
            &scalars(&m),
            &scalars(&y),
            &KernelFamily::GaussianAuto { metric: MetricKind::Euclidean },
            &KernelFamily::GaussianAuto { metric: MetricKind::Euclidean },
            &QuantileGridSpec::midpoints(4),
            &SelectConfig { bandwidth_grid_size: 3, eps_grid_size: 8, ..Default::default() },
        )
        .unwrap();
        assert!(sel.kernel_x.bandwidth().is_some());
        assert!(sel.kernel_m.bandwidth().is_some());
        assert!(sel.trace_phi.candidates.len() <= 3 * 3 * 8);
        assert!(!sel.trace_phi.candidates.is_empty());
    }
}

// TODO: remove with the calibration scratch examples.
pub fn default_eps_grid_for(k: &DMatrix<f64>, size: usize) -> Vec<f64> {
    default_eps_grid(&center(k), size)
}
