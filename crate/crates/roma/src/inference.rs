//! Pointwise confidence intervals and global tests.
//!
//! The scale of every interval and statistic comes from plug-in variance
//! functionals evaluated through the Gram systems: for a contrast element
//! with centered evaluation vector d, ϑ̂[d] = n‖Q(G + εI)⁻¹d‖², which is
//! exactly the conditional variance factor of the matching effect
//! estimator. Residual covariance operators supply the direction-specific
//! variances and the weighted chi-square null spectra; the CDF of a
//! weighted sum of chi-squares is evaluated by numerically inverting its
//! characteristic function, with a three-cumulant chi-square fallback that
//! is always flagged in the output.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Result, RomaError};
use crate::estimator::{EffectVector, MediationFit};
use crate::object_spaces::ObjectPoint;

/// A two-sided confidence interval for one direction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Interval {
    pub center: f64,
    pub halfwidth: f64,
    /// Significance level q of the (1 − q) interval.
    pub level: f64,
    /// Set when the df-adjusted variance quadratic form dipped negative by
    /// more than tolerance and was floored at zero.
    pub variance_warning: bool,
}

impl Interval {
    pub fn lower(&self) -> f64 {
        self.center - self.halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.center + self.halfwidth
    }

    pub fn covers(&self, value: f64) -> bool {
        value >= self.lower() && value <= self.upper()
    }
}

/// Residual covariance operators of the fitted outcome model.
#[derive(Clone, Debug)]
pub struct ResidualCovariances {
    /// Degrees-of-freedom-adjusted estimator (1/(n − df)) Σ Vᵢ ⊗ Ŵᵢ; not
    /// symmetric in general.
    pub sigma_w_hat: DMatrix<f64>,
    /// Symmetric surrogate (1/n) Σ Ŵᵢ ⊗ Ŵᵢ used for null spectra.
    pub sigma_w_check: DMatrix<f64>,
    /// Covariance of the regression-pushforward mediator residuals.
    pub sigma_r_hat: DMatrix<f64>,
    /// Effective degrees of freedom tr[G_Z(G_Z + ε̃I)⁻¹] + 1.
    pub df: f64,
    /// Mediator-model degrees of freedom tr[G_X(G_X + εI)⁻¹] + 1.
    pub df_mediator: f64,
    /// Outcome residual rows Ŵᵢ (factor of `sigma_w_check`).
    pub residuals: DMatrix<f64>,
    /// Pushforward rows R̂_VZ(τ_M(Mᵢ) − Φ̂(Xᵢ)) (factor of `sigma_r_hat`).
    pub r_rows: DMatrix<f64>,
}

/// How the weighted chi-square CDF was computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CdfMethod {
    /// Characteristic-function inversion within the target accuracy.
    CharacteristicFunction,
    /// Three-cumulant chi-square approximation (inversion failed to
    /// converge); reported, never silent.
    MomentMatched,
}

/// A weighted chi-square CDF value with its computation method.
#[derive(Clone, Copy, Debug)]
pub struct WeightedChiSq {
    pub p: f64,
    pub method: CdfMethod,
}

/// An effect with its directional intervals, global statistic, null
/// spectrum, and p-value.
#[derive(Clone, Debug)]
pub struct EffectInference {
    pub effect: EffectVector,
    pub intervals: Vec<Interval>,
    pub statistic: f64,
    pub spectrum: Vec<f64>,
    pub p_value: f64,
    pub cdf_method: CdfMethod,
}

/// Variance functional on the joint system: ϑ̂ᶻ[d] = n‖Q(G_Z + ε̃I)⁻¹d‖².
pub fn variance_functional_z(fit: &MediationFit, d: &DVector<f64>) -> Result<f64> {
    let s = fit.sys_z().coord_of(d)?;
    Ok(fit.n() as f64 * s.coords.norm_squared())
}

/// Variance functional on the exposure system: ϑ̂ˣ[d] = n‖Q(G_X + εI)⁻¹d‖².
pub fn variance_functional_x(fit: &MediationFit, d: &DVector<f64>) -> Result<f64> {
    let s = fit.sys_x().coord_of(d)?;
    Ok(fit.n() as f64 * s.coords.norm_squared())
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

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Residual covariance operators: the df-adjusted Σ̂_W, the symmetric
/// surrogate Σ̌_W, and the mediator-residual pushforward covariance Σ̂_R.
pub fn residual_covariances(fit: &MediationFit) -> Result<ResidualCovariances> {
    let n = fit.n();
    let nf = n as f64;

    // Outcome residuals Ŵ = ε̃ (G_Z + ε̃I)⁻¹ Q H_V.
    let qhv = center_rows(fit.hv());
    let residuals = fit.sys_z().solve_matrix(&qhv)? * fit.sys_z().eps();

    let df = fit.sys_z().solve_matrix(fit.sys_z().g())?.trace() + 1.0;
    if !(df < nf) {
        return Err(RomaError::SaturatedModel(format!(
            "effective degrees of freedom {df} reach n = {n}"
        )));
    }
    let df_mediator = (fit.sys_x().solve_matrix(fit.sys_x().g())?.trace() + 1.0).min(nf - 1.0);

    let sigma_w_hat = fit.hv().transpose() * &residuals / (nf - df);
    let mut sigma_w_check = residuals.transpose() * &residuals / nf;
    symmetrize(&mut sigma_w_check);

    // Pushforward of the mediator residuals through the outcome regression.
    let d_r = fit.residual_eval_matrix()?;
    let solved = fit.sys_z().coord_matrix(&d_r)?;
    let r_rows = solved.transpose() * fit.hv();
    let mut sigma_r_hat = r_rows.transpose() * &r_rows / nf;
    symmetrize(&mut sigma_r_hat);

    Ok(ResidualCovariances {
        sigma_w_hat,
        sigma_w_check,
        sigma_r_hat,
        df,
        df_mediator,
        residuals,
        r_rows,
    })
}

fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Quadratic form ⟨Σv, v⟩ floored at zero; the flag reports a floor whose
/// magnitude exceeded 10⁻⁶ times the Frobenius norm of Σ.
fn floored_quadratic(sigma: &DMatrix<f64>, v: &DVector<f64>) -> (f64, bool) {
    let quad = (v.transpose() * sigma * v)[(0, 0)];
    if quad >= 0.0 {
        (quad, false)
    } else {
        let scale = sigma.norm() * v.norm_squared();
        (0.0, quad.abs() > 1e-6 * scale.max(f64::MIN_POSITIVE))
    }
}

fn check_direction_level(v: &DVector<f64>, q: f64, d: usize) -> Result<()> {
    if v.len() != d {
        return Err(RomaError::Dimension(format!(
            "direction has length {}, outcome dimension is {d}",
            v.len()
        )));
    }
    if v.norm() == 0.0 {
        return Err(RomaError::DegenerateContrast("direction vector is zero".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(RomaError::Config(format!("level q must lie in (0,1), got {q}")));
    }
    Ok(())
}

/// Confidence interval for ⟨NDE, v⟩ at level 1 − q, given precomputed
/// residual covariances.
pub fn ci_nde_with(
    fit: &MediationFit,
    rc: &ResidualCovariances,
    x: &ObjectPoint,
    x_star: &ObjectPoint,
    v: &DVector<f64>,
    q: f64,
) -> Result<Interval> {
    check_direction_level(v, q, fit.outcome_dim())?;
    let effect = fit.estimate_nde(x, x_star)?;
    let center = effect.value.coords.dot(v);
    let d = fit.exposure_contrast_eval(x, x_star)?;
    let theta = variance_functional_z(fit, &d)?;
    let (quad, warn) = floored_quadratic(&rc.sigma_w_hat, v);
    let halfwidth = normal_quantile(1.0 - q / 2.0) * (theta / fit.n() as f64 * quad).sqrt();
    Ok(Interval { center, halfwidth, level: q, variance_warning: warn })
}

/// Confidence interval for ⟨NDE, v⟩ at level 1 − q.
pub fn ci_nde(
    fit: &MediationFit,
    x: &ObjectPoint,
    x_star: &ObjectPoint,
    v: &DVector<f64>,
    q: f64,
) -> Result<Interval> {
    let rc = residual_covariances(fit)?;
    ci_nde_with(fit, &rc, x, x_star, v, q)
}

/// Confidence interval for ⟨NIE, v⟩ at level 1 − q: the halfwidth pools the
/// outcome-model variance (through the Φ̂-contrast) and the mediator-model
/// variance (through the exposure contrast pushed through Σ̂_R).
pub fn ci_nie_with(
    fit: &MediationFit,
    rc: &ResidualCovariances,
    x: &ObjectPoint,
    x_star: &ObjectPoint,
    v: &DVector<f64>,
    q: f64,
) -> Result<Interval> {
    check_direction_level(v, q, fit.outcome_dim())?;
    let effect = fit.estimate_nie(x, x_star)?;
    let center = effect.value.coords.dot(v);
    let d_phi = fit.phi_contrast_eval(x, x_star)?;
    let theta_z = variance_functional_z(fit, &d_phi)?;
    let d_x = fit.exposure_contrast_eval(x, x_star)?;
    let theta_x = variance_functional_x(fit, &d_x)?;
    let (quad_w, warn) = floored_quadratic(&rc.sigma_w_hat, v);
    let (quad_r, _) = floored_quadratic(&rc.sigma_r_hat, v);
    let var = (theta_z * quad_w + theta_x * quad_r) / fit.n() as f64;
    let halfwidth = normal_quantile(1.0 - q / 2.0) * var.sqrt();
    Ok(Interval { center, halfwidth, level: q, variance_warning: warn })
}

/// Confidence interval for ⟨NIE, v⟩ at level 1 − q.
pub fn ci_nie(
    fit: &MediationFit,
    x: &ObjectPoint,
    x_star: &ObjectPoint,
    v: &DVector<f64>,
    q: f64,
) -> Result<Interval> {
    let rc = residual_covariances(fit)?;
    ci_nie_with(fit, &rc, x, x_star, v, q)
}

// ---------------------------------------------------------------------------
// Weighted chi-square CDF
// ---------------------------------------------------------------------------

// Internal target well inside the 1e-6 contract, so that monotonicity
// holds at the 1e-7 level even deep in the tails.
const CDF_TOL: f64 = 1e-8;

struct ImhofIntegrand<'a> {
    lambdas: &'a [f64],
    t: f64,
}

impl ImhofIntegrand<'_> {
    fn theta(&self, u: f64) -> f64 {
        0.5 * self.lambdas.iter().map(|&l| (l * u).atan()).sum::<f64>() - 0.5 * self.t * u
    }

    /// Amplitude 1/(u·ρ(u)), through logs for overflow safety.
    fn amplitude(&self, u: f64) -> f64 {
        let log_rho =
            0.25 * self.lambdas.iter().map(|&l| (1.0 + l * l * u * u).ln()).sum::<f64>();
        (-(u.ln()) - log_rho).exp()
    }

    fn eval(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.5 * (self.lambdas.iter().sum::<f64>() - self.t);
        }
        self.theta(u).sin() * self.amplitude(u)
    }

    /// |θ'(u)| never exceeds this on [u, ∞).
    fn slope_bound(&self, u: f64) -> f64 {
        0.5 * self.lambdas.iter().map(|&l| l / (1.0 + l * l * u * u)).sum::<f64>() + 0.5 * self.t
    }

    /// Oscillatory tail bound past u: valid once θ' is negative and the
    /// amplitude is decreasing there.
    fn tail_bound(&self, u: f64) -> Option<f64> {
        let drift = 0.5 * self.t
            - 0.5 * self.lambdas.iter().map(|&l| l / (1.0 + l * l * u * u)).sum::<f64>();
        if drift > 0.0 {
            Some(2.0 * self.amplitude(u) / drift)
        } else {
            None
        }
    }
}

/// 15-point Gauss–Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 15] = [
    -0.9879925180204854,
    -0.9372733924007060,
    -0.8482065834104272,
    -0.7244177313601701,
    -0.5709721726085388,
    -0.3941513470775634,
    -0.2011940939974345,
    0.0,
    0.2011940939974345,
    0.3941513470775634,
    0.5709721726085388,
    0.7244177313601701,
    0.8482065834104272,
    0.9372733924007060,
    0.9879925180204854,
];
const GL_WEIGHTS: [f64; 15] = [
    0.0307532419961173,
    0.0703660474881081,
    0.1071592204671719,
    0.1395706779261543,
    0.1662692058169939,
    0.1861610000155622,
    0.1984314853271116,
    0.2025782419255613,
    0.1984314853271116,
    0.1861610000155622,
    0.1662692058169939,
    0.1395706779261543,
    0.1071592204671719,
    0.0703660474881081,
    0.0307532419961173,
];

fn gl15(f: &ImhofIntegrand, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
        acc += weight * f.eval(mid + half * node);
    }
    acc * half
}

/// Integrates the inversion integrand over [a, b] with panels sized to
/// resolve the oscillation.
fn integrate_segment(f: &ImhofIntegrand, a: f64, b: f64) -> f64 {
    let slope = f.slope_bound(a);
    let periods = (b - a) * slope / (2.0 * std::f64::consts::PI);
    let panels = ((periods * 6.0).ceil() as usize).clamp(4, 200_000);
    let step = (b - a) / panels as f64;
    let mut acc = 0.0;
    for i in 0..panels {
        let lo = a + step * i as f64;
        acc += gl15(f, lo, lo + step);
    }
    acc
}

fn three_cumulant_fallback(lambdas: &[f64], t: f64) -> Result<f64> {
    let k1: f64 = lambdas.iter().sum();
    let k2: f64 = 2.0 * lambdas.iter().map(|l| l * l).sum::<f64>();
    let k3: f64 = 8.0 * lambdas.iter().map(|l| l * l * l).sum::<f64>();
    if k2 <= 0.0 || k3 <= 0.0 {
        return Err(RomaError::DegenerateSpectrum("cumulants vanish".into()));
    }
    let a = k3 / (4.0 * k2);
    let nu = 8.0 * k2 * k2 * k2 / (k3 * k3);
    let b = k1 - a * nu;
    let arg = (t - b) / a;
    if arg <= 0.0 {
        return Ok(0.0);
    }
    let chi = ChiSquared::new(nu)
        .map_err(|e| RomaError::Numerical(format!("chi-square fallback failed: {e}")))?;
    Ok(chi.cdf(arg))
}

/// P(Σⱼ λⱼ χ²₁ⱼ ≤ t) within 10⁻⁶ absolute error via characteristic-function
/// inversion, falling back to a flagged three-cumulant approximation if the
/// integration fails to converge.
pub fn weighted_chisq_cdf(lambdas: &[f64], t: f64) -> Result<WeightedChiSq> {
    if lambdas.is_empty() {
        return Err(RomaError::EmptyInput("weighted chi-square needs weights".into()));
    }
    if lambdas.iter().any(|l| !l.is_finite()) || !t.is_finite() {
        return Err(RomaError::Numerical("non-finite weighted chi-square input".into()));
    }
    let max = lambdas.iter().cloned().fold(0.0f64, f64::max);
    if lambdas.iter().any(|&l| l < -1e-8 * max.max(1.0)) {
        return Err(RomaError::Numerical("negative weight in chi-square mixture".into()));
    }
    let mut kept: Vec<f64> = lambdas.iter().cloned().filter(|&l| l > 0.0).collect();
    if kept.is_empty() {
        return Err(RomaError::DegenerateSpectrum("all chi-square weights are zero".into()));
    }
    if t <= 0.0 {
        return Ok(WeightedChiSq { p: 0.0, method: CdfMethod::CharacteristicFunction });
    }

    // Normalize to Σλ = 1; the CDF is invariant under common rescaling.
    let total: f64 = kept.iter().sum();
    for l in kept.iter_mut() {
        *l /= total;
    }
    let t_scaled = t / total;

    let f = ImhofIntegrand { lambdas: &kept, t: t_scaled };
    let mut integral = 0.0;
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut converged = false;
    for _ in 0..48 {
        integral += integrate_segment(&f, lo, hi);
        if let Some(bound) = f.tail_bound(hi) {
            if bound < CDF_TOL * std::f64::consts::PI / 2.0 {
                converged = true;
                break;
            }
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            break;
        }
    }

    if converged {
        let p = (0.5 - integral / std::f64::consts::PI).clamp(0.0, 1.0);
        Ok(WeightedChiSq { p, method: CdfMethod::CharacteristicFunction })
    } else {
        let p = three_cumulant_fallback(&kept, t_scaled)?.clamp(0.0, 1.0);
        Ok(WeightedChiSq { p, method: CdfMethod::MomentMatched })
    }
}

// ---------------------------------------------------------------------------
// Global tests
// ---------------------------------------------------------------------------

/// Null spectrum: leading l eigenvalues of a PSD covariance given either
/// directly (d small) or through the n×n Gram of its factor rows. The
/// spectrum is inflated by n/(n − df): the raw residual second moment
/// loses the noise mass absorbed by the smoother, the same deficit the
/// df-adjusted cross estimator corrects for interval widths.
fn top_spectrum(
    sigma: &DMatrix<f64>,
    factor_rows: &DMatrix<f64>,
    df: f64,
    l: usize,
) -> Result<Vec<f64>> {
    let d = sigma.nrows();
    let n = factor_rows.nrows();
    let (vals, _) = if d <= n {
        crate::gram_algebra::sym_eigs(sigma, l.min(d))?
    } else {
        let small = factor_rows * factor_rows.transpose() / n as f64;
        crate::gram_algebra::sym_eigs(&small, l.min(n))?
    };
    let factor = n as f64 / (n as f64 - df);
    Ok(vals.into_iter().map(|v| v * factor).collect())
}

fn clamp_spectrum(spectrum: &[f64]) -> Vec<f64> {
    let max = spectrum.iter().cloned().fold(0.0f64, f64::max);
    spectrum.iter().map(|&l| if l < 0.0 && l >= -1e-8 * max.max(1.0) { 0.0 } else { l }).collect()
}

fn check_truncation(fit: &MediationFit, l: usize) -> Result<()> {
    let cap = fit.n().min(fit.outcome_dim());
    if l == 0 || l > cap {
        return Err(RomaError::Dimension(format!(
            "truncation l must be in 1..={cap}, got {l}"
        )));
    }
    Ok(())
}

/// Global test of no natural direct effect, with precomputed covariances.
pub fn test_nde_with(
    fit: &MediationFit,
    rc: &ResidualCovariances,
    x: &ObjectPoint,
    x_star: &ObjectPoint,
    l: usize,
) -> Result<EffectInference> {
    check_truncation(fit, l)?;
    let effect = fit.estimate_nde(x, x_star)?;
    let d = fit.exposure_contrast_eval(x, x_star)?;
    let theta = variance_functional_z(fit, &d)?;
    if !(theta > 0.0) {
        return Err(RomaError::DegenerateContrast(
            "exposure contrast has zero variance functional".into(),
        ));
    }
    let statistic = fit.n() as f64 * effect.value.coords.norm_squared() / theta;
    let spectrum = clamp_spectrum(&top_spectrum(&rc.sigma_w_check, &rc.residuals, rc.df, l)?);
    let cdf = weighted_chisq_cdf(&spectrum, statistic)?;
    Ok(EffectInference {
        effect,
        intervals: Vec::new(),
        statistic,
        spectrum,
        p_value: (1.0 - cdf.p).clamp(0.0, 1.0),
        cdf_method: cdf.method,
    })
}

/// Global test of H₀: NDE = 0 using the statistic n ϑ̂ᶻ⁻¹ ‖NDÊ‖² against
/// the truncated weighted chi-square null Σⱼ λⱼ(Σ̌_W) χ²₁ⱼ.
pub fn test_nde(
    fit: &MediationFit,
    x: &ObjectPoint,
    x_star: &ObjectPoint,
    l: usize,
) -> Result<EffectInference> {
    let rc = residual_covariances(fit)?;
    test_nde_with(fit, &rc, x, x_star, l)
}

/// Global test of no natural indirect effect, with precomputed covariances.
pub fn test_nie_with(
    fit: &MediationFit,
    rc: &ResidualCovariances,
    x: &ObjectPoint,
    x_star: &ObjectPoint,
    l: usize,
) -> Result<EffectInference> {
    check_truncation(fit, l)?;
    let effect = fit.estimate_nie(x, x_star)?;
    let d_phi = fit.phi_contrast_eval(x, x_star)?;
    let theta_z = variance_functional_z(fit, &d_phi)?;
    let d_x = fit.exposure_contrast_eval(x, x_star)?;
    let theta_x = variance_functional_x(fit, &d_x)?;
    let pooled = theta_z + theta_x;
    if !(pooled > 0.0) {
        return Err(RomaError::DegenerateContrast(
            "pooled variance functional vanishes for this contrast".into(),
        ));
    }
    let statistic = fit.n() as f64 * effect.value.coords.norm_squared() / pooled;

    // Pooled null operator: the two weights sum to one by construction.
    let w_z = theta_z / pooled;
    let w_x = theta_x / pooled;
    let d_dim = fit.outcome_dim();
    let n = fit.n();
    // Each covariance factor carries the df correction of the smoother
    // that produced its residuals.
    let adj_w = n as f64 / (n as f64 - rc.df);
    let adj_r = n as f64 / (n as f64 - rc.df_mediator);
    let spectrum = if d_dim <= 2 * n {
        let pooled_sigma = &rc.sigma_w_check * (w_z * adj_w) + &rc.sigma_r_hat * (w_x * adj_r);
        let (vals, _) = crate::gram_algebra::sym_eigs(&pooled_sigma, l.min(d_dim))?;
        vals
    } else {
        // Stack the scaled factor rows; the nonzero spectrum of the pooled
        // operator equals that of the stacked Gram.
        let mut stacked = DMatrix::zeros(2 * n, d_dim);
        let sw = (w_z * adj_w / n as f64).sqrt();
        let sr = (w_x * adj_r / n as f64).sqrt();
        stacked.view_mut((0, 0), (n, d_dim)).copy_from(&(&rc.residuals * sw));
        stacked.view_mut((n, 0), (n, d_dim)).copy_from(&(&rc.r_rows * sr));
        let small = &stacked * stacked.transpose();
        let (vals, _) = crate::gram_algebra::sym_eigs(&small, l.min(2 * n))?;
        vals
    };
    let spectrum = clamp_spectrum(&spectrum);
    let cdf = weighted_chisq_cdf(&spectrum, statistic)?;
    Ok(EffectInference {
        effect,
        intervals: Vec::new(),
        statistic,
        spectrum,
        p_value: (1.0 - cdf.p).clamp(0.0, 1.0),
        cdf_method: cdf.method,
    })
}

/// Global test of H₀: NIE = 0 using the pooled variance proxy, which spans
/// both asymptotic regimes without pre-testing which one dominates.
pub fn test_nie(
    fit: &MediationFit,
    x: &ObjectPoint,
    x_star: &ObjectPoint,
    l: usize,
) -> Result<EffectInference> {
    let rc = residual_covariances(fit)?;
    test_nie_with(fit, &rc, x, x_star, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::fit;
    use crate::kernels::KernelSpec;
    use crate::object_spaces::{MetricKind, QuantileGridSpec};
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

    fn grid() -> QuantileGridSpec {
        QuantileGridSpec::midpoints(4)
    }

    fn toy_fit(n: usize, seed: u64, eps: f64, eps_tilde: f64) -> MediationFit {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let m: Vec<f64> =
            x.iter().map(|&v| 0.7 * v + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .zip(&m)
            .map(|(&a, &b)| 1.2 * a - 0.8 * b + 0.4 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        fit(&scalars(&x), &scalars(&m), &scalars(&y), linear(), linear(), eps, eps_tilde, &grid())
            .unwrap()
    }

    #[test]
    fn variance_functional_trivials() {
        let model = toy_fit(25, 1, 1e-2, 1e-2);
        let zero = DVector::zeros(25);
        assert_eq!(variance_functional_z(&model, &zero).unwrap(), 0.0);
        let d = model
            .exposure_contrast_eval(&ObjectPoint::scalar(1.0), &ObjectPoint::scalar(0.0))
            .unwrap();
        let base = variance_functional_z(&model, &d).unwrap();
        let scaled = variance_functional_z(&model, &(&d * 3.0)).unwrap();
        assert_abs_diff_eq!(scaled, 9.0 * base, epsilon = 1e-9 * base);
    }

    /// Spectral route: eigendecompose G and sum (μⱼ + ε)⁻² μⱼ ⟨φⱼ, f⟩²
    /// over the positive Gram spectrum, with the pairings read off the
    /// centered evaluation vector.
    fn spectral_route(g: &DMatrix<f64>, eps: f64, d: &DVector<f64>) -> f64 {
        let n = g.nrows();
        let eig = g.clone().symmetric_eigen();
        let mut qd = d.clone();
        let mean = qd.mean();
        qd.add_scalar_mut(-mean);
        let mut acc = 0.0;
        for j in 0..n {
            let mu = eig.eigenvalues[j];
            if mu > 1e-12 * (1.0 + g.amax()) {
                let proj = eig.eigenvectors.column(j).dot(&qd);
                let pairing_sq = proj * proj / mu;
                acc += mu / ((mu + eps) * (mu + eps)) * pairing_sq;
            }
        }
        n as f64 * acc
    }

    #[test]
    fn variance_functional_matches_spectral_oracle() {
        for seed in 0..20 {
            let model = toy_fit(20, 100 + seed, 3e-3, 7e-3);
            let x = ObjectPoint::scalar(0.9);
            let xs = ObjectPoint::scalar(-0.4);
            let dz = model.exposure_contrast_eval(&x, &xs).unwrap();
            let via_coords = variance_functional_z(&model, &dz).unwrap();
            let via_spectrum = spectral_route(model.sys_z().g(), model.sys_z().eps(), &dz);
            assert!(
                (via_coords - via_spectrum).abs() <= 1e-8 * via_coords.max(1.0),
                "z-functional mismatch: {via_coords} vs {via_spectrum}"
            );
            let via_coords_x = variance_functional_x(&model, &dz).unwrap();
            let via_spectrum_x = spectral_route(model.sys_x().g(), model.sys_x().eps(), &dz);
            assert!(
                (via_coords_x - via_spectrum_x).abs() <= 1e-8 * via_coords_x.max(1.0),
                "x-functional mismatch: {via_coords_x} vs {via_spectrum_x}"
            );
        }
    }

    #[test]
    fn residual_covariances_vanish_for_interpolating_fit() {
        let n = 10;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let m: Vec<f64> = x.iter().map(|&v| 2.0 * v).collect();
        let y: Vec<f64> = x.iter().map(|&v| v * 3.0).collect();
        let model = fit(
            &scalars(&x),
            &scalars(&m),
            &scalars(&y),
            linear(),
            linear(),
            1e-10,
            1e-10,
            &grid(),
        )
        .unwrap();
        let rc = residual_covariances(&model).unwrap();
        assert!(rc.sigma_w_check.amax() < 1e-8);
        assert!(rc.sigma_r_hat.amax() < 1e-8);
    }

    #[test]
    fn sigma_w_check_matches_scalar_ridge_residuals() {
        let model = toy_fit(40, 7, 1e-2, 5e-3);
        let rc = residual_covariances(&model).unwrap();
        // d = 1: Σ̌_W is the mean square of the smoother residuals
        // ε̃(G_Z + ε̃I)⁻¹ ỹ, recomputed here against a dense inverse.
        let ytilde = center_rows(model.hv());
        let n = model.n();
        let dense = (model.sys_z().g().clone()
            + DMatrix::identity(n, n) * model.sys_z().eps())
        .try_inverse()
        .unwrap();
        let resid = dense * &ytilde * model.sys_z().eps();
        let oracle = resid.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(rc.sigma_w_check[(0, 0)], oracle, epsilon = 1e-9 * (1.0 + oracle));
        // df matches the eigenvalue route Σ μ/(μ+ε̃) + 1.
        let eigs = model.sys_z().g().clone().symmetric_eigenvalues();
        let df_oracle: f64 =
            eigs.iter().map(|&mu| mu / (mu + model.sys_z().eps())).sum::<f64>() + 1.0;
        assert_abs_diff_eq!(rc.df, df_oracle, epsilon = 1e-8 * df_oracle);
        assert!(rc.df >= 1.0 && rc.df < n as f64);
    }

    #[test]
    fn covariances_are_psd_and_trace_positive() {
        let model = toy_fit(30, 9, 1e-3, 1e-3);
        let rc = residual_covariances(&model).unwrap();
        let min_w = rc.sigma_w_check.clone().symmetric_eigenvalues().min();
        let min_r = rc.sigma_r_hat.clone().symmetric_eigenvalues().min();
        assert!(min_w >= -1e-8);
        assert!(min_r >= -1e-8);
        assert!(rc.sigma_w_hat.trace() > 0.0);
    }

    #[test]
    fn ci_centered_at_zero_for_equal_contrast() {
        let model = toy_fit(25, 11, 1e-2, 1e-2);
        let x = ObjectPoint::scalar(0.7);
        let v = DVector::from_vec(vec![1.0]);
        let ci = ci_nde(&model, &x, &x, &v, 0.05).unwrap();
        assert_eq!(ci.center, 0.0);
        assert_eq!(ci.halfwidth, 0.0);
        let ci = ci_nie(&model, &x, &x, &v, 0.05).unwrap();
        assert_eq!(ci.center, 0.0);
        assert!(ci.halfwidth >= 0.0);
    }

    #[test]
    fn ci_uses_the_standard_normal_quantile() {
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959964, epsilon = 1e-6);
    }

    #[test]
    fn nie_halfwidth_recomposes_from_parts() {
        let model = toy_fit(30, 13, 1e-2, 1e-2);
        let rc = residual_covariances(&model).unwrap();
        let x = ObjectPoint::scalar(1.0);
        let xs = ObjectPoint::scalar(0.0);
        let v = DVector::from_vec(vec![1.0]);
        let q = 0.05;
        let ci = ci_nie_with(&model, &rc, &x, &xs, &v, q).unwrap();
        let d_phi = model.phi_contrast_eval(&x, &xs).unwrap();
        let theta_z = variance_functional_z(&model, &d_phi).unwrap();
        let d_x = model.exposure_contrast_eval(&x, &xs).unwrap();
        let theta_x = variance_functional_x(&model, &d_x).unwrap();
        let quad_w = rc.sigma_w_hat[(0, 0)].max(0.0);
        let quad_r = rc.sigma_r_hat[(0, 0)].max(0.0);
        let expected = normal_quantile(1.0 - q / 2.0)
            * ((theta_z * quad_w + theta_x * quad_r) / 30.0).sqrt();
        assert_abs_diff_eq!(ci.halfwidth, expected, epsilon = 1e-12 * (1.0 + expected));
        // The pooled weights sum to one by construction.
        let pooled = theta_z + theta_x;
        assert_abs_diff_eq!(theta_z / pooled + theta_x / pooled, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn ci_halfwidth_scales_with_the_displayed_rate() {
        let model = toy_fit(30, 17, 1e-2, 1e-2);
        let rc = residual_covariances(&model).unwrap();
        let x = ObjectPoint::scalar(1.0);
        let xs = ObjectPoint::scalar(0.0);
        let v = DVector::from_vec(vec![1.0]);
        let ci = ci_nde_with(&model, &rc, &x, &xs, &v, 0.05).unwrap();
        let d = model.exposure_contrast_eval(&x, &xs).unwrap();
        let theta = variance_functional_z(&model, &d).unwrap();
        let expect = normal_quantile(0.975) * (theta / 30.0 * rc.sigma_w_hat[(0, 0)]).sqrt();
        assert_abs_diff_eq!(ci.halfwidth, expect, epsilon = 1e-12 * (1.0 + expect));
    }

    #[test]
    fn weighted_chisq_matches_known_quantiles() {
        let cases = [
            (vec![1.0], 3.841459, 0.95),
            (vec![1.0, 1.0], 5.991465, 0.95),
            (vec![2.0], 7.682918, 0.95),
        ];
        for (lambdas, t, expect) in cases {
            let out = weighted_chisq_cdf(&lambdas, t).unwrap();
            assert_eq!(out.method, CdfMethod::CharacteristicFunction);
            assert!(
                (out.p - expect).abs() < 1e-6,
                "cdf({lambdas:?}, {t}) = {} vs {expect}",
                out.p
            );
        }
    }

    #[test]
    fn weighted_chisq_monotone_and_limits() {
        let lambdas = vec![2.0, 0.5, 0.25, 1.0];
        let mut last = 0.0;
        for i in 0..200 {
            let t = i as f64 * 0.25;
            let p = weighted_chisq_cdf(&lambdas, t).unwrap().p;
            assert!(p >= last - 1e-7, "not monotone at t = {t}");
            last = p;
        }
        assert!(weighted_chisq_cdf(&lambdas, 200.0).unwrap().p > 1.0 - 1e-6);
        assert_eq!(weighted_chisq_cdf(&lambdas, 0.0).unwrap().p, 0.0);
        assert!(matches!(
            weighted_chisq_cdf(&[0.0, 0.0], 1.0),
            Err(RomaError::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn tests_reject_equal_contrast() {
        let model = toy_fit(25, 19, 1e-2, 1e-2);
        let x = ObjectPoint::scalar(0.7);
        assert!(matches!(
            test_nde(&model, &x, &x, 1),
            Err(RomaError::DegenerateContrast(_))
        ));
    }

    #[test]
    fn p_values_invariant_to_outcome_scaling() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let n = 35;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let m: Vec<f64> =
            x.iter().map(|&v| 0.7 * v + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .zip(&m)
            .map(|(&a, &b)| 0.5 * a + 0.4 * b + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let c = 3.7;
        let y_scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
        let base = fit(
            &scalars(&x),
            &scalars(&m),
            &scalars(&y),
            linear(),
            linear(),
            1e-2,
            1e-2,
            &grid(),
        )
        .unwrap();
        let scaled = fit(
            &scalars(&x),
            &scalars(&m),
            &scalars(&y_scaled),
            linear(),
            linear(),
            1e-2,
            1e-2,
            &grid(),
        )
        .unwrap();
        let x1 = ObjectPoint::scalar(1.0);
        let x0 = ObjectPoint::scalar(0.0);
        let p0 = test_nde(&base, &x1, &x0, 1).unwrap().p_value;
        let p1 = test_nde(&scaled, &x1, &x0, 1).unwrap().p_value;
        assert!((p0 - p1).abs() < 1e-6, "NDE p changed under scaling: {p0} vs {p1}");
        let q0 = test_nie(&base, &x1, &x0, 1).unwrap().p_value;
        let q1 = test_nie(&scaled, &x1, &x0, 1).unwrap().p_value;
        assert!((q0 - q1).abs() < 1e-6, "NIE p changed under scaling: {q0} vs {q1}");
    }
}
