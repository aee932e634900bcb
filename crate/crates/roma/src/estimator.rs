//! The fitted mediation model and its closed-form effect estimators.
//!
//! Fitting assembles two regularized Gram systems: the exposure system
//! (G_X + εI) driving the mediator regression Φ̂, and the joint additive
//! system (G_Z + ε̃I) with K_Z = K_X + K_M driving the outcome regression
//! Ψ̂ + γ̂. Every prediction and effect reduces to one primitive: given the
//! centered evaluation vector d of an element against the training
//! sections, the solve s = Q(G + εI)⁻¹d yields
//!
//!   regression output = (column means) + HᵀV · s,
//!
//! where HᵀV stacks the embedded outcomes. Applied to exposure contrasts
//! this gives the natural direct effect; routed through the mediator model
//! first (weights over mediator kernel sections, paired back against the
//! joint sections via K_M) it gives the natural indirect effect. With
//! linear kernels on Euclidean data the two effects collapse exactly to
//! ridge-regression product-of-coefficients form, which serves as the
//! module's master oracle in the tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RomaError};
use crate::gram_algebra::{Basis, CoordVector, GramSystem};
use crate::kernels::{gram, joint_gram, kernel_eval, KernelSpec};
use crate::object_spaces::{embed_outcome, GridMeta, HilbertVector, ObjectPoint, QuantileGridSpec};

/// Which causal contrast an effect vector carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EffectKind {
    Nde,
    Nie,
    Te,
}

impl EffectKind {
    pub fn label(&self) -> &'static str {
        match self {
            EffectKind::Nde => "NDE",
            EffectKind::Nie => "NIE",
            EffectKind::Te => "TE",
        }
    }
}

/// An effect vector in the outcome Hilbert space, tagged with the exposure
/// contrast it was computed for.
#[derive(Clone, Debug)]
pub struct EffectVector {
    pub value: HilbertVector,
    pub contrast: (ObjectPoint, ObjectPoint),
    pub kind: EffectKind,
}

/// Weights over the training mediator kernel sections representing Φ̂(x),
/// including the uniform 1/n term.
#[derive(Clone, Debug)]
pub struct PhiPrediction {
    pub weights: DVector<f64>,
}

impl PhiPrediction {
    /// Evaluates Φ̂(x) at a mediator point: Σᵢ wᵢ κ_M(m, Mᵢ).
    pub fn evaluate_at(&self, fit: &MediationFit, m: &ObjectPoint) -> Result<f64> {
        let mut acc = 0.0;
        for (i, mi) in fit.train_m.iter().enumerate() {
            acc += self.weights[i] * kernel_eval(&fit.kernel_m, m, mi)?;
        }
        Ok(acc)
    }

    /// Evaluations of Φ̂(x) at all training mediators: K_M w.
    pub fn section_values(&self, fit: &MediationFit) -> DVector<f64> {
        &fit.km * &self.weights
    }
}

/// A trained mediation model.
#[derive(Clone, Debug)]
pub struct MediationFit {
    kernel_x: KernelSpec,
    kernel_m: KernelSpec,
    sys_x: GramSystem,
    sys_z: GramSystem,
    train_x: Vec<ObjectPoint>,
    train_m: Vec<ObjectPoint>,
    /// Embedded outcomes, one row per unit.
    hv: DMatrix<f64>,
    /// Raw mediator Gram K_M (the joint system holds K_X + K_M).
    km: DMatrix<f64>,
    /// Column means μ̂_X(Xᵢ) and μ̂_M(Mᵢ) of the raw Grams.
    mu_x_cols: DVector<f64>,
    mu_m_cols: DVector<f64>,
    grid: QuantileGridSpec,
    outcome_meta: Option<GridMeta>,
}

/// Fits the mediation model: builds both Gram systems and embeds the
/// outcomes. Deterministic given its inputs.
pub fn fit(
    x: &[ObjectPoint],
    m: &[ObjectPoint],
    y: &[ObjectPoint],
    kernel_x: KernelSpec,
    kernel_m: KernelSpec,
    eps: f64,
    eps_tilde: f64,
    grid: &QuantileGridSpec,
) -> Result<MediationFit> {
    let n = x.len();
    if n < 3 {
        return Err(RomaError::EmptyInput(format!("fit needs n ≥ 3 units, got {n}")));
    }
    if m.len() != n || y.len() != n {
        return Err(RomaError::Dimension(format!(
            "fit needs equal lengths, got x: {}, m: {}, y: {}",
            n,
            m.len(),
            y.len()
        )));
    }

    let kx = gram(&kernel_x, x)?;
    let kmg = gram(&kernel_m, m)?;
    let km = kmg.entries().clone();
    let kz = joint_gram(&kx, &kmg)?;

    let mu_x_cols = column_means(kx.entries());
    let mu_m_cols = column_means(&km);

    let sys_x = GramSystem::new(kx, eps, Basis::BX)?;
    let sys_z = GramSystem::new(kz, eps_tilde, Basis::BZ)?;
    check_nondegenerate(&sys_x, "exposure")?;
    check_nondegenerate(&sys_z, "joint")?;

    let first = embed_outcome(&y[0], grid)?;
    let d = first.dim();
    let outcome_meta = first.grid_meta.clone();
    let mut hv = DMatrix::zeros(n, d);
    for (i, yi) in y.iter().enumerate() {
        let v = embed_outcome(yi, grid)?;
        if v.dim() != d {
            return Err(RomaError::Dimension(format!(
                "outcome {i} embeds to dimension {}, expected {d}",
                v.dim()
            )));
        }
        hv.row_mut(i).copy_from(&v.coords.transpose());
    }

    Ok(MediationFit {
        kernel_x,
        kernel_m,
        sys_x,
        sys_z,
        train_x: x.to_vec(),
        train_m: m.to_vec(),
        hv,
        km,
        mu_x_cols,
        mu_m_cols,
        grid: grid.clone(),
        outcome_meta,
    })
}

fn column_means(k: &DMatrix<f64>) -> DVector<f64> {
    let n = k.nrows();
    DVector::from_iterator(
        k.ncols(),
        k.column_iter().map(|c| crate::gram_algebra::kahan_mean(c.iter().cloned(), n)),
    )
}

fn check_nondegenerate(sys: &GramSystem, label: &str) -> Result<()> {
    let scale = 1.0 + sys.kernel_matrix().trace().abs();
    if sys.g().trace() <= 1e-10 * scale {
        return Err(RomaError::DegenerateData(format!(
            "{label} Gram is degenerate (all points effectively identical)"
        )));
    }
    Ok(())
}

impl MediationFit {
    pub fn n(&self) -> usize {
        self.hv.nrows()
    }

    /// Dimension of the embedded outcome space.
    pub fn outcome_dim(&self) -> usize {
        self.hv.ncols()
    }

    pub fn kernel_x(&self) -> &KernelSpec {
        &self.kernel_x
    }

    pub fn kernel_m(&self) -> &KernelSpec {
        &self.kernel_m
    }

    pub fn sys_x(&self) -> &GramSystem {
        &self.sys_x
    }

    pub fn sys_z(&self) -> &GramSystem {
        &self.sys_z
    }

    pub fn train_x(&self) -> &[ObjectPoint] {
        &self.train_x
    }

    pub fn train_m(&self) -> &[ObjectPoint] {
        &self.train_m
    }

    pub fn hv(&self) -> &DMatrix<f64> {
        &self.hv
    }

    pub fn km(&self) -> &DMatrix<f64> {
        &self.km
    }

    pub fn grid(&self) -> &QuantileGridSpec {
        &self.grid
    }

    pub fn outcome_meta(&self) -> Option<&GridMeta> {
        self.outcome_meta.as_ref()
    }

    /// Centered evaluation vector of an exposure point against the
    /// training exposures: (d_x)ᵢ = κ_X(x, Xᵢ) − μ̂_X(Xᵢ).
    pub fn exposure_eval(&self, x: &ObjectPoint) -> Result<DVector<f64>> {
        let n = self.n();
        let mut d = DVector::zeros(n);
        for i in 0..n {
            d[i] = kernel_eval(&self.kernel_x, x, &self.train_x[i])? - self.mu_x_cols[i];
        }
        Ok(d)
    }

    /// Centered evaluation vector of a mediator point against the training
    /// mediators.
    pub fn mediator_eval(&self, m: &ObjectPoint) -> Result<DVector<f64>> {
        let n = self.n();
        let mut d = DVector::zeros(n);
        for i in 0..n {
            d[i] = kernel_eval(&self.kernel_m, m, &self.train_m[i])? - self.mu_m_cols[i];
        }
        Ok(d)
    }

    /// Evaluation vector of an exposure contrast, d_x − d_{x*}.
    pub fn exposure_contrast_eval(&self, x: &ObjectPoint, x_star: &ObjectPoint) -> Result<DVector<f64>> {
        Ok(self.exposure_eval(x)? - self.exposure_eval(x_star)?)
    }

    /// Joint-basis evaluation vector of the mediator-space contrast
    /// Φ̂(x) − Φ̂(x*): the weight vector a over mediator sections paired
    /// back against the joint sections, K_M a.
    pub fn phi_contrast_eval(&self, x: &ObjectPoint, x_star: &ObjectPoint) -> Result<DVector<f64>> {
        let d = self.exposure_contrast_eval(x, x_star)?;
        let a = self.sys_x.coord_of(&d)?;
        Ok(&self.km * &a.coords)
    }

    fn hilbert_from(&self, coords: DVector<f64>) -> HilbertVector {
        HilbertVector {
            coords,
            grid_meta: self
                .outcome_meta
                .as_ref()
                .map(|m| GridMeta { grid: m.grid.clone(), quantile_function: false }),
        }
    }

    /// Mean embedded outcome V̄.
    pub fn outcome_mean(&self) -> DVector<f64> {
        let n = self.n() as f64;
        DVector::from_iterator(self.outcome_dim(), self.hv.column_iter().map(|c| c.sum() / n))
    }

    /// Weights over the mediator kernel sections representing Φ̂(x):
    /// w = (1/n)1 + Q(G_X + εI)⁻¹d_x.
    pub fn predict_phi(&self, x: &ObjectPoint) -> Result<PhiPrediction> {
        let d = self.exposure_eval(x)?;
        let s = self.sys_x.coord_of(&d)?;
        let n = self.n() as f64;
        Ok(PhiPrediction { weights: s.coords.add_scalar(1.0 / n) })
    }

    /// Predicted outcome Ψ̂(m) + γ̂(x) as a vector in the embedded space.
    pub fn predict_outcome(&self, x: &ObjectPoint, m: &ObjectPoint) -> Result<HilbertVector> {
        let dm = self.mediator_eval(m)?;
        let dx = self.exposure_eval(x)?;
        let sm = self.sys_z.coord_of(&dm)?;
        let sx = self.sys_z.coord_of(&dx)?;
        let coords = self.outcome_mean() + self.hv.transpose() * (sm.coords + sx.coords);
        Ok(self.hilbert_from(coords))
    }

    /// Estimated curve of the expected potential outcome at exposure x with
    /// the mediator at its model-implied law: β̂(x) + γ̂(x) on the embedded
    /// grid.
    pub fn potential_outcome_curve(&self, x: &ObjectPoint) -> Result<HilbertVector> {
        let dx = self.exposure_eval(x)?;
        let sx_med = self.sys_x.coord_of(&dx)?;
        let d_phi = &self.km * &sx_med.coords;
        let s_ind = self.sys_z.coord_of(&d_phi)?;
        let s_dir = self.sys_z.coord_of(&dx)?;
        let coords = self.outcome_mean() + self.hv.transpose() * (s_ind.coords + s_dir.coords);
        Ok(self.hilbert_from(coords))
    }

    /// Natural direct effect at the contrast (x, x*).
    pub fn estimate_nde(&self, x: &ObjectPoint, x_star: &ObjectPoint) -> Result<EffectVector> {
        let d = self.exposure_contrast_eval(x, x_star)?;
        let s = self.sys_z.coord_of(&d)?;
        Ok(EffectVector {
            value: self.hilbert_from(self.hv.transpose() * s.coords),
            contrast: (x.clone(), x_star.clone()),
            kind: EffectKind::Nde,
        })
    }

    /// Natural indirect effect at the contrast (x, x*): the exposure
    /// contrast is solved in the exposure system, re-paired against the
    /// joint sections through K_M, and solved in the joint system.
    pub fn estimate_nie(&self, x: &ObjectPoint, x_star: &ObjectPoint) -> Result<EffectVector> {
        let d_phi = self.phi_contrast_eval(x, x_star)?;
        let s = self.sys_z.coord_of(&d_phi)?;
        Ok(EffectVector {
            value: self.hilbert_from(self.hv.transpose() * s.coords),
            contrast: (x.clone(), x_star.clone()),
            kind: EffectKind::Nie,
        })
    }

    /// Total effect: NDE + NIE by construction.
    pub fn estimate_te(&self, x: &ObjectPoint, x_star: &ObjectPoint) -> Result<EffectVector> {
        let nde = self.estimate_nde(x, x_star)?;
        let nie = self.estimate_nie(x, x_star)?;
        Ok(EffectVector {
            value: nde.value.add(&nie.value)?,
            contrast: (x.clone(), x_star.clone()),
            kind: EffectKind::Te,
        })
    }

    /// In-sample mediator-model weight matrix: row i holds the weights of
    /// Φ̂(Xᵢ) over the mediator sections, (1/n)11ᵀ + G_X(G_X + εI)⁻¹.
    pub fn phi_weight_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        let a = self.sys_x.solve_matrix(self.sys_x.g())?;
        Ok(DMatrix::from_element(n, n, 1.0 / n as f64) + a)
    }

    /// Evaluation vectors of the mediator residuals rᵢ = τ_M(Mᵢ) − Φ̂(Xᵢ)
    /// against the joint sections, one column per unit: K_M(I − W).
    pub fn residual_eval_matrix(&self) -> Result<DMatrix<f64>> {
        let w = self.phi_weight_matrix()?;
        let resid_weights = DMatrix::identity(self.n(), self.n()) - w;
        Ok(&self.km * resid_weights)
    }

    /// Joint-basis coordinates of the mediator residuals, one per unit.
    pub fn mediator_residual_coords(&self) -> Result<Vec<CoordVector>> {
        let d = self.residual_eval_matrix()?;
        let solved = self.sys_z.coord_matrix(&d)?;
        Ok((0..self.n())
            .map(|i| CoordVector { coords: solved.column(i).into_owned(), basis: Basis::BZ })
            .collect())
    }
}
