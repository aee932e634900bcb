//! Points of the supported metric spaces, their distances, and the Hilbert
//! embedding of outcomes.
//!
//! Univariate distributions live in the Wasserstein-2 space and embed into
//! L²[0,1] through their quantile functions; compositions live on the
//! positive orthant of the unit sphere under the geodesic distance; symmetric
//! PSD matrices carry the Frobenius metric and embed identically. Quadrature
//! weights are folded into embedded coordinates so that plain Euclidean inner
//! products of coordinate vectors equal discretized L²[0,1] inner products.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RomaError};

/// Default number of midpoint levels for quantile-function discretization.
pub const DEFAULT_QUANTILE_GRID: usize = 100;

/// The metric a kernel or distance computation is bound to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    /// ℓ₂ distance between Euclidean vectors.
    Euclidean,
    /// Wasserstein-2 distance between univariate distributions.
    Wasserstein2,
    /// Geodesic distance on the sphere after the square-root map.
    SphericalComposition,
    /// Frobenius distance between symmetric PSD matrices.
    Frobenius,
}

/// One point of a supported metric space.
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectPoint {
    Euclidean(DVector<f64>),
    /// Sorted sample of a univariate distribution.
    EmpiricalDistribution(Vec<f64>),
    /// Values of a quantile function at the midpoint grid of its own length.
    QuantileGrid(Vec<f64>),
    /// Nonnegative vector summing to one.
    Composition(DVector<f64>),
    /// Symmetric positive semi-definite matrix.
    SpdMatrix(DMatrix<f64>),
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl ObjectPoint {
    pub fn euclidean(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(RomaError::EmptyInput("euclidean point with no coordinates".into()));
        }
        if !all_finite(&coords) {
            return Err(RomaError::Data("euclidean point has non-finite entries".into()));
        }
        Ok(ObjectPoint::Euclidean(DVector::from_vec(coords)))
    }

    pub fn scalar(value: f64) -> Self {
        ObjectPoint::Euclidean(DVector::from_vec(vec![value]))
    }

    /// Builds an empirical distribution from a sample; the sample is sorted.
    pub fn empirical_distribution(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(RomaError::EmptyInput("empirical distribution with no samples".into()));
        }
        if !all_finite(&samples) {
            return Err(RomaError::Data("empirical sample has non-finite entries".into()));
        }
        samples.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        Ok(ObjectPoint::EmpiricalDistribution(samples))
    }

    /// Quantile-function values at the midpoint grid of their own length;
    /// must be nondecreasing.
    pub fn quantile_grid(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(RomaError::EmptyInput("quantile grid with no values".into()));
        }
        if !all_finite(&values) {
            return Err(RomaError::Data("quantile values non-finite".into()));
        }
        let span = values.iter().cloned().fold(f64::MIN, f64::max)
            - values.iter().cloned().fold(f64::MAX, f64::min);
        let tol = 1e-9 * (1.0 + span.abs());
        for w in values.windows(2) {
            if w[1] < w[0] - tol {
                return Err(RomaError::Data(format!(
                    "quantile values must be nondecreasing (found {} after {})",
                    w[1], w[0]
                )));
            }
        }
        Ok(ObjectPoint::QuantileGrid(values))
    }

    pub fn composition(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(RomaError::EmptyInput("composition with no parts".into()));
        }
        if !all_finite(&entries) {
            return Err(RomaError::Data("composition has non-finite entries".into()));
        }
        if entries.iter().any(|&v| v < -1e-12) {
            return Err(RomaError::Data("composition entries must be nonnegative".into()));
        }
        let total: f64 = entries.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(RomaError::Data(format!(
                "composition entries must sum to 1 (got {total})"
            )));
        }
        Ok(ObjectPoint::Composition(DVector::from_vec(
            entries.into_iter().map(|v| v.max(0.0)).collect(),
        )))
    }

    pub fn spd_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(RomaError::Dimension(format!(
                "SPD matrix must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = 1.0 + m.amax();
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                    return Err(RomaError::Symmetry(format!(
                        "SPD matrix asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        let eigs = sym.clone().symmetric_eigenvalues();
        if eigs.iter().any(|&l| l < -1e-9 * scale) {
            return Err(RomaError::Data(format!(
                "matrix is not positive semi-definite (min eigenvalue {})",
                eigs.min()
            )));
        }
        Ok(ObjectPoint::SpdMatrix(sym))
    }

    /// Which metric this variant natively belongs to.
    pub fn native_metric(&self) -> MetricKind {
        match self {
            ObjectPoint::Euclidean(_) => MetricKind::Euclidean,
            ObjectPoint::EmpiricalDistribution(_) | ObjectPoint::QuantileGrid(_) => {
                MetricKind::Wasserstein2
            }
            ObjectPoint::Composition(_) => MetricKind::SphericalComposition,
            ObjectPoint::SpdMatrix(_) => MetricKind::Frobenius,
        }
    }
}

/// A fixed discretization grid of levels in (0,1) for quantile functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileGridSpec {
    levels: Vec<f64>,
}

impl QuantileGridSpec {
    /// Midpoint levels t_k = (k - 0.5)/m, the default discretization.
    pub fn midpoints(m: usize) -> Self {
        let levels = (1..=m).map(|k| (k as f64 - 0.5) / m as f64).collect();
        QuantileGridSpec { levels }
    }

    /// Arbitrary strictly increasing levels in (0,1).
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(RomaError::Grid("grid must have at least one level".into()));
        }
        for w in levels.windows(2) {
            if w[1] <= w[0] {
                return Err(RomaError::Grid("grid levels must be strictly increasing".into()));
            }
        }
        if levels[0] <= 0.0 || *levels.last().unwrap() >= 1.0 {
            return Err(RomaError::Grid("grid levels must lie strictly inside (0,1)".into()));
        }
        Ok(QuantileGridSpec { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Quadrature weights √(Δt_k) from the cell widths around each level.
    pub fn weights(&self) -> Vec<f64> {
        let m = self.levels.len();
        let mut w = Vec::with_capacity(m);
        for k in 0..m {
            let lo = if k == 0 { 0.0 } else { 0.5 * (self.levels[k - 1] + self.levels[k]) };
            let hi = if k + 1 == m { 1.0 } else { 0.5 * (self.levels[k] + self.levels[k + 1]) };
            w.push((hi - lo).sqrt());
        }
        w
    }
}

/// Grid bookkeeping attached to an embedded vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub grid: QuantileGridSpec,
    /// True when the coordinates discretize an actual quantile function
    /// (and are therefore nondecreasing after unweighting). Differences of
    /// embedded outcomes clear this flag.
    pub quantile_function: bool,
}

/// A vector in the outcome Hilbert space. For distributional outcomes the
/// coordinates are quantile values times quadrature weights, so that the
/// Euclidean norm equals the discretized L²[0,1] norm.
#[derive(Clone, Debug, PartialEq)]
pub struct HilbertVector {
    pub coords: DVector<f64>,
    pub grid_meta: Option<GridMeta>,
}

impl HilbertVector {
    pub fn new(coords: DVector<f64>, grid_meta: Option<GridMeta>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(RomaError::Data("Hilbert vector has non-finite entries".into()));
        }
        if let Some(meta) = &grid_meta {
            if meta.grid.len() != coords.len() {
                return Err(RomaError::Dimension(format!(
                    "grid has {} levels but vector has {} coordinates",
                    meta.grid.len(),
                    coords.len()
                )));
            }
            if meta.quantile_function {
                let vals = unweight(&coords, &meta.grid);
                let span = vals.iter().cloned().fold(f64::MIN, f64::max)
                    - vals.iter().cloned().fold(f64::MAX, f64::min);
                let tol = 1e-9 * (1.0 + span.abs());
                if vals.windows(2).any(|w| w[1] < w[0] - tol) {
                    return Err(RomaError::Data(
                        "embedded quantile function must be nondecreasing".into(),
                    ));
                }
            }
        }
        Ok(HilbertVector { coords, grid_meta })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    /// Unweighted quantile values, when this vector discretizes a function
    /// on a grid.
    pub fn grid_values(&self) -> Option<Vec<f64>> {
        self.grid_meta.as_ref().map(|meta| unweight(&self.coords, &meta.grid))
    }

    /// Difference of two vectors; the result is no longer marked as a
    /// quantile function.
    pub fn sub(&self, other: &HilbertVector) -> Result<HilbertVector> {
        if self.dim() != other.dim() {
            return Err(RomaError::Dimension(format!(
                "Hilbert vectors of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(HilbertVector {
            coords: &self.coords - &other.coords,
            grid_meta: free_meta(self.grid_meta.as_ref().or(other.grid_meta.as_ref())),
        })
    }

    pub fn add(&self, other: &HilbertVector) -> Result<HilbertVector> {
        if self.dim() != other.dim() {
            return Err(RomaError::Dimension(format!(
                "Hilbert vectors of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(HilbertVector {
            coords: &self.coords + &other.coords,
            grid_meta: free_meta(self.grid_meta.as_ref().or(other.grid_meta.as_ref())),
        })
    }

    /// Direction vector whose pairing ⟨·, v⟩ evaluates a grid-embedded
    /// vector at grid point `k` (in unweighted function values).
    pub fn pointwise_direction(grid: &QuantileGridSpec, k: usize) -> DVector<f64> {
        let w = grid.weights();
        let mut v = DVector::zeros(grid.len());
        v[k] = 1.0 / w[k];
        v
    }
}

fn free_meta(meta: Option<&GridMeta>) -> Option<GridMeta> {
    meta.map(|m| GridMeta { grid: m.grid.clone(), quantile_function: false })
}

fn unweight(coords: &DVector<f64>, grid: &QuantileGridSpec) -> Vec<f64> {
    let w = grid.weights();
    coords.iter().zip(w.iter()).map(|(c, wk)| c / wk).collect()
}

/// Empirical quantile of a sorted sample at level `t` (left-continuous
/// order-statistic convention: the ⌈t·m⌉-th order statistic).
pub fn empirical_quantile(sorted: &[f64], t: f64) -> f64 {
    let m = sorted.len();
    let idx = ((t * m as f64).ceil() as usize).clamp(1, m) - 1;
    sorted[idx]
}

/// Quantile value of a point at level `t`. `QuantileGrid` values are
/// interpolated linearly between their implicit midpoint levels with
/// constant extrapolation at the ends.
fn quantile_at(point: &ObjectPoint, t: f64) -> Result<f64> {
    match point {
        ObjectPoint::EmpiricalDistribution(s) => Ok(empirical_quantile(s, t)),
        ObjectPoint::QuantileGrid(v) => {
            let m = v.len();
            let pos = t * m as f64 - 0.5;
            if pos <= 0.0 {
                Ok(v[0])
            } else if pos >= (m - 1) as f64 {
                Ok(v[m - 1])
            } else {
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                Ok(v[lo] * (1.0 - frac) + v[lo + 1] * frac)
            }
        }
        _ => Err(RomaError::TypeMismatch("quantile evaluation needs a distributional point".into())),
    }
}

/// Quantile values of a distributional point on a grid.
pub fn quantile_values_on(point: &ObjectPoint, grid: &QuantileGridSpec) -> Result<Vec<f64>> {
    grid.levels().iter().map(|&t| quantile_at(point, t)).collect()
}

/// Empirical Wasserstein-2 distance between two same-size sorted samples
/// through order statistics: { m⁻¹ Σ (a₍ⱼ₎ − b₍ⱼ₎)² }^{1/2}.
pub fn wasserstein2_empirical(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(RomaError::EmptyInput("empirical Wasserstein needs nonempty samples".into()));
    }
    if a.len() != b.len() {
        return Err(RomaError::Dimension(format!(
            "empirical Wasserstein needs equal sample sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let m = a.len() as f64;
    let ss: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / m).sqrt())
}

/// Wasserstein-2 distance between two distributional points. Equal-size
/// empirical samples use order statistics exactly; ragged or mixed inputs
/// are resampled to a common midpoint grid via their quantile functions.
fn wasserstein2_distance(a: &ObjectPoint, b: &ObjectPoint) -> Result<f64> {
    if let (ObjectPoint::EmpiricalDistribution(sa), ObjectPoint::EmpiricalDistribution(sb)) = (a, b)
    {
        if sa.len() == sb.len() {
            return wasserstein2_empirical(sa, sb);
        }
    }
    if let (ObjectPoint::QuantileGrid(qa), ObjectPoint::QuantileGrid(qb)) = (a, b) {
        if qa.len() == qb.len() {
            let m = qa.len() as f64;
            let ss: f64 = qa.iter().zip(qb.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            return Ok((ss / m).sqrt());
        }
    }
    let size = point_len(a).max(point_len(b));
    let grid = QuantileGridSpec::midpoints(size);
    let qa = quantile_values_on(a, &grid)?;
    let qb = quantile_values_on(b, &grid)?;
    let ss: f64 = qa.iter().zip(qb.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / size as f64).sqrt())
}

fn point_len(p: &ObjectPoint) -> usize {
    match p {
        ObjectPoint::Euclidean(v) => v.len(),
        ObjectPoint::EmpiricalDistribution(s) => s.len(),
        ObjectPoint::QuantileGrid(v) => v.len(),
        ObjectPoint::Composition(v) => v.len(),
        ObjectPoint::SpdMatrix(m) => m.nrows(),
    }
}

/// Distance between two points under the stated metric.
pub fn metric_distance(space: MetricKind, a: &ObjectPoint, b: &ObjectPoint) -> Result<f64> {
    match (space, a, b) {
        (MetricKind::Euclidean, ObjectPoint::Euclidean(x), ObjectPoint::Euclidean(y)) => {
            if x.len() != y.len() {
                return Err(RomaError::Dimension(format!(
                    "euclidean points of dimension {} and {}",
                    x.len(),
                    y.len()
                )));
            }
            Ok((x - y).norm())
        }
        (MetricKind::Wasserstein2, _, _)
            if a.native_metric() == MetricKind::Wasserstein2
                && b.native_metric() == MetricKind::Wasserstein2 =>
        {
            wasserstein2_distance(a, b)
        }
        (MetricKind::SphericalComposition, ObjectPoint::Composition(x), ObjectPoint::Composition(y)) => {
            if x.len() != y.len() {
                return Err(RomaError::Dimension(format!(
                    "compositions of dimension {} and {}",
                    x.len(),
                    y.len()
                )));
            }
            // Square-root map to the sphere, then the geodesic angle.
            // arccos(Σ√(pq)) is evaluated through the chord length as
            // 2·asin(‖√x − √y‖/2), which is exact at zero distance where
            // arccos loses half the significant digits; the asin argument
            // is clipped to absorb floating-point drift.
            let chord: f64 = x
                .iter()
                .zip(y.iter())
                .map(|(p, q)| {
                    let d = p.max(0.0).sqrt() - q.max(0.0).sqrt();
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            Ok(2.0 * (0.5 * chord).clamp(-1.0, 1.0).asin())
        }
        (MetricKind::Frobenius, ObjectPoint::SpdMatrix(x), ObjectPoint::SpdMatrix(y)) => {
            if x.nrows() != y.nrows() {
                return Err(RomaError::Dimension(format!(
                    "SPD matrices of size {} and {}",
                    x.nrows(),
                    y.nrows()
                )));
            }
            Ok((x - y).norm())
        }
        _ => Err(RomaError::TypeMismatch(format!(
            "points {:?}/{:?} do not match metric {:?}",
            a.native_metric(),
            b.native_metric(),
            space
        ))),
    }
}

/// Embeds an outcome into a finite-dimensional Hilbert coordinate vector.
///
/// Distributional outcomes return their quantile function at the grid
/// levels with quadrature weights folded in; Euclidean, composition, and
/// SPD outcomes embed identically (flattened).
pub fn embed_outcome(y: &ObjectPoint, grid: &QuantileGridSpec) -> Result<HilbertVector> {
    match y {
        ObjectPoint::EmpiricalDistribution(_) | ObjectPoint::QuantileGrid(_) => {
            let vals = quantile_values_on(y, grid)?;
            let w = grid.weights();
            let coords =
                DVector::from_iterator(vals.len(), vals.iter().zip(w.iter()).map(|(v, wk)| v * wk));
            HilbertVector::new(
                coords,
                Some(GridMeta { grid: grid.clone(), quantile_function: true }),
            )
        }
        ObjectPoint::Euclidean(v) => HilbertVector::new(v.clone(), None),
        ObjectPoint::Composition(v) => HilbertVector::new(v.clone(), None),
        ObjectPoint::SpdMatrix(m) => {
            let coords = DVector::from_iterator(m.nrows() * m.ncols(), m.transpose().iter().cloned());
            HilbertVector::new(coords, None)
        }
    }
}


// TODO: remove with the calibration scratch examples.
pub fn statrs_normal_quantiles(grid: &QuantileGridSpec) -> Vec<f64> {
    use statrs::distribution::ContinuousCDF;
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    grid.levels().iter().map(|&t| normal.inverse_cdf(t)).collect()
}
