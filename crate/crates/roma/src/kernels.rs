//! Reproducing kernels on object points and Gram-matrix assembly.
//!
//! Three kernel kinds cover the models in use: linear kernels on spaces
//! with a native inner product, Gaussian radial basis kernels
//! exp(−γ d²(a,b)) over any supported metric, and the distance-induced
//! kernel ½[d(a,x₀) + d(b,x₀) − d(a,b)] which is positive definite on
//! metrics of negative type.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RomaError};
use crate::object_spaces::{
    metric_distance, quantile_values_on, MetricKind, ObjectPoint, QuantileGridSpec,
};

/// Kernel families.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelKind {
    /// ⟨a,b⟩ + c under the variant's native inner product.
    Linear { offset: f64 },
    /// exp(−γ·d²(a,b)).
    GaussianRbf { bandwidth: f64 },
    /// ½[d(a,x₀) + d(b,x₀) − d(a,b)] for a fixed anchor x₀.
    DistanceInduced { anchor: ObjectPoint },
}

/// A kernel bound to the metric it evaluates distances in.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub metric: MetricKind,
}

/// Serializable summary of a kernel choice (anchors are reported by index
/// into the training set at a higher level, so only scalars appear here).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub kind: String,
    pub metric: String,
    pub bandwidth: Option<f64>,
    pub offset: Option<f64>,
}

impl KernelSpec {
    /// Linear kernel with zero offset (the centering projection annihilates
    /// a constant shift, so the offset defaults to zero).
    pub fn linear(metric: MetricKind) -> Self {
        KernelSpec { kind: KernelKind::Linear { offset: 0.0 }, metric }
    }

    pub fn linear_with_offset(metric: MetricKind, offset: f64) -> Result<Self> {
        if offset < 0.0 || !offset.is_finite() {
            return Err(RomaError::Config("linear kernel offset must be finite and ≥ 0".into()));
        }
        Ok(KernelSpec { kind: KernelKind::Linear { offset }, metric })
    }

    pub fn gaussian(metric: MetricKind, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(RomaError::Config(format!(
                "Gaussian kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec { kind: KernelKind::GaussianRbf { bandwidth }, metric })
    }

    pub fn distance_induced(metric: MetricKind, anchor: ObjectPoint) -> Self {
        KernelSpec { kind: KernelKind::DistanceInduced { anchor }, metric }
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match &self.kind {
            KernelKind::GaussianRbf { bandwidth } => Some(*bandwidth),
            _ => None,
        }
    }

    pub fn summary(&self) -> KernelSummary {
        let (kind, bandwidth, offset) = match &self.kind {
            KernelKind::Linear { offset } => ("linear".to_string(), None, Some(*offset)),
            KernelKind::GaussianRbf { bandwidth } => ("gaussian".to_string(), Some(*bandwidth), None),
            KernelKind::DistanceInduced { .. } => ("distance_induced".to_string(), None, None),
        };
        KernelSummary { kind, metric: format!("{:?}", self.metric), bandwidth, offset }
    }
}

/// Native inner product of two points, for linear kernels. Distributional
/// points use the L² inner product of quantile functions on a common
/// midpoint grid; SPD matrices use the trace product. Compositions have no
/// native inner product.
fn native_inner_product(a: &ObjectPoint, b: &ObjectPoint) -> Result<f64> {
    match (a, b) {
        (ObjectPoint::Euclidean(x), ObjectPoint::Euclidean(y)) => {
            if x.len() != y.len() {
                return Err(RomaError::Dimension(format!(
                    "euclidean points of dimension {} and {}",
                    x.len(),
                    y.len()
                )));
            }
            Ok(x.dot(y))
        }
        (ObjectPoint::SpdMatrix(x), ObjectPoint::SpdMatrix(y)) => {
            if x.nrows() != y.nrows() {
                return Err(RomaError::Dimension(format!(
                    "SPD matrices of size {} and {}",
                    x.nrows(),
                    y.nrows()
                )));
            }
            Ok((x.transpose() * y).trace())
        }
        _ if a.native_metric() == MetricKind::Wasserstein2
            && b.native_metric() == MetricKind::Wasserstein2 =>
        {
            let (la, lb) = (dist_len(a), dist_len(b));
            // Same-size empirical samples reduce to the exact
            // order-statistic form (1/m) Σ a₍ⱼ₎ b₍ⱼ₎.
            if let (ObjectPoint::EmpiricalDistribution(sa), ObjectPoint::EmpiricalDistribution(sb)) =
                (a, b)
            {
                if la == lb {
                    let m = la as f64;
                    return Ok(sa.iter().zip(sb.iter()).map(|(x, y)| x * y).sum::<f64>() / m);
                }
            }
            let size = la.max(lb);
            let grid = QuantileGridSpec::midpoints(size);
            let qa = quantile_values_on(a, &grid)?;
            let qb = quantile_values_on(b, &grid)?;
            Ok(qa.iter().zip(qb.iter()).map(|(x, y)| x * y).sum::<f64>() / size as f64)
        }
        _ => Err(RomaError::TypeMismatch(
            "linear kernel needs a variant with a native inner product".into(),
        )),
    }
}

fn dist_len(p: &ObjectPoint) -> usize {
    match p {
        ObjectPoint::EmpiricalDistribution(s) => s.len(),
        ObjectPoint::QuantileGrid(v) => v.len(),
        _ => 0,
    }
}

/// Evaluates a kernel on a pair of points.
pub fn kernel_eval(spec: &KernelSpec, a: &ObjectPoint, b: &ObjectPoint) -> Result<f64> {
    match &spec.kind {
        KernelKind::Linear { offset } => Ok(native_inner_product(a, b)? + offset),
        KernelKind::GaussianRbf { bandwidth } => {
            let d = metric_distance(spec.metric, a, b)?;
            Ok((-bandwidth * d * d).exp())
        }
        KernelKind::DistanceInduced { anchor } => {
            let da = metric_distance(spec.metric, a, anchor)?;
            let db = metric_distance(spec.metric, b, anchor)?;
            let dab = metric_distance(spec.metric, a, b)?;
            Ok(0.5 * (da + db - dab))
        }
    }
}

/// An n×n kernel Gram matrix, symmetric by construction.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    /// The generating kernel; `None` for derived matrices such as the
    /// additive joint Gram.
    kernel: Option<KernelSpec>,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Wraps an explicitly assembled symmetric matrix.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(RomaError::Dimension("Gram matrix must be square".into()));
        }
        let scale = 1.0 + entries.amax();
        for i in 0..entries.nrows() {
            for j in (i + 1)..entries.ncols() {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-10 * scale {
                    return Err(RomaError::Symmetry(format!("Gram asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(GramMatrix { entries, kernel: None })
    }
}

/// Assembles the Gram matrix of a kernel over a point list. The upper
/// triangle is computed and mirrored, so the result is exactly symmetric.
pub fn gram(spec: &KernelSpec, points: &[ObjectPoint]) -> Result<GramMatrix> {
    let n = points.len();
    if n < 2 {
        return Err(RomaError::EmptyInput(format!("Gram assembly needs n ≥ 2 points, got {n}")));
    }
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel_eval(spec, &points[i], &points[j]).map_err(|e| {
                RomaError::Numerical(format!("kernel evaluation failed at pair ({i},{j}): {e}"))
            })?;
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix { entries, kernel: Some(spec.clone()) })
}

/// Entrywise sum K_X + K_M, the Gram of the additive joint kernel.
pub fn joint_gram(kx: &GramMatrix, km: &GramMatrix) -> Result<GramMatrix> {
    if kx.n() != km.n() {
        return Err(RomaError::Dimension(format!(
            "joint Gram needs matching sizes, got {} and {}",
            kx.n(),
            km.n()
        )));
    }
    Ok(GramMatrix { entries: &kx.entries + &km.entries, kernel: None })
}

/// Log-spaced Gaussian bandwidth candidates centered at the median
/// heuristic 1/median(d²), spanning two orders of magnitude each way.
pub fn bandwidth_grid(points: &[ObjectPoint], metric: MetricKind, size: usize) -> Result<Vec<f64>> {
    if size == 0 {
        return Err(RomaError::Config("bandwidth grid size must be ≥ 1".into()));
    }
    if points.len() < 2 {
        return Err(RomaError::EmptyInput("bandwidth grid needs at least two points".into()));
    }
    let mut sq = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = metric_distance(metric, &points[i], &points[j])?;
            sq.push(d * d);
        }
    }
    sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut median = percentile_sorted(&sq, 0.5);
    if median == 0.0 {
        // Duplicated points drag the median to zero; fall back to the
        // median of the strictly positive squared distances.
        let pos: Vec<f64> = sq.iter().cloned().filter(|&v| v > 0.0).collect();
        if pos.is_empty() {
            return Err(RomaError::DegenerateData("all pairwise distances are zero".into()));
        }
        median = percentile_sorted(&pos, 0.5);
    }
    let center = 1.0 / median;
    if size == 1 {
        return Ok(vec![center]);
    }
    let grid = (0..size)
        .map(|i| {
            let expo = -2.0 + 4.0 * i as f64 / (size - 1) as f64;
            center * 10f64.powf(expo)
        })
        .collect();
    Ok(grid)
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[n - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn pt(v: f64) -> ObjectPoint {
        ObjectPoint::scalar(v)
    }

    #[test]
    fn gaussian_at_equal_points_is_one() {
        let spec = KernelSpec::gaussian(MetricKind::Euclidean, 3.7).unwrap();
        assert_eq!(kernel_eval(&spec, &pt(2.0), &pt(2.0)).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_half_at_log_two() {
        let spec = KernelSpec::gaussian(MetricKind::Euclidean, 2f64.ln()).unwrap();
        assert_abs_diff_eq!(kernel_eval(&spec, &pt(0.0), &pt(1.0)).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn distance_induced_vanishes_at_anchor() {
        let anchor = pt(0.3);
        let spec = KernelSpec::distance_induced(MetricKind::Euclidean, anchor.clone());
        let v = kernel_eval(&spec, &anchor, &pt(5.0)).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_gram_of_unit_vectors_is_identity() {
        let e1 = ObjectPoint::euclidean(vec![1.0, 0.0]).unwrap();
        let e2 = ObjectPoint::euclidean(vec![0.0, 1.0]).unwrap();
        let g = gram(&KernelSpec::linear(MetricKind::Euclidean), &[e1, e2]).unwrap();
        assert_eq!(g.entries(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn gaussian_gram_of_identical_points_is_all_ones() {
        let spec = KernelSpec::gaussian(MetricKind::Euclidean, 1.0).unwrap();
        let pts = vec![pt(1.0); 4];
        let g = gram(&spec, &pts).unwrap();
        assert!(g.entries().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn joint_gram_matches_elementwise_sum() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let pts: Vec<ObjectPoint> = (0..6).map(|_| pt(rng.sample(StandardNormal))).collect();
        let kx = gram(&KernelSpec::linear(MetricKind::Euclidean), &pts).unwrap();
        let km = gram(&KernelSpec::gaussian(MetricKind::Euclidean, 0.7).unwrap(), &pts).unwrap();
        let kz = joint_gram(&kx, &km).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_abs_diff_eq!(
                    kz.entries()[(i, j)],
                    kx.entries()[(i, j)] + km.entries()[(i, j)],
                    epsilon = 0.0
                );
            }
        }
        // Zero mediator Gram leaves the exposure Gram unchanged.
        let zero = GramMatrix::from_entries(DMatrix::zeros(6, 6)).unwrap();
        let same = joint_gram(&kx, &zero).unwrap();
        assert_eq!(same.entries(), kx.entries());
        // Two identity blocks sum to 2I.
        let i6 = GramMatrix::from_entries(DMatrix::identity(6, 6)).unwrap();
        let twice = joint_gram(&i6, &i6).unwrap();
        assert_eq!(twice.entries(), &(DMatrix::<f64>::identity(6, 6) * 2.0));
    }

    #[test]
    fn joint_gram_dimension_mismatch() {
        let a = GramMatrix::from_entries(DMatrix::zeros(3, 3)).unwrap();
        let b = GramMatrix::from_entries(DMatrix::zeros(4, 4)).unwrap();
        assert!(matches!(joint_gram(&a, &b), Err(RomaError::Dimension(_))));
    }

    #[test]
    fn bandwidth_grid_median_heuristic() {
        // Two points at distance √2: 1/d² = 0.5.
        let pts = [pt(0.0), pt(2f64.sqrt())];
        let g = bandwidth_grid(&pts, MetricKind::Euclidean, 1).unwrap();
        assert_abs_diff_eq!(g[0], 0.5, epsilon = 1e-12);

        // Unit-distance pairs: median d² = 1, grid center 1.
        let square = [
            ObjectPoint::euclidean(vec![0.0, 0.0]).unwrap(),
            ObjectPoint::euclidean(vec![1.0, 0.0]).unwrap(),
        ];
        let g1 = bandwidth_grid(&square, MetricKind::Euclidean, 1).unwrap();
        assert_abs_diff_eq!(g1[0], 1.0, epsilon = 1e-12);

        let g5 = bandwidth_grid(&square, MetricKind::Euclidean, 5).unwrap();
        assert_eq!(g5.len(), 5);
        assert_abs_diff_eq!(g5[2], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g5[0], 1e-2, epsilon = 1e-12);
        assert_abs_diff_eq!(g5[4], 1e2, epsilon = 1e-10);

        let dup = [pt(1.0), pt(1.0)];
        assert!(matches!(
            bandwidth_grid(&dup, MetricKind::Euclidean, 3),
            Err(RomaError::DegenerateData(_))
        ));
    }

    fn random_points(kind: MetricKind, n: usize, rng: &mut ChaCha12Rng) -> Vec<ObjectPoint> {
        (0..n)
            .map(|_| match kind {
                MetricKind::Euclidean => ObjectPoint::euclidean(
                    (0..3).map(|_| rng.sample(StandardNormal)).collect(),
                )
                .unwrap(),
                MetricKind::Wasserstein2 => {
                    let mu: f64 = rng.sample(StandardNormal);
                    ObjectPoint::empirical_distribution(
                        (0..30).map(|_| mu + rng.sample::<f64, _>(StandardNormal)).collect(),
                    )
                    .unwrap()
                }
                MetricKind::SphericalComposition => {
                    let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    ObjectPoint::composition(raw.into_iter().map(|v| v / s).collect()).unwrap()
                }
                MetricKind::Frobenius => {
                    let a = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
                    ObjectPoint::spd_matrix(&a * a.transpose()).unwrap()
                }
            })
            .collect()
    }

    fn assert_psd(g: &GramMatrix) {
        let eigs = g.entries().clone().symmetric_eigenvalues();
        let max = eigs.amax();
        let min = eigs.min();
        assert!(min >= -1e-8 * max.max(1.0), "min eig {min}, max eig {max}");
    }

    #[test]
    fn grams_are_psd_for_all_kinds_and_metrics() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let metrics = [
            MetricKind::Euclidean,
            MetricKind::Wasserstein2,
            MetricKind::SphericalComposition,
            MetricKind::Frobenius,
        ];
        for kind in metrics {
            let pts = random_points(kind, 50, &mut rng);
            let gauss = KernelSpec::gaussian(kind, 0.8).unwrap();
            assert_psd(&gram(&gauss, &pts).unwrap());
            let induced = KernelSpec::distance_induced(kind, pts[0].clone());
            assert_psd(&gram(&induced, &pts).unwrap());
            if kind != MetricKind::SphericalComposition {
                let lin = KernelSpec::linear(kind);
                assert_psd(&gram(&lin, &pts).unwrap());
            }
        }
    }

    #[test]
    fn kernel_eval_symmetry() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let pts = random_points(MetricKind::Wasserstein2, 8, &mut rng);
        let specs = [
            KernelSpec::linear(MetricKind::Wasserstein2),
            KernelSpec::gaussian(MetricKind::Wasserstein2, 1.3).unwrap(),
            KernelSpec::distance_induced(MetricKind::Wasserstein2, pts[0].clone()),
        ];
        for spec in &specs {
            for a in &pts {
                for b in &pts {
                    let ab = kernel_eval(spec, a, b).unwrap();
                    let ba = kernel_eval(spec, b, a).unwrap();
                    assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_kernel_rejects_compositions() {
        let c = ObjectPoint::composition(vec![0.5, 0.5]).unwrap();
        let spec = KernelSpec::linear(MetricKind::SphericalComposition);
        assert!(matches!(kernel_eval(&spec, &c, &c), Err(RomaError::TypeMismatch(_))));
    }
}
