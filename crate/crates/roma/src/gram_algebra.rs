//! Centered Gram systems, Tikhonov solves, evaluation vectors for
//! out-of-sample points, and symmetric eigendecompositions.
//!
//! Everything downstream reduces to one primitive: given a centered Gram
//! matrix G = QKQ with Q = I − (1/n)11ᵀ and a ridge parameter ε > 0, solve
//! (G + εI)x = v against cached Cholesky factors. Eigendecompositions of
//! empirical covariance operators always go through the n×n Gram of
//! residual vectors, never the ambient dimension.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RomaError};
use crate::kernels::{kernel_eval, GramMatrix, KernelSpec};
use crate::object_spaces::ObjectPoint;

/// Which training basis a coordinate vector refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// Centered exposure kernel sections.
    BX,
    /// Centered mediator kernel sections.
    BM,
    /// Centered joint (additive) kernel sections.
    BZ,
}

/// Coordinates of an element with respect to one of the training bases.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordVector {
    pub coords: DVector<f64>,
    pub basis: Basis,
}

/// Compensated (Kahan) summation. The solves downstream divide by ε, so
/// summation error in means must stay at the rounding unit rather than
/// growing with n.
pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

pub(crate) fn kahan_mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    kahan_sum(values) / n as f64
}

/// Centers a symmetric kernel matrix: QKQ with Q = I − (1/n)11ᵀ.
///
/// Computed as K − rowmean − colmean + grandmean and re-symmetrized, so row
/// and column sums vanish to machine precision.
pub fn center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let col_means: Vec<f64> = (0..n).map(|j| kahan_mean(k.column(j).iter().cloned(), n)).collect();
    let row_means: Vec<f64> = (0..n).map(|i| kahan_mean(k.row(i).iter().cloned(), n)).collect();
    let grand = kahan_mean(col_means.iter().cloned(), n);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = k[(i, j)] - row_means[i] - col_means[j] + grand;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = s;
            g[(j, i)] = s;
        }
    }
    g
}

/// A centered Gram matrix with a cached factorization of (G + εI).
#[derive(Clone, Debug)]
pub struct GramSystem {
    k: GramMatrix,
    g: DMatrix<f64>,
    eps: f64,
    chol: Cholesky<f64, Dyn>,
    /// Frobenius norm of (G + εI), for the backward-stable residual test.
    reg_norm: f64,
    basis: Basis,
}

impl GramSystem {
    /// Builds the system, centering K and factorizing (G + εI) eagerly.
    ///
    /// Rejects ε at or below the floor 10⁻¹²·tr(G)/n, where conditioning
    /// becomes catastrophic.
    pub fn new(k: GramMatrix, eps: f64, basis: Basis) -> Result<Self> {
        let n = k.n();
        let g = center(k.entries());
        let floor = 1e-12 * g.trace() / n as f64;
        if !(eps > 0.0) || !eps.is_finite() || eps <= floor {
            return Err(RomaError::RegularizationTooSmall(format!(
                "eps = {eps} is at or below the floor {floor}"
            )));
        }
        let mut reg = g.clone();
        for i in 0..n {
            reg[(i, i)] += eps;
        }
        let reg_norm = reg.norm();
        let chol = Cholesky::new(reg).ok_or_else(|| {
            RomaError::Numerical("Cholesky factorization of (G + εI) failed".into())
        })?;
        Ok(GramSystem { k, g, eps, chol, reg_norm, basis })
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        self.k.entries()
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.k
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// Solves (G + εI)x = v with iterative refinement. The residual meets
    /// the backward-stable bound ‖(G+εI)x − v‖ ≤ 10⁻¹⁰(‖v‖ + ‖G+εI‖‖x‖);
    /// when the solution is not amplified by conditioning this reduces to
    /// a plain 10⁻¹⁰‖v‖ forward bound.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n() {
            return Err(RomaError::Dimension(format!(
                "solve expects length {}, got {}",
                self.n(),
                v.len()
            )));
        }
        let apply = |x: &DVector<f64>| &self.g * x + x * self.eps;
        let mut x = self.chol.solve(v);
        let vnorm = v.norm();
        let tol = |x: &DVector<f64>| {
            1e-10 * (vnorm + self.reg_norm * x.norm()).max(f64::MIN_POSITIVE)
        };
        for _ in 0..3 {
            let r = v - apply(&x);
            if r.norm() <= tol(&x) {
                return Ok(x);
            }
            x += self.chol.solve(&r);
        }
        let res = (v - apply(&x)).norm();
        if res <= 10.0 * tol(&x) {
            Ok(x)
        } else {
            Err(RomaError::Numerical(format!(
                "Tikhonov solve did not reach tolerance: residual {res} for ‖v‖ = {vnorm}"
            )))
        }
    }

    /// Matrix variant of [`GramSystem::solve`] over the columns of `v`.
    pub fn solve_matrix(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.nrows() != self.n() {
            return Err(RomaError::Dimension(format!(
                "solve expects {} rows, got {}",
                self.n(),
                v.nrows()
            )));
        }
        let mut x = self.chol.solve(v);
        let r = v - (&self.g * &x + &x * self.eps);
        x += self.chol.solve(&r);
        Ok(x)
    }

    /// Coordinates Q(G + εI)⁻¹ d of the element with evaluation vector d.
    ///
    /// The mean of d is removed before the solve: with G centered, Q and
    /// the resolvent commute, and keeping the 1-component out of the solve
    /// avoids 1/ε-amplified intermediates at small ε.
    pub fn coord_of(&self, d: &DVector<f64>) -> Result<CoordVector> {
        let mut qd = d.clone();
        let mean = kahan_mean(qd.iter().cloned(), qd.len());
        qd.add_scalar_mut(-mean);
        let mut coords = self.solve(&qd)?;
        let mean = kahan_mean(coords.iter().cloned(), coords.len());
        coords.add_scalar_mut(-mean);
        Ok(CoordVector { coords, basis: self.basis })
    }

    /// Column-wise [`GramSystem::coord_of`]: Q(G + εI)⁻¹Q applied to each
    /// column of `d`.
    pub fn coord_matrix(&self, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut centered = d.clone();
        for mut col in centered.column_iter_mut() {
            let mean = kahan_mean(col.iter().cloned(), col.len());
            for v in col.iter_mut() {
                *v -= mean;
            }
        }
        let mut solved = self.solve_matrix(&centered)?;
        for mut col in solved.column_iter_mut() {
            let mean = kahan_mean(col.iter().cloned(), col.len());
            for v in col.iter_mut() {
                *v -= mean;
            }
        }
        Ok(solved)
    }
}

/// Applies the cached factorization: (G + εI)⁻¹ v.
pub fn tikhonov_apply(sys: &GramSystem, v: &DVector<f64>) -> Result<DVector<f64>> {
    sys.solve(v)
}

/// Coordinate recovery for an evaluation vector: Q(G + εI)⁻¹ d.
pub fn coord_of(sys: &GramSystem, d: &DVector<f64>) -> Result<CoordVector> {
    sys.coord_of(d)
}

/// Centered evaluation vector of a point against a training set:
/// component i is κ(x, Xᵢ) − (1/n) Σₖ κ(Xₖ, Xᵢ).
pub fn eval_vector(spec: &KernelSpec, train: &[ObjectPoint], x: &ObjectPoint) -> Result<DVector<f64>> {
    let n = train.len();
    if n == 0 {
        return Err(RomaError::EmptyInput("evaluation vector needs training points".into()));
    }
    let mut d = DVector::zeros(n);
    for i in 0..n {
        let mut col = Vec::with_capacity(n);
        for k in 0..n {
            col.push(kernel_eval(spec, &train[k], &train[i])?);
        }
        let mean = kahan_mean(col.into_iter(), n);
        d[i] = kernel_eval(spec, x, &train[i])? - mean;
    }
    Ok(d)
}

/// Fast path for the centered evaluation vector when the column means
/// μ̂(Xᵢ) of the training Gram are already available.
pub fn eval_vector_with_means(
    spec: &KernelSpec,
    train: &[ObjectPoint],
    col_means: &DVector<f64>,
    x: &ObjectPoint,
) -> Result<DVector<f64>> {
    let n = train.len();
    if col_means.len() != n {
        return Err(RomaError::Dimension("column means do not match training size".into()));
    }
    let mut d = DVector::zeros(n);
    for i in 0..n {
        d[i] = kernel_eval(spec, x, &train[i])? - col_means[i];
    }
    Ok(d)
}

/// Leading eigenvalues (descending) and eigenvectors of a symmetric matrix.
pub fn sym_eigs(a: &DMatrix<f64>, top_l: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(RomaError::Dimension("eigendecomposition needs a square matrix".into()));
    }
    if top_l == 0 || top_l > n {
        return Err(RomaError::Dimension(format!("top_l must be in 1..={n}, got {top_l}")));
    }
    let scale = 1.0 + a.amax();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-8 * scale {
                return Err(RomaError::Symmetry(format!(
                    "matrix asymmetric at ({i},{j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }
    let sym = (a + a.transpose()) * 0.5;
    let decomp = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| decomp.eigenvalues[j].partial_cmp(&decomp.eigenvalues[i]).unwrap());
    let values: Vec<f64> = order.iter().take(top_l).map(|&i| decomp.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, top_l);
    for (col, &i) in order.iter().take(top_l).enumerate() {
        vectors.set_column(col, &decomp.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram, KernelSpec};
    use crate::object_spaces::MetricKind;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn random_psd(n: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose()
    }

    fn system_from(entries: DMatrix<f64>, eps: f64) -> GramSystem {
        GramSystem::new(GramMatrix::from_entries(entries).unwrap(), eps, Basis::BX).unwrap()
    }

    #[test]
    fn center_annihilates_constants() {
        let ones = DMatrix::from_element(5, 5, 1.0);
        let g = center(&ones);
        assert!(g.amax() < 1e-14);
    }

    #[test]
    fn center_is_idempotent_and_matches_projection_product() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let k = random_psd(8, &mut rng);
        let n = 8;
        let q = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let oracle = &q * &k * &q;
        let g = center(&k);
        assert!((&g - &oracle).amax() < 1e-12 * (1.0 + k.amax()));
        let gg = center(&g);
        assert!((&gg - &g).amax() < 1e-10);
        for i in 0..n {
            assert!(g.row(i).sum().abs() < 1e-8 * n as f64 * k.amax());
        }
    }

    #[test]
    fn tikhonov_trivial_cases() {
        let sys = system_from(DMatrix::zeros(4, 4), 1.0);
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let x = tikhonov_apply(&sys, &v).unwrap();
        assert!((x - &v).norm() < 1e-12);

        // K = I centers to G = Q; along a centered vector Q acts as the
        // identity, so (Q + I)⁻¹ halves it.
        let sys = system_from(DMatrix::identity(4, 4), 1.0);
        let centered = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.0]);
        let x = sys.solve(&centered).unwrap();
        assert!((x * 2.0 - &centered).norm() < 1e-12);
    }

    #[test]
    fn tikhonov_matches_dense_inverse() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..10 {
            let k = random_psd(12, &mut rng);
            let eps = 0.1;
            let sys = system_from(k.clone(), eps);
            let dense = (center(&k) + DMatrix::identity(12, 12) * eps).try_inverse().unwrap();
            let v = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = sys.solve(&v).unwrap();
            let oracle = &dense * &v;
            assert!((x - oracle).norm() < 1e-9);
        }
    }

    #[test]
    fn tikhonov_is_linear() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let sys = system_from(random_psd(10, &mut rng), 0.3);
        let u = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lhs = sys.solve(&(&u * 2.5 - &v * 0.7)).unwrap();
        let rhs = sys.solve(&u).unwrap() * 2.5 - sys.solve(&v).unwrap() * 0.7;
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn solution_norm_shrinks_with_regularization() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let k = random_psd(10, &mut rng);
        let v = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut last = f64::INFINITY;
        for eps in [1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let sys = system_from(k.clone(), eps);
            let norm = sys.solve(&v).unwrap().norm();
            assert!(norm <= last + 1e-12, "‖x‖ grew from {last} to {norm} at eps = {eps}");
            last = norm;
        }
    }

    #[test]
    fn rejects_eps_at_floor() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let k = random_psd(6, &mut rng);
        let floor = 1e-12 * center(&k).trace() / 6.0;
        let res = GramSystem::new(GramMatrix::from_entries(k).unwrap(), floor * 0.5, Basis::BX);
        assert!(matches!(res, Err(RomaError::RegularizationTooSmall(_))));
    }

    #[test]
    fn eval_vector_hand_case() {
        // Linear kernel on reals, X = {0, 2}, x = 0: column means are
        // (0, 2), so d = (0·0 − 0, 0·2 − 2) = (0, −2).
        let train = vec![ObjectPoint::scalar(0.0), ObjectPoint::scalar(2.0)];
        let spec = KernelSpec::linear(MetricKind::Euclidean);
        let d = eval_vector(&spec, &train, &ObjectPoint::scalar(0.0)).unwrap();
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d[1], -2.0, epsilon = 1e-14);
    }

    #[test]
    fn eval_vector_vanishes_at_mean_behavior() {
        // For a linear kernel the empirical mean section is attained at
        // the sample mean of the training points.
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let xs: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
        let mean = xs.iter().sum::<f64>() / 9.0;
        let train: Vec<ObjectPoint> = xs.iter().map(|&v| ObjectPoint::scalar(v)).collect();
        let spec = KernelSpec::linear(MetricKind::Euclidean);
        let d = eval_vector(&spec, &train, &ObjectPoint::scalar(mean)).unwrap();
        assert!(d.norm() < 1e-12);
    }

    #[test]
    fn eval_vector_matches_two_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let train: Vec<ObjectPoint> =
            (0..7).map(|_| ObjectPoint::scalar(rng.sample(StandardNormal))).collect();
        let x = ObjectPoint::scalar(0.4);
        let spec = KernelSpec::gaussian(MetricKind::Euclidean, 0.9).unwrap();
        let fast = eval_vector(&spec, &train, &x).unwrap();
        for i in 0..7 {
            let mut mean = 0.0;
            for k in 0..7 {
                mean += kernel_eval(&spec, &train[k], &train[i]).unwrap();
            }
            mean /= 7.0;
            let direct = kernel_eval(&spec, &x, &train[i]).unwrap() - mean;
            assert_abs_diff_eq!(fast[i], direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn coord_of_cases() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let k = random_psd(9, &mut rng);
        let sys = system_from(k.clone(), 0.2);

        let zero = sys.coord_of(&DVector::zeros(9)).unwrap();
        assert!(zero.coords.norm() == 0.0);

        // d = (G + εI)w for centered w recovers w exactly.
        let mut w = DVector::from_fn(9, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mean = w.mean();
        w.add_scalar_mut(-mean);
        let d = sys.g() * &w + &w * sys.eps();
        let rec = sys.coord_of(&d).unwrap();
        assert!((rec.coords - &w).norm() < 1e-9);

        // Dense-solve oracle.
        let d = DVector::from_fn(9, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dense = (center(&k) + DMatrix::identity(9, 9) * 0.2).try_inverse().unwrap();
        let mut oracle = &dense * &d;
        let mean = oracle.mean();
        oracle.add_scalar_mut(-mean);
        let got = sys.coord_of(&d).unwrap();
        assert!((got.coords - oracle).norm() < 1e-9);
        assert_eq!(got.basis, Basis::BX);
    }

    #[test]
    fn sym_eigs_cases() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (vals, _) = sym_eigs(&a, 2).unwrap();
        assert_abs_diff_eq!(vals[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 2.0, epsilon = 1e-12);

        let (vals, _) = sym_eigs(&DMatrix::identity(5, 5), 5).unwrap();
        for v in vals {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }

        let mut bad = DMatrix::zeros(3, 3);
        bad[(0, 1)] = 1.0;
        assert!(matches!(sym_eigs(&bad, 1), Err(RomaError::Symmetry(_))));
    }

    #[test]
    fn sym_eigs_reconstructs_wishart() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let a = random_psd(8, &mut rng);
        let (vals, vecs) = sym_eigs(&a, 8).unwrap();
        // Trace identities pin the spectrum against an independent route.
        let sum: f64 = vals.iter().sum();
        let sq: f64 = vals.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(sum, a.trace(), epsilon = 1e-8);
        assert_abs_diff_eq!(sq, (&a * &a).trace(), epsilon = 1e-6 * (1.0 + sq));
        // Full reconstruction.
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vals.clone()));
        let rebuilt = &vecs * diag * vecs.transpose();
        assert!((&rebuilt - &a).amax() < 1e-8 * (1.0 + a.amax()));
        // Top-l truncation error is bounded by the next eigenvalue.
        let (tvals, tvecs) = sym_eigs(&a, 3).unwrap();
        let tdiag = DMatrix::from_diagonal(&DVector::from_vec(tvals));
        let approx_a = &tvecs * tdiag * tvecs.transpose();
        let err = (&a - approx_a).symmetric_eigen().eigenvalues.amax();
        assert!(err <= vals[3] * (1.0 + 1e-8) + 1e-10, "err {err} vs next eig {}", vals[3]);
    }
}
