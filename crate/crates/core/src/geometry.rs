//! State space, metric fields, and the Riemannian gradient.
//!
//! The flow direction is always `G(η)⁻¹ ∇J(η)`. Diagonal metric kinds are
//! applied componentwise; explicit metrics go through a Cholesky solve after
//! being checked for symmetry and positive definiteness at every evaluation.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::potentials::Potential;

/// Relative symmetry tolerance applied to explicit metric matrices.
pub const METRIC_SYMMETRY_TOL: f64 = 1e-12;

/// Condition numbers above this make `G⁻¹∇J` meaningless.
pub const MAX_METRIC_CONDITION: f64 = 1e12;

/// Split of the state vector into `fast` leading and `slow` trailing coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    fast: usize,
    slow: usize,
}

impl Partition {
    pub fn new(fast: usize, slow: usize) -> Result<Self> {
        if fast == 0 || slow == 0 {
            return Err(Error::Config(format!(
                "partition needs at least one fast and one slow coordinate (got m = {fast}, k = {slow})"
            )));
        }
        Ok(Self { fast, slow })
    }

    pub fn fast(&self) -> usize {
        self.fast
    }

    pub fn slow(&self) -> usize {
        self.slow
    }

    pub fn dim(&self) -> usize {
        self.fast + self.slow
    }

    pub fn fast_range(&self) -> Range<usize> {
        0..self.fast
    }

    pub fn slow_range(&self) -> Range<usize> {
        self.fast..self.fast + self.slow
    }

    pub fn fast_block(&self, coords: &DVector<f64>) -> DVector<f64> {
        coords.rows(0, self.fast).into_owned()
    }

    pub fn slow_block(&self, coords: &DVector<f64>) -> DVector<f64> {
        coords.rows(self.fast, self.slow).into_owned()
    }

    /// Concatenates a fast and a slow block into a full state vector.
    pub fn join(&self, fast: &DVector<f64>, slow: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(fast.len(), self.fast);
        debug_assert_eq!(slow.len(), self.slow);
        DVector::from_iterator(self.dim(), fast.iter().chain(slow.iter()).copied())
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::Config(format!(
                "state dimension {n} does not match partition m + k = {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// A point of the state space at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub coords: DVector<f64>,
    pub time: f64,
}

impl State {
    pub fn new(coords: DVector<f64>, time: f64) -> Result<Self> {
        if !time.is_finite() || coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!(
                "state must be finite (coords {:?}, t = {time})",
                coords.as_slice()
            )));
        }
        Ok(Self { coords, time })
    }

    pub fn from_slice(coords: &[f64], time: f64) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords), time)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// User-supplied metric field.
pub type MetricFn = dyn Fn(&State) -> DMatrix<f64> + Send + Sync;

/// Riemannian metric field `G(η)`.
#[derive(Clone)]
pub enum Metric {
    /// Euclidean metric, valid in any dimension.
    Identity,
    /// `diag(I_m, ε⁻² I_k)`.
    BlockAnisotropic { epsilon: f64, partition: Partition },
    /// Arbitrary state-dependent matrix, validated on every evaluation.
    Explicit { dim: usize, field: Arc<MetricFn> },
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Identity => write!(f, "Identity"),
            Metric::BlockAnisotropic { epsilon, partition } => f
                .debug_struct("BlockAnisotropic")
                .field("epsilon", epsilon)
                .field("partition", partition)
                .finish(),
            Metric::Explicit { dim, .. } => f.debug_struct("Explicit").field("dim", dim).finish(),
        }
    }
}

impl Metric {
    pub fn block_anisotropic(epsilon: f64, partition: Partition) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0,1), got {epsilon}")));
        }
        Ok(Metric::BlockAnisotropic { epsilon, partition })
    }

    pub fn explicit<F>(dim: usize, field: F) -> Self
    where
        F: Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Metric::Explicit {
            dim,
            field: Arc::new(field),
        }
    }

    /// Dimension required of states, or `None` for the identity.
    pub fn expected_dim(&self) -> Option<usize> {
        match self {
            Metric::Identity => None,
            Metric::BlockAnisotropic { partition, .. } => Some(partition.dim()),
            Metric::Explicit { dim, .. } => Some(*dim),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        match self.expected_dim() {
            Some(d) if d != n => Err(Error::Config(format!(
                "metric expects dimension {d}, state has dimension {n}"
            ))),
            _ => Ok(()),
        }
    }

    /// Evaluates `G(η)`.
    pub fn matrix(&self, state: &State) -> Result<DMatrix<f64>> {
        let n = state.dim();
        self.check_dim(n)?;
        match self {
            Metric::Identity => Ok(DMatrix::identity(n, n)),
            Metric::BlockAnisotropic { epsilon, partition } => {
                let slow_weight = 1.0 / (epsilon * epsilon);
                let diag = DVector::from_fn(n, |i, _| if i < partition.fast() { 1.0 } else { slow_weight });
                Ok(DMatrix::from_diagonal(&diag))
            }
            Metric::Explicit { field, .. } => {
                let g = field(state);
                if g.nrows() != n || g.ncols() != n {
                    return Err(Error::Config(format!(
                        "explicit metric returned a {}x{} matrix for dimension {n}",
                        g.nrows(),
                        g.ncols()
                    )));
                }
                let scale = g.amax();
                let asym = max_asymmetry(&g);
                if asym > METRIC_SYMMETRY_TOL * scale {
                    let min_eigenvalue = min_eigenvalue(&symmetrize(&g));
                    return Err(Error::InvalidMetric {
                        reason: format!("asymmetry {asym:e} exceeds relative tolerance"),
                        min_eigenvalue,
                    });
                }
                let lmin = min_eigenvalue(&symmetrize(&g));
                if !(lmin > 0.0) {
                    return Err(Error::InvalidMetric {
                        reason: "matrix is not positive definite".into(),
                        min_eigenvalue: lmin,
                    });
                }
                Ok(g)
            }
        }
    }

    /// Solves `G(η) w = v`.
    pub fn inverse_apply(&self, state: &State, v: &DVector<f64>) -> Result<DVector<f64>> {
        let n = state.dim();
        self.check_dim(n)?;
        if v.len() != n {
            return Err(Error::Config(format!(
                "vector length {} does not match state dimension {n}",
                v.len()
            )));
        }
        match self {
            Metric::Identity => Ok(v.clone()),
            Metric::BlockAnisotropic { epsilon, partition } => {
                let eps2 = epsilon * epsilon;
                let mut w = v.clone();
                for i in partition.slow_range() {
                    w[i] *= eps2;
                }
                Ok(w)
            }
            Metric::Explicit { .. } => {
                let g = self.matrix(state)?;
                let eig = SymmetricEigen::new(g.clone());
                let lmax = eig.eigenvalues.max();
                let lmin = eig.eigenvalues.min();
                let condition = lmax / lmin;
                if !(condition <= MAX_METRIC_CONDITION) {
                    return Err(Error::SingularMetric { condition });
                }
                let chol = g.cholesky().ok_or(Error::SingularMetric { condition })?;
                Ok(chol.solve(v))
            }
        }
    }
}

/// Result of an SPD check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdCheck {
    pub is_spd: bool,
    pub min_eigenvalue: f64,
}

/// True iff `matrix` is symmetric within `tol` and its smallest eigenvalue exceeds `tol`.
pub fn check_spd(matrix: &DMatrix<f64>, tol: f64) -> SpdCheck {
    if !matrix.is_square() || matrix.nrows() == 0 {
        return SpdCheck {
            is_spd: false,
            min_eigenvalue: f64::NAN,
        };
    }
    let symmetric = max_asymmetry(matrix) <= tol;
    let min_eigenvalue = min_eigenvalue(&symmetrize(matrix));
    SpdCheck {
        is_spd: symmetric && min_eigenvalue > tol,
        min_eigenvalue,
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 1 {
        return sym[(0, 0)];
    }
    SymmetricEigen::new(sym.clone()).eigenvalues.min()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `G(η)⁻¹ ∇J(η)`.
pub fn riemannian_gradient(potential: &dyn Potential, metric: &Metric, state: &State) -> Result<DVector<f64>> {
    let grad = crate::potentials::gradient(potential, state)?;
    metric.inverse_apply(state, &grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::CubicBenchmark;

    fn st(c: &[f64]) -> State {
        State::from_slice(c, 0.0).unwrap()
    }

    #[test]
    fn identity_matrix() {
        let g = Metric::Identity.matrix(&st(&[0.3, -1.0, 2.0])).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));
    }

    #[test]
    fn block_anisotropic_matrices() {
        let p11 = Partition::new(1, 1).unwrap();
        let g = Metric::block_anisotropic(0.5, p11)
            .unwrap()
            .matrix(&st(&[1.0, 2.0]))
            .unwrap();
        assert_eq!(g, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])));

        let p21 = Partition::new(2, 1).unwrap();
        let g = Metric::block_anisotropic(0.1, p21)
            .unwrap()
            .matrix(&st(&[0.0, 0.0, 0.0]))
            .unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 1)], 1.0);
        approx::assert_relative_eq!(g[(2, 2)], 100.0, max_relative = 1e-14);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn epsilon_outside_unit_interval_rejected() {
        let p = Partition::new(1, 1).unwrap();
        assert!(Metric::block_anisotropic(1.5, p).is_err());
        assert!(Metric::block_anisotropic(0.0, p).is_err());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let p = Partition::new(1, 1).unwrap();
        let m = Metric::block_anisotropic(0.5, p).unwrap();
        assert!(matches!(m.matrix(&st(&[1.0, 2.0, 3.0])), Err(Error::Config(_))));
    }

    #[test]
    fn inverse_apply_examples() {
        let v = DVector::from_vec(vec![2.0, 4.0]);
        let s = st(&[0.0, 0.0]);
        assert_eq!(Metric::Identity.inverse_apply(&s, &v).unwrap(), v);

        let p = Partition::new(1, 1).unwrap();
        let w = Metric::block_anisotropic(0.5, p)
            .unwrap()
            .inverse_apply(&s, &v)
            .unwrap();
        assert_eq!(w.as_slice(), &[2.0, 1.0]);

        let m = Metric::explicit(2, |_| DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 8.0])));
        let w = m.inverse_apply(&s, &v).unwrap();
        approx::assert_relative_eq!(w[0], 1.0, epsilon = 1e-15);
        approx::assert_relative_eq!(w[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn explicit_metric_validation() {
        let s = st(&[0.0, 0.0]);
        let asym = Metric::explicit(2, |_| DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]));
        assert!(matches!(asym.matrix(&s), Err(Error::InvalidMetric { .. })));

        let indefinite = Metric::explicit(2, |_| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5])));
        match indefinite.matrix(&s) {
            Err(Error::InvalidMetric { min_eigenvalue, .. }) => assert_eq!(min_eigenvalue, -0.5),
            other => panic!("expected invalid metric, got {other:?}"),
        }

        let ill = Metric::explicit(2, |_| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-13])));
        let v = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(ill.inverse_apply(&s, &v), Err(Error::SingularMetric { .. })));
    }

    #[test]
    fn check_spd_examples() {
        let c = check_spd(&DMatrix::identity(2, 2), 1e-10);
        assert!(c.is_spd);
        assert_eq!(c.min_eigenvalue, 1.0);

        let c = check_spd(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5])), 1e-10);
        assert!(!c.is_spd);
        approx::assert_relative_eq!(c.min_eigenvalue, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn check_spd_matches_closed_form_2x2() {
        // Eigenvalues of [[a,b],[b,d]] from the characteristic quadratic.
        let closed_form_min = |a: f64, b: f64, d: f64| {
            let tr = a + d;
            let det = a * d - b * b;
            (tr - (tr * tr - 4.0 * det).sqrt()) / 2.0
        };
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let c = check_spd(&m, 1e-10);
        assert!(c.is_spd);
        assert_eq!(closed_form_min(2.0, 1.0, 2.0), 1.0);
        approx::assert_relative_eq!(c.min_eigenvalue, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn riemannian_gradient_examples() {
        let s = st(&[2.0, 1.0]);
        let g = riemannian_gradient(&CubicBenchmark, &Metric::Identity, &s).unwrap();
        assert_eq!(g.as_slice(), &[1.0, -2.0]);

        let p = Partition::new(1, 1).unwrap();
        let m = Metric::block_anisotropic(0.5, p).unwrap();
        let g = riemannian_gradient(&CubicBenchmark, &m, &s).unwrap();
        assert_eq!(g.as_slice(), &[1.0, -0.5]);

        let origin = st(&[0.0, 0.0]);
        let g = riemannian_gradient(&CubicBenchmark, &m, &origin).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
