//! Householder flow: a chain of reflections applied to a posterior sample.
//!
//! Each step maps `z ↦ z − 2 (v·z / ‖v‖²) v`, i.e. `H z` with
//! `H = I − 2 v vᵀ / ‖v‖²`. `H` is orthogonal, so every step preserves the
//! Euclidean norm and has `|det| = 1`; the log-det term of the flow bound is
//! identically zero. Reflections are applied as two dot products and an axpy;
//! the explicit matrices live in [`oracle`] for checks and diagnostics only.

use crate::error::{Error, Result};

/// Floor on `‖v‖²` in the reflection denominator. With the floor, `v = 0`
/// maps to the identity.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

/// Normal vector `v` of a reflection hyperplane.
#[derive(Clone, Debug, PartialEq)]
pub struct HouseholderVector(Vec<f64>);

impl HouseholderVector {
    pub fn new(v: Vec<f64>) -> Self {
        HouseholderVector(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    /// The floored denominator `max(‖v‖², δ)`.
    pub fn denominator(&self) -> f64 {
        self.norm_sq().max(DEGENERACY_FLOOR)
    }
}

impl From<Vec<f64>> for HouseholderVector {
    fn from(v: Vec<f64>) -> Self {
        HouseholderVector(v)
    }
}

/// One invertible step of a normalizing flow.
pub trait FlowStep {
    fn apply(&self, z: &[f64]) -> Result<Vec<f64>>;

    /// `ln |det ∂f/∂z|` at `z`.
    fn log_abs_det_jacobian(&self, z: &[f64]) -> f64;
}

impl FlowStep for HouseholderVector {
    fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        householder_apply(z, self)
    }

    fn log_abs_det_jacobian(&self, _z: &[f64]) -> f64 {
        jacobian_log_det_contribution(self)
    }
}

/// `z − 2 (v·z / max(‖v‖², δ)) v`.
pub fn householder_apply(z: &[f64], v: &HouseholderVector) -> Result<Vec<f64>> {
    if z.len() != v.dim() {
        return Err(Error::LengthMismatch {
            what: "householder vector",
            expected: z.len(),
            got: v.dim(),
        });
    }
    let vz: f64 = v.0.iter().zip(z).map(|(a, b)| a * b).sum();
    let coef = 2.0 * vz / v.denominator();
    Ok(z.iter().zip(&v.0).map(|(zi, vi)| zi - coef * vi).collect())
}

/// `ln|det H|` for any reflection.
pub const REFLECTION_LOG_DET: f64 = 0.0;

/// A reflection is orthogonal, so its log-Jacobian term is exactly zero.
pub fn jacobian_log_det_contribution(_step: &HouseholderVector) -> f64 {
    REFLECTION_LOG_DET
}

/// States `z⁽⁰⁾ … z⁽ᵀ⁾` produced by applying `v₁ … v_T` in order.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowChain {
    vectors: Vec<HouseholderVector>,
    states: Vec<Vec<f64>>,
}

impl FlowChain {
    /// Flow length `T`.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[HouseholderVector] {
        &self.vectors
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn initial(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("a chain always holds z0")
    }

    /// Sum of the per-step log-det terms.
    pub fn log_det(&self) -> f64 {
        self.vectors
            .iter()
            .zip(&self.states)
            .map(|(v, z)| v.log_abs_det_jacobian(z))
            .sum()
    }
}

pub fn flow_forward(z0: &[f64], vectors: &[HouseholderVector]) -> Result<FlowChain> {
    let mut states = Vec::with_capacity(vectors.len() + 1);
    states.push(z0.to_vec());
    for v in vectors {
        let next = householder_apply(states.last().expect("nonempty"), v)?;
        states.push(next);
    }
    Ok(FlowChain {
        vectors: vectors.to_vec(),
        states,
    })
}

/// Differentiable batched reflections over `B x M` matrices, one
/// Householder vector per row.
pub mod tape {
    use super::DEGENERACY_FLOOR;
    use crate::autodiff::{NodeId, Tape};
    use crate::error::Result;

    pub fn householder_apply(tape: &mut Tape, z: NodeId, v: NodeId) -> Result<NodeId> {
        let vz = tape.mul(v, z)?;
        let vz = tape.row_sum(vz)?;
        let vv = tape.square(v)?;
        let vv = tape.row_sum(vv)?;
        let den = tape.clamp(vv, DEGENERACY_FLOOR, f64::INFINITY)?;
        let ratio = tape.div(vz, den)?;
        let coef = tape.scale(ratio, 2.0)?;
        let proj = tape.scale_rows(v, coef)?;
        tape.sub(z, proj)
    }

    /// Returns `[z⁽⁰⁾, …, z⁽ᵀ⁾]`.
    pub fn flow_forward(tape: &mut Tape, z0: NodeId, vectors: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut states = vec![z0];
        for &v in vectors {
            let last = *states.last().expect("nonempty");
            states.push(householder_apply(tape, last, v)?);
        }
        Ok(states)
    }
}

/// Dense-matrix counterparts of the flow, used as independent checks and by
/// the flow inspection report.
pub mod oracle {
    use nalgebra::{DMatrix, DVector};

    use super::HouseholderVector;

    /// `I − 2 v vᵀ / max(‖v‖², δ)`.
    pub fn householder_matrix(v: &HouseholderVector) -> DMatrix<f64> {
        let m = v.dim();
        let col = DVector::from_column_slice(v.as_slice());
        DMatrix::identity(m, m) - (&col * col.transpose()) * (2.0 / v.denominator())
    }

    /// An orthogonal `U` together with a basis-kernel factorisation
    /// `U = I − Y S Yᵀ` (`Y` is `M x K`, `S` is lower triangular `K x K`).
    #[derive(Clone, Debug)]
    pub struct OrthogonalOracle {
        pub u: DMatrix<f64>,
        pub basis: Option<DMatrix<f64>>,
        pub kernel: Option<DMatrix<f64>>,
    }

    impl OrthogonalOracle {
        /// `max |UᵀU − I|`.
        pub fn orthogonality_defect(&self) -> f64 {
            let n = self.u.nrows();
            (self.u.transpose() * &self.u - DMatrix::<f64>::identity(n, n)).abs().max()
        }

        /// `I − Y S Yᵀ`, when the factorisation is available.
        pub fn from_basis_kernel(&self) -> Option<DMatrix<f64>> {
            let (y, s) = (self.basis.as_ref()?, self.kernel.as_ref()?);
            let n = y.nrows();
            Some(DMatrix::identity(n, n) - y * s * y.transpose())
        }
    }

    /// `U = H_K ⋯ H₁` for vectors `v₁ … v_K` in `ℝᴹ`.
    pub fn orthogonal_from_householders(dim: usize, vectors: &[HouseholderVector]) -> OrthogonalOracle {
        let mut u = DMatrix::identity(dim, dim);
        for v in vectors {
            u = householder_matrix(v) * u;
        }
        // Compact WY form of Q = H₁ ⋯ H_K is I − Y T Yᵀ with T upper
        // triangular; U = Qᵀ since every H is symmetric.
        let k = vectors.len();
        let (basis, kernel) = if k == 0 {
            (None, None)
        } else {
            let mut y = DMatrix::zeros(dim, k);
            let mut t = DMatrix::zeros(k, k);
            for (j, v) in vectors.iter().enumerate() {
                let col = DVector::from_column_slice(v.as_slice());
                let tau = 2.0 / v.denominator();
                if j > 0 {
                    let y_prev = y.columns(0, j);
                    let t_prev = t.view((0, 0), (j, j));
                    let upper = -tau * (t_prev * (y_prev.transpose() * &col));
                    t.view_mut((0, j), (j, 1)).copy_from(&upper);
                }
                t[(j, j)] = tau;
                y.set_column(j, &col);
            }
            (Some(y), Some(t.transpose()))
        };
        OrthogonalOracle { u, basis, kernel }
    }

    /// Reflection vectors `w₁ … w_M` with `orthogonal_from_householders(M, w) = U`,
    /// extracted from a Householder QR of `U` that keeps `R`'s diagonal
    /// positive (so `R = I`). Steps that need no reflection yield `w = 0`.
    pub fn householder_vectors_from_orthogonal(u: &DMatrix<f64>) -> Vec<HouseholderVector> {
        let m = u.nrows();
        let mut a = u.clone();
        let mut reflectors = Vec::with_capacity(m);
        for k in 0..m {
            let x: Vec<f64> = (k..m).map(|i| a[(i, k)]).collect();
            let tail: f64 = x[1..].iter().map(|v| v * v).sum();
            let norm = (x[0] * x[0] + tail).sqrt();
            let mut v = vec![0.0; m];
            if tail == 0.0 && x[0] >= 0.0 {
                reflectors.push(HouseholderVector::new(v));
                continue;
            }
            // Maps x to +‖x‖e₁; Parlett's form avoids cancellation when x₁ > 0.
            v[k] = if x[0] <= 0.0 { x[0] - norm } else { -tail / (x[0] + norm) };
            v[k + 1..].copy_from_slice(&x[1..]);
            let w = HouseholderVector::new(v);
            a = householder_matrix(&w) * a;
            reflectors.push(w);
        }
        // U = P₁ P₂ ⋯ P_M, i.e. H₁ = P_M, …, H_M = P₁.
        reflectors.reverse();
        reflectors
    }

    /// `U diag(σ²) Uᵀ` for the chain `v₁ … v_T`.
    pub fn covariance_transport_check(variances: &[f64], vectors: &[HouseholderVector]) -> DMatrix<f64> {
        let m = variances.len();
        let u = orthogonal_from_householders(m, vectors).u;
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
        &u * d * u.transpose()
    }

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Central-difference Jacobian of `f` at `z`.
    pub fn numerical_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, z: &[f64], step: f64) -> DMatrix<f64> {
        let n = z.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = z.to_vec();
        for j in 0..n {
            probe[j] = z[j] + step;
            let plus = f(&probe);
            probe[j] = z[j] - step;
            let minus = f(&probe);
            probe[j] = z[j];
            for i in 0..n {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
            }
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use crate::distributions::log_prob_std_normal;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn hv(v: &[f64]) -> HouseholderVector {
        HouseholderVector::new(v.to_vec())
    }

    fn norm(z: &[f64]) -> f64 {
        z.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn apply_examples() {
        assert_eq!(householder_apply(&[1.0, 2.0, 3.0], &hv(&[1.0, 0.0, 0.0])).unwrap(), vec![-1.0, 2.0, 3.0]);
        assert_eq!(householder_apply(&[0.0, 5.0], &hv(&[1.0, 0.0])).unwrap(), vec![0.0, 5.0]);
        let out = householder_apply(&[3.0, 1.0], &hv(&[1.0, 1.0])).unwrap();
        assert_eq!(out, vec![-1.0, -3.0]);
        let via_matrix = householder_matrix(&hv(&[1.0, 1.0])) * DVector::from_column_slice(&[3.0, 1.0]);
        assert_eq!(via_matrix, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]) * DVector::from_column_slice(&[3.0, 1.0]));
        assert!((via_matrix[0] + 1.0).abs() < 1e-15 && (via_matrix[1] + 3.0).abs() < 1e-15);
        assert!(householder_apply(&[1.0], &hv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(householder_apply(&[1.0, -2.0], &hv(&[0.0, 0.0])).unwrap(), vec![1.0, -2.0]);
        assert_eq!(householder_matrix(&hv(&[0.0, 0.0])), DMatrix::identity(2, 2));
    }

    #[test]
    fn forward_examples() {
        let z0 = [0.4, -1.0, 2.5];
        let chain = flow_forward(&z0, &[]).unwrap();
        assert!(chain.is_empty());
        assert_eq!(chain.last(), &z0);

        let v = hv(&[0.3, 0.1, -0.8]);
        let chain = flow_forward(&z0, &[v.clone(), v]).unwrap();
        for (a, b) in chain.last().iter().zip(&z0) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(chain.log_det(), 0.0);
        assert_eq!(chain.states().len(), 3);
    }

    #[test]
    fn chained_route_matches_matrix_route() {
        // Vectors from a QR-style construction of a target orthogonal U.
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, 0.3, 1.7, -2.2, 1.1, 0.4, 0.9]);
        let target = a.qr().q();
        let vectors = householder_vectors_from_orthogonal(&target);
        assert_eq!(vectors.len(), 3);
        let z0 = [0.7, -1.3, 0.2];
        let flowed = flow_forward(&z0, &vectors).unwrap();
        let expected = &target * DVector::from_column_slice(&z0);
        for i in 0..3 {
            assert!((flowed.last()[i] - expected[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn log_det_is_zero_and_jacobian_is_unimodular() {
        let v = hv(&[0.5, -1.5, 2.0]);
        assert_eq!(jacobian_log_det_contribution(&v), 0.0);
        let z = [0.1, 0.2, -0.3];
        let jac = numerical_jacobian(|z| householder_apply(z, &v).unwrap(), &z, 1e-5);
        assert!((jac.determinant().abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn householder_matrix_examples() {
        assert_eq!(householder_matrix(&hv(&[1.0, 0.0])), DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]));
        let h = householder_matrix(&hv(&[0.3, -1.2, 0.8, 2.0]));
        assert!((&h * &h - DMatrix::identity(4, 4)).abs().max() < 1e-10);
        assert!((&h - h.transpose()).abs().max() == 0.0);
        assert!((h.determinant() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_from_householders_examples() {
        let o = orthogonal_from_householders(3, &[]);
        assert_eq!(o.u, DMatrix::identity(3, 3));
        let v = hv(&[1.0, 2.0, -1.0]);
        let o = orthogonal_from_householders(3, std::slice::from_ref(&v));
        assert!((o.u.clone() - householder_matrix(&v)).abs().max() < 1e-15);

        let vs = [hv(&[0.2, -0.4, 1.0, 0.3]), hv(&[1.0, 0.1, 0.0, -0.5]), hv(&[-0.3, 0.9, 0.4, 0.2]), hv(&[0.5, 0.5, -0.5, 0.5])];
        let o = orthogonal_from_householders(4, &vs);
        assert!(o.orthogonality_defect() < 1e-9);
        assert!((o.u.determinant() - 1.0).abs() < 1e-9); // (−1)^4
        let wy = o.from_basis_kernel().unwrap();
        assert!((wy - &o.u).abs().max() < 1e-12);
        let s = o.kernel.unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_eq!(s[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn covariance_transport_examples() {
        let var = [1.0, 4.0, 9.0];
        let c = covariance_transport_check(&var, &[]);
        assert_eq!(c, DMatrix::from_diagonal(&DVector::from_column_slice(&var)));
        let vs = [hv(&[0.3, 1.0, -0.2]), hv(&[-1.0, 0.4, 0.6])];
        let c = covariance_transport_check(&[1.0; 3], &vs);
        assert!((c - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        let c = covariance_transport_check(&var, &vs);
        let ev = symmetric_eigenvalues(&c);
        for (a, b) in ev.iter().zip(var) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_form_matches_plain_form() {
        use crate::autodiff::Tape;
        use crate::tensor::TensorValue;
        let z = [0.4, -1.0, 2.5, 1.0, 0.0, -0.5];
        let v = [0.3, 0.1, -0.8, 0.0, 0.0, 0.0];
        let mut t = Tape::new();
        let zn = t.leaf(TensorValue::matrix(2, 3, z.to_vec()).unwrap()).unwrap();
        let vn = t.leaf(TensorValue::matrix(2, 3, v.to_vec()).unwrap()).unwrap();
        let out = tape::householder_apply(&mut t, zn, vn).unwrap();
        for row in 0..2 {
            let plain = householder_apply(&z[3 * row..3 * row + 3], &hv(&v[3 * row..3 * row + 3])).unwrap();
            assert_eq!(t.value(out).row(row), plain.as_slice());
        }
    }

    fn vec_in(m: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, m)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn norm_preserved((z, v) in (2usize..8).prop_flat_map(|m| (vec_in(m), vec_in(m)))) {
            prop_assume!(norm(&v) >= 1e-3);
            let out = householder_apply(&z, &hv(&v)).unwrap();
            prop_assert!((norm(&out) - norm(&z)).abs() <= 1e-10 * (1.0 + norm(&z)));
        }

        #[test]
        fn involution((z, v) in (2usize..8).prop_flat_map(|m| (vec_in(m), vec_in(m)))) {
            prop_assume!(norm(&v) >= 1e-3);
            let v = hv(&v);
            let back = householder_apply(&householder_apply(&z, &v).unwrap(), &v).unwrap();
            for (a, b) in back.iter().zip(&z) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn scale_invariant_in_v(
            (z, v) in (2usize..8).prop_flat_map(|m| (vec_in(m), vec_in(m))),
            c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        ) {
            prop_assume!(norm(&v) >= 1e-3);
            let a = householder_apply(&z, &hv(&v)).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let b = householder_apply(&z, &hv(&scaled)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + norm(&z)));
            }
        }

        #[test]
        fn prior_density_invariant(
            (z, vs) in (2usize..8).prop_flat_map(|m| (vec_in(m), proptest::collection::vec(vec_in(m), 0..6)))
        ) {
            let vs: Vec<HouseholderVector> = vs.into_iter().filter(|v| norm(v) >= 1e-3).map(HouseholderVector::new).collect();
            let chain = flow_forward(&z, &vs).unwrap();
            let a = log_prob_std_normal(chain.initial()).unwrap();
            let b = log_prob_std_normal(chain.last()).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn qr_reflectors_reproduce_orthogonal(entries in (2usize..=6).prop_flat_map(|m| proptest::collection::vec(-1.0f64..1.0, m * m))) {
            let m = (entries.len() as f64).sqrt() as usize;
            let a = DMatrix::from_row_slice(m, m, &entries) + DMatrix::identity(m, m) * 0.1;
            prop_assume!(a.determinant().abs() > 1e-3);
            let u = a.qr().q();
            let vectors = householder_vectors_from_orthogonal(&u);
            prop_assert_eq!(vectors.len(), m);
            let rebuilt = orthogonal_from_householders(m, &vectors).u;
            prop_assert!((rebuilt - &u).abs().max() <= 1e-8);
        }
    }
}
