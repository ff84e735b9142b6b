//! Scale-invariant geometry diagnostics for Gram matrices: normalization,
//! distance to the simplex ETF and distance to the circulant subspace.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exec::{map_slice, Execution};
use crate::numerics::{sym_eig, Matrix, NOT_PSD};
use crate::perm::etf_reference;

/// Symmetry tolerance (relative to the largest entry) accepted on import.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Square symmetric matrix with optional row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    g: Matrix,
    labels: Option<Vec<String>>,
}

impl GramMatrix {
    /// Validates symmetry to [`SYMMETRY_TOL`] and stores `(G + Gᵀ)/2`, so that
    /// rounding noise in imported matrices never reaches the diagnostics.
    pub fn new(g: Matrix, labels: Option<Vec<String>>) -> Result<Self> {
        if !g.is_square() || g.rows() == 0 {
            return Err(invalid(format!("Gram matrix must be square and non-empty, got {:?}", g.shape())));
        }
        if !g.is_symmetric(SYMMETRY_TOL) {
            return Err(invalid("Gram matrix is not symmetric"));
        }
        if let Some(l) = &labels {
            if l.len() != g.rows() {
                return Err(invalid(format!("{} labels for a Gram matrix of size {}", l.len(), g.rows())));
            }
        }
        Ok(Self {
            g: g.symmetrize(),
            labels,
        })
    }

    /// Gram matrix of the rows of `vectors`.
    pub fn of_rows(vectors: &Matrix) -> Self {
        Self {
            g: vectors.matmul_t(vectors).symmetrize(),
            labels: None,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.g
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn size(&self) -> usize {
        self.g.rows()
    }
}

/// Mean-centers the underlying vectors and rescales them by a common factor
/// so that their mean Euclidean norm is one. Only the Gram matrix is needed:
/// centering is `(I − J/q) G (I − J/q)` and the norms are the square roots of
/// its diagonal.
pub fn normalize_gram(g: &GramMatrix) -> Result<GramMatrix> {
    let eig = sym_eig(&g.g)?;
    if eig.min_eigenvalue() < -NOT_PSD * eig.op_norm() {
        return Err(Error::NotPsd {
            min_eigenvalue: eig.min_eigenvalue(),
            op_norm: eig.op_norm(),
        });
    }
    let q = g.size();
    let c = Matrix::centering(q);
    let centered = c.matmul(&g.g).matmul(&c).symmetrize();
    let scale_ref = g.g.max_abs();
    if centered.max_abs() <= 1e-12 * scale_ref || centered.max_abs() == 0.0 {
        return Err(Error::DegenerateInput("all vectors coincide after centering".into()));
    }
    let mean_norm = centered.diagonal().iter().map(|v| v.max(0.0).sqrt()).sum::<f64>() / q as f64;
    Ok(GramMatrix {
        g: centered.scale(1.0 / (mean_norm * mean_norm)),
        labels: g.labels.clone(),
    })
}

/// `δ_ETF = ‖c*G − M*‖_F / ‖M*‖_F` with the best scalar `c* = ⟨G,M*⟩/⟨G,G⟩`.
/// Returns `(δ, c*)`.
pub fn etf_distance(g: &Matrix) -> Result<(f64, f64)> {
    if !g.is_square() || g.rows() < 2 {
        return Err(invalid("ETF distance needs a square matrix of size at least 2"));
    }
    let gg = g.frobenius_sq();
    if gg == 0.0 {
        return Err(Error::DegenerateInput("zero Gram matrix".into()));
    }
    let m_star = etf_reference(g.rows())?;
    let c = g.inner(&m_star) / gg;
    let delta = g.scale(c).sub(&m_star).frobenius_norm() / m_star.frobenius_norm();
    Ok((delta, c))
}

/// Orthogonal projection onto circulant matrices: the average of
/// `Πᵏ G Π⁻ᵏ` over all shifts, i.e. each wrapped diagonal replaced by its
/// mean.
pub fn circulant_project(g: &Matrix) -> Result<Matrix> {
    if !g.is_square() {
        return Err(invalid(format!("circulant projection of a {:?} matrix", g.shape())));
    }
    let m = g.rows();
    let mut diag_means = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            diag_means[(j + m - i) % m] += g[(i, j)];
        }
    }
    diag_means.iter_mut().for_each(|v| *v /= m as f64);
    Ok(Matrix::from_fn(m, m, |i, j| diag_means[(j + m - i) % m]))
}

/// `δ_circ = ‖G − P(G)‖_F / ‖G‖_F`.
pub fn circ_distance(g: &Matrix) -> Result<f64> {
    let norm = g.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::DegenerateInput("zero matrix".into()));
    }
    let p = circulant_project(g)?;
    Ok(g.sub(&p).frobenius_norm() / norm)
}

/// Which distances [`build_report`] computes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Checks {
    pub etf: bool,
    pub circ: bool,
}

impl Checks {
    pub const ALL: Checks = Checks { etf: true, circ: true };
}

/// Heatmap payload: the normalized Gram values and their labels.
#[derive(Debug, Clone, Serialize)]
pub struct Heatmap {
    pub values: Vec<Vec<f64>>,
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub normalized: GramMatrix,
    pub delta_etf: Option<f64>,
    pub c_star: Option<f64>,
    /// `δ_ETF` of the raw, unnormalized input.
    pub raw_delta_etf: Option<f64>,
    pub delta_circ: Option<f64>,
    pub circulant_projection: Option<Matrix>,
    pub heatmap: Heatmap,
}

impl DiagnosticsReport {
    /// `c* ≤ 0`: the Gram is better matched by a negated ETF.
    pub fn anti_aligned(&self) -> bool {
        self.c_star.is_some_and(|c| c <= 0.0)
    }

    pub fn summary(&self) -> DiagnosticsSummary {
        DiagnosticsSummary {
            size: self.normalized.size(),
            delta_etf: self.delta_etf,
            c_star: self.c_star,
            anti_aligned: self.anti_aligned(),
            raw_delta_etf: self.raw_delta_etf,
            delta_circ: self.delta_circ,
            symmetrized_on_import: true,
        }
    }
}

/// Serializable scalar part of a [`DiagnosticsReport`].
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsSummary {
    pub size: usize,
    pub delta_etf: Option<f64>,
    pub c_star: Option<f64>,
    pub anti_aligned: bool,
    pub raw_delta_etf: Option<f64>,
    pub delta_circ: Option<f64>,
    pub symmetrized_on_import: bool,
}

/// Normalizes `g` and runs the requested distances on the normalized matrix.
pub fn build_report(g: &GramMatrix, checks: Checks) -> Result<DiagnosticsReport> {
    let normalized = normalize_gram(g)?;
    let (delta_etf, c_star, raw_delta_etf) = if checks.etf {
        let (d, c) = etf_distance(normalized.matrix())?;
        let (raw, _) = etf_distance(g.matrix())?;
        (Some(d), Some(c), Some(raw))
    } else {
        (None, None, None)
    };
    let (delta_circ, circulant_projection) = if checks.circ {
        (
            Some(circ_distance(normalized.matrix())?),
            Some(circulant_project(normalized.matrix())?),
        )
    } else {
        (None, None)
    };
    let heatmap = Heatmap {
        values: normalized.matrix().to_rows(),
        labels: normalized.labels.clone(),
    };
    Ok(DiagnosticsReport {
        normalized,
        delta_etf,
        c_star,
        raw_delta_etf,
        delta_circ,
        circulant_projection,
        heatmap,
    })
}

/// [`build_report`] over many Grams; results keep the input order.
pub fn build_reports(grams: &[GramMatrix], checks: Checks, exec: Execution) -> Vec<Result<DiagnosticsReport>> {
    map_slice(exec, grams, |g| build_report(g, checks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cyclic::build_circulant;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram(g: Matrix) -> GramMatrix {
        GramMatrix::new(g, None).unwrap()
    }

    /// Straightforward reference: average of explicit shift conjugations.
    fn circulant_project_reference(g: &Matrix) -> Matrix {
        let m = g.rows();
        let pi = Matrix::from_fn(m, m, |i, j| if i == (j + 1) % m { 1.0 } else { 0.0 });
        let mut acc = Matrix::zeros(m, m);
        let mut pk = Matrix::identity(m);
        for _ in 0..m {
            acc = acc.add(&pk.matmul(g).matmul_t(&pk));
            pk = pi.matmul(&pk);
        }
        acc.scale(1.0 / m as f64)
    }

    #[test]
    fn normalization_examples() {
        for q in [2usize, 3, 7] {
            let n = normalize_gram(&gram(Matrix::identity(q))).unwrap();
            let expected = Matrix::centering(q).scale(q as f64 / (q as f64 - 1.0));
            assert!(n.matrix().rel_diff(&expected) < 1e-14);
        }
        // Gram of the simplex ETF rows: centered with unit norms.
        let e = etf_reference(4).unwrap();
        let fixed = e.matmul_t(&e);
        let n = normalize_gram(&gram(fixed.clone())).unwrap();
        assert!(n.matrix().rel_diff(&fixed) < 1e-14);
        assert!(matches!(normalize_gram(&gram(Matrix::ones(3, 3))), Err(Error::DegenerateInput(_))));
        let indefinite = Matrix::diag(&[1.0, -1.0]);
        assert!(matches!(normalize_gram(&gram(indefinite)), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn normalized_vectors_have_unit_mean_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::random_normal(5, 3, &mut rng);
        let n = normalize_gram(&GramMatrix::of_rows(&x)).unwrap();
        let mean: f64 = n.matrix().diagonal().iter().map(|v| v.sqrt()).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-13);
        // Centered: rows sum to zero.
        for i in 0..5 {
            assert!(n.matrix().row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn etf_distance_examples() {
        let m_star = etf_reference(5).unwrap();
        let (d, c) = etf_distance(&m_star).unwrap();
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-15);
        let (d, c) = etf_distance(&m_star.scale(3.7)).unwrap();
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c, 1.0 / 3.7, epsilon = 1e-15);

        // I_3 against M*_3: grid search over the scalar.
        let i3 = Matrix::identity(3);
        let m3 = etf_reference(3).unwrap();
        let grid = (0..=400_000)
            .map(|k| {
                let c = -2.0 + 4.0 * k as f64 / 400_000.0;
                i3.scale(c).sub(&m3).frobenius_norm() / m3.frobenius_norm()
            })
            .fold(f64::INFINITY, f64::min);
        let (d, _) = etf_distance(&i3).unwrap();
        assert_abs_diff_eq!(d, grid, epsilon = 1e-9);
        assert_abs_diff_eq!(d, 1.0 / 3f64.sqrt(), epsilon = 1e-14);
        assert!(matches!(etf_distance(&Matrix::zeros(3, 3)), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn circulant_examples() {
        let c = build_circulant(&[0.3, -1.0, 2.0, 0.5]);
        assert!(circulant_project(&c).unwrap().rel_diff(&c) < 1e-15);
        assert!(circ_distance(&c).unwrap() <= 1e-12);
        let g = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(circulant_project(&g).unwrap().rel_diff(&Matrix::identity(2).scale(0.5)) < 1e-15);
        assert_abs_diff_eq!(circ_distance(&g).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(circ_distance(&g.scale(2.5)).unwrap(), circ_distance(&g).unwrap());
        let j = Matrix::ones(5, 5);
        assert_eq!(circulant_project(&j).unwrap(), j);
        assert!(circulant_project(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn projection_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in 1..8 {
            let x = Matrix::random_normal(m, m, &mut rng);
            let p = circulant_project(&x).unwrap();
            assert!(p.rel_diff(&circulant_project_reference(&x)) < 1e-13);
        }
    }

    #[test]
    fn report_on_exact_structures() {
        let etf = GramMatrix::new(etf_reference(3).unwrap().scale(4.0), None).unwrap();
        let r = build_report(&etf, Checks { etf: true, circ: false }).unwrap();
        assert!(r.delta_etf.unwrap() <= 1e-8);
        assert!(r.delta_circ.is_none());
        assert!(!r.anti_aligned());

        let circ = build_circulant(&[3.0, 1.0, 0.5, 0.5, 1.0]);
        let r = build_report(&gram(circ), Checks { etf: false, circ: true }).unwrap();
        assert!(r.delta_circ.unwrap() <= 1e-8);
        assert_eq!(r.heatmap.values.len(), 5);
    }

    #[test]
    fn gram_validation() {
        let asym = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(GramMatrix::new(asym, None).is_err());
        assert!(GramMatrix::new(Matrix::identity(2), Some(vec!["a".into()])).is_err());
        let noisy = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5 + 1e-12, 1.0]]).unwrap();
        let g = GramMatrix::new(noisy, None).unwrap();
        assert_eq!(g.matrix()[(0, 1)], g.matrix()[(1, 0)]);
    }

    fn square(m: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-10.0f64..10.0, m * m).prop_map(move |v| Matrix::new(m, m, v).unwrap())
    }

    proptest! {
        #[test]
        fn projection_is_self_adjoint_idempotent_orthogonal((x, y) in (2usize..9).prop_flat_map(|m| (square(m), square(m)))) {
            let px = circulant_project(&x).unwrap();
            let py = circulant_project(&y).unwrap();
            let scale = x.frobenius_norm() * y.frobenius_norm();
            prop_assert!((px.inner(&y) - x.inner(&py)).abs() <= 1e-10 * scale.max(1.0));
            prop_assert!(circulant_project(&px).unwrap().sub(&px).frobenius_norm() <= 1e-12 * px.frobenius_norm().max(1.0));
            let lhs = x.frobenius_sq();
            let rhs = px.frobenius_sq() + x.sub(&px).frobenius_sq();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(1.0));
        }

        #[test]
        fn deltas_are_scale_invariant(x in (2usize..8).prop_flat_map(square)) {
            prop_assume!(x.frobenius_norm() > 1e-6);
            let g = x.matmul_t(&x);
            let (d0, c0) = etf_distance(&g).unwrap();
            let circ0 = circ_distance(&g).unwrap();
            for a in [1e-3, 1.0, 3.7, 1e3] {
                let (d, c) = etf_distance(&g.scale(a)).unwrap();
                prop_assert!((d - d0).abs() <= 1e-12 * d0.max(1.0));
                prop_assert!((c * a - c0).abs() <= 1e-12 * c0.abs().max(1e-300));
                let circ = circ_distance(&g.scale(a)).unwrap();
                prop_assert!((circ - circ0).abs() <= 1e-12);
                prop_assert!((0.0..=1.0 + 1e-15).contains(&circ));
            }
        }
    }
}
