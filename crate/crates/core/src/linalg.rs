use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Relative pivot threshold below which a normal matrix is treated as singular.
const PIVOT_RTOL: f64 = 1e-13;

/// Cholesky factor of a symmetric positive definite normal matrix.
#[derive(Debug, Clone)]
pub(crate) struct NormalFactor {
    chol: Cholesky<f64, Dyn>,
}

impl NormalFactor {
    /// Returns `None` when the matrix is not numerically positive definite.
    pub(crate) fn new(a: DMatrix<f64>) -> Option<Self> {
        let max_diag = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if a.nrows() == 0 {
            return None;
        }
        let chol = Cholesky::new(a)?;
        let l = chol.l_dirty();
        let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if !(min_pivot > PIVOT_RTOL * max_diag.max(f64::MIN_POSITIVE)) {
            return None;
        }
        Some(Self { chol })
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        self.chol.solve(&b).as_slice().to_vec()
    }
}

/// Accumulates `sum_t w_t phi_t phi_t^T` into a `p x p` matrix.
pub(crate) fn weighted_gram(features: &[f64], p: usize, weights: impl Iterator<Item = f64>) -> DMatrix<f64> {
    let mut g = DMatrix::<f64>::zeros(p, p);
    for (phi, w) in features.chunks(p).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let wa = w * phi[a];
            for b in a..p {
                g[(a, b)] += wa * phi[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(NormalFactor::new(a).is_none());
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let f = NormalFactor::new(a).unwrap();
        let x = f.solve(&[3.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gram_is_symmetric() {
        let feats = [1.0, 2.0, 3.0, 4.0];
        let g = weighted_gram(&feats, 2, [1.0, 0.5].into_iter());
        assert_eq!(g[(0, 1)], g[(1, 0)]);
        assert_eq!(g[(0, 0)], 1.0 + 0.5 * 9.0);
    }
}
