use crate::error::{Error, Result};

/// Cholesky factor `Σ = L Lᵀ` of a symmetric positive definite matrix.
pub(crate) struct SpdFactor {
    n: usize,
    /// Column-major; only the lower triangle holds `L`.
    l: Vec<f64>,
}

impl SpdFactor {
    /// Factor a symmetric row-major matrix.
    pub(crate) fn new(sym: &[f64], n: usize) -> Result<Self> {
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance matrix".into()));
        }
        Self::from_upper(sym.to_vec(), n)
    }

    /// Factor in place, reusing the buffer for `L`. Only the row-major upper
    /// triangle (`j ≥ i` at `i·n + j`) is read; seen column-major this is the
    /// lower triangle, which is where `L` is written.
    pub(crate) fn from_upper(mut l: Vec<f64>, n: usize) -> Result<Self> {
        use faer::dyn_stack::{MemBuffer, MemStack};
        use faer::linalg::cholesky::llt::factor;
        if l.len() != n * n {
            return Err(Error::Dimension(format!("expected {n}x{n} matrix, got {} entries", l.len())));
        }
        if (0..n).any(|i| l[i * n + i..(i + 1) * n].iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("covariance matrix".into()));
        }
        let par = faer::Par::Seq;
        let mut buf = MemBuffer::new(factor::cholesky_in_place_scratch::<f64>(n, par, Default::default()));
        let a = faer::MatMut::from_column_major_slice_mut(&mut l, n, n);
        factor::cholesky_in_place(a, Default::default(), par, MemStack::new(&mut buf), Default::default())
            .map_err(|_| Error::NotPositiveDefinite)?;
        if (0..n).any(|i| !(l[i * n + i] > 0.0 && l[i * n + i].is_finite())) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { n, l })
    }

    /// Give the storage back for reuse.
    pub(crate) fn into_buffer(self) -> Vec<f64> {
        self.l
    }

    pub(crate) fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// `L⁻¹ b`.
    pub(crate) fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for j in 0..n {
            let col = &self.l[j * n..(j + 1) * n];
            x[j] /= col[j];
            let xj = x[j];
            for (xi, lij) in x[j + 1..].iter_mut().zip(&col[j + 1..]) {
                *xi -= lij * xj;
            }
        }
        x
    }

    /// `L⁻ᵀ b`.
    fn backward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for j in (0..n).rev() {
            let col = &self.l[j * n..(j + 1) * n];
            let dot: f64 = col[j + 1..].iter().zip(&x[j + 1..]).map(|(a, b)| a * b).sum();
            x[j] = (x[j] - dot) / col[j];
        }
        x
    }

    /// `Σ⁻¹ b`.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_and_log_det() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let f = SpdFactor::new(&a, 3).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = f.solve(&b);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - b[i]).abs() < 1e-14);
        }
        let m = nalgebra::Matrix3::from_row_slice(&a);
        assert!((f.log_det() - m.determinant().ln()).abs() < 1e-13);
    }

    #[test]
    fn upper_triangle_is_ignored() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut junk = a;
        junk[3] = f64::NAN;
        junk[6] = 1e9;
        junk[7] = -7.0;
        let x = SpdFactor::new(&a, 3).unwrap().solve(&[1.0, 2.0, 3.0]);
        let y = SpdFactor::from_upper(junk.to_vec(), 3).unwrap().solve(&[1.0, 2.0, 3.0]);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(matches!(SpdFactor::new(&a, 2), Err(Error::NotPositiveDefinite)));
    }
}
