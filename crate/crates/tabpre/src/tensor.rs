//! Dense row-major float64 tensors and the handful of linear-algebra
//! kernels the autodiff engine is built on.

use crate::error::TabError;

/// Dense tensor, row-major, float64 throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TabError> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(TabError::Shape(format!("zero dimension in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(TabError::Shape(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    /// 2-d matrix constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TabError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Rows of a 2-d tensor (1-d tensors count as a single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a 2-d tensor (length for 1-d).
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            self.shape[0]
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// C = A (n×k) · B (k×m). ikj loop order so the inner loop runs over
/// contiguous rows of B and C and autovectorizes.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TabError> {
    let (n, k) = (a.rows(), a.cols());
    let (kb, m) = (b.rows(), b.cols());
    if k != kb {
        return Err(TabError::Shape(format!(
            "matmul: {n}x{k} incompatible with {kb}x{m}"
        )));
    }
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let crow = &mut c[i * m..(i + 1) * m];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    Tensor::matrix(n, m, c)
}

/// C = A (n×k) · Bᵀ where B is m×k. Used for dA = dC·Bᵀ in backward.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, TabError> {
    let (n, k) = (a.rows(), a.cols());
    let (m, kb) = (b.rows(), b.cols());
    if k != kb {
        return Err(TabError::Shape(format!(
            "matmul_nt: {n}x{k} incompatible with ({m}x{kb})^T"
        )));
    }
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            c[i * m + j] = s;
        }
    }
    Tensor::matrix(n, m, c)
}

/// C = Aᵀ · B where A is n×k, B is n×m, so C is k×m.
/// Used for dW = Xᵀ·dC in backward.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, TabError> {
    let (n, k) = (a.rows(), a.cols());
    let (nb, m) = (b.rows(), b.cols());
    if n != nb {
        return Err(TabError::Shape(format!(
            "matmul_tn: ({n}x{k})^T incompatible with {nb}x{m}"
        )));
    }
    let mut c = vec![0.0; k * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let brow = &b.data[i * m..(i + 1) * m];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    Tensor::matrix(k, m, c)
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (n, m) = (a.rows(), a.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.data[i * m + j];
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_2x3_3x1() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(3, 1, vec![1.0, 0.0, -1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let a = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let b = Tensor::matrix(5, 4, (0..20).map(|i| (i as f64).sin()).collect()).unwrap();
        let via_nt = matmul_nt(&a, &b).unwrap();
        let via_t = matmul(&a, &transpose(&b)).unwrap();
        for (x, y) in via_nt.data().iter().zip(via_t.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = Tensor::matrix(3, 5, (0..15).map(|i| (i as f64).cos()).collect()).unwrap();
        let via_tn = matmul_tn(&a, &c).unwrap();
        let via_t2 = matmul(&transpose(&a), &c).unwrap();
        for (x, y) in via_tn.data().iter().zip(via_t2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_invariants() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }
}
