//! Row-major float64 tensors with the handful of dense kernels the graph
//! needs. Everything the autodiff layer touches is 2-D; vectors travel as
//! single-row matrices.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1, 1], data: vec![value] }
    }

    pub fn row(values: &[f64]) -> Self {
        Self { shape: vec![1, values.len()], data: values.to_vec() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            assert_eq!(r.len(), d, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { shape: vec![n, d], data }
    }

    /// Xavier-uniform initialization for a [fan_in, fan_out] weight.
    pub fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self { shape: vec![fan_in, fan_out], data }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "shape mismatch in zip");
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_in_place(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "shape mismatch in accumulate");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// C = A B for [n,k] x [k,m].
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row_b = &other.data[p * m..(p + 1) * m];
                let row_o = &mut out[i * m..(i + 1) * m];
                for (o, &b) in row_o.iter_mut().zip(row_b) {
                    *o += a * b;
                }
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// C = A B^T for [n,k] x [m,k].
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        let (n, k) = (self.rows(), self.cols());
        let (m, k2) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row_a = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let row_b = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = row_a.iter().zip(row_b).map(|(&a, &b)| a * b).sum();
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// C = A^T B for [k,n] x [k,m].
    pub fn matmul_tn(&self, other: &Tensor) -> Tensor {
        let (k, n) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul_tn inner dims {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let row_a = &self.data[p * n..(p + 1) * n];
            let row_b = &other.data[p * m..(p + 1) * m];
            for i in 0..n {
                let a = row_a[i];
                if a == 0.0 {
                    continue;
                }
                let row_o = &mut out[i * m..(i + 1) * m];
                for (o, &b) in row_o.iter_mut().zip(row_b) {
                    *o += a * b;
                }
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    pub fn transpose(&self) -> Tensor {
        let (n, m) = (self.rows(), self.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Tensor { shape: vec![m, n], data: out }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::xavier(&mut rng, 4, 5);
        let b = Tensor::xavier(&mut rng, 5, 3);
        let c = a.matmul(&b);
        let c_nt = a.matmul_nt(&b.transpose());
        let c_tn = a.transpose().matmul_tn(&b);
        for (x, y) in c.data.iter().zip(&c_nt.data) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in c.data.iter().zip(&c_tn.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
