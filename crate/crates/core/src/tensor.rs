//! Dense row-major tensors and the handful of primitives the engine needs.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Floating-point element type. The engine runs on `f32`; `f64` exists for
/// numerical cross-checks.
pub trait Scalar: Float + AddAssign + Sum + Default + Debug + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::arg(format!(
            "tensor rank must be 1..={MAX_RANK}, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::arg(format!(
            "tensor dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::arg(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from(x).expect("float cast"))
                .collect(),
        }
    }

    /// Decomposes the flat layout around `axis` into (outer, len, inner) extents.
    fn axis_extents(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::arg(format!(
                "axis {axis} out of range for rank-{} tensor",
                self.rank()
            )));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    /// Euclidean norm of the sub-tensor obtained by fixing `axis` at `coord`.
    /// Accumulates in `f64`.
    pub fn slice_norm(&self, axis: usize, coord: usize) -> Result<f64> {
        let (outer, len, inner) = self.axis_extents(axis)?;
        if coord >= len {
            return Err(Error::arg(format!(
                "coordinate {coord} out of range for axis {axis} of length {len}"
            )));
        }
        let mut acc = 0.0f64;
        for o in 0..outer {
            let start = (o * len + coord) * inner;
            for &x in &self.data[start..start + inner] {
                let x = x.to_f64().unwrap_or(f64::NAN);
                acc += x * x;
            }
        }
        Ok(acc.sqrt())
    }

    /// Keeps only `indices` (strictly ascending) along `axis`.
    pub fn take_along_axis(&self, axis: usize, indices: &[usize]) -> Result<Self> {
        let (outer, len, inner) = self.axis_extents(axis)?;
        if indices.is_empty() {
            return Err(Error::arg("take_along_axis needs at least one index"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg(format!(
                "indices must be strictly ascending, got {indices:?}"
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= len {
                return Err(Error::arg(format!(
                    "index {last} out of range for axis {axis} of length {len}"
                )));
            }
        }
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &j in indices {
                let start = (o * len + j) * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        Ok(Self { shape, data })
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (&[m, k], &[k2, n]) = (self.shape(), rhs.shape()) else {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        };
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                for (o, &b) in row.iter_mut().zip(&rhs.data[p * n..(p + 1) * n]) {
                    *o += a * b;
                }
            }
        }
        Self::new(vec![m, n], out)
    }

    fn zip_with(&self, rhs: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(|x| x.tanh())
    }

    /// Squared Frobenius norm, accumulated in `f64`.
    pub fn sum_squares(&self) -> f64 {
        self.data
            .iter()
            .map(|&x| {
                let x = x.to_f64().unwrap_or(f64::NAN);
                x * x
            })
            .sum()
    }
}

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn slice_norm_examples() {
        let m = t(&[2, 2], &[3.0, 4.0, 0.0, 0.0]);
        assert_eq!(m.slice_norm(0, 0).unwrap(), 5.0);
        assert_eq!(m.slice_norm(0, 1).unwrap(), 0.0);

        let m = t(&[3, 2], &[1.0, 1.0, 2.0, 2.0, 0.0, 3.0]);
        let norms: Vec<f64> = (0..3).map(|j| m.slice_norm(0, j).unwrap()).collect();
        // scalar loop oracle
        let oracle: Vec<f64> = (0..3)
            .map(|j| {
                let mut s = 0.0f64;
                for c in 0..2 {
                    let x = m.data()[j * 2 + c] as f64;
                    s += x * x;
                }
                s.sqrt()
            })
            .collect();
        for ((n, o), expected) in norms.iter().zip(&oracle).zip([std::f64::consts::SQRT_2, 2.0 * std::f64::consts::SQRT_2, 3.0]) {
            assert!((n - o).abs() < 1e-12);
            assert!((n - expected).abs() < 1e-5);
        }
    }

    #[test]
    fn slice_norm_rejects_bad_axis_and_coord() {
        let m = random(&[2, 3], 1);
        assert!(matches!(m.slice_norm(2, 0), Err(Error::Argument(_))));
        assert!(matches!(m.slice_norm(1, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn take_along_axis_examples() {
        let v = t(&[3], &[10.0, 20.0, 30.0]);
        assert_eq!(v.take_along_axis(0, &[0, 2]).unwrap().data(), &[10.0, 30.0]);

        let r = random(&[4, 3, 2], 7);
        assert_eq!(r.take_along_axis(1, &[0, 1, 2]).unwrap(), r);

        let got = r.take_along_axis(1, &[1, 2]).unwrap();
        assert_eq!(got.shape(), &[4, 2, 2]);
        let keep = [1usize, 2];
        for a in 0..4 {
            for (bi, &b) in keep.iter().enumerate() {
                for c in 0..2 {
                    assert_eq!(got.data()[(a * 2 + bi) * 2 + c], r.data()[(a * 3 + b) * 2 + c]);
                }
            }
        }
    }

    #[test]
    fn take_along_axis_rejects_unsorted() {
        let r = random(&[4, 3], 3);
        assert!(r.take_along_axis(0, &[2, 1]).is_err());
        assert!(r.take_along_axis(0, &[1, 1]).is_err());
        assert!(r.take_along_axis(0, &[4]).is_err());
        assert!(r.take_along_axis(0, &[]).is_err());
    }

    #[test]
    fn matmul_identity_and_loop_oracle() {
        let a = random(&[3, 4], 11);
        let eye = Tensor::from_fn(vec![3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(eye.matmul(&a).unwrap(), a);

        let a = random(&[2, 3], 12);
        let b = random(&[3, 2], 13);
        let c = a.matmul(&b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0f32;
                for k in 0..3 {
                    s += a.data()[i * 3 + k] * b.data()[k * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - s).abs() < 1e-6);
            }
        }
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn elementwise_ops() {
        let z = Tensor::<f32>::zeros(vec![2]).unwrap();
        assert_eq!(z.sigmoid().data(), &[0.5, 0.5]);
        let a = random(&[2, 3], 5);
        let b = random(&[2, 3], 6);
        let s = a.add(&b).unwrap();
        let p = a.mul(&b).unwrap();
        for i in 0..6 {
            assert_eq!(s.data()[i], a.data()[i] + b.data()[i]);
            assert_eq!(p.data()[i], a.data()[i] * b.data()[i]);
            assert_eq!(a.tanh().data()[i], a.data()[i].tanh());
        }
        assert!(a.add(&random(&[3, 2], 1)).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::zeros(vec![]).is_err());
        assert!(Tensor::<f32>::zeros(vec![1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::<f32>::zeros(vec![2, 0]).is_err());
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..=4)
    }

    proptest! {
        #[test]
        fn slice_norms_partition_frobenius(shape in shape_strategy(), seed in any::<u64>()) {
            let t = random(&shape, seed);
            let total = t.sum_squares();
            for axis in 0..shape.len() {
                let parts: f64 = (0..shape[axis])
                    .map(|j| t.slice_norm(axis, j).unwrap().powi(2))
                    .sum();
                prop_assert!((parts - total).abs() <= 1e-4 * total.max(1e-12));
            }
        }

        #[test]
        fn take_preserves_kept_slices(shape in shape_strategy(), seed in any::<u64>(), mask in any::<u8>()) {
            let t = random(&shape, seed);
            for axis in 0..shape.len() {
                let mut keep: Vec<usize> = (0..shape[axis]).filter(|j| mask & (1 << j) != 0).collect();
                if keep.is_empty() {
                    keep.push(0);
                }
                let sub = t.take_along_axis(axis, &keep).unwrap();
                for (pos, &j) in keep.iter().enumerate() {
                    prop_assert_eq!(
                        sub.slice_norm(axis, pos).unwrap().to_bits(),
                        t.slice_norm(axis, j).unwrap().to_bits()
                    );
                }
            }
        }
    }
}
