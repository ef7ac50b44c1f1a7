//! Dense tensors over f32/f64 and the scalar abstraction they share.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Element type tags as stored in checkpoint files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Floating-point element of a tensor. f32 is the training precision,
/// f64 the testing/gradient-check precision.
pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const DTYPE: Dtype;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// C = alpha * op(A) op(B) + beta * C with row-major buffers.
    /// op(A) is m x k (stored [k, m] when `ta`), op(B) is k x n
    /// (stored [n, k] when `tb`), C is m x n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: f64,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $tag:expr, $bytes:expr, $mm:path) => {
        impl Scalar for $t {
            const DTYPE: Dtype = $tag;

            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                let mut arr = [0u8; $bytes];
                arr.copy_from_slice(&bytes[..$bytes]);
                <$t>::from_le_bytes(arr)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: f64,
                a: &[Self],
                ta: bool,
                b: &[Self],
                tb: bool,
                beta: f64,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm: A buffer length");
                assert_eq!(b.len(), k * n, "gemm: B buffer length");
                assert_eq!(c.len(), m * n, "gemm: C buffer length");
                let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
                unsafe {
                    $mm(
                        m,
                        k,
                        n,
                        alpha as $t,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta as $t,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, Dtype::F32, 4, matrixmultiply::sgemm);
impl_scalar!(f64, Dtype::F64, 8, matrixmultiply::dgemm);

/// Dense row-major N-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Scalar> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: &[usize], data: Vec<E>) -> Tensor<E> {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Tensor<E> {
        Tensor::full(shape, E::zero())
    }

    pub fn full(shape: &[usize], value: E) -> Tensor<E> {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: E) -> Tensor<E> {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Tensor<E> {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|i| f(i)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Single-element extraction; panics unless numel() == 1.
    pub fn item(&self) -> E {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<E> {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} -> {:?}",
            self.shape,
            shape
        );
        Tensor { shape: shape.to_vec(), data: self.data.clone() }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| F::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<E>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, k: E) {
        for a in self.data.iter_mut() {
            *a *= k;
        }
    }

    /// Flat offset of [n, c, h, w] in an NCHW tensor.
    #[inline]
    pub fn idx4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> E {
        self.data[self.idx4(n, c, h, w)]
    }

    /// Largest |a - b| / max(1, |a|, |b|) over all elements.
    pub fn max_rel_diff(&self, other: &Tensor<E>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| {
                let (a, b) = (a.to_f64(), b.to_f64());
                (a - b).abs() / a.abs().max(b.abs()).max(1.0)
            })
            .fold(0.0, f64::max)
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut impl rand::Rng) -> Tensor<E> {
        use rand::distributions::Distribution;
        let normal = StandardNormal;
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| E::from_f64(normal.sample(rng) * std)).collect(),
        }
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Tensor<E> {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| E::from_f64(rng.gen_range(lo..hi))).collect(),
        }
    }
}

/// Box-Muller standard normal over a uniform source. Implemented here so the
/// draw sequence is pinned by this crate, not by rand's distribution details.
struct StandardNormal;

impl rand::distributions::Distribution<f64> for StandardNormal {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let v = r * (2.0 * std::f64::consts::PI * u2).cos();
            if v.is_finite() {
                return v;
            }
        }
    }
}

/// A named, trainable tensor plus its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<E: Scalar> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Option<Tensor<E>>,
    /// Whether weight decay applies (conv/linear weights yes; norm scales,
    /// shifts, and biases no).
    pub decay: bool,
}

impl<E: Scalar> Parameter<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>, decay: bool) -> Parameter<E> {
        Parameter { name: name.into(), value, grad: None, decay }
    }

    pub fn accumulate_grad(&mut self, g: &Tensor<E>) {
        match &mut self.grad {
            Some(existing) => existing.add_assign(g),
            None => self.grad = Some(g.clone()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_accounting() {
        let t = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert_eq!(t.numel(), 24);
        assert_eq!(t.shape(), &[2, 3, 4]);
    }

    #[test]
    #[should_panic]
    fn bad_data_length_panics() {
        let _ = Tensor::<f32>::new(&[2, 2], vec![1.0; 3]);
    }

    #[test]
    fn gemm_small_known_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let b = vec![5.0f64, 6.0, 7.0, 8.0];
        let mut c = vec![0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_transpose_flags() {
        // A^T where A stored [k=3, m=2]; B^T where B stored [n=2, k=3].
        let a_t = vec![1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0]; // stored [3,2] -> A = [1 2 3; 4 5 6]
        let b_t = vec![7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0]; // stored [2,3] -> B = [7 8; 9 10; 11 12]
        let mut c = vec![0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a_t, true, &b_t, true, 0.0, &mut c);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_beta_accumulates() {
        let a = vec![1.0f32, 0.0, 0.0, 1.0];
        let b = vec![2.0f32, 0.0, 0.0, 2.0];
        let mut c = vec![1.0f32; 4];
        f32::gemm(2, 2, 2, 1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c, vec![3.0, 1.0, 1.0, 3.0]);
    }

    #[test]
    fn idx4_row_major() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 4, 5], |i| i as f32);
        assert_eq!(t.at4(1, 2, 3, 4), (((1 * 3 + 2) * 4 + 3) * 5 + 4) as f32);
    }

    #[test]
    fn randn_is_seeded_and_reasonable() {
        let mut r1 = crate::util::rng_for(1, "t", &[]);
        let mut r2 = crate::util::rng_for(1, "t", &[]);
        let a = Tensor::<f64>::randn(&[1000], 1.0, &mut r1);
        let b = Tensor::<f64>::randn(&[1000], 1.0, &mut r2);
        assert_eq!(a, b);
        let mean: f64 = a.data().iter().sum::<f64>() / 1000.0;
        let var: f64 = a.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");
    }
}
