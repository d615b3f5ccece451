//! Dense row-major tensors and the handful of kernels the layers are built on.
//!
//! Images use the channels-last `H×W×C` convention. Convolution is lowered to
//! a matrix product through [`im2col`]; [`col2im`] is its adjoint and scatters
//! patch gradients back onto the input.

use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is used for training, `f64` for
/// gradient checking.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Byte width, also used as the checkpoint precision tag.
    const BYTES: u8;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossless(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BYTES: u8 = 4;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Scalar for f64 {
    const BYTES: u8 = 8;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn to_f64_lossless(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Dense n-dimensional array. `data.len()` always equals the product of
/// `shape`, and every extent is at least one.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor shape must have at least one extent"));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!(
            "extent {pos} of shape {shape:?} is zero"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    /// Tensor with every element equal to `value`.
    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let len = check_extents(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    /// Wraps row-major `data`; its length must equal the product of `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_extents(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
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

    /// In-place access for parameter updates and gradient accumulation.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Copy with a new shape of identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_reshaped(shape)
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Result<Self> {
        let len = check_extents(shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} values) into {shape:?} ({len} values)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-type conversion, going through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossless()))
                .collect(),
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Inner product over the flat data.
    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.data.len() != other.data.len() {
            return Err(Error::shape(format!(
                "dot of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// Index of the largest element; the lowest index wins exact ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.as_matrix("matmul lhs")?;
        let (k2, n) = other.as_matrix("matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, &other.data, &mut out);
        Tensor::from_vec(&[m, n], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (rows, cols) = self.as_matrix("transpose")?;
        let mut out = vec![T::zero(); rows * cols];
        transpose_into(rows, cols, &self.data, &mut out);
        Tensor::from_vec(&[cols, rows], out)
    }

    fn as_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "{what} must be rank 2, got {:?}",
                self.shape
            ))),
        }
    }

    /// `(H, W, C)` of a rank-3 image tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(format!(
                "expected an H×W×C tensor, got {:?}",
                self.shape
            ))),
        }
    }
}

/// `c = a·b` for row-major `a: m×k`, `b: k×n`. `c` is overwritten.
///
/// Every output element accumulates its products in ascending `p`, starting
/// from zero, so the result is bitwise identical to the textbook triple loop.
/// Blocking only changes which elements are in flight together.
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let full_i = m - m % MR;
    let full_j = n - n % NR;
    for i in (0..full_i).step_by(MR) {
        for j in (0..full_j).step_by(NR) {
            micro_kernel(k, n, &a[i * k..], &b[j..], &mut c[i * n + j..]);
        }
    }
    // ragged right edge of the blocked rows, then the leftover rows
    for i in 0..m {
        let j0 = if i < full_i { full_j } else { 0 };
        if j0 == n {
            continue;
        }
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n + j0..(i + 1) * n];
        c_row.iter_mut().for_each(|v| *v = T::zero());
        for (p, &a_ip) in a_row.iter().enumerate() {
            for (c_ij, &b_pj) in c_row.iter_mut().zip(&b[p * n + j0..(p + 1) * n]) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

const MR: usize = 4;
const NR: usize = 8;

/// One `MR×NR` output tile held in registers for the whole `p` sweep.
#[inline(always)]
fn micro_kernel<T: Scalar>(k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let mut acc = [[T::zero(); NR]; MR];
    for p in 0..k {
        let b_row: &[T; NR] = b[p * n..p * n + NR].try_into().expect("NR-wide slice");
        for (r, acc_row) in acc.iter_mut().enumerate() {
            let a_rp = a[r * k + p];
            for (v, &bv) in acc_row.iter_mut().zip(b_row) {
                *v += a_rp * bv;
            }
        }
    }
    for (r, acc_row) in acc.iter().enumerate() {
        c[r * n..r * n + NR].copy_from_slice(acc_row);
    }
}

pub(crate) fn transpose_into<T: Scalar>(rows: usize, cols: usize, src: &[T], dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Output extent of a valid (unpadded) window sweep.
pub fn valid_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
    if window == 0 || stride == 0 || input < window {
        None
    } else {
        Some((input - window) / stride + 1)
    }
}

fn conv_geometry(
    shape: (usize, usize, usize),
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
) -> Result<(usize, usize)> {
    let (h, w, _) = shape;
    match (
        valid_extent(h, kernel_h, stride),
        valid_extent(w, kernel_w, stride),
    ) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::shape(format!(
            "{kernel_h}×{kernel_w} kernel with stride {stride} does not fit a {h}×{w} input"
        ))),
    }
}

/// Unrolls every receptive field of an `H×W×C` input into one row of a
/// `(H_out·W_out) × (kernel_h·kernel_w·C)` matrix. Patch columns follow
/// `(ki, kj, c)` row-major order.
pub fn im2col<T: Scalar>(
    input: &Tensor<T>,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let (h, w, c) = input.hwc()?;
    let (oh, ow) = conv_geometry((h, w, c), kernel_h, kernel_w, stride)?;
    let patch = kernel_h * kernel_w * c;
    let src = input.data();
    let mut out = Vec::with_capacity(oh * ow * patch);
    for oi in 0..oh {
        for oj in 0..ow {
            for ki in 0..kernel_h {
                let row = oi * stride + ki;
                let start = (row * w + oj * stride) * c;
                // one kernel row is contiguous in channels-last layout
                out.extend_from_slice(&src[start..start + kernel_w * c]);
            }
        }
    }
    Tensor::from_vec(&[oh * ow, patch], out)
}

/// Adjoint of [`im2col`]: scatters each patch row back onto an
/// `input_shape` tensor, summing where receptive fields overlap.
pub fn col2im<T: Scalar>(
    cols: &Tensor<T>,
    input_shape: &[usize],
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(input_shape)?;
    let (h, w, c) = out.hwc()?;
    let (oh, ow) = conv_geometry((h, w, c), kernel_h, kernel_w, stride)?;
    let patch = kernel_h * kernel_w * c;
    if cols.shape() != [oh * ow, patch] {
        return Err(Error::shape(format!(
            "col2im expects {:?} columns for input {input_shape:?}, got {:?}",
            [oh * ow, patch],
            cols.shape()
        )));
    }
    let src = cols.data();
    let dst = out.data_mut();
    for oi in 0..oh {
        for oj in 0..ow {
            let row_base = (oi * ow + oj) * patch;
            for ki in 0..kernel_h {
                let start = ((oi * stride + ki) * w + oj * stride) * c;
                let seg = &src[row_base + ki * kernel_w * c..row_base + (ki + 1) * kernel_w * c];
                for (d, &s) in dst[start..start + kernel_w * c].iter_mut().zip(seg) {
                    *d += s;
                }
            }
        }
    }
    Ok(out)
}
