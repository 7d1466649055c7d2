//! Dense row-major `f32` tensors and their binary encoding.
//!
//! Image-like data is laid out batch, channel, height, width. The binary
//! encoding is little-endian throughout: a `u32` extent count, the extents
//! as `u32`, then the payload as IEEE-754 `f32`.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("empty shape list".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::InvalidShape(format!(
            "extent {pos} of {shape:?} is zero"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(format!("{shape:?} overflows")))
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// I.i.d. uniform samples in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut Rng) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidRange(format!("need lo < hi, got [{lo}, {hi})")));
        }
        let n = check_shape(shape)?;
        let data = (0..n).map(|_| rng.range(lo, hi)).collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same shape and bit-identical payload (distinguishes `-0.0` and NaN payloads).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "add_assign: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape.as_slice(), other.shape.as_slice()) else {
            return Err(Error::ShapeMismatch(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        };
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims {k} vs {k2}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            Operand::plain(&self.data, k),
            Operand::plain(&other.data, n),
            &mut out,
            false,
        );
        Tensor::from_vec(&[m, n], out)
    }

    /// Encodes as `[rank: u32][extents: u32 * rank][payload: f32 * n]`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.shape.len() + 4 * self.data.len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Decodes a buffer that holds exactly one encoded tensor.
    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
        let (t, used) = Self::read_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::CorruptData(format!(
                "{} trailing bytes after tensor payload",
                bytes.len() - used
            )));
        }
        Ok(t)
    }

    /// Decodes one tensor from the front of `bytes`, returning it and the bytes consumed.
    pub fn read_prefix(bytes: &[u8]) -> Result<(Tensor, usize)> {
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::CorruptData(format!("truncated at byte {at}")))
        };
        let rank = word(0)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::CorruptData(format!("implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|i| word(4 + 4 * i).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = check_shape(&shape).map_err(|e| Error::CorruptData(e.to_string()))?;
        let start = 4 + 4 * rank;
        let end = n
            .checked_mul(4)
            .and_then(|b| b.checked_add(start))
            .ok_or_else(|| Error::CorruptData("payload length overflows".into()))?;
        let payload = bytes.get(start..end).ok_or_else(|| {
            Error::CorruptData(format!(
                "payload needs {} bytes, {} available",
                end - start,
                bytes.len().saturating_sub(start)
            ))
        })?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Tensor { shape, data }, end))
    }
}

/// A row-major matrix view, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    data: &'a [f32],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Operand<'a> {
    /// Matrix stored row-major with `cols` columns.
    pub(crate) fn plain(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transpose of a matrix stored row-major with `cols` columns.
    pub(crate) fn transposed(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `c = a * b` (or `c += a * b` when `accumulate`) for `a: m x k`, `b: k x n`, `c: m x n` row-major.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: Operand<'_>,
    b: Operand<'_>,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the operand slices cover every element addressed by the given
    // dimensions and strides, and `c` holds at least m * n elements.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, Strategy};

    #[test]
    fn zeros_examples() {
        let t = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(Tensor::zeros(&[1]).unwrap().data(), &[0.0]);
        assert_eq!(Tensor::zeros(&[3, 224, 224]).unwrap().len(), 150_528);
    }

    #[test]
    fn zeros_rejects_bad_shapes() {
        assert!(matches!(Tensor::zeros(&[]), Err(Error::InvalidShape(_))));
        assert!(matches!(Tensor::zeros(&[3, 0]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn uniform_is_deterministic_and_in_range() {
        let a = Tensor::uniform(&[4], 0.0, 1.0, &mut Rng::new(42)).unwrap();
        let b = Tensor::uniform(&[4], 0.0, 1.0, &mut Rng::new(42)).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.data().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn uniform_mean_is_centered() {
        let t = Tensor::uniform(&[10_000], -1.0, 1.0, &mut Rng::new(1)).unwrap();
        let mean: f32 = t.data().iter().sum::<f32>() / t.len() as f32;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn uniform_rejects_empty_range() {
        let mut rng = Rng::new(0);
        assert!(matches!(
            Tensor::uniform(&[2], 1.0, 1.0, &mut rng),
            Err(Error::InvalidRange(_))
        ));
        assert!(matches!(
            Tensor::uniform(&[2], 2.0, 1.0, &mut rng),
            Err(Error::InvalidRange(_))
        ));
    }

    #[test]
    fn one_encodes_as_ieee754() {
        let t = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[bytes.len() - 4..], &[0x00, 0x00, 0x80, 0x3F]);
        assert_eq!(&bytes[..8], &[1, 0, 0, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(
            Tensor::from_bytes(&[1, 2, 3, 4, 5]),
            Err(Error::CorruptData(_))
        ));
        let mut bytes = Tensor::zeros(&[2, 3]).unwrap().to_bytes();
        bytes.pop();
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::CorruptData(_))));
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::CorruptData(_))));
    }

    fn naive_matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f64;
                for p in 0..k {
                    s += a[i * k + p] as f64 * b[p * n + j] as f64;
                }
                out[i * n + j] = s as f32;
            }
        }
        out
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(1usize..5, 1..4).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop::collection::vec(any::<f32>(), n)
                .prop_map(move |data| Tensor::from_vec(&shape, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn serialization_round_trips(t in arb_tensor()) {
            let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
            prop_assert!(back.bit_eq(&t));
        }

        #[test]
        fn matmul_matches_naive(m in 1usize..7, k in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = Tensor::uniform(&[m, k], -1.0, 1.0, &mut rng).unwrap();
            let b = Tensor::uniform(&[k, n], -1.0, 1.0, &mut rng).unwrap();
            let got = a.matmul(&b).unwrap();
            let want = naive_matmul(a.data(), b.data(), m, k, n);
            for (g, w) in got.data().iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-6 * w.abs().max(1.0));
            }
        }

        #[test]
        fn elementwise_matches_naive(seed in any::<u64>(), n in 1usize..50) {
            let mut rng = Rng::new(seed);
            let a = Tensor::uniform(&[n], -3.0, 3.0, &mut rng).unwrap();
            let b = Tensor::uniform(&[n], -3.0, 3.0, &mut rng).unwrap();
            let s = a.add(&b).unwrap();
            let p = a.mul(&b).unwrap();
            for i in 0..n {
                prop_assert_eq!(s.data()[i], a.data()[i] + b.data()[i]);
                prop_assert_eq!(p.data()[i], a.data()[i] * b.data()[i]);
            }
        }
    }
}
