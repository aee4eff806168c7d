//! Dense row-major arrays of rank 1 to 3.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_RANK: usize = 3;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape(format!(
            "rank must be between 1 and {MAX_RANK}, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!(
            "dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel = check_shape(shape)?;
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panicking constructor for shapes that are known to be valid.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let numel = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    /// Builds a matrix from equally long rows given as `f64`.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::of(v))).collect();
        Self::new(&[m, n], data)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::shape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Views a rank-1 tensor as a `1×n` row and passes matrices through.
    pub(crate) fn as_matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [n] => Ok((1, n)),
            [m, n] => Ok((m, n)),
            _ => Err(Error::shape(format!(
                "expected rank 1 or 2, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at(&self, index: &[usize]) -> Result<T> {
        if index.len() != self.shape.len() {
            return Err(Error::Bounds(format!(
                "index {index:?} has wrong rank for shape {:?}",
                self.shape
            )));
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::Bounds(format!(
                    "index {index:?} outside shape {:?}",
                    self.shape
                )));
            }
            flat = flat * d + i;
        }
        Ok(self.data[flat])
    }

    pub fn row(&self, i: usize) -> Result<&[T]> {
        let (m, n) = self.dims2()?;
        if i >= m {
            return Err(Error::Bounds(format!("row {i} of {m}")));
        }
        Ok(&self.data[i * n..(i + 1) * n])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        let mut out = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                out.push(self.data[i * n + j]);
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&self, other: &Self, trans_a: bool, trans_b: bool) -> Result<Self> {
        let (ar, ac) = self.dims2()?;
        let (br, bc) = other.dims2()?;
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?}{} × {:?}{}",
                self.shape,
                if trans_a { "ᵀ" } else { "" },
                other.shape,
                if trans_b { "ᵀ" } else { "" },
            )));
        }
        let mut out = vec![T::zero(); m * n];
        let sa = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
        let sb = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            sa,
            &other.data,
            sb,
            T::zero(),
            &mut out,
            (n as isize, 1),
        );
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_t(other, false, false)
    }

    /// Concatenates matrices along `axis` (0 stacks rows, 1 joins columns).
    /// Rank-1 inputs are only accepted for `axis == 0`.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        if first.rank() == 1 {
            if axis != 0 || parts.iter().any(|p| p.rank() != 1) {
                return Err(Error::shape("vectors concatenate only along axis 0"));
            }
            let data: Vec<T> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
            let n = data.len();
            return Ok(Tensor::from_parts(vec![n], data));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|p| p.dims2()).collect::<Result<_>>()?;
        match axis {
            0 => {
                let n = dims[0].1;
                if dims.iter().any(|d| d.1 != n) {
                    return Err(Error::shape(format!(
                        "row concat needs equal widths, got {dims:?}"
                    )));
                }
                let m = dims.iter().map(|d| d.0).sum();
                let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
                Ok(Tensor::from_parts(vec![m, n], data))
            }
            1 => {
                let m = dims[0].0;
                if dims.iter().any(|d| d.0 != m) {
                    return Err(Error::shape(format!(
                        "column concat needs equal heights, got {dims:?}"
                    )));
                }
                let n: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(m * n);
                for i in 0..m {
                    for (p, &(_, w)) in parts.iter().zip(&dims) {
                        data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
                    }
                }
                Ok(Tensor::from_parts(vec![m, n], data))
            }
            _ => Err(Error::Bounds(format!("axis {axis} for a matrix"))),
        }
    }

    /// Splits a matrix at position `at` along `axis`; inverse of [`Tensor::concat`].
    pub fn split(&self, axis: usize, at: usize) -> Result<(Self, Self)> {
        let (m, n) = self.dims2()?;
        match axis {
            0 if at > 0 && at < m => Ok((self.slice_rows(0, at)?, self.slice_rows(at, m)?)),
            1 if at > 0 && at < n => Ok((self.slice_cols(0, at)?, self.slice_cols(at, n)?)),
            0 | 1 => Err(Error::Bounds(format!(
                "split point {at} on axis {axis} of shape {:?}",
                self.shape
            ))),
            _ => Err(Error::Bounds(format!("axis {axis} for a matrix"))),
        }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (m, n) = self.dims2()?;
        if start >= end || end > m {
            return Err(Error::Bounds(format!("rows {start}..{end} of {m}")));
        }
        Ok(Tensor::from_parts(
            vec![end - start, n],
            self.data[start * n..end * n].to_vec(),
        ))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (m, n) = self.dims2()?;
        if start >= end || end > n {
            return Err(Error::Bounds(format!("columns {start}..{end} of {n}")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&self.data[i * n + start..i * n + end]);
        }
        Ok(Tensor::from_parts(vec![m, w], data))
    }

    /// Column means of an `m×n` matrix.
    pub fn mean_rows(&self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for (o, &v) in out.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(m as f64);
        for o in &mut out {
            *o *= inv;
        }
        Ok(Tensor::from_parts(vec![n], out))
    }

    /// Gathers rows of a `V×d` table.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Self> {
        let (v, d) = self.dims2()?;
        if ids.is_empty() {
            return Err(Error::shape("embedding lookup with no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Bounds(format!("id {id} outside table of {v} rows")));
            }
            data.extend_from_slice(&self.data[id * d..(id + 1) * d]);
        }
        Ok(Tensor::from_parts(vec![ids.len(), d], data))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                .fold(0.0, f64::max)
        })
    }
}
