//! Dense K-order tensors and the multilinear kernels built on them.
//!
//! Storage is row-major over the index tuple `(i_1, ..., i_K)`: the last
//! axis varies fastest in the flat buffer. Unfoldings follow the
//! Kolda-Bader convention instead, where the remaining axes are laid out
//! along the columns with the lowest-numbered axis varying fastest. The
//! matching Khatri-Rao chain for mode `n` is therefore
//! `U_{K-1} ⊙ ... ⊙ U_{n+1} ⊙ U_{n-1} ⊙ ... ⊙ U_0`, see [`khatri_rao_except`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Factor matrix `I_k x R`; column `r` is the mode-`k` vector of component `r`.
pub type FactorMatrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor needs at least one axis".into()));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::Shape(format!("axis {axis} has zero extent")));
    }
    Ok(shape.iter().product())
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} ({} cells)",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = check_shape(&shape)?;
        Ok(Self { shape, data: vec![0.0; len] })
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let len = check_shape(&shape)?;
        Ok(Self { shape, data: vec![value; len] })
    }

    /// Builds a tensor by evaluating `f` at every index tuple.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(&shape)?;
        let mut data = Vec::with_capacity(len);
        for_each_index(&shape, |idx| data.push(f(idx)));
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &extent)| acc * extent + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    /// Sets negative entries to zero.
    pub fn clamp_non_negative(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Keeps the listed positions along `axis`, in the given order.
    pub fn select(&self, axis: usize, positions: &[usize]) -> Result<Self> {
        if axis >= self.order() {
            return Err(Error::ModeOutOfRange { mode: axis, order: self.order() });
        }
        if positions.is_empty() {
            return Err(Error::Shape("selection is empty".into()));
        }
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.shape[axis]) {
            return Err(Error::Shape(format!(
                "position {bad} out of range for axis {axis} of extent {}",
                self.shape[axis]
            )));
        }
        let mut shape = self.shape.clone();
        shape[axis] = positions.len();
        let mut src = vec![0usize; self.order()];
        Self::from_fn(shape, |idx| {
            src.copy_from_slice(idx);
            src[axis] = positions[idx[axis]];
            self.get(&src)
        })
    }

    /// Contiguous range `start..end` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::Shape(format!("empty range {start}..{end}")));
        }
        let positions: Vec<usize> = (start..end).collect();
        self.select(axis, &positions)
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&DenseTensor], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        if axis >= first.order() {
            return Err(Error::ModeOutOfRange { mode: axis, order: first.order() });
        }
        let mut offsets = Vec::with_capacity(parts.len());
        let mut total = 0;
        for p in parts {
            let compatible = p.order() == first.order()
                && p.shape.iter().zip(&first.shape).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(Error::DimensionMismatch(format!(
                    "cannot concatenate {:?} with {:?} along axis {axis}",
                    p.shape, first.shape
                )));
            }
            offsets.push(total);
            total += p.shape[axis];
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let mut src = vec![0usize; first.order()];
        Self::from_fn(shape, |idx| {
            let part = offsets.partition_point(|&o| o <= idx[axis]) - 1;
            src.copy_from_slice(idx);
            src[axis] -= offsets[part];
            parts[part].get(&src)
        })
    }
}

/// Calls `f` on every index tuple of `shape` in row-major order.
pub fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..total {
        f(&idx);
        for k in (0..shape.len()).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Column strides of the mode-`mode` unfolding (zero for `mode` itself).
fn unfold_strides(shape: &[usize], mode: usize) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for (k, &extent) in shape.iter().enumerate() {
        if k != mode {
            strides[k] = acc;
            acc *= extent;
        }
    }
    strides
}

/// Mode-`mode` matricization, `I_mode x prod_{k != mode} I_k`.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<DMatrix<f64>> {
    let order = t.order();
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    let rows = t.shape[mode];
    let cols = t.len() / rows;
    let strides = unfold_strides(&t.shape, mode);
    let mut m = DMatrix::zeros(rows, cols);
    let mut flat = 0;
    for_each_index(&t.shape, |idx| {
        let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        m[(idx[mode], col)] = t.data[flat];
        flat += 1;
    });
    Ok(m)
}

/// Inverse of [`unfold`].
pub fn fold(m: &DMatrix<f64>, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    let len = check_shape(shape)?;
    if mode >= shape.len() {
        return Err(Error::ModeOutOfRange { mode, order: shape.len() });
    }
    if m.nrows() != shape[mode] || m.nrows() * m.ncols() != len {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix cannot fold into {:?} along mode {mode}",
            m.nrows(),
            m.ncols(),
            shape
        )));
    }
    let strides = unfold_strides(shape, mode);
    DenseTensor::from_fn(shape.to_vec(), |idx| {
        let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        m[(idx[mode], col)]
    })
}

/// Column-wise Kronecker product; row `i * J + j` holds `a[i, r] * b[j, r]`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "khatri-rao operands have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    Ok(DMatrix::from_fn(ra * rb, a.ncols(), |row, r| a[(row / rb, r)] * b[(row % rb, r)]))
}

/// Khatri-Rao chain of every factor except `mode`, ordered to match [`unfold`].
pub fn khatri_rao_except(factors: &[FactorMatrix], mode: usize) -> Result<DMatrix<f64>> {
    let mut iter = factors.iter().enumerate().rev().filter(|(k, _)| *k != mode).map(|(_, f)| f);
    let first = iter
        .next()
        .ok_or_else(|| Error::Shape("khatri-rao chain needs at least two factors".into()))?;
    iter.try_fold(first.clone(), |acc, f| khatri_rao(&acc, f))
}

/// Hadamard product of the Gram matrices `U_k^T U_k` for every `k != mode`.
pub fn gram_hadamard_except(factors: &[FactorMatrix], mode: usize) -> DMatrix<f64> {
    let rank = factors[0].ncols();
    let mut acc = DMatrix::from_element(rank, rank, 1.0);
    for (k, f) in factors.iter().enumerate() {
        if k != mode {
            acc.component_mul_assign(&(f.transpose() * f));
        }
    }
    acc
}

/// Boolean indicator of observed cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    shape: Vec<usize>,
    flags: Vec<bool>,
}

impl ObservationMask {
    pub fn new(shape: Vec<usize>, flags: Vec<bool>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if flags.len() != len {
            return Err(Error::Shape(format!(
                "mask length {} does not match shape {:?}",
                flags.len(),
                shape
            )));
        }
        if !flags.iter().any(|&f| f) {
            return Err(Error::EmptyMask);
        }
        Ok(Self { shape, flags })
    }

    pub fn full(shape: Vec<usize>) -> Result<Self> {
        let len = check_shape(&shape)?;
        Ok(Self { shape, flags: vec![true; len] })
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> bool) -> Result<Self> {
        check_shape(&shape)?;
        let mut flags = Vec::new();
        for_each_index(&shape, |idx| flags.push(f(idx)));
        Self::new(shape, flags)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_observed(&self, index: &[usize]) -> bool {
        let off = index.iter().zip(&self.shape).fold(0, |acc, (&i, &e)| acc * e + i);
        self.flags[off]
    }

    pub fn observed_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn missing_count(&self) -> usize {
        self.flags.len() - self.observed_count()
    }

    /// Mask of the unobserved cells; `None` when every cell is observed.
    pub fn complement(&self) -> Option<Self> {
        Self::new(self.shape.clone(), self.flags.iter().map(|f| !f).collect()).ok()
    }

    pub fn check_matches(&self, t: &DenseTensor) -> Result<()> {
        if self.shape != t.shape {
            return Err(Error::DimensionMismatch(format!(
                "mask shape {:?} does not match tensor shape {:?}",
                self.shape, t.shape
            )));
        }
        Ok(())
    }
}

/// `‖(estimate − truth) ⊙ mask‖_F / ‖truth ⊙ mask‖_F`.
pub fn relative_residual(estimate: &DenseTensor, truth: &DenseTensor, mask: &ObservationMask) -> Result<f64> {
    if estimate.shape != truth.shape {
        return Err(Error::DimensionMismatch(format!(
            "estimate {:?} vs truth {:?}",
            estimate.shape, truth.shape
        )));
    }
    mask.check_matches(truth)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((e, t), &m) in estimate.data.iter().zip(&truth.data).zip(&mask.flags) {
        if m {
            num += (e - t) * (e - t);
            den += t * t;
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((num / den).sqrt())
}

/// [`relative_residual`] over every cell.
pub fn relative_residual_full(estimate: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    let mask = ObservationMask::full(truth.shape.clone())?;
    relative_residual(estimate, truth, &mask)
}
