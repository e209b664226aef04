//! From-scratch function approximators with reverse-mode gradients.
//!
//! All parameters live in a flat [`ParamVector`]; the spec types ([`MlpSpec`],
//! [`ConvSpec`], [`PolicyNet`]) own the layout that binds slices of it to
//! layers. Batches are row-major [`Batch`] matrices.

mod adam;
mod conv;
mod mlp;
mod policy;
mod schedule;

pub use adam::{adam_step, clip_grad_norm, AdamState, StepStats};
pub use conv::{conv_backward, conv_forward, ConvLayer, ConvSpec};
pub use mlp::{mlp_backward, mlp_forward, Activation, MlpSpec};
pub use policy::{PolicyInput, PolicyNet};
pub use schedule::{LrSchedule, ScheduleKind};

use rayon::prelude::*;

/// Rows per parallel work item. Fixed so that summation order, and hence every
/// bit of the result, does not depend on the number of worker threads.
pub(crate) const ROW_CHUNK: usize = 32;

/// Run `f` over fixed row chunks in parallel; each call gets its own zeroed
/// gradient buffer. Buffers are summed in chunk order.
pub(crate) fn chunked_sum<T, F>(rows: usize, len: usize, f: F) -> (Vec<f64>, Vec<T>)
where
    T: Send,
    F: Fn(std::ops::Range<usize>, &mut [f64]) -> Vec<T> + Sync,
{
    let parts: Vec<(Vec<f64>, Vec<T>)> = (0..rows.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; len];
            let extra = f(c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(rows), &mut g);
            (g, extra)
        })
        .collect();
    let mut total = vec![0.0; len];
    let mut extras = Vec::with_capacity(rows);
    for (g, e) in parts {
        for (t, x) in total.iter_mut().zip(g) {
            *t += x;
        }
        extras.extend(e);
    }
    (total, extras)
}

/// Row-parallel map preserving order.
pub(crate) fn par_rows<F>(rows: usize, cols: usize, f: F) -> Batch
where
    F: Fn(usize) -> Vec<f64> + Sync + Send,
{
    let data: Vec<Vec<f64>> = (0..rows).into_par_iter().map(f).collect();
    let mut out = Batch::zeros(rows, cols);
    for (i, r) in data.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&r);
    }
    out
}

use crate::error::{check_len, Error, Result};

/// Row-major batch of equal-width real vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Batch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Batch {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("Batch::from_flat", rows * cols, data.len())?;
        Ok(Batch { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("Batch::from_rows", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Batch {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero width
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Batch {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Flat parameter store for one approximator.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector {
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|x| !x.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite {
                context: context.to_string(),
                index,
            }),
            None => Ok(()),
        }
    }

    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) -> Result<()> {
        check_len("ParamVector::add_scaled", self.len(), other.len())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.values {
            *a *= s;
        }
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector { values }
    }
}

#[inline]
pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub(crate) fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}
