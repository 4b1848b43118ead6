use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};

/// A batch of `n` samples of dimension `d`, one sample per row.
///
/// Always stored in standard (row-major) layout so rows can be handed out as
/// plain slices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix(Array2<f64>);

impl SampleMatrix {
    pub fn new(data: Array2<f64>) -> Self {
        if data.is_standard_layout() {
            SampleMatrix(data)
        } else {
            SampleMatrix(data.as_standard_layout().into_owned())
        }
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        SampleMatrix(Array2::zeros((n, d)))
    }

    pub fn from_shape_vec(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        Array2::from_shape_vec((n, d), values)
            .map(SampleMatrix)
            .map_err(|e| Error::invalid(format!("bad sample matrix shape: {e}")))
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            check_dim(d, row.as_ref().len())?;
            values.extend_from_slice(row.as_ref());
        }
        Self::from_shape_vec(rows.len(), d, values)
    }

    /// Number of samples (rows).
    pub fn n_samples(&self) -> usize {
        self.0.nrows()
    }

    /// Sample dimension (columns).
    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.as_slice()[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let d = self.dim().max(1);
        self.as_slice().chunks_exact(d).take(self.n_samples())
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("standard layout")
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Column-wise concatenation `[self, other]`.
    pub fn hstack(&self, other: &SampleMatrix) -> Result<SampleMatrix> {
        check_dim(self.n_samples(), other.n_samples())?;
        let joined = ndarray::concatenate(Axis(1), &[self.view(), other.view()])
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(SampleMatrix::new(joined))
    }

    /// Column block `[start, start + width)`.
    pub fn columns(&self, start: usize, width: usize) -> SampleMatrix {
        SampleMatrix::new(
            self.0
                .slice(ndarray::s![.., start..start + width])
                .to_owned(),
        )
    }

    pub(crate) fn require_samples(&self, needed: usize) -> Result<()> {
        if self.n_samples() < needed {
            return Err(Error::InsufficientSamples {
                needed,
                got: self.n_samples(),
            });
        }
        Ok(())
    }

    pub(crate) fn require_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("sample matrix has non-finite entries"))
        }
    }
}

impl From<Array2<f64>> for SampleMatrix {
    fn from(data: Array2<f64>) -> Self {
        SampleMatrix::new(data)
    }
}
