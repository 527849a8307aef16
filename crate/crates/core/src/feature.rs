//! Grid-shaped domain values: per-proposal channel features, binary occlusion
//! masks and real-valued cell maps.

use crate::error::{Error, Result};
use crate::ndnum::Tensor;

/// `C × X × Y` channel features for one proposal, stored row-major with the
/// channel index outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    tensor: Tensor,
}

impl FeatureMap {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self {
            tensor: Tensor::new(vec![channels, width, height], data)?,
        })
    }

    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            tensor: Tensor::zeros(vec![channels, width, height]),
        }
    }

    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 3 {
            return Err(Error::precondition(format!(
                "feature map needs a 3-d tensor, got shape {:?}",
                tensor.shape()
            )));
        }
        Ok(Self { tensor })
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels(), self.width(), self.height())
    }

    pub fn cells(&self) -> usize {
        self.width() * self.height()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.tensor.into_data()
    }

    fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.width() + x) * self.height() + y
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data()[self.index(c, x, y)]
    }

    /// Channel vector at flat cell index `x * height + y`.
    pub fn cell(&self, cell: usize) -> Vec<f64> {
        let n = self.cells();
        (0..self.channels()).map(|c| self.data()[c * n + cell]).collect()
    }

    /// Rebuilds a map from per-cell channel vectors, indexed `x * height + y`.
    pub fn from_cells(channels: usize, width: usize, height: usize, cells: &[Vec<f64>]) -> Result<Self> {
        let n = width * height;
        if cells.len() != n {
            return Err(Error::DimensionMismatch {
                context: "cell count",
                expected: n,
                found: cells.len(),
            });
        }
        let mut data = vec![0.0; channels * n];
        for (i, v) in cells.iter().enumerate() {
            if v.len() != channels {
                return Err(Error::DimensionMismatch {
                    context: "cell channel count",
                    expected: channels,
                    found: v.len(),
                });
            }
            for (c, &val) in v.iter().enumerate() {
                data[c * n + i] = val;
            }
        }
        Self::new(channels, width, height, data)
    }

    pub fn ensure_same_shape(&self, other: &FeatureMap) -> Result<()> {
        if self.tensor.shape() != other.tensor.shape() {
            return Err(Error::ShapeMismatch {
                left: self.tensor.shape().to_vec(),
                right: other.tensor.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn sq_dist(&self, other: &FeatureMap) -> Result<f64> {
        self.tensor.sq_dist(&other.tensor)
    }
}

/// Binary `X × Y` grid, `true` marking an occluded cell. Cells are indexed
/// `x * height + y`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OcclusionMask {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl OcclusionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![true; width * height],
        }
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::DimensionMismatch {
                context: "mask cells",
                expected: width * height,
                found: cells.len(),
            });
        }
        Ok(Self { width, height, cells })
    }

    /// Mask from row strings such as `"#.."`, one string per `x`.
    pub fn from_rows(rows: &[&str]) -> Self {
        let width = rows.len();
        let height = rows.first().map_or(0, |r| r.len());
        let cells = rows.iter().flat_map(|r| r.chars().map(|ch| ch == '#')).collect();
        Self { width, height, cells }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[x * self.height + y]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.cells[x * self.height + y] = value;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.cells.len() as f64
    }

    pub fn ensure_same_shape(&self, other: &OcclusionMask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch {
                left: vec![self.width, self.height],
                right: vec![other.width, other.height],
            });
        }
        Ok(())
    }
}

/// Real-valued `X × Y` grid, indexed `x * height + y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl CellGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                context: "grid values",
                expected: width * height,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { width, height, values })
    }

    /// Grid from nested rows, one inner vector per `x`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.len();
        let height = rows.first().map_or(0, Vec::len);
        Self::new(width, height, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.height + y]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}
