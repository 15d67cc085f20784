//! Grid vectors on a truncated interval `[0, L]` with the weighted ℓ¹
//! norm and the entrywise order.
//!
//! The weights are the uniform cell width `h`, so the norm is the midpoint
//! quadrature of the L¹ norm and is additive on the positive cone.

use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Default absolute tolerance for cone membership.
pub const POSITIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpace {
    length: f64,
    cells: usize,
    spacing: f64,
    weights: Vec<f64>,
}

impl GridSpace {
    pub fn new(length: f64, cells: usize) -> Result<Arc<Self>> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain length must be positive, got {length}"
            )));
        }
        if cells == 0 {
            return Err(Error::InvalidArgument("cell count must be at least 1".into()));
        }
        let spacing = length / cells as f64;
        Ok(Arc::new(GridSpace {
            length,
            cells,
            spacing,
            weights: vec![spacing; cells],
        }))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Cell width `h = L/n`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cell midpoints `(j + ½)h`.
    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.cells)
            .map(|j| (j as f64 + 0.5) * self.spacing)
            .collect()
    }
}

/// A state on the grid: one density value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVector {
    space: Arc<GridSpace>,
    values: DVector<f64>,
}

impl GridVector {
    pub fn new(space: Arc<GridSpace>, values: DVector<f64>) -> Result<Self> {
        if values.len() != space.cells() {
            return Err(Error::DimensionMismatch {
                expected: space.cells(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid vector has non-finite entries".into()));
        }
        Ok(GridVector { space, values })
    }

    pub fn from_vec(space: Arc<GridSpace>, values: Vec<f64>) -> Result<Self> {
        Self::new(space, DVector::from_vec(values))
    }

    pub fn zeros(space: Arc<GridSpace>) -> Self {
        let n = space.cells();
        GridVector {
            space,
            values: DVector::zeros(n),
        }
    }

    /// Unit basis vector `e_j` (not normalised in the weighted norm).
    pub fn basis(space: Arc<GridSpace>, j: usize) -> Self {
        let mut v = Self::zeros(space);
        v.values[j] = 1.0;
        v
    }

    /// Samples `f` at the cell midpoints.
    pub fn from_fn(space: Arc<GridSpace>, f: impl Fn(f64) -> f64) -> Self {
        let values = DVector::from_iterator(space.cells(), space.midpoints().into_iter().map(f));
        GridVector { space, values }
    }

    pub(crate) fn from_raw(space: Arc<GridSpace>, values: DVector<f64>) -> Self {
        debug_assert_eq!(values.len(), space.cells());
        GridVector { space, values }
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        &self.space
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σ_j w_j |f_j|`.
    pub fn l1_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.space.weights())
            .map(|(v, w)| w * v.abs())
            .sum()
    }

    pub fn positive_part(&self) -> GridVector {
        self.map(|v| v.max(0.0))
    }

    pub fn negative_part(&self) -> GridVector {
        self.map(|v| (-v).max(0.0))
    }

    /// Entrywise absolute value `|f|`.
    pub fn abs(&self) -> GridVector {
        self.map(f64::abs)
    }

    /// Cone membership: `min_j f_j ≥ −tol`.
    pub fn is_positive(&self, tol: f64) -> bool {
        self.values.iter().all(|&v| v >= -tol)
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridVector {
        GridVector {
            space: Arc::clone(&self.space),
            values: self.values.map(f),
        }
    }
}

impl Add for &GridVector {
    type Output = GridVector;
    fn add(self, rhs: &GridVector) -> GridVector {
        assert_eq!(self.len(), rhs.len(), "grid vectors live on different grids");
        GridVector::from_raw(Arc::clone(&self.space), &self.values + &rhs.values)
    }
}

impl Sub for &GridVector {
    type Output = GridVector;
    fn sub(self, rhs: &GridVector) -> GridVector {
        assert_eq!(self.len(), rhs.len(), "grid vectors live on different grids");
        GridVector::from_raw(Arc::clone(&self.space), &self.values - &rhs.values)
    }
}

impl Mul<f64> for &GridVector {
    type Output = GridVector;
    fn mul(self, rhs: f64) -> GridVector {
        GridVector::from_raw(Arc::clone(&self.space), &self.values * rhs)
    }
}
