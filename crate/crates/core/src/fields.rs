//! Piecewise-constant fields on the primal and dual meshes.

use crate::error::{Error, Result};
use crate::mesh::{GridShape, Mesh};

/// One value per primal cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellScalar {
    shape: GridShape,
    values: Vec<f64>,
}

impl CellScalar {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.cells() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {}x{} grid",
                values.len(),
                shape.nx,
                shape.ny
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: GridShape) -> Self {
        Self::constant(shape, 0.0)
    }

    pub fn constant(shape: GridShape, value: f64) -> Self {
        Self {
            shape,
            values: vec![value; shape.cells()],
        }
    }

    pub fn from_fn(shape: GridShape, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape,
            values: (0..shape.cells()).map(f).collect(),
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        check_shape(mesh.shape(), self.shape)
    }
}

impl std::ops::Index<usize> for CellScalar {
    type Output = f64;
    fn index(&self, c: usize) -> &f64 {
        &self.values[c]
    }
}

impl std::ops::IndexMut<usize> for CellScalar {
    fn index_mut(&mut self, c: usize) -> &mut f64 {
        &mut self.values[c]
    }
}

/// One 2-vector per primal cell, stored by component.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVector {
    x: CellScalar,
    y: CellScalar,
}

impl CellVector {
    pub fn from_components(x: CellScalar, y: CellScalar) -> Result<Self> {
        check_shape(x.shape, y.shape)?;
        Ok(Self { x, y })
    }

    pub fn zeros(shape: GridShape) -> Self {
        Self::constant(shape, [0.0, 0.0])
    }

    pub fn constant(shape: GridShape, value: [f64; 2]) -> Self {
        Self {
            x: CellScalar::constant(shape, value[0]),
            y: CellScalar::constant(shape, value[1]),
        }
    }

    pub fn shape(&self) -> GridShape {
        self.x.shape
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &CellScalar {
        &self.x
    }

    pub fn y(&self) -> &CellScalar {
        &self.y
    }

    pub fn x_mut(&mut self) -> &mut CellScalar {
        &mut self.x
    }

    pub fn y_mut(&mut self) -> &mut CellScalar {
        &mut self.y
    }

    pub fn component(&self, axis: usize) -> &CellScalar {
        match axis {
            0 => &self.x,
            _ => &self.y,
        }
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut CellScalar {
        match axis {
            0 => &mut self.x,
            _ => &mut self.y,
        }
    }

    pub fn into_components(self) -> (CellScalar, CellScalar) {
        (self.x, self.y)
    }

    pub fn get(&self, c: usize) -> [f64; 2] {
        [self.x.values[c], self.y.values[c]]
    }

    pub fn set(&mut self, c: usize, v: [f64; 2]) {
        self.x.values[c] = v[0];
        self.y.values[c] = v[1];
    }

    pub fn norms(&self) -> CellScalar {
        self.x.zip_map(&self.y, f64::hypot)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            x: self.x.scaled(a),
            y: self.y.scaled(a),
        }
    }

    /// Componentwise `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        Self {
            x: self.x.zip_map(&other.x, |a, b| a - b),
            y: self.y.zip_map(&other.y, |a, b| a - b),
        }
    }

    /// Each component multiplied by the scalar field `s`.
    pub fn mul_scalar(&self, s: &CellScalar) -> Self {
        Self {
            x: self.x.zip_map(s, |a, b| a * b),
            y: self.y.zip_map(s, |a, b| a * b),
        }
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        check_shape(mesh.shape(), self.shape())
    }
}

/// One value per dual cell `D_sigma`, indexed like the mesh edges.
#[derive(Debug, Clone, PartialEq)]
pub struct DualScalar {
    pub values: Vec<f64>,
}

/// One 2-vector per dual cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub values: Vec<[f64; 2]>,
}

pub(crate) fn check_shape(expected: GridShape, found: GridShape) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch {
            expected: expected.as_tuple(),
            found: found.as_tuple(),
        });
    }
    Ok(())
}
