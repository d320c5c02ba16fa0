//! Regular Cartesian grids, multilinear interpolation, and node-indexed fields.
//!
//! Nodes are ordered with the first coordinate varying fastest.

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 4;
pub const DEFAULT_NODE_CAP: usize = 20_000_000;

const MAX_CORNERS: usize = 1 << MAX_DIM;

/// Offsets this close to a node (in cell units) are snapped onto it, so that
/// node queries reproduce stored values exactly.
const SNAP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl RegularGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        Self::with_cap(lower, upper, nodes, DEFAULT_NODE_CAP)
    }

    pub fn with_cap(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>, cap: usize) -> Result<Self> {
        let d = lower.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::invalid(format!(
                "grid dimension must be between 1 and {MAX_DIM} (got {d})"
            )));
        }
        Error::check_len("grid upper bounds", d, upper.len())?;
        Error::check_len("grid node counts", d, nodes.len())?;
        for k in 0..d {
            if !(lower[k].is_finite() && upper[k].is_finite() && lower[k] < upper[k]) {
                return Err(Error::invalid(format!(
                    "axis {k}: need finite lower < upper (got [{}, {}])",
                    lower[k], upper[k]
                )));
            }
            if nodes[k] < 2 {
                return Err(Error::invalid(format!(
                    "axis {k}: need at least 2 nodes (got {})",
                    nodes[k]
                )));
            }
        }
        let total = nodes.iter().try_fold(1usize, |acc, n| acc.checked_mul(*n));
        let len = match total {
            Some(len) if len <= cap => len,
            _ => {
                return Err(Error::Capacity {
                    what: "grid nodes",
                    requested: nodes.iter().map(|n| *n as f64).product(),
                    cap: cap as f64,
                    hint: None,
                })
            }
        };
        let spacing = (0..d)
            .map(|k| (upper[k] - lower[k]) / (nodes[k] - 1) as f64)
            .collect();
        let mut strides = vec![1usize; d];
        for k in 1..d {
            strides[k] = strides[k - 1] * nodes[k - 1];
        }
        Ok(Self {
            lower,
            upper,
            nodes,
            spacing,
            strides,
            len,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn nodes_per_dim(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    /// Coordinate of node `i` along axis `k`; the end nodes hit the bounds exactly.
    #[inline]
    pub fn axis_coord(&self, k: usize, i: usize) -> f64 {
        let n = self.nodes[k] - 1;
        if i == n {
            self.upper[k]
        } else {
            let s = i as f64 / n as f64;
            self.lower[k] * (1.0 - s) + self.upper[k] * s
        }
    }

    pub fn multi_index(&self, mut linear: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .map(|n| {
                let i = linear % n;
                linear /= n;
                i
            })
            .collect()
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node_coords(&self, linear: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_coords_into(linear, &mut out);
        out
    }

    pub fn node_coords_into(&self, mut linear: usize, out: &mut [f64]) {
        for k in 0..self.dim() {
            let i = linear % self.nodes[k];
            linear /= self.nodes[k];
            out[k] = self.axis_coord(k, i);
        }
    }

    /// Nodes in storage order as `(linear index, coordinates)`.
    pub fn node_iter(&self) -> impl Iterator<Item = (usize, Vec<f64>)> + '_ {
        (0..self.len).map(move |i| (i, self.node_coords(i)))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Clamps `x` componentwise into the domain, in place.
    #[inline]
    pub fn project_into(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Corner indices and multilinear weights for a (clamped) query point.
    pub fn stencil(&self, x: &[f64]) -> Stencil {
        let d = self.dim();
        let mut base = 0usize;
        let mut frac = [0.0f64; MAX_DIM];
        for k in 0..d {
            let xk = x[k].clamp(self.lower[k], self.upper[k]);
            let mut t = (xk - self.lower[k]) / self.spacing[k];
            let r = t.round();
            if (t - r).abs() < SNAP {
                t = r;
            }
            let cell = (t.floor() as usize).min(self.nodes[k] - 2);
            frac[k] = (t - cell as f64).clamp(0.0, 1.0);
            base += cell * self.strides[k];
        }
        let count = 1usize << d;
        let mut st = Stencil {
            corners: [0; MAX_CORNERS],
            weights: [0.0; MAX_CORNERS],
            count,
        };
        for mask in 0..count {
            let mut idx = base;
            let mut w = 1.0;
            for k in 0..d {
                if mask >> k & 1 == 1 {
                    idx += self.strides[k];
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            st.corners[mask] = idx;
            st.weights[mask] = w;
        }
        st
    }
}

/// Componentwise clamp of `x` into the grid's domain.
pub fn project_to_domain(x: &[f64], grid: &RegularGrid) -> Vec<f64> {
    let mut out = x.to_vec();
    grid.project_into(&mut out);
    out
}

/// Multilinear interpolation weights over the `2^d` corners of one cell.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub corners: [usize; MAX_CORNERS],
    pub weights: [f64; MAX_CORNERS],
    pub count: usize,
}

impl Stencil {
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.count {
            let w = self.weights[j];
            if w != 0.0 {
                acc += w * values[self.corners[j]];
            }
        }
        acc
    }

    /// Total weight placed on node `node`.
    pub fn weight_on(&self, node: usize) -> f64 {
        (0..self.count)
            .filter(|&j| self.corners[j] == node)
            .map(|j| self.weights[j])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarField {
    grid: RegularGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: RegularGrid, values: Vec<f64>) -> Result<Self> {
        Error::check_len("scalar field values", grid.len(), values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "scalar field value".into(),
                state: grid.node_coords(i),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: RegularGrid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: RegularGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = grid.node_iter().map(|(_, x)| f(&x)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interpolate(&self, x: &[f64]) -> f64 {
        interpolate(self, x)
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Multilinear interpolation of `field` at `x`, clamping `x` into the domain.
pub fn interpolate(field: &ScalarField, x: &[f64]) -> f64 {
    field.grid.stencil(x).apply(&field.values)
}

/// One `m`-vector per node, stored contiguously.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorField {
    grid: RegularGrid,
    dim: usize,
    data: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: RegularGrid, dim: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_len("vector field data", grid.len() * dim, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "vector field value".into(),
                state: grid.node_coords(i / dim.max(1)),
            });
        }
        Ok(Self { grid, dim, data })
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, node: usize) -> &[f64] {
        &self.data[node * self.dim..(node + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}
