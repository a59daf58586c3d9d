//! Space-time mesh with the interface pinned to a node, discrete norms and masks.
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::{Geometry, Side};

/// Largest factor by which `n_plus` may grow while searching for a mesh that
/// places `d` on a node.
const SNAP_GROWTH: usize = 4;
const SNAP_TOL: f64 = 1e-9;

/// Record of how the control edge `d` was placed on the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSnap {
    pub requested_d: f64,
    pub actual_d: f64,
    pub requested_n_plus: usize,
    pub actual_n_plus: usize,
}

impl ControlSnap {
    /// True when `d` had to move to a different position.
    pub fn moved(&self) -> bool {
        self.requested_d != self.actual_d
    }

    pub fn refined(&self) -> bool {
        self.requested_n_plus != self.actual_n_plus
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// `Q₊ = (0,T) × (0,b)`
    Plus,
    /// `Q₋ = (0,T) × (a,0)`
    Minus,
    /// `Q = (0,T) × (a,b)`
    Whole,
    /// `Q_ω = (0,T) × (d,b)`
    Control,
    /// The line `x₁ = 0`.
    InterfaceLine,
    /// `{x₀ = x_{0,k}} × Ω`
    TimeSlice(usize),
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub geometry: Geometry,
    pub x_nodes: Vec<f64>,
    /// Cells in `(a,0)`.
    pub n_minus: usize,
    /// Cells in `(0,b)`.
    pub n_plus: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub dx_minus: f64,
    pub dx_plus: f64,
    pub interface_index: usize,
    /// Node index of `x₁ = d`.
    pub control_index: usize,
    pub control_mask: Vec<bool>,
    /// Trapezoidal weights on `[a,b]`.
    pub quadrature: Vec<f64>,
    pub quadrature_plus: Vec<f64>,
    pub quadrature_minus: Vec<f64>,
    pub quadrature_control: Vec<f64>,
    pub snap: ControlSnap,
}

impl Grid {
    pub fn new(geometry: Geometry, n_minus: usize, n_plus: usize, n_steps: usize) -> Result<Self> {
        if n_minus < 4 || n_plus < 4 || n_steps < 4 {
            return Err(Error::InvalidGrid(format!(
                "counts must be at least 4 (n_minus = {n_minus}, n_plus = {n_plus}, n_steps = {n_steps})"
            )));
        }
        let Geometry { a, b, d, t_final } = geometry;
        let on_node = |n: usize| {
            let m = d * n as f64 / b;
            let r = m.round();
            ((m - r).abs() <= SNAP_TOL * m.max(1.0) && r >= 1.0 && (r as usize) < n).then_some(r as usize)
        };
        let found = (n_plus..=n_plus * SNAP_GROWTH).find_map(|n| on_node(n).map(|m| (n, m)));
        let (actual_n_plus, control_cells, actual_d) = match found {
            Some((n, m)) => (n, m, d),
            None => {
                let m = ((d * n_plus as f64 / b).round() as usize).clamp(1, n_plus - 1);
                (n_plus, m, b * m as f64 / n_plus as f64)
            }
        };
        let dx_minus = -a / n_minus as f64;
        let dx_plus = b / actual_n_plus as f64;
        let interface_index = n_minus;
        let control_index = interface_index + control_cells;
        let n_nodes = n_minus + actual_n_plus + 1;

        let mut x_nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_minus {
            x_nodes.push(a + i as f64 * dx_minus);
        }
        x_nodes.push(0.0);
        for j in 1..actual_n_plus {
            x_nodes.push(j as f64 * dx_plus);
        }
        x_nodes.push(b);
        x_nodes[control_index] = actual_d;

        let control_mask: Vec<bool> = (0..n_nodes).map(|i| i >= control_index).collect();
        let mut quadrature_minus = vec![0.0; n_nodes];
        let mut quadrature_plus = vec![0.0; n_nodes];
        let mut quadrature_control = vec![0.0; n_nodes];
        for i in 0..=interface_index {
            let end = i == 0 || i == interface_index;
            quadrature_minus[i] = if end { 0.5 * dx_minus } else { dx_minus };
        }
        for i in interface_index..n_nodes {
            let end = i == interface_index || i == n_nodes - 1;
            quadrature_plus[i] = if end { 0.5 * dx_plus } else { dx_plus };
        }
        for i in control_index..n_nodes {
            let end = i == control_index || i == n_nodes - 1;
            quadrature_control[i] = if end { 0.5 * dx_plus } else { dx_plus };
        }
        let quadrature = quadrature_minus.iter().zip(&quadrature_plus).map(|(m, p)| m + p).collect();

        Ok(Grid {
            geometry: Geometry { d: actual_d, ..geometry },
            x_nodes,
            n_minus,
            n_plus: actual_n_plus,
            n_steps,
            dt: t_final / n_steps as f64,
            dx_minus,
            dx_plus,
            interface_index,
            control_index,
            control_mask,
            quadrature,
            quadrature_plus,
            quadrature_minus,
            quadrature_control,
            snap: ControlSnap { requested_d: d, actual_d, requested_n_plus: n_plus, actual_n_plus },
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn n_levels(&self) -> usize {
        self.n_steps + 1
    }

    /// `x_{0,k} = kT/N`, exact at `k = N`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.geometry.t_final
        } else {
            k as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_levels()).map(|k| self.time(k)).collect()
    }

    /// Trapezoidal weight of time level `k`.
    pub fn time_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    pub fn side_of(&self, i: usize) -> Side {
        if i > self.interface_index {
            Side::Plus
        } else {
            Side::Minus
        }
    }

    pub fn spacing(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.dx_plus,
            Side::Minus => self.dx_minus,
        }
    }

    pub fn spatial_weights(&self, region: Region) -> &[f64] {
        match region {
            Region::Plus => &self.quadrature_plus,
            Region::Minus => &self.quadrature_minus,
            Region::Control => &self.quadrature_control,
            _ => &self.quadrature,
        }
    }

    /// Node index range belonging to one closed side.
    pub fn side_range(&self, side: Side) -> core::ops::RangeInclusive<usize> {
        match side {
            Side::Plus => self.interface_index..=self.n_nodes() - 1,
            Side::Minus => 0..=self.interface_index,
        }
    }

    /// Second-order one-sided derivatives `(∂₁z⁺, ∂₁z⁻)` at the interface.
    pub fn interface_derivatives(&self, row: &[f64]) -> (f64, f64) {
        let i = self.interface_index;
        let plus = (-3.0 * row[i] + 4.0 * row[i + 1] - row[i + 2]) / (2.0 * self.dx_plus);
        let minus = (3.0 * row[i] - 4.0 * row[i - 1] + row[i - 2]) / (2.0 * self.dx_minus);
        (plus, minus)
    }

    /// Second-order first derivative on one closed side; zero elsewhere.
    pub fn side_first_derivative(&self, row: &[f64], side: Side) -> Vec<f64> {
        let mut out = vec![0.0; row.len()];
        let h = self.spacing(side);
        let range = self.side_range(side);
        let (lo, hi) = (*range.start(), *range.end());
        out[lo] = (-3.0 * row[lo] + 4.0 * row[lo + 1] - row[lo + 2]) / (2.0 * h);
        out[hi] = (3.0 * row[hi] - 4.0 * row[hi - 1] + row[hi - 2]) / (2.0 * h);
        for i in lo + 1..hi {
            out[i] = (row[i + 1] - row[i - 1]) / (2.0 * h);
        }
        out
    }

    /// Second derivative on one closed side; end nodes copy their neighbour.
    pub fn side_second_derivative(&self, row: &[f64], side: Side) -> Vec<f64> {
        let mut out = vec![0.0; row.len()];
        let h2 = self.spacing(side).powi(2);
        let range = self.side_range(side);
        let (lo, hi) = (*range.start(), *range.end());
        for i in lo + 1..hi {
            out[i] = (row[i + 1] - 2.0 * row[i] + row[i - 1]) / h2;
        }
        out[lo] = out[lo + 1];
        out[hi] = out[hi - 1];
        out
    }

    fn check(&self, field: &SpaceTimeField, what: &str) -> Result<()> {
        if field.n_nodes != self.n_nodes() || field.interface_index != self.interface_index {
            return Err(Error::ShapeMismatch(format!(
                "{what}: field has {} nodes (interface {}), grid has {} (interface {})",
                field.n_nodes,
                field.interface_index,
                self.n_nodes(),
                self.interface_index
            )));
        }
        Ok(())
    }

    /// Trapezoidal `(∫ weight·field²)^{1/2}` over `region`.
    pub fn discrete_norm(
        &self,
        field: &SpaceTimeField,
        weight: Option<&SpaceTimeField>,
        region: Region,
    ) -> Result<f64> {
        Ok(self.discrete_sq_norm(field, weight, region)?.sqrt())
    }

    pub fn discrete_sq_norm(
        &self,
        field: &SpaceTimeField,
        weight: Option<&SpaceTimeField>,
        region: Region,
    ) -> Result<f64> {
        self.check(field, "field")?;
        if let Some(w) = weight {
            self.check(w, "weight")?;
            if w.n_levels != field.n_levels {
                return Err(Error::ShapeMismatch(format!(
                    "weight has {} levels, field has {}",
                    w.n_levels, field.n_levels
                )));
            }
        }
        let wt = |k: usize, i: usize| weight.map_or(1.0, |w| w.get(k, i));
        let time_weight = |k: usize| {
            if field.n_levels == self.n_levels() {
                self.time_weight(k)
            } else {
                self.dt
            }
        };
        let mut total = 0.0;
        match region {
            Region::InterfaceLine => {
                let i = self.interface_index;
                for k in 0..field.n_levels {
                    let v = field.get(k, i);
                    total += time_weight(k) * wt(k, i) * v * v;
                }
            }
            Region::TimeSlice(k) => {
                if k >= field.n_levels {
                    return Err(Error::ShapeMismatch(format!("time slice {k} outside {} levels", field.n_levels)));
                }
                for (i, q) in self.quadrature.iter().enumerate() {
                    let v = field.get(k, i);
                    total += q * wt(k, i) * v * v;
                }
            }
            _ => {
                let q = self.spatial_weights(region);
                for k in 0..field.n_levels {
                    let mut s = 0.0;
                    for (i, qi) in q.iter().enumerate() {
                        if *qi != 0.0 {
                            let v = field.get(k, i);
                            s += qi * wt(k, i) * v * v;
                        }
                    }
                    total += time_weight(k) * s;
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("discrete norm over {region:?}")));
        }
        Ok(total)
    }

    /// Spatial `L²(Ω)` norm of one row.
    pub fn row_norm(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.quadrature).map(|(v, q)| q * v * v).sum::<f64>().sqrt()
    }

    /// `H¹₀(Ω)` norm of one row: `(‖v‖² + ‖∂₁v‖²)^{1/2}` with per-side derivatives.
    pub fn row_h1_norm(&self, row: &[f64]) -> f64 {
        let mut s = self.row_norm(row).powi(2);
        for side in [Side::Minus, Side::Plus] {
            let d = self.side_first_derivative(row, side);
            let q = self.spatial_weights(match side {
                Side::Plus => Region::Plus,
                Side::Minus => Region::Minus,
            });
            s += d.iter().zip(q).map(|(v, w)| w * v * v).sum::<f64>();
        }
        s.sqrt()
    }
}

/// Scalar field indexed by `(time level, node)`; the interface node carries
/// the single shared value of both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub n_levels: usize,
    pub n_nodes: usize,
    pub values: Vec<f64>,
    pub interface_index: usize,
}

impl SpaceTimeField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::zeros_with_levels(grid, grid.n_levels())
    }

    /// Field with an arbitrary number of rows; step data use `N` rows.
    pub fn zeros_with_levels(grid: &Grid, n_levels: usize) -> Self {
        SpaceTimeField {
            n_levels,
            n_nodes: grid.n_nodes(),
            values: vec![0.0; n_levels * grid.n_nodes()],
            interface_index: grid.interface_index,
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.n_levels() {
            let t = grid.time(k);
            for (i, x) in grid.x_nodes.iter().enumerate() {
                out.set(k, i, f(t, *x));
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.n_nodes + i]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, v: f64) {
        self.values[k * self.n_nodes + i] = v;
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_nodes..(k + 1) * self.n_nodes]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_nodes..(k + 1) * self.n_nodes]
    }

    pub fn interface_trace(&self) -> Vec<f64> {
        (0..self.n_levels).map(|k| self.get(k, self.interface_index)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        crate::math::max_abs(&self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self += s·other`.
    pub fn axpy(&mut self, s: f64, other: &SpaceTimeField) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "axpy of {} values into {}",
                other.values.len(),
                self.values.len()
            )));
        }
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += s * b);
        Ok(())
    }

    /// Pointwise map of `(level, node, value)`.
    pub fn map(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for k in 0..self.n_levels {
            for i in 0..self.n_nodes {
                out.set(k, i, f(k, i, self.get(k, i)));
            }
        }
        out
    }

    /// Row-wise first derivative on one side.
    pub fn side_derivative(&self, grid: &Grid, side: Side) -> Self {
        let mut out = self.clone();
        for k in 0..self.n_levels {
            let d = grid.side_first_derivative(self.row(k), side);
            out.row_mut(k).copy_from_slice(&d);
        }
        out
    }

    pub fn side_second_derivative(&self, grid: &Grid, side: Side) -> Self {
        let mut out = self.clone();
        for k in 0..self.n_levels {
            let d = grid.side_second_derivative(self.row(k), side);
            out.row_mut(k).copy_from_slice(&d);
        }
        out
    }

    /// Backward difference in time; level 0 copies level 1.
    pub fn time_derivative(&self, dt: f64) -> Self {
        let mut out = self.clone();
        for k in 1..self.n_levels {
            for i in 0..self.n_nodes {
                out.set(k, i, (self.get(k, i) - self.get(k - 1, i)) / dt);
            }
        }
        if self.n_levels > 1 {
            let first = out.row(1).to_vec();
            out.row_mut(0).copy_from_slice(&first);
        }
        out
    }
}
