//! Cell-centred rectangular grid with exact spectral operators.
//!
//! Scalars live in the cosine basis `cos(k pi x / Lx) cos(l pi y / Ly)` (homogeneous
//! Neumann data). Velocity components use mixed bases: `u_x` in sine-x/cosine-y and
//! `u_y` in cosine-x/sine-y, so the normal trace vanishes on every wall. Grid values
//! are always the primary representation; coefficients are computed on demand with
//! DCT-II/DST-II (analysis) and DCT-III/DST-III (synthesis).
//!
//! Coefficients are stored as amplitudes: a grid field equals the pointwise sum of
//! `coeff * basis_function` at the cell centres. The layout is row-major with the y
//! mode outer and the x mode inner, matching the grid value layout.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};

/// Grids at or above this many cells transform rows in parallel.
const PARALLEL_CELLS: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisKind {
    Cos,
    Sin,
}

/// Tensor-product basis of a coefficient array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    CosCos,
    SinCos,
    CosSin,
}

impl Basis {
    fn axes(self) -> (AxisKind, AxisKind) {
        match self {
            Basis::CosCos => (AxisKind::Cos, AxisKind::Cos),
            Basis::SinCos => (AxisKind::Sin, AxisKind::Cos),
            Basis::CosSin => (AxisKind::Cos, AxisKind::Sin),
        }
    }
}

/// Spectral coefficients of a grid field in one of the three bases.
#[derive(Clone, Debug)]
pub struct SpectralCoeffs {
    pub basis: Basis,
    pub coeffs: Vec<f64>,
}

struct AxisPlan {
    n: usize,
    plan: Arc<dyn TransformType2And3<f64>>,
}

impl AxisPlan {
    fn new(planner: &mut DctPlanner<f64>, n: usize) -> Self {
        AxisPlan {
            n,
            plan: planner.plan_dct2(n),
        }
    }

    fn scratch_len(&self) -> usize {
        self.plan.get_scratch_len()
    }

    /// Grid values -> amplitudes along one line.
    fn analyse(&self, kind: AxisKind, line: &mut [f64], scratch: &mut [f64]) {
        let n = self.n as f64;
        match kind {
            AxisKind::Cos => {
                self.plan.process_dct2_with_scratch(line, scratch);
                line[0] /= n;
                for v in &mut line[1..] {
                    *v *= 2.0 / n;
                }
            }
            AxisKind::Sin => {
                self.plan.process_dst2_with_scratch(line, scratch);
                let last = line.len() - 1;
                for v in &mut line[..last] {
                    *v *= 2.0 / n;
                }
                line[last] /= n;
            }
        }
    }

    /// Amplitudes -> grid values along one line.
    fn synthesise(&self, kind: AxisKind, line: &mut [f64], scratch: &mut [f64]) {
        match kind {
            AxisKind::Cos => {
                line[0] *= 2.0;
                self.plan.process_dct3_with_scratch(line, scratch);
            }
            AxisKind::Sin => {
                let last = line.len() - 1;
                line[last] *= 2.0;
                self.plan.process_dst3_with_scratch(line, scratch);
            }
        }
    }
}

struct GridInner {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    x_plan: AxisPlan,
    y_plan: AxisPlan,
    /// Neumann eigenvalues `(k pi/Lx)^2 + (l pi/Ly)^2`, cos-cos layout.
    eigenvalues: Vec<f64>,
}

/// Uniform cell-centred grid on `[0, Lx] x [0, Ly]` with cached transform plans.
///
/// Cloning is cheap; clones share the plans.
#[derive(Clone)]
pub struct Grid2D {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid2D")
            .field("nx", &self.nx())
            .field("ny", &self.ny())
            .field("lx", &self.lx())
            .field("ly", &self.ly())
            .finish()
    }
}

impl PartialEq for Grid2D {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.nx() == other.nx()
                && self.ny() == other.ny()
                && self.lx() == other.lx()
                && self.ly() == other.ly())
    }
}

fn check_cells(key: &str, n: usize) -> Result<()> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::validation(
            key,
            format!("cell count must be a power of two >= 8 (got {n})"),
        ));
    }
    Ok(())
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        check_cells("nx", nx)?;
        check_cells("ny", ny)?;
        for (key, l) in [("lx", lx), ("ly", ly)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::validation(key, format!("domain length must be > 0 (got {l})")));
            }
        }
        let mut planner = DctPlanner::new();
        let x_plan = AxisPlan::new(&mut planner, nx);
        let y_plan = AxisPlan::new(&mut planner, ny);
        let mut eigenvalues = vec![0.0; nx * ny];
        for l in 0..ny {
            let ky = l as f64 * PI / ly;
            for k in 0..nx {
                let kx = k as f64 * PI / lx;
                eigenvalues[l * nx + k] = kx * kx + ky * ky;
            }
        }
        Ok(Grid2D {
            inner: Arc::new(GridInner {
                nx,
                ny,
                lx,
                ly,
                x_plan,
                y_plan,
                eigenvalues,
            }),
        })
    }

    pub fn nx(&self) -> usize {
        self.inner.nx
    }
    pub fn ny(&self) -> usize {
        self.inner.ny
    }
    pub fn lx(&self) -> f64 {
        self.inner.lx
    }
    pub fn ly(&self) -> f64 {
        self.inner.ly
    }
    pub fn hx(&self) -> f64 {
        self.inner.lx / self.inner.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.inner.ly / self.inner.ny as f64
    }
    pub fn len(&self) -> usize {
        self.inner.nx * self.inner.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn area(&self) -> f64 {
        self.inner.lx * self.inner.ly
    }
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx()
    }
    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy()
    }

    /// Neumann eigenvalue of cosine mode `(k, l)`.
    pub fn eigenvalue(&self, k: usize, l: usize) -> f64 {
        self.inner.eigenvalues[l * self.nx() + k]
    }

    pub(crate) fn eigenvalues(&self) -> &[f64] {
        &self.inner.eigenvalues
    }

    /// Midpoint-quadrature weight of `|basis function|^2` for cosine mode `(k, l)`.
    pub fn mode_weight(&self, k: usize, l: usize) -> f64 {
        let cx = if k == 0 { 1.0 } else { 0.5 };
        let cy = if l == 0 { 1.0 } else { 0.5 };
        self.area() * cx * cy
    }

    fn transform(&self, data: &mut [f64], basis: Basis, forward: bool) {
        let (nx, ny) = (self.nx(), self.ny());
        assert_eq!(data.len(), nx * ny, "field length does not match grid");
        let (kx, ky) = basis.axes();
        let xp = &self.inner.x_plan;
        let yp = &self.inner.y_plan;

        let row_op = |row: &mut [f64], scratch: &mut [f64]| {
            if forward {
                xp.analyse(kx, row, scratch)
            } else {
                xp.synthesise(kx, row, scratch)
            }
        };
        if nx * ny >= PARALLEL_CELLS {
            data.par_chunks_mut(nx).for_each_init(
                || vec![0.0; xp.scratch_len()],
                |scratch, row| row_op(row, scratch),
            );
        } else {
            let mut scratch = vec![0.0; xp.scratch_len()];
            for row in data.chunks_mut(nx) {
                row_op(row, &mut scratch);
            }
        }

        let mut column = vec![0.0; ny];
        let mut scratch = vec![0.0; yp.scratch_len()];
        for i in 0..nx {
            for j in 0..ny {
                column[j] = data[j * nx + i];
            }
            if forward {
                yp.analyse(ky, &mut column, &mut scratch);
            } else {
                yp.synthesise(ky, &mut column, &mut scratch);
            }
            for j in 0..ny {
                data[j * nx + i] = column[j];
            }
        }
    }

    /// Grid values to amplitudes in `basis`.
    pub fn forward(&self, values: &[f64], basis: Basis) -> SpectralCoeffs {
        let mut coeffs = values.to_vec();
        self.transform(&mut coeffs, basis, true);
        SpectralCoeffs { basis, coeffs }
    }

    /// Amplitudes back to grid values.
    pub fn inverse(&self, spec: &SpectralCoeffs) -> Vec<f64> {
        let mut values = spec.coeffs.clone();
        self.transform(&mut values, spec.basis, false);
        values
    }

    pub(crate) fn forward_in_place(&self, data: &mut [f64], basis: Basis) {
        self.transform(data, basis, true);
    }

    pub(crate) fn inverse_in_place(&self, data: &mut [f64], basis: Basis) {
        self.transform(data, basis, false);
    }

    /// x-derivative of cos-cos coefficients, as sin-cos coefficients.
    fn d_dx_cos(&self, a: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut out = vec![0.0; nx * ny];
        for l in 0..ny {
            for s in 0..nx - 1 {
                let k = s + 1;
                out[l * nx + s] = -(k as f64 * PI / self.lx()) * a[l * nx + k];
            }
        }
        out
    }

    /// y-derivative of cos-cos coefficients, as cos-sin coefficients.
    fn d_dy_cos(&self, a: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut out = vec![0.0; nx * ny];
        for s in 0..ny - 1 {
            let l = s + 1;
            let factor = -(l as f64 * PI / self.ly());
            for k in 0..nx {
                out[s * nx + k] = factor * a[l * nx + k];
            }
        }
        out
    }

    /// Divergence of (sin-cos, cos-sin) coefficients, as cos-cos coefficients.
    /// The Nyquist sine modes map onto cosine modes that vanish at cell centres.
    fn div_coeffs(&self, bx: &[f64], by: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut out = vec![0.0; nx * ny];
        for l in 0..ny {
            for k in 0..nx {
                let mut d = 0.0;
                if k >= 1 {
                    d += (k as f64 * PI / self.lx()) * bx[l * nx + k - 1];
                }
                if l >= 1 {
                    d += (l as f64 * PI / self.ly()) * by[(l - 1) * nx + k];
                }
                out[l * nx + k] = d;
            }
        }
        out
    }

    pub fn same_as(&self, other: &Grid2D) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Scalar grid function (phase field, surfactant, potentials, pressure).
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl ScalarField {
    pub fn new(grid: &Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation("field", format!("non-finite entry {v}")));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_vec(grid: &Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid2D, value: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f(x, y)` at the cell centres.
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            let y = grid.y_center(j);
            for i in 0..grid.nx() {
                values.push(f(grid.x_center(i), y));
            }
        }
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
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
        Self::from_vec(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid == other.grid);
        Self::from_vec(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    /// Midpoint integral `hx hy sum f`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_area() * compensated_sum(&self.values)
    }

    /// Mean value over the domain (the arithmetic mean of the cell values).
    pub fn mean(&self) -> f64 {
        compensated_sum(&self.values) / self.values.len() as f64
    }

    /// Copy with zero mean.
    pub fn zero_mean(&self) -> Self {
        let m = self.mean();
        self.add_scalar(-m)
    }

    /// Midpoint L2 inner product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert!(self.grid == other.grid);
        self.grid.cell_area()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn cos_coeffs(&self) -> SpectralCoeffs {
        self.grid.forward(&self.values, Basis::CosCos)
    }

    pub fn from_cos_coeffs(grid: &Grid2D, coeffs: Vec<f64>) -> Self {
        let mut values = coeffs;
        grid.inverse_in_place(&mut values, Basis::CosCos);
        Self::from_vec(grid, values)
    }

    /// Spectral gradient; components in sin-cos and cos-sin bases, returned on the grid.
    pub fn gradient(&self) -> VectorField {
        let a = self.cos_coeffs().coeffs;
        let mut gx = self.grid.d_dx_cos(&a);
        let mut gy = self.grid.d_dy_cos(&a);
        self.grid.inverse_in_place(&mut gx, Basis::SinCos);
        self.grid.inverse_in_place(&mut gy, Basis::CosSin);
        VectorField {
            x: ScalarField::from_vec(&self.grid, gx),
            y: ScalarField::from_vec(&self.grid, gy),
        }
    }

    /// The Neumann operator `A_N f = -Laplace f`.
    pub fn neumann_laplacian(&self) -> ScalarField {
        let mut a = self.cos_coeffs().coeffs;
        for (c, lam) in a.iter_mut().zip(self.grid.eigenvalues()) {
            *c *= lam;
        }
        Self::from_cos_coeffs(&self.grid, a)
    }

    fn check_zero_mean(&self) -> Result<()> {
        let mean = self.mean();
        let allowed = 1e-10 * (1.0 + self.max_abs());
        if mean.abs() > allowed {
            return Err(Error::MeanNotZero { mean, allowed });
        }
        Ok(())
    }

    /// `N f`: the zero-mean solution of `A_N g = f - mean(f)`.
    ///
    /// The input must already have (numerically) zero mean.
    pub fn inverse_neumann_laplacian(&self) -> Result<ScalarField> {
        self.check_zero_mean()?;
        Ok(self.inverse_neumann_laplacian_unchecked())
    }

    pub(crate) fn inverse_neumann_laplacian_unchecked(&self) -> ScalarField {
        let mut a = self.cos_coeffs().coeffs;
        apply_inverse_eigenvalues(&mut a, self.grid.eigenvalues());
        Self::from_cos_coeffs(&self.grid, a)
    }

    /// `||grad N f||^2 = <f, N f>` for zero-mean `f`.
    pub fn hminus1_norm_sq(&self) -> Result<f64> {
        self.check_zero_mean()?;
        Ok(self.hminus1_norm_sq_unchecked())
    }

    pub(crate) fn hminus1_norm_sq_unchecked(&self) -> f64 {
        let a = self.cos_coeffs().coeffs;
        let nx = self.grid.nx();
        let mut total = 0.0;
        for l in 0..self.grid.ny() {
            for k in 0..nx {
                if k == 0 && l == 0 {
                    continue;
                }
                let c = a[l * nx + k];
                total += c * c * self.grid.mode_weight(k, l) / self.grid.eigenvalue(k, l);
            }
        }
        total
    }

    /// Zeroes cosine modes at or above two thirds of the resolution in either direction.
    pub fn two_thirds_filtered(&self) -> ScalarField {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let (kc, lc) = (2 * nx / 3, 2 * ny / 3);
        let mut a = self.cos_coeffs().coeffs;
        for l in 0..ny {
            for k in 0..nx {
                if k >= kc || l >= lc {
                    a[l * nx + k] = 0.0;
                }
            }
        }
        Self::from_cos_coeffs(&self.grid, a)
    }
}

/// Neumaier-compensated summation.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn apply_inverse_eigenvalues(a: &mut [f64], eigenvalues: &[f64]) {
    a[0] = 0.0;
    for (c, lam) in a.iter_mut().zip(eigenvalues).skip(1) {
        *c /= lam;
    }
}

/// Collocated vector field; `x` is read in the sin-cos basis, `y` in cos-sin.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        x.grid().same_as(y.grid())?;
        Ok(VectorField { x, y })
    }

    pub fn zeros(grid: &Grid2D) -> Self {
        VectorField {
            x: ScalarField::zeros(grid),
            y: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        self.x.grid()
    }

    pub fn scale(&self, c: f64) -> Self {
        VectorField {
            x: self.x.scale(c),
            y: self.y.scale(c),
        }
    }

    pub fn add(&self, other: &VectorField) -> Self {
        VectorField {
            x: self.x.add(&other.x),
            y: self.y.add(&other.y),
        }
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        VectorField {
            x: self.x.sub(&other.x),
            y: self.y.sub(&other.y),
        }
    }

    /// Pointwise product with a scalar field.
    pub fn mul_scalar_field(&self, s: &ScalarField) -> Self {
        VectorField {
            x: self.x.zip_map(s, |a, b| a * b),
            y: self.y.zip_map(s, |a, b| a * b),
        }
    }

    /// Pointwise `v . w`.
    pub fn pointwise_dot(&self, other: &VectorField) -> ScalarField {
        let xs = self.x.values();
        let ys = self.y.values();
        let values = xs
            .iter()
            .zip(ys)
            .zip(other.x.values().iter().zip(other.y.values()))
            .map(|((a, b), (c, d))| a * c + b * d)
            .collect();
        ScalarField::from_vec(self.grid(), values)
    }

    /// Pointwise `|v|`.
    pub fn magnitude(&self) -> ScalarField {
        self.x.zip_map(&self.y, |a, b| a.hypot(b))
    }

    /// Midpoint L2 inner product.
    pub fn dot(&self, other: &VectorField) -> f64 {
        self.x.dot(&other.x) + self.y.dot(&other.y)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.x.max_abs().max(self.y.max_abs())
    }

    /// Spectral divergence, in the cos-cos basis.
    pub fn divergence(&self) -> ScalarField {
        let grid = self.grid();
        let bx = grid.forward(self.x.values(), Basis::SinCos).coeffs;
        let by = grid.forward(self.y.values(), Basis::CosSin).coeffs;
        ScalarField::from_cos_coeffs(grid, grid.div_coeffs(&bx, &by))
    }

    /// Component along the highest sine mode of each component (`x` in x, `y` in y).
    /// It lies in the kernel of the discrete divergence and is orthogonal to every gradient.
    pub fn nyquist_part(&self) -> VectorField {
        let grid = self.grid();
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut bx = grid.forward(self.x.values(), Basis::SinCos).coeffs;
        let mut by = grid.forward(self.y.values(), Basis::CosSin).coeffs;
        for (i, c) in bx.iter_mut().enumerate() {
            if i % nx != nx - 1 {
                *c = 0.0;
            }
        }
        by[..(ny - 1) * nx].iter_mut().for_each(|c| *c = 0.0);
        grid.inverse_in_place(&mut bx, Basis::SinCos);
        grid.inverse_in_place(&mut by, Basis::CosSin);
        VectorField {
            x: ScalarField::from_vec(grid, bx),
            y: ScalarField::from_vec(grid, by),
        }
    }

    /// Helmholtz projection `v = u + grad p` with `div u = 0`, zero normal trace and
    /// `mean(p) = 0`.
    pub fn helmholtz_project(&self) -> (VectorField, ScalarField) {
        let grid = self.grid();
        let mut bx = grid.forward(self.x.values(), Basis::SinCos).coeffs;
        let mut by = grid.forward(self.y.values(), Basis::CosSin).coeffs;
        let mut p = grid.div_coeffs(&bx, &by);
        // Laplace p = div v  <=>  A_N p = -div v
        apply_inverse_eigenvalues(&mut p, grid.eigenvalues());
        for c in &mut p {
            *c = -*c;
        }
        let gx = grid.d_dx_cos(&p);
        let gy = grid.d_dy_cos(&p);
        for (b, g) in bx.iter_mut().zip(&gx) {
            *b -= g;
        }
        for (b, g) in by.iter_mut().zip(&gy) {
            *b -= g;
        }
        grid.inverse_in_place(&mut bx, Basis::SinCos);
        grid.inverse_in_place(&mut by, Basis::CosSin);
        grid.inverse_in_place(&mut p, Basis::CosCos);
        (
            VectorField {
                x: ScalarField::from_vec(grid, bx),
                y: ScalarField::from_vec(grid, by),
            },
            ScalarField::from_vec(grid, p),
        )
    }
}
