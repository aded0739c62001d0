//! Uniform tensor grids with Neumann boundaries.
//!
//! Cell-centered finite differences; all boundary conditions are realized
//! through zero face fluxes (mirrored ghost cells), so the Laplacian and the
//! drift divergence conserve cell sums exactly. Grids are stored as 3D with
//! trailing axes of length 1, which lets 1D/2D/3D share one code path.

use crate::error::{Error, Result};

/// Drift face-value selection for `drift_divergence`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftScheme {
    /// Arithmetic mean of the two adjacent cells (second order).
    Central,
    /// Donor cell selected by the sign of the face gradient of v
    /// (first order, positivity preserving under the CFL bound).
    Upwind,
}

/// Axis-aligned control region, in physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlBox {
    All,
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

/// Uniform cell-centered tensor grid on a box, with a control-region mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    h: [f64; 3],
    control_mask: Vec<bool>,
}

/// Scalar cell values at one time node.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

/// One scalar per interior face, stored per axis.
///
/// `axis[a][c]` is the face between cell `c` and its +a neighbour; entries
/// whose cell has no +a neighbour are unused and stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub axis: Vec<Vec<f64>>,
}

/// Uniform partition of `[0, horizon]` into `steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

/// Fields at the nodes `t_0 .. t_N` of a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub fields: Vec<Field>,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "time grid needs horizon > 0 and steps >= 1, got T = {horizon}, N = {steps}"
            )));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node time t_n.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }
}

/// Build a grid from physical lengths and cell counts.
///
/// `spacing h_i = length_i / n_i`; the mask is true exactly for cells whose
/// centers lie inside `control_box` (inclusive bounds).
pub fn build_grid(
    dim: usize,
    lengths: &[f64],
    cells_per_axis: &[usize],
    control_box: &ControlBox,
) -> Result<Grid> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidParameter(format!("dim must be 1, 2 or 3, got {dim}")));
    }
    if lengths.len() != dim || cells_per_axis.len() != dim {
        return Err(Error::InvalidParameter(format!(
            "expected {dim} lengths and cell counts, got {} and {}",
            lengths.len(),
            cells_per_axis.len()
        )));
    }
    let mut n = [1usize; 3];
    let mut h = [1.0f64; 3];
    for a in 0..dim {
        if cells_per_axis[a] < 3 {
            return Err(Error::InvalidParameter(format!(
                "axis {a} has {} cells; at least 3 are required",
                cells_per_axis[a]
            )));
        }
        if !(lengths[a] > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "axis {a} has nonpositive length {}",
                lengths[a]
            )));
        }
        n[a] = cells_per_axis[a];
        h[a] = lengths[a] / cells_per_axis[a] as f64;
    }
    let ncells: usize = n.iter().product();
    let mut mask = vec![false; ncells];
    match control_box {
        ControlBox::All => mask.iter_mut().for_each(|m| *m = true),
        ControlBox::Box { lo, hi } => {
            if lo.len() != dim || hi.len() != dim {
                return Err(Error::InvalidParameter(
                    "control box bounds must match the grid dimension".into(),
                ));
            }
            for (c, m) in mask.iter_mut().enumerate() {
                let x = center_of(&n, &h, c);
                *m = (0..dim).all(|a| lo[a] <= x[a] && x[a] <= hi[a]);
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::InvalidParameter(
                    "control box contains no cell centers".into(),
                ));
            }
        }
    }
    Ok(Grid { dim, n, h, control_mask: mask })
}

fn center_of(n: &[usize; 3], h: &[f64; 3], flat: usize) -> [f64; 3] {
    let i2 = flat % n[2];
    let i1 = (flat / n[2]) % n[1];
    let i0 = flat / (n[1] * n[2]);
    [
        (i0 as f64 + 0.5) * h[0],
        (i1 as f64 + 0.5) * h[1],
        (i2 as f64 + 0.5) * h[2],
    ]
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> &[usize; 3] {
        &self.n
    }

    pub fn spacing(&self) -> &[f64; 3] {
        &self.h
    }

    pub fn ncells(&self) -> usize {
        self.n.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.cell_volume() * self.ncells() as f64
    }

    pub fn control_mask(&self) -> &[bool] {
        &self.control_mask
    }

    pub fn mask_is_full(&self) -> bool {
        self.control_mask.iter().all(|&m| m)
    }

    /// Physical coordinates of a cell center (unused axes report 0.5).
    pub fn center(&self, flat: usize) -> [f64; 3] {
        center_of(&self.n, &self.h, flat)
    }

    /// Center of the face between `lower_cell` and its +axis neighbour.
    pub fn face_center(&self, axis: usize, lower_cell: usize) -> [f64; 3] {
        let mut x = self.center(lower_cell);
        x[axis] += 0.5 * self.h[axis];
        x
    }

    fn stride(&self, a: usize) -> usize {
        match a {
            0 => self.n[1] * self.n[2],
            1 => self.n[2],
            _ => 1,
        }
    }

    pub fn zero_field(&self) -> Field {
        Field { values: vec![0.0; self.ncells()] }
    }

    pub fn constant_field(&self, c: f64) -> Field {
        Field { values: vec![c; self.ncells()] }
    }

    pub fn field_from_fn(&self, f: impl Fn(&[f64; 3]) -> f64) -> Field {
        Field {
            values: (0..self.ncells()).map(|c| f(&self.center(c))).collect(),
        }
    }

    pub fn zero_faces(&self) -> FaceField {
        FaceField { axis: vec![vec![0.0; self.ncells()]; self.dim] }
    }

    /// Visit every interior face: `(axis, lower_cell, upper_cell)`.
    fn for_each_face(&self, mut body: impl FnMut(usize, usize, usize)) {
        for a in 0..self.dim {
            if self.n[a] < 2 {
                continue;
            }
            let stride = self.stride(a);
            for c in 0..self.ncells() {
                if self.axis_index(c, a) + 1 < self.n[a] {
                    body(a, c, c + stride);
                }
            }
        }
    }

    fn axis_index(&self, flat: usize, a: usize) -> usize {
        match a {
            0 => flat / (self.n[1] * self.n[2]),
            1 => (flat / self.n[2]) % self.n[1],
            _ => flat % self.n[2],
        }
    }

    fn check_len(&self, f: &Field) -> Result<()> {
        if f.values.len() != self.ncells() {
            return Err(Error::GridMismatch(format!(
                "field has {} values, grid has {} cells",
                f.values.len(),
                self.ncells()
            )));
        }
        Ok(())
    }

    /// Face gradients `(w_upper - w_lower) / h_a` of a cell field.
    pub fn face_gradients(&self, w: &Field) -> FaceField {
        let mut g = self.zero_faces();
        self.for_each_face(|a, lo, hi| {
            g.axis[a][lo] = (w.values[hi] - w.values[lo]) / self.h[a];
        });
        g
    }

    /// Divergence of a face flux: `div[c] = sum_a (F_up - F_dn) / h_a`,
    /// with zero flux on boundary faces.
    pub fn flux_divergence(&self, flux: &FaceField) -> Field {
        let mut out = self.zero_field();
        self.for_each_face(|a, lo, hi| {
            let f = flux.axis[a][lo];
            out.values[lo] += f / self.h[a];
            out.values[hi] -= f / self.h[a];
        });
        out
    }

    /// Divergence of `k_face * grad(w)`: a symmetric diffusion-like operator.
    /// `laplacian` is the special case `k = 1`.
    pub fn weighted_laplacian(&self, k: &FaceField, w: &Field) -> Field {
        let mut out = self.zero_field();
        self.for_each_face(|a, lo, hi| {
            let f = k.axis[a][lo] * (w.values[hi] - w.values[lo]) / self.h[a];
            out.values[lo] += f / self.h[a];
            out.values[hi] -= f / self.h[a];
        });
        out
    }

    /// Five/seven-point Laplacian with mirrored-ghost Neumann boundaries.
    pub fn laplacian(&self, w: &Field) -> Field {
        let mut out = self.zero_field();
        self.for_each_face(|a, lo, hi| {
            let f = (w.values[hi] - w.values[lo]) / self.h[a];
            out.values[lo] += f / self.h[a];
            out.values[hi] -= f / self.h[a];
        });
        out
    }

    /// Conservative discretization of `div(u grad v)` in face-flux form.
    ///
    /// Per face, `flux = u_face * (v_hi - v_lo)/h`; `u_face` is the central
    /// mean or the donor-cell value picked by the face gradient sign.
    /// Boundary faces carry zero flux, which realizes the no-flux condition.
    pub fn drift_divergence(&self, u: &Field, v: &Field, scheme: DriftScheme) -> Field {
        let stencil = DriftStencil::new(self, v, scheme);
        stencil.apply_to_u(self, u)
    }

    /// `integral = sum(values) * cell volume`.
    pub fn integrate(&self, w: &Field) -> f64 {
        w.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Vol-weighted inner product of two cell fields.
    pub fn inner(&self, a: &Field, b: &Field) -> f64 {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x * y)
            .sum::<f64>()
            * self.cell_volume()
    }

    /// `L^q` norm; `q = infinity` is the exact max over cells.
    pub fn lq_norm(&self, w: &Field, q: f64) -> Result<f64> {
        if q.is_infinite() {
            return Ok(w.values.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }
        if !(q >= 1.0) {
            return Err(Error::InvalidParameter(format!("lq_norm needs q >= 1, got {q}")));
        }
        let vol = self.cell_volume();
        Ok((w.values.iter().map(|x| x.abs().powf(q)).sum::<f64>() * vol).powf(1.0 / q))
    }

    /// Equivalent H^1 norm squared: face-gradient seminorm plus squared mean.
    pub fn h1_norm_sq(&self, w: &Field) -> f64 {
        let vol = self.cell_volume();
        let mut grad = 0.0;
        self.for_each_face(|a, lo, hi| {
            let g = (w.values[hi] - w.values[lo]) / self.h[a];
            grad += g * g * vol;
        });
        let mean = self.integrate(w);
        grad + mean * mean
    }

    /// `sum over faces of k * (face gradient)^2 * vol` for a cell field.
    pub fn grad_norm_sq(&self, w: &Field) -> f64 {
        let vol = self.cell_volume();
        let mut grad = 0.0;
        self.for_each_face(|a, lo, hi| {
            let g = (w.values[hi] - w.values[lo]) / self.h[a];
            grad += g * g * vol;
        });
        grad
    }

    /// Zero every entry of `w` outside the control mask.
    pub fn apply_mask(&self, w: &mut Field) {
        for (x, &m) in w.values.iter_mut().zip(&self.control_mask) {
            if !m {
                *x = 0.0;
            }
        }
    }

    pub fn assert_compatible(&self, w: &Field) -> Result<()> {
        self.check_len(w)
    }
}

/// Precomputed per-face drift weights for a fixed base field `v`.
///
/// The face flux in `div(u grad v)` is `(wl*u_lo + wr*u_hi) * g` with
/// `g = (v_hi - v_lo)/h`. Central: `wl = wr = 1/2`. Upwind: the donor cell
/// (`+g` picks the upper cell, otherwise the lower one) carries weight 1.
/// Freezing the weights makes the drift linear in `u`, which the tangent and
/// adjoint stages rely on.
#[derive(Debug, Clone)]
pub struct DriftStencil {
    /// face gradient of the base v
    pub g: FaceField,
    /// weight on the lower cell
    pub wl: FaceField,
    /// weight on the upper cell
    pub wr: FaceField,
}

impl DriftStencil {
    pub fn new(grid: &Grid, v: &Field, scheme: DriftScheme) -> Self {
        let mut g = grid.zero_faces();
        let mut wl = grid.zero_faces();
        let mut wr = grid.zero_faces();
        grid.for_each_face(|a, lo, hi| {
            let grad = (v.values[hi] - v.values[lo]) / grid.h[a];
            g.axis[a][lo] = grad;
            match scheme {
                DriftScheme::Central => {
                    wl.axis[a][lo] = 0.5;
                    wr.axis[a][lo] = 0.5;
                }
                DriftScheme::Upwind => {
                    if grad > 0.0 {
                        wr.axis[a][lo] = 1.0;
                    } else {
                        wl.axis[a][lo] = 1.0;
                    }
                }
            }
        });
        DriftStencil { g, wl, wr }
    }

    /// `u -> div((wl*u_lo + wr*u_hi) * g)`: the drift as a linear map in u.
    pub fn apply_to_u(&self, grid: &Grid, u: &Field) -> Field {
        let mut out = grid.zero_field();
        grid.for_each_face(|a, lo, hi| {
            let uf = self.wl.axis[a][lo] * u.values[lo] + self.wr.axis[a][lo] * u.values[hi];
            let f = uf * self.g.axis[a][lo];
            out.values[lo] += f / grid.h[a];
            out.values[hi] -= f / grid.h[a];
        });
        out
    }

    /// Transpose of `apply_to_u` in the vol-weighted inner product.
    pub fn apply_to_u_transpose(&self, grid: &Grid, s: &Field) -> Field {
        let mut out = grid.zero_field();
        grid.for_each_face(|a, lo, hi| {
            let pull = self.g.axis[a][lo] * (s.values[lo] - s.values[hi]) / grid.h[a];
            out.values[lo] += self.wl.axis[a][lo] * pull;
            out.values[hi] += self.wr.axis[a][lo] * pull;
        });
        out
    }

    /// Face values of a cell field under this stencil's weights
    /// (used as the diffusion coefficient `u_face` of the v-direction map).
    pub fn face_values(&self, grid: &Grid, u: &Field) -> FaceField {
        let mut k = grid.zero_faces();
        grid.for_each_face(|a, lo, hi| {
            k.axis[a][lo] =
                self.wl.axis[a][lo] * u.values[lo] + self.wr.axis[a][lo] * u.values[hi];
        });
        k
    }

    /// Per-cell donor outflow sum `sum_a (max(-g_up,0) + max(g_dn,0)) / h_a`.
    /// The upwind CFL bound is `dt * outflow <= 1`.
    pub fn outflow(&self, grid: &Grid) -> Field {
        let mut out = grid.zero_field();
        grid.for_each_face(|a, lo, hi| {
            let grad = self.g.axis[a][lo];
            // at the upper face of `lo`, flow leaves when -g > 0
            out.values[lo] += (-grad).max(0.0) / grid.h[a];
            // at the lower face of `hi`, flow leaves when g > 0
            out.values[hi] += grad.max(0.0) / grid.h[a];
        });
        out
    }
}

impl Field {
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { values: self.values.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn axpy(&mut self, alpha: f64, x: &Field) {
        for (y, &xv) in self.values.iter_mut().zip(&x.values) {
            *y += alpha * xv;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

/// Space-time norm of a node trajectory (N+1 entries): left-endpoint
/// rectangle rule over the N steps composed with `lq_norm`;
/// `s = infinity` is the exact max over all nodes.
pub fn bochner_norm(grid: &Grid, nodes: &[Field], dt: f64, s: f64, q: f64) -> Result<f64> {
    if s.is_infinite() {
        let mut m = 0.0f64;
        for f in nodes {
            m = m.max(grid.lq_norm(f, q)?);
        }
        return Ok(m);
    }
    if nodes.len() < 2 {
        return Err(Error::InvalidParameter(
            "bochner_norm needs at least two time nodes".into(),
        ));
    }
    bochner_norm_steps(grid, &nodes[..nodes.len() - 1], dt, s, q)
}

/// Space-time norm of a step-indexed series (one entry per step, all of
/// which carry quadrature weight `dt`).
pub fn bochner_norm_steps(grid: &Grid, steps: &[Field], dt: f64, s: f64, q: f64) -> Result<f64> {
    if s.is_infinite() {
        let mut m = 0.0f64;
        for f in steps {
            m = m.max(grid.lq_norm(f, q)?);
        }
        return Ok(m);
    }
    if !(s >= 1.0) {
        return Err(Error::InvalidParameter(format!("bochner_norm needs s >= 1, got {s}")));
    }
    let mut acc = 0.0;
    for f in steps {
        acc += grid.lq_norm(f, q)?.powf(s) * dt;
    }
    Ok(acc.powf(1.0 / s))
}
