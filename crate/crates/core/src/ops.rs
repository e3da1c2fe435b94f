//! Discrete differential operators, fluxes, projections and norms on
//! periodic structured meshes.
//!
//! All per-edge quantities are stored in the `K -> L` orientation of
//! [`Edge`]: a normal component `w_sigma` means `{{w}}_sigma . nu_{sigma,K}`.

use crate::error::{Error, Result};
use crate::fields::{check_shape, CellScalar, CellVector, DualScalar, DualVector};
use crate::mesh::{Axis, Edge, Mesh};
use crate::quadrature::GaussLegendre;

/// Default number of Gauss points per axis used by [`project`].
pub const DEFAULT_QUADRATURE_ORDER: usize = 4;

/// Cell means of `f`, approximated with an `order x order` Gauss rule.
pub fn project_with_order(mesh: &Mesh, f: impl Fn(f64, f64) -> f64, order: usize) -> CellScalar {
    let rule = GaussLegendre::new(order);
    let (hx, hy) = (mesh.hx(), mesh.hy());
    CellScalar::from_fn(mesh.shape(), |c| {
        let [xc, yc] = mesh.cell(c).center;
        let mut acc = 0.0;
        for (yq, wy) in rule.nodes.iter().zip(&rule.weights) {
            let y = yc + 0.5 * hy * yq;
            let mut row = 0.0;
            for (xq, wx) in rule.nodes.iter().zip(&rule.weights) {
                row += wx * f(xc + 0.5 * hx * xq, y);
            }
            acc += wy * row;
        }
        0.25 * acc
    })
}

pub fn project(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> CellScalar {
    project_with_order(mesh, f, DEFAULT_QUADRATURE_ORDER)
}

/// Componentwise projection of a vector-valued function.
pub fn project_vector(mesh: &Mesh, f: impl Fn(f64, f64) -> [f64; 2]) -> CellVector {
    let x = project(mesh, |x, y| f(x, y)[0]);
    let y = project(mesh, |x, y| f(x, y)[1]);
    CellVector::from_components(x, y).expect("components share the mesh shape")
}

/// `{{q}}_sigma = (q_K + q_L) / 2`.
pub fn edge_average(q: &CellScalar, edge: &Edge) -> f64 {
    0.5 * (q[edge.k] + q[edge.l])
}

pub fn edge_average_vector(w: &CellVector, edge: &Edge) -> [f64; 2] {
    [edge_average(w.x(), edge), edge_average(w.y(), edge)]
}

/// Normal component `{{w}}_sigma . nu_{sigma,K}` on every edge.
pub fn edge_normal_average(mesh: &Mesh, w: &CellVector) -> Vec<f64> {
    mesh.edges()
        .iter()
        .map(|e| {
            let comp = w.component(e.axis.index());
            0.5 * (comp[e.k] + comp[e.l])
        })
        .collect()
}

/// Collocated gradient `(1/|K|) sum |sigma| (q_L - q_K)/2 nu_{sigma,K}`.
pub fn grad_primal(mesh: &Mesh, q: &CellScalar) -> CellVector {
    debug_assert_eq!(mesh.shape(), q.shape());
    let mut g = CellVector::zeros(mesh.shape());
    for e in mesh.edges() {
        // Both cells see the same contribution: (q_L - q_K)/2 nu_K from K and
        // (q_K - q_L)/2 (-nu_K) from L.
        let contribution = 0.5 * e.measure * (q[e.l] - q[e.k]);
        let comp = g.component_mut(e.axis.index());
        comp[e.k] += contribution;
        comp[e.l] += contribution;
    }
    for axis in 0..2 {
        let comp = g.component_mut(axis);
        for (c, v) in comp.values_mut().iter_mut().enumerate() {
            *v /= mesh.cell(c).measure;
        }
    }
    g
}

/// Collocated divergence `(1/|K|) sum |sigma| {{w}}_sigma . nu_{sigma,K}`.
pub fn div_primal(mesh: &Mesh, w: &CellVector) -> CellScalar {
    debug_assert_eq!(mesh.shape(), w.shape());
    let mut out = CellScalar::zeros(mesh.shape());
    for e in mesh.edges() {
        let comp = w.component(e.axis.index());
        let flux = e.measure * 0.5 * (comp[e.k] + comp[e.l]);
        out[e.k] += flux;
        out[e.l] -= flux;
    }
    for (c, v) in out.values_mut().iter_mut().enumerate() {
        *v /= mesh.cell(c).measure;
    }
    out
}

/// Dual-mesh gradient `(|sigma|/|D_sigma|) (q_L - q_K) nu_{sigma,K}`.
pub fn grad_dual(mesh: &Mesh, q: &CellScalar) -> DualVector {
    let values = mesh
        .edges()
        .iter()
        .map(|e| {
            let mag = e.measure / e.dual_measure * (q[e.l] - q[e.k]);
            let n = e.normal();
            [mag * n[0], mag * n[1]]
        })
        .collect();
    DualVector { values }
}

/// `mu_sigma q_K + (1 - mu_sigma) q_L` on every dual cell.
pub fn reconstruct_dual(mesh: &Mesh, q: &CellScalar, weights: &[f64]) -> Result<DualScalar> {
    if weights.len() != mesh.num_edges() {
        return Err(Error::InvalidArgument(format!(
            "{} reconstruction weights for {} edges",
            weights.len(),
            mesh.num_edges()
        )));
    }
    if let Some((e, mu)) = weights
        .iter()
        .enumerate()
        .find(|(_, mu)| !(0.0..=1.0).contains(*mu))
    {
        return Err(Error::InvalidArgument(format!(
            "reconstruction weight {mu} on edge {e} is outside [0, 1]"
        )));
    }
    let values = mesh
        .edges()
        .iter()
        .zip(weights)
        .map(|(e, &mu)| mu * q[e.k] + (1.0 - mu) * q[e.l])
        .collect();
    Ok(DualScalar { values })
}

/// Reconstruction with the default edge-average weight `mu = 1/2`.
pub fn reconstruct_dual_average(mesh: &Mesh, q: &CellScalar) -> DualScalar {
    DualScalar {
        values: mesh.edges().iter().map(|e| edge_average(q, e)).collect(),
    }
}

/// Pre-split advecting normal velocity on every edge, `K`-oriented:
/// `plus >= 0` carries the donor value `q_K`, `minus <= 0` carries `q_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl EdgeSplit {
    pub fn new(plus: Vec<f64>, minus: Vec<f64>) -> Result<Self> {
        if plus.len() != minus.len() {
            return Err(Error::InvalidArgument("split halves differ in length".into()));
        }
        for (e, (&p, &m)) in plus.iter().zip(&minus).enumerate() {
            check_split(p, m).map_err(|err| match err {
                Error::InvalidArgument(msg) => Error::InvalidArgument(format!("edge {e}: {msg}")),
                other => other,
            })?;
        }
        Ok(Self { plus, minus })
    }

    /// Split of the stabilized velocity `w = u - du`:
    /// `w+ = u+ - du-` and `w- = u- - du+`.
    pub fn stabilized(u_normal: &[f64], du_normal: &[f64]) -> Self {
        debug_assert_eq!(u_normal.len(), du_normal.len());
        let (plus, minus) = u_normal
            .iter()
            .zip(du_normal)
            .map(|(&u, &du)| (pos(u) - neg(du), neg(u) - pos(du)))
            .unzip();
        Self { plus, minus }
    }

    /// Plain upwind split of a single normal velocity.
    pub fn upwind(w_normal: &[f64]) -> Self {
        let (plus, minus) = w_normal.iter().map(|&w| (pos(w), neg(w))).unzip();
        Self { plus, minus }
    }

    pub fn len(&self) -> usize {
        self.plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plus.is_empty()
    }

    /// `w_sigma = w+ + w-`.
    pub fn total(&self, e: usize) -> f64 {
        self.plus[e] + self.minus[e]
    }
}

/// `a+ = (a + |a|)/2`
#[inline]
pub fn pos(a: f64) -> f64 {
    0.5 * (a + a.abs())
}

/// `a- = (a - |a|)/2`
#[inline]
pub fn neg(a: f64) -> f64 {
    0.5 * (a - a.abs())
}

fn check_split(plus: f64, minus: f64) -> Result<()> {
    if plus < 0.0 || minus > 0.0 || plus.is_nan() || minus.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "invalid velocity split (w+ = {plus}, w- = {minus})"
        )));
    }
    Ok(())
}

/// Upwind mass flux `|sigma| (q_K w+ + q_L w-)` seen from `K`.
pub fn upwind_mass_flux(q_k: f64, q_l: f64, plus: f64, minus: f64, measure: f64) -> Result<f64> {
    check_split(plus, minus)?;
    Ok(measure * (q_k * plus + q_l * minus))
}

/// Upwind divergence `(1/|K|) sum_sigma F_{sigma,K}(q, w)`.
pub fn div_upwind(mesh: &Mesh, q: &CellScalar, split: &EdgeSplit) -> CellScalar {
    let mut out = CellScalar::zeros(mesh.shape());
    accumulate_upwind(mesh, q, split, out.values_mut());
    for (c, v) in out.values_mut().iter_mut().enumerate() {
        *v /= mesh.cell(c).measure;
    }
    out
}

/// Componentwise upwind divergence of a vector quantity.
pub fn div_upwind_vector(mesh: &Mesh, q: &CellVector, split: &EdgeSplit) -> CellVector {
    let x = div_upwind(mesh, q.x(), split);
    let y = div_upwind(mesh, q.y(), split);
    CellVector::from_components(x, y).expect("same shape")
}

/// Adds the unscaled flux sums `sum_sigma F_{sigma,K}` into `out`.
pub(crate) fn accumulate_upwind(mesh: &Mesh, q: &CellScalar, split: &EdgeSplit, out: &mut [f64]) {
    debug_assert_eq!(split.len(), mesh.num_edges());
    for (i, e) in mesh.edges().iter().enumerate() {
        let flux = e.measure * (q[e.k] * split.plus[i] + q[e.l] * split.minus[i]);
        out[e.k] += flux;
        out[e.l] -= flux;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn from_p(p: f64) -> Option<Self> {
        if p == 1.0 {
            Some(Norm::L1)
        } else if p == 2.0 {
            Some(Norm::L2)
        } else if p.is_infinite() && p > 0.0 {
            Some(Norm::Linf)
        } else {
            None
        }
    }
}

/// Volume-weighted mean `|Omega|^{-1} sum_K |K| q_K`.
pub fn mean(mesh: &Mesh, q: &CellScalar) -> f64 {
    weighted_sum(mesh, q.values()) / mesh.area()
}

pub fn integral(mesh: &Mesh, q: &CellScalar) -> f64 {
    weighted_sum(mesh, q.values())
}

fn weighted_sum(mesh: &Mesh, values: &[f64]) -> f64 {
    mesh.cells()
        .iter()
        .zip(values)
        .map(|(c, v)| c.measure * v)
        .sum()
}

pub fn lp_norm(mesh: &Mesh, q: &CellScalar, norm: Norm) -> f64 {
    weighted_norm(mesh.cells().iter().map(|c| c.measure), q.values().iter().copied(), norm)
}

/// Any real `p >= 1`; `p = inf` gives the max norm.
pub fn lp_norm_p(mesh: &Mesh, q: &CellScalar, p: f64) -> f64 {
    if let Some(norm) = Norm::from_p(p) {
        return lp_norm(mesh, q, norm);
    }
    let s: f64 = mesh
        .cells()
        .iter()
        .zip(q.values())
        .map(|(c, v)| c.measure * v.abs().powf(p))
        .sum();
    s.powf(1.0 / p)
}

/// Norm of the pointwise Euclidean length `|w_K|`.
pub fn lp_norm_vector(mesh: &Mesh, w: &CellVector, norm: Norm) -> f64 {
    lp_norm(mesh, &w.norms(), norm)
}

/// Norm on the dual mesh, `(sum_sigma |D_sigma| |z_sigma|^p)^{1/p}`.
pub fn dual_lp_norm(mesh: &Mesh, z: &DualScalar, p: f64) -> f64 {
    dual_norm_iter(mesh, z.values.iter().copied(), p)
}

pub fn dual_lp_norm_vector(mesh: &Mesh, z: &DualVector, p: f64) -> f64 {
    dual_norm_iter(mesh, z.values.iter().map(|v| v[0].hypot(v[1])), p)
}

fn dual_norm_iter(mesh: &Mesh, values: impl Iterator<Item = f64>, p: f64) -> f64 {
    let weights = mesh.edges().iter().map(|e| e.dual_measure);
    match Norm::from_p(p) {
        Some(norm) => weighted_norm(weights, values, norm),
        None => weights
            .zip(values)
            .map(|(w, v)| w * v.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p),
    }
}

fn weighted_norm(
    weights: impl Iterator<Item = f64>,
    values: impl Iterator<Item = f64>,
    norm: Norm,
) -> f64 {
    match norm {
        Norm::L1 => weights.zip(values).map(|(w, v)| w * v.abs()).sum(),
        Norm::L2 => weights.zip(values).map(|(w, v)| w * v * v).sum::<f64>().sqrt(),
        Norm::Linf => values.fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// Volume-weighted inner product `sum_K |K| a_K b_K`.
pub fn inner(mesh: &Mesh, a: &CellScalar, b: &CellScalar) -> f64 {
    mesh.cells()
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .map(|(c, (x, y))| c.measure * x * y)
        .sum()
}

pub fn inner_vector(mesh: &Mesh, a: &CellVector, b: &CellVector) -> f64 {
    inner(mesh, a.x(), b.x()) + inner(mesh, a.y(), b.y())
}

/// Checks that both fields live on `mesh`.
pub fn check_fields(mesh: &Mesh, q: &CellScalar, w: &CellVector) -> Result<()> {
    check_shape(mesh.shape(), q.shape())?;
    check_shape(mesh.shape(), w.shape())
}

/// Edge count of one axis, used by per-axis dual sums.
pub fn edges_on_axis(mesh: &Mesh, axis: Axis) -> impl Iterator<Item = &Edge> {
    mesh.edges().iter().filter(move |e| e.axis == axis)
}
