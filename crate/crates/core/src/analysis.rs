//! Ensemble statistics over mesh refinements, error functionals, relative
//! energies and convergence rates.

use crate::comp::{pi_gamma_value, pressure};
use crate::error::{Error, Result};
use crate::fields::{check_shape, CellScalar, CellVector};
use crate::mesh::{GridShape, Mesh};
use crate::ops::{self, Norm};

/// Cell averages of `fine` over the blocks of a coarser nested grid.
pub fn restrict(fine: &CellScalar, coarse: GridShape) -> Result<CellScalar> {
    let f = fine.shape();
    let nested = coarse.nx > 0
        && coarse.ny > 0
        && f.nx.is_multiple_of(coarse.nx)
        && f.ny.is_multiple_of(coarse.ny)
        && f.nx >= coarse.nx
        && f.ny >= coarse.ny;
    if !nested {
        return Err(Error::NonNested {
            fine: f.as_tuple(),
            coarse: coarse.as_tuple(),
        });
    }
    let (rx, ry) = (f.nx / coarse.nx, f.ny / coarse.ny);
    if rx == 1 && ry == 1 {
        return Ok(fine.clone());
    }
    let scale = 1.0 / (rx * ry) as f64;
    let mut out = vec![0.0; coarse.cells()];
    let values = fine.values();
    for jf in 0..f.ny {
        let row = &values[jf * f.nx..(jf + 1) * f.nx];
        let base = (jf / ry) * coarse.nx;
        for (i, chunk) in row.chunks_exact(rx).enumerate() {
            out[base + i] += chunk.iter().sum::<f64>();
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    CellScalar::new(coarse, out)
}

pub fn restrict_vector(fine: &CellVector, coarse: GridShape) -> Result<CellVector> {
    CellVector::from_components(restrict(fine.x(), coarse)?, restrict(fine.y(), coarse)?)
}

/// A group of state components on one grid, e.g. `(rho, m1, m2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub components: Vec<CellScalar>,
}

impl Snapshot {
    pub fn new(components: Vec<CellScalar>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidArgument("snapshot without components".into()));
        };
        for c in &components[1..] {
            check_shape(first.shape(), c.shape())?;
        }
        Ok(Self { components })
    }

    pub fn shape(&self) -> GridShape {
        self.components[0].shape()
    }

    pub fn restrict(&self, coarse: GridShape) -> Result<Self> {
        Ok(Self {
            components: self
                .components
                .iter()
                .map(|c| restrict(c, coarse))
                .collect::<Result<_>>()?,
        })
    }

    /// Sum over components of volume-weighted L1 norms.
    pub fn l1_norm(&self, mesh: &Mesh) -> f64 {
        self.components.iter().map(|c| ops::lp_norm(mesh, c, Norm::L1)).sum()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.components.len() != other.components.len() {
            return Err(Error::InvalidArgument("snapshots have different component counts".into()));
        }
        let mut out = Vec::with_capacity(self.components.len());
        for (a, b) in self.components.iter().zip(&other.components) {
            check_shape(a.shape(), b.shape())?;
            out.push(a.zip_map(b, |x, y| x - y));
        }
        Ok(Self { components: out })
    }
}

/// Solutions on a refinement sequence, restricted to a common grid and
/// ordered from coarsest to finest.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Snapshot>,
    pub time: f64,
}

impl Ensemble {
    pub fn new(members: Vec<Snapshot>, time: f64) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::EmptyEnsemble);
        };
        for m in &members[1..] {
            check_shape(first.shape(), m.shape())?;
            if m.components.len() != first.components.len() {
                return Err(Error::InvalidArgument("ensemble members have different component counts".into()));
            }
        }
        Ok(Self { members, time })
    }

    /// Restricts every member to `coarse`.
    pub fn from_fine_members(members: &[Snapshot], coarse: GridShape, time: f64) -> Result<Self> {
        Self::new(
            members.iter().map(|m| m.restrict(coarse)).collect::<Result<_>>()?,
            time,
        )
    }

    pub fn shape(&self) -> GridShape {
        self.members[0].shape()
    }

    pub fn finest(&self) -> &Snapshot {
        self.members.last().expect("non-empty ensemble")
    }

    /// The ensemble formed by the first `n` members.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        Self::new(self.members[..n.min(self.members.len())].to_vec(), self.time)
    }
}

/// Pointwise arithmetic mean over members.
pub fn cesaro(ensemble: &Ensemble) -> Result<Snapshot> {
    let first = ensemble.members.first().ok_or(Error::EmptyEnsemble)?;
    let n = ensemble.members.len() as f64;
    let components = (0..first.components.len())
        .map(|k| {
            let mut acc = vec![0.0; first.components[k].len()];
            for m in &ensemble.members {
                acc.iter_mut().zip(m.components[k].values()).for_each(|(a, v)| *a += v);
            }
            CellScalar::new(first.shape(), acc.into_iter().map(|a| a / n).collect())
        })
        .collect::<Result<_>>()?;
    Ok(Snapshot { components })
}

/// Pointwise mean absolute deviation from the Cesaro mean.
pub fn first_variance(ensemble: &Ensemble) -> Result<Snapshot> {
    let mean = cesaro(ensemble)?;
    let n = ensemble.members.len() as f64;
    let components = mean
        .components
        .iter()
        .enumerate()
        .map(|(k, mk)| {
            let mut acc = vec![0.0; mk.len()];
            for m in &ensemble.members {
                for ((a, v), c) in acc.iter_mut().zip(m.components[k].values()).zip(mk.values()) {
                    *a += (v - c).abs();
                }
            }
            CellScalar::new(mk.shape(), acc.into_iter().map(|a| a / n).collect())
        })
        .collect::<Result<_>>()?;
    Ok(Snapshot { components })
}

/// 1-Wasserstein distance between two equal-weight empirical measures on
/// the line, `int |F_a(x) - F_b(x)| dx`.
pub fn w1_empirical(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("W1 needs non-empty samples".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    if sa.len() == sb.len() {
        let s: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / sa.len() as f64);
    }
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut x_prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        total += (fa - fb).abs() * (x - x_prev);
        while i < sa.len() && sa[i] == x {
            i += 1;
        }
        while j < sb.len() && sb[j] == x {
            j += 1;
        }
        x_prev = x;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub label: String,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
}

/// `E1 = ||U_k - U_ref||`, `E2` for the Cesaro means, `E3` for the first
/// variances and `E4` for the cellwise W1 distance between the empirical
/// measures of the two ensembles, all in L1 and summed over components.
pub fn error_suite(mesh: &Mesh, ensemble: &Ensemble, reference: &Ensemble, label: &str) -> Result<ErrorReport> {
    check_shape(mesh.shape(), ensemble.shape())?;
    check_shape(mesh.shape(), reference.shape())?;
    let ncomp = ensemble.members[0].components.len();
    if reference.members[0].components.len() != ncomp {
        return Err(Error::InvalidArgument("ensembles have different component counts".into()));
    }
    let e1 = ensemble.finest().sub(reference.finest())?.l1_norm(mesh);
    let e2 = cesaro(ensemble)?.sub(&cesaro(reference)?)?.l1_norm(mesh);
    let e3 = first_variance(ensemble)?.sub(&first_variance(reference)?)?.l1_norm(mesh);
    let mut e4 = 0.0;
    let mut sa = vec![0.0; ensemble.members.len()];
    let mut sb = vec![0.0; reference.members.len()];
    for (c, cell) in mesh.cells().iter().enumerate() {
        let mut local = 0.0;
        for k in 0..ncomp {
            for (s, m) in sa.iter_mut().zip(&ensemble.members) {
                *s = m.components[k][c];
            }
            for (s, m) in sb.iter_mut().zip(&reference.members) {
                *s = m.components[k][c];
            }
            local += w1_empirical(&sa, &sb)?;
        }
        e4 += cell.measure * local;
    }
    Ok(ErrorReport {
        label: label.to_string(),
        e1,
        e2,
        e3,
        e4,
    })
}

/// `(p - m(p)) / eps^2`.
pub fn second_order_pressure(mesh: &Mesh, p: &CellScalar, eps: f64) -> CellScalar {
    let m = ops::mean(mesh, p);
    let inv = 1.0 / (eps * eps);
    p.map(|v| (v - m) * inv)
}

/// `psi(rho) - psi(r) - psi'(r)(rho - r) = r^gamma Pi(rho / r)`.
fn relative_psi(rho: f64, r: f64, gamma: f64) -> f64 {
    pressure(r, gamma) * pi_gamma_value(rho / r, gamma)
}

pub fn rel_energy_comp(
    mesh: &Mesh,
    rho: &CellScalar,
    m: &CellVector,
    r: &CellScalar,
    big_u: &CellVector,
    eps: f64,
    gamma: f64,
) -> Result<f64> {
    for f in [rho, r] {
        check_shape(mesh.shape(), f.shape())?;
        if let Some(cell) = f.values().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::NonPositiveDensity { cell, value: f[cell] });
        }
    }
    check_shape(mesh.shape(), m.shape())?;
    check_shape(mesh.shape(), big_u.shape())?;
    let inv = 1.0 / (eps * eps);
    Ok(mesh
        .cells()
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let [mx, my] = m.get(c);
            let [ux, uy] = big_u.get(c);
            let (dx, dy) = (mx / rho[c] - ux, my / rho[c] - uy);
            cell.measure * (0.5 * rho[c] * (dx * dx + dy * dy) + inv * relative_psi(rho[c], r[c], gamma))
        })
        .sum())
}

/// `1/2 sum |K| |v_K - V_K|^2`.
pub fn rel_energy_incomp(mesh: &Mesh, v: &CellVector, big_v: &CellVector) -> Result<f64> {
    check_shape(mesh.shape(), v.shape())?;
    check_shape(mesh.shape(), big_v.shape())?;
    let d = v.sub(big_v);
    Ok(0.5 * ops::inner_vector(mesh, &d, &d))
}

/// `EOC_j = log(e_{j-1} / e_j) / log(h_{j-1} / h_j)`.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() || errors.len() < 2 {
        return Err(Error::InvalidArgument(
            "EOC needs equally long error and mesh-size lists of length at least 2".into(),
        ));
    }
    if let Some(e) = errors.iter().chain(hs).find(|&&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument(format!("EOC needs positive entries (got {e})")));
    }
    Ok(errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect())
}

/// `||rho - 1||_{L^gamma}` per sample time and its supremum.
pub fn density_deviation<'a>(
    mesh: &Mesh,
    samples: impl IntoIterator<Item = (f64, &'a CellScalar)>,
    gamma: f64,
) -> (Vec<(f64, f64)>, f64) {
    let series: Vec<(f64, f64)> = samples
        .into_iter()
        .map(|(t, rho)| (t, ops::lp_norm_p(mesh, &rho.map(|r| r - 1.0), gamma)))
        .collect();
    let sup = series.iter().fold(0.0f64, |m, (_, v)| m.max(*v));
    (series, sup)
}

/// `max_K |div_T u|` and its L1 norm.
pub fn divergence_norms(mesh: &Mesh, u: &CellVector) -> (f64, f64) {
    let d = ops::div_primal(mesh, u);
    (d.max_abs(), ops::lp_norm(mesh, &d, Norm::L1))
}
