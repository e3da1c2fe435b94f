//! Matrix-free Krylov solvers for the implicit transport system and the
//! singular pressure system of the collocated scheme.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::mesh::Mesh;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`; `y` is fully overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

pub trait Preconditioner: Sync {
    /// `z = M^{-1} r`; `z` is fully overwritten.
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Recomputed `||A x - b||_2`.
    pub residual: f64,
    /// `residual / ||b||_2`, or the absolute residual when `b = 0`.
    pub relative_residual: f64,
    pub converged: bool,
    /// Norm of the kernel component removed from the right-hand side
    /// (always zero for the transport solver).
    pub removed_norm: f64,
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(diag: &[f64]) -> Self {
        let inv_diag = diag
            .iter()
            .map(|&d| if d != 0.0 && d.is_finite() { 1.0 / d } else { 1.0 })
            .collect();
        Self { inv_diag }
    }

    pub fn from_operator(a: &dyn LinearOperator) -> Self {
        match a.diagonal() {
            Some(d) => Self::new(&d),
            None => Self::new(&vec![1.0; a.dim()]),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Exact inverse of `shift I + scale (-Delta_wide)` on a periodic grid,
/// applied by FFT. `Delta_wide` is the five-point Laplacian with spacing
/// `2h`, whose symbol is `-(sin^2 tx / hx^2 + sin^2 ty / hy^2)`.
///
/// With `shift = 0` the modes with a vanishing symbol are mapped to zero,
/// which gives the pseudo-inverse of the singular operator.
pub struct SpectralPreconditioner {
    nx: usize,
    ny: usize,
    inv_symbol: Vec<f64>,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
}

impl SpectralPreconditioner {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64, shift: f64, scale: f64) -> Self {
        let mut planner = FftPlanner::new();
        let sx: Vec<f64> = (0..nx)
            .map(|k| (std::f64::consts::PI * 2.0 * k as f64 / nx as f64).sin().powi(2) / (hx * hx))
            .collect();
        let sy: Vec<f64> = (0..ny)
            .map(|k| (std::f64::consts::PI * 2.0 * k as f64 / ny as f64).sin().powi(2) / (hy * hy))
            .collect();
        let norm = 1.0 / (nx * ny) as f64;
        let mut inv_symbol = Vec::with_capacity(nx * ny);
        for ky in 0..ny {
            for kx in 0..nx {
                let lap = sx[kx] + sy[ky];
                // sin^2 of 0 or pi is at or below 1e-31 relative to a generic mode
                let singular = lap * hx.min(hy).powi(2) < 1e-20;
                let sym = shift + scale * if singular { 0.0 } else { lap };
                inv_symbol.push(if sym.abs() > 0.0 && !(shift == 0.0 && singular) {
                    norm / sym
                } else {
                    0.0
                });
            }
        }
        Self {
            nx,
            ny,
            inv_symbol,
            fft_x: planner.plan_fft_forward(nx),
            ifft_x: planner.plan_fft_inverse(nx),
            fft_y: planner.plan_fft_forward(ny),
            ifft_y: planner.plan_fft_inverse(ny),
        }
    }

    pub fn for_mesh(mesh: &Mesh, shift: f64, scale: f64) -> Self {
        Self::new(mesh.nx(), mesh.ny(), mesh.hx(), mesh.hy(), shift, scale)
    }

    fn transform(&self, buf: &mut [Complex64], fx: &dyn Fft<f64>, fy: &dyn Fft<f64>) {
        let (nx, ny) = (self.nx, self.ny);
        fx.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = buf[j * nx + i];
            }
            fy.process(&mut col);
            for j in 0..ny {
                buf[j * nx + i] = col[j];
            }
        }
    }
}

impl Preconditioner for SpectralPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut buf: Vec<Complex64> = r.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, self.fft_x.as_ref(), self.fft_y.as_ref());
        for (b, s) in buf.iter_mut().zip(&self.inv_symbol) {
            *b *= *s;
        }
        self.transform(&mut buf, self.ifft_x.as_ref(), self.ifft_y.as_ref());
        for (zi, b) in z.iter_mut().zip(&buf) {
            *zi = b.re;
        }
    }
}

/// `-Delta_wide = -(div_T o grad_T)` on a uniform periodic grid.
#[derive(Debug, Clone, Copy)]
pub struct NegWideLaplacian {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub scale: f64,
}

impl NegWideLaplacian {
    pub fn for_mesh(mesh: &Mesh, scale: f64) -> Self {
        Self {
            nx: mesh.nx(),
            ny: mesh.ny(),
            hx: mesh.hx(),
            hy: mesh.hy(),
            scale,
        }
    }
}

impl LinearOperator for NegWideLaplacian {
    fn dim(&self) -> usize {
        self.nx * self.ny
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let cx = self.scale / (4.0 * self.hx * self.hx);
        let cy = self.scale / (4.0 * self.hy * self.hy);
        for j in 0..ny {
            let jn = (j + 2) % ny;
            let js = (j + 2 * ny - 2) % ny;
            for i in 0..nx {
                let ie = (i + 2) % nx;
                let iw = (i + 2 * nx - 2) % nx;
                let c = j * nx + i;
                let xc = x[c];
                y[c] = cx * (2.0 * xc - x[j * nx + ie] - x[j * nx + iw])
                    + cy * (2.0 * xc - x[jn * nx + i] - x[js * nx + i]);
            }
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut d = 0.0;
        if self.nx > 2 {
            d += self.scale / (2.0 * self.hx * self.hx);
        }
        if self.ny > 2 {
            d += self.scale / (2.0 * self.hy * self.hy);
        }
        Some(vec![d; self.dim()])
    }
}

/// Orthonormal basis of the kernel of `Delta_wide`: the constant and, for
/// even dimensions, the alternating patterns `(-1)^i`, `(-1)^j`, `(-1)^(i+j)`.
pub fn wide_laplacian_kernel(nx: usize, ny: usize) -> Vec<Vec<f64>> {
    let n = (nx * ny) as f64;
    let pattern = |fx: bool, fy: bool| -> Vec<f64> {
        let s = 1.0 / n.sqrt();
        (0..nx * ny)
            .map(|c| {
                let (i, j) = (c % nx, c / nx);
                let sgn = (fx && i % 2 == 1) ^ (fy && j % 2 == 1);
                if sgn {
                    -s
                } else {
                    s
                }
            })
            .collect()
    };
    let mut basis = vec![pattern(false, false)];
    if nx.is_multiple_of(2) {
        basis.push(pattern(true, false));
    }
    if ny.is_multiple_of(2) {
        basis.push(pattern(false, true));
    }
    if nx.is_multiple_of(2) && ny.is_multiple_of(2) {
        basis.push(pattern(true, true));
    }
    basis
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(a: &dyn LinearOperator, x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
    a.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm2(r)
}

fn report(iterations: usize, res: f64, bnorm: f64, tol: f64, removed_norm: f64) -> SolveReport {
    let relative_residual = if bnorm > 0.0 { res / bnorm } else { res };
    SolveReport {
        iterations,
        residual: res,
        relative_residual,
        converged: res <= tol * bnorm || res == 0.0,
        removed_norm,
    }
}

/// Jacobi-preconditioned BiCGStab for a nonsymmetric system.
pub fn solve_transport(
    a: &dyn LinearOperator,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, SolveReport) {
    let jacobi = Jacobi::from_operator(a);
    let mut x = vec![0.0; b.len()];
    let rep = bicgstab(a, b, &mut x, tol, max_iter, &jacobi);
    (x, rep)
}

/// Right-preconditioned BiCGStab starting from the guess in `x`.
///
/// Convergence is judged on the recomputed residual; the recurrence is
/// restarted from the true residual when the two drift apart.
pub fn bicgstab(
    a: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    m: &dyn Preconditioner,
) -> SolveReport {
    let n = b.len();
    assert_eq!(a.dim(), n, "operator and right-hand side sizes differ");
    let bnorm = norm2(b);
    let target = tol * bnorm;
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return report(0, 0.0, 0.0, tol, 0.0);
    }
    let mut r = vec![0.0; n];
    let mut rnorm = residual(a, x, b, &mut r);
    let mut iterations = 0;
    let (mut p, mut v, mut y, mut s, mut z, mut t) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    'restart: while rnorm > target && iterations < max_iter {
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        p.iter_mut().for_each(|e| *e = 0.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        while iterations < max_iter {
            iterations += 1;
            let rho_new = dot(&r_hat, &r);
            if rho_new == 0.0 || !rho_new.is_finite() {
                rnorm = residual(a, x, b, &mut r);
                continue 'restart;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            m.apply(&p, &mut y);
            a.apply(&y, &mut v);
            let rv = dot(&r_hat, &v);
            if rv == 0.0 || !rv.is_finite() {
                rnorm = residual(a, x, b, &mut r);
                continue 'restart;
            }
            alpha = rho / rv;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if norm2(&s) <= 0.5 * target {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                rnorm = residual(a, x, b, &mut r);
                continue 'restart;
            }
            m.apply(&s, &mut z);
            a.apply(&z, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            let est = norm2(&r);
            if omega == 0.0 || est <= 0.5 * target {
                rnorm = residual(a, x, b, &mut r);
                continue 'restart;
            }
        }
        rnorm = residual(a, x, b, &mut r);
    }
    report(iterations, rnorm, bnorm, tol, 0.0)
}

/// Modified Gram-Schmidt; drops vectors that are numerically dependent.
pub fn orthonormalize(basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for v in basis {
        let mut w = v.clone();
        let original = norm2(&w);
        for q in &out {
            let c = dot(q, &w);
            w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
        }
        let nw = norm2(&w);
        if nw > 1e-12 * original && nw > 0.0 {
            w.iter_mut().for_each(|wi| *wi /= nw);
            out.push(w);
        }
    }
    out
}

/// Removes the span of an orthonormal basis from `v`, returning the norm of
/// the removed part.
pub fn deflate(v: &mut [f64], orthonormal: &[Vec<f64>]) -> f64 {
    let mut removed = 0.0;
    for q in orthonormal {
        let c = dot(q, v);
        removed += c * c;
        v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
    }
    removed.sqrt()
}

/// Jacobi-preconditioned deflated CG for a symmetric positive semidefinite
/// system whose kernel is spanned by `null_basis`.
pub fn solve_deflated_spd(
    a: &dyn LinearOperator,
    b: &[f64],
    tol: f64,
    null_basis: &[Vec<f64>],
) -> (Vec<f64>, SolveReport) {
    let jacobi = Jacobi::from_operator(a);
    let mut x = vec![0.0; b.len()];
    let rep = deflated_pcg(a, b, &mut x, tol, 10 * b.len().max(10), null_basis, &jacobi);
    (x, rep)
}

/// Preconditioned CG with the kernel projected out of the right-hand side,
/// the preconditioned residual and the iterate at every step. The tolerance
/// applies relative to the norm of the deflated right-hand side.
pub fn deflated_pcg(
    a: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    null_basis: &[Vec<f64>],
    m: &dyn Preconditioner,
) -> SolveReport {
    let n = b.len();
    assert_eq!(a.dim(), n, "operator and right-hand side sizes differ");
    let q = orthonormalize(null_basis);
    let mut bd = b.to_vec();
    let removed = deflate(&mut bd, &q);
    let bnorm = norm2(&bd);
    deflate(x, &q);
    if bnorm <= 1e-14 * removed || bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        let mut r = vec![0.0; n];
        let res = residual(a, x, &bd, &mut r);
        let mut rep = report(0, res, bnorm, tol, removed);
        rep.converged = true;
        return rep;
    }
    let target = tol * bnorm;
    let mut r = vec![0.0; n];
    let mut rnorm = residual(a, x, &bd, &mut r);
    deflate(&mut r, &q);
    let (mut z, mut p, mut ap) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut iterations = 0;
    while rnorm > target && iterations < max_iter {
        m.apply(&r, &mut z);
        deflate(&mut z, &q);
        let mut rz = dot(&r, &z);
        p.copy_from_slice(&z);
        while iterations < max_iter {
            iterations += 1;
            a.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            deflate(&mut r, &q);
            if norm2(&r) <= 0.5 * target {
                break;
            }
            m.apply(&r, &mut z);
            deflate(&mut z, &q);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        deflate(x, &q);
        rnorm = residual(a, x, &bd, &mut r);
        deflate(&mut r, &q);
        if iterations >= max_iter {
            break;
        }
    }
    deflate(x, &q);
    let mut rr = vec![0.0; n];
    let res = residual(a, x, &bd, &mut rr);
    report(iterations, res, bnorm, tol, removed)
}
