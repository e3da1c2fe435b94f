//! Initial data of the two case studies on the periodic unit square.

use std::f64::consts::PI;

/// Density of the compressible shear case,
/// `1 + eps^2 sin^2(2 pi (x + y))`.
pub fn shear_density(eps: f64) -> impl Fn(f64, f64) -> f64 + Copy {
    move |x, y| 1.0 + eps * eps * (2.0 * PI * (x + y)).sin().powi(2)
}

pub fn shear_momentum(eps: f64) -> impl Fn(f64, f64) -> [f64; 2] + Copy {
    move |x, y| {
        let base = (2.0 * PI * (x - y)).sin();
        let phase = 2.0 * PI * (x + y);
        let e2 = eps * eps;
        [base + e2 * phase.sin(), base + e2 * phase.cos()]
    }
}

/// Velocity `m / rho` of the compressible shear case.
pub fn shear_velocity(eps: f64) -> impl Fn(f64, f64) -> [f64; 2] + Copy {
    let rho = shear_density(eps);
    let m = shear_momentum(eps);
    move |x, y| {
        let r = rho(x, y);
        let [a, b] = m(x, y);
        [a / r, b / r]
    }
}

/// Divergence-free limit velocity `(sin(2 pi (x - y)), sin(2 pi (x - y)))`.
pub fn shear_limit_velocity() -> impl Fn(f64, f64) -> [f64; 2] + Copy {
    |x, y| {
        let s = (2.0 * PI * (x - y)).sin();
        [s, s]
    }
}
