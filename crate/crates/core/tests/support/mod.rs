#![allow(dead_code)]

use apeuler_core::fields::{CellScalar, CellVector};
use apeuler_core::mesh::{build_uniform_mesh, Mesh, MeshSpec};
use rand::Rng;

pub fn mesh(k: usize) -> Mesh {
    build_uniform_mesh(MeshSpec::unit_square(k)).unwrap()
}

pub fn random_scalar(mesh: &Mesh, rng: &mut impl Rng) -> CellScalar {
    CellScalar::from_fn(mesh.shape(), |_| rng.random_range(-1.0..1.0))
}

pub fn random_vector(mesh: &Mesh, rng: &mut impl Rng) -> CellVector {
    CellVector::from_components(random_scalar(mesh, rng), random_scalar(mesh, rng)).unwrap()
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method).
pub fn assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

/// W1 between equal-weight empirical measures by optimal transport: every
/// atom of `a` is split into `b.len()` copies and vice versa, which turns the
/// transport problem into a balanced assignment.
pub fn w1_brute_force(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let xs: Vec<f64> = a.iter().flat_map(|&x| std::iter::repeat_n(x, m)).collect();
    let ys: Vec<f64> = b.iter().flat_map(|&y| std::iter::repeat_n(y, n)).collect();
    let cost: Vec<Vec<f64>> = xs.iter().map(|x| ys.iter().map(|y| (x - y).abs()).collect()).collect();
    assignment_cost(&cost) / (n * m) as f64
}
