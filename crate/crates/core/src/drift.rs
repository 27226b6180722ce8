//! Nonlocal average drift: interaction kernels, the normalized kernel
//! average of the optimal feedbacks
//!
//!   V(u', m', V')_{ij} = − Σ_{rs} (∇ₕu'_{rs}/a − λθ V'_{rs}) K(x_ij, x_rs) m'_{rs} / Z_ij,
//!   Z_ij = Σ_{rs} K(x_ij, x_rs) m'_{rs},
//!
//! the L-sweep relaxation used per time level, and its exact directional
//! derivative (a lockstep replay of the sweeps carrying tangents).
//!
//! Since the weights K m / Z sum to one, the map is a max-norm contraction in
//! V' with factor λθ. Nodes where Z falls below a floor (no visible mass) get
//! a zero drift.

use crate::grid::{ScalarField, SpaceTimeGrid, VectorField};
use crate::numham::HamiltonianParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelVariant {
    /// Isotropic bump: 1 up to 0.9ρ, C¹ non-increasing cutoff at ρ.
    Radial,
    /// Forward-looking cone: radial bump restricted to y₁ ≥ x₁ with a C¹
    /// angular cutoff at half-aperture ω₀.
    Cone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelShape {
    pub variant: KernelVariant,
    pub rho: f64,
    /// Cone half-aperture (radians); unused by the radial kernel.
    pub omega0: f64,
}

/// Cubic ramp from 1 at t = 0 to 0 at t = 1, C¹ at both ends.
#[inline]
fn cutoff(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        1.0 - t * t * (3.0 - 2.0 * t)
    }
}

pub fn kernel_eval(x: [f64; 2], y: [f64; 2], shape: &KernelShape) -> f64 {
    let d = [y[0] - x[0], y[1] - x[1]];
    let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if r >= shape.rho {
        return 0.0;
    }
    let radial = cutoff((r - 0.9 * shape.rho) / (0.1 * shape.rho));
    match shape.variant {
        KernelVariant::Radial => radial,
        KernelVariant::Cone => {
            if d[0] < 0.0 {
                return 0.0;
            }
            if r == 0.0 {
                return 1.0;
            }
            let omega = d[1].abs().atan2(d[0]);
            radial * cutoff((omega - 0.9 * shape.omega0) / (0.1 * shape.omega0))
        }
    }
}

/// Kernel with its node-pair weight table (per node: flat indices and weights
/// of all nodes it sees). The table is what makes repeated averages cheap;
/// weights are grid-independent of m.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub shape: KernelShape,
    pub neighbors: Vec<Vec<(u32, f64)>>,
}

impl Kernel {
    pub fn build(g: &SpaceTimeGrid, shape: KernelShape) -> Kernel {
        let ri = (shape.rho / g.h1).ceil() as i64;
        let rj = (shape.rho / g.h2).ceil() as i64;
        let mut neighbors = Vec::with_capacity(g.n_nodes());
        for i in 0..g.nx1 as i64 {
            for j in 0..g.nx2 as i64 {
                let x = g.x(i as usize, j as usize);
                let mut list = Vec::new();
                for r in (i - ri).max(0)..=(i + ri).min(g.nx1 as i64 - 1) {
                    for s in (j - rj).max(0)..=(j + rj).min(g.nx2 as i64 - 1) {
                        let w = kernel_eval(x, g.x(r as usize, s as usize), &shape);
                        if w > 0.0 {
                            list.push(((r as usize * g.nx2 + s as usize) as u32, w));
                        }
                    }
                }
                neighbors.push(list);
            }
        }
        Kernel { shape, neighbors }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    /// Use freshly updated components within a sweep, lexicographic order.
    GaussSeidel,
    /// Update all components from the previous sweep.
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftParams {
    /// Number of relaxation sweeps per time level.
    pub l: usize,
    pub sweep: SweepOrder,
    /// Z floor, relative to the nodal sum of m on the level.
    pub z_floor_rel: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams { l: 1, sweep: SweepOrder::GaussSeidel, z_floor_rel: 1e-12 }
    }
}

/// Kernel-weighted mass seen from each node, Z_ij = Σ K(x_ij, x_rs) m_rs.
pub fn compute_z(kernel: &Kernel, m: &ScalarField) -> Vec<f64> {
    kernel
        .neighbors
        .iter()
        .map(|list| list.iter().map(|&(k, w)| w * m.data[k as usize]).sum())
        .collect()
}

/// Central-difference gradient of u scaled by 1/a, with the zero-slope ghost
/// layer (so the edge value is the one-sided difference over 2h).
pub fn central_grad(g: &SpaceTimeGrid, u: &ScalarField, a: f64) -> VectorField {
    let (nx1, nx2) = (g.nx1, g.nx2);
    VectorField::from_fn(g, |i, j| {
        let e = if i == nx1 - 1 { u.at(i, j) } else { u.at(i + 1, j) };
        let w = if i == 0 { u.at(i, j) } else { u.at(i - 1, j) };
        let n = if j == nx2 - 1 { u.at(i, j) } else { u.at(i, j + 1) };
        let s = if j == 0 { u.at(i, j) } else { u.at(i, j - 1) };
        [(e - w) / (2.0 * g.h1 * a), (n - s) / (2.0 * g.h2 * a)]
    })
}

fn node_average(
    list: &[(u32, f64)],
    grad: &VectorField,
    w_field: &VectorField,
    m: &ScalarField,
    z: f64,
    lt: f64,
) -> [f64; 2] {
    let mut acc = [0.0f64; 2];
    for &(k, wgt) in list {
        let k = k as usize;
        let gm = grad.data[k];
        let vm = w_field.data[k];
        let wm = wgt * m.data[k];
        acc[0] += (gm[0] - lt * vm[0]) * wm;
        acc[1] += (gm[1] - lt * vm[1]) * wm;
    }
    [-acc[0] / z, -acc[1] / z]
}

/// One application of the average-drift map (Jacobi style: every output reads
/// only `vp`).
pub fn apply_v(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    m_next: &ScalarField,
    vp: &VectorField,
    kernel: &Kernel,
    hp: &HamiltonianParams,
    dp: &DriftParams,
) -> VectorField {
    let grad = central_grad(g, u, hp.a);
    let z = compute_z(kernel, m_next);
    let floor = dp.z_floor_rel * m_next.sum();
    let lt = hp.lam_theta();
    let mut out = VectorField::zeros(g);
    for k in 0..g.n_nodes() {
        if z[k] >= floor && z[k] > 0.0 {
            out.data[k] = node_average(&kernel.neighbors[k], &grad, vp, m_next, z[k], lt);
        }
    }
    out
}

/// L relaxation sweeps of the average-drift map on one time level, starting
/// from `v_prev`.
pub fn solve_fv_level(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    m_next: &ScalarField,
    v_prev: &VectorField,
    kernel: &Kernel,
    hp: &HamiltonianParams,
    dp: &DriftParams,
) -> VectorField {
    let grad = central_grad(g, u, hp.a);
    let z = compute_z(kernel, m_next);
    let floor = dp.z_floor_rel * m_next.sum();
    let lt = hp.lam_theta();
    let mut w = v_prev.clone();
    for _ in 0..dp.l {
        match dp.sweep {
            SweepOrder::Jacobi => {
                let mut next = VectorField::zeros(g);
                for k in 0..g.n_nodes() {
                    if z[k] >= floor && z[k] > 0.0 {
                        next.data[k] = node_average(&kernel.neighbors[k], &grad, &w, m_next, z[k], lt);
                    }
                }
                w = next;
            }
            SweepOrder::GaussSeidel => {
                for k in 0..g.n_nodes() {
                    w.data[k] = if z[k] >= floor && z[k] > 0.0 {
                        node_average(&kernel.neighbors[k], &grad, &w, m_next, z[k], lt)
                    } else {
                        [0.0, 0.0]
                    };
                }
            }
        }
    }
    w
}

/// All time levels of the drift update: level k reads u^k, m^{k+1} and starts
/// from the incoming V^k.
pub fn solve_fv(
    g: &SpaceTimeGrid,
    u_levels: &[ScalarField],
    m_levels: &[ScalarField],
    v_levels: &[VectorField],
    kernel: &Kernel,
    hp: &HamiltonianParams,
    dp: &DriftParams,
) -> Vec<VectorField> {
    (0..g.nt)
        .map(|k| solve_fv_level(g, &u_levels[k], &m_levels[k + 1], &v_levels[k], kernel, hp, dp))
        .collect()
}

/// Optimal feedback law α* = −(∇u/a − λθV) with the central gradient.
pub fn optimal_feedback(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    v: &VectorField,
    hp: &HamiltonianParams,
) -> VectorField {
    let grad = central_grad(g, u, hp.a);
    let lt = hp.lam_theta();
    VectorField::from_fn(g, |i, j| {
        let p = grad.at(i, j);
        let w = v.at(i, j);
        [-(p[0] - lt * w[0]), -(p[1] - lt * w[1])]
    })
}

/// Coupling cost of one level, f̃ = c·m^{k+1} + f₀.
pub fn coupling_f(c: f64, m_next: &ScalarField, f0: &ScalarField) -> ScalarField {
    let mut out = f0.clone();
    out.axpy(c, m_next);
    out
}

/// Exact directional derivative of [`solve_fv_level`]: replays the same
/// sweeps, updating base values and tangents in lockstep, with the quotient
/// rule accounting for m in both the numerator and Z.
#[allow(clippy::too_many_arguments)]
pub fn lin_drift_level(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    m_next: &ScalarField,
    v_prev: &VectorField,
    du: &ScalarField,
    dm_next: &ScalarField,
    dv_prev: &VectorField,
    kernel: &Kernel,
    hp: &HamiltonianParams,
    dp: &DriftParams,
) -> VectorField {
    let grad = central_grad(g, u, hp.a);
    let dgrad = central_grad(g, du, hp.a);
    let z = compute_z(kernel, m_next);
    let dz = compute_z(kernel, dm_next);
    let floor = dp.z_floor_rel * m_next.sum();
    let lt = hp.lam_theta();

    let mut w = v_prev.clone();
    let mut dw = dv_prev.clone();
    let node_pair = |k: usize, w: &VectorField, dw: &VectorField| -> ([f64; 2], [f64; 2]) {
        let mut acc = [0.0f64; 2];
        let mut dacc = [0.0f64; 2];
        for &(n, wgt) in &kernel.neighbors[k] {
            let n = n as usize;
            let gm = grad.data[n];
            let dgm = dgrad.data[n];
            let vm = w.data[n];
            let dvm = dw.data[n];
            let wm = wgt * m_next.data[n];
            let dwm = wgt * dm_next.data[n];
            for c in 0..2 {
                let base = gm[c] - lt * vm[c];
                acc[c] += base * wm;
                dacc[c] += (dgm[c] - lt * dvm[c]) * wm + base * dwm;
            }
        }
        let v = [-acc[0] / z[k], -acc[1] / z[k]];
        let dv = [
            -dacc[0] / z[k] - v[0] * dz[k] / z[k],
            -dacc[1] / z[k] - v[1] * dz[k] / z[k],
        ];
        (v, dv)
    };
    for _ in 0..dp.l {
        match dp.sweep {
            SweepOrder::Jacobi => {
                let mut wn = VectorField::zeros(g);
                let mut dwn = VectorField::zeros(g);
                for k in 0..g.n_nodes() {
                    if z[k] >= floor && z[k] > 0.0 {
                        let (v, dv) = node_pair(k, &w, &dw);
                        wn.data[k] = v;
                        dwn.data[k] = dv;
                    }
                }
                w = wn;
                dw = dwn;
            }
            SweepOrder::GaussSeidel => {
                for k in 0..g.n_nodes() {
                    if z[k] >= floor && z[k] > 0.0 {
                        let (v, dv) = node_pair(k, &w, &dw);
                        w.data[k] = v;
                        dw.data[k] = dv;
                    } else {
                        w.data[k] = [0.0, 0.0];
                        dw.data[k] = [0.0, 0.0];
                    }
                }
            }
        }
    }
    dw
}
