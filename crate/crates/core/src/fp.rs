//! Forward Fokker-Planck sweep. Each implicit step solves
//!
//!   M(u, V) m^{k+1} = m^k + r,
//!
//! where M is assembled directly from the conservative upwind fluxes built on
//! the same brackets Φ(u, V) as the HJB discretization. Ghost unknowns are
//! eliminated through zero-total-flux relations, which makes every boundary
//! face drop out of the matrix entirely; a prescribed inflow only adds the
//! constant Δt·q/h to the right-hand side r. On a pure Neumann problem the
//! assembled M is exactly the transpose of the HJB Jacobian at the same
//! state, so mass is conserved to round-off (unit column sums) and
//! nonnegativity follows from the M-matrix structure.

use crate::grid::{ScalarField, SpaceTimeGrid, VectorField};
use crate::hjb::{assemble_jacobian_directional, UBc};
use crate::linalg::{BandedLu, SparseMatrix};
use crate::numham::{phi, HamiltonianParams};
use crate::SolverError;

/// Condition on one boundary node for the density: zero total flux, or a
/// prescribed flux entering the domain (mass per unit boundary length and
/// time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeCond {
    Neumann,
    Inflow(f64),
}

/// Per-edge-node conditions for the density plus homogeneous Dirichlet flags
/// (absorbing nodes, where m is pinned to zero).
#[derive(Debug, Clone, PartialEq)]
pub struct MBc {
    /// len nx2, indexed by j
    pub west: Vec<EdgeCond>,
    /// len nx2, indexed by j
    pub east: Vec<EdgeCond>,
    /// len nx1, indexed by i
    pub south: Vec<EdgeCond>,
    /// len nx1, indexed by i
    pub north: Vec<EdgeCond>,
    /// len n_nodes, true pins m = 0
    pub dirichlet: Vec<bool>,
}

impl MBc {
    pub fn neumann(g: &SpaceTimeGrid) -> Self {
        MBc {
            west: vec![EdgeCond::Neumann; g.nx2],
            east: vec![EdgeCond::Neumann; g.nx2],
            south: vec![EdgeCond::Neumann; g.nx1],
            north: vec![EdgeCond::Neumann; g.nx1],
            dirichlet: vec![false; g.n_nodes()],
        }
    }
}

/// Step matrix and constant right-hand-side contribution (nonzero only with
/// inflow conditions).
pub fn assemble_fp(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    v: &VectorField,
    hp: &HamiltonianParams,
    nu: f64,
    mbc: &MBc,
) -> (SparseMatrix, Vec<f64>) {
    let q = phi(g, u, v, hp);
    let (nx1, nx2) = (g.nx1, g.nx2);
    let (ih1, ih2) = (1.0 / (g.h1 * g.h1), 1.0 / (g.h2 * g.h2));
    let dt = g.dt;
    let mut rhs = vec![0.0f64; g.n_nodes()];
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(5 * g.n_nodes());
    for i in 0..nx1 {
        for j in 0..nx2 {
            let row = i * nx2 + j;
            if mbc.dirichlet[row] {
                trip.push((row, row, 1.0));
                continue;
            }
            // every term duplicates the float operations of the backward
            // Jacobian assembly so that M = J^T holds to the last bit
            let mut diag = 1.0;
            if i + 1 < nx1 {
                diag += dt * nu * ih1;
                trip.push((row, row + nx2, -dt * nu * ih1));
            } else if let EdgeCond::Inflow(qin) = mbc.east[j] {
                rhs[row] += dt * qin / g.h1;
            }
            if i > 0 {
                diag += dt * nu * ih1;
                trip.push((row, row - nx2, -dt * nu * ih1));
            } else if let EdgeCond::Inflow(qin) = mbc.west[j] {
                rhs[row] += dt * qin / g.h1;
            }
            if j + 1 < nx2 {
                diag += dt * nu * ih2;
                trip.push((row, row + 1, -dt * nu * ih2));
            } else if let EdgeCond::Inflow(qin) = mbc.north[i] {
                rhs[row] += dt * qin / g.h2;
            }
            if j > 0 {
                diag += dt * nu * ih2;
                trip.push((row, row - 1, -dt * nu * ih2));
            } else if let EdgeCond::Inflow(qin) = mbc.south[i] {
                rhs[row] += dt * qin / g.h2;
            }
            if i + 1 < nx1 {
                let c = -q.data[row][0] / g.h1;
                trip.push((row, row + nx2, dt * (q.data[row + nx2][1] / g.h1)));
                diag -= dt * c;
            }
            if i > 0 {
                let c = q.data[row][1] / g.h1;
                trip.push((row, row - nx2, dt * (-q.data[row - nx2][0] / g.h1)));
                diag -= dt * c;
            }
            if j + 1 < nx2 {
                let c = -q.data[row][2] / g.h2;
                trip.push((row, row + 1, dt * (q.data[row + 1][3] / g.h2)));
                diag -= dt * c;
            }
            if j > 0 {
                let c = q.data[row][3] / g.h2;
                trip.push((row, row - 1, dt * (-q.data[row - 1][2] / g.h2)));
                diag -= dt * c;
            }
            trip.push((row, row, diag));
        }
    }
    (SparseMatrix::from_triplets(g.n_nodes(), g.n_nodes(), &trip), rhs)
}

/// One forward step. `rhs_const` and `lu` come from [`assemble_fp`].
pub fn fp_step(
    lu: &BandedLu,
    m_prev: &ScalarField,
    rhs_const: &[f64],
    mbc: &MBc,
) -> ScalarField {
    let rhs: Vec<f64> = m_prev
        .data
        .iter()
        .zip(rhs_const)
        .zip(&mbc.dirichlet)
        .map(|((m, r), &dir)| if dir { 0.0 } else { m + r })
        .collect();
    ScalarField { nx1: m_prev.nx1, nx2: m_prev.nx2, data: lu.solve(&rhs) }
}

/// Converged forward sweep retained for the linearized solves.
pub struct FpSweep {
    /// nt + 1 levels, index 0 holding the initial density.
    pub m: Vec<ScalarField>,
    pub lus: Vec<BandedLu>,
    pub rhs_consts: Vec<Vec<f64>>,
}

/// Forward sweep from `m0` driven by per-level value functions and drifts.
pub fn solve_fp(
    g: &SpaceTimeGrid,
    u_levels: &[ScalarField],
    v_levels: &[VectorField],
    m0: &ScalarField,
    hp: &HamiltonianParams,
    nu: f64,
    mbc: &MBc,
) -> Result<FpSweep, SolverError> {
    assert!(u_levels.len() >= g.nt);
    assert_eq!(v_levels.len(), g.nt);
    let mut m: Vec<ScalarField> = vec![m0.clone(); g.nt + 1];
    let mut lus = Vec::with_capacity(g.nt);
    let mut rhs_consts = Vec::with_capacity(g.nt);
    for k in 0..g.nt {
        let (mat, rc) = assemble_fp(g, &u_levels[k], &v_levels[k], hp, nu, mbc);
        let lu = BandedLu::factor(&mat)?;
        m[k + 1] = fp_step(&lu, &m[k], &rc, mbc);
        lus.push(lu);
        rhs_consts.push(rc);
    }
    Ok(FpSweep { m, lus, rhs_consts })
}

/// Linearized forward sweep. Differentiating M m^{k+1} = m^k + r in a
/// direction (du, dV) gives
///
///   dm^{k+1} = M⁻¹ ( dm^k − (dJ)ᵀ m^{k+1} ),   dm⁰ = 0,
///
/// where dJ is the directional derivative of the HJB advection Jacobian:
/// interior matrix entries of M are exactly the transposed J entries, and
/// eliminated boundary faces contribute constants. Rows at u-Dirichlet nodes
/// of dJ are zero, which drops the state dependence of inflow-edge brackets
/// there; m-Dirichlet rows of M are constant, so dm is pinned to zero.
#[allow(clippy::too_many_arguments)]
pub fn lin_fp(
    g: &SpaceTimeGrid,
    u_levels: &[ScalarField],
    v_levels: &[VectorField],
    fp: &FpSweep,
    du_levels: Option<&[ScalarField]>,
    dv_levels: Option<&[VectorField]>,
    hp: &HamiltonianParams,
    ubc: &UBc,
    mbc: &MBc,
) -> Vec<ScalarField> {
    let mut dm: Vec<ScalarField> = vec![ScalarField::zeros(g); g.nt + 1];
    for k in 0..g.nt {
        let dj = assemble_jacobian_directional(
            g,
            &u_levels[k],
            &v_levels[k],
            du_levels.map(|d| &d[k]),
            dv_levels.map(|d| &d[k]),
            hp,
            ubc,
        );
        let mut rhs = dm[k].data.clone();
        let mut w = vec![0.0; g.n_nodes()];
        dj.matvec_transpose(&fp.m[k + 1].data, &mut w);
        for (r, wi) in rhs.iter_mut().zip(&w) {
            *r -= wi;
        }
        for (r, &dir) in rhs.iter_mut().zip(&mbc.dirichlet) {
            if dir {
                *r = 0.0;
            }
        }
        dm[k + 1] = ScalarField { nx1: g.nx1, nx2: g.nx2, data: fp.lus[k].solve(&rhs) };
    }
    dm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::assemble_jacobian;

    fn grid(n1: usize, n2: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(n1, n2, nt, [-0.5, -0.5], [0.5, 0.5], 1.0)
    }

    fn state(g: &SpaceTimeGrid, seed: f64) -> (ScalarField, VectorField) {
        let u = ScalarField::from_fn(g, |i, j| {
            let [x1, x2] = g.x(i, j);
            (2.0 * x1 + seed).sin() + 0.6 * x1 * x2 - 0.23 * x2
        });
        let v = VectorField::from_fn(g, |i, j| {
            let [x1, x2] = g.x(i, j);
            [0.5 * (x2 + seed).cos() - 0.1, 0.35 * (3.0 * x1).sin() + 0.07]
        });
        (u, v)
    }

    #[test]
    fn step_matrix_is_transposed_hjb_jacobian_on_neumann_problem() {
        let g = grid(8, 8, 4);
        let (u, v) = state(&g, 0.37);
        let hp = HamiltonianParams { lambda: 0.9, theta: 0.95, a: 1.3, eps: 0.0 };
        let nu = 0.07;
        let (m_mat, rhs) = assemble_fp(&g, &u, &v, &hp, nu, &MBc::neumann(&g));
        let jac = assemble_jacobian(&g, &u, &v, &hp, nu, &UBc::neumann(&g));
        assert!(rhs.iter().all(|&r| r == 0.0));
        assert!(m_mat.linf_diff(&jac.transpose()) <= 1e-14);
    }

    #[test]
    fn mass_is_conserved_to_roundoff() {
        let g = grid(12, 9, 8);
        let hp = HamiltonianParams { lambda: 0.9, theta: 1.0, a: 1.0, eps: 0.0 };
        let mbc = MBc::neumann(&g);
        let m0 = ScalarField::from_fn(&g, |i, j| {
            let [x1, x2] = g.x(i, j);
            (-(x1 * x1 + x2 * x2) / 0.05).exp() + 1e-4
        });
        let us: Vec<ScalarField> = (0..g.nt).map(|k| state(&g, 0.1 * k as f64).0).collect();
        let vs: Vec<VectorField> = (0..g.nt).map(|k| state(&g, 0.1 * k as f64).1).collect();
        let fp = solve_fp(&g, &us, &vs, &m0, &hp, 0.02, &mbc).unwrap();
        let total0 = m0.sum() * g.cell_area();
        for k in 1..=g.nt {
            let t = fp.m[k].sum() * g.cell_area();
            assert!(
                ((t - total0) / total0).abs() < 1e-13,
                "level {k}: mass {t} vs {total0}"
            );
        }
    }

    #[test]
    fn density_stays_nonnegative() {
        let g = grid(10, 10, 10);
        let hp = HamiltonianParams { lambda: 0.95, theta: 0.95, a: 1.0, eps: 0.0 };
        let mbc = MBc::neumann(&g);
        // concentrated blob plus strong drift toward a corner
        let m0 = ScalarField::from_fn(&g, |i, j| {
            let [x1, x2] = g.x(i, j);
            if x1 < -0.2 && x2 < -0.2 { 5.0 } else { 0.0 }
        });
        let u = ScalarField::from_fn(&g, |i, j| {
            let [x1, x2] = g.x(i, j);
            -3.0 * (x1 + x2)
        });
        let us = vec![u; g.nt];
        let vs = vec![VectorField::zeros(&g); g.nt];
        let fp = solve_fp(&g, &us, &vs, &m0, &hp, 0.001, &mbc).unwrap();
        for k in 0..=g.nt {
            let min = fp.m[k].data.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-14, "level {k}: min {min}");
        }
    }

    #[test]
    fn uniform_density_is_stationary_without_drift() {
        let g = grid(9, 7, 5);
        let hp = HamiltonianParams::new(0.5, 0.5);
        let mbc = MBc::neumann(&g);
        let m0 = ScalarField::constant(&g, 0.8);
        let us = vec![ScalarField::zeros(&g); g.nt];
        let vs = vec![VectorField::zeros(&g); g.nt];
        let fp = solve_fp(&g, &us, &vs, &m0, &hp, 0.3, &mbc).unwrap();
        assert!(fp.m[g.nt].linf_diff(&m0) < 1e-13);
    }

    #[test]
    fn inflow_adds_prescribed_mass_per_step() {
        let g = grid(11, 6, 4);
        let hp = HamiltonianParams::new(0.9, 0.95);
        let mut mbc = MBc::neumann(&g);
        let qin = 2.0;
        let gate: Vec<usize> = (1..4).collect();
        for &j in &gate {
            mbc.west[j] = EdgeCond::Inflow(qin);
        }
        let m0 = ScalarField::constant(&g, 1e-4);
        let (u, v) = state(&g, 0.2);
        let us = vec![u; g.nt];
        let vs = vec![v; g.nt];
        let fp = solve_fp(&g, &us, &vs, &m0, &hp, 0.05, &mbc).unwrap();
        let expected_gain = g.dt * qin * g.h2 * gate.len() as f64;
        for k in 0..g.nt {
            let gain = (fp.m[k + 1].sum() - fp.m[k].sum()) * g.cell_area();
            assert!(
                (gain - expected_gain).abs() < 1e-13 * (1.0 + expected_gain),
                "step {k}: gained {gain}, expected {expected_gain}"
            );
        }
    }

    #[test]
    fn absorbing_nodes_pin_density_to_zero_and_drain_mass() {
        let g = grid(11, 6, 6);
        let hp = HamiltonianParams::new(0.9, 0.95);
        let mut mbc = MBc::neumann(&g);
        for j in 0..g.nx2 {
            mbc.dirichlet[g.idx(g.nx1 - 1, j)] = true;
        }
        let m0 = ScalarField::constant(&g, 1.0);
        // drift pushing mass toward the absorbing east edge
        let u = ScalarField::from_fn(&g, |i, j| {
            let [x1, _] = g.x(i, j);
            -2.0 * x1
        });
        let us = vec![u; g.nt];
        let vs = vec![VectorField::zeros(&g); g.nt];
        let fp = solve_fp(&g, &us, &vs, &m0, &hp, 0.01, &mbc).unwrap();
        for k in 1..=g.nt {
            for j in 0..g.nx2 {
                assert_eq!(fp.m[k].at(g.nx1 - 1, j), 0.0);
            }
            assert!(fp.m[k].sum() < fp.m[k - 1].sum());
            let min = fp.m[k].data.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= 0.0);
        }
    }

    #[test]
    fn lin_fp_matches_finite_differences() {
        let g = grid(7, 6, 5);
        let hp = HamiltonianParams { lambda: 0.8, theta: 0.9, a: 1.1, eps: 0.0 };
        let nu = 0.05;
        let ubc = UBc::neumann(&g);
        let mbc = MBc::neumann(&g);
        let m0 = ScalarField::from_fn(&g, |i, j| {
            let [x1, x2] = g.x(i, j);
            1.0 + 0.5 * (3.0 * x1).sin() * (2.0 * x2).cos()
        });
        let us: Vec<ScalarField> = (0..g.nt).map(|k| state(&g, 0.15 * k as f64).0).collect();
        let vs: Vec<VectorField> = (0..g.nt).map(|k| state(&g, 0.15 * k as f64).1).collect();
        let fp = solve_fp(&g, &us, &vs, &m0, &hp, nu, &mbc).unwrap();
        let dus: Vec<ScalarField> = (0..g.nt)
            .map(|k| {
                ScalarField::from_fn(&g, |i, j| {
                    let [x1, x2] = g.x(i, j);
                    0.3 * x1 * x1 - 0.2 * x2 + 0.04 * k as f64
                })
            })
            .collect();
        let dvs: Vec<VectorField> = (0..g.nt)
            .map(|_| {
                VectorField::from_fn(&g, |i, j| {
                    let [x1, x2] = g.x(i, j);
                    [0.15 * x2 + 0.02, -0.1 * x1 + 0.03]
                })
            })
            .collect();
        let dm = lin_fp(&g, &us, &vs, &fp, Some(&dus), Some(&dvs), &hp, &ubc, &mbc);
        let delta = 1e-6;
        let up: Vec<ScalarField> = us
            .iter()
            .zip(&dus)
            .map(|(u, d)| {
                let mut u = u.clone();
                u.axpy(delta, d);
                u
            })
            .collect();
        let vp: Vec<VectorField> = vs
            .iter()
            .zip(&dvs)
            .map(|(v, d)| {
                let mut v = v.clone();
                for (a, b) in v.data.iter_mut().zip(&d.data) {
                    a[0] += delta * b[0];
                    a[1] += delta * b[1];
                }
                v
            })
            .collect();
        let fp_p = solve_fp(&g, &up, &vp, &m0, &hp, nu, &mbc).unwrap();
        for k in 0..=g.nt {
            for n in 0..g.n_nodes() {
                let fd = (fp_p.m[k].data[n] - fp.m[k].data[n]) / delta;
                assert!(
                    (dm[k].data[n] - fd).abs() < 5e-5,
                    "level {k} node {n}: {} vs {fd}",
                    dm[k].data[n]
                );
            }
        }
    }
}
