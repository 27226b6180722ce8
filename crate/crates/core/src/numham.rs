//! Numerical Hamiltonian: smoothed positive/negative parts, the Godunov-type
//! upwind gradient map Φ, the node Hamiltonian g, and the discrete transport
//! operator adjoint to the advective part of the HJB linearization.
//!
//! Conventions. For a scalar s,
//!   [s]_+ = max(s, 0),   [s]_- = max(-s, 0),   s = [s]_+ - [s]_-.
//! The upwind map at node (i,j) works on the scaled one-sided slopes
//!   s = (D^+ u)/a − λθ V_face,
//! with the face drift obtained by arithmetic interpolation (clamped at the
//! edges) and the ghost layer of u extended with zero normal derivative:
//!   Φ₁ = [s at face (i+1/2, j)]_-          (right-moving part, ≥ 0)
//!   Φ₂ = −[s at face (i−1/2, j)]_+         (left-moving part, ≤ 0)
//! and likewise Φ₃, Φ₄ along the second axis. The ghost-layer entries of the
//! result (`bc_*`) are the same expressions evaluated one node outside, which
//! with the zero-slope extension of u reduce to brackets of the edge drift.

use crate::grid::{
    d1_plus, d2_plus, extend_neumann, half_index, GhostExtension, QuadField, ScalarField,
    SpaceTimeGrid, VectorField,
};

/// Parameters of the control-interaction Hamiltonian
/// H(p, V) = (a/2)|p/a − λθV|² − a(λ²θ/2)|V|².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianParams {
    pub lambda: f64,
    pub theta: f64,
    /// Kinetic-cost scale; 1 for the plain model, ã/(1−λ²θ) for the
    /// normalized variant.
    pub a: f64,
    /// Bracket smoothing width; 0 gives the exact positive/negative parts.
    pub eps: f64,
}

impl HamiltonianParams {
    pub fn new(lambda: f64, theta: f64) -> Self {
        HamiltonianParams { lambda, theta, a: 1.0, eps: 0.0 }
    }

    #[inline]
    pub fn lam_theta(&self) -> f64 {
        self.lambda * self.theta
    }
}

/// Smoothed positive part: exact `max(v, 0)` for `eps == 0`, otherwise the
/// C¹ regularization `½(e^{−|v|/ε} − 1)ε + [v]_+`, which stays within ε/2 of
/// the exact value.
#[inline]
pub fn plus_eps(v: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        v.max(0.0)
    } else {
        0.5 * eps * ((-v.abs() / eps).exp() - 1.0) + v.max(0.0)
    }
}

/// Smoothed negative part, `plus_eps(v) − v`; equals `max(−v, 0)` for ε = 0.
#[inline]
pub fn minus_eps(v: f64, eps: f64) -> f64 {
    plus_eps(v, eps) - v
}

/// Derivative of [`plus_eps`] with respect to v (taken as 1_{v>0} for ε = 0).
#[inline]
pub fn dplus_eps(v: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        if v > 0.0 {
            1.0
        } else {
            0.0
        }
    } else if v > 0.0 {
        1.0 - 0.5 * (-v / eps).exp()
    } else if v < 0.0 {
        0.5 * (v / eps).exp()
    } else {
        0.5
    }
}

/// Derivative of [`minus_eps`]; `dplus_eps − 1`.
#[inline]
pub fn dminus_eps(v: f64, eps: f64) -> f64 {
    dplus_eps(v, eps) - 1.0
}

/// Upwind gradient map Φ(u, V), including the ghost-layer values used by the
/// transport operator.
pub fn phi(g: &SpaceTimeGrid, u: &ScalarField, v: &VectorField, p: &HamiltonianParams) -> QuadField {
    let ghost = extend_neumann(g, u, &None);
    let d1 = d1_plus(g, u, &ghost);
    let d2 = d2_plus(g, u, &ghost);
    let faces = half_index(g, v);
    let (nx1, nx2) = (g.nx1, g.nx2);
    let lt = p.lam_theta();
    let ia = 1.0 / p.a;

    let mut out = QuadField::zeros(g);
    for i in 0..nx1 {
        for j in 0..nx2 {
            let s_e = d1[(i + 1) * nx2 + j] * ia - lt * faces.f1[(i + 1) * nx2 + j];
            let s_w = d1[i * nx2 + j] * ia - lt * faces.f1[i * nx2 + j];
            let s_n = d2[i * (nx2 + 1) + j + 1] * ia - lt * faces.f2[i * (nx2 + 1) + j + 1];
            let s_s = d2[i * (nx2 + 1) + j] * ia - lt * faces.f2[i * (nx2 + 1) + j];
            out.data[i * nx2 + j] = [
                minus_eps(s_e, p.eps),
                -plus_eps(s_w, p.eps),
                minus_eps(s_n, p.eps),
                -plus_eps(s_s, p.eps),
            ];
        }
    }
    // ghost-layer values: the same brackets evaluated one node outside, where
    // the zero-slope extension kills the difference quotient
    for j in 0..nx2 {
        out.bc_w[j] = minus_eps(d1[j] * ia - lt * faces.f1[j], p.eps);
        out.bc_e[j] = -plus_eps(d1[nx1 * nx2 + j] * ia - lt * faces.f1[nx1 * nx2 + j], p.eps);
    }
    for i in 0..nx1 {
        out.bc_s[i] = minus_eps(d2[i * (nx2 + 1)] * ia - lt * faces.f2[i * (nx2 + 1)], p.eps);
        out.bc_n[i] = -plus_eps(d2[i * (nx2 + 1) + nx2] * ia - lt * faces.f2[i * (nx2 + 1) + nx2], p.eps);
    }
    out
}

/// Directional derivative of [`phi`] at (u, V) in direction (du, dV); `None`
/// stands for a zero tangent.
pub fn dphi(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    v: &VectorField,
    du: Option<&ScalarField>,
    dv: Option<&VectorField>,
    p: &HamiltonianParams,
) -> QuadField {
    let ghost = extend_neumann(g, u, &None);
    let d1 = d1_plus(g, u, &ghost);
    let d2 = d2_plus(g, u, &ghost);
    let faces = half_index(g, v);

    let zero_s;
    let du = match du {
        Some(f) => f,
        None => {
            zero_s = ScalarField::zeros(g);
            &zero_s
        }
    };
    let zero_v;
    let dv = match dv {
        Some(f) => f,
        None => {
            zero_v = VectorField::zeros(g);
            &zero_v
        }
    };
    let dghost = extend_neumann(g, du, &None);
    let dd1 = d1_plus(g, du, &dghost);
    let dd2 = d2_plus(g, du, &dghost);
    let dfaces = half_index(g, dv);

    let (nx1, nx2) = (g.nx1, g.nx2);
    let lt = p.lam_theta();
    let ia = 1.0 / p.a;
    let slope = |d: &[f64], f: &[f64], k: usize| d[k] * ia - lt * f[k];
    let dminus_at = |k: usize, d: &[f64], f: &[f64], dd: &[f64], df: &[f64]| {
        dminus_eps(slope(d, f, k), p.eps) * slope(dd, df, k)
    };
    let dplus_at = |k: usize, d: &[f64], f: &[f64], dd: &[f64], df: &[f64]| {
        dplus_eps(slope(d, f, k), p.eps) * slope(dd, df, k)
    };

    let mut out = QuadField::zeros(g);
    for i in 0..nx1 {
        for j in 0..nx2 {
            let ke = (i + 1) * nx2 + j;
            let kw = i * nx2 + j;
            let kn = i * (nx2 + 1) + j + 1;
            let ks = i * (nx2 + 1) + j;
            out.data[i * nx2 + j] = [
                dminus_at(ke, &d1, &faces.f1, &dd1, &dfaces.f1),
                -dplus_at(kw, &d1, &faces.f1, &dd1, &dfaces.f1),
                dminus_at(kn, &d2, &faces.f2, &dd2, &dfaces.f2),
                -dplus_at(ks, &d2, &faces.f2, &dd2, &dfaces.f2),
            ];
        }
    }
    for j in 0..nx2 {
        out.bc_w[j] = dminus_at(j, &d1, &faces.f1, &dd1, &dfaces.f1);
        out.bc_e[j] = -dplus_at(nx1 * nx2 + j, &d1, &faces.f1, &dd1, &dfaces.f1);
    }
    for i in 0..nx1 {
        out.bc_s[i] = dminus_at(i * (nx2 + 1), &d2, &faces.f2, &dd2, &dfaces.f2);
        out.bc_n[i] = -dplus_at(i * (nx2 + 1) + nx2, &d2, &faces.f2, &dd2, &dfaces.f2);
    }
    out
}

/// Node Hamiltonian g(q, V) = (a/2)|q|² − a(λ²θ/2)|V|² on a bracketed
/// 4-vector q.
#[inline]
pub fn g_num(q: [f64; 4], v: [f64; 2], p: &HamiltonianParams) -> f64 {
    let q2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    let v2 = v[0] * v[0] + v[1] * v[1];
    0.5 * p.a * q2 - 0.5 * p.a * p.lambda * p.lambda * p.theta * v2
}

/// Continuous Hamiltonian H(p, V) = (a/2)|p/a − λθV|² − a(λ²θ/2)|V|².
#[inline]
pub fn hamiltonian(pvec: [f64; 2], v: [f64; 2], p: &HamiltonianParams) -> f64 {
    let lt = p.lam_theta();
    let s1 = pvec[0] / p.a - lt * v[0];
    let s2 = pvec[1] / p.a - lt * v[1];
    let v2 = v[0] * v[0] + v[1] * v[1];
    0.5 * p.a * (s1 * s1 + s2 * s2) - 0.5 * p.a * p.lambda * p.lambda * p.theta * v2
}

/// Gradient H_p(p, V) = p/a − λθV; the optimal feedback is α* = −H_p.
#[inline]
pub fn hamiltonian_grad(pvec: [f64; 2], v: [f64; 2], p: &HamiltonianParams) -> [f64; 2] {
    let lt = p.lam_theta();
    [pvec[0] / p.a - lt * v[0], pvec[1] / p.a - lt * v[1]]
}

/// Discrete transport operator
/// T(q, m)_{ij} = (1/h1)(−q₁m + q₁m|_W + q₂m − q₂m|_E) + (1/h2)(...)
/// reading the ghost layer of both q (its `bc_*` entries) and m.
pub fn transport(
    g: &SpaceTimeGrid,
    q: &QuadField,
    m: &ScalarField,
    m_ghost: &GhostExtension,
) -> ScalarField {
    let (nx1, nx2) = (g.nx1, g.nx2);
    ScalarField::from_fn(g, |i, j| {
        let qc = q.at(i, j);
        let mc = m.at(i, j);
        let (q1w, mw) = if i == 0 {
            (q.bc_w[j], m_ghost.west[j])
        } else {
            (q.at(i - 1, j)[0], m.at(i - 1, j))
        };
        let (q2e, me) = if i == nx1 - 1 {
            (q.bc_e[j], m_ghost.east[j])
        } else {
            (q.at(i + 1, j)[1], m.at(i + 1, j))
        };
        let (q3s, ms) = if j == 0 {
            (q.bc_s[i], m_ghost.south[i])
        } else {
            (q.at(i, j - 1)[2], m.at(i, j - 1))
        };
        let (q4n, mn) = if j == nx2 - 1 {
            (q.bc_n[i], m_ghost.north[i])
        } else {
            (q.at(i, j + 1)[3], m.at(i, j + 1))
        };
        (-qc[0] * mc + q1w * mw + qc[1] * mc - q2e * me) / g.h1
            + (-qc[2] * mc + q3s * ms + qc[3] * mc - q4n * mn) / g.h2
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(n, n, 4, [-0.5, -0.5], [0.5, 0.5], 1.0)
    }

    #[test]
    fn brackets_exact_at_zero_eps() {
        assert_eq!(plus_eps(3.0, 0.0), 3.0);
        assert_eq!(plus_eps(-3.0, 0.0), 0.0);
        assert_eq!(minus_eps(-3.0, 0.0), 3.0);
        assert_eq!(minus_eps(3.0, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn smoothed_bracket_identity_and_error_bound(v in -10.0f64..10.0, eps in 1e-8f64..1e-1) {
            let p = plus_eps(v, eps);
            let m = minus_eps(v, eps);
            prop_assert!((p - m - v).abs() <= 1e-12 * (1.0 + v.abs()));
            prop_assert!((p - v.max(0.0)).abs() <= 0.5 * eps + 1e-15);
            prop_assert!((m - (-v).max(0.0)).abs() <= 0.5 * eps + 1e-15);
        }

        #[test]
        fn h2_consistency(p1 in -5.0f64..5.0, p2 in -5.0f64..5.0,
                          v1 in -5.0f64..5.0, v2 in -5.0f64..5.0,
                          lambda in 0.0f64..1.0, theta in 0.0f64..1.0,
                          a in 0.5f64..10.0) {
            let hp = HamiltonianParams { lambda, theta, a, eps: 0.0 };
            let lt = hp.lam_theta();
            let s1 = p1 / a - lt * v1;
            let s3 = p2 / a - lt * v2;
            // both slots of each pair carry the same one-sided difference
            let q = [minus_eps(s1, 0.0), -plus_eps(s1, 0.0), minus_eps(s3, 0.0), -plus_eps(s3, 0.0)];
            let lhs = g_num(q, [v1, v2], &hp);
            let rhs = hamiltonian([p1, p2], [v1, v2], &hp);
            prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn smoothed_bracket_derivative_matches_fd() {
        let eps = 1e-3;
        for &v in &[-2.0, -1e-4, 3e-4, 0.7] {
            let d = 1e-7;
            let fd = (plus_eps(v + d, eps) - plus_eps(v - d, eps)) / (2.0 * d);
            assert_relative_eq!(dplus_eps(v, eps), fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn phi_vanishes_for_constant_u_zero_drift() {
        let g = grid(6);
        let u = ScalarField::constant(&g, 2.5);
        let v = VectorField::zeros(&g);
        let p = HamiltonianParams::new(0.9, 1.0);
        let q = phi(&g, &u, &v, &p);
        for c in &q.data {
            assert_eq!(*c, [0.0; 4]);
        }
        assert!(q.bc_w.iter().chain(&q.bc_e).chain(&q.bc_s).chain(&q.bc_n).all(|x| *x == 0.0));
    }

    #[test]
    fn phi_boundary_value_reduces_to_edge_drift_bracket() {
        let g = grid(6);
        let u = ScalarField::constant(&g, 1.0);
        let v = VectorField::from_fn(&g, |_, _| [1.0, 0.0]);
        let p = HamiltonianParams::new(0.9, 1.0);
        let q = phi(&g, &u, &v, &p);
        for j in 0..g.nx2 {
            // [λθ·1]_+ west, −[λθ·1]_− = 0 east
            assert_relative_eq!(q.bc_w[j], 0.9, max_relative = 1e-14);
            assert_relative_eq!(q.bc_e[j], 0.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn phi_one_d_slope() {
        let g = grid(6);
        let u = ScalarField::from_fn(&g, |i, j| g.x(i, j)[0]);
        let v = VectorField::zeros(&g);
        let p = HamiltonianParams::new(0.9, 1.0);
        let q = phi(&g, &u, &v, &p);
        for i in 1..g.nx1 - 1 {
            for j in 0..g.nx2 {
                let c = q.at(i, j);
                assert_relative_eq!(c[0], 0.0, epsilon = 1e-13); // [1]_- = 0
                assert_relative_eq!(c[1], -1.0, max_relative = 1e-12); // -[1]_+
            }
        }
    }

    #[test]
    fn g_num_spec_value() {
        let p = HamiltonianParams::new(0.9, 1.0);
        let v = g_num([1.0, 0.0, 0.0, 0.0], [1.0, 0.0], &p);
        assert_relative_eq!(v, 0.095, max_relative = 1e-12);
    }

    #[test]
    fn dphi_matches_finite_differences() {
        let g = grid(7);
        let u = ScalarField::from_fn(&g, |i, j| {
            let [x1, x2] = g.x(i, j);
            (2.0 * x1).sin() + x1 * x2 + 0.618 * x1 - 0.271 * x2
        });
        let v = VectorField::from_fn(&g, |i, j| {
            let [x1, x2] = g.x(i, j);
            [x2.cos() + 0.1, (x1 * 3.0).sin() * 0.5 + 0.05]
        });
        let du = ScalarField::from_fn(&g, |i, j| {
            let [x1, x2] = g.x(i, j);
            x1 * x1 - 0.3 * x2
        });
        let dv = VectorField::from_fn(&g, |i, j| {
            let [x1, x2] = g.x(i, j);
            [0.2 * x1, -0.4 * x2 + 0.1]
        });
        let p = HamiltonianParams { lambda: 0.8, theta: 0.9, a: 1.3, eps: 0.0 };
        let tangent = dphi(&g, &u, &v, Some(&du), Some(&dv), &p);
        let delta = 1e-6;
        let mut up = u.clone();
        up.axpy(delta, &du);
        let mut vp = v.clone();
        for (a, b) in vp.data.iter_mut().zip(&dv.data) {
            a[0] += delta * b[0];
            a[1] += delta * b[1];
        }
        let q0 = phi(&g, &u, &v, &p);
        let q1 = phi(&g, &up, &vp, &p);
        for k in 0..g.n_nodes() {
            for c in 0..4 {
                let fd = (q1.data[k][c] - q0.data[k][c]) / delta;
                assert_relative_eq!(tangent.data[k][c], fd, epsilon = 1e-5);
            }
        }
        for j in 0..g.nx2 {
            let fd = (q1.bc_w[j] - q0.bc_w[j]) / delta;
            assert_relative_eq!(tangent.bc_w[j], fd, epsilon = 1e-5);
        }
    }

    /// Summing T over all nodes telescopes to pure ghost-layer terms.
    #[test]
    fn transport_sum_telescopes_to_boundary() {
        let g = grid(5);
        let mut q = QuadField::zeros(&g);
        let mut seed = 1u64;
        let mut rnd = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for c in q.data.iter_mut() {
            *c = [rnd(), rnd(), rnd(), rnd()];
        }
        for x in q
            .bc_w
            .iter_mut()
            .chain(q.bc_e.iter_mut())
            .chain(q.bc_s.iter_mut())
            .chain(q.bc_n.iter_mut())
        {
            *x = rnd();
        }
        let m = ScalarField::from_fn(&g, |_, _| rnd().abs() + 0.1);
        let mut ghost = GhostExtension::zeros(&g);
        for x in ghost
            .west
            .iter_mut()
            .chain(ghost.east.iter_mut())
            .chain(ghost.south.iter_mut())
            .chain(ghost.north.iter_mut())
        {
            *x = rnd().abs();
        }
        let t = transport(&g, &q, &m, &ghost);
        let total: f64 = t.data.iter().sum();
        let n = g.nx1 - 1;
        let mut expect = 0.0;
        for j in 0..g.nx2 {
            expect += (q.bc_w[j] * ghost.west[j] - q.at(n, j)[0] * m.at(n, j)) / g.h1;
            expect += (q.at(0, j)[1] * m.at(0, j) - q.bc_e[j] * ghost.east[j]) / g.h1;
        }
        for i in 0..g.nx1 {
            expect += (q.bc_s[i] * ghost.south[i] - q.at(i, n)[2] * m.at(i, n)) / g.h2;
            expect += (q.at(i, 0)[3] * m.at(i, 0) - q.bc_n[i] * ghost.north[i]) / g.h2;
        }
        assert_relative_eq!(total, expect, epsilon = 1e-10);
    }
}
