//! Backward HJB sweep. Each time level solves the implicit monotone scheme
//!
//!   R(u) = u − u_next + Δt( −νΔₕu + g(Φ(u, V), V) − f ) = 0
//!
//! by Newton's method; the Jacobian is a five-point M-matrix (nonpositive
//! off-diagonal entries, unit row sums on a pure-Neumann problem), so the
//! banded LU never needs to leave the band. Rows at Dirichlet nodes of u are
//! replaced by the identity.
//!
//! The same assembly, differentiated once more in a direction (du, dV),
//! produces the matrices needed by the linearized HJB and (after transposing)
//! linearized Fokker-Planck solves.

use crate::grid::{
    d1_plus, d2_plus, extend_neumann, half_index, ScalarField, SpaceTimeGrid,
    VectorField,
};
use crate::linalg::{BandedLu, SparseMatrix};
use crate::numham::{
    dminus_eps, dplus_eps, g_num, minus_eps, phi, plus_eps, HamiltonianParams,
};
use crate::SolverError;

/// Dirichlet data for the value function, one optional value per node
/// (`None` everywhere for a pure Neumann problem).
#[derive(Debug, Clone, PartialEq)]
pub struct UBc {
    pub dirichlet: Vec<Option<f64>>,
}

impl UBc {
    pub fn neumann(g: &SpaceTimeGrid) -> Self {
        UBc { dirichlet: vec![None; g.n_nodes()] }
    }

    pub fn is_pure_neumann(&self) -> bool {
        self.dirichlet.iter().all(|d| d.is_none())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HjbConfig {
    /// Max-norm residual tolerance of the per-level Newton solve.
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for HjbConfig {
    fn default() -> Self {
        HjbConfig { newton_tol: 1e-10, max_newton: 50 }
    }
}

/// Second derivative of the smoothed positive part (zero for ε = 0, where
/// the bracket is piecewise linear).
#[inline]
fn pdd_eps(v: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        0.0
    } else {
        0.5 / eps * (-v.abs() / eps).exp()
    }
}

/// Per-level Newton residual R(u) (the implicit backward step equation).
pub fn residual_ru(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    u_next: &ScalarField,
    f: &ScalarField,
    v: &VectorField,
    hp: &HamiltonianParams,
    nu: f64,
    ubc: &UBc,
) -> ScalarField {
    let ghost = extend_neumann(g, u, &None);
    let lap = crate::grid::laplacian5(g, u, &ghost);
    let q = phi(g, u, v, hp);
    let mut out = ScalarField::zeros(g);
    for k in 0..g.n_nodes() {
        out.data[k] = match ubc.dirichlet[k] {
            Some(val) => u.data[k] - val,
            None => {
                u.data[k] - u_next.data[k]
                    + g.dt * (-nu * lap.data[k] + g_num(q.data[k], v.data[k], hp) - f.data[k])
            }
        };
    }
    out
}

/// Scaled one-sided slopes s = (D⁺u)/a − λθ V_face feeding the brackets,
/// in the same face layout as `d1_plus`/`d2_plus`.
fn slopes(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    v: &VectorField,
    hp: &HamiltonianParams,
) -> (Vec<f64>, Vec<f64>) {
    let ghost = extend_neumann(g, u, &None);
    let d1 = d1_plus(g, u, &ghost);
    let d2 = d2_plus(g, u, &ghost);
    let faces = half_index(g, v);
    let lt = hp.lam_theta();
    let ia = 1.0 / hp.a;
    let s1: Vec<f64> = d1.iter().zip(&faces.f1).map(|(d, f)| d * ia - lt * f).collect();
    let s2: Vec<f64> = d2.iter().zip(&faces.f2).map(|(d, f)| d * ia - lt * f).collect();
    (s1, s2)
}

/// Jacobian d_u R of [`residual_ru`] at (u, V).
pub fn assemble_jacobian(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    v: &VectorField,
    hp: &HamiltonianParams,
    nu: f64,
    ubc: &UBc,
) -> SparseMatrix {
    let (s1, s2) = slopes(g, u, v, hp);
    let (nx1, nx2) = (g.nx1, g.nx2);
    let (ih1, ih2) = (1.0 / (g.h1 * g.h1), 1.0 / (g.h2 * g.h2));
    let dt = g.dt;
    let eps = hp.eps;
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(5 * g.n_nodes());
    for i in 0..nx1 {
        for j in 0..nx2 {
            let row = i * nx2 + j;
            if ubc.dirichlet[row].is_some() {
                trip.push((row, row, 1.0));
                continue;
            }
            let mut diag = 1.0;
            // diffusion; ghost neighbors fold into nothing (zero-slope mirror)
            if i + 1 < nx1 {
                diag += dt * nu * ih1;
                trip.push((row, row + nx2, -dt * nu * ih1));
            }
            if i > 0 {
                diag += dt * nu * ih1;
                trip.push((row, row - nx2, -dt * nu * ih1));
            }
            if j + 1 < nx2 {
                diag += dt * nu * ih2;
                trip.push((row, row + 1, -dt * nu * ih2));
            }
            if j > 0 {
                diag += dt * nu * ih2;
                trip.push((row, row - 1, -dt * nu * ih2));
            }
            // upwind advection from the gradient brackets
            if i + 1 < nx1 {
                let s = s1[(i + 1) * nx2 + j];
                let c = minus_eps(s, eps) * dminus_eps(s, eps) / g.h1;
                trip.push((row, row + nx2, dt * c));
                diag -= dt * c;
            }
            if i > 0 {
                let s = s1[i * nx2 + j];
                let c = -plus_eps(s, eps) * dplus_eps(s, eps) / g.h1;
                trip.push((row, row - nx2, dt * c));
                diag -= dt * c;
            }
            if j + 1 < nx2 {
                let s = s2[i * (nx2 + 1) + j + 1];
                let c = minus_eps(s, eps) * dminus_eps(s, eps) / g.h2;
                trip.push((row, row + 1, dt * c));
                diag -= dt * c;
            }
            if j > 0 {
                let s = s2[i * (nx2 + 1) + j];
                let c = -plus_eps(s, eps) * dplus_eps(s, eps) / g.h2;
                trip.push((row, row - 1, dt * c));
                diag -= dt * c;
            }
            trip.push((row, row, diag));
        }
    }
    SparseMatrix::from_triplets(g.n_nodes(), g.n_nodes(), &trip)
}

/// Directional derivative of [`assemble_jacobian`] in direction (du, dV):
/// only the advection entries depend on the state. Transposing this matrix
/// yields the perturbation of the Fokker-Planck step matrix.
pub fn assemble_jacobian_directional(
    g: &SpaceTimeGrid,
    u: &ScalarField,
    v: &VectorField,
    du: Option<&ScalarField>,
    dv: Option<&VectorField>,
    hp: &HamiltonianParams,
    ubc: &UBc,
) -> SparseMatrix {
    let (s1, s2) = slopes(g, u, v, hp);
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
    let lt = hp.lam_theta();
    let ia = 1.0 / hp.a;
    let ds1: Vec<f64> = dd1.iter().zip(&dfaces.f1).map(|(d, f)| d * ia - lt * f).collect();
    let ds2: Vec<f64> = dd2.iter().zip(&dfaces.f2).map(|(d, f)| d * ia - lt * f).collect();

    let (nx1, nx2) = (g.nx1, g.nx2);
    let dt = g.dt;
    let eps = hp.eps;
    // d/ds of (minus_eps(s)·dminus_eps(s)) and (−plus_eps(s)·dplus_eps(s))
    let dminus_pair = |s: f64| dminus_eps(s, eps).powi(2) + minus_eps(s, eps) * pdd_eps(s, eps);
    let dplus_pair = |s: f64| -dplus_eps(s, eps).powi(2) - plus_eps(s, eps) * pdd_eps(s, eps);

    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(4 * g.n_nodes());
    for i in 0..nx1 {
        for j in 0..nx2 {
            let row = i * nx2 + j;
            if ubc.dirichlet[row].is_some() {
                continue;
            }
            if i + 1 < nx1 {
                let k = (i + 1) * nx2 + j;
                let c = dminus_pair(s1[k]) * ds1[k] / g.h1;
                trip.push((row, row + nx2, dt * c));
                trip.push((row, row, -dt * c));
            }
            if i > 0 {
                let k = i * nx2 + j;
                let c = dplus_pair(s1[k]) * ds1[k] / g.h1;
                trip.push((row, row - nx2, dt * c));
                trip.push((row, row, -dt * c));
            }
            if j + 1 < nx2 {
                let k = i * (nx2 + 1) + j + 1;
                let c = dminus_pair(s2[k]) * ds2[k] / g.h2;
                trip.push((row, row + 1, dt * c));
                trip.push((row, row, -dt * c));
            }
            if j > 0 {
                let k = i * (nx2 + 1) + j;
                let c = dplus_pair(s2[k]) * ds2[k] / g.h2;
                trip.push((row, row - 1, dt * c));
                trip.push((row, row, -dt * c));
            }
        }
    }
    SparseMatrix::from_triplets(g.n_nodes(), g.n_nodes(), &trip)
}

/// One implicit backward step: Newton from the next-level value. Returns the
/// solution, the Newton iteration count, and the LU of the Jacobian at the
/// converged state (reused by the Fokker-Planck transpose solve and the
/// linearized sweeps).
#[allow(clippy::too_many_arguments)]
pub fn hjb_step(
    g: &SpaceTimeGrid,
    u_next: &ScalarField,
    f: &ScalarField,
    v: &VectorField,
    hp: &HamiltonianParams,
    nu: f64,
    ubc: &UBc,
    cfg: &HjbConfig,
) -> Result<(ScalarField, usize, BandedLu), SolverError> {
    let mut u = u_next.clone();
    for (k, d) in ubc.dirichlet.iter().enumerate() {
        if let Some(val) = d {
            u.data[k] = *val;
        }
    }
    let mut iters = 0;
    loop {
        let jac = assemble_jacobian(g, &u, v, hp, nu, ubc);
        let lu = BandedLu::factor(&jac)?;
        let r = residual_ru(g, &u, u_next, f, v, hp, nu, ubc);
        let rn = r.linf();
        if rn <= cfg.newton_tol {
            return Ok((u, iters, lu));
        }
        if iters >= cfg.max_newton {
            return Err(SolverError::HjbNewtonStalled { residual: rn, iters });
        }
        let neg_r: Vec<f64> = r.data.iter().map(|x| -x).collect();
        let delta = lu.solve(&neg_r);
        // backtrack across upwind switches: the full step can overshoot a
        // gradient-bracket kink and cycle, so halve until the residual drops
        let mut step = 1.0;
        loop {
            let mut cand = u.clone();
            for (uv, d) in cand.data.iter_mut().zip(&delta) {
                *uv += step * d;
            }
            let rc = residual_ru(g, &cand, u_next, f, v, hp, nu, ubc).linf();
            if rc < rn || step <= 1.0 / 64.0 {
                u = cand;
                break;
            }
            step *= 0.5;
        }
        iters += 1;
    }
}

/// Converged backward sweep state kept for the linearized solves.
pub struct HjbSweep {
    /// nt + 1 levels, index nt holding the terminal condition.
    pub u: Vec<ScalarField>,
    pub lus: Vec<BandedLu>,
    pub newton_iters: usize,
}

/// Backward sweep over all levels with terminal value `u_terminal`.
pub fn solve_hjb(
    g: &SpaceTimeGrid,
    f_levels: &[ScalarField],
    v_levels: &[VectorField],
    u_terminal: &ScalarField,
    hp: &HamiltonianParams,
    nu: f64,
    ubc: &UBc,
    cfg: &HjbConfig,
) -> Result<HjbSweep, SolverError> {
    assert_eq!(f_levels.len(), g.nt);
    assert_eq!(v_levels.len(), g.nt);
    let mut u: Vec<ScalarField> = vec![ScalarField::zeros(g); g.nt + 1];
    u[g.nt] = u_terminal.clone();
    let mut lus: Vec<Option<BandedLu>> = (0..g.nt).map(|_| None).collect();
    let mut total = 0;
    for k in (0..g.nt).rev() {
        let (uk, it, lu) = hjb_step(g, &u[k + 1], &f_levels[k], &v_levels[k], hp, nu, ubc, cfg)?;
        u[k] = uk;
        lus[k] = Some(lu);
        total += it;
    }
    Ok(HjbSweep {
        u,
        lus: lus.into_iter().map(|l| l.unwrap()).collect(),
        newton_iters: total,
    })
}

/// Linearized backward sweep: solves, level by level from dU^{nt} = 0,
///
///   J_k dU^k = dU^{k+1} + Δt( df^k + aλ²θ V·dV − aΦ·dΦ(0, dV) ),
///
/// reusing the factorizations of the converged Jacobians. `None` tangents are
/// zero.
pub fn lin_hjb(
    g: &SpaceTimeGrid,
    sweep: &HjbSweep,
    v_levels: &[VectorField],
    df: Option<&[ScalarField]>,
    dv: Option<&[VectorField]>,
    hp: &HamiltonianParams,
    ubc: &UBc,
) -> Vec<ScalarField> {
    let mut du: Vec<ScalarField> = vec![ScalarField::zeros(g); g.nt + 1];
    for k in (0..g.nt).rev() {
        let mut rhs = du[k + 1].clone();
        if let Some(df) = df {
            rhs.axpy(g.dt, &df[k]);
        }
        if let Some(dv) = dv {
            let q = phi(g, &sweep.u[k], &v_levels[k], hp);
            let dq = crate::numham::dphi(g, &sweep.u[k], &v_levels[k], None, Some(&dv[k]), hp);
            let coef = hp.a * hp.lambda * hp.lambda * hp.theta;
            for n in 0..g.n_nodes() {
                let vdv = v_levels[k].data[n][0] * dv[k].data[n][0]
                    + v_levels[k].data[n][1] * dv[k].data[n][1];
                let qdq: f64 = (0..4).map(|c| q.data[n][c] * dq.data[n][c]).sum();
                rhs.data[n] += g.dt * (coef * vdv - hp.a * qdq);
            }
        }
        for (n, d) in ubc.dirichlet.iter().enumerate() {
            if d.is_some() {
                rhs.data[n] = 0.0;
            }
        }
        let sol = sweep.lus[k].solve(&rhs.data);
        du[k] = ScalarField { nx1: g.nx1, nx2: g.nx2, data: sol };
    }
    du
}
