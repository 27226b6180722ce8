//! Outer fixed-point solver. The unknowns are the coupling cost f and the
//! average drift V on every time level, stacked into one vector of length
//! 3·N·nt. One residual evaluation runs the backward HJB sweep, the forward
//! Fokker-Planck sweep, and the drift relaxation:
//!
//!   G_f = f − (c·m + f₀),      G_V = V − ℱ_V(u, m, V).
//!
//! Newton's method solves A·δ = −G with the exact Jacobian applied
//! matrix-free through the linearized sweeps (the per-level factorizations
//! are reused), and BiCGStab as the inner iteration. Continuation wraps
//! sequences of such solves with warm starts, and the stationary regime is
//! reached by cycling the mid-horizon slice back into the data.

use std::time::Instant;

use crate::drift::{
    coupling_f, lin_drift_level, solve_fv_level, DriftParams, Kernel,
};
use crate::fp::{lin_fp, solve_fp, FpSweep, MBc};
use crate::grid::{ScalarField, SpaceTimeGrid, VectorField};
use crate::hjb::{lin_hjb, solve_hjb, HjbConfig, HjbSweep, UBc};
use crate::linalg::{bicgstab, KrylovConfig};
use crate::numham::HamiltonianParams;
use crate::SolverError;

/// Fully discretized problem: grid, coefficients, data, and boundary
/// conditions for both sweeps.
#[derive(Clone)]
pub struct DiscreteProblem {
    pub grid: SpaceTimeGrid,
    pub nu: f64,
    /// local coupling strength in f̃ = c·m + f₀
    pub c: f64,
    pub ham: HamiltonianParams,
    /// When set, `ham.a` is kept at ã/(1 − λ²θ) under parameter overrides.
    pub a_tilde: Option<f64>,
    pub kernel: Kernel,
    pub drift: DriftParams,
    pub ubc: UBc,
    pub mbc: MBc,
    pub f0: ScalarField,
    pub m0: ScalarField,
    pub u_terminal: ScalarField,
    pub hjb_cfg: HjbConfig,
}

impl DiscreteProblem {
    pub fn set_lambda_theta(&mut self, lambda: f64, theta: f64) {
        self.ham.lambda = lambda;
        self.ham.theta = theta;
        if let Some(at) = self.a_tilde {
            self.ham.a = at / (1.0 - lambda * lambda * theta);
        }
    }
}

/// Outer unknowns, one entry per time level.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterState {
    pub f: Vec<ScalarField>,
    pub v: Vec<VectorField>,
}

impl OuterState {
    pub fn zeros(g: &SpaceTimeGrid) -> Self {
        OuterState {
            f: vec![ScalarField::zeros(g); g.nt],
            v: vec![VectorField::zeros(g); g.nt],
        }
    }

    /// Default initial guess: f from the initial density, no drift.
    pub fn initial_guess(p: &DiscreteProblem) -> Self {
        OuterState {
            f: vec![coupling_f(p.c, &p.m0, &p.f0); p.grid.nt],
            v: vec![VectorField::zeros(&p.grid); p.grid.nt],
        }
    }

    pub fn dof(g: &SpaceTimeGrid) -> usize {
        3 * g.n_nodes() * g.nt
    }

    pub fn pack(&self, g: &SpaceTimeGrid) -> Vec<f64> {
        let n = g.n_nodes();
        let mut out = Vec::with_capacity(Self::dof(g));
        for k in 0..g.nt {
            out.extend_from_slice(&self.f[k].data);
            for v in &self.v[k].data {
                out.push(v[0]);
                out.push(v[1]);
            }
        }
        debug_assert_eq!(out.len(), 3 * n * g.nt);
        out
    }

    pub fn unpack(g: &SpaceTimeGrid, x: &[f64]) -> Self {
        let n = g.n_nodes();
        assert_eq!(x.len(), 3 * n * g.nt);
        let mut st = OuterState::zeros(g);
        for k in 0..g.nt {
            let base = 3 * n * k;
            st.f[k].data.copy_from_slice(&x[base..base + n]);
            for (i, v) in st.v[k].data.iter_mut().enumerate() {
                v[0] = x[base + n + 2 * i];
                v[1] = x[base + n + 2 * i + 1];
            }
        }
        st
    }

    pub fn axpy(&mut self, alpha: f64, other: &OuterState) {
        for (a, b) in self.f.iter_mut().zip(&other.f) {
            a.axpy(alpha, b);
        }
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                x[0] += alpha * y[0];
                x[1] += alpha * y[1];
            }
        }
    }
}

/// Cached sweeps from the last residual evaluation; the factorizations feed
/// the matrix-free Jacobian application.
pub struct OuterBase {
    pub hjb: HjbSweep,
    pub fp: FpSweep,
}

#[derive(Debug, Clone, Copy)]
pub struct OuterConfig {
    /// Normalized Euclidean norm (‖·‖₂/√n) of the stacked residual.
    pub tol_outer: f64,
    pub krylov: KrylovConfig,
    pub max_newton: usize,
    /// Consecutive residual increases before declaring divergence.
    pub divergence_window: usize,
    /// Newton step fraction, 1.0 for the full step.
    pub damping: f64,
    /// Fixed-point passes x ← x − G(x) before the first Newton step; cheap
    /// (no inner solves) and they move a cold start into Newton's basin.
    pub picard_warmup: usize,
}

impl Default for OuterConfig {
    fn default() -> Self {
        OuterConfig {
            tol_outer: 1e-8,
            krylov: KrylovConfig::default(),
            max_newton: 40,
            divergence_window: 3,
            damping: 1.0,
            picard_warmup: 2,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub stage: String,
    pub newton_iters: usize,
    pub bicg_iters: Vec<usize>,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub hjb_newton_total: usize,
    pub seconds: f64,
}

impl SolveReport {
    pub fn avg_bicgstab(&self) -> f64 {
        if self.bicg_iters.is_empty() {
            0.0
        } else {
            self.bicg_iters.iter().sum::<usize>() as f64 / self.bicg_iters.len() as f64
        }
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Runs both sweeps at (f, V) and returns the stacked residual together with
/// the cached base state.
pub fn residual_g(
    p: &DiscreteProblem,
    st: &OuterState,
) -> Result<(Vec<f64>, OuterBase), SolverError> {
    let g = &p.grid;
    let hjb = solve_hjb(g, &st.f, &st.v, &p.u_terminal, &p.ham, p.nu, &p.ubc, &p.hjb_cfg)?;
    let fp = solve_fp(g, &hjb.u[..g.nt], &st.v, &p.m0, &p.ham, p.nu, &p.mbc)?;
    let n = g.n_nodes();
    let mut r = Vec::with_capacity(OuterState::dof(g));
    for k in 0..g.nt {
        let ftilde = coupling_f(p.c, &fp.m[k + 1], &p.f0);
        for i in 0..n {
            r.push(st.f[k].data[i] - ftilde.data[i]);
        }
        let vnew = solve_fv_level(g, &hjb.u[k], &fp.m[k + 1], &st.v[k], &p.kernel, &p.ham, &p.drift);
        for i in 0..n {
            r.push(st.v[k].data[i][0] - vnew.data[i][0]);
            r.push(st.v[k].data[i][1] - vnew.data[i][1]);
        }
    }
    Ok((r, OuterBase { hjb, fp }))
}

/// Matrix-free Jacobian application at the cached base state: runs the
/// linearized backward, forward, and drift sweeps on the packed direction.
pub fn apply_a(
    p: &DiscreteProblem,
    st: &OuterState,
    base: &OuterBase,
    d: &[f64],
    out: &mut [f64],
) {
    let g = &p.grid;
    let n = g.n_nodes();
    let dst = OuterState::unpack(g, d);
    let du = lin_hjb(g, &base.hjb, &st.v, Some(&dst.f), Some(&dst.v), &p.ham, &p.ubc);
    let dm = lin_fp(
        g,
        &base.hjb.u[..g.nt],
        &st.v,
        &base.fp,
        Some(&du[..g.nt]),
        Some(&dst.v),
        &p.ham,
        &p.ubc,
        &p.mbc,
    );
    for k in 0..g.nt {
        let basek = 3 * n * k;
        for i in 0..n {
            out[basek + i] = dst.f[k].data[i] - p.c * dm[k + 1].data[i];
        }
        let dv = lin_drift_level(
            g,
            &base.hjb.u[k],
            &base.fp.m[k + 1],
            &st.v[k],
            &du[k],
            &dm[k + 1],
            &dst.v[k],
            &p.kernel,
            &p.ham,
            &p.drift,
        );
        for i in 0..n {
            out[basek + n + 2 * i] = dst.v[k].data[i][0] - dv.data[i][0];
            out[basek + n + 2 * i + 1] = dst.v[k].data[i][1] - dv.data[i][1];
        }
    }
}

/// Outer Newton iteration from `initial`; returns the solution, the cached
/// sweeps at the solution, and the iteration statistics.
pub fn newton_outer(
    p: &DiscreteProblem,
    initial: &OuterState,
    cfg: &OuterConfig,
) -> Result<(OuterState, OuterBase, SolveReport), SolverError> {
    let start = Instant::now();
    let g = &p.grid;
    let mut st = initial.clone();
    let mut report = SolveReport::default();
    let mut picard_prev = f64::INFINITY;
    let mut picard_keep: Option<OuterState> = None;
    for _ in 0..cfg.picard_warmup {
        let (r, base) = residual_g(p, &st)?;
        report.hjb_newton_total += base.hjb.newton_iters;
        let rn = rms(&r);
        if rn <= cfg.tol_outer {
            break; // let the main loop record and return
        }
        // the fixed-point map need not contract away from the solution; stop
        // warming up as soon as it stops helping, keeping the better iterate
        if rn >= picard_prev {
            if let Some(prev) = picard_keep.take() {
                st = prev;
            }
            break;
        }
        picard_prev = rn;
        picard_keep = Some(st.clone());
        st.axpy(-1.0, &OuterState::unpack(g, &r));
        log::trace!("picard warmup: residual {rn:.3e}");
    }
    let mut increases = 0usize;
    let mut best = f64::INFINITY;
    loop {
        let (r, base) = residual_g(p, &st)?;
        report.hjb_newton_total += base.hjb.newton_iters;
        let rn = rms(&r);
        report.residual_history.push(rn);
        report.final_residual = rn;
        if rn <= cfg.tol_outer {
            report.seconds = start.elapsed().as_secs_f64();
            return Ok((st, base, report));
        }
        if rn > best {
            increases += 1;
            if increases >= cfg.divergence_window {
                return Err(SolverError::OuterDiverged { residual: rn, window: increases });
            }
        } else {
            increases = 0;
            best = rn;
        }
        if report.newton_iters >= cfg.max_newton {
            return Err(SolverError::OuterStalled { residual: rn, iters: report.newton_iters });
        }
        let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
        let x0 = vec![0.0; neg_r.len()];
        let res = bicgstab(
            |x, y| apply_a(p, &st, &base, x, y),
            &neg_r,
            &x0,
            &cfg.krylov,
        )?;
        // a capped inner solve still yields a usable descent direction;
        // accept it and let the outer residual decide. When the Krylov loop
        // made essentially no headway, the direction is noise — fall back to
        // a fixed-point step for this iteration instead.
        report.bicg_iters.push(res.iters);
        log::debug!(
            "outer iter {}: residual {rn:.3e}, bicgstab {} iters (rel {:.2e}, converged {})",
            report.newton_iters,
            res.iters,
            res.rel_residual,
            res.converged
        );
        if !res.converged && res.rel_residual > 0.5 {
            st.axpy(-1.0, &OuterState::unpack(g, &r));
        } else {
            let delta = OuterState::unpack(g, &res.x);
            st.axpy(cfg.damping, &delta);
        }
        report.newton_iters += 1;
    }
}

/// One continuation stage: optional parameter overrides applied on top of
/// the previous stage's problem before re-solving.
#[derive(Debug, Clone, Default)]
pub struct Stage {
    pub name: String,
    pub nu: Option<f64>,
    pub lambda_theta: Option<(f64, f64)>,
    /// Replacement initial density (e.g. a perturbed distribution).
    pub m0: Option<ScalarField>,
    pub tol_outer: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ContinuationSchedule {
    pub stages: Vec<Stage>,
}

impl ContinuationSchedule {
    /// Viscosity descent, one stage per value.
    pub fn nu_descent(values: &[f64]) -> Self {
        ContinuationSchedule {
            stages: values
                .iter()
                .map(|&nu| Stage { name: format!("nu={nu}"), nu: Some(nu), ..Stage::default() })
                .collect(),
        }
    }

    /// Interaction-strength ramp, one stage per (lambda, theta) pair.
    pub fn lambda_theta_ramp(pairs: &[(f64, f64)]) -> Self {
        ContinuationSchedule {
            stages: pairs
                .iter()
                .map(|&(l, t)| Stage {
                    name: format!("lt={l}:{t}"),
                    lambda_theta: Some((l, t)),
                    ..Stage::default()
                })
                .collect(),
        }
    }

    /// Perturbation descent: a family of initial densities indexed by a
    /// decreasing amplitude, the last being the unperturbed one.
    pub fn perturbation_descent(m0s: Vec<(String, ScalarField)>) -> Self {
        ContinuationSchedule {
            stages: m0s
                .into_iter()
                .map(|(name, m0)| Stage { name, m0: Some(m0), ..Stage::default() })
                .collect(),
        }
    }
}

/// Sequential warm-started solves over the schedule. Returns the final state
/// and base plus one report per completed stage; a stage failure carries the
/// partial reports away in the error's stage label.
pub fn continuation(
    p: &DiscreteProblem,
    schedule: &ContinuationSchedule,
    initial: &OuterState,
    cfg: &OuterConfig,
) -> Result<(OuterState, OuterBase, Vec<SolveReport>), SolverError> {
    assert!(!schedule.stages.is_empty());
    let mut prob = p.clone();
    let mut st = initial.clone();
    let mut reports = Vec::new();
    let mut last_base = None;
    for stage in &schedule.stages {
        if let Some(nu) = stage.nu {
            prob.nu = nu;
        }
        if let Some((l, t)) = stage.lambda_theta {
            prob.set_lambda_theta(l, t);
        }
        if let Some(m0) = &stage.m0 {
            prob.m0 = m0.clone();
        }
        let mut scfg = *cfg;
        if let Some(tol) = stage.tol_outer {
            scfg.tol_outer = tol;
        }
        log::debug!("continuation stage {}", stage.name);
        let (s, base, mut rep) = newton_outer(&prob, &st, &scfg).map_err(|e| {
            SolverError::StageFailed { stage: stage.name.clone(), source: Box::new(e) }
        })?;
        rep.stage = stage.name.clone();
        reports.push(rep);
        st = s;
        last_base = Some(base);
    }
    Ok((st, last_base.unwrap(), reports))
}

fn bilinear(g_from: &SpaceTimeGrid, field: &ScalarField, g_to: &SpaceTimeGrid) -> ScalarField {
    ScalarField::from_fn(g_to, |i, j| {
        let [x1, x2] = g_to.x(i, j);
        let s = ((x1 - g_from.x_lo[0]) / g_from.h1).clamp(0.0, (g_from.nx1 - 1) as f64);
        let t = ((x2 - g_from.x_lo[1]) / g_from.h2).clamp(0.0, (g_from.nx2 - 1) as f64);
        let (i0, j0) = (s.floor() as usize, t.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(g_from.nx1 - 1), (j0 + 1).min(g_from.nx2 - 1));
        let (a, b) = (s - i0 as f64, t - j0 as f64);
        (1.0 - a) * (1.0 - b) * field.at(i0, j0)
            + a * (1.0 - b) * field.at(i1, j0)
            + (1.0 - a) * b * field.at(i0, j1)
            + a * b * field.at(i1, j1)
    })
}

/// Warm start for a refined grid: bilinear interpolation in space, linear in
/// time over the level index mapped to [0, T].
pub fn coarse_to_fine_guess(
    g_coarse: &SpaceTimeGrid,
    coarse: &OuterState,
    g_fine: &SpaceTimeGrid,
) -> OuterState {
    let interp_level = |k: usize| -> (usize, usize, f64) {
        if g_fine.nt == 1 || g_coarse.nt == 1 {
            return (0.min(g_coarse.nt - 1), 0.min(g_coarse.nt - 1), 0.0);
        }
        // level k spans [t_k, t_{k+1}); align level starts across grids
        let s = k as f64 * g_fine.dt / g_coarse.dt;
        let k0 = (s.floor() as usize).min(g_coarse.nt - 1);
        let k1 = (k0 + 1).min(g_coarse.nt - 1);
        (k0, k1, (s - k0 as f64).clamp(0.0, 1.0))
    };
    let mut out = OuterState::zeros(g_fine);
    for k in 0..g_fine.nt {
        let (k0, k1, w) = interp_level(k);
        let f0 = bilinear(g_coarse, &coarse.f[k0], g_fine);
        let f1 = bilinear(g_coarse, &coarse.f[k1], g_fine);
        for (o, (a, b)) in out.f[k].data.iter_mut().zip(f0.data.iter().zip(&f1.data)) {
            *o = (1.0 - w) * a + w * b;
        }
        for c in 0..2 {
            let comp0 = ScalarField {
                nx1: g_coarse.nx1,
                nx2: g_coarse.nx2,
                data: coarse.v[k0].data.iter().map(|v| v[c]).collect(),
            };
            let comp1 = ScalarField {
                nx1: g_coarse.nx1,
                nx2: g_coarse.nx2,
                data: coarse.v[k1].data.iter().map(|v| v[c]).collect(),
            };
            let i0 = bilinear(g_coarse, &comp0, g_fine);
            let i1 = bilinear(g_coarse, &comp1, g_fine);
            for (o, (a, b)) in out.v[k].data.iter_mut().zip(i0.data.iter().zip(&i1.data)) {
                o[c] = (1.0 - w) * a + w * b;
            }
        }
    }
    out
}

/// Steady solution extracted from the cycling iteration.
pub struct StationaryResult {
    pub u: ScalarField,
    pub m: ScalarField,
    pub v: VectorField,
    pub cycles: usize,
    /// Final time-variation norm (max spread over levels, u plus m).
    pub variation: f64,
    pub reports: Vec<SolveReport>,
}

/// Max spread across time levels, ‖max_k y − min_k y‖∞.
pub fn level_spread(fields: &[ScalarField]) -> f64 {
    let n = fields[0].data.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for f in fields {
            lo = lo.min(f.data[i]);
            hi = hi.max(f.data[i]);
        }
        worst = worst.max(hi - lo);
    }
    worst
}

/// Cycles finite-horizon solves, feeding the mid-horizon slice back as the
/// terminal value of u and the initial density, until the fields become
/// time-independent.
pub fn stationary_solve(
    p: &DiscreteProblem,
    cfg: &OuterConfig,
    steady_tol: f64,
    max_cycles: usize,
    initial: Option<&OuterState>,
) -> Result<StationaryResult, SolverError> {
    let g = &p.grid;
    let mid = g.nt / 2;
    let mut prob = p.clone();
    let mut st = initial.cloned().unwrap_or_else(|| OuterState::initial_guess(&prob));
    let mut reports = Vec::new();
    let mut variation = f64::INFINITY;
    for cycle in 0..max_cycles {
        let (s, base, mut rep) = newton_outer(&prob, &st, cfg)?;
        rep.stage = format!("cycle {cycle}");
        reports.push(rep);
        variation = level_spread(&base.hjb.u) + level_spread(&base.fp.m);
        if variation <= steady_tol {
            return Ok(StationaryResult {
                u: base.hjb.u[mid].clone(),
                m: base.fp.m[mid].clone(),
                v: st_mid_v(&s, mid),
                cycles: cycle + 1,
                variation,
                reports,
            });
        }
        prob.u_terminal = base.hjb.u[mid].clone();
        prob.m0 = base.fp.m[mid].clone();
        st = s;
    }
    Err(SolverError::StationaryStalled { variation, cycles: max_cycles })
}

fn st_mid_v(s: &OuterState, mid: usize) -> VectorField {
    s.v[mid].clone()
}

/// Residuals of the time-independent system at (u, m, V): the steady HJB
/// equation, the steady Fokker-Planck balance, and the drift fixed point,
/// each in the max norm.
pub fn stationary_residual(
    p: &DiscreteProblem,
    u: &ScalarField,
    m: &ScalarField,
    v: &VectorField,
) -> (f64, f64, f64) {
    let g = &p.grid;
    let ftilde = coupling_f(p.c, m, &p.f0);
    // dropping the time derivative: R_u/Δt with u as its own next level
    let ru = crate::hjb::residual_ru(g, u, u, &ftilde, v, &p.ham, p.nu, &p.ubc);
    let r_u = ru.data.iter().fold(0.0f64, |a, x| a.max(x.abs())) / g.dt;
    let (mat, rhs_const) = crate::fp::assemble_fp(g, u, v, &p.ham, p.nu, &p.mbc);
    let mut mm = vec![0.0; g.n_nodes()];
    mat.matvec(&m.data, &mut mm);
    let mut r_m = 0.0f64;
    for i in 0..g.n_nodes() {
        let steady = if p.mbc.dirichlet[i] {
            mm[i] // identity row: residual is m itself
        } else {
            (mm[i] - m.data[i] - rhs_const[i]) / g.dt
        };
        r_m = r_m.max(steady.abs());
    }
    let vnew = solve_fv_level(g, u, m, v, &p.kernel, &p.ham, &p.drift);
    let mut r_v = 0.0f64;
    for (a, b) in v.data.iter().zip(&vnew.data) {
        r_v = r_v.max((a[0] - b[0]).abs().max((a[1] - b[1]).abs()));
    }
    (r_u, r_m, r_v)
}
