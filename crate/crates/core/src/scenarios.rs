//! Concrete problem definitions: the corner-targets game on a square (with
//! its symmetric data and perturbation families), the hall problem with an
//! entrance and an exit (constant-cost and queue variants), the closed-form
//! one-shot one-dimensional game used as an oracle, and a flat key = value
//! configuration format for the CLI.

use crate::drift::{DriftParams, Kernel, KernelShape, KernelVariant, SweepOrder};
use crate::fp::{EdgeCond, MBc};
use crate::grid::{ScalarField, SpaceTimeGrid};
use crate::hjb::{HjbConfig, UBc};
use crate::linalg::KrylovConfig;
use crate::numham::HamiltonianParams;
use crate::outer::{DiscreteProblem, OuterConfig};
use crate::SolverError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AMode {
    /// a = 1
    Unit,
    /// a = ã / (1 − λ²θ)
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub enum M0Kind {
    Constant { value: f64 },
    /// Mass in the top-right and bottom-left corner squares over a small
    /// background, normalized to unit total mass.
    CornerSquares { value: f64, size: f64, background: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhiKind {
    Zero,
    /// Low value in the top-left and bottom-right corner squares, high
    /// elsewhere.
    TargetSquares { low: f64, high: f64, size: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum F0Kind {
    Constant { value: f64 },
    /// f₀ = factor · φ
    ScaledPhi { factor: f64 },
    /// Piecewise ramp in x₁: 4 for x₁ ≤ −0.1, 1 for x₁ ≥ 0.1, 2.5 − 15·x₁
    /// between.
    Ramp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BcKind {
    Neumann,
    /// Entrance gate on the west edge (Dirichlet u, prescribed influx),
    /// exit gate on the east edge (Dirichlet u, absorbing m), walls
    /// elsewhere. Gates span |x₂| ≤ gate_half.
    Hall { entrance_u: f64, exit_u: f64, inflow: f64, gate_half: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub x_lo: [f64; 2],
    pub x_hi: [f64; 2],
    pub nx1: usize,
    pub nx2: usize,
    pub nt: usize,
    pub horizon: f64,
    pub nu: f64,
    pub lambda: f64,
    pub theta: f64,
    pub c: f64,
    pub eps: f64,
    pub a_mode: AMode,
    pub a_tilde: f64,
    pub kernel_variant: KernelVariant,
    pub rho: f64,
    pub omega0: f64,
    pub drift_sweeps: usize,
    pub drift_order: SweepOrder,
    pub z_floor_rel: f64,
    pub m0: M0Kind,
    pub phi: PhiKind,
    pub f0: F0Kind,
    pub bc: BcKind,
    pub tol_outer: f64,
    pub tol_inner: f64,
    pub max_inner: usize,
    pub max_newton: usize,
    pub hjb_tol: f64,
}

/// Corner-targets game on (−0.5, 0.5)²: symmetric data, radial kernel, pure
/// Neumann boundary.
pub fn example1() -> ScenarioConfig {
    ScenarioConfig {
        x_lo: [-0.5, -0.5],
        x_hi: [0.5, 0.5],
        nx1: 26,
        nx2: 26,
        nt: 26,
        horizon: 1.0,
        nu: 1e-3,
        lambda: 0.9,
        theta: 1.0,
        c: 1e-3,
        eps: 0.0,
        a_mode: AMode::Unit,
        a_tilde: 1.0,
        kernel_variant: KernelVariant::Radial,
        rho: 0.2,
        omega0: 0.0,
        drift_sweeps: 1,
        drift_order: SweepOrder::GaussSeidel,
        z_floor_rel: 1e-12,
        m0: M0Kind::CornerSquares { value: 10.0, size: 0.2, background: 1e-4 },
        phi: PhiKind::TargetSquares { low: 0.0, high: 1.0, size: 0.2 },
        f0: F0Kind::ScaledPhi { factor: 0.1 },
        bc: BcKind::Neumann,
        tol_outer: 1e-8,
        tol_inner: 1e-7,
        max_inner: 400,
        max_newton: 40,
        hjb_tol: 1e-10,
    }
}

/// Hall problem on (−1, 1)×(−0.1, 0.1) with a west entrance and an east
/// exit, cone kernel, constant running cost f₀ = 1.
pub fn example2_constant() -> ScenarioConfig {
    ScenarioConfig {
        x_lo: [-1.0, -0.1],
        x_hi: [1.0, 0.1],
        nx1: 101,
        nx2: 21,
        nt: 101,
        horizon: 8.0,
        nu: 1e-3,
        lambda: 0.5,
        theta: 0.5,
        c: 0.0,
        eps: 0.0,
        a_mode: AMode::Normalized,
        a_tilde: 2.0,
        kernel_variant: KernelVariant::Cone,
        rho: 0.25,
        omega0: std::f64::consts::FRAC_PI_3,
        drift_sweeps: 1,
        drift_order: SweepOrder::GaussSeidel,
        z_floor_rel: 1e-12,
        m0: M0Kind::Constant { value: 1e-4 },
        phi: PhiKind::Zero,
        f0: F0Kind::Constant { value: 1.0 },
        bc: BcKind::Hall { entrance_u: 6.0, exit_u: -4.0, inflow: 2.0, gate_half: 0.05 },
        tol_outer: 1e-8,
        tol_inner: 1e-7,
        max_inner: 400,
        max_newton: 40,
        hjb_tol: 1e-10,
    }
}

/// Hall problem with the spatial cost ramp that makes the left half more
/// expensive to occupy (queue formation).
pub fn example2_queue() -> ScenarioConfig {
    let mut cfg = example2_constant();
    cfg.lambda = 0.95;
    cfg.theta = 0.95;
    cfg.f0 = F0Kind::Ramp;
    cfg
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let err = |m: String| Err(SolverError::InvalidScenario(m));
        if self.nx1 < 2 || self.nx2 < 2 || self.nt < 1 {
            return err(format!("grid too small: {}x{}x{}", self.nx1, self.nx2, self.nt));
        }
        if self.x_hi[0] <= self.x_lo[0] || self.x_hi[1] <= self.x_lo[1] {
            return err("empty domain".into());
        }
        if self.horizon <= 0.0 || self.nu <= 0.0 {
            return err(format!("need positive horizon and viscosity, got T={} nu={}", self.horizon, self.nu));
        }
        if self.lambda.abs() >= 1.0 {
            return err(format!("lambda must satisfy |lambda| < 1, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return err(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if self.a_mode == AMode::Normalized && self.lambda * self.lambda * self.theta >= 1.0 {
            return err("normalization requires lambda^2 * theta < 1".into());
        }
        let extent = (self.x_hi[0] - self.x_lo[0]).max(self.x_hi[1] - self.x_lo[1]);
        if self.rho <= 0.0 || self.rho >= extent {
            return err(format!("kernel radius {} outside (0, {extent})", self.rho));
        }
        if self.drift_sweeps == 0 {
            return err("drift.sweeps must be at least 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> SpaceTimeGrid {
        SpaceTimeGrid::new(self.nx1, self.nx2, self.nt, self.x_lo, self.x_hi, self.horizon)
    }

    pub fn hamiltonian(&self) -> HamiltonianParams {
        let a = match self.a_mode {
            AMode::Unit => 1.0,
            AMode::Normalized => self.a_tilde / (1.0 - self.lambda * self.lambda * self.theta),
        };
        HamiltonianParams { lambda: self.lambda, theta: self.theta, a, eps: self.eps }
    }

    fn in_square(x: [f64; 2], lo: [f64; 2], size: f64) -> bool {
        let tol = 1e-12;
        x[0] >= lo[0] - tol && x[0] <= lo[0] + size + tol && x[1] >= lo[1] - tol && x[1] <= lo[1] + size + tol
    }

    pub fn phi_field(&self, g: &SpaceTimeGrid) -> ScalarField {
        match self.phi {
            PhiKind::Zero => ScalarField::zeros(g),
            PhiKind::TargetSquares { low, high, size } => ScalarField::from_fn(g, |i, j| {
                let x = g.x(i, j);
                let top_left = Self::in_square(x, [self.x_lo[0], self.x_hi[1] - size], size);
                let bottom_right = Self::in_square(x, [self.x_hi[0] - size, self.x_lo[1]], size);
                if top_left || bottom_right {
                    low
                } else {
                    high
                }
            }),
        }
    }

    pub fn f0_field(&self, g: &SpaceTimeGrid) -> ScalarField {
        match self.f0 {
            F0Kind::Constant { value } => ScalarField::constant(g, value),
            F0Kind::ScaledPhi { factor } => {
                let mut phi = self.phi_field(g);
                phi.scale(factor);
                phi
            }
            F0Kind::Ramp => ScalarField::from_fn(g, |i, j| {
                let x1 = g.x(i, j)[0];
                if x1 <= -0.1 {
                    4.0
                } else if x1 >= 0.1 {
                    1.0
                } else {
                    2.5 - 15.0 * x1
                }
            }),
        }
    }

    pub fn m0_field(&self, g: &SpaceTimeGrid) -> ScalarField {
        match self.m0 {
            M0Kind::Constant { value } => ScalarField::constant(g, value),
            M0Kind::CornerSquares { value, size, background } => {
                let mut m = ScalarField::from_fn(g, |i, j| {
                    let x = g.x(i, j);
                    let top_right =
                        Self::in_square(x, [self.x_hi[0] - size, self.x_hi[1] - size], size);
                    let bottom_left = Self::in_square(x, self.x_lo, size);
                    if top_right || bottom_left {
                        value
                    } else {
                        background
                    }
                });
                let total = m.sum() * g.cell_area();
                m.scale(1.0 / total);
                m
            }
        }
    }

    fn boundary_conditions(&self, g: &SpaceTimeGrid) -> (UBc, MBc) {
        let mut ubc = UBc::neumann(g);
        let mut mbc = MBc::neumann(g);
        if let BcKind::Hall { entrance_u, exit_u, inflow, gate_half } = self.bc {
            for j in 0..g.nx2 {
                let x2 = g.x(0, j)[1];
                if x2.abs() <= gate_half + 1e-12 {
                    ubc.dirichlet[g.idx(0, j)] = Some(entrance_u);
                    mbc.west[j] = EdgeCond::Inflow(inflow);
                    ubc.dirichlet[g.idx(g.nx1 - 1, j)] = Some(exit_u);
                    mbc.dirichlet[g.idx(g.nx1 - 1, j)] = true;
                }
            }
        }
        (ubc, mbc)
    }

    pub fn outer_config(&self) -> OuterConfig {
        OuterConfig {
            tol_outer: self.tol_outer,
            krylov: KrylovConfig { rel_tol: self.tol_inner, max_iters: self.max_inner },
            max_newton: self.max_newton,
            ..OuterConfig::default()
        }
    }

    pub fn build(&self) -> Result<DiscreteProblem, SolverError> {
        self.validate()?;
        let g = self.grid();
        let ham = self.hamiltonian();
        let kernel = Kernel::build(
            &g,
            KernelShape { variant: self.kernel_variant, rho: self.rho, omega0: self.omega0 },
        );
        let (ubc, mbc) = self.boundary_conditions(&g);
        let phi = self.phi_field(&g);
        let f0 = self.f0_field(&g);
        let m0 = self.m0_field(&g);
        Ok(DiscreteProblem {
            nu: self.nu,
            c: self.c,
            ham,
            a_tilde: match self.a_mode {
                AMode::Unit => None,
                AMode::Normalized => Some(self.a_tilde),
            },
            kernel,
            drift: DriftParams {
                l: self.drift_sweeps,
                sweep: self.drift_order,
                z_floor_rel: self.z_floor_rel,
            },
            ubc,
            mbc,
            f0,
            m0,
            u_terminal: phi,
            hjb_cfg: HjbConfig { newton_tol: self.hjb_tol, max_newton: 50 },
            grid: g,
        })
    }

    /// Generic setter for the flat key schema (used by file parsing and CLI
    /// overrides).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SolverError> {
        let bad = |what: &str| {
            SolverError::InvalidScenario(format!("bad value '{value}' for {what} '{key}'"))
        };
        let fval = || value.parse::<f64>().map_err(|_| bad("number key"));
        let uval = || value.parse::<usize>().map_err(|_| bad("integer key"));
        match key {
            "preset" => {
                *self = match value {
                    "example1" => example1(),
                    "example2_constant" => example2_constant(),
                    "example2_queue" => example2_queue(),
                    _ => return Err(bad("preset")),
                }
            }
            "domain.x1_lo" => self.x_lo[0] = fval()?,
            "domain.x1_hi" => self.x_hi[0] = fval()?,
            "domain.x2_lo" => self.x_lo[1] = fval()?,
            "domain.x2_hi" => self.x_hi[1] = fval()?,
            "grid.nx1" => self.nx1 = uval()?,
            "grid.nx2" => self.nx2 = uval()?,
            "grid.nt" => self.nt = uval()?,
            "time.horizon" => self.horizon = fval()?,
            "model.nu" => self.nu = fval()?,
            "model.lambda" => self.lambda = fval()?,
            "model.theta" => self.theta = fval()?,
            "model.c" => self.c = fval()?,
            "model.eps" => self.eps = fval()?,
            "model.a_mode" => {
                self.a_mode = match value {
                    "unit" => AMode::Unit,
                    "normalized" => AMode::Normalized,
                    _ => return Err(bad("a_mode")),
                }
            }
            "model.a_tilde" => self.a_tilde = fval()?,
            "kernel.variant" => {
                self.kernel_variant = match value {
                    "radial" => KernelVariant::Radial,
                    "cone" => KernelVariant::Cone,
                    _ => return Err(bad("kernel variant")),
                }
            }
            "kernel.rho" => self.rho = fval()?,
            "kernel.omega0" => self.omega0 = fval()?,
            "drift.sweeps" => self.drift_sweeps = uval()?,
            "drift.order" => {
                self.drift_order = match value {
                    "gauss_seidel" => SweepOrder::GaussSeidel,
                    "jacobi" => SweepOrder::Jacobi,
                    _ => return Err(bad("sweep order")),
                }
            }
            "drift.z_floor_rel" => self.z_floor_rel = fval()?,
            "m0.kind" => {
                self.m0 = match value {
                    "constant" => M0Kind::Constant { value: 1e-4 },
                    "corner_squares" => {
                        M0Kind::CornerSquares { value: 10.0, size: 0.2, background: 1e-4 }
                    }
                    _ => return Err(bad("m0 kind")),
                }
            }
            "m0.value" => match &mut self.m0 {
                M0Kind::Constant { value } | M0Kind::CornerSquares { value, .. } => {
                    *value = fval()?
                }
            },
            "m0.size" => match &mut self.m0 {
                M0Kind::CornerSquares { size, .. } => *size = fval()?,
                _ => return Err(bad("m0.size on non-square m0")),
            },
            "m0.background" => match &mut self.m0 {
                M0Kind::CornerSquares { background, .. } => *background = fval()?,
                _ => return Err(bad("m0.background on non-square m0")),
            },
            "phi.kind" => {
                self.phi = match value {
                    "zero" => PhiKind::Zero,
                    "target_squares" => PhiKind::TargetSquares { low: 0.0, high: 1.0, size: 0.2 },
                    _ => return Err(bad("phi kind")),
                }
            }
            "phi.low" => match &mut self.phi {
                PhiKind::TargetSquares { low, .. } => *low = fval()?,
                _ => return Err(bad("phi.low on zero phi")),
            },
            "phi.high" => match &mut self.phi {
                PhiKind::TargetSquares { high, .. } => *high = fval()?,
                _ => return Err(bad("phi.high on zero phi")),
            },
            "phi.size" => match &mut self.phi {
                PhiKind::TargetSquares { size, .. } => *size = fval()?,
                _ => return Err(bad("phi.size on zero phi")),
            },
            "f0.kind" => {
                self.f0 = match value {
                    "constant" => F0Kind::Constant { value: 1.0 },
                    "scaled_phi" => F0Kind::ScaledPhi { factor: 0.1 },
                    "ramp" => F0Kind::Ramp,
                    _ => return Err(bad("f0 kind")),
                }
            }
            "f0.value" => match &mut self.f0 {
                F0Kind::Constant { value } => *value = fval()?,
                _ => return Err(bad("f0.value on non-constant f0")),
            },
            "f0.factor" => match &mut self.f0 {
                F0Kind::ScaledPhi { factor } => *factor = fval()?,
                _ => return Err(bad("f0.factor on non-scaled f0")),
            },
            "bc.kind" => {
                self.bc = match value {
                    "neumann" => BcKind::Neumann,
                    "hall" => BcKind::Hall {
                        entrance_u: 6.0,
                        exit_u: -4.0,
                        inflow: 2.0,
                        gate_half: 0.05,
                    },
                    _ => return Err(bad("bc kind")),
                }
            }
            "bc.entrance_u" | "bc.exit_u" | "bc.inflow" | "bc.gate_half" => match &mut self.bc {
                BcKind::Hall { entrance_u, exit_u, inflow, gate_half } => {
                    let v = fval()?;
                    match key {
                        "bc.entrance_u" => *entrance_u = v,
                        "bc.exit_u" => *exit_u = v,
                        "bc.inflow" => *inflow = v,
                        _ => *gate_half = v,
                    }
                }
                BcKind::Neumann => return Err(bad("hall key on neumann bc")),
            },
            "solver.tol_outer" => self.tol_outer = fval()?,
            "solver.tol_inner" => self.tol_inner = fval()?,
            "solver.max_inner" => self.max_inner = uval()?,
            "solver.max_newton" => self.max_newton = uval()?,
            "solver.hjb_tol" => self.hjb_tol = fval()?,
            _ => {
                return Err(SolverError::InvalidScenario(format!("unknown key '{key}'")));
            }
        }
        Ok(())
    }

    /// Parses the flat format: one `key = value` per line, `#` comments.
    /// An optional `preset = ...` line (applied first regardless of
    /// position) selects the baseline; keys override it in file order.
    pub fn parse(text: &str) -> Result<ScenarioConfig, SolverError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SolverError::InvalidScenario(format!("line {}: expected key = value", lineno + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = example1();
        if let Some((_, preset)) = pairs.iter().find(|(k, _)| k == "preset") {
            cfg.set("preset", preset)?;
        }
        for (k, v) in &pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("domain.x1_lo", format!("{}", self.x_lo[0]));
        kv("domain.x1_hi", format!("{}", self.x_hi[0]));
        kv("domain.x2_lo", format!("{}", self.x_lo[1]));
        kv("domain.x2_hi", format!("{}", self.x_hi[1]));
        kv("grid.nx1", format!("{}", self.nx1));
        kv("grid.nx2", format!("{}", self.nx2));
        kv("grid.nt", format!("{}", self.nt));
        kv("time.horizon", format!("{}", self.horizon));
        kv("model.nu", format!("{}", self.nu));
        kv("model.lambda", format!("{}", self.lambda));
        kv("model.theta", format!("{}", self.theta));
        kv("model.c", format!("{}", self.c));
        kv("model.eps", format!("{}", self.eps));
        kv(
            "model.a_mode",
            match self.a_mode {
                AMode::Unit => "unit".into(),
                AMode::Normalized => "normalized".into(),
            },
        );
        kv("model.a_tilde", format!("{}", self.a_tilde));
        kv(
            "kernel.variant",
            match self.kernel_variant {
                KernelVariant::Radial => "radial".into(),
                KernelVariant::Cone => "cone".into(),
            },
        );
        kv("kernel.rho", format!("{}", self.rho));
        kv("kernel.omega0", format!("{}", self.omega0));
        kv("drift.sweeps", format!("{}", self.drift_sweeps));
        kv(
            "drift.order",
            match self.drift_order {
                SweepOrder::GaussSeidel => "gauss_seidel".into(),
                SweepOrder::Jacobi => "jacobi".into(),
            },
        );
        kv("drift.z_floor_rel", format!("{}", self.z_floor_rel));
        match self.m0 {
            M0Kind::Constant { value } => {
                kv("m0.kind", "constant".into());
                kv("m0.value", format!("{value}"));
            }
            M0Kind::CornerSquares { value, size, background } => {
                kv("m0.kind", "corner_squares".into());
                kv("m0.value", format!("{value}"));
                kv("m0.size", format!("{size}"));
                kv("m0.background", format!("{background}"));
            }
        }
        match self.phi {
            PhiKind::Zero => kv("phi.kind", "zero".into()),
            PhiKind::TargetSquares { low, high, size } => {
                kv("phi.kind", "target_squares".into());
                kv("phi.low", format!("{low}"));
                kv("phi.high", format!("{high}"));
                kv("phi.size", format!("{size}"));
            }
        }
        match self.f0 {
            F0Kind::Constant { value } => {
                kv("f0.kind", "constant".into());
                kv("f0.value", format!("{value}"));
            }
            F0Kind::ScaledPhi { factor } => {
                kv("f0.kind", "scaled_phi".into());
                kv("f0.factor", format!("{factor}"));
            }
            F0Kind::Ramp => kv("f0.kind", "ramp".into()),
        }
        match self.bc {
            BcKind::Neumann => kv("bc.kind", "neumann".into()),
            BcKind::Hall { entrance_u, exit_u, inflow, gate_half } => {
                kv("bc.kind", "hall".into());
                kv("bc.entrance_u", format!("{entrance_u}"));
                kv("bc.exit_u", format!("{exit_u}"));
                kv("bc.inflow", format!("{inflow}"));
                kv("bc.gate_half", format!("{gate_half}"));
            }
        }
        kv("solver.tol_outer", format!("{}", self.tol_outer));
        kv("solver.tol_inner", format!("{}", self.tol_inner));
        kv("solver.max_inner", format!("{}", self.max_inner));
        kv("solver.max_newton", format!("{}", self.max_newton));
        kv("solver.hjb_tol", format!("{}", self.hjb_tol));
        s
    }
}

/// Closed-form quantities of the one-shot one-dimensional game on [0, ℓ]
/// with running cost L(α, V) + F: the Nash equilibrium drift and value, and
/// the cooperative (mean field type control) counterparts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneShotResult {
    pub alpha_star: f64,
    pub v_star: f64,
    pub j_mfg: f64,
    pub alpha_mftc: f64,
    pub j_mftc: f64,
}

pub fn oneshot_oracle(
    f_cost: f64,
    a_tilde: f64,
    lambda: f64,
    theta: f64,
    ell: f64,
) -> Result<OneShotResult, SolverError> {
    if lambda == 1.0 && theta == 1.0 {
        return Err(SolverError::InvalidScenario(
            "no equilibrium of the one-shot game at lambda = theta = 1".into(),
        ));
    }
    if f_cost <= 0.0 || a_tilde <= 0.0 || theta * lambda * lambda >= 1.0 {
        return Err(SolverError::InvalidScenario(format!(
            "one-shot oracle needs F > 0, a_tilde > 0, theta*lambda^2 < 1; got F={f_cost} a_tilde={a_tilde} lambda={lambda} theta={theta}"
        )));
    }
    let a = a_tilde / (1.0 - theta * lambda * lambda);
    let alpha_star = (2.0 * f_cost / a_tilde).sqrt();
    let j_mfg = ell * (1.0 - lambda * theta) / (1.0 - lambda * lambda * theta)
        * (2.0 * f_cost * a_tilde).sqrt();
    let alpha_mftc =
        (2.0 * f_cost / (a * (1.0 - 2.0 * theta * lambda + theta * lambda * lambda))).sqrt();
    let j_mftc = ell * (2.0 * f_cost * a * (1.0 - lambda * theta * (2.0 - lambda))).sqrt();
    Ok(OneShotResult { alpha_star, v_star: alpha_star, j_mfg, alpha_mftc, j_mftc })
}

/// Symmetry-breaking families for the corner-targets game: where the extra
/// mass bumps sit relative to the square's diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    /// Bumps at the bottom and top mid-edges; breaks both diagonal
    /// symmetries.
    BottomTop,
    /// [`PerturbationKind::BottomTop`] reflected across the main diagonal:
    /// bumps at the left and right mid-edges.
    Reflected,
    /// Bumps at the top and left; symmetric with respect to one diagonal
    /// only.
    OneDiagonal,
}

fn bump_centers(kind: PerturbationKind, lo: [f64; 2], hi: [f64; 2]) -> [[f64; 2]; 2] {
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let off = 0.4 * (hi[0] - lo[0]);
    match kind {
        PerturbationKind::BottomTop => {
            [[mid[0], mid[1] - off], [mid[0], mid[1] + off]]
        }
        PerturbationKind::Reflected => [[mid[0] - off, mid[1]], [mid[0] + off, mid[1]]],
        PerturbationKind::OneDiagonal => {
            [[mid[0], mid[1] + off], [mid[0] - off, mid[1]]]
        }
    }
}

/// Decreasing-amplitude sequence of perturbed initial densities, ending at
/// the unperturbed one; every member carries the same total mass as `m0`.
pub fn perturbation_family(
    g: &SpaceTimeGrid,
    m0: &ScalarField,
    kind: PerturbationKind,
    amplitude: f64,
    n_stages: usize,
) -> Vec<(String, ScalarField)> {
    assert!(amplitude > 0.0 && n_stages >= 1);
    let centers = bump_centers(kind, g.x_lo, g.x_hi);
    let width = 0.1 * (g.x_hi[0] - g.x_lo[0]);
    let total = m0.sum();
    (0..=n_stages)
        .map(|s| {
            let pi = amplitude * (n_stages - s) as f64 / n_stages as f64;
            let mut m = m0.clone();
            if pi > 0.0 {
                for ctr in centers {
                    for i in 0..g.nx1 {
                        for j in 0..g.nx2 {
                            let x = g.x(i, j);
                            let d2 = (x[0] - ctr[0]).powi(2) + (x[1] - ctr[1]).powi(2);
                            *m.at_mut(i, j) += pi * (-d2 / (width * width)).exp();
                        }
                    }
                }
                let new_total = m.sum();
                m.scale(total / new_total);
            }
            (format!("pi={pi}"), m)
        })
        .collect()
}
