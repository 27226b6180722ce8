//! Space-time grid, field containers and elementary difference operators.
//!
//! Fields live on the node set `{(i, j) : 0 <= i < nx1, 0 <= j < nx2}` of a
//! rectangular domain, stored row-major with `j` (the second axis) inner,
//! so the flat index of `(i, j)` is `i * nx2 + j`. Time levels are kept in
//! plain `Vec`s, outermost.
//!
//! One-sided differences and the five-point laplacian read one ghost layer
//! past each edge. Ghost values are never stored with the field; they are
//! produced on demand by [`extend_neumann`] from the prescribed normal
//! derivative and handed to the operators explicitly.

/// Uniform tensor grid on `[x_lo, x_hi]` with `nt` time steps on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    pub nx1: usize,
    pub nx2: usize,
    pub nt: usize,
    pub h1: f64,
    pub h2: f64,
    pub dt: f64,
    pub x_lo: [f64; 2],
    pub x_hi: [f64; 2],
    pub t_end: f64,
}

impl SpaceTimeGrid {
    pub fn new(nx1: usize, nx2: usize, nt: usize, x_lo: [f64; 2], x_hi: [f64; 2], t_end: f64) -> Self {
        assert!(nx1 >= 2 && nx2 >= 2 && nt >= 1, "degenerate grid");
        assert!(x_hi[0] > x_lo[0] && x_hi[1] > x_lo[1] && t_end > 0.0);
        SpaceTimeGrid {
            nx1,
            nx2,
            nt,
            h1: (x_hi[0] - x_lo[0]) / (nx1 - 1) as f64,
            h2: (x_hi[1] - x_lo[1]) / (nx2 - 1) as f64,
            dt: t_end / nt as f64,
            x_lo,
            x_hi,
            t_end,
        }
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.nx1 * self.nx2
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx1 && j < self.nx2);
        i * self.nx2 + j
    }

    /// Node coordinates; exact at the four corners.
    #[inline]
    pub fn x(&self, i: usize, j: usize) -> [f64; 2] {
        let s1 = i as f64 / (self.nx1 - 1) as f64;
        let s2 = j as f64 / (self.nx2 - 1) as f64;
        [
            self.x_lo[0] + s1 * (self.x_hi[0] - self.x_lo[0]),
            self.x_lo[1] + s2 * (self.x_hi[1] - self.x_lo[1]),
        ]
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Cell area used when a nodal field is integrated over the domain.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.h1 * self.h2
    }

    pub fn same_space(&self, other: &SpaceTimeGrid) -> bool {
        self.nx1 == other.nx1 && self.nx2 == other.nx2
    }
}

/// Scalar nodal field on one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub nx1: usize,
    pub nx2: usize,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(g: &SpaceTimeGrid) -> Self {
        ScalarField { nx1: g.nx1, nx2: g.nx2, data: vec![0.0; g.n_nodes()] }
    }

    pub fn constant(g: &SpaceTimeGrid, v: f64) -> Self {
        ScalarField { nx1: g.nx1, nx2: g.nx2, data: vec![v; g.n_nodes()] }
    }

    pub fn from_fn(g: &SpaceTimeGrid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(g.n_nodes());
        for i in 0..g.nx1 {
            for j in 0..g.nx2 {
                data.push(f(i, j));
            }
        }
        ScalarField { nx1: g.nx1, nx2: g.nx2, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.nx2 + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.nx2 + j]
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn linf_diff(&self, other: &ScalarField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
    }

    /// Sum of nodal values (multiply by the cell area for an integral).
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn axpy(&mut self, alpha: f64, x: &ScalarField) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += alpha * v;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.data.iter_mut() {
            *s *= alpha;
        }
    }
}

/// Two-component nodal field (drifts, gradients, feedback controls).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub nx1: usize,
    pub nx2: usize,
    pub data: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn zeros(g: &SpaceTimeGrid) -> Self {
        VectorField { nx1: g.nx1, nx2: g.nx2, data: vec![[0.0; 2]; g.n_nodes()] }
    }

    pub fn from_fn(g: &SpaceTimeGrid, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Self {
        let mut data = Vec::with_capacity(g.n_nodes());
        for i in 0..g.nx1 {
            for j in 0..g.nx2 {
                data.push(f(i, j));
            }
        }
        VectorField { nx1: g.nx1, nx2: g.nx2, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        self.data[i * self.nx2 + j]
    }

    pub fn linf(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |a, v| a.max(v[0].abs()).max(v[1].abs()))
    }

    pub fn linf_diff(&self, other: &VectorField) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0f64, |a, (x, y)| {
            a.max((x[0] - y[0]).abs()).max((x[1] - y[1]).abs())
        })
    }

    pub fn axpy(&mut self, alpha: f64, x: &VectorField) {
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            a[0] += alpha * b[0];
            a[1] += alpha * b[1];
        }
    }
}

/// Four-component node field holding the upwind gradient brackets, together
/// with the ghost-layer values that the transport operator reads just past
/// each edge: `bc_w[j]` is component 1 at `(-1, j)`, `bc_e[j]` component 2 at
/// `(nx1, j)`, `bc_s[i]` component 3 at `(i, -1)`, `bc_n[i]` component 4 at
/// `(i, nx2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadField {
    pub nx1: usize,
    pub nx2: usize,
    pub data: Vec<[f64; 4]>,
    pub bc_w: Vec<f64>,
    pub bc_e: Vec<f64>,
    pub bc_s: Vec<f64>,
    pub bc_n: Vec<f64>,
}

impl QuadField {
    pub fn zeros(g: &SpaceTimeGrid) -> Self {
        QuadField {
            nx1: g.nx1,
            nx2: g.nx2,
            data: vec![[0.0; 4]; g.n_nodes()],
            bc_w: vec![0.0; g.nx2],
            bc_e: vec![0.0; g.nx2],
            bc_s: vec![0.0; g.nx1],
            bc_n: vec![0.0; g.nx1],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 4] {
        self.data[i * self.nx2 + j]
    }
}

/// Ghost-layer values of a scalar field, one entry per boundary node:
/// `west[j] = y(-1, j)`, `east[j] = y(nx1, j)`, `south[i] = y(i, -1)`,
/// `north[i] = y(i, nx2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostExtension {
    pub west: Vec<f64>,
    pub east: Vec<f64>,
    pub south: Vec<f64>,
    pub north: Vec<f64>,
}

impl GhostExtension {
    pub fn zeros(g: &SpaceTimeGrid) -> Self {
        GhostExtension {
            west: vec![0.0; g.nx2],
            east: vec![0.0; g.nx2],
            south: vec![0.0; g.nx1],
            north: vec![0.0; g.nx1],
        }
    }
}

/// Prescribed outward normal derivative on each edge (same layout as
/// [`GhostExtension`]); `None` means homogeneous.
pub type NormalDerivative = Option<GhostExtension>;

/// Mirror extension `y_ghost = y_edge + h * z` realizing a Neumann condition
/// with normal derivative `z` (inward difference convention: the ghost node
/// sits a distance `h` outside, and `(y_edge - y_ghost)/h = -z` on west/south,
/// `(y_ghost - y_edge)/h = z`... concretely `y(-1,j) = y(0,j) + h1*z_w(j)`,
/// `y(nx1,j) = y(nx1-1,j) + h1*z_e(j)`, and likewise in the second axis, so
/// `z == 0` duplicates the edge value.
pub fn extend_neumann(g: &SpaceTimeGrid, y: &ScalarField, z: &NormalDerivative) -> GhostExtension {
    let mut ext = GhostExtension {
        west: (0..g.nx2).map(|j| y.at(0, j)).collect(),
        east: (0..g.nx2).map(|j| y.at(g.nx1 - 1, j)).collect(),
        south: (0..g.nx1).map(|i| y.at(i, 0)).collect(),
        north: (0..g.nx1).map(|i| y.at(i, g.nx2 - 1)).collect(),
    };
    if let Some(z) = z {
        for j in 0..g.nx2 {
            ext.west[j] += g.h1 * z.west[j];
            ext.east[j] += g.h1 * z.east[j];
        }
        for i in 0..g.nx1 {
            ext.south[i] += g.h2 * z.south[i];
            ext.north[i] += g.h2 * z.north[i];
        }
    }
    ext
}

/// Backward time difference `(y^{k+1} - y^k) / dt` at level `k`.
pub fn time_derivative(g: &SpaceTimeGrid, levels: &[ScalarField], k: usize) -> ScalarField {
    let mut out = levels[k + 1].clone();
    for (o, v) in out.data.iter_mut().zip(&levels[k].data) {
        *o = (*o - v) / g.dt;
    }
    out
}

/// Forward differences along an axis, including the two one-past-the-edge
/// values that need a ghost layer.
///
/// `d1_plus` returns a `(nx1 + 1) * nx2` array `d` with
/// `d[(i + 1) * nx2 + j] = (y(i+1, j) - y(i, j)) / h1` for `i = -1 .. nx1-1`,
/// where `y(-1, j)` and `y(nx1, j)` come from `ghost`.
pub fn d1_plus(g: &SpaceTimeGrid, y: &ScalarField, ghost: &GhostExtension) -> Vec<f64> {
    let (nx1, nx2) = (g.nx1, g.nx2);
    let mut d = vec![0.0; (nx1 + 1) * nx2];
    for j in 0..nx2 {
        d[j] = (y.at(0, j) - ghost.west[j]) / g.h1;
        d[nx1 * nx2 + j] = (ghost.east[j] - y.at(nx1 - 1, j)) / g.h1;
    }
    for i in 0..nx1 - 1 {
        for j in 0..nx2 {
            d[(i + 1) * nx2 + j] = (y.at(i + 1, j) - y.at(i, j)) / g.h1;
        }
    }
    d
}

/// Second-axis analogue of [`d1_plus`]: a `nx1 * (nx2 + 1)` array `d` with
/// `d[i * (nx2 + 1) + (j + 1)] = (y(i, j+1) - y(i, j)) / h2` for `j = -1 .. nx2-1`.
pub fn d2_plus(g: &SpaceTimeGrid, y: &ScalarField, ghost: &GhostExtension) -> Vec<f64> {
    let (nx1, nx2) = (g.nx1, g.nx2);
    let mut d = vec![0.0; nx1 * (nx2 + 1)];
    for i in 0..nx1 {
        d[i * (nx2 + 1)] = (y.at(i, 0) - ghost.south[i]) / g.h2;
        d[i * (nx2 + 1) + nx2] = (ghost.north[i] - y.at(i, nx2 - 1)) / g.h2;
        for j in 0..nx2 - 1 {
            d[i * (nx2 + 1) + j + 1] = (y.at(i, j + 1) - y.at(i, j)) / g.h2;
        }
    }
    d
}

/// Five-point laplacian with per-axis steps,
/// `(y_E - 2y + y_W)/h1^2 + (y_N - 2y + y_S)/h2^2`, ghost layer supplied.
pub fn laplacian5(g: &SpaceTimeGrid, y: &ScalarField, ghost: &GhostExtension) -> ScalarField {
    let (nx1, nx2) = (g.nx1, g.nx2);
    let (ih1, ih2) = (1.0 / (g.h1 * g.h1), 1.0 / (g.h2 * g.h2));
    ScalarField::from_fn(g, |i, j| {
        let c = y.at(i, j);
        let w = if i == 0 { ghost.west[j] } else { y.at(i - 1, j) };
        let e = if i == nx1 - 1 { ghost.east[j] } else { y.at(i + 1, j) };
        let s = if j == 0 { ghost.south[i] } else { y.at(i, j - 1) };
        let n = if j == nx2 - 1 { ghost.north[i] } else { y.at(i, j + 1) };
        (e - 2.0 * c + w) * ih1 + (n - 2.0 * c + s) * ih2
    })
}

/// Face-interpolated values of a vector field.
///
/// `f1[fi * nx2 + j]` holds component 1 at the vertical face `(fi - 1/2, j)`
/// for `fi = 0 ..= nx1` (arithmetic mean of the two adjacent nodes, clamped
/// to the edge node outside), and `f2[i * (nx2 + 1) + fj]` component 2 at
/// the horizontal face `(i, fj - 1/2)`.
#[derive(Debug, Clone)]
pub struct FaceValues {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

pub fn half_index(g: &SpaceTimeGrid, v: &VectorField) -> FaceValues {
    let (nx1, nx2) = (g.nx1, g.nx2);
    let mut f1 = vec![0.0; (nx1 + 1) * nx2];
    let mut f2 = vec![0.0; nx1 * (nx2 + 1)];
    for j in 0..nx2 {
        f1[j] = v.at(0, j)[0];
        f1[nx1 * nx2 + j] = v.at(nx1 - 1, j)[0];
    }
    for i in 0..nx1 - 1 {
        for j in 0..nx2 {
            f1[(i + 1) * nx2 + j] = 0.5 * (v.at(i, j)[0] + v.at(i + 1, j)[0]);
        }
    }
    for i in 0..nx1 {
        f2[i * (nx2 + 1)] = v.at(i, 0)[1];
        f2[i * (nx2 + 1) + nx2] = v.at(i, nx2 - 1)[1];
        for j in 0..nx2 - 1 {
            f2[i * (nx2 + 1) + j + 1] = 0.5 * (v.at(i, j)[1] + v.at(i, j + 1)[1]);
        }
    }
    FaceValues { f1, f2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(n, n, 4, [-0.5, -0.5], [0.5, 0.5], 1.0)
    }

    #[test]
    fn corners_are_exact() {
        let g = SpaceTimeGrid::new(26, 21, 10, [-0.5, -0.1], [0.5, 0.1], 8.0);
        assert_eq!(g.x(0, 0), [-0.5, -0.1]);
        assert_eq!(g.x(25, 20), [0.5, 0.1]);
        assert_eq!(g.x(25, 0), [0.5, -0.1]);
    }

    #[test]
    fn time_derivative_of_linear_ramp_is_exact() {
        let g = grid(5);
        let levels: Vec<ScalarField> = (0..=g.nt)
            .map(|k| ScalarField::constant(&g, 3.0 * g.t(k)))
            .collect();
        for k in 0..g.nt {
            let d = time_derivative(&g, &levels, k);
            for v in &d.data {
                assert_relative_eq!(*v, 3.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn neumann_extension_zero_slope_copies_edge() {
        let g = grid(4);
        let y = ScalarField::from_fn(&g, |i, j| (i * 10 + j) as f64);
        let ext = extend_neumann(&g, &y, &None);
        for j in 0..g.nx2 {
            assert_eq!(ext.west[j], y.at(0, j));
            assert_eq!(ext.east[j], y.at(g.nx1 - 1, j));
        }
        for i in 0..g.nx1 {
            assert_eq!(ext.south[i], y.at(i, 0));
            assert_eq!(ext.north[i], y.at(i, g.nx2 - 1));
        }
    }

    #[test]
    fn d1_plus_linear_field_is_exact_and_zero_at_ghosts() {
        let g = grid(6);
        let y = ScalarField::from_fn(&g, |i, j| 2.0 * g.x(i, j)[0] + 0.5 * g.x(i, j)[1]);
        let ghost = extend_neumann(&g, &y, &None);
        let d = d1_plus(&g, &y, &ghost);
        for j in 0..g.nx2 {
            // ghost faces see the mirrored value: difference zero
            assert_relative_eq!(d[j], 0.0, epsilon = 1e-13);
            assert_relative_eq!(d[g.nx1 * g.nx2 + j], 0.0, epsilon = 1e-13);
        }
        for i in 0..g.nx1 - 1 {
            for j in 0..g.nx2 {
                assert_relative_eq!(d[(i + 1) * g.nx2 + j], 2.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_of_quadratic_is_exact_in_the_interior() {
        let g = grid(8);
        let y = ScalarField::from_fn(&g, |i, j| {
            let [x1, x2] = g.x(i, j);
            x1 * x1 + 2.0 * x2 * x2
        });
        let ghost = extend_neumann(&g, &y, &None);
        let lap = laplacian5(&g, &y, &ghost);
        for i in 1..g.nx1 - 1 {
            for j in 1..g.nx2 - 1 {
                assert_relative_eq!(lap.at(i, j), 6.0, max_relative = 1e-10);
            }
        }
    }

    /// First-order convergence of the one-sided difference, second-order of
    /// the laplacian, on a smooth field with vanishing normal derivative.
    #[test]
    fn convergence_orders() {
        let err = |n: usize| -> (f64, f64) {
            let g = grid(n);
            let pi = std::f64::consts::PI;
            let y = ScalarField::from_fn(&g, |i, j| {
                let [x1, x2] = g.x(i, j);
                (pi * (x1 + 0.5)).cos() * (pi * (x2 + 0.5)).cos()
            });
            let ghost = extend_neumann(&g, &y, &None);
            let d = d1_plus(&g, &y, &ghost);
            let lap = laplacian5(&g, &y, &ghost);
            let mut e1 = 0.0f64;
            let mut e2 = 0.0f64;
            for i in 0..g.nx1 - 1 {
                for j in 0..g.nx2 {
                    let [x1, x2] = g.x(i, j);
                    // forward difference approximates the node derivative to first order
                    let exact = -pi * (pi * (x1 + 0.5)).sin() * (pi * (x2 + 0.5)).cos();
                    e1 = e1.max((d[(i + 1) * g.nx2 + j] - exact).abs());
                }
            }
            // the edge rows are only flux-consistent; measure interior order
            for i in 1..g.nx1 - 1 {
                for j in 1..g.nx2 - 1 {
                    let [x1, x2] = g.x(i, j);
                    let exact = -2.0 * pi * pi * (pi * (x1 + 0.5)).cos() * (pi * (x2 + 0.5)).cos();
                    e2 = e2.max((lap.at(i, j) - exact).abs());
                }
            }
            (e1, e2)
        };
        let (c1, c2) = err(17);
        let (f1, f2) = err(33);
        // halving h: first order ratio >= 1.8, second order >= 3.6
        assert!(c1 / f1 >= 1.8, "d1_plus ratio {}", c1 / f1);
        assert!(c2 / f2 >= 3.6, "laplacian ratio {}", c2 / f2);
    }

    #[test]
    fn half_index_interpolates_and_clamps() {
        let g = grid(4);
        let v = VectorField::from_fn(&g, |i, j| [i as f64, j as f64]);
        let f = half_index(&g, &v);
        for j in 0..g.nx2 {
            assert_eq!(f.f1[j], 0.0); // clamped to edge node
            assert_eq!(f.f1[g.nx1 * g.nx2 + j], (g.nx1 - 1) as f64);
        }
        assert_eq!(f.f1[g.nx2 + 1], 0.5); // between nodes 0 and 1
        assert_eq!(f.f2[1], 0.5);
    }
}
