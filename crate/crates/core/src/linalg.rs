//! Sparse plumbing for the time-stepping and outer solves: CSR matrices, a
//! banded LU factorization with partial pivoting (the step matrices are
//! five-point stencils, so the band is narrow when the short axis is stored
//! innermost), and a matrix-free BiCGStab.

use crate::SolverError;

/// Compressed sparse row matrix. Duplicate triplets are summed on build.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(i, j, v) in triplets {
            debug_assert!(i < n_rows && j < n_cols);
            per_row[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in per_row.iter_mut() {
            row.sort_unstable_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let col = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == col {
                    v += row[k].1;
                    k += 1;
                }
                col_idx.push(col);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix { n_rows, n_cols, row_ptr, col_idx, vals }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    /// y = Aᵀ x, without forming the transpose.
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(y.len(), self.n_cols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n_rows {
            let xi = x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.vals[k] * xi;
            }
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let trip: Vec<(usize, usize, f64)> = self
            .iter()
            .map(|(i, j, v)| (j, i, v))
            .collect();
        SparseMatrix::from_triplets(self.n_cols, self.n_rows, &trip)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[k] == j {
                return self.vals[k];
            }
        }
        0.0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.vals[k]))
        })
    }

    /// Maximum absolute entrywise difference, over the union of patterns.
    pub fn linf_diff(&self, other: &SparseMatrix) -> f64 {
        let mut d = 0.0f64;
        for (i, j, v) in self.iter() {
            d = d.max((v - other.get(i, j)).abs());
        }
        for (i, j, v) in other.iter() {
            d = d.max((v - self.get(i, j)).abs());
        }
        d
    }
}

/// LU factorization of a banded matrix with row partial pivoting, in the
/// classic band layout with `kl` extra superdiagonals for pivot fill-in.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// `ab[j * ldab + (kl + ku + i - j)]` holds entry (i, j).
    ab: Vec<f64>,
    ldab: usize,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factor a square CSR matrix. Fails on a pivot below `1e-300` in
    /// absolute value (structurally or numerically singular).
    pub fn factor(a: &SparseMatrix) -> Result<BandedLu, SolverError> {
        assert_eq!(a.n_rows, a.n_cols, "banded LU needs a square matrix");
        let n = a.n_rows;
        let mut kl = 0usize;
        let mut ku = 0usize;
        for (i, j, v) in a.iter() {
            if v != 0.0 {
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        // room for fill-in produced by row swaps
        let ku_f = (ku + kl).min(n.saturating_sub(1));
        let ldab = kl + ku_f + 1;
        let mut ab = vec![0.0; n * ldab];
        let band = |i: usize, j: usize| -> usize { j * ldab + (kl + ku_f + i - j) };
        for (i, j, v) in a.iter() {
            ab[band(i, j)] = v;
        }
        let mut piv = vec![0usize; n];

        for j in 0..n {
            // pivot search in column j, rows j..=j+kl
            let imax = (j + kl).min(n - 1);
            let mut p = j;
            let mut pmax = ab[band(j, j)].abs();
            for i in j + 1..=imax {
                let v = ab[band(i, j)].abs();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax < 1e-300 {
                return Err(SolverError::SingularMatrix { pivot_index: j });
            }
            piv[j] = p;
            let jmax = (j + ku_f).min(n - 1);
            if p != j {
                for c in j..=jmax {
                    ab.swap(band(j, c), band(p, c));
                }
            }
            let diag = ab[band(j, j)];
            for i in j + 1..=imax {
                let l = ab[band(i, j)] / diag;
                ab[band(i, j)] = l;
                if l != 0.0 {
                    for c in j + 1..=jmax {
                        let u = ab[band(j, c)];
                        if u != 0.0 {
                            ab[band(i, c)] -= l * u;
                        }
                    }
                }
            }
        }
        Ok(BandedLu { n, kl, ku: ku_f, ab, ldab, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let band = |i: usize, j: usize| -> usize { j * self.ldab + (self.kl + self.ku + i - j) };
        let mut x = b.to_vec();
        // forward: apply pivots and L
        for j in 0..self.n {
            let p = self.piv[j];
            if p != j {
                x.swap(j, p);
            }
            let imax = (j + self.kl).min(self.n - 1);
            let xj = x[j];
            if xj != 0.0 {
                for i in j + 1..=imax {
                    x[i] -= self.ab[band(i, j)] * xj;
                }
            }
        }
        // back substitution with U
        for j in (0..self.n).rev() {
            let mut s = x[j];
            let cmax = (j + self.ku).min(self.n - 1);
            for c in j + 1..=cmax {
                s -= self.ab[band(j, c)] * x[c];
            }
            x[j] = s / self.ab[band(j, j)];
        }
        x
    }
}

/// Convenience one-shot sparse solve: factor and back-substitute.
pub fn lu_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
    Ok(BandedLu::factor(a)?.solve(b))
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig { rel_tol: 1e-7, max_iters: 400 }
    }
}

#[derive(Debug, Clone)]
pub struct KrylovResult {
    pub x: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Matrix-free BiCGStab with one automatic restart on scalar breakdown.
/// Hitting the iteration cap or a second breakdown is reported through
/// `converged = false`, never as an error.
pub fn bicgstab(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x0: &[f64],
    cfg: &KrylovConfig,
) -> Result<KrylovResult, SolverError> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(KrylovResult { x: vec![0.0; n], iters: 0, converged: true, rel_residual: 0.0 });
    }
    let mut x = x0.to_vec();
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega: f64 = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut restarted = false;
    let mut iters = 0;
    let breakdown_tol = 1e-30;
    // the residual recurrence is not monotone; remember the best iterate so
    // an unconverged exit still returns something no worse than the start
    let mut best_x = x.clone();
    let mut best_rel = norm2(&r) / bnorm;

    while iters < cfg.max_iters {
        let rel = norm2(&r) / bnorm;
        if rel < best_rel {
            best_rel = rel;
            best_x.copy_from_slice(&x);
        }
        if rel <= cfg.rel_tol {
            return Ok(KrylovResult { x, iters, converged: true, rel_residual: rel });
        }
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < breakdown_tol || omega.abs() < breakdown_tol {
            if restarted {
                // second breakdown: hand back the best iterate and let the
                // caller decide what an unconverged step is worth
                return Ok(KrylovResult { x: best_x, iters, converged: false, rel_residual: best_rel });
            }
            // restart from the current iterate
            restarted = true;
            apply(&x, &mut ax);
            r = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            r0 = r.clone();
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|z| *z = 0.0);
            p.iter_mut().for_each(|z| *z = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        apply(&p, &mut v);
        let r0v = dot(&r0, &v);
        if r0v.abs() < breakdown_tol {
            if restarted {
                return Ok(KrylovResult { x: best_x, iters, converged: false, rel_residual: best_rel });
            }
            restarted = true;
            apply(&x, &mut ax);
            r = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            r0 = r.clone();
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|z| *z = 0.0);
            p.iter_mut().for_each(|z| *z = 0.0);
            continue;
        }
        alpha = rho / r0v;
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        if norm2(&s) / bnorm <= cfg.rel_tol {
            for k in 0..n {
                x[k] += alpha * p[k];
            }
            iters += 1;
            return Ok(KrylovResult { x, iters, converged: true, rel_residual: norm2(&s) / bnorm });
        }
        apply(&s, &mut t);
        let tt = dot(&t, &t);
        if tt < breakdown_tol {
            if restarted {
                return Ok(KrylovResult { x: best_x, iters, converged: false, rel_residual: best_rel });
            }
            restarted = true;
            apply(&x, &mut ax);
            r = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            r0 = r.clone();
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|z| *z = 0.0);
            p.iter_mut().for_each(|z| *z = 0.0);
            continue;
        }
        omega = dot(&t, &s) / tt;
        for k in 0..n {
            x[k] += alpha * p[k] + omega * s[k];
            r[k] = s[k] - omega * t[k];
        }
        iters += 1;
    }
    let rel = norm2(&r) / bnorm;
    if rel <= cfg.rel_tol {
        return Ok(KrylovResult { x, iters, converged: true, rel_residual: rel });
    }
    if rel < best_rel {
        best_rel = rel;
        best_x = x;
    }
    Ok(KrylovResult { x: best_x, iters, converged: false, rel_residual: best_rel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csr_dedups_and_matvec() {
        let a = SparseMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 1.0), (0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)],
        );
        assert_eq!(a.get(0, 0), 2.0);
        let mut y = vec![0.0; 2];
        a.matvec(&[1.0, 2.0], &mut y);
        assert_eq!(y, vec![4.0, 7.0]);
        let at = a.transpose();
        assert_eq!(at.get(0, 1), 1.0);
        assert_eq!(at.get(1, 0), 1.0);
        let mut yt = vec![0.0; 2];
        a.matvec_transpose(&[1.0, 2.0], &mut yt);
        assert_eq!(yt, vec![4.0, 7.0]);
    }

    #[test]
    fn lu_two_by_two() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        let x = lu_solve(&a, &[3.0, 5.0]).unwrap();
        assert_relative_eq!(x[0], 0.8, max_relative = 1e-12);
        assert_relative_eq!(x[1], 1.4, max_relative = 1e-12);
    }

    #[test]
    fn lu_random_banded_diag_dominant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50usize;
        let band = 6usize;
        let mut trip = Vec::new();
        for i in 0..n {
            let mut off = 0.0;
            for j in i.saturating_sub(band)..(i + band + 1).min(n) {
                if j != i {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    trip.push((i, j, v));
                    off += v.abs();
                }
            }
            trip.push((i, i, off + rng.gen_range(0.5..1.5)));
        }
        let a = SparseMatrix::from_triplets(n, n, &trip);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut b = vec![0.0; n];
        a.matvec(&xs, &mut b);
        let x = lu_solve(&a, &b).unwrap();
        for (u, v) in x.iter().zip(&xs) {
            assert_relative_eq!(u, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn lu_needs_pivoting() {
        // zero on the diagonal: LU without pivoting fails; ours must not
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let x = lu_solve(&a, &[2.0, 3.0]).unwrap();
        // x1 = 2 from row 0, x0 = 1 from row 1
        assert_relative_eq!(x[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(x[1], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn lu_singular_detected() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)]);
        assert!(matches!(lu_solve(&a, &[1.0, 2.0]), Err(SolverError::SingularMatrix { .. })));
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 80;
        let mut trip = Vec::new();
        for i in 0..n {
            let mut off = 0.0;
            for dj in [-2i64, -1, 1, 2] {
                let j = i as i64 + dj;
                if j >= 0 && (j as usize) < n {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    trip.push((i, j as usize, v));
                    off += v.abs();
                }
            }
            trip.push((i, i, off + 1.0));
        }
        let a = SparseMatrix::from_triplets(n, n, &trip);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut b = vec![0.0; n];
        a.matvec(&xs, &mut b);
        let res = bicgstab(
            |x, y| a.matvec(x, y),
            &b,
            &vec![0.0; n],
            &KrylovConfig { rel_tol: 1e-10, max_iters: 400 },
        )
        .unwrap();
        assert!(res.converged, "rel residual {}", res.rel_residual);
        for (u, v) in res.x.iter().zip(&xs) {
            assert_relative_eq!(u, v, epsilon = 1e-7);
        }
    }

    #[test]
    fn bicgstab_identity_converges_immediately() {
        let b = vec![1.0, -2.0, 3.0];
        let res = bicgstab(
            |x, y| y.copy_from_slice(x),
            &b,
            &vec![0.0; 3],
            &KrylovConfig::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert!(res.iters <= 1);
        for (u, v) in res.x.iter().zip(&b) {
            assert_relative_eq!(u, v, max_relative = 1e-12);
        }
    }

    #[test]
    fn bicgstab_reports_cap_without_error() {
        // rotation-like matrix that BiCGStab struggles with in one iteration
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, -1.0)]);
        let res = bicgstab(
            |x, y| a.matvec(x, y),
            &[1.0, 1.0],
            &[0.0, 0.0],
            &KrylovConfig { rel_tol: 1e-14, max_iters: 1 },
        );
        // either converges in the single step or reports non-convergence
        if let Ok(r) = res {
            assert!(r.iters <= 1);
        }
    }
}
