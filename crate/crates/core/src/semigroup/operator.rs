use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{min_eigenvalue, DispersionSpec, FieldSpec};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        y.par_iter_mut().enumerate().for_each(|(r, yr)| {
            let mut s = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[p] * x[self.cols[p] as usize];
            }
            *yr = s;
        });
        y
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.n + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut cols = vec![0u32; self.cols.len()];
        let mut vals = vec![0.0; self.vals.len()];
        for r in 0..self.n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[p] as usize;
                cols[next[c]] = r as u32;
                vals[next[c]] = self.vals[p];
                next[c] += 1;
            }
        }
        Csr { n: self.n, row_ptr, cols, vals }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&p| self.cols[p] as usize == r)
                    .map_or(0.0, |p| self.vals[p])
            })
            .collect()
    }
}

/// Rows that break `off-diagonal ≤ 0` or `diagonal ≥ Σ|off-diagonal|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MMatrixAudit {
    pub rows: usize,
    pub violating_rows: usize,
    pub violation_rate: f64,
    pub max_positive_offdiag: f64,
}

/// `Λ_h u = -a:∇²_h u + b·∇_h u` on the Dirichlet grid.
///
/// Cross derivatives use the sign-adapted seven-point stencil (diagonal
/// neighbours along `e_i + e_j` when `a_ij > 0`, along `e_i - e_j` otherwise),
/// which keeps the matrix an M-matrix whenever `a` is diagonally dominant.
/// The drift is upwinded with respect to the transport direction `-b` of the
/// generator `-Λ`.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub grid: Grid,
    pub matrix: Csr,
    pub audit: MMatrixAudit,
    /// Node average of `tr(a)/3`, the diffusion scale of the preconditioner.
    pub mean_diffusion: f64,
    pub drift_used: FieldSpec,
    pub matrix_used: DispersionSpec,
}

const NEIGHBOURS: usize = 27;

fn slot(di: isize, dj: isize, dk: isize) -> usize {
    ((di + 1) * 9 + (dj + 1) * 3 + (dk + 1)) as usize
}

fn unit(i: usize, s: isize) -> [isize; 3] {
    let mut o = [0; 3];
    o[i] = s;
    o
}

/// The 27-point local stencil of one row from `a` (row-major 3×3) and `b`.
fn local_stencil(a: &[f64; 9], b: &[f64; 3], h: f64) -> [f64; NEIGHBOURS] {
    let mut st = [0.0; NEIGHBOURS];
    let ih2 = 1.0 / (h * h);
    let add = |st: &mut [f64; NEIGHBOURS], o: [isize; 3], v: f64| st[slot(o[0], o[1], o[2])] += v;
    for i in 0..3 {
        let aii = a[i * 4];
        add(&mut st, [0, 0, 0], 2.0 * aii * ih2);
        add(&mut st, unit(i, 1), -aii * ih2);
        add(&mut st, unit(i, -1), -aii * ih2);
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let aij = 0.5 * (a[i * 3 + j] + a[j * 3 + i]);
            if aij == 0.0 {
                continue;
            }
            let s = aij.abs() * ih2;
            let sj: isize = if aij > 0.0 { 1 } else { -1 };
            let mut p = [0isize; 3];
            p[i] = 1;
            p[j] = sj;
            add(&mut st, p, -s);
            add(&mut st, [-p[0], -p[1], -p[2]], -s);
            add(&mut st, [0, 0, 0], -2.0 * s);
            for o in [unit(i, 1), unit(i, -1), unit(j, 1), unit(j, -1)] {
                add(&mut st, o, s);
            }
        }
    }
    for i in 0..3 {
        let bi = b[i];
        if bi > 0.0 {
            add(&mut st, [0, 0, 0], bi / h);
            add(&mut st, unit(i, -1), -bi / h);
        } else if bi < 0.0 {
            add(&mut st, [0, 0, 0], -bi / h);
            add(&mut st, unit(i, 1), bi / h);
        }
    }
    st
}

fn coefficient_error(e: Error, node: [f64; 3]) -> Error {
    match e {
        Error::SingularPoint { .. } => Error::SingularOnGrid { node },
        e => e,
    }
}

pub fn assemble_operator(a: &DispersionSpec, drift: &FieldSpec, grid: &Grid) -> Result<DiscreteOperator> {
    if a.d != 3 {
        return Err(Error::InvalidDimension(a.d));
    }
    if drift.d != 3 {
        return Err(Error::InvalidDimension(drift.d));
    }
    let m = grid.nodes as isize;
    let h = grid.spacing();
    let rows: Vec<(Vec<(u32, f64)>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| -> Result<(Vec<(u32, f64)>, f64)> {
            let x = grid.node(idx);
            let mut am = [0.0; 9];
            a.a_into(&x, &mut am).map_err(|e| coefficient_error(e, x))?;
            let mut b = [0.0; 3];
            drift.eval_into(&x, &mut b).map_err(|e| coefficient_error(e, x))?;
            if am.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::SingularOnGrid { node: x });
            }
            let lo = min_eigenvalue(&am, 3);
            if lo < 1.0 - 1e-10 {
                return Err(Error::NonPsdMatrix { point: x.to_vec(), min_eig: lo });
            }
            let st = local_stencil(&am, &b, h);
            let [i, j, k] = grid.unravel(idx).map(|v| v as isize);
            let mut row = Vec::with_capacity(19);
            for di in -1..=1 {
                for dj in -1..=1 {
                    for dk in -1..=1 {
                        let v = st[slot(di, dj, dk)];
                        let (ni, nj, nk) = (i + di, j + dj, k + dk);
                        if v == 0.0 || ni < 0 || nj < 0 || nk < 0 || ni >= m || nj >= m || nk >= m {
                            continue;
                        }
                        row.push((grid.index(ni as usize, nj as usize, nk as usize) as u32, v));
                    }
                }
            }
            Ok((row, (am[0] + am[4] + am[8]) / 3.0))
        })
        .collect::<Result<_>>()?;

    let mut row_ptr = Vec::with_capacity(grid.len() + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut violating = 0;
    let mut max_pos = 0.0f64;
    let mut diff_sum = 0.0;
    for (r, (row, tr)) in rows.iter().enumerate() {
        diff_sum += tr;
        let mut diag = 0.0;
        let mut off = 0.0;
        let mut bad = false;
        for &(c, v) in row {
            cols.push(c);
            vals.push(v);
            if c as usize == r {
                diag = v;
            } else {
                off += v.abs();
                if v > 0.0 {
                    max_pos = max_pos.max(v);
                    bad = true;
                }
            }
        }
        if bad || diag < off * (1.0 - 1e-12) {
            violating += 1;
        }
        row_ptr.push(cols.len());
    }
    let n = grid.len();
    Ok(DiscreteOperator {
        grid: grid.clone(),
        matrix: Csr { n, row_ptr, cols, vals },
        audit: MMatrixAudit {
            rows: n,
            violating_rows: violating,
            violation_rate: violating as f64 / n as f64,
            max_positive_offdiag: max_pos,
        },
        mean_diffusion: diff_sum / n as f64,
        drift_used: drift.clone(),
        matrix_used: a.clone(),
    })
}

impl DiscreteOperator {
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.matvec(u)
    }

    /// `(μ + Λ_h) u`.
    pub fn apply_shifted(&self, mu: f64, u: &[f64]) -> Vec<f64> {
        let mut y = self.matrix.matvec(u);
        y.par_iter_mut().zip(u.par_iter()).for_each(|(y, u)| *y += mu * u);
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::neg_laplacian;

    #[test]
    fn free_operator_is_the_seven_point_laplacian() {
        let g = Grid::new(1.0, 6).unwrap();
        let op = assemble_operator(&DispersionSpec::identity(3), &FieldSpec::zero(3), &g).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mut want = vec![0.0; g.len()];
        neg_laplacian(&g, &u, &mut want);
        let got = op.apply(&u);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(op.audit.violating_rows, 0);
    }

    #[test]
    fn cross_stencil_differentiates_bilinear_functions() {
        let a = [1.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 1.0];
        let st = local_stencil(&a, &[0.0; 3], 0.1);
        // -a:∇²(x y) = -2 a_xy, -a:∇²(y z) = -2 a_yz
        let apply = |f: &dyn Fn(f64, f64, f64) -> f64| {
            let mut s = 0.0;
            for di in -1..=1isize {
                for dj in -1..=1isize {
                    for dk in -1..=1isize {
                        s += st[slot(di, dj, dk)] * f(0.2 + di as f64 * 0.1, -0.1 + dj as f64 * 0.1, 0.3 + dk as f64 * 0.1);
                    }
                }
            }
            s
        };
        assert!((apply(&|x, y, _| x * y) + 0.6).abs() < 1e-10);
        assert!((apply(&|_, y, z| y * z) - 0.4).abs() < 1e-10);
        assert!((apply(&|x, _, _| x * x) + 2.0).abs() < 1e-10);
    }
}
