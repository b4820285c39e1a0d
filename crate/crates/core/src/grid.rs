//! Cell-centred tensor grid on the box `[-L, L]^3` with homogeneous Dirichlet
//! data outside, plus the grid-function norms used throughout the crate.
//!
//! Node `i` along an axis sits at `-L + (i + 1/2) h` with `h = 2L / m`, so an
//! even node count keeps every node off the origin (where the Hardy-type
//! coefficients are singular). The ghost layer at `±(L + h/2)` carries zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Half-width `L` of the box.
    pub extent: f64,
    /// Nodes per axis `m`.
    pub nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub extent: f64,
    pub spacing: f64,
    pub nodes: usize,
    pub staggered: bool,
}

impl Grid {
    pub fn new(extent: f64, nodes: usize) -> Result<Self> {
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidSpec(format!("grid extent must be positive, got {extent}")));
        }
        if nodes < 3 {
            return Err(Error::InvalidSpec(format!("grid needs at least 3 nodes per axis, got {nodes}")));
        }
        Ok(Self { extent, nodes })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.nodes as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes * self.nodes * self.nodes
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }

    /// Whether the origin falls between nodes (true for even `m`).
    pub fn staggered(&self) -> bool {
        self.nodes % 2 == 0
    }

    pub fn meta(&self) -> GridMeta {
        GridMeta {
            extent: self.extent,
            spacing: self.spacing(),
            nodes: self.nodes,
            staggered: self.staggered(),
        }
    }

    /// Cell volume `h^3`, the quadrature weight of every node.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.extent + (i as f64 + 0.5) * self.spacing()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nodes + j) * self.nodes + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let m = self.nodes;
        [idx / (m * m), (idx / m) % m, idx % m]
    }

    #[inline]
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unravel(idx);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    pub fn nodes_iter(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.len()).map(move |idx| self.node(idx))
    }

    /// Sample a scalar function at every node.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        self.nodes_iter().map(f).collect()
    }

    /// Whether `x` lies in the closed box `[-L, L]^3`.
    pub fn contains(&self, x: &[f64; 3]) -> bool {
        x.iter().all(|c| c.abs() <= self.extent)
    }

    /// Trilinear interpolation stencil: eight `(index, weight)` pairs. Points in
    /// the half cell between the outermost nodes and the box faces are clamped
    /// to the outermost nodes; points outside the box are rejected.
    pub fn trilinear(&self, x: &[f64; 3]) -> Result<[(usize, f64); 8]> {
        if !self.contains(x) {
            return Err(Error::OutsideGrid(x.to_vec()));
        }
        let h = self.spacing();
        let m = self.nodes;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let s = ((x[a] + self.extent) / h - 0.5).clamp(0.0, (m - 1) as f64);
            let i0 = (s.floor() as usize).min(m - 2);
            base[a] = i0;
            frac[a] = s - i0 as f64;
        }
        let mut out = [(0usize, 0f64); 8];
        let mut c = 0;
        for di in 0..2 {
            let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
                for dk in 0..2 {
                    let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
                    out[c] = (self.index(base[0] + di, base[1] + dj, base[2] + dk), wi * wj * wk);
                    c += 1;
                }
            }
        }
        Ok(out)
    }

    pub fn interpolate(&self, values: &[f64], x: &[f64; 3]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::GridMismatch);
        }
        Ok(self.trilinear(x)?.iter().map(|&(i, w)| w * values[i]).sum())
    }
}

/// Discrete `L^q` norm with quadrature weight `h^3`.
pub fn lq_norm(grid: &Grid, v: &[f64], q: f64) -> f64 {
    let s: f64 = v.iter().map(|x| x.abs().powf(q)).sum();
    (s * grid.cell_volume()).powf(1.0 / q)
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Central-difference gradient with zero Dirichlet ghosts.
pub fn gradient(grid: &Grid, u: &[f64]) -> [Vec<f64>; 3] {
    let m = grid.nodes;
    let inv2h = 0.5 / grid.spacing();
    let mut g = [vec![0.0; u.len()], vec![0.0; u.len()], vec![0.0; u.len()]];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let idx = grid.index(i, j, k);
                let at = |ii: isize, jj: isize, kk: isize| -> f64 {
                    let r = 0..m as isize;
                    if r.contains(&ii) && r.contains(&jj) && r.contains(&kk) {
                        u[grid.index(ii as usize, jj as usize, kk as usize)]
                    } else {
                        0.0
                    }
                };
                let (ii, jj, kk) = (i as isize, j as isize, k as isize);
                g[0][idx] = (at(ii + 1, jj, kk) - at(ii - 1, jj, kk)) * inv2h;
                g[1][idx] = (at(ii, jj + 1, kk) - at(ii, jj - 1, kk)) * inv2h;
                g[2][idx] = (at(ii, jj, kk + 1) - at(ii, jj, kk - 1)) * inv2h;
            }
        }
    }
    g
}

pub fn gradient_magnitude(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let [gx, gy, gz] = gradient(grid, u);
    gx.iter()
        .zip(&gy)
        .zip(&gz)
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_grid_is_staggered_off_origin() {
        let g = Grid::new(2.0, 48).unwrap();
        assert!(g.staggered());
        let min_r = g
            .nodes_iter()
            .map(|x| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt())
            .fold(f64::INFINITY, f64::min);
        let h = g.spacing();
        assert!((min_r - h * 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert!(!Grid::new(2.0, 47).unwrap().staggered());
    }

    #[test]
    fn trilinear_reproduces_linear_functions() {
        let g = Grid::new(1.5, 10).unwrap();
        let v = g.sample(|x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2]);
        let p = [0.31, -0.77, 0.05];
        let got = g.interpolate(&v, &p).unwrap();
        assert!((got - (1.0 + 0.62 + 0.77 + 0.025)).abs() < 1e-12);
        assert!(g.interpolate(&v, &[1.6, 0.0, 0.0]).is_err());
    }

    #[test]
    fn gradient_of_linear_function_is_exact_inside() {
        let g = Grid::new(1.0, 8).unwrap();
        let v = g.sample(|x| 3.0 * x[1]);
        let gr = gradient(&g, &v);
        let idx = g.index(3, 4, 5);
        assert!((gr[1][idx] - 3.0).abs() < 1e-12);
        assert!(gr[0][idx].abs() < 1e-12);
    }

    #[test]
    fn lq_norm_of_constant() {
        let g = Grid::new(1.0, 4).unwrap();
        let v = vec![2.0; g.len()];
        // volume 8, so ||2||_3 = 2 * 8^(1/3) = 4
        assert!((lq_norm(&g, &v, 3.0) - 4.0).abs() < 1e-12);
    }
}
