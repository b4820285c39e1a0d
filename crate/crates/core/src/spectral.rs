//! Exact functional calculus for the 7-point Dirichlet Laplacian on a [`Grid`].
//!
//! The discrete Laplacian with zero ghosts is diagonalised by the type-I sine
//! transform along each axis, so `(λ - Δ_h)^{-s}`, resolvents and the heat
//! semigroup of `Δ_h` are applied exactly (up to rounding) in `O(N log N)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

#[derive(Clone)]
pub struct DirichletSpectrum {
    grid: Grid,
    /// Eigenvalues of the 1-D operator `-D_xx`, mode `k = 1..=m` stored at `k-1`.
    eig1d: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DirichletSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirichletSpectrum").field("grid", &self.grid).finish()
    }
}

impl DirichletSpectrum {
    pub fn new(grid: &Grid) -> Self {
        let m = grid.nodes;
        let h = grid.spacing();
        let eig1d = (1..=m)
            .map(|k| {
                let s = (k as f64 * PI / (2.0 * (m as f64 + 1.0))).sin();
                4.0 / (h * h) * s * s
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(2 * (m + 1));
        Self { grid: grid.clone(), eig1d, fft }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Eigenvalue of `-Δ_h` for the mode `(k1, k2, k3)`, each in `1..=m`.
    pub fn eigenvalue(&self, k: [usize; 3]) -> f64 {
        k.iter().map(|&ki| self.eig1d[ki - 1]).sum()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        3.0 * self.eig1d[self.grid.nodes - 1]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        3.0 * self.eig1d[0]
    }

    /// Grid function of the mode `(k1, k2, k3)` (unnormalised products of sines).
    pub fn eigenvector(&self, k: [usize; 3]) -> Vec<f64> {
        let m = self.grid.nodes;
        let w = |kk: usize, i: usize| (PI * kk as f64 * (i + 1) as f64 / (m as f64 + 1.0)).sin();
        let mut v = vec![0.0; self.grid.len()];
        for i in 0..m {
            for j in 0..m {
                for l in 0..m {
                    v[self.grid.index(i, j, l)] = w(k[0], i) * w(k[1], j) * w(k[2], l);
                }
            }
        }
        v
    }

    /// Unnormalised DST-I along every axis, in place.
    fn dst3(&self, v: &mut [f64]) {
        let m = self.grid.nodes;
        let n = 2 * (m + 1);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut line = vec![0.0; m];
        let strides = [m * m, m, 1];
        for (axis, &stride) in strides.iter().enumerate() {
            let others: Vec<usize> = (0..3).filter(|&a| a != axis).map(|a| strides[a]).collect();
            for p in 0..m {
                for q in 0..m {
                    let start = p * others[0] + q * others[1];
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = v[start + i * stride];
                    }
                    buf[0] = Complex::new(0.0, 0.0);
                    buf[m + 1] = Complex::new(0.0, 0.0);
                    for i in 0..m {
                        buf[i + 1] = Complex::new(line[i], 0.0);
                        buf[n - 1 - i] = Complex::new(-line[i], 0.0);
                    }
                    self.fft.process_with_scratch(&mut buf, &mut scratch);
                    for k in 0..m {
                        v[start + k * stride] = -0.5 * buf[k + 1].im;
                    }
                }
            }
        }
    }

    /// Apply `φ(-Δ_h)` to `v`.
    pub fn apply_fn(&self, v: &[f64], phi: impl Fn(f64) -> f64) -> Vec<f64> {
        assert_eq!(v.len(), self.grid.len(), "grid function size mismatch");
        let m = self.grid.nodes;
        let mut w = v.to_vec();
        self.dst3(&mut w);
        for i in 0..m {
            for j in 0..m {
                let eij = self.eig1d[i] + self.eig1d[j];
                for k in 0..m {
                    w[(i * m + j) * m + k] *= phi(eij + self.eig1d[k]);
                }
            }
        }
        self.dst3(&mut w);
        let scale = (2.0 / (m as f64 + 1.0)).powi(3);
        w.iter_mut().for_each(|x| *x *= scale);
        w
    }

    /// `(μ - Δ_h)^{-1} v`.
    pub fn resolvent(&self, mu: f64, v: &[f64]) -> Vec<f64> {
        self.apply_fn(v, |l| 1.0 / (mu + l))
    }

    /// `(λ - Δ_h)^{-s} v`.
    pub fn fractional_resolvent(&self, lambda: f64, s: f64, v: &[f64]) -> Vec<f64> {
        self.apply_fn(v, |l| (lambda + l).powf(-s))
    }
}

/// `-Δ_h u` with zero Dirichlet ghosts, by stencil.
pub fn neg_laplacian(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let m = grid.nodes;
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let idx = grid.index(i, j, k);
                let mut s = 6.0 * u[idx];
                if i > 0 { s -= u[idx - m * m]; }
                if i + 1 < m { s -= u[idx + m * m]; }
                if j > 0 { s -= u[idx - m]; }
                if j + 1 < m { s -= u[idx + m]; }
                if k > 0 { s -= u[idx - 1]; }
                if k + 1 < m { s -= u[idx + 1]; }
                out[idx] = s * inv_h2;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_are_eigenvectors_of_the_stencil() {
        let g = Grid::new(1.0, 9).unwrap();
        let sp = DirichletSpectrum::new(&g);
        let k = [2, 5, 7];
        let v = sp.eigenvector(k);
        let mut lv = vec![0.0; v.len()];
        neg_laplacian(&g, &v, &mut lv);
        let lam = sp.eigenvalue(k);
        for (a, b) in lv.iter().zip(&v) {
            assert!((a - lam * b).abs() < 1e-9 * lam);
        }
    }

    #[test]
    fn resolvent_inverts_shifted_stencil() {
        let g = Grid::new(2.0, 12).unwrap();
        let sp = DirichletSpectrum::new(&g);
        let f: Vec<f64> = (0..g.len()).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let mu = 3.5;
        let u = sp.resolvent(mu, &f);
        let mut lu = vec![0.0; u.len()];
        neg_laplacian(&g, &u, &mut lu);
        for i in 0..u.len() {
            assert!((mu * u[i] + lu[i] - f[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn half_powers_compose() {
        let g = Grid::new(1.0, 8).unwrap();
        let sp = DirichletSpectrum::new(&g);
        let f = g.sample(|x| (x[0] + 0.3 * x[1]).cos() * (1.0 - x[2] * x[2]));
        let half = sp.fractional_resolvent(2.0, 0.5, &sp.fractional_resolvent(2.0, 0.5, &f));
        let full = sp.resolvent(2.0, &f);
        for (a, b) in half.iter().zip(&full) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
