use serde::{Deserialize, Serialize};

/// Test functions with analytic gradient and Hessian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// `y_i`.
    Coordinate { i: usize },
    /// `y_i y_j`.
    Product { i: usize, j: usize },
    /// `exp(1 - 1/(1-s))` for `s = |y-c|²/R² < 1`, zero otherwise.
    Bump { centre: [f64; 3], radius: f64 },
}

impl Observable {
    pub fn tag(&self) -> String {
        match self {
            Observable::Coordinate { i } => format!("y{}", i + 1),
            Observable::Product { i, j } => format!("y{}y{}", i + 1, j + 1),
            Observable::Bump { centre, radius } => format!("bump({},{},{};{})", centre[0], centre[1], centre[2], radius),
        }
    }

    pub fn value(&self, y: &[f64; 3]) -> f64 {
        match self {
            Observable::Coordinate { i } => y[*i],
            Observable::Product { i, j } => y[*i] * y[*j],
            Observable::Bump { centre, radius } => {
                let s = bump_s(y, centre, *radius);
                if s < 1.0 {
                    (1.0 - 1.0 / (1.0 - s)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Gradient and row-major Hessian.
    pub fn derivatives(&self, y: &[f64; 3]) -> ([f64; 3], [f64; 9]) {
        let mut g = [0.0; 3];
        let mut hs = [0.0; 9];
        match self {
            Observable::Coordinate { i } => g[*i] = 1.0,
            Observable::Product { i, j } => {
                g[*i] += y[*j];
                g[*j] += y[*i];
                hs[i * 3 + j] += 1.0;
                hs[j * 3 + i] += 1.0;
            }
            Observable::Bump { centre, radius } => {
                let s = bump_s(y, centre, *radius);
                if s < 1.0 {
                    let w = 1.0 - s;
                    let f = (1.0 - 1.0 / w).exp();
                    let g1 = -f / (w * w);
                    let g2 = f * (1.0 / w.powi(4) - 2.0 / w.powi(3));
                    let r2 = radius * radius;
                    let z: [f64; 3] = std::array::from_fn(|k| y[k] - centre[k]);
                    for a in 0..3 {
                        g[a] = g1 * 2.0 * z[a] / r2;
                        for b in 0..3 {
                            hs[a * 3 + b] = g2 * 4.0 * z[a] * z[b] / (r2 * r2) + if a == b { g1 * 2.0 / r2 } else { 0.0 };
                        }
                    }
                }
            }
        }
        (g, hs)
    }

    /// Ball containing the support, if bounded.
    pub fn support(&self) -> Option<([f64; 3], f64)> {
        match self {
            Observable::Bump { centre, radius } => Some((*centre, *radius)),
            _ => None,
        }
    }
}

fn bump_s(y: &[f64; 3], c: &[f64; 3], r: f64) -> f64 {
    ((y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2) + (y[2] - c[2]).powi(2)) / (r * r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_derivatives_match_differences() {
        let f = Observable::Bump { centre: [1.0, 0.0, 0.0], radius: 0.75 };
        let y = [1.2, 0.3, -0.1];
        let (g, hs) = f.derivatives(&y);
        let h = 1e-5;
        for a in 0..3 {
            let mut p = y;
            let mut m = y;
            p[a] += h;
            m[a] -= h;
            assert!((g[a] - (f.value(&p) - f.value(&m)) / (2.0 * h)).abs() < 1e-8);
            let (gp, _) = f.derivatives(&p);
            let (gm, _) = f.derivatives(&m);
            for b in 0..3 {
                assert!((hs[a * 3 + b] - (gp[b] - gm[b]) / (2.0 * h)).abs() < 1e-6);
            }
        }
        assert_eq!(f.value(&[2.0, 0.0, 0.0]), 0.0);
    }
}
