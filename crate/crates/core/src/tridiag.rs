//! Tridiagonal linear algebra: Thomas factorisation and Sturm-sequence
//! bisection for symmetric tridiagonal eigenvalues.

/// A tridiagonal matrix stored by diagonals. `lower[i]` couples row `i + 1`
/// to column `i`; `upper[i]` couples row `i` to column `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    /// `shift * I + scale * L`, where `L` is the mirror-ghost Neumann
    /// Laplacian with spacing `h`, plus an optional diagonal term.
    pub fn shifted_laplacian(
        n: usize,
        h: f64,
        shift: f64,
        scale: f64,
        extra_diag: Option<&[f64]>,
    ) -> Self {
        let k = scale / (h * h);
        let mut diag = vec![shift - 2.0 * k; n];
        diag[0] = shift - k;
        diag[n - 1] = shift - k;
        if let Some(extra) = extra_diag {
            for (d, e) in diag.iter_mut().zip(extra) {
                *d += e;
            }
        }
        Self {
            lower: vec![k; n - 1],
            diag,
            upper: vec![k; n - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    pub fn factor(&self) -> Option<TridiagonalLu> {
        TridiagonalLu::new(self)
    }

    /// Solve `A x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) -> Option<()> {
        self.factor().map(|lu| lu.solve_in_place(rhs))
    }
}

/// LU factors of a tridiagonal matrix without pivoting (valid for the
/// diagonally dominant M-matrices used throughout the crate).
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagonalLu {
    pub fn new(a: &Tridiagonal) -> Option<Self> {
        let n = a.len();
        let mut inv_pivot = vec![0.0; n];
        let mut multipliers = vec![0.0; n.saturating_sub(1)];
        let mut pivot = a.diag[0];
        if pivot == 0.0 || !pivot.is_finite() {
            return None;
        }
        inv_pivot[0] = 1.0 / pivot;
        for i in 1..n {
            let m = a.lower[i - 1] * inv_pivot[i - 1];
            multipliers[i - 1] = m;
            pivot = a.diag[i] - m * a.upper[i - 1];
            if pivot == 0.0 || !pivot.is_finite() {
                return None;
            }
            inv_pivot[i] = 1.0 / pivot;
        }
        Some(Self {
            lower: multipliers,
            inv_pivot,
            upper: a.upper.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        for i in 1..n {
            x[i] -= self.lower[i - 1] * x[i - 1];
        }
        x[n - 1] *= self.inv_pivot[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) * self.inv_pivot[i];
        }
    }

    /// Solve for a strided column `x[offset + k * stride]`, `k = 0..n`.
    pub fn solve_strided(&self, x: &mut [f64], offset: usize, stride: usize) {
        let n = self.len();
        let at = |k: usize| offset + k * stride;
        for i in 1..n {
            x[at(i)] -= self.lower[i - 1] * x[at(i - 1)];
        }
        x[at(n - 1)] *= self.inv_pivot[n - 1];
        for i in (0..n - 1).rev() {
            x[at(i)] = (x[at(i)] - self.upper[i] * x[at(i + 1)]) * self.inv_pivot[i];
        }
    }
}

/// Number of eigenvalues strictly below `x` of the symmetric tridiagonal
/// matrix with diagonal `diag` and off-diagonal `off`.
pub fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q == 0.0 {
            f64::EPSILON * (1.0 + off[i - 1].abs())
        } else {
            q
        };
        q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k`-th smallest eigenvalue (0-based) of a symmetric tridiagonal matrix,
/// located by bisection on the Sturm count.
pub fn symmetric_eigenvalue(diag: &[f64], off: &[f64], k: usize) -> f64 {
    let n = diag.len();
    assert!(k < n, "eigenvalue index out of range");
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r =
            if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 4.0 * f64::EPSILON * scale {
            break;
        }
        if sturm_count(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_solves_random_dominant_system() {
        let n = 12;
        let a = Tridiagonal {
            lower: (0..n - 1).map(|i| -0.3 - 0.01 * i as f64).collect(),
            diag: (0..n).map(|i| 2.0 + 0.1 * i as f64).collect(),
            upper: (0..n - 1).map(|i| -0.5 + 0.02 * i as f64).collect(),
        };
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = a.apply(&x);
        a.solve_in_place(&mut b).unwrap();
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn strided_solve_matches_contiguous() {
        let a = Tridiagonal::shifted_laplacian(5, 0.2, 1.0, -0.3, None);
        let lu = a.factor().unwrap();
        let col = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mut contiguous = col.to_vec();
        lu.solve_in_place(&mut contiguous);
        let mut strided = vec![0.0; 15];
        for (k, v) in col.iter().enumerate() {
            strided[1 + 3 * k] = *v;
        }
        lu.solve_strided(&mut strided, 1, 3);
        for k in 0..5 {
            assert!((strided[1 + 3 * k] - contiguous[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn bisection_matches_closed_form_neumann_spectrum() {
        // -L on n cells with mirror ghosts has eigenvalues (4/h^2) sin^2(k pi / 2n).
        let n = 20;
        let h = 1.0 / n as f64;
        let a = Tridiagonal::shifted_laplacian(n, h, 0.0, -1.0, None);
        for k in 0..4 {
            let exact = 4.0 / (h * h)
                * (k as f64 * std::f64::consts::PI / (2.0 * n as f64))
                    .sin()
                    .powi(2);
            let got = symmetric_eigenvalue(&a.diag, &a.upper, k);
            assert!(
                (got - exact).abs() < 1e-9 * exact.max(1.0),
                "k={k} {got} {exact}"
            );
        }
    }
}
