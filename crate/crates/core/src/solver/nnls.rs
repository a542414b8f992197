//! Nonnegative least squares (Lawson–Hanson active set).

use nalgebra::{DMatrix, DVector};

/// Minimizes `‖A x − b‖₂` subject to `x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300) * b.amax().max(1.0);
    let tol = 1e-12 * scale * (a.nrows().max(n) as f64);
    let mut passive = vec![false; n];
    let gradient = |x: &DVector<f64>| a.transpose() * (b - a * x);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        if cols.is_empty() {
            return DVector::zeros(n);
        }
        let sub = a.select_columns(&cols);
        let sol = sub.svd(true, true).solve(b, 1e-14).unwrap_or_else(|_| DVector::zeros(cols.len()));
        let mut z = DVector::zeros(n);
        for (i, &j) in cols.iter().enumerate() {
            z[j] = sol[i];
        }
        z
    };
    for _ in 0..3 * n + 10 {
        let w = gradient(&x);
        let pick = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = pick else { break };
        passive[j] = true;
        for _ in 0..3 * n + 10 {
            let z = solve_passive(&passive);
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            let step = (0..n)
                .filter(|&i| passive[i] && z[i] <= 0.0)
                .map(|i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * step;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 * scale {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_solution_is_kept() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_component_is_clipped() {
        // Least squares wants x = (2, -1); the constrained optimum drops x₁.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let x = nnls(&a, &b);
        assert!(x[1] == 0.0 && (x[0] - 1.0).abs() < 1e-12, "{x}");
    }

    #[test]
    fn matches_brute_force_on_small_problem() {
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, -1.0, 0.5, -1.0, 2.0, 3.0, 0.0, 1.0, -2.0, 1.0, 0.5]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let x = nnls(&a, &b);
        let best = (0..8u32)
            .filter_map(|mask| {
                let cols: Vec<usize> = (0..3).filter(|j| mask >> j & 1 == 1).collect();
                if cols.is_empty() {
                    return Some(b.norm());
                }
                let sub = a.select_columns(&cols);
                let sol = sub.svd(true, true).solve(&b, 1e-14).ok()?;
                if sol.iter().any(|&v| v < 0.0) {
                    return None;
                }
                let mut full = DVector::zeros(3);
                for (i, &j) in cols.iter().enumerate() {
                    full[j] = sol[i];
                }
                Some((&a * &full - &b).norm())
            })
            .fold(f64::INFINITY, f64::min);
        assert!(((&a * &x - &b).norm() - best).abs() < 1e-10);
    }
}
