//! Projected limited-memory BFGS on a box.
//!
//! Variables sitting on a bound with the gradient pushing outward are frozen
//! for the iteration; the quasi-Newton direction is built on the remaining
//! ones and the step is projected back onto the box. Objectives may return
//! `+∞` outside their domain, which the backtracking line search treats as a
//! rejected step.

/// Objective with gradient; returns `f(x)` and writes `∇f(x)` into `grad`.
pub(crate) trait Objective {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Objective for F {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsOptions {
    pub max_iterations: usize,
    /// Stop when the projected gradient, scaled by box widths, falls below
    /// this fraction of `max(|f|, f_scale)`.
    pub gradient_tolerance: f64,
    pub f_scale: f64,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { max_iterations: 300, gradient_tolerance: 1e-11, f_scale: 0.0, memory: 8 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

const BOUND_EPS: f64 = 1e-14;

fn free_mask(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            let at_lo = x[i] <= lo[i] + BOUND_EPS * (hi[i] - lo[i]) && g[i] > 0.0;
            let at_hi = x[i] >= hi[i] - BOUND_EPS * (hi[i] - lo[i]) && g[i] < 0.0;
            !(at_lo || at_hi)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn minimize<O: Objective + ?Sized>(obj: &O, x0: &[f64], lo: &[f64], hi: &[f64], opts: &LbfgsOptions) -> Minimum {
    let n = x0.len();
    let mut x: Vec<f64> = x0.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| v.clamp(l, h)).collect();
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g);
    if n == 0 || !f.is_finite() {
        return Minimum { x, f, iterations: 0 };
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut g_new = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut stalls = 0;
    for it in 0..opts.max_iterations {
        let free = free_mask(&x, &g, lo, hi);
        let pg_norm = (0..n).filter(|&i| free[i]).map(|i| (g[i] * (hi[i] - lo[i])).abs()).fold(0.0, f64::max);
        if pg_norm <= opts.gradient_tolerance * f.abs().max(opts.f_scale) {
            return Minimum { x, f, iterations: it };
        }
        let mut d = two_loop(&g, &free, &s_hist, &y_hist);
        if dot(&g, &d) >= 0.0 {
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
            s_hist.clear();
            y_hist.clear();
        }
        if s_hist.is_empty() {
            // Keep the first steepest-descent step inside a quarter of the box.
            let m = (0..n).map(|i| d[i].abs() / (hi[i] - lo[i]).max(1e-300)).fold(0.0, f64::max);
            if m > 0.25 {
                d.iter_mut().for_each(|v| *v *= 0.25 / m);
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            for i in 0..n {
                trial[i] = (x[i] + t * d[i]).clamp(lo[i], hi[i]);
            }
            let ft = obj.eval(&trial, &mut g_new);
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            if ft.is_finite() && ft <= f + 1e-4 * decrease {
                accepted = Some(ft);
                break;
            }
            t *= 0.5;
        }
        let Some(ft) = accepted else {
            if !s_hist.is_empty() {
                s_hist.clear();
                y_hist.clear();
                continue;
            }
            return Minimum { x, f, iterations: it };
        };
        let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        let improvement = f - ft;
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_new);
        f = ft;
        if improvement <= 1e-15 * f.abs().max(opts.f_scale) {
            stalls += 1;
            if stalls >= 10 {
                return Minimum { x, f, iterations: it + 1 };
            }
        } else {
            stalls = 0;
        }
    }
    Minimum { x, f, iterations: opts.max_iterations }
}

fn two_loop(g: &[f64], free: &[bool], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let n = g.len();
    let mask = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| if free[i] { v[i] } else { 0.0 }).collect() };
    let mut q = mask(g);
    let m = s_hist.len();
    let mut alphas = vec![0.0; m];
    let masked: Vec<(Vec<f64>, Vec<f64>)> = s_hist.iter().zip(y_hist).map(|(s, y)| (mask(s), mask(y))).collect();
    let rho: Vec<f64> = masked.iter().map(|(s, y)| dot(s, y)).collect();
    for i in (0..m).rev() {
        if rho[i] <= 0.0 {
            continue;
        }
        alphas[i] = dot(&masked[i].0, &q) / rho[i];
        for j in 0..n {
            q[j] -= alphas[i] * masked[i].1[j];
        }
    }
    if let Some((s, y)) = masked.last() {
        let yy = dot(y, y);
        let sy = dot(s, y);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for i in 0..m {
        if rho[i] <= 0.0 {
            continue;
        }
        let beta = dot(&masked[i].1, &q) / rho[i];
        for j in 0..n {
            q[j] += (alphas[i] - beta) * masked[i].0[j];
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_in_box() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let opts = LbfgsOptions { max_iterations: 2000, f_scale: 1.0, ..Default::default() };
        let m = minimize(&f, &[-1.0, 2.0], &[-2.0, -2.0], &[2.0, 3.0], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m);
    }

    #[test]
    fn active_bound_is_respected() {
        // Unconstrained minimum at (2, -1); box caps x ≤ 1 and y ≥ 0.
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 2.0);
            g[1] = 2.0 * (x[1] + 1.0);
            (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2)
        };
        let m = minimize(&f, &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], &LbfgsOptions { f_scale: 1.0, ..Default::default() });
        assert!((m.x[0] - 1.0).abs() < 1e-12 && m.x[1].abs() < 1e-12);
    }

    #[test]
    fn infinite_region_is_rejected() {
        // Barrier-like objective defined only for x < 1.
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] >= 1.0 {
                return f64::INFINITY;
            }
            g[0] = -1.0 + 0.01 / (1.0 - x[0]);
            -x[0] - 0.01 * (1.0 - x[0]).ln()
        };
        let m = minimize(&f, &[0.0], &[0.0], &[2.0], &LbfgsOptions { f_scale: 1.0, ..Default::default() });
        assert!((m.x[0] - 0.99).abs() < 1e-8, "{:?}", m);
    }
}
