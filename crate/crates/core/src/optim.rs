//! Derivative-free and finite-difference optimization helpers used by the
//! outer likelihood loop and the concavity diagnostic.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nelder–Mead settings. The search stops when both the simplex diameter
/// (sup norm, relative to the best vertex) and the spread of objective values
/// fall below their tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub xtol: f64,
    pub ftol: f64,
    pub max_iter: usize,
    /// Per-coordinate initial simplex offsets; defaults to `0.1·|x₀| + 0.05`.
    #[serde(default)]
    pub initial_step: Option<Vec<f64>>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { xtol: 1e-6, ftol: 1e-8, max_iter: 2000, initial_step: None }
    }
}

/// Outcome of a maximization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best point after every iteration that improved it.
    pub trace: Vec<(Vec<f64>, f64)>,
}

fn clamp(x: &mut [f64], bounds: Option<&[(f64, f64)]>) {
    if let Some(b) = bounds {
        for (xi, &(lo, hi)) in x.iter_mut().zip(b) {
            *xi = xi.clamp(lo, hi);
        }
    }
}

fn check_start(x0: &[f64], bounds: Option<&[(f64, f64)]>) -> Result<()> {
    if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("starting point must be a non-empty finite vector"));
    }
    if let Some(b) = bounds {
        if b.len() != x0.len() {
            return Err(Error::invalid("bounds length must match the starting point"));
        }
    }
    Ok(())
}

/// Maximizes `f` by Nelder–Mead with every trial point clamped into `bounds`.
///
/// `f` may return `-inf` for infeasible points; errors abort the search.
pub fn nelder_mead_max<F>(
    mut f: F,
    x0: &[f64],
    bounds: Option<&[(f64, f64)]>,
    opts: &NelderMeadOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_start(x0, bounds)?;
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let v = f(x)?;
        Ok(if v.is_nan() { f64::NEG_INFINITY } else { v })
    };

    let mut start = x0.to_vec();
    clamp(&mut start, bounds);
    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for i in 0..n {
        let step = match &opts.initial_step {
            Some(s) => s[i],
            None => 0.1 * start[i].abs() + 0.05,
        };
        let mut v = start.clone();
        v[i] += step;
        if let Some(b) = bounds {
            if v[i] > b[i].1 {
                v[i] = start[i] - step;
            }
        }
        clamp(&mut v, bounds);
        simplex.push(v);
    }
    let mut values = Vec::with_capacity(n + 1);
    for v in &simplex {
        values.push(eval(v, &mut evals)?);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut trace = Vec::new();
    let mut best_seen = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        // Sort descending: order[0] is the best vertex.
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let best = order[0];
        if values[best] > best_seen {
            best_seen = values[best];
            trace.push((simplex[best].clone(), values[best]));
        }
        let diameter = order[1..]
            .iter()
            .map(|&j| {
                simplex[j]
                    .iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let worst = order[n];
        let spread = if values[worst].is_finite() {
            (values[best] - values[worst]).abs()
        } else {
            f64::INFINITY
        };
        if diameter <= opts.xtol && spread <= opts.ftol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for &j in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[j]) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            clamp(&mut p, bounds);
            p
        };
        let second_worst = values[order[n - 1]];
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals)?;
        if fr > values[best] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals)?;
            if fe > fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if fr > second_worst {
            simplex[worst] = xr;
            values[worst] = fr;
            continue;
        }
        let outside = fr > values[worst];
        let xc = along(if outside { 0.5 } else { -0.5 });
        let fc = eval(&xc, &mut evals)?;
        let accept = if outside { fc >= fr } else { fc > values[worst] };
        if accept {
            simplex[worst] = xc;
            values[worst] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        let anchor = simplex[best].clone();
        for &j in &order[1..] {
            let mut p: Vec<f64> = simplex[j]
                .iter()
                .zip(&anchor)
                .map(|(x, b)| b + 0.5 * (x - b))
                .collect();
            clamp(&mut p, bounds);
            values[j] = eval(&p, &mut evals)?;
            simplex[j] = p;
        }
    }

    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let best = order[0];
    if values[best] > best_seen {
        trace.push((simplex[best].clone(), values[best]));
    }
    Ok(OptimResult {
        x: simplex[best].clone(),
        fx: values[best],
        iterations,
        evaluations: evals,
        converged,
        trace,
    })
}

/// Absolute finite-difference step for coordinate value `x` and relative step `h`.
pub fn fd_step(x: f64, h: f64) -> f64 {
    h * x.abs().max(1.0)
}

/// Central-difference gradient.
pub fn fd_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut g = Vec::with_capacity(x.len());
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let hi = fd_step(x[i], h);
        p[i] = x[i] + hi;
        let up = f(&p)?;
        p[i] = x[i] - hi;
        let down = f(&p)?;
        p[i] = x[i];
        g.push((up - down) / (2.0 * hi));
    }
    Ok(g)
}

/// Central-difference Hessian (not symmetrized).
pub fn fd_hessian<F>(mut f: F, x: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let n = x.len();
    let steps: Vec<f64> = x.iter().map(|&v| fd_step(v, h)).collect();
    let f0 = f(x)?;
    let mut hess = DMatrix::zeros(n, n);
    let mut p = x.to_vec();
    for i in 0..n {
        p[i] = x[i] + steps[i];
        let up = f(&p)?;
        p[i] = x[i] - steps[i];
        let down = f(&p)?;
        p[i] = x[i];
        hess[(i, i)] = (up - 2.0 * f0 + down) / (steps[i] * steps[i]);
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                p[i] = x[i] + si * steps[i];
                p[j] = x[j] + sj * steps[j];
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            hess[(i, j)] = (pp - pm - mp + mm) / (4.0 * steps[i] * steps[j]);
        }
    }
    Ok(hess)
}

/// Largest relative asymmetry `|H_ij − H_ji| / max(1, max|H|)`.
pub fn asymmetry(h: &DMatrix<f64>) -> f64 {
    let scale = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..h.nrows() {
        for j in 0..i {
            worst = worst.max((h[(i, j)] - h[(j, i)]).abs() / scale);
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let sym = (h + h.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Settings for finite-difference gradient ascent with backtracking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientOptions {
    /// Stop when the gradient sup norm drops below this.
    pub gtol: f64,
    /// Stop when an accepted step moves θ less than this (sup norm).
    pub xtol: f64,
    pub h: f64,
    pub initial_step: f64,
    pub max_iter: usize,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self { gtol: 1e-6, xtol: 1e-9, h: 1e-5, initial_step: 1.0, max_iter: 500 }
    }
}

/// Projected gradient ascent with central-difference gradients.
pub fn gradient_ascent_max<F>(
    mut f: F,
    x0: &[f64],
    bounds: Option<&[(f64, f64)]>,
    opts: &GradientOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_start(x0, bounds)?;
    let mut x = x0.to_vec();
    clamp(&mut x, bounds);
    let mut evals = 1;
    let mut fx = f(&x)?;
    let mut trace = vec![(x.clone(), fx)];
    let mut step = opts.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let g = fd_gradient(&mut f, &x, opts.h)?;
        evals += 2 * x.len();
        // Projected gradient: components pushing against an active bound are zeroed.
        let pg: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, &gi)| match bounds {
                Some(b) if (x[i] <= b[i].0 && gi < 0.0) || (x[i] >= b[i].1 && gi > 0.0) => 0.0,
                _ => gi,
            })
            .collect();
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= opts.gtol {
            converged = true;
            break;
        }
        let mut accepted = false;
        let mut t = step;
        for _ in 0..60 {
            let mut cand: Vec<f64> = x.iter().zip(&pg).map(|(xi, gi)| xi + t * gi).collect();
            clamp(&mut cand, bounds);
            evals += 1;
            let fc = f(&cand)?;
            if fc > fx {
                let moved = cand.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                x = cand;
                fx = fc;
                trace.push((x.clone(), fx));
                accepted = true;
                step = t * 2.0;
                if moved <= opts.xtol {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || converged {
            converged = converged || !accepted;
            break;
        }
    }
    Ok(OptimResult { x, fx, iterations, evaluations: evals, converged, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(x: &[f64]) -> Result<f64> {
        Ok(-(x[0] - 1.0).powi(2) - 3.0 * (x[1] + 0.5).powi(2) - 0.5 * (x[0] - 1.0) * (x[1] + 0.5))
    }

    #[test]
    fn nelder_mead_finds_quadratic_peak() {
        let r = nelder_mead_max(bowl, &[0.0, 0.0], None, &NelderMeadOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] + 0.5).abs() < 1e-5, "{:?}", r.x);
        for w in r.trace.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn nelder_mead_respects_box() {
        let bounds = [(-2.0, 0.5), (0.0, 3.0)];
        let r = nelder_mead_max(bowl, &[0.0, 1.0], Some(&bounds), &NelderMeadOptions::default()).unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-4);
        assert!(r.x[1].abs() < 1e-4);
    }

    #[test]
    fn gradient_ascent_matches() {
        let r = gradient_ascent_max(bowl, &[3.0, 2.0], None, &GradientOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] + 0.5).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn quadratic_surrogate_curvature() {
        let f = |x: &[f64]| Ok(-(x[0] - 1.0).powi(2));
        let h = fd_hessian(f, &[0.3], 1e-3).unwrap();
        assert!((-h[(0, 0)] - 2.0).abs() < 1e-4);
        let h2 = fd_hessian(bowl, &[0.2, 0.1], 1e-3).unwrap();
        assert!(asymmetry(&h2) < 1e-4);
        let c = min_eigenvalue(&(-h2));
        // Eigenvalues of [[2, .5], [.5, 6]].
        let exact = 4.0 - (4.0f64 + 0.25).sqrt();
        assert!((c - exact).abs() < 1e-4);
    }

    #[test]
    fn gradient_of_linear() {
        let g = fd_gradient(|x: &[f64]| Ok(2.0 * x[0] - x[1]), &[5.0, -1.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] + 1.0).abs() < 1e-9);
    }
}
