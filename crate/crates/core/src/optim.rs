//! Small derivative-free and quasi-Newton minimizers used by the estimators.

/// Options for [`nelder_mead`].
#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    /// Converged once every vertex is within this ∞-distance of the best one.
    pub xtol: f64,
    /// ...and the spread of objective values over the simplex is below this.
    pub ftol: f64,
    pub max_iter: usize,
    /// Relative perturbation for non-zero start coordinates.
    pub nonzero_step: f64,
    /// Absolute perturbation for zero start coordinates.
    pub zero_step: f64,
}

impl NelderMeadOptions {
    /// Default tolerances with `200 · dim` iterations.
    pub fn for_dim(dim: usize) -> Self {
        Self {
            xtol: 1e-6,
            ftol: 1e-10,
            max_iter: 200 * dim.max(1),
            nonzero_step: 0.05,
            zero_step: 0.00025,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex minimization with the standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
///
/// Non-finite objective values are treated as `+∞`.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> MinimizeResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for k in 0..n {
        let mut v = x0.to_vec();
        v[k] = if v[k] != 0.0 {
            v[k] * (1.0 + opts.nonzero_step)
        } else {
            opts.zero_step
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        // sort vertices by objective
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        values = order.iter().map(|&k| values[k]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let fspread = values[n] - values[0];
        if diameter <= opts.xtol && fspread <= opts.ftol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(0.5);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(-0.5);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for k in 1..=n {
            let shrunk: Vec<f64> = simplex[k]
                .iter()
                .zip(&simplex[0])
                .map(|(v, b)| b + 0.5 * (v - b))
                .collect();
            values[k] = eval(&shrunk);
            simplex[k] = shrunk;
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    MinimizeResult {
        x: simplex[best].clone(),
        fx: values[best],
        iterations,
        evaluations,
        converged,
    }
}

/// Options for [`lbfgs`].
#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Converged when the gradient's ∞-norm falls below this.
    pub grad_tol: f64,
    pub memory: usize,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            memory: 10,
            max_line_search: 40,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Limited-memory BFGS with Armijo backtracking.
///
/// `fg` returns the objective and its gradient; non-finite values make the
/// line search back off.
pub fn lbfgs<F>(fg: F, x0: &[f64], opts: &LbfgsOptions) -> MinimizeResult
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut evaluations = 1;
    let mut x = x0.to_vec();
    let (mut fx, mut g) = fg(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut converged = fx.is_finite() && inf_norm(&g) <= opts.grad_tol;
    let mut stalls = 0;

    while !converged && iterations < opts.max_iter && fx.is_finite() {
        iterations += 1;
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            for k in 0..n {
                q[k] -= a * y[k];
            }
            alphas.push((a, rho));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / inf_norm(&g).max(1.0),
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for k in 0..n {
                q[k] += s[k] * (a - b);
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // not a descent direction: reset memory and use steepest descent
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_line_search {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (ft, gt) = fg(&trial);
            evaluations += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            stalls += 1;
            if stalls > 3 {
                break;
            }
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        converged = inf_norm(&g) <= opts.grad_tol;
        if improvement.abs() <= 1e-15 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls > 5 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    MinimizeResult {
        x,
        fx,
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosenbrock_grad(x: &[f64]) -> (f64, Vec<f64>) {
        let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
        let g1 = 200.0 * (x[1] - x[0] * x[0]);
        (rosenbrock(x), vec![g0, g1])
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let mut opts = NelderMeadOptions::for_dim(2);
        opts.max_iter = 5000;
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_reports_non_convergence() {
        let mut opts = NelderMeadOptions::for_dim(2);
        opts.max_iter = 5;
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts);
        assert!(!r.converged);
        assert_eq!(r.iterations, 5);
    }

    #[test]
    fn nelder_mead_handles_infinite_regions() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let r = nelder_mead(f, &[1.0], &NelderMeadOptions::for_dim(1));
        assert!(r.converged);
        assert!((r.x[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let r = lbfgs(rosenbrock_grad, &[-1.2, 1.0], &LbfgsOptions::default());
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn lbfgs_quadratic_is_exact() {
        let fg = |x: &[f64]| {
            let f = 0.5 * (3.0 * x[0] * x[0] + x[1] * x[1]) - x[0] - 2.0 * x[1];
            (f, vec![3.0 * x[0] - 1.0, x[1] - 2.0])
        };
        let r = lbfgs(fg, &[0.0, 0.0], &LbfgsOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0 / 3.0).abs() < 1e-6 && (r.x[1] - 2.0).abs() < 1e-6);
    }
}
