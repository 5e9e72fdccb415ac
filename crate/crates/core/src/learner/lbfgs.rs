//! Limited-memory BFGS minimiser with Armijo backtracking.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsParams {
    pub history: usize,
    pub max_iterations: usize,
    /// Stop once `‖g‖₂ ≤ tolerance`.
    pub tolerance: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        LbfgsParams {
            history: 7,
            max_iterations: 200,
            tolerance: 1e-5,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIterations,
    /// The line search could not decrease the objective any further.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

/// Called after every accepted step with the new point; returning an error
/// aborts the run.
pub type Monitor<'a, E> = dyn FnMut(&[f64], f64) -> Result<(), E> + 'a;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimises `f`, which returns the value and gradient at a point.
pub fn minimize<F, E>(
    mut f: F,
    x0: Vec<f64>,
    params: &LbfgsParams,
    monitor: &mut Monitor<'_, E>,
) -> Result<Minimum, E>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut trace = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(params.history);
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    while iterations < params.max_iterations {
        if norm(&g) <= params.tolerance {
            status = Status::Converged;
            break;
        }
        iterations += 1;

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = if pairs.is_empty() {
            (1.0 / norm(&d)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        let mut fallback = None;
        for _ in 0..params.max_backtracks {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = f(&xn);
            evaluations += 1;
            if fn_.is_finite() && fn_ <= fx + params.armijo * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            // near the optimum the decrease drops below rounding; keep a
            // non-increasing step that shrinks the gradient
            if fallback.is_none() && fn_ <= fx && norm(&gn) < norm(&g) {
                fallback = Some((xn, fn_, gn));
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted.or(fallback) else {
            status = Status::Stalled;
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == params.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fn_;
        g = gn;
        trace.push(fx);
        monitor(&x, fx)?;
    }
    if status == Status::MaxIterations && norm(&g) <= params.tolerance {
        status = Status::Converged;
    }
    debug_assert_eq!(x.len(), n);
    Ok(Minimum {
        x,
        value: fx,
        gradient: g,
        iterations,
        evaluations,
        status,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    }

    #[test]
    fn solves_rosenbrock() {
        let params = LbfgsParams {
            max_iterations: 500,
            tolerance: 1e-8,
            ..Default::default()
        };
        let m = minimize(rosenbrock, vec![-1.2, 1.0], &params, &mut |_, _| {
            Ok::<(), Infallible>(())
        })
        .unwrap();
        assert_eq!(m.status, Status::Converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
        assert!(m.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_in_few_steps() {
        let f = |x: &[f64]| {
            let f = 0.5 * (3.0 * x[0] * x[0] + x[1] * x[1] + 10.0 * x[2] * x[2]) - x[0];
            (f, vec![3.0 * x[0] - 1.0, x[1], 10.0 * x[2]])
        };
        let m = minimize(
            f,
            vec![1.0, 1.0, 1.0],
            &LbfgsParams::default(),
            &mut |_, _| Ok::<(), Infallible>(()),
        )
        .unwrap();
        assert_eq!(m.status, Status::Converged);
        assert!((m.x[0] - 1.0 / 3.0).abs() < 1e-5);
        assert!(m.iterations < 20);
    }

    #[test]
    fn empty_problem() {
        let m = minimize(
            |_: &[f64]| (0.0, vec![]),
            vec![],
            &LbfgsParams::default(),
            &mut |_, _| Ok::<(), Infallible>(()),
        )
        .unwrap();
        assert_eq!(m.status, Status::Converged);
        assert_eq!(m.iterations, 0);
    }

    #[test]
    fn monitor_can_abort() {
        let r = minimize(
            rosenbrock,
            vec![-1.2, 1.0],
            &LbfgsParams::default(),
            &mut |_, _| Err("stop"),
        );
        assert_eq!(r.unwrap_err(), "stop");
    }
}
