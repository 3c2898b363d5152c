//! Box-constrained Nelder-Mead.
//!
//! Trial points are projected onto the box before evaluation. Coefficients
//! follow the dimension-adaptive scheme of Gao and Han, which behaves better
//! than the textbook values beyond three or four dimensions. When the simplex
//! collapses the search is restarted around the incumbent until a restart
//! stops improving it.

use crate::models::Bound;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadConfig {
    /// Total objective evaluations allowed, restarts included.
    pub max_evals: usize,
    /// Converged once every vertex is within this distance (max-norm) of the best.
    pub tolerance: f64,
    /// Initial edge length as a fraction of each box width.
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            max_evals: 2000,
            tolerance: 1e-8,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

struct Counted<'a, F> {
    f: &'a mut F,
    lower: Vec<f64>,
    upper: Vec<f64>,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<'_, F> {
    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.max(*lo).min(*hi);
        }
    }

    fn eval(&mut self, x: &mut [f64]) -> f64 {
        self.project(x);
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `f` over the finite box `bounds`, starting at `x0`.
pub fn minimize<F>(mut f: F, x0: &[f64], bounds: &[Bound], cfg: &NelderMeadConfig) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x0.len(), bounds.len(), "start point and bounds disagree");
    let n = x0.len();
    let mut obj = Counted {
        f: &mut f,
        lower: bounds.iter().map(|b| b.lower).collect(),
        upper: bounds.iter().map(|b| b.upper).collect(),
        evals: 0,
    };
    let mut best = x0.to_vec();
    let mut best_value = obj.eval(&mut best);
    if n == 0 {
        return Minimum {
            x: best,
            value: best_value,
            evaluations: obj.evals,
            iterations: 0,
            converged: true,
        };
    }

    let nf = n as f64;
    let (reflect, expand, contract, shrink) =
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let widths: Vec<f64> = bounds.iter().map(|b| b.upper - b.lower).collect();
    let mut iterations = 0;
    let mut step_scale = cfg.initial_step;

    loop {
        // fresh simplex around the incumbent, stepping inward where needed
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best.clone(), best_value));
        for i in 0..n {
            let mut x = best.clone();
            let h = (step_scale * widths[i]).max(cfg.tolerance * 10.0);
            x[i] = if x[i] + h <= obj.upper[i] {
                x[i] + h
            } else {
                x[i] - h
            };
            let v = obj.eval(&mut x);
            simplex.push((x, v));
        }

        let mut collapsed = false;
        while obj.evals < cfg.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let size = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if size < cfg.tolerance {
                collapsed = true;
                break;
            }
            iterations += 1;

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / nf;
                }
            }
            let worst = simplex[n].0.clone();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let mut xr = along(reflect);
            let fr = obj.eval(&mut xr);
            if fr < simplex[0].1 {
                let mut xe = along(reflect * expand);
                let fe = obj.eval(&mut xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (mut xc, inside) = if fr < simplex[n].1 {
                (along(reflect * contract), false)
            } else {
                (along(-contract), true)
            };
            let fc = obj.eval(&mut xc);
            let threshold = if inside { simplex[n].1 } else { fr };
            if fc < threshold {
                simplex[n] = (xc, fc);
                continue;
            }
            let anchor = simplex[0].0.clone();
            for (x, v) in simplex[1..].iter_mut() {
                for (xi, ai) in x.iter_mut().zip(&anchor) {
                    *xi = ai + shrink * (*xi - ai);
                }
                *v = obj.eval(x);
            }
        }

        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, v) = simplex.swap_remove(0);
        let improved = v < best_value - 1e-12 * (1.0 + best_value.abs());
        if v <= best_value {
            best = x;
            best_value = v;
        }
        if !collapsed {
            return Minimum {
                x: best,
                value: best_value,
                evaluations: obj.evals,
                iterations,
                converged: false,
            };
        }
        if !improved && step_scale < cfg.initial_step {
            return Minimum {
                x: best,
                value: best_value,
                evaluations: obj.evals,
                iterations,
                converged: true,
            };
        }
        step_scale = (cfg.initial_step * 0.1).max(cfg.tolerance);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max_evals: usize) -> NelderMeadConfig {
        NelderMeadConfig {
            max_evals,
            ..Default::default()
        }
    }

    #[test]
    fn finds_interior_quadratic_minimum() {
        let target = [0.3, -1.2, 2.5, 0.01];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2) * 3.0)
                .sum::<f64>()
        };
        let bounds = vec![Bound::new(-5.0, 5.0); 4];
        let m = minimize(f, &[0.0; 4], &bounds, &cfg(5000));
        assert!(m.converged);
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6, "{:?}", m.x);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let bounds = vec![Bound::new(-3.0, 3.0); 2];
        let m = minimize(f, &[-1.2, 1.0], &bounds, &cfg(4000));
        assert!(
            (m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5,
            "{m:?}"
        );
    }

    #[test]
    fn respects_the_box() {
        // unconstrained minimum at (-3, 4) lies outside
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 4.0).powi(2);
        let bounds = vec![Bound::new(0.0, 1.0), Bound::new(0.0, 2.0)];
        let mut seen_outside = false;
        let m = minimize(
            |x: &[f64]| {
                seen_outside |= x[0] < 0.0 || x[0] > 1.0 || x[1] < 0.0 || x[1] > 2.0;
                f(x)
            },
            &[0.5, 0.5],
            &bounds,
            &cfg(2000),
        );
        assert!(!seen_outside);
        assert!(m.x[0].abs() < 1e-7 && (m.x[1] - 2.0).abs() < 1e-7, "{m:?}");
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let bounds = vec![Bound::new(-3.0, 3.0); 2];
        let m = minimize(f, &[-1.2, 1.0], &bounds, &cfg(30));
        assert!(!m.converged);
        assert!(m.evaluations <= 30 + 3);
        assert!(m.value <= f(&[-1.2, 1.0]));
    }

    #[test]
    fn nan_is_treated_as_worst() {
        let f = |x: &[f64]| {
            if x[0] > 0.5 {
                f64::NAN
            } else {
                (x[0] - 0.2).powi(2)
            }
        };
        let m = minimize(f, &[0.0], &[Bound::new(0.0, 1.0)], &cfg(500));
        assert!((m.x[0] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn zero_dimensional_problem() {
        let m = minimize(|_: &[f64]| 4.0, &[], &[], &cfg(10));
        assert_eq!(m.value, 4.0);
        assert!(m.converged);
    }
}
