//! Derivative-free local maximisation (Nelder–Mead simplex).

#[derive(Clone, Copy, Debug)]
pub struct NelderMead {
    pub max_evaluations: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evaluations: 2000,
            f_tol: 1e-10,
            x_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Maximise `f` from `start` with initial simplex edge `step`.
    pub fn maximize(&self, f: impl Fn(&[f64]) -> f64, start: &[f64], step: f64) -> Optimum {
        let dim = start.len();
        let neg = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                -v
            }
        };
        let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
        for i in 0..dim {
            let mut x = start.to_vec();
            x[i] += step;
            simplex.push(x);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| neg(x)).collect();
        let mut evals = dim + 1;
        let mut converged = false;
        while evals < self.max_evaluations {
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = (values[dim] - values[0]).abs();
            let diameter = simplex[1..]
                .iter()
                .map(|x| {
                    x.iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread <= self.f_tol * (1.0 + values[0].abs()) && diameter <= self.x_tol {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..dim)
                .map(|k| simplex[..dim].iter().map(|x| x[k]).sum::<f64>() / dim as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[dim])
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = neg(&xr);
            evals += 1;
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = neg(&xe);
                evals += 1;
                if fe < fr {
                    simplex[dim] = xe;
                    values[dim] = fe;
                } else {
                    simplex[dim] = xr;
                    values[dim] = fr;
                }
            } else if fr < values[dim - 1] {
                simplex[dim] = xr;
                values[dim] = fr;
            } else {
                let (xc, fc) = if fr < values[dim] {
                    let x = along(-0.5);
                    let v = neg(&x);
                    (x, v)
                } else {
                    let x = along(0.5);
                    let v = neg(&x);
                    (x, v)
                };
                evals += 1;
                if fc < values[dim].min(fr) {
                    simplex[dim] = xc;
                    values[dim] = fc;
                } else {
                    for i in 1..=dim {
                        let shrunk: Vec<f64> = simplex[i]
                            .iter()
                            .zip(&simplex[0])
                            .map(|(x, b)| b + 0.5 * (x - b))
                            .collect();
                        values[i] = neg(&shrunk);
                        simplex[i] = shrunk;
                    }
                    evals += dim;
                }
            }
        }
        let best = (0..=dim)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap_or(0);
        Optimum {
            x: simplex[best].clone(),
            value: -values[best],
            evaluations: evals,
            converged,
        }
    }
}
