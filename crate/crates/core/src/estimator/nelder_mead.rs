//! Nelder-Mead simplex search on the unit box `[0, 1]^n`.
//!
//! Uses the dimension-adaptive coefficients of Gao and Han (2012). Every trial
//! point is projected onto the box before it is evaluated, and the search is
//! restarted from the incumbent with a fresh simplex until a restart no longer
//! improves the objective.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Edge length of the initial simplex, in box units.
    pub initial_step: f64,
    /// Relative spread of objective values that counts as converged.
    pub ftol: f64,
    /// Absolute objective spread that counts as converged.
    pub ftol_abs: f64,
    /// Largest vertex distance from the best vertex that counts as converged.
    pub xtol: f64,
    /// Iteration budget over all restarts.
    pub max_iters: usize,
    pub max_restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            ftol: 1e-10,
            ftol_abs: 1e-300,
            xtol: 1e-9,
            max_iters: 20_000,
            max_restarts: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iters: usize,
    pub evals: usize,
    pub converged: bool,
    /// Best objective value after every iteration.
    pub history: Vec<f64>,
}

fn project(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() { f64::INFINITY } else { v }
    }
}

pub fn minimize<F>(f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut obj = Counter { f, evals: 0 };
    let mut best_x = x0.to_vec();
    project(&mut best_x);
    let mut best_f = obj.eval(&best_x);
    let mut iters = 0;
    let mut history = Vec::new();
    let mut converged = false;
    let mut step = opts.initial_step;

    for _ in 0..=opts.max_restarts {
        let before = best_f;
        let run = run_simplex(&mut obj, &best_x, best_f, step, opts, &mut iters, &mut history);
        if run.1 <= best_f {
            best_x = run.0;
            best_f = run.1;
        }
        converged = run.2;
        let improved = before - best_f > opts.ftol * before.abs() + opts.ftol_abs;
        if !converged || !improved {
            break;
        }
        // polish with a smaller simplex around the incumbent
        step = (step * 0.5).max(1e-4);
    }

    SimplexResult { x: best_x, f: best_f, iters, evals: obj.evals, converged, history }
}

fn run_simplex<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counter<F>,
    start: &[f64],
    f_start: f64,
    step: f64,
    opts: &SimplexOptions,
    iters: &mut usize,
    history: &mut Vec<f64>,
) -> (Vec<f64>, f64, bool) {
    let n = start.len();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f_start));
    for i in 0..n {
        let mut v = start.to_vec();
        // step away from the nearer face so the vertex stays distinct after projection
        v[i] += if v[i] + step <= 1.0 { step } else { -step };
        project(&mut v);
        let fv = obj.eval(&v);
        simplex.push((v, fv));
    }

    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
    };
    order(&mut simplex);

    loop {
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        let spread_ok = f_worst - f_best <= opts.ftol * f_best.abs() + opts.ftol_abs;
        let size = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread_ok || size <= opts.xtol {
            return (simplex[0].0.clone(), f_best, true);
        }
        if *iters >= opts.max_iters {
            return (simplex[0].0.clone(), f_best, false);
        }
        *iters += 1;

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p);
            p
        };

        let xr = along(alpha);
        let fr = obj.eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(alpha * beta);
            let fe = obj.eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(alpha * gamma);
                let fc = obj.eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-gamma);
                let fc = obj.eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (v, fv) in simplex[1..].iter_mut() {
                    for (x, b) in v.iter_mut().zip(&best) {
                        *x = b + delta * (*x - b);
                    }
                    project(v);
                    *fv = obj.eval(v);
                }
            }
        }
        order(&mut simplex);
        history.push(simplex[0].1);
    }
}
