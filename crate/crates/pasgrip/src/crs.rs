//! Controlled random search (CRS2) with local mutation: derivative-free
//! global optimization over a box, suited to the non-smooth collision
//! objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CrsOptions {
    /// Population size (at least dimension + 1).
    pub population: usize,
    /// Stop when (f_worst − f_best) ≤ rel_tol·max(|f_best|, 1e-12).
    pub rel_tol: f64,
    /// Max objective evaluations.
    pub budget: usize,
    /// RNG seed.
    pub seed: u64,
    /// Stop as soon as the best value reaches this level (e.g. 0 for a
    /// feasibility-style objective). None disables the early stop.
    pub stop_value: Option<f64>,
    /// Points seeded into the initial population (e.g. x = 0).
    pub seeds: Vec<Vec<f64>>,
}

impl CrsOptions {
    pub fn new(population: usize, rel_tol: f64, budget: usize, seed: u64) -> Self {
        Self {
            population,
            rel_tol,
            budget,
            seed,
            stop_value: None,
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrsResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub eval_count: usize,
    /// Best objective value after each evaluation (non-increasing).
    pub trace: Vec<f64>,
}

/// Minimize `objective` over the box `bounds` (lower, upper per coordinate).
pub fn crs_optimize<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    bounds: &[(f64, f64)],
    opts: &CrsOptions,
) -> CrsResult {
    let dim = bounds.len();
    assert!(dim >= 1);
    assert!(
        opts.population >= dim + 1,
        "population must be at least dimension + 1"
    );
    for &(lo, hi) in bounds {
        assert!(lo < hi, "empty box");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(opts.population);
    for s in &opts.seeds {
        assert_eq!(s.len(), dim);
        xs.push(s.clone());
    }
    while xs.len() < opts.population {
        xs.push(
            bounds
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo..hi))
                .collect(),
        );
    }
    xs.truncate(opts.population);

    let mut evals = 0usize;
    let mut trace = Vec::new();
    let mut fs: Vec<f64> = Vec::with_capacity(xs.len());
    let mut best = f64::INFINITY;
    let stop_hit = |best: f64| opts.stop_value.map_or(false, |sv| best <= sv);
    for x in &xs {
        let f = objective(x);
        evals += 1;
        best = best.min(f);
        trace.push(best);
        fs.push(f);
        if stop_hit(best) || evals >= opts.budget {
            break;
        }
    }
    xs.truncate(fs.len());

    let finish = |xs: &[Vec<f64>], fs: &[f64], evals: usize, trace: Vec<f64>| {
        let bi = (0..fs.len()).min_by(|&a, &b| fs[a].total_cmp(&fs[b])).unwrap();
        CrsResult {
            x_best: xs[bi].clone(),
            f_best: fs[bi],
            eval_count: evals,
            trace,
        }
    };

    if stop_hit(best) {
        return finish(&xs, &fs, evals, trace);
    }

    while evals < opts.budget && xs.len() == opts.population {
        let (bi, wi) = {
            let mut bi = 0;
            let mut wi = 0;
            for i in 1..fs.len() {
                if fs[i] < fs[bi] {
                    bi = i;
                }
                if fs[i] > fs[wi] {
                    wi = i;
                }
            }
            (bi, wi)
        };
        let spread = fs[wi] - fs[bi];
        if spread <= opts.rel_tol * fs[bi].abs().max(1e-12) {
            break;
        }

        // simplex of the best point plus dim distinct random others; reflect
        // the last selected point through the centroid of the rest
        let mut chosen = vec![bi];
        while chosen.len() < dim + 1 {
            let c = rng.gen_range(0..xs.len());
            if !chosen.contains(&c) {
                chosen.push(c);
            }
        }
        let last = *chosen.last().unwrap();
        let mut centroid = vec![0.0; dim];
        for &i in &chosen[..dim] {
            for k in 0..dim {
                centroid[k] += xs[i][k];
            }
        }
        for c in centroid.iter_mut() {
            *c /= dim as f64;
        }
        let trial: Vec<f64> = (0..dim).map(|k| 2.0 * centroid[k] - xs[last][k]).collect();

        let in_bounds = trial
            .iter()
            .zip(bounds)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi);
        let mut accepted = false;
        if in_bounds {
            let f = objective(&trial);
            evals += 1;
            best = best.min(f);
            trace.push(best);
            if f < fs[wi] {
                xs[wi] = trial.clone();
                fs[wi] = f;
                accepted = true;
            }
            if stop_hit(best) {
                return finish(&xs, &fs, evals, trace);
            }
        }
        if !accepted && evals < opts.budget {
            // local mutation about the best point (Kaelo & Ali)
            let mutated: Vec<f64> = (0..dim)
                .map(|k| {
                    let w: f64 = rng.gen_range(0.0..1.0);
                    let v = (1.0 + w) * xs[bi][k] - w * trial[k];
                    v.clamp(bounds[k].0, bounds[k].1)
                })
                .collect();
            let f = objective(&mutated);
            evals += 1;
            best = best.min(f);
            trace.push(best);
            if f < fs[wi] {
                xs[wi] = mutated;
                fs[wi] = f;
            }
            if stop_hit(best) {
                return finish(&xs, &fs, evals, trace);
            }
        }
    }
    finish(&xs, &fs, evals, trace)
}
