//! Inertia-decay particle swarm maximising the hull-overlap objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{overlap_objective_with, ConvexHullFeature};
use crate::error::{Error, Result};
use crate::geometry::{Clipper, PoseDelta2D};

#[derive(Debug, Clone, PartialEq)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub max_iterations: usize,
    pub inertia_start: f64,
    pub inertia_end: f64,
    /// Cognitive (personal-best) acceleration.
    pub c1: f64,
    /// Social (global-best) acceleration.
    pub c2: f64,
    /// Half-widths of the search box around the prior: meters, meters, radians.
    pub bounds: [f64; 3],
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 50,
            max_iterations: 100,
            inertia_start: 0.9,
            inertia_end: 0.4,
            c1: 2.0,
            c2: 2.0,
            bounds: [2.0, 2.0, 5f64.to_radians()],
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::Config("pso.swarm_size must be at least 2".into()));
        }
        if self.bounds.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Config("pso bounds must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn scaled_bounds(&self, factor: f64) -> Self {
        Self {
            bounds: self.bounds.map(|b| b * factor),
            ..self.clone()
        }
    }
}

/// Minimum number of hull features for a swarm solve.
pub const MIN_FEATURES: usize = 3;

#[derive(Debug, Clone)]
pub struct PsoOutcome {
    pub pose: PoseDelta2D,
    /// Total overlap area at `pose`, square meters.
    pub objective: f64,
    /// Fewer than [`MIN_FEATURES`] features: `pose` is the untouched prior.
    pub low_confidence: bool,
    /// Global-best objective after each iteration.
    pub history: Vec<f64>,
}

/// Maximises the summed overlap over `prior ± cfg.bounds`.
///
/// Particle 0 starts on the prior. Each iteration updates every velocity from
/// the personal and global bests, then moves the particle; the global best is
/// refreshed only after the whole swarm has been evaluated.
pub fn solve_pso(features: &[ConvexHullFeature], prior: &PoseDelta2D, cfg: &PsoConfig) -> PsoOutcome {
    let mut clipper = Clipper::new();
    if features.len() < MIN_FEATURES || cfg.swarm_size < 2 {
        return PsoOutcome {
            pose: *prior,
            objective: overlap_objective_with(&mut clipper, prior, features),
            low_confidence: true,
            history: Vec::new(),
        };
    }

    let centre = prior.as_array();
    let lo: [f64; 3] = std::array::from_fn(|d| centre[d] - cfg.bounds[d]);
    let hi: [f64; 3] = std::array::from_fn(|d| centre[d] + cfg.bounds[d]);
    let vmax = cfg.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval = |clipper: &mut Clipper, x: &[f64; 3]| {
        overlap_objective_with(clipper, &PoseDelta2D { dx: x[0], dy: x[1], dtheta: x[2] }, features)
    };

    let n = cfg.swarm_size;
    let mut pos: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            if i == 0 {
                centre
            } else {
                std::array::from_fn(|d| rng.gen_range(lo[d]..=hi[d]))
            }
        })
        .collect();
    let mut vel: Vec<[f64; 3]> = (0..n)
        .map(|_| std::array::from_fn(|d| rng.gen_range(-vmax[d]..=vmax[d]) * 0.5))
        .collect();
    let mut best_pos = pos.clone();
    let mut best_val: Vec<f64> = pos.iter().map(|x| eval(&mut clipper, x)).collect();
    let mut g = argmax(&best_val);
    let mut gbest = (best_pos[g], best_val[g]);
    let mut history = Vec::with_capacity(cfg.max_iterations);

    for iter in 0..cfg.max_iterations {
        let frac = if cfg.max_iterations > 1 {
            iter as f64 / (cfg.max_iterations - 1) as f64
        } else {
            1.0
        };
        let w = cfg.inertia_start + (cfg.inertia_end - cfg.inertia_start) * frac;
        for i in 0..n {
            for d in 0..3 {
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let v = w * vel[i][d]
                    + cfg.c1 * r1 * (best_pos[i][d] - pos[i][d])
                    + cfg.c2 * r2 * (gbest.0[d] - pos[i][d]);
                vel[i][d] = v.clamp(-vmax[d], vmax[d]);
                let x = pos[i][d] + vel[i][d];
                if x < lo[d] || x > hi[d] {
                    pos[i][d] = x.clamp(lo[d], hi[d]);
                    vel[i][d] = 0.0;
                } else {
                    pos[i][d] = x;
                }
            }
            let val = eval(&mut clipper, &pos[i]);
            if val > best_val[i] {
                best_val[i] = val;
                best_pos[i] = pos[i];
            }
        }
        g = argmax(&best_val);
        if best_val[g] > gbest.1 {
            gbest = (best_pos[g], best_val[g]);
        }
        history.push(gbest.1);
    }

    let [dx, dy, dtheta] = gbest.0;
    PsoOutcome {
        pose: PoseDelta2D::new(dx, dy, dtheta),
        objective: gbest.1,
        low_confidence: false,
        history,
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
