//! Elitist (μ + λ) evolution strategy over the joint pose vector.
//!
//! A genome holds `6N` reals: for each camera the rotation vector followed by
//! the translation vector. Every random draw comes from a ChaCha stream keyed
//! by `(seed, generation, child index)`, so results do not depend on how the
//! offspring evaluations are scheduled across threads.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error("genomes differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid ES config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Vec<f64>,
    /// Cached loss; set once after the first evaluation.
    pub loss: Option<f64>,
}

impl Individual {
    pub fn new(genome: Vec<f64>) -> Self {
        Self { genome, loss: None }
    }

    pub fn from_poses(poses: &[Pose]) -> Self {
        Self::new(encode_poses(poses))
    }

    pub fn poses(&self) -> Vec<Pose> {
        decode_poses(&self.genome)
    }

    fn loss_or_inf(&self) -> f64 {
        self.loss.unwrap_or(f64::INFINITY)
    }
}

pub fn encode_poses(poses: &[Pose]) -> Vec<f64> {
    poses.iter().flat_map(|p| p.to_array()).collect()
}

pub fn decode_poses(genome: &[f64]) -> Vec<Pose> {
    genome.chunks_exact(6).map(Pose::from_slice).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ESConfig {
    pub generations: usize,
    pub mu: usize,
    pub lambda_offspring: usize,
    /// Rotation mutation strength, radians.
    pub s_r: f64,
    /// Translation mutation strength, meters.
    pub s_t: f64,
    pub s_decay: f64,
    pub seed: u64,
}

impl Default for ESConfig {
    fn default() -> Self {
        Self {
            generations: 100,
            mu: 64,
            lambda_offspring: 128,
            s_r: 0.005,
            s_t: 0.1,
            s_decay: 0.95,
            seed: 0,
        }
    }
}

impl ESConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let fail = |m: &str| Err(EvolveError::InvalidConfig(m.to_string()));
        if self.generations < 1 {
            return fail("generations must be >= 1");
        }
        if self.mu < 2 {
            return fail("mu must be >= 2");
        }
        if self.lambda_offspring < 1 {
            return fail("lambda_offspring must be >= 1");
        }
        if !(self.s_r.is_finite() && self.s_r >= 0.0 && self.s_t.is_finite() && self.s_t >= 0.0) {
            return fail("mutation strengths must be finite and non-negative");
        }
        if !(self.s_decay > 0.0 && self.s_decay <= 1.0) {
            return fail("s_decay must lie in (0, 1]");
        }
        Ok(())
    }

    /// `(σ_rot, σ_tr)` used in generation `g` (1-based).
    pub fn strengths(&self, generation: usize) -> (f64, f64) {
        let f = self.s_decay.powi(generation.saturating_sub(1) as i32);
        (self.s_r * f, self.s_t * f)
    }
}

/// Random stream for one individual in one generation.
pub fn stream_rng(seed: u64, generation: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((generation << 32) | (index & 0xffff_ffff));
    rng
}

#[inline]
fn is_rotation(component: usize) -> bool {
    component % 6 < 3
}

fn add_noise(genome: &mut [f64], sigma_rot: f64, sigma_tr: f64, rng: &mut impl Rng) {
    for (k, v) in genome.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        *v += z * if is_rotation(k) { sigma_rot } else { sigma_tr };
    }
}

/// `mu` copies of `start`, each perturbed by `N(0, s_r)` on rotation and
/// `N(0, s_t)` on translation components.
pub fn init_population(start: &[f64], cfg: &ESConfig) -> Vec<Individual> {
    (0..cfg.mu)
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, 0, i as u64);
            let mut g = start.to_vec();
            add_noise(&mut g, cfg.s_r, cfg.s_t, &mut rng);
            Individual::new(g)
        })
        .collect()
}

/// Convex combination with explicit per-component weights on `p_i`.
pub fn recombine_with_weights(
    p_i: &Individual,
    p_j: &Individual,
    weights: &[f64],
) -> Result<Individual, EvolveError> {
    let n = p_i.genome.len();
    if p_j.genome.len() != n {
        return Err(EvolveError::LengthMismatch(n, p_j.genome.len()));
    }
    if weights.len() != n {
        return Err(EvolveError::LengthMismatch(n, weights.len()));
    }
    let genome = p_i
        .genome
        .iter()
        .zip(&p_j.genome)
        .zip(weights)
        .map(|((a, b), w)| w * a + (1.0 - w) * b)
        .collect();
    Ok(Individual::new(genome))
}

/// Child `a·p_i + (1 - a)·p_j` with `a ~ U(0, 1)` drawn per component.
pub fn recombine(p_i: &Individual, p_j: &Individual, rng: &mut impl Rng) -> Result<Individual, EvolveError> {
    let weights: Vec<f64> = (0..p_i.genome.len()).map(|_| rng.random::<f64>()).collect();
    recombine_with_weights(p_i, p_j, &weights)
}

/// Adds generation-`g` Gaussian noise: `σ = s·s_decay^(g-1)`.
pub fn mutate(child: Individual, generation: usize, cfg: &ESConfig, rng: &mut impl Rng) -> Individual {
    let (sr, st) = cfg.strengths(generation);
    let mut genome = child.genome;
    add_noise(&mut genome, sr, st, rng);
    Individual::new(genome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_loss: f64,
    pub mean_loss: f64,
    pub best_genome: Vec<f64>,
}

/// Per-generation record; row 0 describes the initial population.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolveTrace {
    pub generations: Vec<GenerationStats>,
}

impl EvolveTrace {
    pub fn best_losses(&self) -> Vec<f64> {
        self.generations.iter().map(|g| g.best_loss).collect()
    }

    /// CSV with header `generation,best_loss,mean_loss`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("generation,best_loss,mean_loss\n");
        for g in &self.generations {
            let _ = writeln!(s, "{},{},{}", g.generation, g.best_loss, g.mean_loss);
        }
        s
    }

    fn record(&mut self, generation: usize, pop: &[Individual]) {
        let losses: Vec<f64> = pop.iter().map(Individual::loss_or_inf).collect();
        self.generations.push(GenerationStats {
            generation,
            best_loss: losses[0],
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            best_genome: pop[0].genome.clone(),
        });
    }
}

fn by_loss(a: &Individual, b: &Individual) -> Ordering {
    a.loss_or_inf().total_cmp(&b.loss_or_inf())
}

/// Keeps the `mu` lowest-loss individuals; ties keep pool order.
fn select(mut pool: Vec<Individual>, mu: usize) -> Vec<Individual> {
    pool.sort_by(by_loss);
    pool.truncate(mu);
    pool
}

/// Runs the strategy from `start` and returns the best individual and trace.
pub fn evolve<F>(loss_fn: F, start: &[f64], cfg: &ESConfig) -> Result<(Individual, EvolveTrace), EvolveError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let evaluate = |mut ind: Individual| {
        if ind.loss.is_none() {
            ind.loss = Some(loss_fn(&ind.genome));
        }
        ind
    };

    let init: Vec<Individual> = init_population(start, cfg)
        .into_par_iter()
        .map(evaluate)
        .collect();
    let mut pop = select(init, cfg.mu);
    let mut trace = EvolveTrace::default();
    trace.record(0, &pop);

    for g in 1..=cfg.generations {
        let parents = &pop;
        let offspring: Vec<Individual> = (0..cfg.lambda_offspring)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(cfg.seed, g as u64, c as u64);
                let i = rng.random_range(0..parents.len());
                let mut j = rng.random_range(0..parents.len() - 1);
                if j >= i {
                    j += 1;
                }
                let child = recombine(&parents[i], &parents[j], &mut rng)
                    .expect("population genomes share one length");
                evaluate(mutate(child, g, cfg, &mut rng))
            })
            .collect();
        let mut pool = std::mem::take(&mut pop);
        pool.extend(offspring);
        pop = select(pool, cfg.mu);
        trace.record(g, &pop);
        log::debug!(
            "generation {g}: best {:.6} mean {:.6}",
            trace.generations[g].best_loss,
            trace.generations[g].mean_loss
        );
    }
    Ok((pop.swap_remove(0), trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ESConfig {
        ESConfig {
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn zero_noise_population_is_start() {
        let c = ESConfig {
            s_r: 0.0,
            s_t: 0.0,
            ..cfg()
        };
        let start: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let pop = init_population(&start, &c);
        assert_eq!(pop.len(), 64);
        assert!(pop.iter().all(|p| p.genome == start));
    }

    #[test]
    fn init_translation_spread() {
        let c = ESConfig { mu: 10_000, ..cfg() };
        let pop = init_population(&[0.0; 6], &c);
        let xs: Vec<f64> = pop.iter().map(|p| p.genome[3]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.005, "std {}", var.sqrt());
    }

    #[test]
    fn two_cameras_give_twelve_genes() {
        let poses = [Pose::from_slice(&[0.0; 6]); 2];
        assert_eq!(Individual::from_poses(&poses).genome.len(), 12);
        assert_eq!(init_population(&encode_poses(&poses), &cfg())[0].genome.len(), 12);
    }

    #[test]
    fn recombination_properties() {
        let a = Individual::new(vec![1.0, -2.0, 3.0]);
        let b = Individual::new(vec![-1.0, 4.0, 3.0]);
        let mut rng = stream_rng(1, 2, 3);
        let same = recombine(&a, &a, &mut rng).unwrap();
        assert_eq!(same.genome, a.genome);
        for _ in 0..100 {
            let c = recombine(&a, &b, &mut rng).unwrap();
            for k in 0..3 {
                let (lo, hi) = (a.genome[k].min(b.genome[k]), a.genome[k].max(b.genome[k]));
                assert!(lo <= c.genome[k] && c.genome[k] <= hi);
            }
        }
        let forced = recombine_with_weights(&a, &b, &[1.0; 3]).unwrap();
        assert_eq!(forced.genome, a.genome);
        assert!(matches!(
            recombine(&a, &Individual::new(vec![0.0]), &mut rng),
            Err(EvolveError::LengthMismatch(3, 1))
        ));
    }

    #[test]
    fn decayed_strengths() {
        let c = ESConfig::default();
        assert_eq!(c.strengths(1), (0.005, 0.1));
        let (_, st) = c.strengths(14);
        assert!((st - 0.1 * 0.95f64.powi(13)).abs() < 1e-15);
        assert!((st - 0.0513).abs() < 5e-5);
        let flat = ESConfig {
            s_decay: 1.0,
            ..c
        };
        assert_eq!(flat.strengths(50), (0.005, 0.1));
    }

    #[test]
    fn mutation_scales_by_component_kind() {
        let c = ESConfig {
            s_r: 0.0,
            ..cfg()
        };
        let mut rng = stream_rng(3, 1, 0);
        let m = mutate(Individual::new(vec![0.0; 12]), 1, &c, &mut rng);
        for (k, v) in m.genome.iter().enumerate() {
            if is_rotation(k) {
                assert_eq!(*v, 0.0);
            } else {
                assert_ne!(*v, 0.0);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ESConfig { mu: 1, ..cfg() }.validate().is_err());
        assert!(ESConfig { lambda_offspring: 0, ..cfg() }.validate().is_err());
        assert!(ESConfig { generations: 0, ..cfg() }.validate().is_err());
        assert!(ESConfig { s_decay: 0.0, ..cfg() }.validate().is_err());
        assert!(ESConfig { s_t: -1.0, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn constant_loss_is_flat() {
        let c = ESConfig {
            generations: 5,
            ..cfg()
        };
        let (best, trace) = evolve(|_| 0.25, &[0.0; 6], &c).unwrap();
        assert_eq!(best.loss, Some(0.25));
        assert!(trace.generations.iter().all(|g| g.best_loss == 0.25 && g.mean_loss == 0.25));
        assert_eq!(trace.generations.len(), 6);
    }

    #[test]
    fn trace_csv_header() {
        let c = ESConfig {
            generations: 2,
            ..cfg()
        };
        let (_, trace) = evolve(|g| g[0].abs(), &[1.0; 6], &c).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "generation,best_loss,mean_loss");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
    }
}
