//! Bit-string search for the all-ones target with optional lifetime learning.
//!
//! Each individual carries a genome. Learning runs `learn_trials` random guesses, each
//! flipping every bit of the genome with rate `ρ = min(1/L, 1/2)`. Without learning the
//! needle landscape is flat everywhere except at the target.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{FmbError, Result};
use crate::exec::Execution;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessMode {
    /// Closed-form success probability of the learning trials.
    #[default]
    Analytic,
    /// Run the trials with per-individual random streams.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landscape {
    /// Payoff 1 for reaching the target, nothing otherwise.
    #[default]
    Needle,
    /// Payoff `2^{−d}` for the best string reached, `d` its Hamming distance to the target.
    Graded,
}

fn default_genome_len() -> u32 {
    20
}

fn default_baseline() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaldwinConfig {
    #[serde(default = "default_genome_len")]
    pub genome_len: u32,
    pub pop_size: usize,
    pub learn_trials: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    /// Pass on the best learned string instead of the genome.
    #[serde(default)]
    pub heritable: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fitness_mode: FitnessMode,
    #[serde(default)]
    pub landscape: Landscape,
    /// Fitness floor added to every individual.
    #[serde(default = "default_baseline")]
    pub baseline: f64,
}

impl BaldwinConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(1..=64).contains(&self.genome_len) {
            v.push(format!("genome_len must lie in 1..=64, got {}", self.genome_len));
        }
        if self.pop_size == 0 {
            v.push("pop_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            v.push(format!("mutation_rate must lie in [0, 1], got {}", self.mutation_rate));
        }
        if !(self.baseline > 0.0 && self.baseline.is_finite()) {
            v.push(format!("baseline must be positive, got {}", self.baseline));
        }
        if self.fitness_mode == FitnessMode::Analytic {
            if self.heritable {
                v.push("heritable learning needs fitness_mode = simulated".into());
            }
            if self.landscape == Landscape::Graded {
                v.push("the graded landscape needs fitness_mode = simulated".into());
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(FmbError::InvalidInput(v.join("; ")))
        }
    }

    fn mask(&self) -> u64 {
        if self.genome_len == 64 {
            u64::MAX
        } else {
            (1u64 << self.genome_len) - 1
        }
    }

    pub fn flip_rate(&self) -> f64 {
        (1.0 / self.genome_len as f64).min(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaldwinRow {
    pub generation: usize,
    pub mean_hamming: f64,
    pub best_hamming: u32,
    /// Population mean of the raw fitness.
    pub mean_fitness: f64,
    pub success: bool,
}

impl BaldwinRow {
    pub const HEADER: [&'static str; 5] = ["generation", "meanHamming", "bestHamming", "meanFitness", "success"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.generation as f64,
            self.mean_hamming,
            self.best_hamming as f64,
            self.mean_fitness,
            if self.success { 1.0 } else { 0.0 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaldwinResult {
    /// First generation whose modal genotype is the target.
    pub generations_to_target: Option<usize>,
    pub mean_hamming_trace: Vec<f64>,
    pub success: bool,
    pub rows: Vec<BaldwinRow>,
}

/// Probability that one trial from distance `d` lands on the target.
pub fn reach_probability(d: u32, len: u32, rho: f64) -> f64 {
    rho.powi(d as i32) * (1.0 - rho).powi((len - d) as i32)
}

/// Needle payoff probability: 1 at the target, else the chance that some trial hits it.
pub fn analytic_success(d: u32, len: u32, trials: usize, rho: f64) -> f64 {
    if d == 0 {
        return 1.0;
    }
    let p = reach_probability(d, len, rho);
    // 1 − (1 − p)^T without cancellation
    -((trials as f64) * (-p).ln_1p()).exp_m1()
}

struct Evaluated {
    fitness: f64,
    transmitted: u64,
}

fn evaluate(cfg: &BaldwinConfig, genome: u64, stream: SeedStream) -> Evaluated {
    let mask = cfg.mask();
    let len = cfg.genome_len;
    let dist = |x: u64| (!x & mask).count_ones();
    match cfg.fitness_mode {
        FitnessMode::Analytic => Evaluated {
            fitness: cfg.baseline + analytic_success(dist(genome), len, cfg.learn_trials, cfg.flip_rate()),
            transmitted: genome,
        },
        FitnessMode::Simulated => {
            let rho = cfg.flip_rate();
            let mut rng = stream.rng();
            let mut best = genome;
            for _ in 0..cfg.learn_trials {
                if dist(best) == 0 {
                    break;
                }
                let mut flips = 0u64;
                for b in 0..len {
                    if rng.random_bool(rho) {
                        flips |= 1 << b;
                    }
                }
                let guess = genome ^ flips;
                if dist(guess) < dist(best) {
                    best = guess;
                }
            }
            let payoff = match cfg.landscape {
                Landscape::Needle => {
                    if dist(best) == 0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Landscape::Graded => 0.5f64.powi(dist(best) as i32),
            };
            // on the needle, a failed search teaches nothing worth passing on
            let keep_learned = cfg.heritable && !(cfg.landscape == Landscape::Needle && payoff == 0.0);
            let transmitted = if keep_learned { best } else { genome };
            Evaluated { fitness: cfg.baseline + payoff, transmitted }
        }
    }
}

/// Deterministic fitness-proportional copy numbers: floors of the expected counts, with the
/// leftover copies going one each to the fittest individuals. Giving leftovers by fitness
/// rather than by remainder keeps mean fitness from falling under pure selection.
pub fn allocate_offspring(fitness: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = fitness.iter().sum();
    let mut counts: Vec<usize> = fitness.iter().map(|f| (n as f64 * f / total).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]));
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn modal_is_target(genomes: &[u64], target: u64) -> bool {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for &g in genomes {
        *counts.entry(g).or_default() += 1;
    }
    let t = counts.get(&target).copied().unwrap_or(0);
    t > 0 && counts.values().all(|&c| c <= t)
}

pub fn baldwin_experiment(cfg: &BaldwinConfig, exec: Execution) -> Result<BaldwinResult> {
    cfg.validate()?;
    let mask = cfg.mask();
    let root = SeedStream::new(cfg.seed);
    let init = root.named("init");
    let learn = root.named("learn");
    let mutate = root.named("mutate");
    let mut genomes: Vec<u64> = (0..cfg.pop_size).map(|i| init.child(i as u64).rng().random::<u64>() & mask).collect();
    let mut rows = Vec::new();
    let mut hit = None;
    for gen in 0..=cfg.generations {
        let gen_learn = learn.child(gen as u64);
        let evals = exec.map_range(cfg.pop_size, |i| evaluate(cfg, genomes[i], gen_learn.child(i as u64)));
        let dists: Vec<u32> = genomes.iter().map(|g| (!g & mask).count_ones()).collect();
        let fitness: Vec<f64> = evals.iter().map(|e| e.fitness).collect();
        let success = modal_is_target(&genomes, mask);
        rows.push(BaldwinRow {
            generation: gen,
            mean_hamming: dists.iter().map(|&d| d as f64).sum::<f64>() / cfg.pop_size as f64,
            best_hamming: dists.iter().copied().min().unwrap_or(0),
            mean_fitness: fitness.iter().sum::<f64>() / cfg.pop_size as f64,
            success,
        });
        if success {
            hit = Some(gen);
            break;
        }
        if gen == cfg.generations {
            break;
        }
        let counts = allocate_offspring(&fitness, cfg.pop_size);
        let parents: Vec<u64> = counts
            .iter()
            .zip(&evals)
            .flat_map(|(&c, e)| std::iter::repeat_n(e.transmitted, c))
            .collect();
        let gen_mut = mutate.child(gen as u64);
        genomes = exec.map_range(cfg.pop_size, |j| {
            let mut g = parents[j];
            if cfg.mutation_rate > 0.0 {
                let mut rng = gen_mut.child(j as u64).rng();
                for b in 0..cfg.genome_len {
                    if rng.random_bool(cfg.mutation_rate) {
                        g ^= 1 << b;
                    }
                }
            }
            g
        });
    }
    Ok(BaldwinResult {
        generations_to_target: hit,
        mean_hamming_trace: rows.iter().map(|r| r.mean_hamming).collect(),
        success: hit.is_some(),
        rows,
    })
}
