//! Seeded genetic-algorithm engine shared by the metaparameter search and
//! the structure-pruning search: tournament selection, uniform crossover,
//! per-gene mutation and elitism over real-valued or binary genomes.
//!
//! Fitness is minimized. All stochastic decisions are drawn from a ChaCha
//! stream owned by the engine, so fitness evaluation (which may run in
//! parallel) can never perturb the evolution sequence; identical seeds and
//! inputs reproduce identical populations at every generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Multiplicative mutation bounds for real genes.
const REAL_GENE_MIN: f64 = 1e-8;
const REAL_GENE_MAX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub elite_count: usize,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 20,
            generations: 15,
            mutation_rate: 0.2,
            crossover_rate: 0.7,
            elite_count: 1,
            rng_seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config(format!(
                "population_size must be at least 2, got {}",
                self.population_size
            )));
        }
        for (name, rate) in [
            ("mutation_rate", self.mutation_rate),
            ("crossover_rate", self.crossover_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "{name} must lie in [0, 1], got {rate}"
                )));
            }
        }
        if self.elite_count >= self.population_size {
            return Err(Error::Config(format!(
                "elite_count {} must be smaller than population_size {}",
                self.elite_count, self.population_size
            )));
        }
        Ok(())
    }
}

/// Either a vector of non-negative reals (a metaparameter vector) or a
/// binary mask vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Genome {
    Real(Vec<f64>),
    Bits(Vec<bool>),
}

impl Genome {
    pub fn len(&self) -> usize {
        match self {
            Genome::Real(v) => v.len(),
            Genome::Bits(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_kind(&self, other: &Genome) -> bool {
        matches!(
            (self, other),
            (Genome::Real(_), Genome::Real(_)) | (Genome::Bits(_), Genome::Bits(_))
        )
    }
}

/// Per-gene mutation: real genes are multiplied by a log-normal factor and
/// clamped to [1e-8, 1e3]; bits are flipped.
pub fn mutate(genome: &Genome, rate: f64, rng: &mut ChaCha8Rng) -> Genome {
    match genome {
        Genome::Real(genes) => {
            let normal: Normal<f64> = Normal::new(0.0, 0.5).expect("valid normal");
            let mutated = genes
                .iter()
                .map(|&g| {
                    if rng.gen_bool(rate) {
                        let factor = normal.sample(rng).exp();
                        (g * factor).clamp(REAL_GENE_MIN, REAL_GENE_MAX)
                    } else {
                        g
                    }
                })
                .collect();
            Genome::Real(mutated)
        }
        Genome::Bits(bits) => {
            let mutated = bits
                .iter()
                .map(|&b| if rng.gen_bool(rate) { !b } else { b })
                .collect();
            Genome::Bits(mutated)
        }
    }
}

/// Uniform crossover: each position is swapped between the two offspring
/// with probability 1/2.
pub fn crossover(a: &Genome, b: &Genome, rng: &mut ChaCha8Rng) -> Result<(Genome, Genome)> {
    if !a.same_kind(b) || a.len() != b.len() {
        return Err(Error::Genome(
            "crossover parents must share kind and length".to_string(),
        ));
    }
    match (a, b) {
        (Genome::Real(x), Genome::Real(y)) => {
            let mut c1 = x.clone();
            let mut c2 = y.clone();
            for i in 0..c1.len() {
                if rng.gen_bool(0.5) {
                    std::mem::swap(&mut c1[i], &mut c2[i]);
                }
            }
            Ok((Genome::Real(c1), Genome::Real(c2)))
        }
        (Genome::Bits(x), Genome::Bits(y)) => {
            let mut c1 = x.clone();
            let mut c2 = y.clone();
            for i in 0..c1.len() {
                if rng.gen_bool(0.5) {
                    std::mem::swap(&mut c1[i], &mut c2[i]);
                }
            }
            Ok((Genome::Bits(c1), Genome::Bits(c2)))
        }
        _ => unreachable!(),
    }
}

/// Indices sorted by ascending score, ties broken by lower index.
fn rank_indices(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

const TOURNAMENT_SIZE: usize = 3;

fn tournament(scores: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.gen_range(0..scores.len());
    for _ in 1..TOURNAMENT_SIZE {
        let challenger = rng.gen_range(0..scores.len());
        if scores[challenger].total_cmp(&scores[best]).is_lt()
            || (scores[challenger] == scores[best] && challenger < best)
        {
            best = challenger;
        }
    }
    best
}

/// Stateful engine driving one population across generations.
#[derive(Debug, Clone)]
pub struct Evolution {
    cfg: GaConfig,
    rng: ChaCha8Rng,
}

impl Evolution {
    /// The engine itself tolerates degenerate single-genome populations;
    /// the strict `population_size >= 2` invariant is enforced by config
    /// validation.
    pub fn new(cfg: GaConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        Evolution { cfg, rng }
    }

    pub fn config(&self) -> &GaConfig {
        &self.cfg
    }

    /// Produce the next generation from a scored population: the
    /// `elite_count` best genomes are carried over unchanged, the remainder
    /// comes from tournament selection, crossover and mutation.
    pub fn next_generation(&mut self, population: &[Genome], scores: &[f64]) -> Result<Vec<Genome>> {
        if population.is_empty() {
            return Err(Error::Config("empty population".to_string()));
        }
        if population.len() != scores.len() {
            return Err(Error::Genome(format!(
                "{} genomes scored by {} values",
                population.len(),
                scores.len()
            )));
        }
        let p = population.len();
        let elite = self.cfg.elite_count.min(p - 1);
        let order = rank_indices(scores);
        let mut next = Vec::with_capacity(p);
        for &idx in order.iter().take(elite) {
            next.push(population[idx].clone());
        }
        while next.len() < p {
            let a = tournament(scores, &mut self.rng);
            let b = tournament(scores, &mut self.rng);
            let (c1, c2) = if self.cfg.crossover_rate > 0.0
                && self.rng.gen_bool(self.cfg.crossover_rate)
            {
                crossover(&population[a], &population[b], &mut self.rng)?
            } else {
                (population[a].clone(), population[b].clone())
            };
            next.push(mutate(&c1, self.cfg.mutation_rate, &mut self.rng));
            if next.len() < p {
                next.push(mutate(&c2, self.cfg.mutation_rate, &mut self.rng));
            }
        }
        Ok(next)
    }

    /// One-call driver: evaluates the initial population, then evolves for
    /// `generations` rounds, reporting each scored generation (including
    /// generation 0) through the callback. Fitness evaluations run in
    /// parallel; the result is identical to sequential evaluation. Returns
    /// the best genome seen and its score.
    pub fn run<F>(
        &mut self,
        initial: Vec<Genome>,
        fitness: F,
        mut on_generation: impl FnMut(usize, &[Genome], &[f64]),
    ) -> Result<(Genome, f64)>
    where
        F: Fn(&Genome) -> f64 + Sync,
    {
        if initial.is_empty() {
            return Err(Error::Config("empty population".to_string()));
        }
        let mut population = initial;
        let mut scores: Vec<f64> = population.par_iter().map(|g| fitness(g)).collect();
        let mut best_idx = rank_indices(&scores)[0];
        let mut best = (population[best_idx].clone(), scores[best_idx]);
        on_generation(0, &population, &scores);
        for gen in 1..=self.cfg.generations {
            population = self.next_generation(&population, &scores)?;
            scores = population.par_iter().map(|g| fitness(g)).collect();
            best_idx = rank_indices(&scores)[0];
            if scores[best_idx].total_cmp(&best.1).is_lt() {
                best = (population[best_idx].clone(), scores[best_idx]);
            }
            on_generation(gen, &population, &scores);
        }
        Ok(best)
    }
}

/// Deterministically derive an independent stream seed from a base seed and
/// a list of tags (splitmix64 steps). Used to give candidate evaluations,
/// data shuffles and worker runs their own RNG streams.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    for &tag in tags {
        state = state.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(tag);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        state = z ^ (z >> 31);
    }
    state
}
