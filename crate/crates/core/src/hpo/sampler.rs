use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::front::{crowding_distance, nondominated_sort};
use super::space::{ConfigPoint, Genes, SearchSpace};
use super::trial::{constrained_dominates, Trial};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Ask/tell interface shared by the samplers. Ids come from `ask`.
pub trait Sampler: Send {
    fn ask(&mut self) -> (u64, ConfigPoint);
    fn tell(&mut self, trial: &Trial) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Nsga2,
    Random,
}

impl SamplerKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "nsga2" => Ok(SamplerKind::Nsga2),
            "random" => Ok(SamplerKind::Random),
            _ => Err(Error::Config(format!("unknown sampler `{name}` (nsga2 or random)"))),
        }
    }
}

fn check_pending(pending: &mut HashSet<u64>, id: u64) -> Result<()> {
    if pending.remove(&id) {
        Ok(())
    } else {
        Err(Error::contract(format!("tell for unknown trial id {id}")))
    }
}

pub struct RandomSampler {
    space: SearchSpace,
    rng: ChaCha8Rng,
    next_id: u64,
    pending: HashSet<u64>,
}

impl RandomSampler {
    pub fn new(space: SearchSpace, seed: u64) -> Self {
        RandomSampler {
            space,
            rng: substream(seed, "hpo.random"),
            next_id: 0,
            pending: HashSet::new(),
        }
    }
}

impl Sampler for RandomSampler {
    fn ask(&mut self) -> (u64, ConfigPoint) {
        let id = self.next_id;
        self.next_id += 1;
        self.pending.insert(id);
        (id, self.space.sample(&mut self.rng))
    }

    fn tell(&mut self, trial: &Trial) -> Result<()> {
        check_pending(&mut self.pending, trial.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsgaConfig {
    pub population_size: usize,
    pub crossover_prob: f64,
    /// Per-parameter reset probability; `1 / #params` when absent.
    #[serde(default)]
    pub mutation_prob: Option<f64>,
}

impl Default for NsgaConfig {
    fn default() -> Self {
        NsgaConfig {
            population_size: 20,
            crossover_prob: 0.9,
            mutation_prob: None,
        }
    }
}

impl NsgaConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.population_size < 2 || !prob(self.crossover_prob) || !self.mutation_prob.is_none_or(prob) {
            return Err(Error::Config(
                "nsga2 needs population >= 2 and probabilities in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Redraws allowed when a candidate repeats an earlier point.
pub const DUPLICATE_RETRIES: usize = 16;

struct Parent {
    genes: Genes,
    rank: usize,
    crowding: f64,
}

/// NSGA-II as an ask/tell sampler. The first generation is uniform random;
/// once `population_size` trials of a generation are told, parents and
/// offspring are merged and truncated by constrained nondominated rank and
/// crowding distance.
pub struct NsgaState {
    space: SearchSpace,
    cfg: NsgaConfig,
    rng: ChaCha8Rng,
    next_id: u64,
    pending: HashSet<u64>,
    asked: HashSet<Genes>,
    pub generation: usize,
    population: Vec<Trial>,
    parents: Vec<Parent>,
    offspring: Vec<Trial>,
}

impl NsgaState {
    pub fn new(space: SearchSpace, cfg: NsgaConfig, seed: u64) -> Self {
        NsgaState {
            space,
            cfg,
            rng: substream(seed, "hpo.nsga2"),
            next_id: 0,
            pending: HashSet::new(),
            asked: HashSet::new(),
            generation: 0,
            population: Vec::new(),
            parents: Vec::new(),
            offspring: Vec::new(),
        }
    }

    /// Current parent population, best rank first.
    pub fn population(&self) -> &[Trial] {
        &self.population
    }

    fn tournament(&mut self) -> Genes {
        let a = self.rng.random_range(0..self.parents.len());
        let b = self.rng.random_range(0..self.parents.len());
        let (pa, pb) = (&self.parents[a], &self.parents[b]);
        let a_wins = pa.rank < pb.rank || (pa.rank == pb.rank && pa.crowding >= pb.crowding);
        if a_wins {
            pa.genes
        } else {
            pb.genes
        }
    }

    fn child(&mut self) -> Genes {
        let p1 = self.tournament();
        let p2 = self.tournament();
        let mut genes = p1;
        if self.rng.random_bool(self.cfg.crossover_prob) {
            for (g, &other) in genes.iter_mut().zip(&p2) {
                if self.rng.random_bool(0.5) {
                    *g = other;
                }
            }
        }
        let cards = self.space.cardinalities();
        let pm = self.cfg.mutation_prob.unwrap_or(1.0 / cards.len() as f64);
        for (g, &n) in genes.iter_mut().zip(&cards) {
            if self.rng.random_bool(pm) {
                *g = self.rng.random_range(0..n);
            }
        }
        genes
    }

    fn draw(&mut self) -> Genes {
        if self.parents.is_empty() {
            self.space.sample_genes(&mut self.rng)
        } else {
            self.child()
        }
    }

    fn select_survivors(&mut self) {
        let mut pool = std::mem::take(&mut self.population);
        pool.append(&mut self.offspring);
        let mut survivors = Vec::with_capacity(self.cfg.population_size);
        let mut parents = Vec::with_capacity(self.cfg.population_size);
        for (rank, front) in nondominated_sort(&pool, constrained_dominates).into_iter().enumerate() {
            if survivors.len() == self.cfg.population_size {
                break;
            }
            let objs: Vec<_> = front.iter().filter_map(|&i| pool[i].objectives).collect();
            let crowd = if objs.len() == front.len() {
                crowding_distance(&objs)
            } else {
                vec![0.0; front.len()]
            };
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_by(|&a, &b| crowd[b].total_cmp(&crowd[a]).then(a.cmp(&b)));
            for w in order.into_iter().take(self.cfg.population_size - survivors.len()) {
                let t = &pool[front[w]];
                parents.push(Parent {
                    genes: self.space.genes(&t.point).expect("trial point in space"),
                    rank,
                    crowding: crowd[w],
                });
                survivors.push(t.clone());
            }
        }
        self.population = survivors;
        self.parents = parents;
        self.generation += 1;
    }
}

impl Sampler for NsgaState {
    fn ask(&mut self) -> (u64, ConfigPoint) {
        let id = self.next_id;
        self.next_id += 1;
        self.pending.insert(id);
        // redraw points that were already asked, a bounded number of times
        let mut genes = self.draw();
        for _ in 0..DUPLICATE_RETRIES {
            if !self.asked.contains(&genes) {
                break;
            }
            genes = self.draw();
        }
        self.asked.insert(genes);
        (id, self.space.point(genes))
    }

    fn tell(&mut self, trial: &Trial) -> Result<()> {
        if !self.space.contains(&trial.point) {
            return Err(Error::contract(format!("trial {} lies outside the search space", trial.id)));
        }
        check_pending(&mut self.pending, trial.id)?;
        self.offspring.push(trial.clone());
        if self.offspring.len() >= self.cfg.population_size {
            self.select_survivors();
        }
        Ok(())
    }
}

pub fn make_sampler(kind: SamplerKind, space: SearchSpace, nsga: NsgaConfig, seed: u64) -> Box<dyn Sampler> {
    match kind {
        SamplerKind::Nsga2 => Box::new(NsgaState::new(space, nsga, seed)),
        SamplerKind::Random => Box::new(RandomSampler::new(space, seed)),
    }
}
