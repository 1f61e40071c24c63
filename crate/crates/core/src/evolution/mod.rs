//! Constraint-respecting evolutionary search and its random baseline.

mod pattern;
mod tabular;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::searchspace::{architecture_flops, flops_extremes, random_architecture, Architecture, ChoiceKind, Constraint, SearchSpace, NUM_CHOICES};
use crate::supernet::{evaluate_path, Phase, SupernetWeights};
use crate::tasks::{DatasetSplit, TaskSpec};

pub use pattern::{pattern_report, PatternReport};
pub use tabular::TabularFitness;

/// A candidate architecture and its fitness once evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub theta: Architecture,
    pub flops: u64,
    pub fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub parent_size: usize,
    pub iterations: usize,
    /// Per-position probability of switching to a different choice.
    pub mutation_probability: f64,
    pub constraint: Constraint,
    pub max_resample_attempts: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            parent_size: 10,
            iterations: 20,
            mutation_probability: 0.1,
            constraint: Constraint::UNBOUNDED,
            max_resample_attempts: 1000,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfiguration(m.into()));
        if self.population_size == 0 {
            return bad("evolution.population_size must be positive");
        }
        if self.parent_size == 0 || self.parent_size > self.population_size {
            return bad("evolution.parent_size must be in 1..=population_size");
        }
        if self.iterations == 0 {
            return bad("evolution.iterations must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.mutation_probability) {
            return bad("evolution.mutation_probability must be in [0, 1]");
        }
        if self.max_resample_attempts == 0 {
            return bad("evolution.max_resample_attempts must be positive");
        }
        Ok(())
    }

    /// Total number of logged evaluations of one search.
    pub fn budget(&self) -> usize {
        self.population_size * self.iterations
    }
}

/// Scores architectures; higher is better.
pub trait Fitness {
    fn evaluate(&mut self, arch: &Architecture) -> Result<f64>;

    /// Scores a whole generation. Implementations may evaluate in parallel
    /// but must return results in input order.
    fn evaluate_batch(&mut self, archs: &[Architecture]) -> Result<Vec<f64>> {
        archs.iter().map(|a| self.evaluate(a)).collect()
    }
}

impl<F: FnMut(&Architecture) -> Result<f64>> Fitness for F {
    fn evaluate(&mut self, arch: &Architecture) -> Result<f64> {
        self(arch)
    }
}

/// Fitness with inherited supernet weights, see [`evaluate_path`].
pub struct SupernetFitness<'a> {
    weights: &'a SupernetWeights,
    task: TaskSpec,
    calibration: &'a DatasetSplit,
    validation: &'a DatasetSplit,
    batch_size: usize,
}

impl<'a> SupernetFitness<'a> {
    pub fn new(
        weights: &'a SupernetWeights,
        task: TaskSpec,
        calibration: &'a DatasetSplit,
        validation: &'a DatasetSplit,
        batch_size: usize,
    ) -> Result<Self> {
        weights.require_phase(Phase::Finetuned)?;
        if batch_size == 0 {
            return Err(Error::InvalidConfiguration("evaluation batch size must be positive".into()));
        }
        Ok(Self {
            weights,
            task,
            calibration,
            validation,
            batch_size,
        })
    }
}

impl Fitness for SupernetFitness<'_> {
    fn evaluate(&mut self, arch: &Architecture) -> Result<f64> {
        evaluate_path(self.weights, arch, &self.task, self.calibration, self.validation, self.batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    Evolution,
    Random,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::Evolution => "evolution",
            Controller::Random => "random",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "evolution" | "ea" => Ok(Controller::Evolution),
            "random" => Ok(Controller::Random),
            _ => Err(Error::InvalidConfiguration(format!("unknown controller `{name}`"))),
        }
    }
}

/// One row of the search log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub index: usize,
    pub architecture: Architecture,
    pub flops: u64,
    pub fitness: f64,
    pub best_so_far: f64,
    pub memo_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub controller: Controller,
    pub best_architecture: Architecture,
    pub best_fitness: f64,
    pub log: Vec<LogRow>,
}

impl SearchResult {
    /// Fitness computations that were not served from the memo table.
    pub fn computed_evaluations(&self) -> usize {
        self.log.iter().filter(|r| !r.memo_hit).count()
    }

    /// Best-so-far value after each iteration.
    pub fn best_curve(&self) -> Vec<f64> {
        let mut curve: Vec<f64> = Vec::new();
        for row in &self.log {
            if row.iteration == curve.len() {
                curve.push(row.best_so_far);
            } else {
                *curve.last_mut().expect("rows arrive in iteration order") = row.best_so_far;
            }
        }
        curve
    }
}

fn check_feasible(space: &SearchSpace, constraint: &Constraint) -> Result<()> {
    if constraint.is_unbounded() {
        return Ok(());
    }
    let ((_, cheapest), _) = flops_extremes(space)?;
    if !constraint.admits(cheapest) {
        return Err(Error::ConstrainedSampling {
            attempts: 0,
            reason: format!(
                "the cheapest path needs {cheapest} MACs, above the budget of {}",
                constraint.max_flops
            ),
        });
    }
    Ok(())
}

fn exhausted(attempts: usize, what: &str, constraint: &Constraint) -> Error {
    Error::ConstrainedSampling {
        attempts,
        reason: format!("no {what} within {} MACs", constraint.max_flops),
    }
}

fn individual(theta: Architecture, space: &SearchSpace) -> Result<Individual> {
    let flops = architecture_flops(&theta, space)?;
    Ok(Individual {
        theta,
        flops,
        fitness: None,
    })
}

/// `population_size` distinct random architectures, each within the budget.
pub fn initialize_population<R: Rng + ?Sized>(
    space: &SearchSpace,
    config: &EvolutionConfig,
    rng: &mut R,
) -> Result<Vec<Individual>> {
    config.validate()?;
    check_feasible(space, &config.constraint)?;
    let mut population: Vec<Individual> = Vec::with_capacity(config.population_size);
    while population.len() < config.population_size {
        let mut placed = false;
        for _ in 0..config.max_resample_attempts {
            let candidate = individual(random_architecture(space, rng), space)?;
            if config.constraint.admits(candidate.flops)
                && population.iter().all(|p| p.theta != candidate.theta)
            {
                population.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(exhausted(config.max_resample_attempts, "new distinct architecture", &config.constraint));
        }
    }
    Ok(population)
}

/// The `k` fittest individuals, best first; ties keep population order.
pub fn select_topk(population: &[Individual], k: usize) -> Result<Vec<Individual>> {
    if k > population.len() {
        return Err(Error::InvalidConfiguration(format!(
            "cannot select {k} parents from {} individuals",
            population.len()
        )));
    }
    let mut scored: Vec<(f64, &Individual)> = Vec::with_capacity(population.len());
    for ind in population {
        let f = ind
            .fitness
            .ok_or_else(|| Error::InvalidArchitecture(format!("{} has not been evaluated", ind.theta)))?;
        scored.push((f, ind));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored.into_iter().take(k).map(|(_, i)| i.clone()).collect())
}

fn mutate<R: Rng + ?Sized>(parent: &Architecture, probability: f64, rng: &mut R) -> Architecture {
    let mut child = parent.clone();
    for c in child.choices_mut() {
        if rng.random_bool(probability) {
            let r = rng.random_range(0..NUM_CHOICES - 1);
            let pick = if r >= c.index() { r + 1 } else { r };
            *c = ChoiceKind::ALL[pick];
        }
    }
    child
}

fn crossover<R: Rng + ?Sized>(a: &Architecture, b: &Architecture, rng: &mut R) -> Architecture {
    let choices = a
        .choices()
        .iter()
        .zip(b.choices())
        .map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y })
        .collect();
    Architecture::new(choices)
}

/// `population_size` children: the first half (rounded up) by mutation,
/// the rest by uniform crossover of two distinct parents. Children over the
/// budget are redrawn.
pub fn make_children<R: Rng + ?Sized>(
    parents: &[Individual],
    space: &SearchSpace,
    config: &EvolutionConfig,
    rng: &mut R,
) -> Result<Vec<Individual>> {
    if parents.is_empty() {
        return Err(Error::Empty("parent set"));
    }
    let n = config.population_size;
    let mutations = n.div_ceil(2);
    let mut children = Vec::with_capacity(n);
    for slot in 0..n {
        let mut child = None;
        for _ in 0..config.max_resample_attempts {
            let theta = if slot < mutations {
                let p = &parents[rng.random_range(0..parents.len())];
                mutate(&p.theta, config.mutation_probability, rng)
            } else {
                let i = rng.random_range(0..parents.len());
                let j = if parents.len() > 1 {
                    let r = rng.random_range(0..parents.len() - 1);
                    if r >= i { r + 1 } else { r }
                } else {
                    i
                };
                crossover(&parents[i].theta, &parents[j].theta, rng)
            };
            let candidate = individual(theta, space)?;
            if config.constraint.admits(candidate.flops) {
                child = Some(candidate);
                break;
            }
        }
        match child {
            Some(c) => children.push(c),
            None => return Err(exhausted(config.max_resample_attempts, "child", &config.constraint)),
        }
    }
    Ok(children)
}

fn sample_generation<R: Rng + ?Sized>(
    space: &SearchSpace,
    config: &EvolutionConfig,
    rng: &mut R,
) -> Result<Vec<Individual>> {
    let mut generation = Vec::with_capacity(config.population_size);
    for _ in 0..config.population_size {
        let mut drawn = None;
        for _ in 0..config.max_resample_attempts {
            let candidate = individual(random_architecture(space, rng), space)?;
            if config.constraint.admits(candidate.flops) {
                drawn = Some(candidate);
                break;
            }
        }
        generation.push(drawn.ok_or_else(|| exhausted(config.max_resample_attempts, "architecture", &config.constraint))?);
    }
    Ok(generation)
}

struct Tracker<'o> {
    memo: BTreeMap<Vec<u8>, f64>,
    best: Option<(f64, Architecture)>,
    log: Vec<LogRow>,
    observer: &'o mut dyn FnMut(&LogRow),
}

impl Tracker<'_> {
    fn evaluate(&mut self, iteration: usize, generation: &mut [Individual], fitness: &mut dyn Fitness) -> Result<()> {
        let mut fresh: Vec<Architecture> = Vec::new();
        let mut fresh_keys: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        for ind in generation.iter() {
            let key = ind.theta.key();
            if !self.memo.contains_key(&key) && !fresh_keys.contains_key(&key) {
                fresh_keys.insert(key, fresh.len());
                fresh.push(ind.theta.clone());
            }
        }
        let scores = if fresh.is_empty() { Vec::new() } else { fitness.evaluate_batch(&fresh)? };
        if scores.len() != fresh.len() {
            return Err(Error::InvalidConfiguration(format!(
                "fitness returned {} scores for {} architectures",
                scores.len(),
                fresh.len()
            )));
        }
        let mut first_use: BTreeMap<Vec<u8>, bool> = BTreeMap::new();
        for (index, ind) in generation.iter_mut().enumerate() {
            let key = ind.theta.key();
            let (f, memo_hit) = match fresh_keys.get(&key) {
                Some(&slot) if !first_use.contains_key(&key) => {
                    first_use.insert(key.clone(), true);
                    (scores[slot], false)
                }
                Some(&slot) => (scores[slot], true),
                None => (self.memo[&key], true),
            };
            if f.is_nan() {
                return Err(Error::NonFinite(format!("fitness of {} at iteration {iteration}", ind.theta)));
            }
            self.memo.insert(key, f);
            ind.fitness = Some(f);
            if self.best.as_ref().is_none_or(|(b, _)| f > *b) {
                self.best = Some((f, ind.theta.clone()));
            }
            let row = LogRow {
                iteration,
                index,
                architecture: ind.theta.clone(),
                flops: ind.flops,
                fitness: f,
                best_so_far: self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0),
                memo_hit,
            };
            (self.observer)(&row);
            self.log.push(row);
        }
        Ok(())
    }
}

/// Runs `config.iterations` generations of `config.population_size`
/// evaluations with either controller. Every logged architecture satisfies
/// the constraint. `observer` sees each log row as it is produced.
pub fn run_search<R: Rng + ?Sized>(
    space: &SearchSpace,
    config: &EvolutionConfig,
    controller: Controller,
    fitness: &mut dyn Fitness,
    rng: &mut R,
    observer: &mut dyn FnMut(&LogRow),
) -> Result<SearchResult> {
    config.validate()?;
    check_feasible(space, &config.constraint)?;
    let mut tracker = Tracker {
        memo: BTreeMap::new(),
        best: None,
        log: Vec::with_capacity(config.budget()),
        observer,
    };
    let mut population = match controller {
        Controller::Evolution => initialize_population(space, config, rng)?,
        Controller::Random => sample_generation(space, config, rng)?,
    };
    for iteration in 0..config.iterations {
        tracker.evaluate(iteration, &mut population, fitness)?;
        if iteration + 1 == config.iterations {
            break;
        }
        population = match controller {
            Controller::Evolution => {
                let parents = select_topk(&population, config.parent_size)?;
                make_children(&parents, space, config, rng)?
            }
            Controller::Random => sample_generation(space, config, rng)?,
        };
    }
    let (best_fitness, best_architecture) = tracker.best.expect("at least one evaluation");
    Ok(SearchResult {
        controller,
        best_architecture,
        best_fitness,
        log: tracker.log,
    })
}

/// Summary line for humans, e.g. in the CLI's result file.
pub fn describe(result: &SearchResult) -> String {
    format!(
        "{}: best {} ({}) fitness {:.6} after {} evaluations",
        result.controller.name(),
        result.best_architecture.symbolic(),
        result.best_architecture,
        result.best_fitness,
        result.log.len()
    )
}
