//! Multi-objective search over equation structures, combining dominance
//! ranking with simplex-decomposed sub-problems: evenly spaced weight
//! vectors, PBI scalarization, neighborhood mating, structure-exchange
//! crossover, mutation to uniqueness and a crowding-based update rule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equation::{
    dominates, random_system, random_term, term_admissible, Equation, ObjectiveVector,
    SystemChromosome,
};
use crate::error::{Error, Result};
use crate::fitting::{discrepancy_fitness, fit_coefficients, EvalContext};
use crate::grid::GridField;
use crate::preprocess::DerivativeCache;
use crate::solution::{solution_fitness, BLOWUP_PENALTY};
use crate::tokens::TokenPool;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightVector {
    pub components: Vec<f64>,
    pub neighbor_ids: Vec<usize>,
}

/// Evenly spaced weight vectors on the unit simplex: all compositions of `h`
/// into `m` nonnegative parts, scaled by 1/h. Each vector gets its
/// `n_neighbors` nearest peers by Euclidean distance.
pub fn das_dennis_weights(m: usize, h: usize, n_neighbors: usize) -> Vec<WeightVector> {
    assert!(m >= 1 && h >= 1);
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut current = vec![0usize; m];
    compositions(h, m, 0, &mut current, &mut points);
    let n = points.len();
    let t = n_neighbors.min(n.saturating_sub(1));
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                let da = sq_dist(p, &points[a]);
                let db = sq_dist(p, &points[b]);
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            WeightVector {
                components: p.clone(),
                neighbor_ids: order[..t].to_vec(),
            }
        })
        .collect()
}

fn compositions(rem: usize, m: usize, pos: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
    if pos == m - 1 {
        current[pos] = rem;
        let h: usize = current.iter().sum();
        out.push(current.iter().map(|&c| c as f64 / h as f64).collect());
        return;
    }
    for v in 0..=rem {
        current[pos] = v;
        compositions(rem - v, m, pos + 1, current, out);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Penalty-based intersection scalarization: projection distance d1 along
/// the weight direction plus theta times the perpendicular distance d2.
pub fn pbi(
    objectives: &[f64],
    weight: &[f64],
    theta: f64,
    ideal: &[f64],
) -> Result<(f64, f64, f64)> {
    if objectives.len() != weight.len() || ideal.len() != weight.len() {
        return Err(Error::Contract("pbi dimensions disagree".into()));
    }
    let w_norm = weight.iter().map(|w| w * w).sum::<f64>().sqrt();
    if w_norm == 0.0 {
        return Err(Error::Contract("pbi weight vector is zero".into()));
    }
    let shifted: Vec<f64> = objectives
        .iter()
        .zip(ideal)
        .map(|(o, i)| (o - i).max(0.0))
        .collect();
    let d1 = shifted
        .iter()
        .zip(weight)
        .map(|(f, w)| f * w)
        .sum::<f64>()
        .abs()
        / w_norm;
    let d2 = shifted
        .iter()
        .zip(weight)
        .map(|(f, w)| {
            let p = f - d1 * w / w_norm;
            p * p
        })
        .sum::<f64>()
        .sqrt();
    Ok((d1 + theta * d2, d1, d2))
}

/// Fast non-dominated sorting into fronts of indices.
pub fn nondominated_sort(objectives: &[ObjectiveVector]) -> Result<Vec<Vec<usize>>> {
    let n = objectives.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if dominates(&objectives[i], &objectives[j])? {
                dominated_by[i].push(j);
            } else if dominates(&objectives[j], &objectives[i])? {
                counts[i] += 1;
            }
        }
    }
    let mut levels: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next: Vec<usize> = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        levels.push(std::mem::take(&mut current));
        next.sort_unstable();
        current = next;
    }
    Ok(levels)
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub chromosome: SystemChromosome,
    pub objectives: ObjectiveVector,
    pub region_id: usize,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeaddConfig {
    pub h_divisions: usize,
    pub theta: f64,
    pub delta: f64,
    pub n_parents: usize,
    pub epochs: usize,
    pub swap_prob: f64,
    pub mutation_rate: f64,
    pub sparsity_range: (f64, f64),
    pub n_terms: usize,
    pub max_factors: usize,
    pub seed: u64,
}

impl Default for MoeaddConfig {
    fn default() -> Self {
        Self {
            h_divisions: 7,
            theta: 4.0,
            delta: 0.9,
            n_parents: 2,
            epochs: 50,
            swap_prob: 0.5,
            mutation_rate: 0.8,
            sparsity_range: (1e-9, 1.0),
            n_terms: 5,
            max_factors: 2,
            seed: 0,
        }
    }
}

impl MoeaddConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_divisions == 0 {
            return Err(Error::InvalidConfig("h_divisions must be >= 1".into()));
        }
        if self.theta <= 0.0 {
            return Err(Error::InvalidConfig("theta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidConfig("delta must be in [0, 1]".into()));
        }
        if self.n_parents < 2 {
            return Err(Error::InvalidConfig("n_parents must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.swap_prob) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::InvalidConfig("rates must be in [0, 1]".into()));
        }
        let (lo, hi) = self.sparsity_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidConfig("sparsity range must be positive".into()));
        }
        if self.n_terms < 2 || self.max_factors == 0 {
            return Err(Error::InvalidConfig("need n_terms >= 2 and max_factors >= 1".into()));
        }
        Ok(())
    }

    pub fn neighborhood_size(&self, n_pop: usize) -> usize {
        ((n_pop + 4) / 5).max(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessMode {
    Discrepancy,
    Solution,
}

/// Scores a chromosome on the data: per equation, fit coefficients and
/// produce the (quality, complexity) pair. Evaluation failures map to a
/// large penalty so search continues.
pub struct Evaluator<'a> {
    pub data: &'a [GridField],
    pub caches: &'a [DerivativeCache],
    pub node_weights: Vec<f64>,
    pub mode: FitnessMode,
}

impl Evaluator<'_> {
    pub fn evaluate(&self, mut sys: SystemChromosome) -> (SystemChromosome, ObjectiveVector) {
        let ctx = EvalContext::new(self.data[0].axes(), self.caches);
        let n = sys.equations.len();
        let mut fit_ok = vec![false; n];
        for (v, eq) in sys.equations.iter_mut().enumerate() {
            eq.fit = None;
            // the target gene only proposes a starting point; every term that
            // could serve as the regression target is tried and the equation
            // keeps the orientation with the smallest residual
            let mut best: Option<(f64, Equation)> = None;
            for idx in 0..eq.terms.len() {
                if !eq.terms[idx].contains_deriv_of(eq.variable) {
                    continue;
                }
                let mut trial = eq.clone();
                trial.target_idx = idx;
                let Ok(fit) = fit_coefficients(&trial, &ctx, &self.node_weights) else {
                    continue;
                };
                trial.fit = Some(fit);
                let Ok(q) = discrepancy_fitness(&trial, &ctx, &self.node_weights) else {
                    continue;
                };
                if best.as_ref().map_or(true, |(bq, _)| q < *bq) {
                    best = Some((q, trial));
                }
            }
            if let Some((_, fitted)) = best {
                *eq = fitted;
                fit_ok[v] = true;
            }
        }
        let mut q = vec![BLOWUP_PENALTY; n];
        if fit_ok.iter().all(|&ok| ok) {
            if self.mode == FitnessMode::Solution {
                // a structure the integrator cannot isolate keeps the penalty:
                // discrepancy values live on a different scale and would make
                // unintegrable candidates look spuriously good
                if let Ok(values) = solution_fitness(&sys, self.data, self.caches) {
                    q = values;
                }
            } else {
                for (v, eq) in sys.equations.iter().enumerate() {
                    q[v] = discrepancy_fitness(eq, &ctx, &self.node_weights)
                        .unwrap_or(BLOWUP_PENALTY);
                }
            }
        } else {
            for (v, eq) in sys.equations.iter().enumerate() {
                if fit_ok[v] {
                    q[v] = discrepancy_fitness(eq, &ctx, &self.node_weights)
                        .unwrap_or(BLOWUP_PENALTY);
                }
            }
        }
        let mut objectives = Vec::with_capacity(2 * n);
        for (v, eq) in sys.equations.iter().enumerate() {
            objectives.push(q[v]);
            objectives.push(eq.complexity());
        }
        (sys, objectives)
    }
}

/// Parent selection: with probability delta, draw from the region and its
/// neighborhood (topped up globally when short); otherwise uniformly from
/// the whole population. Returns indices into `population`.
pub fn mating_selection<R: Rng>(
    region_id: usize,
    population: &[Individual],
    weights: &[WeightVector],
    delta: f64,
    n_parents: usize,
    rng: &mut R,
) -> Vec<usize> {
    assert!(!population.is_empty());
    let n = population.len();
    if n_parents > n {
        log::warn!("requested {n_parents} parents from a population of {n}; sampling with replacement");
        return (0..n_parents).map(|_| rng.gen_range(0..n)).collect();
    }
    if rng.gen::<f64>() < delta {
        let hood: Vec<usize> = std::iter::once(region_id)
            .chain(weights[region_id].neighbor_ids.iter().copied())
            .collect();
        let mut local: Vec<usize> = (0..n)
            .filter(|&i| hood.contains(&population[i].region_id))
            .collect();
        local.shuffle(rng);
        local.truncate(n_parents);
        if local.len() < n_parents {
            let mut rest: Vec<usize> = (0..n).filter(|i| !local.contains(i)).collect();
            rest.shuffle(rng);
            local.extend(rest.into_iter().take(n_parents - local.len()));
        }
        local
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        all.truncate(n_parents);
        all
    }
}

/// Structure exchange between two chromosomes: non-shared terms are paired
/// and swapped, then matched leftover terms may trade one differing factor;
/// every swap that would break an equation invariant is rolled back. The
/// sparsity constants of each equation pair are blended.
pub fn crossover<R: Rng>(
    a: &SystemChromosome,
    b: &SystemChromosome,
    pool: &TokenPool,
    swap_prob: f64,
    rng: &mut R,
) -> (SystemChromosome, SystemChromosome) {
    assert_eq!(a.n_vars(), b.n_vars(), "parents must describe the same variables");
    let mut ca = a.clone();
    let mut cb = b.clone();
    for v in 0..ca.n_vars() {
        crossover_equation(&mut ca.equations[v], &mut cb.equations[v], pool, swap_prob, rng);
    }
    (ca, cb)
}

fn crossover_equation<R: Rng>(
    ea: &mut Equation,
    eb: &mut Equation,
    pool: &TokenPool,
    swap_prob: f64,
    rng: &mut R,
) {
    let mut unique_a: Vec<usize> = (0..ea.terms.len())
        .filter(|&i| !eb.terms.iter().any(|t| t.structural_eq(&ea.terms[i])))
        .collect();
    let mut unique_b: Vec<usize> = (0..eb.terms.len())
        .filter(|&j| !ea.terms.iter().any(|t| t.structural_eq(&eb.terms[j])))
        .collect();
    unique_a.shuffle(rng);
    unique_b.shuffle(rng);
    let pairs = unique_a.len().min(unique_b.len());
    let mut leftovers: Vec<(usize, usize)> = Vec::new();
    for k in 0..pairs {
        let (i, j) = (unique_a[k], unique_b[k]);
        if rng.gen::<f64>() < swap_prob {
            std::mem::swap(&mut ea.terms[i], &mut eb.terms[j]);
            if ea.validate().is_err() || eb.validate().is_err() {
                std::mem::swap(&mut ea.terms[i], &mut eb.terms[j]);
                leftovers.push((i, j));
            }
        } else {
            leftovers.push((i, j));
        }
    }
    // factor-level trade within unswapped pairs of equal arity
    for (i, j) in leftovers {
        if ea.terms[i].n_factors() != eb.terms[j].n_factors() {
            continue;
        }
        if rng.gen::<f64>() >= swap_prob {
            continue;
        }
        let diff_a: Vec<usize> = (0..ea.terms[i].n_factors())
            .filter(|&f| {
                !eb.terms[j]
                    .factors()
                    .iter()
                    .any(|g| g.structural_eq(&ea.terms[i].factors()[f]))
            })
            .collect();
        let diff_b: Vec<usize> = (0..eb.terms[j].n_factors())
            .filter(|&f| {
                !ea.terms[i]
                    .factors()
                    .iter()
                    .any(|g| g.structural_eq(&eb.terms[j].factors()[f]))
            })
            .collect();
        if diff_a.is_empty() || diff_b.is_empty() {
            continue;
        }
        let fa = diff_a[rng.gen_range(0..diff_a.len())];
        let fb = diff_b[rng.gen_range(0..diff_b.len())];
        let tok_a = ea.terms[i].factors()[fa].clone();
        let tok_b = eb.terms[j].factors()[fb].clone();
        let (Ok(new_a), Ok(new_b)) = (
            ea.terms[i].with_factor_replaced(fa, tok_b),
            eb.terms[j].with_factor_replaced(fb, tok_a),
        ) else {
            continue;
        };
        let old_a = std::mem::replace(&mut ea.terms[i], new_a);
        let old_b = std::mem::replace(&mut eb.terms[j], new_b);
        if ea.validate().is_err()
            || eb.validate().is_err()
            || !term_admissible(pool, &ea.terms[i])
            || !term_admissible(pool, &eb.terms[j])
        {
            ea.terms[i] = old_a;
            eb.terms[j] = old_b;
        }
    }
    let alpha: f64 = rng.gen();
    let (la, lb) = (ea.sparsity, eb.sparsity);
    ea.sparsity = alpha * la + (1.0 - alpha) * lb;
    eb.sparsity = (1.0 - alpha) * la + alpha * lb;
    ea.fit = None;
    eb.fit = None;
}

/// One mutation: replace a term, replace a factor, perturb a token
/// parameter, or retune the sparsity gene. Structural ops are retried until
/// the result is distinct from the source and from everything in
/// `population` (capped at 50 attempts).
pub fn mutate<R: Rng>(
    source: &SystemChromosome,
    pool: &TokenPool,
    population: &[&SystemChromosome],
    max_factors: usize,
    sparsity_range: (f64, f64),
    rng: &mut R,
) -> SystemChromosome {
    // crossover only blends sparsity constants between survivors, which
    // drives them toward a common magnitude; an occasional log-scale kick
    // keeps the full range reachable
    if rng.gen::<f64>() < 0.25 {
        let mut candidate = source.clone();
        let v = rng.gen_range(0..candidate.n_vars());
        let eq = &mut candidate.equations[v];
        let kick = 10f64.powf(rng.gen_range(-2.0..2.0));
        eq.sparsity = (eq.sparsity * kick).clamp(sparsity_range.0, sparsity_range.1);
        eq.fit = None;
        return candidate;
    }
    for attempt in 0..50 {
        let mut candidate = source.clone();
        let v = rng.gen_range(0..candidate.n_vars());
        if !mutate_equation(&mut candidate.equations[v], pool, max_factors, rng) {
            continue;
        }
        candidate.equations[v].fit = None;
        let duplicate = candidate.structural_equal(source)
            || population.iter().any(|p| candidate.structural_equal(p));
        if !duplicate {
            return candidate;
        }
        if attempt == 49 {
            log::warn!("mutation could not reach a unique structure; accepting duplicate");
            return candidate;
        }
    }
    source.clone()
}

fn mutate_equation<R: Rng>(
    eq: &mut Equation,
    pool: &TokenPool,
    max_factors: usize,
    rng: &mut R,
) -> bool {
    let op = rng.gen_range(0..3u8);
    let backup = eq.clone();
    let applied = match op {
        0 => {
            // fresh random term in a random slot
            match random_term(pool, max_factors, rng) {
                Some(term) => {
                    let slot = rng.gen_range(0..eq.terms.len());
                    eq.terms[slot] = term;
                    true
                }
                None => false,
            }
        }
        1 => {
            let ti = rng.gen_range(0..eq.terms.len());
            let fi = rng.gen_range(0..eq.terms[ti].n_factors());
            let tok = pool.sample_token(rng);
            match eq.terms[ti].with_factor_replaced(fi, tok) {
                Ok(term) => {
                    eq.terms[ti] = term;
                    true
                }
                Err(_) => false,
            }
        }
        _ => {
            let ti = rng.gen_range(0..eq.terms.len());
            let fi = rng.gen_range(0..eq.terms[ti].n_factors());
            let tok = pool.perturb_param(&eq.terms[ti].factors()[fi], rng);
            match eq.terms[ti].with_factor_replaced(fi, tok) {
                Ok(term) => {
                    eq.terms[ti] = term;
                    true
                }
                Err(_) => false,
            }
        }
    };
    if applied && eq.validate().is_ok() && eq.terms.iter().all(|t| term_admissible(pool, t)) {
        true
    } else {
        *eq = backup;
        false
    }
}

/// Objectives scaled by the population-wide per-component maximum so that
/// quality and complexity share a comparable range.
fn normalized_objectives(population: &[Individual]) -> Vec<Vec<f64>> {
    let m = population[0].objectives.len();
    let mut maxes = vec![1e-12f64; m];
    for ind in population {
        for (mx, o) in maxes.iter_mut().zip(&ind.objectives) {
            *mx = mx.max(*o);
        }
    }
    population
        .iter()
        .map(|ind| {
            ind.objectives
                .iter()
                .zip(&maxes)
                .map(|(o, mx)| o / mx)
                .collect()
        })
        .collect()
}

fn pbi_values(
    population: &[Individual],
    norm: &[Vec<f64>],
    weights: &[WeightVector],
    theta: f64,
) -> Result<Vec<f64>> {
    let m = norm[0].len();
    let ideal = vec![0.0; m];
    population
        .iter()
        .zip(norm)
        .map(|(ind, f)| {
            pbi(f, &weights[ind.region_id].components, theta, &ideal).map(|(g, _, _)| g)
        })
        .collect()
}

/// Most crowded region among `members`: highest occupancy, ties broken by
/// the larger PBI sum.
fn most_crowded_region(members: &[usize], population: &[Individual], g: &[f64]) -> usize {
    let mut counts: std::collections::BTreeMap<usize, (usize, f64)> = Default::default();
    for &i in members {
        let e = counts.entry(population[i].region_id).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += g[i];
    }
    *counts
        .iter()
        .max_by(|a, b| {
            (a.1 .0)
                .cmp(&b.1 .0)
                .then(a.1 .1.partial_cmp(&b.1 .1).unwrap())
        })
        .unwrap()
        .0
}

fn worst_in_region(members: &[usize], region: usize, population: &[Individual], g: &[f64]) -> usize {
    members
        .iter()
        .copied()
        .filter(|&i| population[i].region_id == region)
        .max_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap())
        .expect("region has members")
}

/// Insert the offspring, then remove exactly one individual by the
/// three-case crowding analysis, restoring the population size.
pub fn update_population(
    population: &mut Vec<Individual>,
    offspring: Individual,
    weights: &[WeightVector],
    theta: f64,
) -> Result<()> {
    population.push(offspring);
    let levels = nondominated_sort(
        &population.iter().map(|i| i.objectives.clone()).collect::<Vec<_>>(),
    )?;
    for (rank, level) in levels.iter().enumerate() {
        for &i in level {
            population[i].level = rank;
        }
    }
    let norm = normalized_objectives(population);
    let g = pbi_values(population, &norm, weights, theta)?;

    let all: Vec<usize> = (0..population.len()).collect();
    let remove = if levels.len() == 1 {
        let region = most_crowded_region(&all, population, &g);
        worst_in_region(&all, region, population, &g)
    } else {
        let last = levels.last().unwrap();
        if last.len() == 1 {
            let lone = last[0];
            let sole_occupant = population
                .iter()
                .enumerate()
                .all(|(i, ind)| i == lone || ind.region_id != population[lone].region_id);
            if sole_occupant {
                let second = &levels[levels.len() - 2];
                let region = most_crowded_region(second, population, &g);
                worst_in_region(second, region, population, &g)
            } else {
                lone
            }
        } else {
            let region = most_crowded_region(last, population, &g);
            worst_in_region(last, region, population, &g)
        }
    };
    population.remove(remove);
    let levels = nondominated_sort(
        &population.iter().map(|i| i.objectives.clone()).collect::<Vec<_>>(),
    )?;
    for (rank, level) in levels.iter().enumerate() {
        for &i in level {
            population[i].level = rank;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub best_q: Vec<f64>,
    pub pbi_sum: f64,
}

#[derive(Debug, Clone)]
pub struct ParetoArchive {
    pub individuals: Vec<Individual>,
    pub traces: Vec<EpochTrace>,
}

/// Nondominated-so-far archive insert. Penalized individuals stay out; an
/// accepted individual expels every archive member it dominates.
fn archive_insert(archive: &mut Vec<Individual>, ind: &Individual) -> Result<()> {
    if ind.objectives.iter().any(|o| *o >= BLOWUP_PENALTY) {
        return Ok(());
    }
    for a in archive.iter() {
        if a.objectives == ind.objectives || dominates(&a.objectives, &ind.objectives)? {
            return Ok(());
        }
    }
    archive.retain(|a| !dominates(&ind.objectives, &a.objectives).unwrap_or(false));
    let mut kept = ind.clone();
    kept.level = 0;
    archive.push(kept);
    Ok(())
}

/// Full optimization loop: weight construction, random seeding, then per
/// epoch one reproduction event per weight vector with crossover, mutation,
/// coefficient fitting and crowding update. The crowding update can push a
/// population off a once-found optimum, so the returned front is the set of
/// nondominated solutions seen across the whole run, with per-epoch traces.
pub fn run(config: &MoeaddConfig, pool: &TokenPool, eval: &Evaluator) -> Result<ParetoArchive> {
    config.validate()?;
    let n_vars = eval.data.len();
    let m = 2 * n_vars;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights = {
        let bare = das_dennis_weights(m, config.h_divisions, usize::MAX);
        let t = config.neighborhood_size(bare.len());
        das_dennis_weights(m, config.h_divisions, t)
    };
    let n_pop = weights.len();

    let mut population: Vec<Individual> = Vec::with_capacity(n_pop);
    let mut archive: Vec<Individual> = Vec::new();
    let mut regions: Vec<usize> = (0..n_pop).collect();
    regions.shuffle(&mut rng);
    for region in regions {
        // prefer structurally unique seeds; tiny pools may not admit enough
        let mut chrom = None;
        for attempt in 0..100 {
            let candidate = random_system(
                pool,
                n_vars,
                config.n_terms,
                config.max_factors,
                config.sparsity_range,
                &mut rng,
            )?;
            let duplicate = population
                .iter()
                .any(|i: &Individual| i.chromosome.structural_equal(&candidate));
            if !duplicate || attempt == 99 {
                chrom = Some(candidate);
                break;
            }
        }
        let chrom = chrom.expect("seeding loop always yields a candidate");
        let (chrom, objectives) = eval.evaluate(chrom);
        let ind = Individual {
            chromosome: chrom,
            objectives,
            region_id: region,
            level: 0,
        };
        archive_insert(&mut archive, &ind)?;
        population.push(ind);
    }
    let levels = nondominated_sort(
        &population.iter().map(|i| i.objectives.clone()).collect::<Vec<_>>(),
    )?;
    for (rank, level) in levels.iter().enumerate() {
        for &i in level {
            population[i].level = rank;
        }
    }

    let mut traces = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        for wi in 0..n_pop {
            let parents = mating_selection(
                wi,
                &population,
                &weights,
                config.delta,
                config.n_parents,
                &mut rng,
            );
            let pa = &population[parents[0]].chromosome;
            let pb = &population[parents[1]].chromosome;
            let (c1, c2) = crossover(pa, pb, pool, config.swap_prob, &mut rng);
            for child in [c1, c2] {
                let child = if rng.gen::<f64>() < config.mutation_rate {
                    let structures: Vec<&SystemChromosome> =
                        population.iter().map(|i| &i.chromosome).collect();
                    mutate(
                        &child,
                        pool,
                        &structures,
                        config.max_factors,
                        config.sparsity_range,
                        &mut rng,
                    )
                } else {
                    child
                };
                let (chrom, objectives) = eval.evaluate(child);
                archive_insert(
                    &mut archive,
                    &Individual {
                        chromosome: chrom.clone(),
                        objectives: objectives.clone(),
                        region_id: wi,
                        level: 0,
                    },
                )?;
                update_population(
                    &mut population,
                    Individual {
                        chromosome: chrom,
                        objectives,
                        region_id: wi,
                        level: 0,
                    },
                    &weights,
                    config.theta,
                )?;
            }
        }
        let best_q: Vec<f64> = (0..n_vars)
            .map(|v| {
                population
                    .iter()
                    .map(|i| i.objectives[2 * v])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let norm = normalized_objectives(&population);
        let g = pbi_values(&population, &norm, &weights, config.theta)?;
        let pbi_sum: f64 = population
            .iter()
            .zip(&g)
            .filter(|(i, _)| i.level == 0)
            .map(|(_, gi)| gi)
            .sum();
        traces.push(EpochTrace {
            epoch,
            best_q,
            pbi_sum,
        });
    }

    if archive.is_empty() {
        // every evaluation was penalized; report the final front as-is
        archive = population.iter().filter(|i| i.level == 0).cloned().collect();
    }
    Ok(ParetoArchive {
        individuals: archive,
        traces,
    })
}
