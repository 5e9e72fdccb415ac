//! Gibbs sampling of query atoms given an evidence world.
//!
//! Every sweep resamples each free atom from its full conditional
//! `σ(Σ_i w_i Δ_i(l))`. Chains run independently with derived seeds and
//! their counts are pooled in chain order, so a seed fixes the result
//! regardless of the thread count.

use std::collections::BTreeSet;

use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grounder::GroundingTable;
use crate::logic::{Universe, World};
use crate::model::{check_finite, KnowledgeBase};
use crate::par;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Serialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub burn_in: usize,
    /// Kept sweeps per chain.
    pub samples: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 3,
            burn_in: 1000,
            samples: 10_000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.chains == 0 {
            problems.push("chains must be at least 1".to_string());
        }
        if self.samples == 0 {
            problems.push("samples must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Logistic function, written to stay accurate for large `|s|`.
#[inline]
fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// One sweep over `free` in order.
#[inline]
pub fn sweep(
    weights: &[f64],
    table: &GroundingTable,
    free: &[usize],
    state: &mut [bool],
    rng: &mut Rng,
) {
    for &l in free {
        let p = logistic(table.weighted_delta(weights, state, l));
        state[l] = rng.random::<f64>() < p;
    }
}

/// Per-chain tallies over the kept sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainCounts {
    /// Sweeps in which `free[j]` was true, split into first and second half.
    pub halves: [Vec<u64>; 2],
    /// Sweeps in which every atom of `events[e]` was true.
    pub events: Vec<u64>,
    pub kept: usize,
}

/// Runs one chain from `state` and tallies the free atoms and `events`.
pub fn run_chain(
    weights: &[f64],
    table: &GroundingTable,
    free: &[usize],
    events: &[Vec<usize>],
    mut state: Vec<bool>,
    burn_in: usize,
    samples: usize,
    rng: &mut Rng,
) -> ChainCounts {
    for _ in 0..burn_in {
        sweep(weights, table, free, &mut state, rng);
    }
    let mut halves = [vec![0u64; free.len()], vec![0u64; free.len()]];
    let mut ev = vec![0u64; events.len()];
    for t in 0..samples {
        sweep(weights, table, free, &mut state, rng);
        let half = &mut halves[usize::from(2 * t >= samples)];
        for (c, &l) in half.iter_mut().zip(free) {
            *c += u64::from(state[l]);
        }
        for (c, atoms) in ev.iter_mut().zip(events) {
            *c += u64::from(atoms.iter().all(|&a| state[a]));
        }
    }
    ChainCounts {
        halves,
        events: ev,
        kept: samples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    /// Largest absolute difference between first- and second-half marginals
    /// of any free atom within a chain, per chain.
    pub split_disagreement: Vec<f64>,
    /// Largest spread of any free-atom marginal across chains.
    pub between_chains: f64,
}

/// Pooled Gibbs estimates over a set of free atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsEstimate {
    pub free: Vec<usize>,
    /// Marginal of `free[j]`.
    pub marginals: Vec<f64>,
    /// Probability of each requested conjunction.
    pub events: Vec<f64>,
    pub diagnostics: ChainDiagnostics,
}

/// Estimates marginals of `free` and the probabilities of `events` given
/// the clamped atoms of `evidence`. Chains start from uniform random states.
pub fn gibbs(
    weights: &[f64],
    table: &GroundingTable,
    free: &[usize],
    evidence: &[bool],
    events: &[Vec<usize>],
    config: &SamplerConfig,
) -> Result<GibbsEstimate> {
    config.validate()?;
    check_finite(weights)?;
    if free.is_empty() {
        return Err(Error::NoFreeAtoms);
    }
    if weights.len() != table.n_formulas() || evidence.len() != table.n_atoms() {
        return Err(Error::Invalid(
            "weights or evidence do not match the grounding".into(),
        ));
    }
    let mut seen = vec![false; table.n_atoms()];
    for &a in free {
        if a >= table.n_atoms() || std::mem::replace(&mut seen[a], true) {
            return Err(Error::Invalid(format!("bad or repeated free atom {a}")));
        }
    }
    if events.iter().flatten().any(|&a| a >= table.n_atoms()) {
        return Err(Error::Invalid("event atom out of range".into()));
    }
    let chains: Vec<ChainCounts> = par::map_indexed(config.chains, |c| {
        let mut rng = rng::stream(config.seed, c as u64);
        let mut state = evidence.to_vec();
        for &l in free {
            state[l] = rng.random::<bool>();
        }
        run_chain(
            weights,
            table,
            free,
            events,
            state,
            config.burn_in,
            config.samples,
            &mut rng,
        )
    });
    Ok(pool(free, &chains))
}

/// Combines chain tallies in chain order.
pub fn pool(free: &[usize], chains: &[ChainCounts]) -> GibbsEstimate {
    let total: usize = chains.iter().map(|c| c.kept).sum();
    let n = total.max(1) as f64;
    let mut marginals = vec![0.0; free.len()];
    let mut events = vec![0.0; chains.first().map_or(0, |c| c.events.len())];
    let mut split_disagreement = Vec::with_capacity(chains.len());
    let mut lo = vec![f64::INFINITY; free.len()];
    let mut hi = vec![f64::NEG_INFINITY; free.len()];
    for chain in chains {
        let first = (chain.kept / 2).max(1) as f64;
        let second = (chain.kept - chain.kept / 2).max(1) as f64;
        let mut worst: f64 = 0.0;
        for j in 0..free.len() {
            let (a, b) = (chain.halves[0][j], chain.halves[1][j]);
            marginals[j] += (a + b) as f64;
            if chain.kept >= 2 {
                worst = worst.max((a as f64 / first - b as f64 / second).abs());
            }
            let m = (a + b) as f64 / chain.kept.max(1) as f64;
            lo[j] = lo[j].min(m);
            hi[j] = hi[j].max(m);
        }
        split_disagreement.push(worst);
        for (e, &c) in events.iter_mut().zip(&chain.events) {
            *e += c as f64;
        }
    }
    marginals.iter_mut().for_each(|m| *m /= n);
    events.iter_mut().for_each(|e| *e /= n);
    let between_chains = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
    GibbsEstimate {
        free: free.to_vec(),
        marginals,
        events,
        diagnostics: ChainDiagnostics {
            split_disagreement,
            between_chains,
        },
    }
}

/// What to ask about one object.
#[derive(Debug, Clone)]
pub struct QuerySpec {
    pub object: String,
    pub affordance_predicate: String,
    pub region_predicate: String,
    pub affordance: Option<String>,
}

impl QuerySpec {
    pub fn new(object: impl Into<String>) -> Self {
        QuerySpec {
            object: object.into(),
            affordance_predicate: "hasAffordance".into(),
            region_predicate: "graspRegion".into(),
            affordance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairProbability {
    pub affordance: String,
    pub region: String,
    /// Share of the pair among all pairs: `both / Σ both`.
    pub probability: f64,
    /// `P(hasAffordance(o, a) ∧ graspRegion(o, r))` estimated directly.
    pub both: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelProbability {
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub object: String,
    /// Sorted by decreasing probability, ties by affordance then region.
    pub pairs: Vec<PairProbability>,
    pub affordances: Vec<LabelProbability>,
    pub regions: Vec<LabelProbability>,
    /// The most probable affordance for each region (`GA_r`).
    pub best_per_region: Vec<PairProbability>,
    pub diagnostics: ChainDiagnostics,
    /// True if no sweep ever had an affordance and a region true together;
    /// the pair distribution is then uniform.
    pub degenerate: bool,
}

/// The slot of the open-domain argument and of the label argument of a
/// binary `predicate(object, label)`.
fn binary_layout(schema: &crate::logic::Schema, name: &str) -> Result<(usize, usize, usize)> {
    let p = schema
        .predicate_index(name)
        .ok_or_else(|| Error::Invalid(format!("unknown predicate `{name}`")))?;
    let open = schema.open_domain();
    let args = &schema.predicates[p].args;
    match args.as_slice() {
        [a, b] if Some(*a) == open && Some(*b) != open => Ok((p, 0, *b)),
        [a, b] if Some(*b) == open && Some(*a) != open => Ok((p, 1, *a)),
        _ => Err(Error::Invalid(format!(
            "`{name}` must take one object and one label argument"
        ))),
    }
}

fn label_atoms(universe: &Universe, layout: (usize, usize, usize), object: usize) -> Vec<usize> {
    let (p, slot, domain) = layout;
    (0..universe.constants(domain).len())
        .map(|c| {
            let args = if slot == 0 { [object, c] } else { [c, object] };
            universe.atom_index(p, &args)
        })
        .collect()
}

/// Posterior over (affordance, region) pairs for `request.object` given the
/// closed-world `evidence`. The evidence may not mention the query atoms.
pub fn query(
    kb: &KnowledgeBase,
    evidence: &World,
    request: &QuerySpec,
    config: &SamplerConfig,
) -> Result<QueryResult> {
    kb.check_weights()?;
    let mut objects: BTreeSet<String> = evidence.objects.clone();
    objects.insert(request.object.clone());
    let objects: Vec<String> = objects.into_iter().collect();
    if kb.schema.open_domain().is_none() {
        return Err(Error::Invalid("schema has no object domain".into()));
    }
    let universe = Universe::new(&kb.schema, &objects)?;
    let object = objects.iter().position(|o| *o == request.object).unwrap();
    let a_layout = binary_layout(&kb.schema, &request.affordance_predicate)?;
    let r_layout = binary_layout(&kb.schema, &request.region_predicate)?;
    let a_atoms = label_atoms(&universe, a_layout, object);
    let r_atoms = label_atoms(&universe, r_layout, object);
    let evidence_state = universe.state_of(evidence)?;
    let clash: Vec<String> = a_atoms
        .iter()
        .chain(&r_atoms)
        .filter(|&&a| evidence_state[a])
        .map(|&a| universe.atom_name(a))
        .collect();
    if !clash.is_empty() {
        return Err(Error::Validation(
            clash
                .into_iter()
                .map(|a| format!("evidence contains query atom {a}"))
                .collect(),
        ));
    }
    let a_labels = universe.constants(a_layout.2).to_vec();
    let r_labels = universe.constants(r_layout.2).to_vec();
    if let Some(req) = &request.affordance {
        if !a_labels.contains(req) {
            return Err(Error::AffordanceUnavailable {
                requested: req.clone(),
                available: a_labels,
            });
        }
    }
    let table = GroundingTable::new(&kb.formulas, universe)?;
    let free: Vec<usize> = a_atoms.iter().chain(&r_atoms).copied().collect();
    let events: Vec<Vec<usize>> = a_atoms
        .iter()
        .flat_map(|&a| r_atoms.iter().map(move |&r| vec![a, r]))
        .collect();
    let est = gibbs(&kb.weights, &table, &free, &evidence_state, &events, config)?;

    let total: f64 = est.events.iter().sum();
    let degenerate = total <= 0.0;
    let mut pairs = Vec::with_capacity(events.len());
    for (ai, a) in a_labels.iter().enumerate() {
        for (ri, r) in r_labels.iter().enumerate() {
            let both = est.events[ai * r_labels.len() + ri];
            let probability = if degenerate {
                1.0 / events.len() as f64
            } else {
                both / total
            };
            pairs.push(PairProbability {
                affordance: a.clone(),
                region: r.clone(),
                probability,
                both,
            });
        }
    }
    pairs.sort_by(rank);
    let labels = |names: &[String], offset: usize| {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| LabelProbability {
                label: n.clone(),
                probability: est.marginals[offset + i],
            })
            .collect()
    };
    let best_per_region = r_labels
        .iter()
        .filter_map(|r| pairs.iter().find(|p| &p.region == r).cloned())
        .collect();
    Ok(QueryResult {
        object: request.object.clone(),
        affordances: labels(&a_labels, 0),
        regions: labels(&r_labels, a_labels.len()),
        pairs,
        best_per_region,
        diagnostics: est.diagnostics,
        degenerate,
    })
}

fn rank(a: &PairProbability, b: &PairProbability) -> std::cmp::Ordering {
    b.probability
        .total_cmp(&a.probability)
        .then_with(|| a.affordance.cmp(&b.affordance))
        .then_with(|| a.region.cmp(&b.region))
}

/// Picks G*: the most probable pair, restricted to `affordance` if given.
/// Ties go to the lexicographically smaller (affordance, region).
pub fn select_grasp<'a>(
    pairs: &'a [PairProbability],
    affordance: Option<&str>,
) -> Result<&'a PairProbability> {
    if pairs.is_empty() {
        return Err(Error::Empty("posterior"));
    }
    let best = pairs
        .iter()
        .filter(|p| affordance.is_none_or(|a| p.affordance == a))
        .filter(|p| affordance.is_none() || p.probability > 0.0)
        .min_by(|a, b| rank(a, b));
    best.ok_or_else(|| {
        let available: BTreeSet<String> = pairs
            .iter()
            .filter(|p| p.probability > 0.0)
            .map(|p| p.affordance.clone())
            .collect();
        Error::AffordanceUnavailable {
            requested: affordance.unwrap_or_default().to_string(),
            available: available.into_iter().collect(),
        }
    })
}

#[cfg(test)]
mod tests;
