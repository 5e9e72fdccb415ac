//! Generative weight learning: maximise the pseudo-log-likelihood of the
//! training worlds under a Gaussian prior with L-BFGS.
//!
//! The conditional of ground atom `l` given the rest of world `x` is
//! `P(x_l = 1 | rest) = σ(Σ_i w_i Δ_i(l))` with `Δ_i(l)` the change in
//! formula `i`'s true-grounding count when `l` flips from false to true.
//! The `Δ` vectors depend only on the data, so they are compiled once into
//! [`TrainingData`]; identical `(observed value, Δ)` rows are merged with a
//! multiplicity.

pub mod lbfgs;

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grounder::GroundingTable;
use crate::logic::{Universe, World};
use crate::model::{check_finite, KnowledgeBase};
use crate::par;

pub use lbfgs::Status;

#[derive(Debug, Clone, Serialize)]
pub struct TrainingConfig {
    /// Standard deviation of the zero-mean Gaussian prior on every weight;
    /// `f64::INFINITY` disables the prior.
    pub prior_sigma: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub history: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            prior_sigma: 10.0,
            max_iterations: 200,
            tolerance: 1e-5,
            history: 7,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.prior_sigma > 0.0) {
            problems.push(format!(
                "prior sigma must be positive, got {}",
                self.prior_sigma
            ));
        }
        if self.max_iterations == 0 {
            problems.push("max iterations must be positive".to_string());
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            problems.push(format!(
                "tolerance must be in (0, 1), got {}",
                self.tolerance
            ));
        }
        if self.history == 0 {
            problems.push("history size must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    fn inverse_variance(&self) -> f64 {
        1.0 / (self.prior_sigma * self.prior_sigma)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    observed: bool,
    deltas: Vec<(u32, f64)>,
    multiplicity: f64,
}

/// Compiled pseudo-likelihood terms of a set of training worlds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    n_formulas: usize,
    rows: Vec<Row>,
    /// Atoms no formula can influence; each contributes `log ½`.
    inert: f64,
    worlds: usize,
}

type RowKey = (bool, Vec<(u32, i64)>);

const ROW_CHUNK: usize = 256;

impl TrainingData {
    /// Grounds `kb` separately for each world's own objects.
    pub fn from_worlds(kb: &KnowledgeBase, worlds: &[World]) -> Result<Self> {
        let open = kb.schema.open_domain().is_some();
        let mut tables: HashMap<usize, GroundingTable> = HashMap::new();
        let mut keyed: Vec<(usize, Vec<bool>)> = Vec::with_capacity(worlds.len());
        for w in worlds {
            if open && w.objects.is_empty() {
                return Err(Error::Invalid(format!(
                    "world `{}` mentions no object",
                    w.id
                )));
            }
            let objects: Vec<&String> = w.objects.iter().collect();
            let universe = Universe::new(&kb.schema, &objects)?;
            let state = universe.state_of(w)?;
            if let std::collections::hash_map::Entry::Vacant(slot) = tables.entry(objects.len()) {
                slot.insert(GroundingTable::new(&kb.formulas, universe)?);
            }
            keyed.push((objects.len(), state));
        }
        let per_world: Vec<Vec<Option<RowKey>>> =
            par::map_slice(&keyed, |(k, state)| world_rows(&tables[k], state));
        Ok(Self::collect(kb.n_formulas(), per_world))
    }

    /// All worlds are truth assignments over `table`'s atoms.
    pub fn from_states(table: &GroundingTable, states: &[Vec<bool>]) -> Result<Self> {
        if let Some(s) = states.iter().find(|s| s.len() != table.n_atoms()) {
            return Err(Error::Invalid(format!(
                "state has {} atoms, table has {}",
                s.len(),
                table.n_atoms()
            )));
        }
        let per_world = par::map_slice(states, |s| world_rows(table, s));
        Ok(Self::collect(table.n_formulas(), per_world))
    }

    fn collect(n_formulas: usize, per_world: Vec<Vec<Option<RowKey>>>) -> Self {
        let worlds = per_world.len();
        let mut counts: BTreeMap<RowKey, u64> = BTreeMap::new();
        let mut inert = 0u64;
        for key in per_world.into_iter().flatten() {
            match key {
                Some(k) => *counts.entry(k).or_default() += 1,
                None => inert += 1,
            }
        }
        let rows = counts
            .into_iter()
            .map(|((observed, deltas), m)| Row {
                observed,
                deltas: deltas.into_iter().map(|(f, d)| (f, d as f64)).collect(),
                multiplicity: m as f64,
            })
            .collect();
        TrainingData {
            n_formulas,
            rows,
            inert: inert as f64,
            worlds,
        }
    }

    pub fn n_formulas(&self) -> usize {
        self.n_formulas
    }

    pub fn n_worlds(&self) -> usize {
        self.worlds
    }

    /// Number of distinct informative conditional terms.
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Total multiplicity of conditional terms that depend on the weights.
    pub fn informative_terms(&self) -> f64 {
        self.rows.iter().map(|r| r.multiplicity).sum()
    }
}

fn world_rows(table: &GroundingTable, state: &[bool]) -> Vec<Option<RowKey>> {
    let mut buf = Vec::new();
    (0..table.n_atoms())
        .map(|l| {
            table.delta_sparse(state, l, &mut buf);
            if buf.is_empty() {
                None
            } else {
                Some((state[l], buf.iter().map(|&(f, d)| (f as u32, d)).collect()))
            }
        })
        .collect()
}

/// `log(1 + e^s)` without overflow.
#[inline]
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

#[inline]
fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn value_and_gradient(
    weights: &[f64],
    data: &TrainingData,
    inverse_variance: f64,
    want_gradient: bool,
) -> (f64, Vec<f64>) {
    let n = data.n_formulas;
    let chunks = par::chunks(data.rows.len(), ROW_CHUNK);
    let parts: Vec<(f64, Vec<f64>)> = par::map_slice(&chunks, |range| {
        let mut value = 0.0;
        let mut grad = if want_gradient {
            vec![0.0; n]
        } else {
            Vec::new()
        };
        for row in &data.rows[range.clone()] {
            let s: f64 = row
                .deltas
                .iter()
                .map(|&(f, d)| weights[f as usize] * d)
                .sum();
            let x = if row.observed { 1.0 } else { 0.0 };
            value += row.multiplicity * (x * s - softplus(s));
            if want_gradient {
                let r = row.multiplicity * (x - logistic(s));
                for &(f, d) in &row.deltas {
                    grad[f as usize] += r * d;
                }
            }
        }
        (value, grad)
    });
    let mut value = -(data.inert * std::f64::consts::LN_2);
    let mut grad = vec![0.0; n];
    for (v, g) in parts {
        value += v;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    for (i, w) in weights.iter().enumerate() {
        value -= 0.5 * w * w * inverse_variance;
        if want_gradient {
            grad[i] -= w * inverse_variance;
        }
    }
    (value, grad)
}

/// Pseudo-log-likelihood of the data minus `Σ w_i² / (2σ²)`.
pub fn pseudo_log_likelihood(weights: &[f64], data: &TrainingData, prior_sigma: f64) -> f64 {
    value_and_gradient(weights, data, 1.0 / (prior_sigma * prior_sigma), false).0
}

/// Gradient of [`pseudo_log_likelihood`] with respect to the weights.
pub fn pll_gradient(weights: &[f64], data: &TrainingData, prior_sigma: f64) -> Vec<f64> {
    value_and_gradient(weights, data, 1.0 / (prior_sigma * prior_sigma), true).1
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Diagnostics {
    pub final_pll: f64,
    pub initial_pll: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedModel {
    pub kb: KnowledgeBase,
    pub diagnostics: Diagnostics,
}

/// Learns the free weights of `kb` starting from zero. Weights flagged as
/// fixed keep their value.
pub fn fit(
    kb: &KnowledgeBase,
    data: &TrainingData,
    config: &TrainingConfig,
) -> Result<LearnedModel> {
    let init: Vec<f64> = kb
        .weights
        .iter()
        .zip(&kb.fixed)
        .map(|(&w, &fixed)| if fixed { w } else { 0.0 })
        .collect();
    fit_from(kb, data, config, &init)
}

/// As [`fit`] but starting from `init` (one entry per formula).
pub fn fit_from(
    kb: &KnowledgeBase,
    data: &TrainingData,
    config: &TrainingConfig,
    init: &[f64],
) -> Result<LearnedModel> {
    config.validate()?;
    if data.n_worlds() == 0 {
        return Err(Error::Invalid("no training worlds".into()));
    }
    if data.n_formulas() != kb.n_formulas() || init.len() != kb.n_formulas() {
        return Err(Error::Invalid(
            "formula count mismatch between model and data".into(),
        ));
    }
    check_finite(init)?;
    let inv_var = config.inverse_variance();
    let free: Vec<usize> = (0..kb.n_formulas()).filter(|&i| !kb.fixed[i]).collect();
    let mut full = init.to_vec();
    let expand = |x: &[f64], full: &mut Vec<f64>| {
        for (&i, &v) in free.iter().zip(x) {
            full[i] = v;
        }
    };

    // A finite maximiser satisfies |w| ≲ ln(terms) + ln(σ²); far beyond that
    // the data are separable and the weights run off to infinity.
    let limit = data.informative_terms().max(1.0).ln() + 10.0;
    let x0: Vec<f64> = free.iter().map(|&i| init[i]).collect();
    let initial_pll = value_and_gradient(init, data, inv_var, false).0;
    let params = lbfgs::LbfgsParams {
        history: config.history,
        max_iterations: config.max_iterations,
        tolerance: config.tolerance,
        ..Default::default()
    };
    let mut scratch = full.clone();
    let objective = |x: &[f64]| {
        expand(x, &mut scratch);
        let (v, g) = value_and_gradient(&scratch, data, inv_var, true);
        (-v, free.iter().map(|&i| -g[i]).collect())
    };
    let mut monitor = |x: &[f64], value: f64| -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Divergence("objective became non-finite".into()));
        }
        if let Some((k, w)) = x.iter().enumerate().find(|(_, w)| w.abs() > limit) {
            return Err(Error::Divergence(format!(
                "weight of formula {} reached {w:.3} (limit {limit:.3}); the data are \
                 separable for this rule set, use a finite prior sigma",
                free[k]
            )));
        }
        Ok(())
    };
    let min = lbfgs::minimize(objective, x0, &params, &mut monitor)?;
    expand(&min.x, &mut full);
    let mut learned = kb.clone();
    learned.weights = full;
    let gradient_norm = min.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(LearnedModel {
        kb: learned,
        diagnostics: Diagnostics {
            final_pll: -min.value,
            initial_pll,
            iterations: min.iterations,
            evaluations: min.evaluations,
            gradient_norm,
            status: min.status,
        },
    })
}

#[cfg(test)]
mod tests;
