//! Exact inference by enumerating every assignment of the free atoms.
//!
//! Used as the correctness reference for the sampler and learner and as an
//! exact sampler for synthetic corpora. The assignment space is split into
//! a fixed number of chunks (a function of the free-atom count only); each
//! chunk is walked in Gray-code order so a step costs one incremental
//! log-weight update. Partial sums are combined in chunk order, so results
//! are bit-identical whatever the number of worker threads.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::grounder::GroundingTable;
use crate::model::check_finite;
use crate::par;
use crate::rng;

/// Hard cap on the number of free atoms.
pub const MAX_FREE_ATOMS: usize = 25;
/// Largest free-atom count for which the full joint table may be requested.
pub const MAX_JOINT_ATOMS: usize = 20;

const LOW_BITS: usize = 14;

/// `Σ_i w_i · f_i(x)`, the unnormalised log-probability of `state`.
pub fn log_joint(weights: &[f64], table: &GroundingTable, state: &[bool]) -> f64 {
    table
        .feature_counts(state)
        .iter()
        .zip(weights)
        .map(|(&n, &w)| w * n as f64)
        .sum()
}

#[derive(Debug, Clone, Default)]
pub struct ExactQuery {
    /// Atoms summed over; every other atom takes its value from `evidence`.
    pub free: Vec<usize>,
    /// Full state vector; entries for free atoms are ignored.
    pub evidence: Vec<bool>,
    /// Conjunctions of atoms whose probability should be reported.
    pub events: Vec<Vec<usize>>,
    /// Keep the normalised joint over the free atoms (bit `j` of the index
    /// is the value of `free[j]`).
    pub keep_joint: bool,
}

impl ExactQuery {
    pub fn new(free: Vec<usize>, evidence: Vec<bool>) -> Self {
        ExactQuery {
            free,
            evidence,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    /// Log of the normaliser over the free atoms given the evidence.
    pub log_z: f64,
    pub free: Vec<usize>,
    /// Marginal of every atom in the table; clamped atoms are 0 or 1.
    pub marginals: Vec<f64>,
    /// Probabilities of the requested events, in request order.
    pub events: Vec<f64>,
    pub joint: Option<Vec<f64>>,
}

impl ExactResult {
    pub fn marginal(&self, atom: usize) -> f64 {
        self.marginals[atom]
    }
}

/// Exact marginals of `free` given `evidence`.
pub fn enumerate(
    weights: &[f64],
    table: &GroundingTable,
    free: &[usize],
    evidence: &[bool],
) -> Result<ExactResult> {
    enumerate_query(
        weights,
        table,
        &ExactQuery::new(free.to_vec(), evidence.to_vec()),
    )
}

/// Running `log Σ exp` with per-slot accumulators sharing one scale.
struct Accumulator {
    max: f64,
    total: f64,
    slots: Vec<f64>,
}

impl Accumulator {
    fn new(slots: usize) -> Self {
        Accumulator {
            max: f64::NEG_INFINITY,
            total: 0.0,
            slots: vec![0.0; slots],
        }
    }

    /// Adds `exp(lj)` to the total; returns the scaled weight so the caller
    /// can add it to whichever slots apply.
    #[inline]
    fn add(&mut self, lj: f64) -> f64 {
        if lj > self.max {
            if self.max > f64::NEG_INFINITY {
                let r = (self.max - lj).exp();
                self.total *= r;
                self.slots.iter_mut().for_each(|s| *s *= r);
            }
            self.max = lj;
        }
        let w = (lj - self.max).exp();
        self.total += w;
        w
    }

    fn merge(parts: Vec<Accumulator>, slots: usize) -> Accumulator {
        let max = parts
            .iter()
            .map(|p| p.max)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = Accumulator::new(slots);
        out.max = max;
        for p in parts {
            if p.max == f64::NEG_INFINITY {
                continue;
            }
            let r = (p.max - max).exp();
            out.total += p.total * r;
            for (o, s) in out.slots.iter_mut().zip(&p.slots) {
                *o += s * r;
            }
        }
        out
    }
}

struct Walk<'a> {
    weights: &'a [f64],
    table: &'a GroundingTable,
    free: &'a [usize],
    evidence: &'a [bool],
    low: usize,
}

impl Walk<'_> {
    fn chunks(&self) -> usize {
        1 << (self.free.len() - self.low)
    }

    /// Visits every assignment of chunk `chunk` as `(index, log weight, state)`.
    fn run(&self, chunk: usize, mut visit: impl FnMut(u64, f64, &[bool])) {
        let mut state = self.evidence.to_vec();
        let base = (chunk as u64) << self.low;
        for (j, &a) in self.free.iter().enumerate() {
            state[a] = (base >> j) & 1 == 1;
        }
        let mut lj = log_joint(self.weights, self.table, &state);
        let mut index = base;
        visit(index, lj, &state);
        for i in 1u64..(1u64 << self.low) {
            let bit = i.trailing_zeros() as usize;
            let atom = self.free[bit];
            let d = self.table.weighted_delta(self.weights, &state, atom);
            if state[atom] {
                lj -= d;
            } else {
                lj += d;
            }
            state[atom] = !state[atom];
            index ^= 1 << bit;
            visit(index, lj, &state);
        }
    }
}

fn validate(
    weights: &[f64],
    table: &GroundingTable,
    free: &[usize],
    evidence: &[bool],
) -> Result<()> {
    check_finite(weights)?;
    if weights.len() != table.n_formulas() {
        return Err(Error::Invalid(format!(
            "{} weights for {} formulas",
            weights.len(),
            table.n_formulas()
        )));
    }
    if free.len() > MAX_FREE_ATOMS {
        return Err(Error::CapExceeded {
            free: free.len(),
            cap: MAX_FREE_ATOMS,
        });
    }
    if evidence.len() != table.n_atoms() {
        return Err(Error::Invalid(
            "evidence length differs from atom count".into(),
        ));
    }
    let mut seen = vec![false; table.n_atoms()];
    for &a in free {
        if a >= table.n_atoms() || std::mem::replace(&mut seen[a], true) {
            return Err(Error::Invalid(format!("bad or repeated free atom {a}")));
        }
    }
    Ok(())
}

pub fn enumerate_query(
    weights: &[f64],
    table: &GroundingTable,
    query: &ExactQuery,
) -> Result<ExactResult> {
    let free = &query.free;
    validate(weights, table, free, &query.evidence)?;
    if query.keep_joint && free.len() > MAX_JOINT_ATOMS {
        return Err(Error::CapExceeded {
            free: free.len(),
            cap: MAX_JOINT_ATOMS,
        });
    }
    let k = free.len();
    let n_events = query.events.len();
    let walk = Walk {
        weights,
        table,
        free,
        evidence: &query.evidence,
        low: k.min(LOW_BITS),
    };
    let parts: Vec<(Accumulator, Vec<f64>)> = par::map_indexed(walk.chunks(), |c| {
        let mut acc = Accumulator::new(k + n_events);
        let mut logs = Vec::new();
        walk.run(c, |index, lj, state| {
            let w = acc.add(lj);
            for j in 0..k {
                if (index >> j) & 1 == 1 {
                    acc.slots[j] += w;
                }
            }
            for (e, atoms) in query.events.iter().enumerate() {
                if atoms.iter().all(|&a| state[a]) {
                    acc.slots[k + e] += w;
                }
            }
            if query.keep_joint {
                logs.push((index, lj));
            }
        });
        let mut ordered = Vec::new();
        if query.keep_joint {
            ordered = vec![0.0; logs.len()];
            let base = (c as u64) << walk.low;
            for (index, lj) in logs {
                ordered[(index - base) as usize] = lj;
            }
        }
        (acc, ordered)
    });
    let (accs, logs): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let acc = Accumulator::merge(accs, k + n_events);
    let log_z = acc.max + acc.total.ln();
    let mut marginals: Vec<f64> = query
        .evidence
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    for (j, &a) in free.iter().enumerate() {
        marginals[a] = (acc.slots[j] / acc.total).clamp(0.0, 1.0);
    }
    let events = acc.slots[k..]
        .iter()
        .map(|s| (s / acc.total).clamp(0.0, 1.0))
        .collect();
    let joint = query.keep_joint.then(|| {
        logs.into_iter()
            .flatten()
            .map(|lj| (lj - log_z).exp())
            .collect()
    });
    Ok(ExactResult {
        log_z,
        free: free.clone(),
        marginals,
        events,
        joint,
    })
}

/// Draws `n` independent exact samples of the free atoms given `evidence`
/// by inverse-CDF over the enumeration order. Returns one bit mask per
/// sample (bit `j` = value of `free[j]`), in draw order.
pub fn sample(
    weights: &[f64],
    table: &GroundingTable,
    free: &[usize],
    evidence: &[bool],
    n: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    validate(weights, table, free, evidence)?;
    let walk = Walk {
        weights,
        table,
        free,
        evidence,
        low: free.len().min(LOW_BITS),
    };
    let chunk_mass: Vec<Accumulator> = par::map_indexed(walk.chunks(), |c| {
        let mut acc = Accumulator::new(0);
        walk.run(c, |_, lj, _| {
            acc.add(lj);
        });
        acc
    });
    let max = chunk_mass
        .iter()
        .map(|a| a.max)
        .fold(f64::NEG_INFINITY, f64::max);
    let mass: Vec<f64> = chunk_mass
        .iter()
        .map(|a| a.total * (a.max - max).exp())
        .collect();
    let total: f64 = mass.iter().sum();

    let mut rng = rng::rng(seed);
    let mut draws: Vec<(f64, usize)> = (0..n).map(|i| (rng.random::<f64>() * total, i)).collect();
    draws.sort_by(|a, b| a.0.total_cmp(&b.0));

    // assign draws to chunks by cumulative mass
    let mut per_chunk: Vec<Vec<(f64, usize)>> = vec![Vec::new(); mass.len()];
    let mut cum = 0.0;
    let mut c = 0;
    for (t, i) in draws {
        while c + 1 < mass.len() && t >= cum + mass[c] {
            cum += mass[c];
            c += 1;
        }
        per_chunk[c].push((t - cum, i));
    }

    let located: Vec<Vec<(usize, u64)>> = par::map_indexed(mass.len(), |c| {
        let targets = &per_chunk[c];
        let mut out = Vec::with_capacity(targets.len());
        if targets.is_empty() {
            return out;
        }
        let mut next = 0;
        let mut cum = 0.0;
        let mut last = 0;
        walk.run(c, |index, lj, _| {
            last = index;
            cum += (lj - max).exp();
            while next < targets.len() && targets[next].0 < cum {
                out.push((targets[next].1, index));
                next += 1;
            }
        });
        // rounding can leave the last few targets just past the end
        while next < targets.len() {
            out.push((targets[next].1, last));
            next += 1;
        }
        out
    });
    let mut samples = vec![0u64; n];
    for (i, index) in located.into_iter().flatten() {
        samples[i] = index;
    }
    Ok(samples)
}
