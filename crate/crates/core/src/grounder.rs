//! Eager grounding of implication formulas and per-world feature counts.
//!
//! A grounding of `b_1 ∧ … ∧ b_k ⇒ h` is true when some body atom is false
//! or the head's truth matches its polarity. The feature count of a formula
//! in a world is the number of its true groundings; all groundings share the
//! formula's weight.

use crate::error::{Error, Result};
use crate::logic::{Formula, Schema, Term, Universe};

/// Upper bound on the number of ground formulas a table may hold.
pub const MAX_GROUNDINGS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundFormula {
    pub parent: usize,
    pub body: Vec<usize>,
    pub head: usize,
    pub head_positive: bool,
}

impl GroundFormula {
    #[inline]
    pub fn is_true(&self, state: &[bool]) -> bool {
        !self.body.iter().all(|&a| state[a]) || state[self.head] == self.head_positive
    }

    /// Truth with atom `atom` forced to `value`.
    #[inline]
    fn is_true_with(&self, state: &[bool], atom: usize, value: bool) -> bool {
        let get = |a: usize| if a == atom { value } else { state[a] };
        !self.body.iter().all(|&a| get(a)) || get(self.head) == self.head_positive
    }

    /// `truth(atom = true) - truth(atom = false)`.
    #[inline]
    pub fn delta(&self, state: &[bool], atom: usize) -> i64 {
        self.is_true_with(state, atom, true) as i64 - self.is_true_with(state, atom, false) as i64
    }
}

#[derive(Debug, Clone)]
pub struct GroundingTable {
    universe: Universe,
    groundings: Vec<Vec<GroundFormula>>,
    /// For each ground atom, the `(formula, grounding)` pairs mentioning it,
    /// sorted and without duplicates.
    adjacency: Vec<Vec<(u32, u32)>>,
}

/// Grounds `formulas` over `schema` with `objects` bound to the open domain.
pub fn ground<S: AsRef<str>>(
    formulas: &[Formula],
    schema: &Schema,
    objects: &[S],
) -> Result<GroundingTable> {
    GroundingTable::new(formulas, Universe::new(schema, objects)?)
}

impl GroundingTable {
    pub fn new(formulas: &[Formula], universe: Universe) -> Result<Self> {
        let mut total: u128 = 0;
        for f in formulas {
            let mut count: u128 = 1;
            for v in &f.variables {
                let n = universe.constants(v.domain).len();
                if n == 0 {
                    return Err(Error::EmptyDomain {
                        variable: v.name.clone(),
                        domain: universe.schema.domains[v.domain].name.clone(),
                    });
                }
                count *= n as u128;
            }
            total += count;
            if total > MAX_GROUNDINGS as u128 {
                return Err(Error::TooManyGroundings {
                    count: total,
                    limit: MAX_GROUNDINGS,
                });
            }
        }

        let mut groundings = Vec::with_capacity(formulas.len());
        for (fi, f) in formulas.iter().enumerate() {
            groundings.push(ground_one(fi, f, &universe));
        }

        let mut adjacency: Vec<Vec<(u32, u32)>> = vec![Vec::new(); universe.n_atoms()];
        for (fi, gs) in groundings.iter().enumerate() {
            for (gi, g) in gs.iter().enumerate() {
                let key = (fi as u32, gi as u32);
                for &a in g.body.iter().chain(std::iter::once(&g.head)) {
                    if adjacency[a].last() != Some(&key) {
                        adjacency[a].push(key);
                    }
                }
            }
        }
        Ok(GroundingTable {
            universe,
            groundings,
            adjacency,
        })
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn n_atoms(&self) -> usize {
        self.universe.n_atoms()
    }

    pub fn n_formulas(&self) -> usize {
        self.groundings.len()
    }

    pub fn groundings(&self, formula: usize) -> &[GroundFormula] {
        &self.groundings[formula]
    }

    pub fn n_groundings(&self) -> usize {
        self.groundings.iter().map(Vec::len).sum()
    }

    /// Ground formulas mentioning `atom`, as `(formula, grounding)` indices.
    pub fn adjacent(&self, atom: usize) -> &[(u32, u32)] {
        &self.adjacency[atom]
    }

    fn grounding(&self, key: (u32, u32)) -> &GroundFormula {
        &self.groundings[key.0 as usize][key.1 as usize]
    }

    /// Number of true groundings of formula `formula` in `state`.
    pub fn feature_count(&self, formula: usize, state: &[bool]) -> u64 {
        self.groundings[formula]
            .iter()
            .filter(|g| g.is_true(state))
            .count() as u64
    }

    pub fn feature_counts(&self, state: &[bool]) -> Vec<u64> {
        (0..self.n_formulas())
            .map(|f| self.feature_count(f, state))
            .collect()
    }

    /// Per-formula `f_i(x | atom=1) - f_i(x | atom=0)`.
    pub fn delta_counts(&self, state: &[bool], atom: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.n_formulas()];
        for &key in &self.adjacency[atom] {
            out[key.0 as usize] += self.grounding(key).delta(state, atom);
        }
        out
    }

    /// Sparse form of [`GroundingTable::delta_counts`]: nonzero entries in
    /// formula order, appended to `out` after clearing it.
    pub fn delta_sparse(&self, state: &[bool], atom: usize, out: &mut Vec<(usize, i64)>) {
        out.clear();
        for &key in &self.adjacency[atom] {
            let d = self.grounding(key).delta(state, atom);
            if d == 0 {
                continue;
            }
            let f = key.0 as usize;
            match out.last_mut() {
                Some((last, acc)) if *last == f => *acc += d,
                _ => out.push((f, d)),
            }
        }
        out.retain(|&(_, d)| d != 0);
    }

    /// `Σ_i w_i · delta_i(atom)`: the log-odds of `atom` given the rest.
    #[inline]
    pub fn weighted_delta(&self, weights: &[f64], state: &[bool], atom: usize) -> f64 {
        let mut s = 0.0;
        for &key in &self.adjacency[atom] {
            let d = self.grounding(key).delta(state, atom);
            if d != 0 {
                s += weights[key.0 as usize] * d as f64;
            }
        }
        s
    }
}

fn ground_one(parent: usize, f: &Formula, universe: &Universe) -> Vec<GroundFormula> {
    let sizes: Vec<usize> = f
        .variables
        .iter()
        .map(|v| universe.constants(v.domain).len())
        .collect();
    let total: usize = sizes.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut assignment = vec![0usize; sizes.len()];
    let mut args = Vec::new();
    let mut bind = |atom: &crate::logic::Atom, assignment: &[usize]| {
        args.clear();
        args.extend(atom.args.iter().map(|t| match *t {
            Term::Var(v) => assignment[v],
            Term::Const(c) => c,
        }));
        universe.atom_index(atom.predicate, &args)
    };
    for _ in 0..total {
        let body = f.body.iter().map(|a| bind(a, &assignment)).collect();
        let head = bind(&f.head, &assignment);
        out.push(GroundFormula {
            parent,
            body,
            head,
            head_positive: f.head_positive,
        });
        // odometer, last variable fastest
        for k in (0..sizes.len()).rev() {
            assignment[k] += 1;
            if assignment[k] < sizes[k] {
                break;
            }
            assignment[k] = 0;
        }
    }
    out
}
