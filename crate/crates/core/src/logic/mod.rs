//! Function-free first-order language: domains, predicates, implication
//! formulas and evidence worlds, with the textual `.kbs`/`.kbr`/`.kbw`
//! formats.
//!
//! A schema may declare one *open* domain (`domain object = *`). Its
//! constants are not listed in the schema; they are harvested from worlds
//! and bound when a [`Universe`] is built for a concrete set of objects.

mod parse;
mod write;

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

pub use parse::{harvest_objects, parse_rules, parse_schema, parse_worlds};
pub use write::{write_rules, write_schema, write_worlds};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub name: String,
    /// Declared constants; always empty for an open domain.
    pub constants: Vec<String>,
    pub open: bool,
}

impl Domain {
    pub fn index_of(&self, constant: &str) -> Option<usize> {
        self.constants.iter().position(|c| c == constant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub name: String,
    /// Domain index of every argument position.
    pub args: Vec<usize>,
}

impl Predicate {
    pub fn arity(&self) -> usize {
        self.args.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    pub domains: Vec<Domain>,
    pub predicates: Vec<Predicate>,
}

impl Schema {
    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name == name)
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|p| p.name == name)
    }

    pub fn domain(&self, name: &str) -> Option<&Domain> {
        self.domains.iter().find(|d| d.name == name)
    }

    /// Index of the open (object) domain, if the schema declares one.
    pub fn open_domain(&self) -> Option<usize> {
        self.domains.iter().position(|d| d.open)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    /// Index into [`Formula::variables`].
    Var(usize),
    /// Index into the argument domain's constant list.
    Const(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub predicate: usize,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Variable {
    pub name: String,
    pub domain: usize,
}

/// `body_1 ∧ … ∧ body_k ⇒ [¬]head`, variables implicitly universally
/// quantified and typed by the argument positions they occupy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Formula {
    pub body: Vec<Atom>,
    pub head: Atom,
    /// `false` when the head carries the `!` prefix.
    pub head_positive: bool,
    /// In order of first appearance, body before head.
    pub variables: Vec<Variable>,
}

/// A parsed rule line; `weight` is present when the rule fixes it with `@ w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub formula: Formula,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFormula {
    pub formula: Formula,
    pub weight: f64,
}

/// A ground atom named by its constants, independent of any universe.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pub predicate: usize,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn display<'a>(&'a self, schema: &'a Schema) -> impl fmt::Display + 'a {
        DisplayGround { atom: self, schema }
    }
}

struct DisplayGround<'a> {
    atom: &'a GroundAtom,
    schema: &'a Schema,
}

impl fmt::Display for DisplayGround<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({})",
            self.schema.predicates[self.atom.predicate].name,
            self.atom.args.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct World {
    pub id: String,
    pub atoms: BTreeSet<GroundAtom>,
    /// Constants of the open domain this world talks about.
    pub objects: BTreeSet<String>,
    pub closed_world: bool,
}

impl World {
    pub fn new(id: impl Into<String>) -> Self {
        World {
            id: id.into(),
            atoms: BTreeSet::new(),
            objects: BTreeSet::new(),
            closed_world: true,
        }
    }
}

/// A schema with every domain bound to a concrete constant list, plus the
/// bijection between ground atoms and `0..n_atoms`.
///
/// Atoms are laid out predicate by predicate in schema order; within a
/// predicate the argument tuple is a mixed-radix number, first argument
/// most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    pub schema: Schema,
    constants: Vec<Vec<String>>,
    offsets: Vec<usize>,
    n_atoms: usize,
}

impl Universe {
    pub fn new<S: AsRef<str>>(schema: &Schema, objects: &[S]) -> Result<Self> {
        let open = schema.open_domain();
        if open.is_none() && !objects.is_empty() {
            return Err(Error::Invalid(
                "objects supplied but the schema has no open domain".into(),
            ));
        }
        let constants: Vec<Vec<String>> = schema
            .domains
            .iter()
            .enumerate()
            .map(|(i, d)| {
                if Some(i) == open {
                    objects.iter().map(|o| o.as_ref().to_string()).collect()
                } else {
                    d.constants.clone()
                }
            })
            .collect();
        if let Some(i) = open {
            let unique: BTreeSet<&String> = constants[i].iter().collect();
            if unique.len() != constants[i].len() {
                return Err(Error::Invalid("duplicate object constant".into()));
            }
        }
        let mut offsets = Vec::with_capacity(schema.predicates.len());
        let mut n_atoms = 0usize;
        for p in &schema.predicates {
            offsets.push(n_atoms);
            let size = p
                .args
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(constants[d].len()))
                .ok_or_else(|| Error::Invalid("ground atom count overflows".into()))?;
            n_atoms = n_atoms
                .checked_add(size)
                .ok_or_else(|| Error::Invalid("ground atom count overflows".into()))?;
        }
        Ok(Universe {
            schema: schema.clone(),
            constants,
            offsets,
            n_atoms,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn constants(&self, domain: usize) -> &[String] {
        &self.constants[domain]
    }

    pub fn objects(&self) -> &[String] {
        match self.schema.open_domain() {
            Some(d) => &self.constants[d],
            None => &[],
        }
    }

    /// Index of `predicate(args)` where `args` are constant indices.
    pub fn atom_index(&self, predicate: usize, args: &[usize]) -> usize {
        let pred = &self.schema.predicates[predicate];
        debug_assert_eq!(pred.args.len(), args.len());
        let mut idx = 0usize;
        for (&d, &c) in pred.args.iter().zip(args) {
            debug_assert!(c < self.constants[d].len());
            idx = idx * self.constants[d].len() + c;
        }
        self.offsets[predicate] + idx
    }

    /// Inverse of [`Universe::atom_index`].
    pub fn decode(&self, index: usize) -> (usize, Vec<usize>) {
        assert!(index < self.n_atoms, "atom index out of range");
        let predicate = match self.offsets.binary_search(&index) {
            Ok(mut p) => {
                // skip zero-sized predicates sharing this offset
                while p + 1 < self.offsets.len() && self.offsets[p + 1] == index {
                    p += 1;
                }
                p
            }
            Err(p) => p - 1,
        };
        let pred = &self.schema.predicates[predicate];
        let mut rest = index - self.offsets[predicate];
        let mut args = vec![0; pred.args.len()];
        for (slot, &d) in args.iter_mut().zip(&pred.args).rev() {
            let n = self.constants[d].len();
            *slot = rest % n;
            rest /= n;
        }
        (predicate, args)
    }

    pub fn ground_atom(&self, index: usize) -> GroundAtom {
        let (predicate, args) = self.decode(index);
        let pred = &self.schema.predicates[predicate];
        GroundAtom {
            predicate,
            args: args
                .iter()
                .zip(&pred.args)
                .map(|(&c, &d)| self.constants[d][c].clone())
                .collect(),
        }
    }

    pub fn atom_name(&self, index: usize) -> String {
        self.ground_atom(index).display(&self.schema).to_string()
    }

    pub fn lookup(&self, atom: &GroundAtom) -> Option<usize> {
        let pred = self.schema.predicates.get(atom.predicate)?;
        if pred.args.len() != atom.args.len() {
            return None;
        }
        let mut idx = Vec::with_capacity(atom.args.len());
        for (name, &d) in atom.args.iter().zip(&pred.args) {
            idx.push(self.constants[d].iter().position(|c| c == name)?);
        }
        Some(self.atom_index(atom.predicate, &idx))
    }

    /// Truth assignment of `world` under the closed-world assumption.
    pub fn state_of(&self, world: &World) -> Result<Vec<bool>> {
        let mut state = vec![false; self.n_atoms];
        for atom in &world.atoms {
            let i = self.lookup(atom).ok_or_else(|| {
                Error::Invalid(format!(
                    "world `{}`: atom {} is outside the universe",
                    world.id,
                    atom.display(&self.schema)
                ))
            })?;
            state[i] = true;
        }
        Ok(state)
    }

    /// Every atom index of `predicate` whose open-domain arguments equal
    /// `object`.
    pub fn atoms_of(&self, predicate: usize, object: Option<usize>) -> Vec<usize> {
        let open = self.schema.open_domain();
        let pred = &self.schema.predicates[predicate];
        let size: usize = pred.args.iter().map(|&d| self.constants[d].len()).product();
        (0..size)
            .map(|k| self.offsets[predicate] + k)
            .filter(|&i| match object {
                None => true,
                Some(o) => {
                    let (_, args) = self.decode(i);
                    args.iter()
                        .zip(&pred.args)
                        .all(|(&c, &d)| Some(d) != open || c == o)
                }
            })
            .collect()
    }
}

/// Formats a formula in rule-file syntax.
pub fn formula_text(schema: &Schema, formula: &Formula) -> String {
    let atom = |a: &Atom| {
        let p = &schema.predicates[a.predicate];
        let args: Vec<String> = a
            .args
            .iter()
            .zip(&p.args)
            .map(|(t, &d)| match *t {
                Term::Var(v) => variable_text(&formula.variables[v].name, &schema.domains[d]),
                Term::Const(c) => schema.domains[d].constants[c].clone(),
            })
            .collect();
        format!("{}({})", p.name, args.join(", "))
    };
    let head = format!(
        "{}{}",
        if formula.head_positive { "" } else { "!" },
        atom(&formula.head)
    );
    if formula.body.is_empty() {
        head
    } else {
        let body: Vec<String> = formula.body.iter().map(atom).collect();
        format!("{} => {}", body.join(" ^ "), head)
    }
}

/// Variables that would not lex as variables on their own keep a `?`.
fn variable_text(name: &str, domain: &Domain) -> String {
    if parse::is_short_variable(name) && domain.index_of(name).is_none() {
        name.to_string()
    } else {
        format!("?{name}")
    }
}
