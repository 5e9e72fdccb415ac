//! Training corpora: ingestion with an object-level train/test split, the
//! questionnaire-profile schema check, and synthetic worlds drawn exactly from a
//! known model.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exact;
use crate::grounder::GroundingTable;
use crate::logic::{
    harvest_objects, parse_rules, parse_schema, parse_worlds, Schema, Universe, World,
};
use crate::model::KnowledgeBase;
use crate::par;
use crate::rng::derive_seed;

/// The hand-written eight-object corpus in the questionnaire schema.
pub const FIXTURE_SCHEMA: &str = include_str!("../fixtures/questionnaire.kbs");
pub const FIXTURE_RULES: &str = include_str!("../fixtures/questionnaire.kbr");
pub const FIXTURE_WORLDS: &str = include_str!("../fixtures/questionnaire.kbw");
pub const FIXTURE_CUP_EVIDENCE: &str = include_str!("../fixtures/cup_evidence.kbw");

pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Any schema.
    Generic,
    /// Domain sizes and predicates of the affordance questionnaire data.
    Questionnaire,
}

/// Minimum domain cardinalities of the questionnaire profile.
pub const QUESTIONNAIRE_DOMAINS: [(&str, usize); 7] = [
    ("shape", 4),
    ("texture", 4),
    ("material", 4),
    ("category", 8),
    ("location", 7),
    ("affordance", 14),
    ("region", 3),
];

/// Predicates of the questionnaire profile and their label domain.
pub const QUESTIONNAIRE_PREDICATES: [(&str, &str); 7] = [
    ("hasShape", "shape"),
    ("hasTexture", "texture"),
    ("hasMaterial", "material"),
    ("canBeFound", "location"),
    ("hasAffordance", "affordance"),
    ("hasCategory", "category"),
    ("graspRegion", "region"),
];

/// Checks `schema` and `worlds` against `profile`, collecting every problem.
pub fn validate_profile(schema: &Schema, worlds: &[World], profile: Profile) -> Result<()> {
    if profile == Profile::Generic {
        return Ok(());
    }
    let mut problems = Vec::new();
    let open = schema.open_domain();
    if open.is_none() {
        problems.push("schema has no open object domain (`domain object = *`)".to_string());
    }
    for (name, min) in QUESTIONNAIRE_DOMAINS {
        match schema.domain(name) {
            None => problems.push(format!("missing domain `{name}`")),
            Some(d) if d.open => problems.push(format!("domain `{name}` must be closed")),
            Some(d) if d.constants.len() < min => problems.push(format!(
                "domain `{name}` has {} values, at least {min} required",
                d.constants.len()
            )),
            Some(_) => {}
        }
    }
    for (name, label) in QUESTIONNAIRE_PREDICATES {
        let Some(p) = schema.predicate_index(name) else {
            problems.push(format!("missing predicate `{name}`"));
            continue;
        };
        let args = &schema.predicates[p].args;
        let ok =
            args.len() == 2 && Some(args[0]) == open && Some(args[1]) == schema.domain_index(label);
        if !ok {
            problems.push(format!(
                "predicate `{name}` must be `{name}(object, {label})`"
            ));
        }
    }
    for w in worlds {
        if w.objects.len() != 1 {
            problems.push(format!(
                "world `{}` describes {} objects, expected exactly one",
                w.id,
                w.objects.len()
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// The object a world belongs to for splitting: its smallest object, or
/// its id when it names no object.
pub fn world_key(world: &World) -> &str {
    world.objects.iter().next().unwrap_or(&world.id)
}

fn split_rank(seed: u64, key: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    h.finalize().into()
}

/// Keys sent to the test split: the `round((1 - train_ratio) · n)` keys
/// with the smallest `sha256(seed, key)`.
pub fn test_keys<'a>(
    keys: impl IntoIterator<Item = &'a str>,
    train_ratio: f64,
    seed: u64,
) -> BTreeSet<String> {
    let unique: BTreeSet<&str> = keys.into_iter().collect();
    let mut ranked: Vec<([u8; 32], &str)> = unique
        .into_iter()
        .map(|k| (split_rank(seed, k), k))
        .collect();
    ranked.sort();
    let n_test = ((1.0 - train_ratio) * ranked.len() as f64).round() as usize;
    ranked
        .into_iter()
        .take(n_test)
        .map(|(_, k)| k.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub schema: Schema,
    pub worlds: Vec<World>,
    pub split: Vec<Split>,
    pub train_ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub train_ratio: f64,
    pub train_objects: Vec<String>,
    pub test_objects: Vec<String>,
    pub worlds: BTreeMap<String, Split>,
}

impl Corpus {
    pub fn new(schema: Schema, worlds: Vec<World>, train_ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_ratio) {
            return Err(Error::Validation(vec![format!(
                "train ratio must be in [0, 1], got {train_ratio}"
            )]));
        }
        let test = test_keys(worlds.iter().map(world_key), train_ratio, seed);
        let split = worlds
            .iter()
            .map(|w| {
                if test.contains(world_key(w)) {
                    Split::Test
                } else {
                    Split::Train
                }
            })
            .collect();
        Ok(Corpus {
            schema,
            worlds,
            split,
            train_ratio,
            seed,
        })
    }

    fn part(&self, which: Split) -> Vec<World> {
        self.worlds
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == which)
            .map(|(w, _)| w.clone())
            .collect()
    }

    pub fn train(&self) -> Vec<World> {
        self.part(Split::Train)
    }

    pub fn test(&self) -> Vec<World> {
        self.part(Split::Test)
    }

    pub fn objects(&self) -> Vec<String> {
        harvest_objects(&self.worlds)
    }

    pub fn manifest(&self) -> CorpusManifest {
        let mut train = BTreeSet::new();
        let mut test = BTreeSet::new();
        for (w, s) in self.worlds.iter().zip(&self.split) {
            let set = if *s == Split::Test {
                &mut test
            } else {
                &mut train
            };
            set.insert(world_key(w).to_string());
        }
        CorpusManifest {
            seed: self.seed,
            train_ratio: self.train_ratio,
            train_objects: train.into_iter().collect(),
            test_objects: test.into_iter().collect(),
            worlds: self
                .worlds
                .iter()
                .zip(&self.split)
                .map(|(w, s)| (w.id.clone(), *s))
                .collect(),
        }
    }
}

/// Parses and validates a corpus and assigns its split.
pub fn ingest(
    schema_text: &str,
    worlds_text: &str,
    train_ratio: f64,
    seed: u64,
    profile: Profile,
) -> Result<Corpus> {
    let schema = parse_schema(schema_text)?;
    let worlds = parse_worlds(worlds_text, &schema)?;
    validate_profile(&schema, &worlds, profile)?;
    Corpus::new(schema, worlds, train_ratio, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthConfig {
    pub objects: usize,
    pub worlds_per_object: usize,
    pub seed: u64,
    pub train_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            objects: 10,
            worlds_per_object: 1,
            seed: 0,
            train_ratio: DEFAULT_TRAIN_RATIO,
        }
    }
}

/// Draws `worlds_per_object` independent worlds for each of `objects`
/// fresh objects (`obj0`, `obj1`, ... zero-padded) from the exact joint
/// distribution of `kb` over that object's atoms. Without an open domain
/// each block is simply a batch of worlds over the closed universe.
pub fn synthesize(kb: &KnowledgeBase, config: &SynthConfig) -> Result<Corpus> {
    kb.check_weights()?;
    let open = kb.schema.open_domain().is_some();
    let width = config.objects.saturating_sub(1).to_string().len();
    let names: Vec<String> = (0..config.objects)
        .map(|i| format!("obj{i:0width$}"))
        .collect();
    let template: Vec<&str> = if open { vec!["obj"] } else { Vec::new() };
    let universe = Universe::new(&kb.schema, &template)?;
    let table = GroundingTable::new(&kb.formulas, universe)?;
    let n = table.n_atoms();
    if n > exact::MAX_FREE_ATOMS {
        return Err(Error::CapExceeded {
            free: n,
            cap: exact::MAX_FREE_ATOMS,
        });
    }
    let free: Vec<usize> = (0..n).collect();
    let evidence = vec![false; n];
    let blocks: Vec<Result<Vec<World>>> = par::map_indexed(config.objects, |i| {
        let masks = exact::sample(
            &kb.weights,
            &table,
            &free,
            &evidence,
            config.worlds_per_object,
            derive_seed(config.seed, i as u64),
        )?;
        let wwidth = config.worlds_per_object.saturating_sub(1).to_string().len();
        Ok(masks
            .into_iter()
            .enumerate()
            .map(|(k, mask)| {
                let mut w = World::new(format!("{}_w{k:0wwidth$}", names[i]));
                if open {
                    w.objects.insert(names[i].clone());
                }
                for a in 0..n {
                    if mask >> a & 1 == 1 {
                        let mut atom = table.universe().ground_atom(a);
                        if open {
                            rename_object(&kb.schema, &mut atom, &names[i]);
                        }
                        w.atoms.insert(atom);
                    }
                }
                w
            })
            .collect())
    });
    let mut worlds = Vec::with_capacity(config.objects * config.worlds_per_object);
    for b in blocks {
        worlds.extend(b?);
    }
    Corpus::new(kb.schema.clone(), worlds, config.train_ratio, config.seed)
}

fn rename_object(schema: &Schema, atom: &mut crate::logic::GroundAtom, name: &str) {
    let open = schema.open_domain();
    for (arg, &d) in atom
        .args
        .iter_mut()
        .zip(&schema.predicates[atom.predicate].args)
    {
        if Some(d) == open {
            *arg = name.to_string();
        }
    }
}

/// `P(hasAffordance(o, affordance) | hasCategory(o, category))` for a single
/// object under `kb`, every other category of `o` false and every remaining
/// atom summed out exactly.
pub fn affordance_given_category(
    kb: &KnowledgeBase,
    category: &str,
    affordance: &str,
) -> Result<f64> {
    let universe = Universe::new(&kb.schema, &["o"])?;
    let lookup = |pred: &str| {
        kb.schema
            .predicate_index(pred)
            .ok_or_else(|| Error::Invalid(format!("schema lacks `{pred}`")))
    };
    let hc = lookup("hasCategory")?;
    let ha = lookup("hasAffordance")?;
    let target = universe
        .lookup(&crate::logic::GroundAtom {
            predicate: ha,
            args: vec!["o".into(), affordance.into()],
        })
        .ok_or_else(|| Error::Invalid(format!("unknown affordance `{affordance}`")))?;
    let given = universe
        .lookup(&crate::logic::GroundAtom {
            predicate: hc,
            args: vec!["o".into(), category.into()],
        })
        .ok_or_else(|| Error::Invalid(format!("unknown category `{category}`")))?;
    let clamped: BTreeSet<usize> = universe.atoms_of(hc, Some(0)).into_iter().collect();
    let mut evidence = vec![false; universe.n_atoms()];
    evidence[given] = true;
    let free: Vec<usize> = (0..universe.n_atoms())
        .filter(|a| !clamped.contains(a))
        .collect();
    let table = GroundingTable::new(&kb.formulas, universe)?;
    Ok(exact::enumerate(&kb.weights, &table, &free, &evidence)?.marginal(target))
}

/// Schema of the Table I contrast model.
pub const CONTRAST_SCHEMA: &str = "\
domain object = *
domain category = {container, electronics}
domain affordance = {pour, stack, hand_over}
domain region = {1, 2, 3}
predicate hasCategory(object, category)
predicate hasAffordance(object, affordance)
predicate graspRegion(object, region)
";

/// Rules of the Table I contrast model; the first two weights are
/// calibrated by [`table1_contrast`].
pub const CONTRAST_RULES: &str = "\
hasCategory(o, container) => hasAffordance(o, pour)
hasCategory(o, electronics) => hasAffordance(o, pour)
hasCategory(o, container) => hasAffordance(o, stack) @ 0.5
hasCategory(o, electronics) => hasAffordance(o, hand_over) @ 1.5
hasAffordance(o, stack) => graspRegion(o, 1) @ 2.0
hasAffordance(o, pour) => graspRegion(o, 2) @ 2.0
hasAffordance(o, hand_over) => graspRegion(o, 3) @ 2.0
hasAffordance(o, a) @ -1.0
graspRegion(o, r) @ -1.0
hasCategory(o, container) => !hasCategory(o, electronics) @ 2.0
";

fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Ground-truth model in which a container affords pouring with
/// probability `p_container` and an electronic device with probability
/// `p_electronics` (Table I uses 0.67 and 0.07).
pub fn table1_contrast(p_container: f64, p_electronics: f64) -> Result<KnowledgeBase> {
    for p in [p_container, p_electronics] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Invalid(format!("probability {p} outside (0, 1)")));
        }
    }
    let schema = parse_schema(CONTRAST_SCHEMA)?;
    let rules = parse_rules(CONTRAST_RULES, &schema)?;
    let mut kb = KnowledgeBase::from_rules(schema, rules);
    // each conditional depends on its own weight only
    for (i, cat, p) in [
        (0, "container", p_container),
        (1, "electronics", p_electronics),
    ] {
        let w = bisect(-30.0, 30.0, p, |w| {
            let mut k = kb.clone();
            k.weights[i] = w;
            affordance_given_category(&k, cat, "pour")
        })?;
        kb.weights[i] = w;
        kb.fixed[i] = true;
    }
    Ok(kb)
}
