use super::*;
use crate::exact::{self, ExactQuery};
use crate::logic::{parse_rules, parse_schema, parse_worlds};

const CUP_SCHEMA: &str = "\
domain object = *
domain category = {container, tool}
domain affordance = {stack, pour, hand_over}
domain region = {1, 2, 3}
predicate hasCategory(object, category)
predicate hasAffordance(object, affordance)
predicate graspRegion(object, region)
";

const CUP_RULES: &str = "\
hasCategory(o, container) => hasAffordance(o, stack) @ 1.6
hasCategory(o, container) => hasAffordance(o, pour) @ 1.2
hasCategory(o, container) => hasAffordance(o, hand_over) @ 1.0
hasAffordance(o, stack) => graspRegion(o, 1) @ 3.0
hasAffordance(o, pour) => graspRegion(o, 2) @ 3.0
hasAffordance(o, hand_over) => graspRegion(o, 3) @ 3.0
graspRegion(o, r) @ -2.0
hasAffordance(o, a) @ -0.5
";

fn cup() -> (KnowledgeBase, World) {
    let schema = parse_schema(CUP_SCHEMA).unwrap();
    let rules = parse_rules(CUP_RULES, &schema).unwrap();
    let world = parse_worlds("world evidence\nhasCategory(cup1, container)\n", &schema)
        .unwrap()
        .remove(0);
    (KnowledgeBase::from_rules(schema, rules), world)
}

fn config(samples: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        samples,
        seed,
        ..Default::default()
    }
}

/// Exact P(hA ∧ gR) for every pair, in (affordance, region) order.
fn exact_pairs(kb: &KnowledgeBase, world: &World, object: &str) -> Vec<f64> {
    let universe = Universe::new(&kb.schema, &[object]).unwrap();
    let evidence = universe.state_of(world).unwrap();
    let a = label_atoms(
        &universe,
        binary_layout(&kb.schema, "hasAffordance").unwrap(),
        0,
    );
    let r = label_atoms(
        &universe,
        binary_layout(&kb.schema, "graspRegion").unwrap(),
        0,
    );
    let table = GroundingTable::new(&kb.formulas, universe).unwrap();
    let mut q = ExactQuery::new(a.iter().chain(&r).copied().collect(), evidence);
    q.events = a
        .iter()
        .flat_map(|&x| r.iter().map(move |&y| vec![x, y]))
        .collect();
    exact::enumerate_query(&kb.weights, &table, &q)
        .unwrap()
        .events
}

#[test]
fn cup_query_ranks_like_table_two() {
    let (kb, world) = cup();
    let result = query(&kb, &world, &QuerySpec::new("cup1"), &config(20_000, 3)).unwrap();
    let top: Vec<(&str, &str)> = result.pairs[..3]
        .iter()
        .map(|p| (p.affordance.as_str(), p.region.as_str()))
        .collect();
    assert_eq!(top, [("stack", "1"), ("pour", "2"), ("hand_over", "3")]);
    let sum: f64 = result.pairs.iter().map(|p| p.probability).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    let g = select_grasp(&result.pairs, None).unwrap();
    assert_eq!((g.affordance.as_str(), g.region.as_str()), ("stack", "1"));
    let g = select_grasp(&result.pairs, Some("pour")).unwrap();
    assert_eq!((g.affordance.as_str(), g.region.as_str()), ("pour", "2"));
    assert_eq!(result.best_per_region.len(), 3);
    assert_eq!(result.best_per_region[1].affordance, "pour");

    // pair estimates agree with exact enumeration
    let exact = exact_pairs(&kb, &world, "cup1");
    let mut sorted = exact.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    assert!(exact[0] == sorted[0] && exact[4] == sorted[1] && exact[8] == sorted[2]);
    for p in &result.pairs {
        let ai = ["stack", "pour", "hand_over"]
            .iter()
            .position(|a| *a == p.affordance)
            .unwrap();
        let ri = ["1", "2", "3"].iter().position(|r| *r == p.region).unwrap();
        assert!(
            (p.both - exact[ai * 3 + ri]).abs() < 0.02,
            "{p:?} vs {}",
            exact[ai * 3 + ri]
        );
    }
}

#[test]
fn zero_weights_give_half_marginals() {
    let (mut kb, world) = cup();
    kb.weights.iter_mut().for_each(|w| *w = 0.0);
    let result = query(&kb, &world, &QuerySpec::new("cup1"), &config(10_000, 1)).unwrap();
    // 30000 draws of a fair coin, correlated only through the seed
    let sd = (0.25f64 / 30_000.0).sqrt();
    for m in result.affordances.iter().chain(&result.regions) {
        assert!((m.probability - 0.5).abs() < 5.0 * sd, "{m:?}");
    }
    for p in &result.pairs {
        assert!((p.both - 0.25).abs() < 0.02);
    }
}

#[test]
fn agrees_with_exact_marginals_on_six_free_atoms() {
    let schema =
        parse_schema("domain c = {u, v}\npredicate a(c)\npredicate b(c)\npredicate h(c)\n")
            .unwrap();
    let rules = parse_rules(
        "a(x) ^ b(x) => h(x) @ 1.4\nb(u) => !a(v) @ 0.8\nh(x) @ -0.6\n",
        &schema,
    )
    .unwrap();
    let kb = KnowledgeBase::from_rules(schema.clone(), rules);
    let table = GroundingTable::new(
        &kb.formulas,
        Universe::new(&schema, &[] as &[&str]).unwrap(),
    )
    .unwrap();
    let free: Vec<usize> = (0..6).collect();
    let evidence = vec![false; 6];
    let exact = exact::enumerate(&kb.weights, &table, &free, &evidence).unwrap();
    let est = gibbs(
        &kb.weights,
        &table,
        &free,
        &evidence,
        &[],
        &config(70_000, 11),
    )
    .unwrap();
    for (j, &a) in free.iter().enumerate() {
        assert!((est.marginals[j] - exact.marginal(a)).abs() < 0.02);
    }
    assert_eq!(est.diagnostics.split_disagreement.len(), 3);
    assert!(est.diagnostics.between_chains < 0.05);
}

#[test]
fn chains_started_from_the_target_stay_there() {
    let (kb, world) = cup();
    let universe = Universe::new(&kb.schema, &["cup1"]).unwrap();
    let evidence = universe.state_of(&world).unwrap();
    let free: Vec<usize> = (2..universe.n_atoms()).filter(|&a| !evidence[a]).collect();
    let table = GroundingTable::new(&kb.formulas, universe).unwrap();
    let exact = exact::enumerate(&kb.weights, &table, &free, &evidence).unwrap();
    // independent one-sweep chains, each started from an exact draw
    let n = 4000;
    let starts = exact::sample(&kb.weights, &table, &free, &evidence, n, 5).unwrap();
    let mut counts = vec![0u64; free.len()];
    for (i, mask) in starts.iter().enumerate() {
        let mut state = evidence.clone();
        for (j, &a) in free.iter().enumerate() {
            state[a] = mask >> j & 1 == 1;
        }
        let mut rng = rng::stream(17, i as u64);
        let c = run_chain(&kb.weights, &table, &free, &[], state, 0, 1, &mut rng);
        for j in 0..free.len() {
            counts[j] += c.halves[0][j] + c.halves[1][j];
        }
    }
    for (j, &a) in free.iter().enumerate() {
        let p = exact.marginal(a);
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        let got = counts[j] as f64 / n as f64;
        assert!(
            (got - p).abs() <= 3.0 * sd + 1e-12,
            "atom {a}: {got} vs {p}"
        );
    }
}

#[test]
fn same_seed_same_result() {
    let (kb, world) = cup();
    let a = query(&kb, &world, &QuerySpec::new("cup1"), &config(2000, 8)).unwrap();
    let b = query(&kb, &world, &QuerySpec::new("cup1"), &config(2000, 8)).unwrap();
    assert_eq!(a, b);
    let c = query(&kb, &world, &QuerySpec::new("cup1"), &config(2000, 9)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn constant_count_formula_does_not_move_the_answer() {
    let (kb, world) = cup();
    let mut shifted = kb.clone();
    let tautology = parse_rules("hasCategory(o, c) => hasCategory(o, c)\n", &kb.schema).unwrap();
    shifted.formulas.push(tautology[0].formula.clone());
    shifted.weights.push(0.0);
    shifted.fixed.push(false);
    let mut more = shifted.clone();
    *more.weights.last_mut().unwrap() = 7.5;
    let cfg = config(3000, 4);
    let a = query(&shifted, &world, &QuerySpec::new("cup1"), &cfg).unwrap();
    let b = query(&more, &world, &QuerySpec::new("cup1"), &cfg).unwrap();
    assert_eq!(
        select_grasp(&a.pairs, None).unwrap(),
        select_grasp(&b.pairs, None).unwrap()
    );
    assert_eq!(a.pairs, b.pairs);
}

fn pair(a: &str, r: &str, p: f64) -> PairProbability {
    PairProbability {
        affordance: a.into(),
        region: r.into(),
        probability: p,
        both: p,
    }
}

#[test]
fn selection_rules() {
    let posterior = vec![
        pair("stack", "1", 0.49),
        pair("pour", "2", 0.22),
        pair("hand_over", "3", 0.17),
        pair("pour", "1", 0.12),
        pair("cut", "3", 0.0),
    ];
    let g = select_grasp(&posterior, None).unwrap();
    assert_eq!((g.affordance.as_str(), g.region.as_str()), ("stack", "1"));
    let g = select_grasp(&posterior, Some("pour")).unwrap();
    assert_eq!((g.affordance.as_str(), g.region.as_str()), ("pour", "2"));

    let tie = vec![
        pair("pour", "2", 0.5),
        pair("hand_over", "3", 0.5),
        pair("pour", "1", 0.5),
    ];
    let g = select_grasp(&tie, None).unwrap();
    assert_eq!(
        (g.affordance.as_str(), g.region.as_str()),
        ("hand_over", "3")
    );
    let g = select_grasp(&tie, Some("pour")).unwrap();
    assert_eq!(g.region, "1");

    match select_grasp(&posterior, Some("cut")) {
        Err(Error::AffordanceUnavailable {
            requested,
            available,
        }) => {
            assert_eq!(requested, "cut");
            assert_eq!(available, ["hand_over", "pour", "stack"]);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(select_grasp(&[], None), Err(Error::Empty(_))));
}

#[test]
fn query_errors() {
    let (kb, world) = cup();
    let mut request = QuerySpec::new("cup1");
    request.affordance = Some("fly".into());
    assert!(matches!(
        query(&kb, &world, &request, &config(10, 0)),
        Err(Error::AffordanceUnavailable { .. })
    ));

    let schema = kb.schema.clone();
    let bad = parse_worlds(
        "world e\nhasCategory(cup1, container)\ngraspRegion(cup1, 2)\n",
        &schema,
    )
    .unwrap()
    .remove(0);
    assert!(matches!(
        query(&kb, &bad, &QuerySpec::new("cup1"), &config(10, 0)),
        Err(Error::Validation(v)) if v.len() == 1
    ));

    let mut nan = kb.clone();
    nan.weights[2] = f64::NAN;
    assert!(matches!(
        query(&nan, &world, &QuerySpec::new("cup1"), &config(10, 0)),
        Err(Error::NonFiniteWeight { index: 2, .. })
    ));

    let table = GroundingTable::new(&kb.formulas, Universe::new(&schema, &["x"]).unwrap()).unwrap();
    let ev = vec![false; table.n_atoms()];
    assert!(matches!(
        gibbs(&kb.weights, &table, &[], &ev, &[], &config(10, 0)),
        Err(Error::NoFreeAtoms)
    ));
    let zero = SamplerConfig {
        chains: 0,
        ..config(10, 0)
    };
    assert!(gibbs(&kb.weights, &table, &[0], &ev, &[], &zero).is_err());
}
