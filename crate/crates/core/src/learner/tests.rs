use super::*;
use crate::logic::{parse_rules, parse_schema, parse_worlds};
use rand::{Rng as _, SeedableRng};

const SCHEMA: &str = "\
domain object = *
domain category = {container, tool}
domain affordance = {pour, cut}
predicate hasCategory(object, category)
predicate hasAffordance(object, affordance)
";

const RULES: &str = "\
hasCategory(o, container) => hasAffordance(o, pour)
hasCategory(o, tool) => hasAffordance(o, cut)
hasCategory(o, tool) => !hasAffordance(o, pour)
";

const WORLDS: &str = "\
world w1
hasCategory(cup, container)
hasAffordance(cup, pour)

world w2
hasCategory(knife, tool)
hasAffordance(knife, cut)

world w3
hasCategory(jug, container)
hasCategory(saw, tool)
hasAffordance(saw, cut)
hasAffordance(saw, pour)
";

fn setup() -> (KnowledgeBase, Vec<World>) {
    let schema = parse_schema(SCHEMA).unwrap();
    let rules = parse_rules(RULES, &schema).unwrap();
    let worlds = parse_worlds(WORLDS, &schema).unwrap();
    (KnowledgeBase::from_rules(schema, rules), worlds)
}

fn naive_log_joint(table: &GroundingTable, weights: &[f64], state: &[bool]) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(f, w)| {
            let n = table
                .groundings(f)
                .iter()
                .filter(|g| !g.body.iter().all(|&a| state[a]) || state[g.head] == g.head_positive)
                .count();
            w * n as f64
        })
        .sum()
}

/// Σ over worlds and atoms of log P(x_l | rest), each conditional obtained
/// from two complete evaluations of the unnormalised log joint.
fn naive_pll(kb: &KnowledgeBase, worlds: &[World], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for w in worlds {
        let objects: Vec<&String> = w.objects.iter().collect();
        let table = GroundingTable::new(&kb.formulas, Universe::new(&kb.schema, &objects).unwrap())
            .unwrap();
        let state = table.universe().state_of(w).unwrap();
        for l in 0..state.len() {
            let mut on = state.clone();
            on[l] = true;
            let mut off = state.clone();
            off[l] = false;
            let a = naive_log_joint(&table, weights, &on);
            let b = naive_log_joint(&table, weights, &off);
            let (mine, other) = if state[l] { (a, b) } else { (b, a) };
            let m = mine.max(other);
            total += mine - (m + ((mine - m).exp() + (other - m).exp()).ln());
        }
    }
    total
}

#[test]
fn zero_weights_give_log_half_per_atom() {
    let (kb, worlds) = setup();
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    // 1 + 1 + 2 objects, 4 atoms each
    let atoms = 16.0;
    let v = pseudo_log_likelihood(&[0.0; 3], &data, f64::INFINITY);
    assert!((v + atoms * std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(data.n_worlds(), 3);
}

#[test]
fn matches_naive_conditionals() {
    let (kb, worlds) = setup();
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
        let expected = naive_pll(&kb, &worlds, &w);
        let got = pseudo_log_likelihood(&w, &data, f64::INFINITY);
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        let prior: f64 = w.iter().map(|x| x * x / 200.0).sum();
        let with_prior = pseudo_log_likelihood(&w, &data, 10.0);
        assert!((with_prior - (expected - prior)).abs() < 1e-10);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let (kb, worlds) = setup();
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = pll_gradient(&w, &data, 2.0);
        for i in 0..3 {
            let h = 1e-5;
            let mut up = w.clone();
            up[i] += h;
            let mut down = w.clone();
            down[i] -= h;
            let fd = (pseudo_log_likelihood(&up, &data, 2.0)
                - pseudo_log_likelihood(&down, &data, 2.0))
                / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0),
                "{fd} vs {}",
                g[i]
            );
        }
    }
}

#[test]
fn tautology_only_feels_the_prior() {
    let schema = parse_schema("domain object = *\npredicate p(object)\n").unwrap();
    let rules = parse_rules("p(o) => p(o)\n", &schema).unwrap();
    let kb = KnowledgeBase::from_rules(schema.clone(), rules);
    let worlds = parse_worlds("world a\np(x)\n\nworld b (y)\n", &schema).unwrap();
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    assert_eq!(data.n_rows(), 0);
    let g = pll_gradient(&[3.0], &data, 10.0);
    assert!((g[0] + 0.03).abs() < 1e-15);
}

fn unit_clause(positives: usize, total: usize) -> (KnowledgeBase, Vec<World>) {
    let schema = parse_schema("domain object = *\npredicate b(object)\n").unwrap();
    let rules = parse_rules("b(o)\n", &schema).unwrap();
    let mut text = String::from("world all (");
    text.push_str(
        &(0..total)
            .map(|i| format!("o{i}"))
            .collect::<Vec<_>>()
            .join(", "),
    );
    text.push_str(")\n");
    for i in 0..positives {
        text.push_str(&format!("b(o{i})\n"));
    }
    let worlds = parse_worlds(&text, &schema).unwrap();
    (KnowledgeBase::from_rules(schema, rules), worlds)
}

#[test]
fn recovers_log_odds_of_a_unit_clause() {
    let (kb, worlds) = unit_clause(7, 10);
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    let config = TrainingConfig {
        prior_sigma: f64::INFINITY,
        tolerance: 1e-9,
        ..Default::default()
    };
    let m = fit(&kb, &data, &config).unwrap();
    assert_eq!(m.diagnostics.status, Status::Converged);
    assert!((m.kb.weights[0] - (7.0f64 / 3.0).ln()).abs() < 1e-7);
    assert!(m.diagnostics.final_pll >= m.diagnostics.initial_pll);
}

#[test]
fn separable_data_diverge_without_prior() {
    let (kb, worlds) = unit_clause(10, 10);
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    let config = TrainingConfig {
        prior_sigma: f64::INFINITY,
        ..Default::default()
    };
    let err = fit(&kb, &data, &config).unwrap_err();
    assert!(matches!(err, Error::Divergence(_)), "{err}");
    assert!(err.is_numeric());
    // a finite prior keeps the optimum finite
    let m = fit(&kb, &data, &TrainingConfig::default()).unwrap();
    assert!(m.kb.weights[0] > 2.0 && m.kb.weights[0] < 12.0);
}

#[test]
fn objective_is_concave_so_starts_agree() {
    let (kb, worlds) = setup();
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    let config = TrainingConfig::default();
    let a = fit(&kb, &data, &config).unwrap();
    let b = fit_from(&kb, &data, &config, &[5.0, -5.0, 2.0]).unwrap();
    for (x, y) in a.kb.weights.iter().zip(&b.kb.weights) {
        assert!((x - y).abs() < 1e-3, "{x} vs {y}");
    }
    let g = pll_gradient(&a.kb.weights, &data, config.prior_sigma);
    assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= config.tolerance);
}

#[test]
fn fitting_is_deterministic() {
    let (kb, worlds) = setup();
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    let a = fit(&kb, &data, &TrainingConfig::default()).unwrap();
    let b = fit(&kb, &data, &TrainingConfig::default()).unwrap();
    let bits = |m: &LearnedModel| m.kb.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.diagnostics, b.diagnostics);
}

#[test]
fn fixed_weights_are_left_alone() {
    let schema = parse_schema(SCHEMA).unwrap();
    let rules = parse_rules(&RULES.replace("cut)\n", "cut) @ 1.25\n"), &schema).unwrap();
    let kb = KnowledgeBase::from_rules(schema.clone(), rules);
    assert_eq!(kb.fixed, vec![false, true, false]);
    let worlds = parse_worlds(WORLDS, &schema).unwrap();
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    let m = fit(&kb, &data, &TrainingConfig::default()).unwrap();
    assert_eq!(m.kb.weights[1], 1.25);
    let g = pll_gradient(&m.kb.weights, &data, 10.0);
    assert!(g[0].abs() < 1e-5 && g[2].abs() < 1e-5);
}

#[test]
fn states_and_worlds_compile_alike() {
    let (kb, worlds) = setup();
    let w = &worlds[2];
    let objects: Vec<&String> = w.objects.iter().collect();
    let table =
        GroundingTable::new(&kb.formulas, Universe::new(&kb.schema, &objects).unwrap()).unwrap();
    let state = table.universe().state_of(w).unwrap();
    let a = TrainingData::from_states(&table, &[state.clone(), state]).unwrap();
    let b = TrainingData::from_worlds(&kb, &[w.clone(), w.clone()]).unwrap();
    assert_eq!(a, b);
    assert!(TrainingData::from_states(&table, &[vec![true]]).is_err());
}

#[test]
fn bad_inputs_are_rejected() {
    let (kb, worlds) = setup();
    let data = TrainingData::from_worlds(&kb, &worlds).unwrap();
    let bad = TrainingConfig {
        prior_sigma: -1.0,
        tolerance: 2.0,
        ..Default::default()
    };
    match fit(&kb, &data, &bad) {
        Err(Error::Validation(p)) => assert_eq!(p.len(), 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        fit_from(
            &kb,
            &data,
            &TrainingConfig::default(),
            &[f64::NAN, 0.0, 0.0]
        ),
        Err(Error::NonFiniteWeight { index: 0, .. })
    ));
    let empty = TrainingData::from_worlds(&kb, &[]).unwrap();
    assert!(fit(&kb, &empty, &TrainingConfig::default()).is_err());
}
