use std::fmt::Write;

use super::{formula_text, Rule, Schema, World};

pub fn write_schema(schema: &Schema) -> String {
    let mut out = String::new();
    for d in &schema.domains {
        if d.open {
            writeln!(out, "domain {} = *", d.name).unwrap();
        } else {
            writeln!(out, "domain {} = {{{}}}", d.name, d.constants.join(", ")).unwrap();
        }
    }
    for p in &schema.predicates {
        let args: Vec<&str> = p
            .args
            .iter()
            .map(|&d| schema.domains[d].name.as_str())
            .collect();
        writeln!(out, "predicate {}({})", p.name, args.join(", ")).unwrap();
    }
    out
}

pub fn write_rules(schema: &Schema, rules: &[Rule]) -> String {
    let mut out = String::new();
    for r in rules {
        out.push_str(&formula_text(schema, &r.formula));
        if let Some(w) = r.weight {
            write!(out, " @ {w:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Worlds are written with an explicit object list so that worlds with no
/// true atoms keep their object.
pub fn write_worlds(schema: &Schema, worlds: &[World]) -> String {
    let mut out = String::new();
    for (i, w) in worlds.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write!(out, "world {}", w.id).unwrap();
        if !w.closed_world {
            out.push_str(" open");
        }
        if !w.objects.is_empty() {
            let objs: Vec<&str> = w.objects.iter().map(String::as_str).collect();
            write!(out, " ({})", objs.join(", ")).unwrap();
        }
        out.push('\n');
        for a in &w.atoms {
            writeln!(out, "{}", a.display(schema)).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{parse_rules, parse_schema, parse_worlds};
    use proptest::prelude::*;

    const SCHEMA: &str = "domain object = *\n\
                          domain shape = {cubic, cylindrical}\n\
                          domain affordance = {pour, stack, hand_over}\n\
                          domain region = {1, 2, 3}\n\
                          predicate hasShape(object, shape)\n\
                          predicate hasAffordance(object, affordance)\n\
                          predicate graspRegion(object, region)\n";

    #[test]
    fn schema_round_trip() {
        let s = parse_schema(SCHEMA).unwrap();
        assert_eq!(parse_schema(&write_schema(&s)).unwrap(), s);
    }

    #[test]
    fn rules_round_trip() {
        let s = parse_schema(SCHEMA).unwrap();
        let text = "hasShape(o, cubic) => hasAffordance(o, stack) @ 0.6931471805599453\n\
                    hasAffordance(o, a) => graspRegion(o, r)\n\
                    hasShape(o, x) ^ hasAffordance(o, pour) => !graspRegion(o, 3) @ -1e-3\n";
        let rules = parse_rules(text, &s).unwrap();
        let again = parse_rules(&write_rules(&s, &rules), &s).unwrap();
        assert_eq!(again, rules);
    }

    fn atom_strategy() -> impl Strategy<Value = String> {
        let objects = prop::sample::select(vec!["cup", "mug", "box"]);
        prop_oneof![
            (
                objects.clone(),
                prop::sample::select(vec!["cubic", "cylindrical"])
            )
                .prop_map(|(o, c)| format!("hasShape({o}, {c})")),
            (
                objects.clone(),
                prop::sample::select(vec!["pour", "stack", "hand_over"])
            )
                .prop_map(|(o, c)| format!("hasAffordance({o}, {c})")),
            (objects, prop::sample::select(vec!["1", "2", "3"]))
                .prop_map(|(o, c)| format!("graspRegion({o}, {c})")),
        ]
    }

    proptest! {
        #[test]
        fn worlds_round_trip(blocks in prop::collection::vec(prop::collection::btree_set(atom_strategy(), 0..6), 1..5)) {
            let s = parse_schema(SCHEMA).unwrap();
            let mut text = String::new();
            for (i, atoms) in blocks.iter().enumerate() {
                text.push_str(&format!("world w{i}\n"));
                for a in atoms {
                    text.push_str(a);
                    text.push('\n');
                }
                text.push('\n');
            }
            let worlds = parse_worlds(&text, &s).unwrap();
            let again = parse_worlds(&write_worlds(&s, &worlds), &s).unwrap();
            prop_assert_eq!(again, worlds);
        }
    }
}
