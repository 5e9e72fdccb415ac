use std::collections::{BTreeSet, HashSet};

use super::{Atom, Domain, Formula, GroundAtom, Predicate, Rule, Schema, Term, Variable, World};
use crate::error::{Error, Result};

/// Single-line scanner. Columns are 1-based byte offsets.
struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, line: usize) -> Self {
        Cursor { text, pos: 0, line }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.line, self.pos + 1, message)
    }

    fn err_at(&self, pos: usize, message: impl Into<String>) -> Error {
        Error::parse(self.line, pos + 1, message)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c == ' ' || c == '\t' || c == '\r' {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.text[self.pos..].starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<()> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{s}`")))
        }
    }

    /// Returns the identifier and its start position.
    fn ident(&mut self) -> Result<(&'a str, usize)> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.text[start..];
        let len = rest
            .bytes()
            .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
            .count();
        if len == 0 {
            return Err(self.err("expected identifier"));
        }
        self.pos += len;
        Ok((&rest[..len], start))
    }

    fn finish(&mut self) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing input"))
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// A bare term that is not a constant of its argument's domain is a
/// variable when it is one lowercase letter optionally followed by digits
/// (`o`, `a`, `x2`). Any identifier may be forced to a variable with a `?`
/// prefix.
pub(crate) fn is_short_variable(name: &str) -> bool {
    let mut bytes = name.bytes();
    matches!(bytes.next(), Some(b'a'..=b'z')) && bytes.all(|b| b.is_ascii_digit())
}

/// Parses a `.kbs` document.
pub fn parse_schema(text: &str) -> Result<Schema> {
    let mut schema = Schema::default();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let mut cur = Cursor::new(strip_comment(raw), line_no);
        if cur.at_end() {
            continue;
        }
        let (keyword, kpos) = cur.ident()?;
        match keyword {
            "domain" => {
                let (name, npos) = cur.ident()?;
                if schema.domain_index(name).is_some() {
                    return Err(cur.err_at(npos, format!("duplicate domain `{name}`")));
                }
                cur.expect("=")?;
                let domain = if cur.eat("*") {
                    if let Some(other) = schema.open_domain() {
                        return Err(cur.err_at(
                            npos,
                            format!(
                                "only one open domain is supported (`{}` already open)",
                                schema.domains[other].name
                            ),
                        ));
                    }
                    Domain {
                        name: name.to_string(),
                        constants: Vec::new(),
                        open: true,
                    }
                } else {
                    cur.expect("{")?;
                    let mut constants: Vec<String> = Vec::new();
                    loop {
                        let (c, cpos) = cur.ident()?;
                        if constants.iter().any(|x| x == c) {
                            return Err(cur.err_at(cpos, format!("duplicate constant `{c}`")));
                        }
                        constants.push(c.to_string());
                        if cur.eat("}") {
                            break;
                        }
                        cur.expect(",")?;
                    }
                    Domain {
                        name: name.to_string(),
                        constants,
                        open: false,
                    }
                };
                cur.finish()?;
                schema.domains.push(domain);
            }
            "predicate" => {
                let (name, npos) = cur.ident()?;
                if schema.predicate_index(name).is_some() {
                    return Err(cur.err_at(npos, format!("duplicate predicate `{name}`")));
                }
                cur.expect("(")?;
                let mut args = Vec::new();
                loop {
                    let (d, dpos) = cur.ident()?;
                    let di = schema
                        .domain_index(d)
                        .ok_or_else(|| cur.err_at(dpos, format!("unknown domain `{d}`")))?;
                    args.push(di);
                    if cur.eat(")") {
                        break;
                    }
                    cur.expect(",")?;
                }
                cur.finish()?;
                schema.predicates.push(Predicate {
                    name: name.to_string(),
                    args,
                });
            }
            other => {
                return Err(cur.err_at(
                    kpos,
                    format!("expected `domain` or `predicate`, found `{other}`"),
                ))
            }
        }
    }
    Ok(schema)
}

enum RawTerm<'a> {
    Var(&'a str),
    Name(&'a str),
}

struct RawAtom<'a> {
    predicate: &'a str,
    pos: usize,
    args: Vec<(RawTerm<'a>, usize)>,
}

fn raw_atom<'a>(cur: &mut Cursor<'a>) -> Result<RawAtom<'a>> {
    let (predicate, pos) = cur.ident()?;
    cur.expect("(")?;
    let mut args = Vec::new();
    loop {
        cur.skip_ws();
        let forced = cur.eat("?");
        let (name, tpos) = cur.ident()?;
        let term = if forced {
            RawTerm::Var(name)
        } else {
            RawTerm::Name(name)
        };
        args.push((term, tpos));
        if cur.eat(")") {
            break;
        }
        cur.expect(",")?;
    }
    Ok(RawAtom {
        predicate,
        pos,
        args,
    })
}

struct FormulaBuilder<'s> {
    schema: &'s Schema,
    variables: Vec<Variable>,
}

impl FormulaBuilder<'_> {
    fn variable(
        &mut self,
        cur: &Cursor<'_>,
        name: &str,
        domain: usize,
        pos: usize,
    ) -> Result<Term> {
        match self.variables.iter().position(|v| v.name == name) {
            Some(v) if self.variables[v].domain != domain => Err(cur.err_at(
                pos,
                format!(
                    "variable `{name}` used as both `{}` and `{}`",
                    self.schema.domains[self.variables[v].domain].name,
                    self.schema.domains[domain].name
                ),
            )),
            Some(v) => Ok(Term::Var(v)),
            None => {
                self.variables.push(Variable {
                    name: name.to_string(),
                    domain,
                });
                Ok(Term::Var(self.variables.len() - 1))
            }
        }
    }

    fn atom(&mut self, cur: &Cursor<'_>, raw: &RawAtom<'_>) -> Result<Atom> {
        let schema = self.schema;
        let pi = schema
            .predicate_index(raw.predicate)
            .ok_or_else(|| cur.err_at(raw.pos, format!("unknown predicate `{}`", raw.predicate)))?;
        let pred = &schema.predicates[pi];
        if pred.arity() != raw.args.len() {
            return Err(cur.err_at(
                raw.pos,
                format!(
                    "arity mismatch: `{}` takes {} arguments, found {}",
                    pred.name,
                    pred.arity(),
                    raw.args.len()
                ),
            ));
        }
        let mut args = Vec::with_capacity(raw.args.len());
        for ((term, tpos), &d) in raw.args.iter().zip(&pred.args) {
            let domain = &schema.domains[d];
            let t = match term {
                RawTerm::Var(name) => self.variable(cur, name, d, *tpos)?,
                RawTerm::Name(name) => match domain.index_of(name) {
                    Some(c) => Term::Const(c),
                    None if is_short_variable(name) => self.variable(cur, name, d, *tpos)?,
                    None => {
                        return Err(cur.err_at(
                            *tpos,
                            format!("constant `{name}` is not in domain `{}`", domain.name),
                        ))
                    }
                },
            };
            args.push(t);
        }
        Ok(Atom {
            predicate: pi,
            args,
        })
    }
}

/// Parses a `.kbr` document: one rule per line,
/// `atom ^ atom ... => [!]atom [@ weight]`. A line with no `=>` is a
/// rule with an empty body.
pub fn parse_rules(text: &str, schema: &Schema) -> Result<Vec<Rule>> {
    let mut rules = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let mut cur = Cursor::new(strip_comment(raw), n + 1);
        if cur.at_end() {
            continue;
        }
        let mut builder = FormulaBuilder {
            schema,
            variables: Vec::new(),
        };
        let mut raw_body = Vec::new();
        let head_positive;
        let raw_head;
        if cur.eat("=>") {
            head_positive = !cur.eat("!");
            raw_head = raw_atom(&mut cur)?;
        } else {
            let negated = cur.eat("!");
            let first = raw_atom(&mut cur)?;
            if cur.eat("=>") {
                if negated {
                    return Err(cur.err("negation is only allowed on the head"));
                }
                raw_body.push(first);
                head_positive = !cur.eat("!");
                raw_head = raw_atom(&mut cur)?;
            } else if cur.eat("^") {
                if negated {
                    return Err(cur.err("negation is only allowed on the head"));
                }
                raw_body.push(first);
                loop {
                    cur.skip_ws();
                    if cur.peek() == Some('!') {
                        return Err(cur.err("negation is only allowed on the head"));
                    }
                    raw_body.push(raw_atom(&mut cur)?);
                    if cur.eat("=>") {
                        break;
                    }
                    cur.expect("^")?;
                }
                head_positive = !cur.eat("!");
                raw_head = raw_atom(&mut cur)?;
            } else {
                head_positive = !negated;
                raw_head = first;
            }
        }
        let weight = if cur.eat("@") {
            cur.skip_ws();
            let start = cur.pos;
            let rest = &cur.text[start..];
            let len = rest.find(|c: char| c.is_whitespace()).unwrap_or(rest.len());
            let value: f64 = rest[..len]
                .parse()
                .map_err(|_| cur.err_at(start, "invalid weight"))?;
            if !value.is_finite() {
                return Err(cur.err_at(start, "weight must be finite"));
            }
            cur.pos += len;
            Some(value)
        } else {
            None
        };
        cur.finish()?;
        let mut body = Vec::with_capacity(raw_body.len());
        for a in &raw_body {
            body.push(builder.atom(&cur, a)?);
        }
        let head = builder.atom(&cur, &raw_head)?;
        rules.push(Rule {
            formula: Formula {
                body,
                head,
                head_positive,
                variables: builder.variables,
            },
            weight,
        });
    }
    Ok(rules)
}

fn ground_atom(cur: &mut Cursor<'_>, schema: &Schema) -> Result<GroundAtom> {
    let (name, pos) = cur.ident()?;
    let pi = schema
        .predicate_index(name)
        .ok_or_else(|| cur.err_at(pos, format!("unknown predicate `{name}`")))?;
    let pred = &schema.predicates[pi];
    cur.expect("(")?;
    let mut args = Vec::new();
    loop {
        let (c, cpos) = cur.ident()?;
        args.push((c, cpos));
        if cur.eat(")") {
            break;
        }
        cur.expect(",")?;
    }
    if args.len() != pred.arity() {
        return Err(cur.err_at(
            pos,
            format!(
                "arity mismatch: `{name}` takes {} arguments, found {}",
                pred.arity(),
                args.len()
            ),
        ));
    }
    for (&(c, cpos), &d) in args.iter().zip(&pred.args) {
        let domain = &schema.domains[d];
        if !domain.open && domain.index_of(c).is_none() {
            return Err(cur.err_at(
                cpos,
                format!("unknown constant `{c}` for domain `{}`", domain.name),
            ));
        }
    }
    Ok(GroundAtom {
        predicate: pi,
        args: args.into_iter().map(|(c, _)| c.to_string()).collect(),
    })
}

/// Parses a `.kbw` document. A block starts with
/// `world <id> [open] [(obj, ...)]` and ends at a blank line or the next
/// header; every other line is one ground atom.
pub fn parse_worlds(text: &str, schema: &Schema) -> Result<Vec<World>> {
    let open = schema.open_domain();
    let mut worlds: Vec<World> = Vec::new();
    let mut ids = HashSet::new();
    let mut in_block = false;
    for (n, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        let mut cur = Cursor::new(line, n + 1);
        if raw.trim().is_empty() {
            in_block = false;
            continue;
        }
        if cur.at_end() {
            // comment-only line inside or outside a block
            continue;
        }
        let save = cur.pos;
        let (word, _) = cur.ident()?;
        let is_header = word == "world" && {
            cur.skip_ws();
            cur.peek()
                .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        };
        if is_header {
            let (id, ipos) = cur.ident()?;
            if !ids.insert(id.to_string()) {
                return Err(cur.err_at(ipos, format!("duplicate world id `{id}`")));
            }
            let mut world = World::new(id);
            if cur.eat("open") {
                world.closed_world = false;
            }
            if cur.eat("(") {
                if open.is_none() {
                    return Err(cur.err("object list given but the schema has no open domain"));
                }
                loop {
                    let (o, _) = cur.ident()?;
                    world.objects.insert(o.to_string());
                    if cur.eat(")") {
                        break;
                    }
                    cur.expect(",")?;
                }
            }
            cur.finish()?;
            worlds.push(world);
            in_block = true;
            continue;
        }
        cur.pos = save;
        if !in_block {
            return Err(cur.err("ground atom outside a `world` block"));
        }
        let atom_pos = cur.pos;
        let atom = ground_atom(&mut cur, schema)?;
        cur.finish()?;
        let world = worlds.last_mut().expect("in_block implies a world");
        if let Some(od) = open {
            for (c, &d) in atom
                .args
                .iter()
                .zip(&schema.predicates[atom.predicate].args)
            {
                if d == od {
                    world.objects.insert(c.clone());
                }
            }
        }
        if !world.atoms.insert(atom) {
            return Err(cur.err_at(atom_pos, "atom listed twice in the same world"));
        }
    }
    Ok(worlds)
}

/// All constants of the open domain that appear in `worlds`, sorted.
pub fn harvest_objects(worlds: &[World]) -> Vec<String> {
    let set: BTreeSet<&String> = worlds.iter().flat_map(|w| w.objects.iter()).collect();
    set.into_iter().cloned().collect()
}
