//! A knowledge base with weights, and its `.kbm` text format.
//!
//! ```text
//! kbm 1
//! schema-sha256 <hex>
//! rules-sha256 <hex>
//! schema domain object = *
//! schema predicate hasCategory(object, category)
//! fixed 2 5
//! # free-form diagnostics
//! 0<TAB>hasCategory(o, container) => hasAffordance(o, pour)<TAB>7.0818505792508800e-1
//! ```
//!
//! The schema is embedded so a model file is self-contained. Weights are
//! written with 17 significant digits and read back bit-exactly.

use std::fmt::Write;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::logic::{formula_text, parse_rules, parse_schema, write_schema, Formula, Rule, Schema};

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub schema: Schema,
    pub formulas: Vec<Formula>,
    pub weights: Vec<f64>,
    /// Weights given in the rules file (`@ w`) stay fixed during learning.
    pub fixed: Vec<bool>,
}

impl KnowledgeBase {
    /// Rules without a weight start at zero.
    pub fn from_rules(schema: Schema, rules: Vec<Rule>) -> Self {
        let fixed = rules.iter().map(|r| r.weight.is_some()).collect();
        let weights = rules.iter().map(|r| r.weight.unwrap_or(0.0)).collect();
        KnowledgeBase {
            schema,
            formulas: rules.into_iter().map(|r| r.formula).collect(),
            weights,
            fixed,
        }
    }

    pub fn n_formulas(&self) -> usize {
        self.formulas.len()
    }

    pub fn check_weights(&self) -> Result<()> {
        check_finite(&self.weights)
    }

    pub fn formula_text(&self, i: usize) -> String {
        formula_text(&self.schema, &self.formulas[i])
    }
}

pub fn check_finite(weights: &[f64]) -> Result<()> {
    match weights.iter().position(|w| !w.is_finite()) {
        Some(index) => Err(Error::NonFiniteWeight {
            index,
            value: weights[index],
        }),
        None => Ok(()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Model file contents plus the provenance hashes recorded in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kb: KnowledgeBase,
    pub schema_sha256: String,
    pub rules_sha256: String,
    pub comments: Vec<String>,
}

impl ModelFile {
    pub fn new(kb: KnowledgeBase, schema_bytes: &[u8], rules_bytes: &[u8]) -> Self {
        ModelFile {
            kb,
            schema_sha256: sha256_hex(schema_bytes),
            rules_sha256: sha256_hex(rules_bytes),
            comments: Vec::new(),
        }
    }

    pub fn write(&self) -> String {
        let mut out = String::from("kbm 1\n");
        writeln!(out, "schema-sha256 {}", self.schema_sha256).unwrap();
        writeln!(out, "rules-sha256 {}", self.rules_sha256).unwrap();
        for line in write_schema(&self.kb.schema).lines() {
            writeln!(out, "schema {line}").unwrap();
        }
        let fixed: Vec<String> = (0..self.kb.n_formulas())
            .filter(|&i| self.kb.fixed[i])
            .map(|i| i.to_string())
            .collect();
        if !fixed.is_empty() {
            writeln!(out, "fixed {}", fixed.join(" ")).unwrap();
        }
        for c in &self.comments {
            writeln!(out, "# {c}").unwrap();
        }
        for (i, w) in self.kb.weights.iter().enumerate() {
            writeln!(out, "{i}\t{}\t{w:.16e}", self.kb.formula_text(i)).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let invalid = |line: usize, msg: &str| Error::parse(line, 1, msg.to_string());
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "kbm 1")) => {}
            _ => return Err(invalid(1, "missing `kbm 1` header")),
        }
        let mut schema_text = String::new();
        let mut schema_sha256 = String::new();
        let mut rules_sha256 = String::new();
        let mut fixed_idx = Vec::new();
        let mut comments = Vec::new();
        let mut rows: Vec<(usize, usize, String, f64)> = Vec::new();
        for (n, line) in lines {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim().to_string());
            } else if let Some(h) = line.strip_prefix("schema-sha256 ") {
                schema_sha256 = h.trim().to_string();
            } else if let Some(h) = line.strip_prefix("rules-sha256 ") {
                rules_sha256 = h.trim().to_string();
            } else if let Some(s) = line.strip_prefix("schema ") {
                schema_text.push_str(s);
                schema_text.push('\n');
            } else if let Some(f) = line.strip_prefix("fixed ") {
                for tok in f.split_whitespace() {
                    fixed_idx.push(
                        tok.parse::<usize>()
                            .map_err(|_| invalid(line_no, "bad index in `fixed` line"))?,
                    );
                }
            } else {
                let mut parts = line.split('\t');
                let (Some(i), Some(f), Some(w), None) =
                    (parts.next(), parts.next(), parts.next(), parts.next())
                else {
                    return Err(invalid(line_no, "expected `index<TAB>formula<TAB>weight`"));
                };
                let i: usize = i
                    .parse()
                    .map_err(|_| invalid(line_no, "bad formula index"))?;
                let w: f64 = w.parse().map_err(|_| invalid(line_no, "bad weight"))?;
                rows.push((line_no, i, f.to_string(), w));
            }
        }
        let schema = parse_schema(&schema_text)?;
        let mut formulas = Vec::with_capacity(rows.len());
        let mut weights = Vec::with_capacity(rows.len());
        for (k, (line_no, i, text, w)) in rows.into_iter().enumerate() {
            if i != k {
                return Err(invalid(line_no, "formula indices must be 0, 1, 2, ..."));
            }
            let mut rule = parse_rules(&text, &schema).map_err(|e| match e {
                Error::Parse {
                    column, message, ..
                } => Error::Parse {
                    line: line_no,
                    column,
                    message,
                },
                other => other,
            })?;
            if rule.len() != 1 {
                return Err(invalid(line_no, "expected exactly one formula"));
            }
            formulas.push(rule.remove(0).formula);
            weights.push(w);
        }
        let mut fixed = vec![false; formulas.len()];
        for i in fixed_idx {
            *fixed
                .get_mut(i)
                .ok_or_else(|| Error::Invalid(format!("fixed index {i} out of range")))? = true;
        }
        let kb = KnowledgeBase {
            schema,
            formulas,
            weights,
            fixed,
        };
        kb.check_weights()?;
        Ok(ModelFile {
            kb,
            schema_sha256,
            rules_sha256,
            comments,
        })
    }
}
