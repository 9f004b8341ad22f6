use std::collections::BTreeSet;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use super::table::{indiscernibility, DecisionTable, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub attr: usize,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Sorted by attribute index.
    pub conditions: Vec<Condition>,
    pub decision_value: Value,
    /// Rows matching the conditions that carry `decision_value`.
    pub support: usize,
    pub certainty: f64,
}

impl Rule {
    pub fn matches(&self, conditions: &[Value]) -> bool {
        self.conditions.iter().all(|c| conditions.get(c.attr) == Some(&c.value))
    }

    pub fn is_certain(&self) -> bool {
        self.certainty >= 1.0
    }
}

/// Rules induced for one decision attribute, rows = rules and
/// columns = condition attributes when viewed as a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMatrix {
    pub decision_attr: String,
    pub condition_attrs: Vec<String>,
    pub rules: Vec<Rule>,
    pub built_at_s: f64,
    pub source_row_count: usize,
}

impl RuleMatrix {
    /// Rule × attribute grid; `None` marks an attribute the rule ignores.
    pub fn matrix(&self) -> Vec<Vec<Option<Value>>> {
        self.rules
            .iter()
            .map(|r| {
                let mut row = vec![None; self.condition_attrs.len()];
                for c in &r.conditions {
                    row[c.attr] = Some(c.value);
                }
                row
            })
            .collect()
    }

    pub fn certain_rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.is_certain())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rules: Vec<serde_json::Value> = self
            .rules
            .iter()
            .map(|r| {
                let conds: serde_json::Map<String, serde_json::Value> = r
                    .conditions
                    .iter()
                    .map(|c| (self.condition_attrs[c.attr].clone(), serde_json::json!(c.value)))
                    .collect();
                serde_json::json!({
                    "conditions": conds,
                    "decision": r.decision_value,
                    "support": r.support,
                    "certainty": r.certainty,
                })
            })
            .collect();
        serde_json::json!({
            "decision_attr": self.decision_attr,
            "attributes": self.condition_attrs,
            "built_at_s": self.built_at_s,
            "source_row_count": self.source_row_count,
            "rules": rules,
            "matrix": self.matrix(),
        })
    }
}

/// Row bitsets per (attribute, value), so a condition set's match set is an
/// intersection of precomputed sets.
struct ValueIndex {
    n: usize,
    // attr -> sorted (value, rows)
    sets: Vec<Vec<(Value, FixedBitSet)>>,
}

impl ValueIndex {
    fn new(table: &DecisionTable) -> Self {
        let n = table.len();
        let sets = (0..table.condition_attrs.len())
            .map(|a| {
                let mut per: Vec<(Value, FixedBitSet)> = Vec::new();
                for (i, r) in table.rows.iter().enumerate() {
                    let v = r.conditions[a];
                    let pos = match per.binary_search_by(|(x, _)| x.cmp(&v)) {
                        Ok(p) => p,
                        Err(p) => {
                            per.insert(p, (v, FixedBitSet::with_capacity(n)));
                            p
                        }
                    };
                    per[pos].1.insert(i);
                }
                per
            })
            .collect();
        Self { n, sets }
    }

    fn matching(&self, conds: &[Condition]) -> FixedBitSet {
        let mut out = FixedBitSet::with_capacity(self.n);
        out.insert_range(..);
        for c in conds {
            match self.sets[c.attr].binary_search_by(|(x, _)| x.cmp(&c.value)) {
                Ok(p) => out.intersect_with(&self.sets[c.attr][p].1),
                Err(_) => out.clear(),
            }
        }
        out
    }
}

fn bitset(n: usize, rows: impl IntoIterator<Item = usize>) -> FixedBitSet {
    let mut b = FixedBitSet::with_capacity(n);
    b.extend(rows);
    b
}

/// Drops attributes from the block's full description while the matched rows
/// stay inside `target`. Trailing attributes are tried first.
fn reduce(index: &ValueIndex, full: &[Condition], target: &FixedBitSet) -> Vec<Condition> {
    let mut conds = full.to_vec();
    for pos in (0..full.len()).rev() {
        let mut trial = conds.clone();
        trial.retain(|c| c.attr != full[pos].attr);
        if index.matching(&trial).is_subset(target) {
            conds = trial;
        }
    }
    conds
}

/// Induces certain rules from lower-approximation blocks and possible rules
/// from boundary blocks, for every decision value of the table.
pub fn induce_rules(table: &DecisionTable) -> RuleMatrix {
    let n = table.len();
    let index = ValueIndex::new(table);
    let blocks = indiscernibility(table, &table.all_attrs()).expect("all attrs are in range");
    let mut rules: Vec<Rule> = Vec::new();
    let mut seen: BTreeSet<(Vec<Condition>, Value)> = BTreeSet::new();

    for decision in table.decision_values() {
        let concept = bitset(n, table.concept(decision));
        let mut upper = FixedBitSet::with_capacity(n);
        let mut certain_blocks = Vec::new();
        let mut boundary_blocks = Vec::new();
        for b in &blocks {
            let inside = b.iter().filter(|&&i| concept.contains(i)).count();
            if inside == b.len() {
                certain_blocks.push(b);
            } else if inside > 0 {
                boundary_blocks.push(b);
            }
            if inside > 0 {
                upper.extend(b.iter().copied());
            }
        }
        let mut emit = |block: &Vec<usize>, target: &FixedBitSet| {
            let rep = &table.rows[block[0]];
            let full: Vec<Condition> = rep
                .conditions
                .iter()
                .enumerate()
                .map(|(attr, &value)| Condition { attr, value })
                .collect();
            let conds = reduce(&index, &full, target);
            if !seen.insert((conds.clone(), decision)) {
                return;
            }
            let matched = index.matching(&conds);
            let support = matched.intersection(&concept).count();
            let total = matched.count_ones(..);
            rules.push(Rule {
                conditions: conds,
                decision_value: decision,
                support,
                certainty: support as f64 / total as f64,
            });
        };
        for b in certain_blocks {
            emit(b, &concept);
        }
        for b in boundary_blocks {
            emit(b, &upper);
        }
    }

    RuleMatrix {
        decision_attr: table.decision_attr.clone(),
        condition_attrs: table.condition_attrs.clone(),
        rules,
        built_at_s: 0.0,
        source_row_count: n,
    }
}

#[cfg(test)]
mod tests {
    use super::super::table::Row;
    use super::*;

    fn table(rows: Vec<(Vec<u16>, u16)>) -> DecisionTable {
        let width = rows[0].0.len();
        DecisionTable::new(
            (0..width).map(|i| format!("a{i}")).collect(),
            "d".into(),
            rows.into_iter()
                .map(|(c, d)| Row { conditions: c.into_iter().map(Some).collect(), decision: Some(d) })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_row_gives_one_certain_rule() {
        let m = induce_rules(&table(vec![(vec![1, 2, 0], 1)]));
        assert_eq!(m.rules.len(), 1);
        assert!(m.rules[0].is_certain());
        assert_eq!(m.rules[0].support, 1);
    }

    #[test]
    fn determining_attribute_is_all_that_remains() {
        // full factorial over (a0, a1, a2); the decision is a0
        let mut rows = Vec::new();
        for a in 0..3 {
            for b in 0..2 {
                for c in 0..2 {
                    rows.push((vec![a, b, c], a));
                }
            }
        }
        let t = table(rows);
        let m = induce_rules(&t);
        assert_eq!(m.rules.len(), 3);
        for r in &m.rules {
            assert_eq!(r.conditions.len(), 1);
            assert_eq!(r.conditions[0].attr, 0);
            assert!(r.is_certain());
            assert_eq!(r.support, 4);
        }
    }

    #[test]
    fn inconsistent_table_yields_possible_rules_only() {
        let t = table(vec![(vec![1], 0), (vec![1], 1)]);
        let m = induce_rules(&t);
        assert_eq!(m.rules.len(), 2);
        assert!(m.rules.iter().all(|r| r.certainty < 1.0));
        assert!(m.rules.iter().all(|r| (r.certainty - 0.5).abs() < 1e-12));
    }

    #[test]
    fn matrix_layout_is_rule_by_attribute() {
        let t = table(vec![(vec![0, 0], 0), (vec![1, 0], 1)]);
        let m = induce_rules(&t);
        let grid = m.matrix();
        assert_eq!(grid.len(), m.rules.len());
        assert!(grid.iter().all(|row| row.len() == 2));
        let json = m.to_json();
        assert_eq!(json["rules"].as_array().unwrap().len(), m.rules.len());
    }
}
