//! Rough-set operations against brute-force enumeration.

use std::collections::BTreeSet;

use gnm_core::rough::{
    indiscernibility, induce_rules, lower_approximation_on, upper_approximation_on, DecisionTable, Row, Value,
};
use proptest::prelude::*;

fn table_strategy(max_rows: usize, max_attrs: usize, max_vals: u16) -> impl Strategy<Value = DecisionTable> {
    (1..=max_rows, 1..=max_attrs).prop_flat_map(move |(rows, attrs)| {
        let value = prop_oneof![9 => (0..max_vals).prop_map(Some), 1 => Just(None::<u16>)];
        proptest::collection::vec(
            (proptest::collection::vec(value, attrs), (0..max_vals).prop_map(Some)),
            rows,
        )
        .prop_map(move |rs| {
            DecisionTable::new(
                (0..attrs).map(|i| format!("a{i}")).collect(),
                "d".into(),
                rs.into_iter().map(|(conditions, decision)| Row { conditions, decision }).collect(),
            )
            .unwrap()
        })
    })
}

fn agree(t: &DecisionTable, i: usize, j: usize, attrs: &[usize]) -> bool {
    attrs.iter().all(|&a| t.rows[i].conditions[a] == t.rows[j].conditions[a])
}

/// The class of each row by pairwise comparison.
fn oracle_partition(t: &DecisionTable, attrs: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    (0..t.len())
        .map(|i| (0..t.len()).filter(|&j| agree(t, i, j, attrs)).collect())
        .collect()
}

fn oracle_lower(t: &DecisionTable, attrs: &[usize], c: &BTreeSet<usize>) -> BTreeSet<usize> {
    (0..t.len()).filter(|&i| (0..t.len()).all(|j| !agree(t, i, j, attrs) || c.contains(&j))).collect()
}

fn oracle_upper(t: &DecisionTable, attrs: &[usize], c: &BTreeSet<usize>) -> BTreeSet<usize> {
    (0..t.len()).filter(|&i| (0..t.len()).any(|j| agree(t, i, j, attrs) && c.contains(&j))).collect()
}

fn subsets(n: usize) -> Vec<Vec<usize>> {
    (0..1usize << n).map(|m| (0..n).filter(|b| m >> b & 1 == 1).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn approximations_match_enumeration(t in table_strategy(8, 4, 3), mask in any::<u8>()) {
        let arbitrary: BTreeSet<usize> = (0..t.len()).filter(|i| mask >> i & 1 == 1).collect();
        for attrs in subsets(t.condition_attrs.len()) {
            let blocks = indiscernibility(&t, &attrs).unwrap();
            let got: BTreeSet<BTreeSet<usize>> = blocks.iter().map(|b| b.iter().copied().collect()).collect();
            prop_assert_eq!(&got, &oracle_partition(&t, &attrs));
            let covered: usize = blocks.iter().map(Vec::len).sum();
            prop_assert_eq!(covered, t.len());

            let mut concepts: Vec<BTreeSet<usize>> = t.decision_values().into_iter().map(|d| t.concept(d)).collect();
            concepts.push(arbitrary.clone());
            for c in &concepts {
                let lo = lower_approximation_on(&t, &attrs, c).unwrap();
                let up = upper_approximation_on(&t, &attrs, c).unwrap();
                prop_assert_eq!(&lo, &oracle_lower(&t, &attrs, c));
                prop_assert_eq!(&up, &oracle_upper(&t, &attrs, c));
                prop_assert!(lo.is_subset(c) && c.is_subset(&up));
            }
        }
    }

    #[test]
    fn certain_rules_are_sound_and_possible_rules_uncertain(t in table_strategy(40, 5, 3)) {
        let m = induce_rules(&t);
        for r in &m.rules {
            let matched: Vec<usize> = (0..t.len()).filter(|&i| r.matches(&t.rows[i].conditions)).collect();
            prop_assert!(!matched.is_empty());
            let hits = matched.iter().filter(|&&i| t.rows[i].decision == r.decision_value).count();
            prop_assert_eq!(hits, r.support);
            if r.is_certain() {
                prop_assert_eq!(hits, matched.len());
            } else {
                prop_assert!(r.certainty < 1.0 && r.certainty > 0.0);
                prop_assert!((r.certainty - hits as f64 / matched.len() as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn every_row_is_covered_by_a_rule_for_its_decision(t in table_strategy(30, 4, 3)) {
        let m = induce_rules(&t);
        for row in &t.rows {
            prop_assert!(m.rules.iter().any(|r| r.decision_value == row.decision && r.matches(&row.conditions)));
        }
    }

    #[test]
    fn csv_round_trip(t in table_strategy(10, 4, 3)) {
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = DecisionTable::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, t);
    }
}

#[test]
fn absent_values_form_their_own_class() {
    let v = |x: Option<u16>| -> Vec<Value> { vec![x] };
    let t = DecisionTable::new(
        vec!["a".into()],
        "d".into(),
        vec![
            Row { conditions: v(None), decision: Some(0) },
            Row { conditions: v(Some(0)), decision: Some(1) },
            Row { conditions: v(None), decision: Some(0) },
        ],
    )
    .unwrap();
    assert_eq!(indiscernibility(&t, &[0]).unwrap(), vec![vec![0, 2], vec![1]]);
}
