use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use thiserror::Error;

/// A discretized cell. `None` is the dedicated "absent" category.
pub type Value = Option<u16>;

pub const ABSENT: &str = "absent";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Row {
    pub conditions: Vec<Value>,
    pub decision: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTable {
    pub condition_attrs: Vec<String>,
    pub decision_attr: String,
    pub rows: Vec<Row>,
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("row {row} has {got} condition values, expected {expected}")]
    Width { row: usize, got: usize, expected: usize },
    #[error("attribute index {0} out of range")]
    UnknownAttribute(usize),
    #[error("row index {0} out of range")]
    UnknownRow(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv header needs at least one column")]
    EmptyHeader,
    #[error("bad cell {cell:?} in row {row}")]
    BadCell { row: usize, cell: String },
}

impl DecisionTable {
    pub fn new(condition_attrs: Vec<String>, decision_attr: String, rows: Vec<Row>) -> Result<Self, TableError> {
        let expected = condition_attrs.len();
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.conditions.len() != expected) {
            return Err(TableError::Width { row, got: r.conditions.len(), expected });
        }
        Ok(Self { condition_attrs, decision_attr, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn all_attrs(&self) -> Vec<usize> {
        (0..self.condition_attrs.len()).collect()
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.condition_attrs.iter().position(|a| a == name)
    }

    /// Rows carrying `decision` on the decision attribute.
    pub fn concept(&self, decision: Value) -> BTreeSet<usize> {
        self.rows.iter().enumerate().filter(|(_, r)| r.decision == decision).map(|(i, _)| i).collect()
    }

    pub fn decision_values(&self) -> BTreeSet<Value> {
        self.rows.iter().map(|r| r.decision).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TableError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.condition_attrs.iter().map(String::as_str).collect();
        header.push(&self.decision_attr);
        out.write_record(&header)?;
        for r in &self.rows {
            let cells: Vec<String> = r.conditions.iter().chain(std::iter::once(&r.decision)).map(|v| cell(*v)).collect();
            out.write_record(&cells)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a table whose last column is the decision attribute.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, TableError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let (decision_attr, conds) = header.split_last().ok_or(TableError::EmptyHeader)?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut vals = rec
                .iter()
                .map(|c| parse_cell(c).ok_or_else(|| TableError::BadCell { row: i, cell: c.to_owned() }))
                .collect::<Result<Vec<_>, _>>()?;
            let decision = vals.pop().ok_or(TableError::Width { row: i, got: 0, expected: conds.len() })?;
            rows.push(Row { conditions: vals, decision });
        }
        Self::new(conds.to_vec(), decision_attr.clone(), rows)
    }
}

fn cell(v: Value) -> String {
    v.map_or_else(|| ABSENT.to_owned(), |c| c.to_string())
}

fn parse_cell(s: &str) -> Option<Value> {
    if s == ABSENT {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

/// Groups rows that agree on every attribute in `attrs`. Blocks are ordered
/// by their smallest row index; an empty attribute set yields a single block.
pub fn indiscernibility(table: &DecisionTable, attrs: &[usize]) -> Result<Vec<Vec<usize>>, TableError> {
    if let Some(&bad) = attrs.iter().find(|&&a| a >= table.condition_attrs.len()) {
        return Err(TableError::UnknownAttribute(bad));
    }
    let mut blocks: BTreeMap<Vec<Value>, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        let key: Vec<Value> = attrs.iter().map(|&a| r.conditions[a]).collect();
        blocks.entry(key).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = blocks.into_values().collect();
    out.sort_by_key(|b| b[0]);
    Ok(out)
}

fn check_concept(table: &DecisionTable, concept: &BTreeSet<usize>) -> Result<(), TableError> {
    match concept.iter().next_back() {
        Some(&max) if max >= table.len() => Err(TableError::UnknownRow(max)),
        _ => Ok(()),
    }
}

/// Union of the indiscernibility blocks (over `attrs`) fully inside `concept`.
pub fn lower_approximation_on(
    table: &DecisionTable,
    attrs: &[usize],
    concept: &BTreeSet<usize>,
) -> Result<BTreeSet<usize>, TableError> {
    check_concept(table, concept)?;
    Ok(indiscernibility(table, attrs)?
        .into_iter()
        .filter(|b| b.iter().all(|i| concept.contains(i)))
        .flatten()
        .collect())
}

/// Union of the indiscernibility blocks (over `attrs`) that touch `concept`.
pub fn upper_approximation_on(
    table: &DecisionTable,
    attrs: &[usize],
    concept: &BTreeSet<usize>,
) -> Result<BTreeSet<usize>, TableError> {
    check_concept(table, concept)?;
    Ok(indiscernibility(table, attrs)?
        .into_iter()
        .filter(|b| b.iter().any(|i| concept.contains(i)))
        .flatten()
        .collect())
}

/// Lower approximation over all condition attributes.
pub fn lower_approximation(table: &DecisionTable, concept: &BTreeSet<usize>) -> Result<BTreeSet<usize>, TableError> {
    lower_approximation_on(table, &table.all_attrs(), concept)
}

/// Upper approximation over all condition attributes.
pub fn upper_approximation(table: &DecisionTable, concept: &BTreeSet<usize>) -> Result<BTreeSet<usize>, TableError> {
    upper_approximation_on(table, &table.all_attrs(), concept)
}
