//! Observation parsing, preprocessing and sparse matrix construction.
//!
//! Input CSV header: `solute,solvent,ln_gamma,quality` with quality in
//! `{ok, poor}`. Poor-quality rows are dropped before duplicate
//! measurements of a pair are averaged.

use std::collections::{HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub solute: String,
    pub solvent: String,
    pub ln_gamma: f64,
    pub quality_ok: bool,
}

impl ObservationRecord {
    pub fn new(solute: impl Into<String>, solvent: impl Into<String>, ln_gamma: f64) -> Self {
        Self {
            solute: solute.into(),
            solvent: solvent.into(),
            ln_gamma,
            quality_ok: true,
        }
    }
}

pub const CSV_HEADER: [&str; 4] = ["solute", "solvent", "ln_gamma", "quality"];

/// Parses the observation CSV. A header-only (or empty) input yields no
/// records.
pub fn parse_observations<R: Read>(source: R) -> Result<Vec<ObservationRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut out = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 1;
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(line, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if idx == 0 {
            let header: Vec<&str> = row.iter().map(str::trim).collect();
            if header != CSV_HEADER {
                return Err(Error::Parse {
                    line,
                    message: format!("expected header `{}`", CSV_HEADER.join(",")),
                });
            }
            continue;
        }
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 columns, found {}", row.len()),
            });
        }
        let field = |k: usize| row[k].trim();
        let (solute, solvent) = (field(0), field(1));
        if solute.is_empty() || solvent.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty component key".into(),
            });
        }
        let ln_gamma: f64 = field(2).parse().map_err(|_| Error::Parse {
            line,
            message: format!("non-numeric ln_gamma `{}`", field(2)),
        })?;
        if !ln_gamma.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite ln_gamma `{}`", field(2)),
            });
        }
        let quality_ok = match field(3) {
            "ok" => true,
            "poor" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("quality must be `ok` or `poor`, got `{other}`"),
                })
            }
        };
        out.push(ObservationRecord {
            solute: solute.to_string(),
            solvent: solvent.to_string(),
            ln_gamma,
            quality_ok,
        });
    }
    Ok(out)
}

pub fn write_observations(records: &[ObservationRecord]) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in records {
        let q = if r.quality_ok { "ok" } else { "poor" };
        out.push_str(&format!("{},{},{},{}\n", r.solute, r.solvent, r.ln_gamma, q));
    }
    out
}

pub fn drop_poor_quality(records: Vec<ObservationRecord>) -> Vec<ObservationRecord> {
    records.into_iter().filter(|r| r.quality_ok).collect()
}

/// Collapses repeated measurements of a pair into their arithmetic mean,
/// keeping first-occurrence order.
pub fn deduplicate(records: &[ObservationRecord]) -> Vec<ObservationRecord> {
    let mut slot: HashMap<(&str, &str), usize> = HashMap::new();
    let mut acc: Vec<(ObservationRecord, f64, usize)> = Vec::new();
    for r in records {
        match slot.get(&(r.solute.as_str(), r.solvent.as_str())) {
            Some(&k) => {
                acc[k].1 += r.ln_gamma;
                acc[k].2 += 1;
            }
            None => {
                slot.insert((&r.solute, &r.solvent), acc.len());
                acc.push((r.clone(), r.ln_gamma, 1));
            }
        }
    }
    acc.into_iter()
        .map(|(mut r, sum, n)| {
            r.ln_gamma = if n == 1 { sum } else { sum / n as f64 };
            r
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<ObservationRecord>,
    pub removed_solutes: Vec<String>,
    pub removed_solvents: Vec<String>,
}

/// Repeatedly drops records whose solute or solvent has fewer than
/// `min_systems` remaining records until nothing changes.
pub fn filter_min_systems(records: &[ObservationRecord], min_systems: usize) -> FilterOutcome {
    let mut kept: Vec<ObservationRecord> = records.to_vec();
    loop {
        let mut solute_n: HashMap<&str, usize> = HashMap::new();
        let mut solvent_n: HashMap<&str, usize> = HashMap::new();
        for r in &kept {
            *solute_n.entry(&r.solute).or_default() += 1;
            *solvent_n.entry(&r.solvent).or_default() += 1;
        }
        let keep: Vec<bool> = kept
            .iter()
            .map(|r| solute_n[r.solute.as_str()] >= min_systems && solvent_n[r.solvent.as_str()] >= min_systems)
            .collect();
        if keep.iter().all(|&k| k) {
            break;
        }
        let mut it = keep.into_iter();
        kept.retain(|_| it.next().unwrap());
    }

    let removed = |keys: Vec<&str>, alive: HashSet<&str>| {
        let mut seen = HashSet::new();
        keys.into_iter()
            .filter(|k| !alive.contains(k) && seen.insert(*k))
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    let removed_solutes = removed(
        records.iter().map(|r| r.solute.as_str()).collect(),
        kept.iter().map(|r| r.solute.as_str()).collect(),
    );
    let removed_solvents = removed(
        records.iter().map(|r| r.solvent.as_str()).collect(),
        kept.iter().map(|r| r.solvent.as_str()).collect(),
    );
    FilterOutcome {
        kept,
        removed_solutes,
        removed_solvents,
    }
}

/// Sparse solute-by-solvent matrix with stable key-to-index maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyMatrix {
    solutes: Vec<String>,
    solvents: Vec<String>,
    solute_index: HashMap<String, usize>,
    solvent_index: HashMap<String, usize>,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl PropertyMatrix {
    /// Builds a matrix from explicit key lists and entries, checking every
    /// structural invariant except the minimum-count rule.
    pub fn from_parts(solutes: Vec<String>, solvents: Vec<String>, entries: Vec<Entry>) -> Result<Self> {
        let index = |keys: &[String], what: &str| -> Result<HashMap<String, usize>> {
            let mut m = HashMap::with_capacity(keys.len());
            for (i, k) in keys.iter().enumerate() {
                if m.insert(k.clone(), i).is_some() {
                    return Err(Error::contract(format!("duplicate {what} key `{k}`")));
                }
            }
            Ok(m)
        };
        let solute_index = index(&solutes, "solute")?;
        let solvent_index = index(&solvents, "solvent")?;
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.row >= solutes.len() || e.col >= solvents.len() {
                return Err(Error::contract(format!("entry ({}, {}) out of range", e.row, e.col)));
            }
            if !e.value.is_finite() {
                return Err(Error::contract(format!("non-finite entry at ({}, {})", e.row, e.col)));
            }
            if !seen.insert((e.row, e.col)) {
                return Err(Error::contract(format!("duplicate entry at ({}, {})", e.row, e.col)));
            }
        }
        Ok(Self {
            solutes,
            solvents,
            solute_index,
            solvent_index,
            entries,
        })
    }

    pub fn n_solutes(&self) -> usize {
        self.solutes.len()
    }

    pub fn n_solvents(&self) -> usize {
        self.solvents.len()
    }

    pub fn solutes(&self) -> &[String] {
        &self.solutes
    }

    pub fn solvents(&self) -> &[String] {
        &self.solvents
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn solute_row(&self, key: &str) -> Option<usize> {
        self.solute_index.get(key).copied()
    }

    pub fn solvent_col(&self, key: &str) -> Option<usize> {
        self.solvent_index.get(key).copied()
    }

    pub fn occupancy(&self) -> f64 {
        let cells = self.n_solutes() * self.n_solvents();
        if cells == 0 {
            0.0
        } else {
            self.len() as f64 / cells as f64
        }
    }

    pub fn records(&self) -> Vec<ObservationRecord> {
        self.entries
            .iter()
            .map(|e| ObservationRecord::new(&self.solutes[e.row], &self.solvents[e.col], e.value))
            .collect()
    }

    pub fn to_file(&self) -> MatrixFile {
        MatrixFile {
            solutes: self.solutes.clone(),
            solvents: self.solvents.clone(),
            entries: self.entries.iter().map(|e| (e.row, e.col, e.value)).collect(),
        }
    }

    pub fn from_file(f: MatrixFile) -> Result<Self> {
        let entries = f
            .entries
            .into_iter()
            .map(|(row, col, value)| Entry { row, col, value })
            .collect();
        Self::from_parts(f.solutes, f.solvents, entries)
    }
}

/// JSON wire form: `{"solutes": [...], "solvents": [...], "entries": [[row, col, value], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub solutes: Vec<String>,
    pub solvents: Vec<String>,
    pub entries: Vec<(usize, usize, f64)>,
}

/// Indexes solutes and solvents by first occurrence.
pub fn build_matrix(records: &[ObservationRecord]) -> Result<PropertyMatrix> {
    let mut solutes = Vec::new();
    let mut solvents = Vec::new();
    let mut solute_index: HashMap<String, usize> = HashMap::new();
    let mut solvent_index: HashMap<String, usize> = HashMap::new();
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let row = *solute_index.entry(r.solute.clone()).or_insert_with(|| {
            solutes.push(r.solute.clone());
            solutes.len() - 1
        });
        let col = *solvent_index.entry(r.solvent.clone()).or_insert_with(|| {
            solvents.push(r.solvent.clone());
            solvents.len() - 1
        });
        entries.push(Entry {
            row,
            col,
            value: r.ln_gamma,
        });
    }
    PropertyMatrix::from_parts(solutes, solvents, entries)
}

/// Quality filter, averaging, minimum-systems fixpoint and matrix build.
pub fn preprocess(records: Vec<ObservationRecord>, min_systems: usize) -> Result<(PropertyMatrix, FilterOutcome)> {
    let deduped = deduplicate(&drop_poor_quality(records));
    let outcome = filter_min_systems(&deduped, min_systems);
    let matrix = build_matrix(&outcome.kept)?;
    Ok((matrix, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(s: &str, w: &str, v: f64) -> ObservationRecord {
        ObservationRecord::new(s, w, v)
    }

    fn pairs(rs: &[ObservationRecord]) -> Vec<(String, String, f64)> {
        rs.iter().map(|r| (r.solute.clone(), r.solvent.clone(), r.ln_gamma)).collect()
    }

    #[test]
    fn parses_rows_and_quality() {
        let src = "solute,solvent,ln_gamma,quality\r\nS1,W1,2.5,ok\nS2,W1,-0.25,poor\n";
        let rs = parse_observations(src.as_bytes()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0], rec("S1", "W1", 2.5));
        assert!(!rs[1].quality_ok);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "solute,solvent,ln_gamma,quality\nS1,W1,1.0,ok\nS1,W1,abc,ok\n";
        match parse_observations(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let short = "solute,solvent,ln_gamma,quality\nS1,W1,1.0\n";
        assert!(matches!(parse_observations(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let quality = "solute,solvent,ln_gamma,quality\nS1,W1,1.0,fine\n";
        assert!(parse_observations(quality.as_bytes()).is_err());
    }

    #[test]
    fn header_only_and_empty_input_give_no_records() {
        assert!(parse_observations("solute,solvent,ln_gamma,quality\n".as_bytes()).unwrap().is_empty());
        assert!(parse_observations("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn deduplicate_averages_per_pair() {
        assert_eq!(pairs(&deduplicate(&[rec("S", "W", 1.0), rec("S", "W", 2.0)])), pairs(&[rec("S", "W", 1.5)]));
        assert_eq!(pairs(&deduplicate(&[rec("S", "W", 3.0)])), pairs(&[rec("S", "W", 3.0)]));
        let out = deduplicate(&[rec("S", "W", 1.0), rec("S", "V", 2.0), rec("S", "W", 2.0)]);
        assert_eq!(pairs(&out), pairs(&[rec("S", "W", 1.5), rec("S", "V", 2.0)]));
    }

    #[test]
    fn fixpoint_filter_cascades() {
        let grid: Vec<_> = ["A", "B", "C"]
            .iter()
            .flat_map(|s| ["X", "Y", "Z"].iter().map(move |w| rec(s, w, 1.0)))
            .collect();
        let out = filter_min_systems(&grid, 2);
        assert_eq!(out.kept.len(), 9);
        assert!(out.removed_solutes.is_empty() && out.removed_solvents.is_empty());

        let chain = [rec("A", "X", 1.0), rec("A", "Y", 1.0), rec("B", "X", 1.0)];
        let out = filter_min_systems(&chain, 2);
        assert!(out.kept.is_empty());
        assert_eq!(out.removed_solutes, vec!["A", "B"]);
        assert_eq!(out.removed_solvents, vec!["X", "Y"]);

        let square = [rec("A", "X", 1.0), rec("A", "Y", 1.0), rec("B", "X", 1.0), rec("B", "Y", 1.0)];
        assert_eq!(filter_min_systems(&square, 2).kept.len(), 4);
    }

    #[test]
    fn single_solvent_column_is_rejected_upstream() {
        let rs = [rec("A", "X", 1.0), rec("B", "X", 2.0), rec("C", "X", 3.0)];
        let (m, out) = preprocess(rs.to_vec(), 2).unwrap();
        assert!(m.is_empty());
        assert_eq!(out.removed_solutes.len(), 3);
    }

    #[test]
    fn build_matrix_indexes_by_first_occurrence() {
        let rs = [rec("B", "Y", 1.0), rec("A", "Y", 2.0), rec("B", "X", 3.0), rec("A", "X", 4.0)];
        let m = build_matrix(&rs).unwrap();
        assert_eq!((m.n_solutes(), m.n_solvents()), (2, 2));
        assert_eq!(m.occupancy(), 1.0);
        assert_eq!(m.solutes(), ["B", "A"]);
        assert_eq!(m.solvent_col("X"), Some(1));
        let dup = [rec("A", "X", 1.0), rec("A", "X", 2.0)];
        assert!(matches!(build_matrix(&dup), Err(Error::Contract(_))));
    }

    fn arb_records() -> impl Strategy<Value = Vec<ObservationRecord>> {
        prop::collection::vec((0u8..6, 0u8..6, -5.0f64..5.0), 0..40).prop_map(|v| {
            v.into_iter()
                .map(|(s, w, x)| rec(&format!("S{s}"), &format!("W{w}"), x))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn deduplicate_is_idempotent(rs in arb_records()) {
            let once = deduplicate(&rs);
            prop_assert_eq!(pairs(&deduplicate(&once)), pairs(&once));
        }

        #[test]
        fn filter_is_idempotent_and_meets_threshold(rs in arb_records()) {
            let once = filter_min_systems(&deduplicate(&rs), 2).kept;
            let twice = filter_min_systems(&once, 2).kept;
            prop_assert_eq!(pairs(&once), pairs(&twice));
            for r in &once {
                prop_assert!(once.iter().filter(|x| x.solute == r.solute).count() >= 2);
                prop_assert!(once.iter().filter(|x| x.solvent == r.solvent).count() >= 2);
            }
        }

        #[test]
        fn mean_is_order_invariant(rs in arb_records(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = rs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut a = pairs(&deduplicate(&rs));
            let mut b = pairs(&deduplicate(&shuffled));
            a.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
            b.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!((&x.0, &x.1), (&y.0, &y.1));
                prop_assert!((x.2 - y.2).abs() <= 1e-12);
            }
        }

        #[test]
        fn matrix_survives_csv_and_json_round_trip(rs in arb_records()) {
            let (m, _) = preprocess(rs, 2).unwrap();
            let reparsed = parse_observations(write_observations(&m.records()).as_bytes()).unwrap();
            prop_assert_eq!(&build_matrix(&reparsed).unwrap(), &m);
            let json = serde_json::to_string(&m.to_file()).unwrap();
            let back = PropertyMatrix::from_file(serde_json::from_str(&json).unwrap()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
