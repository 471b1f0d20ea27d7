//! Employment-composition reweighting: coverage filtering, employment-weighted
//! exposure and female/male exposure gaps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numeric::compensated_sum;
use crate::types::{ExposedMargin, UnknownVariant};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReweightError {
    #[error("negative employment count {count} for {key}")]
    NegativeCount { key: String, count: f64 },
    #[error("duplicate employment cell {0}")]
    DuplicateCell(String),
    #[error("{iso3}: no usable weight mass after dropping cells without values")]
    ZeroMass { iso3: String },
    #[error("female and male weights use different schemes: {0}")]
    SchemeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Total,
    Female,
    Male,
}

impl FromStr for Sex {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "total" | "t" => Ok(Sex::Total),
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            _ => Err(UnknownVariant { kind: "sex", value: s.to_string() }),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Total => "total",
            Sex::Female => "female",
            Sex::Male => "male",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmploymentRow {
    pub iso3: String,
    pub year: i32,
    pub sex: Sex,
    /// ISCO major/sub-major group or ISIC division code.
    pub cell: String,
    pub count: f64,
}

/// Raw employment counts, unique by (iso3, year, sex, cell).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmploymentTable {
    rows: Vec<EmploymentRow>,
}

impl EmploymentTable {
    pub fn new(rows: Vec<EmploymentRow>) -> Result<Self, ReweightError> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            let key = format!("{}/{}/{}/{}", r.iso3, r.year, r.sex, r.cell);
            if r.count < 0.0 || !r.count.is_finite() {
                return Err(ReweightError::NegativeCount { key, count: r.count });
            }
            if !seen.insert((r.iso3.clone(), r.year, r.sex, r.cell.clone())) {
                return Err(ReweightError::DuplicateCell(key));
            }
        }
        Ok(EmploymentTable { rows })
    }

    pub fn rows(&self) -> &[EmploymentRow] {
        &self.rows
    }

    /// Counts grouped by (iso3, sex, year), cells sorted.
    fn grouped(&self) -> BTreeMap<(String, Sex, i32), BTreeMap<String, f64>> {
        let mut out: BTreeMap<(String, Sex, i32), BTreeMap<String, f64>> = BTreeMap::new();
        for r in &self.rows {
            out.entry((r.iso3.clone(), r.sex, r.year)).or_default().insert(r.cell.clone(), r.count);
        }
        out
    }
}

/// Employment shares for one (iso3, sex), summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub iso3: String,
    pub sex: Sex,
    pub year: i32,
    pub cells: Vec<(String, f64)>,
}

impl WeightVector {
    /// Normalizes raw counts (cells sorted by id).
    pub fn from_counts(iso3: &str, sex: Sex, year: i32, counts: &BTreeMap<String, f64>) -> Option<Self> {
        let total = compensated_sum(counts.values().copied());
        if total <= 0.0 {
            return None;
        }
        let cells = counts.iter().map(|(c, n)| (c.clone(), n / total)).collect();
        Some(WeightVector { iso3: iso3.to_string(), sex, year, cells })
    }

    pub fn share(&self, cell: &str) -> Option<f64> {
        self.cells.iter().find(|(c, _)| c == cell).map(|(_, s)| *s)
    }

    fn cell_ids(&self) -> BTreeSet<&str> {
        self.cells.iter().map(|(c, _)| c.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRule {
    pub window: RangeInclusive<i32>,
    pub min_groups: usize,
}

impl Default for CoverageRule {
    fn default() -> Self {
        CoverageRule { window: 2015..=2025, min_groups: 8 }
    }
}

fn qualifies(counts: &BTreeMap<String, f64>, rule: &CoverageRule) -> bool {
    counts.values().filter(|&&n| n > 0.0).count() >= rule.min_groups
}

/// Selects one usable year per (iso3, sex) and converts counts to shares.
///
/// Total employment takes the latest qualifying year in the window. Female and
/// male vectors take the latest year in which both qualify. Countries with no
/// qualifying year are left out.
pub fn coverage_filter(table: &EmploymentTable, rule: &CoverageRule) -> Vec<WeightVector> {
    let grouped = table.grouped();
    let mut years: BTreeMap<(String, Sex), BTreeSet<i32>> = BTreeMap::new();
    for ((iso3, sex, year), counts) in &grouped {
        if rule.window.contains(year) && qualifies(counts, rule) {
            years.entry((iso3.clone(), *sex)).or_default().insert(*year);
        }
    }

    let mut out = Vec::new();
    let isos: BTreeSet<&String> = years.keys().map(|(iso, _)| iso).collect();
    for iso3 in isos {
        let get = |sex| years.get(&(iso3.clone(), sex));
        if let Some(&year) = get(Sex::Total).and_then(|ys| ys.last()) {
            out.extend(WeightVector::from_counts(iso3, Sex::Total, year, &grouped[&(iso3.clone(), Sex::Total, year)]));
        }
        if let (Some(f), Some(m)) = (get(Sex::Female), get(Sex::Male)) {
            if let Some(&year) = f.intersection(m).last() {
                for sex in [Sex::Female, Sex::Male] {
                    out.extend(WeightVector::from_counts(iso3, sex, year, &grouped[&(iso3.clone(), sex, year)]));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedValue {
    pub value: f64,
    /// Share of employment that had a cell value before renormalization.
    pub coverage: f64,
    pub dropped_cells: Vec<String>,
}

/// Share-weighted mean of cell values. Cells without a value are dropped and
/// the remaining shares renormalized.
pub fn employment_weighted_exposure(
    cell_values: &BTreeMap<String, f64>,
    weights: &WeightVector,
) -> Result<WeightedValue, ReweightError> {
    let mut dropped_cells = Vec::new();
    let mut used = Vec::new();
    for (cell, share) in &weights.cells {
        match cell_values.get(cell) {
            Some(v) => used.push((*share, *v)),
            None => dropped_cells.push(cell.clone()),
        }
    }
    let mass = compensated_sum(used.iter().map(|(s, _)| *s));
    if mass <= 0.0 {
        return Err(ReweightError::ZeroMass { iso3: weights.iso3.clone() });
    }
    let value = compensated_sum(used.iter().map(|(s, v)| s * v)) / mass;
    Ok(WeightedValue { value, coverage: mass, dropped_cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub iso3: String,
    pub year: i32,
    pub linkage_weighted: f64,
    pub employment_weighted: f64,
    /// employment_weighted - linkage_weighted
    pub adjustment: f64,
    pub coverage: f64,
}

/// Compares the employment-weighted value against the linkage-weighted
/// baseline computed from the same cell values.
pub fn reweighting_adjustment(
    cell_values: &BTreeMap<String, f64>,
    linkage_weights: &WeightVector,
    employment: &WeightVector,
) -> Result<Adjustment, ReweightError> {
    let base = employment_weighted_exposure(cell_values, linkage_weights)?;
    let emp = employment_weighted_exposure(cell_values, employment)?;
    Ok(Adjustment {
        iso3: employment.iso3.clone(),
        year: employment.year,
        linkage_weighted: base.value,
        employment_weighted: emp.value,
        adjustment: emp.value - base.value,
        coverage: emp.coverage,
    })
}

/// Per-cell margin contributions x_jm (substitute, augment, both), as
/// fractions of all tasks in the cell.
pub type MarginValues = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderGap {
    pub iso3: String,
    pub year: i32,
    /// Female minus male, in percentage points, indexed by [`ExposedMargin::index`].
    pub gap_pp: [f64; 3],
    pub coverage_female: f64,
    pub coverage_male: f64,
}

impl GenderGap {
    pub fn gap(&self, margin: ExposedMargin) -> f64 {
        self.gap_pp[margin.index()]
    }
}

fn check_pair(female: &WeightVector, male: &WeightVector) -> Result<(), ReweightError> {
    if female.sex != Sex::Female || male.sex != Sex::Male {
        return Err(ReweightError::SchemeMismatch(format!("expected female/male, got {}/{}", female.sex, male.sex)));
    }
    if female.iso3 != male.iso3 || female.year != male.year {
        return Err(ReweightError::SchemeMismatch(format!(
            "{}/{} vs {}/{}",
            female.iso3, female.year, male.iso3, male.year
        )));
    }
    if female.cell_ids() != male.cell_ids() {
        return Err(ReweightError::SchemeMismatch(format!("{}: cell sets differ", female.iso3)));
    }
    Ok(())
}

fn weighted_margins(values: &BTreeMap<String, MarginValues>, w: &WeightVector) -> Result<([f64; 3], f64), ReweightError> {
    let mut out = [0.0; 3];
    let mut coverage = 0.0;
    for (m, slot) in out.iter_mut().enumerate() {
        let per_cell: BTreeMap<String, f64> = values.iter().map(|(c, x)| (c.clone(), x[m])).collect();
        let wv = employment_weighted_exposure(&per_cell, w)?;
        *slot = wv.value;
        coverage = wv.coverage;
    }
    Ok((out, coverage))
}

/// Female-minus-male employment-weighted exposure per margin, in percentage points.
pub fn gender_gap(
    cell_margin_values: &BTreeMap<String, MarginValues>,
    female: &WeightVector,
    male: &WeightVector,
) -> Result<GenderGap, ReweightError> {
    check_pair(female, male)?;
    let (ef, coverage_female) = weighted_margins(cell_margin_values, female)?;
    let (em, coverage_male) = weighted_margins(cell_margin_values, male)?;
    let mut gap_pp = [0.0; 3];
    for m in 0..3 {
        gap_pp[m] = (ef[m] - em[m]) * 100.0;
    }
    Ok(GenderGap { iso3: female.iso3.clone(), year: female.year, gap_pp, coverage_female, coverage_male })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub iso3: String,
    pub cell: String,
    /// Female minus male employment share, percentage points.
    pub y: f64,
    /// Margin share scaled so a unit change is 10 percentage points.
    pub x: [f64; 3],
}

/// One row per country x cell for the cell-level sorting regression.
///
/// Cells need a margin value and a share in both sex vectors.
pub fn gender_fe_panel(
    cell_margin_values: &BTreeMap<String, BTreeMap<String, MarginValues>>,
    female: &[WeightVector],
    male: &[WeightVector],
) -> Result<Vec<PanelRow>, ReweightError> {
    let males: BTreeMap<&str, &WeightVector> = male.iter().map(|w| (w.iso3.as_str(), w)).collect();
    let mut rows = Vec::new();
    let mut females: Vec<&WeightVector> = female.iter().collect();
    females.sort_by(|a, b| a.iso3.cmp(&b.iso3));
    for f in females {
        let (Some(m), Some(values)) = (males.get(f.iso3.as_str()), cell_margin_values.get(&f.iso3)) else {
            continue;
        };
        check_pair(f, m)?;
        for (cell, fs) in &f.cells {
            let (Some(ms), Some(x)) = (m.share(cell), values.get(cell)) else {
                continue;
            };
            rows.push(PanelRow {
                iso3: f.iso3.clone(),
                cell: cell.clone(),
                y: (fs - ms) * 100.0,
                x: [x[0] * 10.0, x[1] * 10.0, x[2] * 10.0],
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iso3: &str, year: i32, sex: Sex, cell: &str, count: f64) -> EmploymentRow {
        EmploymentRow { iso3: iso3.into(), year, sex, cell: cell.into(), count }
    }

    fn wv(iso3: &str, sex: Sex, cells: &[(&str, f64)]) -> WeightVector {
        WeightVector { iso3: iso3.into(), sex, year: 2022, cells: cells.iter().map(|(c, s)| (c.to_string(), *s)).collect() }
    }

    #[test]
    fn latest_year_with_enough_groups() {
        let mut rows = Vec::new();
        for g in 1..=9 {
            rows.push(row("AAA", 2023, Sex::Total, &g.to_string(), 10.0));
        }
        for g in 1..=7 {
            rows.push(row("AAA", 2024, Sex::Total, &g.to_string(), 10.0));
        }
        for g in 1..=7 {
            rows.push(row("BBB", 2020, Sex::Total, &g.to_string(), 10.0));
        }
        let out = coverage_filter(&EmploymentTable::new(rows).unwrap(), &CoverageRule::default());
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].iso3.as_str(), out[0].year), ("AAA", 2023));
        assert_eq!(out[0].cells.len(), 9);
    }

    #[test]
    fn sexes_share_the_latest_common_year() {
        let mut rows = Vec::new();
        for g in 1..=8 {
            let c = g.to_string();
            for y in [2021, 2023] {
                rows.push(row("AAA", y, Sex::Female, &c, 5.0));
            }
            for y in [2021, 2022] {
                rows.push(row("AAA", y, Sex::Male, &c, 5.0));
            }
        }
        let out = coverage_filter(&EmploymentTable::new(rows).unwrap(), &CoverageRule::default());
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|w| w.year == 2021));
    }

    #[test]
    fn zero_counts_do_not_count_toward_coverage() {
        let mut rows = Vec::new();
        for g in 1..=9 {
            rows.push(row("AAA", 2020, Sex::Total, &g.to_string(), if g <= 2 { 0.0 } else { 3.0 }));
        }
        assert!(coverage_filter(&EmploymentTable::new(rows).unwrap(), &CoverageRule::default()).is_empty());
    }

    #[test]
    fn out_of_window_years_are_ignored() {
        let rows = (1..=9).map(|g| row("AAA", 2013, Sex::Total, &g.to_string(), 1.0)).collect();
        assert!(coverage_filter(&EmploymentTable::new(rows).unwrap(), &CoverageRule::default()).is_empty());
    }

    #[test]
    fn uniform_and_degenerate_weights() {
        let values: BTreeMap<String, f64> = [("1", 0.2), ("2", 0.5), ("3", 0.8)].iter().map(|(c, v)| (c.to_string(), *v)).collect();
        let uniform = wv("AAA", Sex::Total, &[("1", 1.0 / 3.0), ("2", 1.0 / 3.0), ("3", 1.0 / 3.0)]);
        assert!((employment_weighted_exposure(&values, &uniform).unwrap().value - 0.5).abs() < 1e-12);
        let point = wv("AAA", Sex::Total, &[("1", 0.0), ("2", 1.0), ("3", 0.0)]);
        assert_eq!(employment_weighted_exposure(&values, &point).unwrap().value, 0.5);
    }

    #[test]
    fn missing_cells_are_dropped_and_reported() {
        let values: BTreeMap<String, f64> = [("1".to_string(), 0.4)].into_iter().collect();
        let w = wv("AAA", Sex::Total, &[("0", 0.2), ("1", 0.8)]);
        let out = employment_weighted_exposure(&values, &w).unwrap();
        assert!((out.value - 0.4).abs() < 1e-15);
        assert!((out.coverage - 0.8).abs() < 1e-15);
        assert_eq!(out.dropped_cells, vec!["0".to_string()]);
        let w = wv("AAA", Sex::Total, &[("0", 1.0)]);
        assert!(matches!(employment_weighted_exposure(&values, &w), Err(ReweightError::ZeroMass { .. })));
    }

    #[test]
    fn adjustment_is_difference_from_baseline() {
        let values: BTreeMap<String, f64> = [("1", 0.2), ("2", 0.6)].iter().map(|(c, v)| (c.to_string(), *v)).collect();
        let link = wv("AAA", Sex::Total, &[("1", 0.5), ("2", 0.5)]);
        let emp = wv("AAA", Sex::Total, &[("1", 0.75), ("2", 0.25)]);
        let adj = reweighting_adjustment(&values, &link, &emp).unwrap();
        assert!((adj.linkage_weighted - 0.4).abs() < 1e-12);
        assert!((adj.employment_weighted - 0.3).abs() < 1e-12);
        assert!((adj.adjustment + 0.1).abs() < 1e-12);
    }

    fn two_cell_values() -> BTreeMap<String, MarginValues> {
        [("A".to_string(), [0.30, 0.05, 0.10]), ("B".to_string(), [0.10, 0.05, 0.20])].into_iter().collect()
    }

    #[test]
    fn identical_shares_give_zero_gap() {
        let f = wv("AAA", Sex::Female, &[("A", 0.4), ("B", 0.6)]);
        let m = wv("AAA", Sex::Male, &[("A", 0.4), ("B", 0.6)]);
        let g = gender_gap(&two_cell_values(), &f, &m).unwrap();
        assert!(g.gap_pp.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn female_concentration_in_substitution_cell() {
        let f = wv("AAA", Sex::Female, &[("A", 0.9), ("B", 0.1)]);
        let m = wv("AAA", Sex::Male, &[("A", 0.2), ("B", 0.8)]);
        let g = gender_gap(&two_cell_values(), &f, &m).unwrap();
        // E_F,sub = 0.9*0.3 + 0.1*0.1 = 0.28; E_M,sub = 0.2*0.3 + 0.8*0.1 = 0.14
        assert!((g.gap(ExposedMargin::Substitute) - 14.0).abs() < 1e-9);
        // both: 0.9*0.1+0.1*0.2 = 0.11 vs 0.2*0.1+0.8*0.2 = 0.18
        assert!((g.gap(ExposedMargin::Both) + 7.0).abs() < 1e-9);
        assert!(g.gap(ExposedMargin::Augment).abs() < 1e-12);

        let f2 = WeightVector { sex: Sex::Female, ..m.clone() };
        let m2 = WeightVector { sex: Sex::Male, ..f.clone() };
        let swapped = gender_gap(&two_cell_values(), &f2, &m2).unwrap();
        for k in 0..3 {
            assert!((swapped.gap_pp[k] + g.gap_pp[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn scheme_mismatch_is_an_error() {
        let f = wv("AAA", Sex::Female, &[("A", 0.5), ("B", 0.5)]);
        let m = wv("AAA", Sex::Male, &[("A", 0.5), ("C", 0.5)]);
        assert!(matches!(gender_gap(&two_cell_values(), &f, &m), Err(ReweightError::SchemeMismatch(_))));
    }

    #[test]
    fn panel_rows_and_scaling() {
        let values: BTreeMap<String, BTreeMap<String, MarginValues>> = ["AAA", "BBB"]
            .iter()
            .map(|iso| {
                let cells = [("1", [0.1, 0.2, 0.3]), ("2", [0.2, 0.0, 0.1]), ("3", [0.05, 0.05, 0.05])]
                    .iter()
                    .map(|(c, x)| (c.to_string(), *x))
                    .collect();
                (iso.to_string(), cells)
            })
            .collect();
        let cells = [("1", 0.2), ("2", 0.3), ("3", 0.5)];
        let female = vec![wv("AAA", Sex::Female, &cells), wv("BBB", Sex::Female, &cells)];
        let male = vec![wv("AAA", Sex::Male, &cells), wv("BBB", Sex::Male, &cells)];
        let rows = gender_fe_panel(&values, &female, &male).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.y == 0.0));
        assert!((rows[0].x[0] - 1.0).abs() < 1e-15);
    }
}
