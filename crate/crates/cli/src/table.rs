//! Column-named numeric tables for the stats commands.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context as _, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Rows kept after dropping any with a missing or non-numeric value in the
/// requested numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub ids: Vec<String>,
    /// Column-major numeric values, in request order.
    pub values: Vec<Vec<f64>>,
    /// Requested label columns, column-major.
    pub labels: Vec<Vec<String>>,
    pub dropped: usize,
}

impl Selection {
    /// Row-major view of the numeric columns.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.ids.len()).map(|i| self.values.iter().map(|c| c[i]).collect()).collect()
    }
}

fn missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

impl DataTable {
    pub fn read(path: &Path) -> Result<DataTable> {
        let file = std::fs::File::open(path).with_context(|| format!("{}", path.display()))?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
        let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.with_context(|| format!("{}", path.display()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(DataTable { columns, rows })
    }

    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> DataTable {
        DataTable { columns, rows }
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| anyhow!("no column {name:?} (have {})", self.columns.join(", ")))
    }

    /// Listwise selection. Without an id column, ids are 1-based row numbers.
    pub fn select(&self, id: Option<&str>, numeric: &[&str], labels: &[&str]) -> Result<Selection> {
        let id_col = id.map(|c| self.column(c)).transpose()?;
        let num_cols = numeric.iter().map(|c| self.column(c)).collect::<Result<Vec<_>>>()?;
        let label_cols = labels.iter().map(|c| self.column(c)).collect::<Result<Vec<_>>>()?;
        let mut sel = Selection {
            ids: Vec::new(),
            values: vec![Vec::new(); num_cols.len()],
            labels: vec![Vec::new(); label_cols.len()],
            dropped: 0,
        };
        'rows: for (i, row) in self.rows.iter().enumerate() {
            let mut vals = Vec::with_capacity(num_cols.len());
            for (&c, name) in num_cols.iter().zip(numeric) {
                let cell = &row[c];
                if missing(cell) {
                    sel.dropped += 1;
                    continue 'rows;
                }
                let v: f64 = cell.trim().parse().map_err(|_| anyhow!("row {}: {name} = {cell:?} is not a number", i + 1))?;
                if !v.is_finite() {
                    bail!("row {}: {name} is not finite", i + 1);
                }
                vals.push(v);
            }
            if label_cols.iter().any(|&c| missing(&row[c])) {
                sel.dropped += 1;
                continue;
            }
            sel.ids.push(id_col.map_or_else(|| (i + 1).to_string(), |c| row[c].clone()));
            for (slot, v) in sel.values.iter_mut().zip(vals) {
                slot.push(v);
            }
            for (slot, &c) in sel.labels.iter_mut().zip(&label_cols) {
                slot.push(row[c].clone());
            }
        }
        Ok(sel)
    }
}

/// Rows keyed by (row label, column label), reshaped into a dense matrix
/// with `None` for absent cells. Row and column order are sorted.
pub fn pivot(
    cells: impl IntoIterator<Item = (String, String, f64)>,
) -> Result<(Vec<String>, Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut map: BTreeMap<(String, String), f64> = BTreeMap::new();
    for (r, c, v) in cells {
        if map.insert((r.clone(), c.clone()), v).is_some() {
            bail!("duplicate cell ({r}, {c})");
        }
    }
    let rows: Vec<String> = map.keys().map(|k| k.0.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let cols: Vec<String> = map.keys().map(|k| k.1.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let matrix = rows
        .iter()
        .map(|r| cols.iter().map(|c| map.get(&(r.clone(), c.clone())).copied()).collect())
        .collect();
    Ok((rows, cols, matrix))
}
