//! Label, registry, covariate and employment file readers, plus
//! deduplication of parsed labels into one record per (country, task).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::numeric::sha256_hex;
use crate::reweight::{EmploymentRow, EmploymentTable, Sex};
use crate::schema::{validate_record, RawRow};
use crate::types::{
    AiFunction, Channel, CountryContext, CovariateRow, ExposureLevel, IncomeGroup, Margin, RecordKey, Region,
    TaskLabelRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("line {line}: stream is not valid UTF-8")]
    NotUtf8 { line: usize },
    #[error("unknown format tag {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("duplicate iso3 {0}")]
    DuplicateIso3(String),
    #[error("line {line}: unknown income group {value:?}")]
    UnknownIncomeGroup { line: u64, value: String },
    #[error("line {line}: unknown region {value:?}")]
    UnknownRegion { line: u64, value: String },
    #[error("line {line}: column {column} has invalid value {value:?}")]
    InvalidValue { line: u64, column: String, value: String },
    #[error("line {line}: unknown covariate {variable:?}")]
    UnknownVariable { line: u64, variable: String },
    #[error("line {line}: {variable} for {iso3} in {year} is {value}, outside [{min}, {max}]")]
    CovariateOutOfBounds { line: u64, iso3: String, variable: String, year: i32, value: f64, min: f64, max: f64 },
    #[error("line {line}: duplicate covariate row {iso3}/{variable}/{year}")]
    DuplicateCovariate { line: u64, iso3: String, variable: String, year: i32 },
    #[error("line {line}: negative employment count {count}")]
    NegativeCount { line: u64, count: f64 },
    #[error("line {line}: duplicate employment cell {key}")]
    DuplicateCell { line: u64, key: String },
}

// ---------------------------------------------------------------------------
// Label files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelFormat {
    Jsonl,
    Csv,
}

impl FromStr for LabelFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(LabelFormat::Jsonl),
            "csv" => Ok(LabelFormat::Csv),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for LabelFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelFormat::Jsonl => "jsonl",
            LabelFormat::Csv => "csv",
        })
    }
}

impl LabelFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "ndjson" => Some(LabelFormat::Jsonl),
            "csv" => Some(LabelFormat::Csv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: u64,
    pub code: String,
    pub message: String,
}

/// Outcome of reading one label stream. `rows_read == rows_accepted + rows_rejected`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_read: u64,
    pub rows_accepted: u64,
    pub rows_rejected: u64,
    pub normalized: u64,
    pub violations: Vec<RowIssue>,
}

impl ParseReport {
    fn reject(&mut self, line: u64, code: &str, message: impl Into<String>) {
        self.violations.push(RowIssue { line, code: code.to_string(), message: message.into() });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub line: u64,
    pub fields: RawRow,
}

/// Reads a label stream into raw field maps.
///
/// JSONL: one object per line; blank lines and lines starting with `#` are
/// skipped. CSV: header row required, double-quote escaping, `#` comment lines.
/// Syntactically malformed rows are reported with their line number.
pub fn parse_labels<R: Read>(reader: R, format: LabelFormat) -> Result<(Vec<ParsedRow>, ParseReport), IngestError> {
    let mut report = ParseReport::default();
    let mut rows = Vec::new();
    match format {
        LabelFormat::Jsonl => {
            for (idx, line) in BufReader::new(reader).lines().enumerate() {
                let line_no = idx as u64 + 1;
                let line = line.map_err(|e| match e.kind() {
                    std::io::ErrorKind::InvalidData => IngestError::NotUtf8 { line: line_no as usize },
                    _ => IngestError::Io(e),
                })?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                report.rows_read += 1;
                match serde_json::from_str::<Value>(trimmed) {
                    Ok(Value::Object(fields)) => rows.push(ParsedRow { line: line_no, fields }),
                    Ok(_) => {
                        report.rows_rejected += 1;
                        report.reject(line_no, "syntax", "line is not a JSON object");
                    }
                    Err(e) => {
                        report.rows_rejected += 1;
                        report.reject(line_no, "syntax", e.to_string());
                    }
                }
            }
        }
        LabelFormat::Csv => {
            let mut text = String::new();
            BufReader::new(reader).read_to_string(&mut text).map_err(|e| match e.kind() {
                std::io::ErrorKind::InvalidData => IngestError::NotUtf8 { line: 0 },
                _ => IngestError::Io(e),
            })?;
            let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
            let headers = rdr.headers()?.clone();
            for result in rdr.records() {
                match result {
                    Ok(rec) => {
                        let line = rec.position().map_or(0, |p| p.line());
                        report.rows_read += 1;
                        let fields = headers
                            .iter()
                            .zip(rec.iter())
                            .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                            .collect();
                        rows.push(ParsedRow { line, fields });
                    }
                    Err(e) => {
                        let line = e.position().map_or(0, |p| p.line());
                        report.rows_read += 1;
                        report.rows_rejected += 1;
                        report.reject(line, "syntax", e.to_string());
                    }
                }
            }
        }
    }
    report.rows_accepted = rows.len() as u64;
    Ok((rows, report))
}

/// Runs schema validation over parsed rows, moving failures into the report.
pub fn validate_rows(rows: Vec<ParsedRow>, report: &mut ParseReport) -> Vec<TaskLabelRecord> {
    let mut accepted = Vec::with_capacity(rows.len());
    for row in rows {
        match validate_record(&row.fields) {
            Ok(v) => {
                if !v.notes.is_empty() {
                    report.normalized += 1;
                }
                accepted.push(v.record);
            }
            Err(violations) => {
                report.rows_accepted -= 1;
                report.rows_rejected += 1;
                for v in violations {
                    report.reject(row.line, v.code.as_str(), v.to_string());
                }
            }
        }
    }
    report.violations.sort_by_key(|v| v.line);
    accepted
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDigest {
    pub source: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupStats {
    pub input_rows: u64,
    pub unique_keys: u64,
    /// Fields adjusted after per-field modes disagreed with a schema rule.
    pub reconciled_fields: u64,
}

/// Unique (country, task) records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelDataset {
    records: BTreeMap<RecordKey, TaskLabelRecord>,
    pub provenance: Vec<SourceDigest>,
    pub dedup: DedupStats,
}

impl LabelDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &TaskLabelRecord> {
        self.records.values()
    }

    pub fn get(&self, country: &str, task_id: &str) -> Option<&TaskLabelRecord> {
        self.records.get(&RecordKey { country: country.to_string(), task_id: task_id.to_string() })
    }

    pub fn get_key(&self, key: &RecordKey) -> Option<&TaskLabelRecord> {
        self.records.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &RecordKey> {
        self.records.keys()
    }

    /// Distinct country tags, sorted.
    pub fn countries(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for key in self.records.keys() {
            if out.last() != Some(&key.country) {
                out.push(key.country.clone());
            }
        }
        out
    }

    /// Records for one country, ordered by task id.
    pub fn country_records<'a>(&'a self, country: &str) -> impl Iterator<Item = &'a TaskLabelRecord> + 'a {
        let start = RecordKey { country: country.to_string(), task_id: String::new() };
        let country = country.to_string();
        self.records.range(start..).take_while(move |(k, _)| k.country == country).map(|(_, r)| r)
    }

    /// Builds a dataset from records that are already unique by key.
    /// Later duplicates replace earlier ones.
    pub fn from_unique(records: impl IntoIterator<Item = TaskLabelRecord>) -> Self {
        let records: BTreeMap<_, _> = records.into_iter().map(|r| (r.key(), r)).collect();
        let n = records.len() as u64;
        LabelDataset {
            records,
            provenance: Vec::new(),
            dedup: DedupStats { input_rows: n, unique_keys: n, reconciled_fields: 0 },
        }
    }

    /// Writes one JSON record per line in key order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for record in self.records.values() {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Per-key vote counts. Merging adds counts, so the reduction is associative
/// and commutative.
#[derive(Debug, Clone, Default)]
struct KeyTally {
    exposure: [u64; 4],
    channel: BTreeMap<&'static str, u64>,
    substitution_path: [u64; 2],
    augmentation_path: [u64; 2],
    returned_margin: BTreeMap<&'static str, u64>,
    ai_material: [u64; 2],
    ai_function: BTreeMap<&'static str, u64>,
    short_rationale: BTreeMap<String, u64>,
    substitution_summary: BTreeMap<String, u64>,
    augmentation_summary: BTreeMap<String, u64>,
}

fn merge_counts<K: Ord + Clone>(into: &mut BTreeMap<K, u64>, from: BTreeMap<K, u64>) {
    for (k, n) in from {
        *into.entry(k).or_default() += n;
    }
}

/// Most frequent key; ties go to the smallest key in `Ord` order.
fn mode<K: Ord + Clone>(counts: &BTreeMap<K, u64>) -> K {
    let mut best: Option<(&K, u64)> = None;
    for (k, &n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((k, n));
        }
    }
    best.expect("tally has at least one row").0.clone()
}

fn bool_mode(counts: [u64; 2]) -> bool {
    // index 0 = false; "false" < "true" wins ties
    counts[1] > counts[0]
}

impl KeyTally {
    fn add(&mut self, r: &TaskLabelRecord) {
        self.exposure[r.exposure.index()] += 1;
        *self.channel.entry(r.channel.as_str()).or_default() += 1;
        self.substitution_path[r.substitution_path as usize] += 1;
        self.augmentation_path[r.augmentation_path as usize] += 1;
        *self.returned_margin.entry(r.raw_margin.unwrap_or(r.margin).as_str()).or_default() += 1;
        self.ai_material[r.ai_material as usize] += 1;
        *self.ai_function.entry(r.ai_function.as_str()).or_default() += 1;
        *self.short_rationale.entry(r.short_rationale.clone()).or_default() += 1;
        *self.substitution_summary.entry(r.substitution_summary.clone()).or_default() += 1;
        *self.augmentation_summary.entry(r.augmentation_summary.clone()).or_default() += 1;
    }

    fn merge(&mut self, other: KeyTally) {
        for i in 0..4 {
            self.exposure[i] += other.exposure[i];
        }
        for i in 0..2 {
            self.substitution_path[i] += other.substitution_path[i];
            self.augmentation_path[i] += other.augmentation_path[i];
            self.ai_material[i] += other.ai_material[i];
        }
        merge_counts(&mut self.channel, other.channel);
        merge_counts(&mut self.returned_margin, other.returned_margin);
        merge_counts(&mut self.ai_function, other.ai_function);
        merge_counts(&mut self.short_rationale, other.short_rationale);
        merge_counts(&mut self.substitution_summary, other.substitution_summary);
        merge_counts(&mut self.augmentation_summary, other.augmentation_summary);
    }

    /// Collapses the tally to its modal record. Returns the record and the
    /// number of fields changed to restore schema consistency.
    fn resolve(&self, key: &RecordKey) -> (TaskLabelRecord, u64) {
        // lowest level wins ties
        let mut level = 0;
        for i in 1..4 {
            if self.exposure[i] > self.exposure[level] {
                level = i;
            }
        }
        let exposure = ExposureLevel::ALL[level];
        let returned: Margin = mode(&self.returned_margin).parse().expect("canonical name");
        let (margin, raw_margin) = if exposure.value() < 2 {
            (Margin::Unclear, (returned != Margin::Unclear).then_some(returned))
        } else {
            (returned, None)
        };
        let mut substitution_path = bool_mode(self.substitution_path);
        let mut augmentation_path = bool_mode(self.augmentation_path);
        let ai_material = bool_mode(self.ai_material);
        let mut ai_function: AiFunction = mode(&self.ai_function).parse().expect("canonical name");

        let mut reconciled = 0;
        let (need_sub, need_aug) = match margin {
            Margin::Substitute => (true, false),
            Margin::Augment => (false, true),
            Margin::Both => (true, true),
            Margin::Unclear => (false, false),
        };
        if need_sub && !substitution_path {
            substitution_path = true;
            reconciled += 1;
        }
        if need_aug && !augmentation_path {
            augmentation_path = true;
            reconciled += 1;
        }
        if !ai_material && ai_function != AiFunction::None {
            ai_function = AiFunction::None;
            reconciled += 1;
        }

        let channel: Channel = mode(&self.channel).parse().expect("canonical name");
        let record = TaskLabelRecord {
            task_id: key.task_id.clone(),
            country: key.country.clone(),
            exposure,
            channel,
            substitution_path,
            augmentation_path,
            margin,
            raw_margin,
            ai_material,
            ai_function,
            short_rationale: mode(&self.short_rationale),
            substitution_summary: mode(&self.substitution_summary),
            augmentation_summary: mode(&self.augmentation_summary),
        };
        (record, reconciled)
    }
}

type Tallies = HashMap<RecordKey, KeyTally>;

fn merge_tallies(mut a: Tallies, b: Tallies) -> Tallies {
    for (k, t) in b {
        match a.get_mut(&k) {
            Some(existing) => existing.merge(t),
            None => {
                a.insert(k, t);
            }
        }
    }
    a
}

/// Collapses validated rows to one record per (country, task_id).
///
/// Each categorical field takes its per-key mode. Exposure ties go to the
/// lowest level; other ties go to the lexicographically smallest canonical
/// name (`false` before `true`). The result does not depend on row order.
pub fn deduplicate(rows: Vec<TaskLabelRecord>) -> LabelDataset {
    let input_rows = rows.len() as u64;
    let tallies: Tallies = rows
        .par_chunks(4096)
        .map(|chunk| {
            let mut t = Tallies::new();
            for r in chunk {
                t.entry(r.key()).or_default().add(r);
            }
            t
        })
        .reduce(Tallies::new, merge_tallies);

    let mut records = BTreeMap::new();
    let mut reconciled_fields = 0;
    for (key, tally) in tallies {
        let (record, n) = tally.resolve(&key);
        reconciled_fields += n;
        records.insert(key, record);
    }
    let unique_keys = records.len() as u64;
    LabelDataset { records, provenance: Vec::new(), dedup: DedupStats { input_rows, unique_keys, reconciled_fields } }
}

/// Parses, validates and deduplicates one label file.
pub fn load_labels(path: &Path, format: Option<LabelFormat>) -> Result<(LabelDataset, ParseReport), IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::File { path: path.display().to_string(), source })?;
    let format = match format.or_else(|| LabelFormat::from_path(path)) {
        Some(f) => f,
        None => return Err(IngestError::UnknownFormat(path.display().to_string())),
    };
    let (rows, mut report) = parse_labels(bytes.as_slice(), format)?;
    let records = validate_rows(rows, &mut report);
    let mut dataset = deduplicate(records);
    dataset.provenance.push(SourceDigest { source: path.display().to_string(), sha256: sha256_hex(&bytes) });
    Ok((dataset, report))
}

/// Reads a dataset previously written by [`LabelDataset::write_jsonl`].
pub fn read_dataset(path: &Path) -> Result<LabelDataset, IngestError> {
    let (dataset, report) = load_labels(path, Some(LabelFormat::Jsonl))?;
    if let Some(first) = report.violations.first() {
        return Err(IngestError::InvalidValue {
            line: first.line,
            column: first.code.clone(),
            value: first.message.clone(),
        });
    }
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// Tabular side inputs
// ---------------------------------------------------------------------------

pub(crate) struct Table {
    pub(crate) headers: Vec<String>,
    pub(crate) rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    pub(crate) fn read<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table { headers, rows })
    }

    pub(crate) fn column(&self, name: &str) -> Result<usize, IngestError> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }

    pub(crate) fn optional_column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

pub(crate) fn parse_num<T: FromStr>(line: u64, column: &str, value: &str) -> Result<T, IngestError> {
    value.parse().map_err(|_| IngestError::InvalidValue { line, column: column.to_string(), value: value.to_string() })
}

/// Unique-by-ISO3 country registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountryRegistry {
    countries: BTreeMap<String, CountryContext>,
}

impl CountryRegistry {
    pub fn new(contexts: impl IntoIterator<Item = CountryContext>) -> Result<Self, IngestError> {
        let mut countries = BTreeMap::new();
        for c in contexts {
            if countries.contains_key(&c.iso3) {
                return Err(IngestError::DuplicateIso3(c.iso3));
            }
            countries.insert(c.iso3.clone(), c);
        }
        Ok(CountryRegistry { countries })
    }

    pub fn get(&self, iso3: &str) -> Option<&CountryContext> {
        self.countries.get(iso3)
    }

    pub fn len(&self) -> usize {
        self.countries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.countries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CountryContext> {
        self.countries.values()
    }

    pub fn classified_count(&self) -> usize {
        self.countries.values().filter(|c| c.income_group.is_classified()).count()
    }
}

/// Reads `iso3,name,income_group,region[,gdp_per_capita]`.
pub fn load_country_registry<R: Read>(reader: R) -> Result<CountryRegistry, IngestError> {
    let table = Table::read(reader)?;
    if table.headers.is_empty() && table.rows.is_empty() {
        return Ok(CountryRegistry::default());
    }
    let (c_iso, c_name, c_income, c_region) =
        (table.column("iso3")?, table.column("name")?, table.column("income_group")?, table.column("region")?);
    let c_gdp = table.optional_column("gdp_per_capita");
    let mut contexts = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let income = &rec[c_income];
        let income_group = IncomeGroup::parse_lenient(income)
            .map_err(|_| IngestError::UnknownIncomeGroup { line, value: income.to_string() })?;
        let region = Region::parse_lenient(&rec[c_region])
            .map_err(|_| IngestError::UnknownRegion { line, value: rec[c_region].to_string() })?;
        let gdp_per_capita = match c_gdp.map(|i| &rec[i]) {
            None | Some("") => None,
            Some(v) => Some(parse_num(line, "gdp_per_capita", v)?),
        };
        contexts.push(CountryContext {
            iso3: rec[c_iso].to_string(),
            name: rec[c_name].to_string(),
            income_group,
            region,
            gdp_per_capita,
        });
    }
    CountryRegistry::new(contexts)
}

/// Year selection rule for one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YearRule {
    Fixed(i32),
    /// Most recent non-missing value inside the load window.
    Latest,
}

pub fn year_rule(variable: &str) -> Option<YearRule> {
    Some(match variable {
        "log_gdp_pc" | "gov_effectiveness" | "regulatory_quality" => YearRule::Fixed(2024),
        "human_capital" | "capital_intensity" => YearRule::Fixed(2019),
        "years_schooling" => YearRule::Fixed(2015),
        "goods_trade_gdp" => YearRule::Fixed(2023),
        "investment_gdp" | "internet_users" => YearRule::Latest,
        _ => return None,
    })
}

fn covariate_bounds(variable: &str) -> (f64, f64) {
    match variable {
        "investment_gdp" | "internet_users" | "gov_effectiveness" | "regulatory_quality" => (0.0, 100.0),
        "goods_trade_gdp" | "years_schooling" | "human_capital" => (0.0, f64::INFINITY),
        _ => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Reads long-format `iso3,variable,year,value` covariates and applies each
/// variable's year rule. Empty or `NA` values count as missing.
pub fn load_covariates<R: Read>(
    reader: R,
    window: RangeInclusive<i32>,
) -> Result<BTreeMap<String, CovariateRow>, IngestError> {
    let table = Table::read(reader)?;
    if table.headers.is_empty() && table.rows.is_empty() {
        return Ok(BTreeMap::new());
    }
    let (c_iso, c_var, c_year, c_val) =
        (table.column("iso3")?, table.column("variable")?, table.column("year")?, table.column("value")?);

    // (iso3, variable) -> (year, value) of the best candidate so far
    let mut chosen: BTreeMap<(String, String), (i32, f64)> = BTreeMap::new();
    let mut seen: BTreeMap<(String, String, i32), ()> = BTreeMap::new();
    let mut isos: BTreeMap<String, ()> = BTreeMap::new();
    for (line, rec) in &table.rows {
        let line = *line;
        let iso3 = rec[c_iso].to_string();
        let variable = rec[c_var].to_string();
        let rule = year_rule(&variable).ok_or_else(|| IngestError::UnknownVariable { line, variable: variable.clone() })?;
        let year: i32 = parse_num(line, "year", &rec[c_year])?;
        if seen.insert((iso3.clone(), variable.clone(), year), ()).is_some() {
            return Err(IngestError::DuplicateCovariate { line, iso3, variable, year });
        }
        isos.insert(iso3.clone(), ());
        let raw = &rec[c_val];
        if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            continue;
        }
        let value: f64 = parse_num(line, "value", raw)?;
        let (min, max) = covariate_bounds(&variable);
        if !value.is_finite() || value < min || value > max {
            return Err(IngestError::CovariateOutOfBounds { line, iso3, variable, year, value, min, max });
        }
        let eligible = match rule {
            YearRule::Fixed(y) => year == y,
            YearRule::Latest => window.contains(&year),
        };
        if !eligible {
            continue;
        }
        let slot = chosen.entry((iso3, variable)).or_insert((year, value));
        if year > slot.0 {
            *slot = (year, value);
        }
    }

    let mut out: BTreeMap<String, CovariateRow> =
        isos.into_keys().map(|iso| (iso.clone(), CovariateRow::new(iso))).collect();
    for ((iso3, variable), (_, value)) in chosen {
        let row = out.get_mut(&iso3).expect("iso3 registered above");
        *row.slot_mut(&variable).expect("known variable") = Some(value);
    }
    Ok(out)
}

/// Reads `iso3,year,sex,cell,count` employment rows.
pub fn load_employment<R: Read>(reader: R) -> Result<EmploymentTable, IngestError> {
    let table = Table::read(reader)?;
    if table.headers.is_empty() && table.rows.is_empty() {
        return Ok(EmploymentTable::default());
    }
    let (c_iso, c_year, c_sex, c_cell, c_count) = (
        table.column("iso3")?,
        table.column("year")?,
        table.column("sex")?,
        table.column("cell")?,
        table.column("count")?,
    );
    let mut rows = Vec::with_capacity(table.rows.len());
    let mut keys: BTreeMap<(String, i32, Sex, String), ()> = BTreeMap::new();
    for (line, rec) in &table.rows {
        let line = *line;
        let year: i32 = parse_num(line, "year", &rec[c_year])?;
        let sex: Sex = rec[c_sex].parse().map_err(|_| IngestError::InvalidValue {
            line,
            column: "sex".into(),
            value: rec[c_sex].to_string(),
        })?;
        let count: f64 = parse_num(line, "count", &rec[c_count])?;
        if count < 0.0 || !count.is_finite() {
            return Err(IngestError::NegativeCount { line, count });
        }
        let row = EmploymentRow { iso3: rec[c_iso].to_string(), year, sex, cell: rec[c_cell].to_string(), count };
        if keys.insert((row.iso3.clone(), year, sex, row.cell.clone()), ()).is_some() {
            return Err(IngestError::DuplicateCell { line, key: format!("{}/{}/{}/{}", row.iso3, year, sex, row.cell) });
        }
        rows.push(row);
    }
    Ok(EmploymentTable::new(rows).expect("rows checked above"))
}

pub fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::File { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::to_raw;

    const CLEAN: &str = r#"{"task_id":"T1","country":"KEN","exposure_level":2,"dominant_channel":"rule_based_workflow","substitution_path":true,"augmentation_path":false,"margin":"substitute","ai_materiality":false,"dominant_ai_function":"none","short_rationale":"a","substitution_summary":"b","augmentation_summary":""}
{"task_id":"T2","country":"KEN","exposure_level":0,"dominant_channel":"none","substitution_path":false,"augmentation_path":false,"margin":"unclear","ai_materiality":false,"dominant_ai_function":"none","short_rationale":"a","substitution_summary":"","augmentation_summary":""}
{"task_id":"T3","country":"KEN","exposure_level":3,"dominant_channel":"inference_scoring","substitution_path":true,"augmentation_path":true,"margin":"both","ai_materiality":true,"dominant_ai_function":"state_inference","short_rationale":"a","substitution_summary":"b","augmentation_summary":"c"}
"#;

    fn record(task: &str, level: i64, margin: &str) -> TaskLabelRecord {
        let raw = serde_json::json!({
            "task_id": task, "country": "KEN", "exposure_level": level,
            "dominant_channel": "rule_based_workflow", "substitution_path": true,
            "augmentation_path": true, "margin": margin, "ai_materiality": false,
            "dominant_ai_function": "none", "short_rationale": "r",
            "substitution_summary": "s", "augmentation_summary": "a"
        });
        validate_record(raw.as_object().unwrap()).unwrap().record
    }

    #[test]
    fn clean_jsonl_is_fully_accepted() {
        let (rows, report) = parse_labels(CLEAN.as_bytes(), LabelFormat::Jsonl).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!((report.rows_read, report.rows_accepted, report.rows_rejected), (3, 3, 0));
    }

    #[test]
    fn truncated_line_is_reported_with_its_number() {
        let mut lines: Vec<&str> = CLEAN.lines().collect();
        let truncated = &lines[1][..40];
        lines[1] = truncated;
        let text = lines.join("\n");
        let (rows, report) = parse_labels(text.as_bytes(), LabelFormat::Jsonl).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(report.rows_rejected, 1);
        assert_eq!(report.violations[0].line, 2);
        assert_eq!(report.rows_read, report.rows_accepted + report.rows_rejected);
    }

    #[test]
    fn invalid_utf8_is_an_error() {
        let bytes = b"{\"a\":1}\n\xff\xfe\n";
        assert!(matches!(parse_labels(&bytes[..], LabelFormat::Jsonl), Err(IngestError::NotUtf8 { line: 2 })));
    }

    #[test]
    fn unknown_format_tag() {
        assert!(matches!("xml".parse::<LabelFormat>(), Err(IngestError::UnknownFormat(_))));
    }

    #[test]
    fn csv_rows_match_jsonl_rows() {
        let csv_text = "task_id,country,exposure_level,dominant_channel,substitution_path,augmentation_path,margin,ai_materiality,dominant_ai_function,short_rationale,substitution_summary,augmentation_summary\n\
T1,KEN,2,rule_based_workflow,true,false,substitute,false,none,a,b,\n\
T2,KEN,0,none,false,false,unclear,false,none,\"a\",,\n\
T3,KEN,3,inference_scoring,true,true,both,true,state_inference,a,b,c\n";
        let (rows, mut report) = parse_labels(csv_text.as_bytes(), LabelFormat::Csv).unwrap();
        let from_csv = validate_rows(rows, &mut report);
        let (rows, mut report2) = parse_labels(CLEAN.as_bytes(), LabelFormat::Jsonl).unwrap();
        let from_jsonl = validate_rows(rows, &mut report2);
        assert_eq!(from_csv, from_jsonl);
        assert_eq!(report.rows_rejected, 0);
    }

    #[test]
    fn csv_ragged_row_is_rejected() {
        let text = "task_id,country\nT1,KEN\nT2\n";
        let (rows, report) = parse_labels(text.as_bytes(), LabelFormat::Csv).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(report.rows_rejected, 1);
        assert_eq!(report.violations[0].line, 3);
    }

    #[test]
    fn schema_failures_move_rows_to_rejected() {
        let text = CLEAN.replace("\"margin\":\"both\"", "\"margin\":\"sideways\"");
        let (rows, mut report) = parse_labels(text.as_bytes(), LabelFormat::Jsonl).unwrap();
        let accepted = validate_rows(rows, &mut report);
        assert_eq!(accepted.len(), 2);
        assert_eq!((report.rows_read, report.rows_accepted, report.rows_rejected), (3, 2, 1));
        assert_eq!(report.violations[0].code, "invalid-enum");
    }

    #[test]
    fn identical_duplicates_collapse() {
        let r = record("T1", 3, "both");
        let ds = deduplicate(vec![r.clone(), r.clone()]);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.get("KEN", "T1"), Some(&r));
        assert_eq!(ds.dedup.reconciled_fields, 0);
    }

    #[test]
    fn exposure_mode_and_tie_break() {
        let ds = deduplicate(vec![record("T", 2, "both"), record("T", 2, "both"), record("T", 3, "both")]);
        assert_eq!(ds.get("KEN", "T").unwrap().exposure.value(), 2);
        let ds = deduplicate(vec![record("T", 3, "both"), record("T", 2, "both")]);
        assert_eq!(ds.get("KEN", "T").unwrap().exposure.value(), 2);
    }

    #[test]
    fn enum_ties_take_smallest_name() {
        let ds = deduplicate(vec![record("T", 3, "substitute"), record("T", 3, "augment")]);
        assert_eq!(ds.get("KEN", "T").unwrap().margin, Margin::Augment);
    }

    #[test]
    fn serialized_dataset_reparses_identically() {
        let (rows, mut report) = parse_labels(CLEAN.as_bytes(), LabelFormat::Jsonl).unwrap();
        let ds = deduplicate(validate_rows(rows, &mut report));
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let (rows, mut report) = parse_labels(buf.as_slice(), LabelFormat::Jsonl).unwrap();
        let again = deduplicate(validate_rows(rows, &mut report));
        assert_eq!(again, ds);
        let mut buf2 = Vec::new();
        again.write_jsonl(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        for r in ds.records() {
            assert_eq!(validate_record(&to_raw(r)).unwrap().record, *r);
        }
    }

    #[test]
    fn registry_counts_and_errors() {
        let text = "iso3,name,income_group,region\nKEN,Kenya,Lower middle income,Sub-Saharan Africa\nVEN,Venezuela,,Latin America & Caribbean\nJPN,Japan,high,east_asia_pacific\n";
        let reg = load_country_registry(text.as_bytes()).unwrap();
        assert_eq!(reg.len(), 3);
        assert_eq!(reg.classified_count(), 2);
        assert_eq!(reg.get("VEN").unwrap().income_group, IncomeGroup::Unclassified);

        let dup = "iso3,name,income_group,region\nKEN,Kenya,low,south_asia\nKEN,Kenya,low,south_asia\n";
        assert!(matches!(load_country_registry(dup.as_bytes()), Err(IngestError::DuplicateIso3(_))));
        let bad = "iso3,name,income_group,region\nKEN,Kenya,middling,south_asia\n";
        assert!(matches!(load_country_registry(bad.as_bytes()), Err(IngestError::UnknownIncomeGroup { line: 2, .. })));
        assert!(load_country_registry("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn covariates_follow_year_rules() {
        let text = "iso3,variable,year,value\n\
AAA,internet_users,2019,40\nAAA,internet_users,2022,55\nAAA,log_gdp_pc,2023,9.1\nAAA,log_gdp_pc,2024,9.2\n\
BBB,internet_users,2016,30\nBBB,log_gdp_pc,2024,8.0\n\
CCC,internet_users,2021,NA\nCCC,investment_gdp,2020,22\n";
        let cov = load_covariates(text.as_bytes(), 2018..=2024).unwrap();
        assert_eq!(cov["AAA"].internet_users, Some(55.0));
        assert_eq!(cov["AAA"].log_gdp_pc, Some(9.2));
        assert_eq!(cov["BBB"].internet_users, None);
        assert_eq!(cov["CCC"].internet_users, None);
        let complete: Vec<&str> = cov
            .values()
            .filter(|r| r.is_complete(&["internet_users", "log_gdp_pc"]))
            .map(|r| r.iso3.as_str())
            .collect();
        assert_eq!(complete, vec!["AAA"]);
    }

    #[test]
    fn covariate_bounds_are_enforced() {
        let text = "iso3,variable,year,value\nAAA,internet_users,2020,140\n";
        assert!(matches!(load_covariates(text.as_bytes(), 2018..=2024), Err(IngestError::CovariateOutOfBounds { .. })));
    }

    #[test]
    fn employment_checks() {
        let mut ok = String::from("iso3,year,sex,cell,count\n");
        for g in 1..=9 {
            ok.push_str(&format!("KEN,2022,total,{g},{}\n", 100 * g));
        }
        let table = load_employment(ok.as_bytes()).unwrap();
        assert_eq!(table.rows().len(), 9);

        let neg = "iso3,year,sex,cell,count\nKEN,2022,total,1,-5\n";
        assert!(matches!(load_employment(neg.as_bytes()), Err(IngestError::NegativeCount { line: 2, .. })));
        let dup = "iso3,year,sex,cell,count\nKEN,2022,total,1,5\nKEN,2022,total,1,6\n";
        assert!(matches!(load_employment(dup.as_bytes()), Err(IngestError::DuplicateCell { line: 3, .. })));
    }
}
