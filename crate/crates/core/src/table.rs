//! Column-typed in-memory datasets loaded from delimited text.
//!
//! Numeric columns store raw values with NaN as the missing sentinel;
//! categorical columns store ordinal codes assigned by first appearance,
//! with `cardinality` as the reserved missing code. Every missing entry is
//! also flagged in the per-column mask, which is the authoritative signal.

use crate::error::CoreError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Fraction of non-missing entries that must parse as finite numbers for a
/// column to be inferred numeric.
pub const NUMERIC_PARSE_THRESHOLD: f64 = 0.99;
/// A column whose distinct non-missing value count is at or below this is
/// treated as categorical even if every entry parses as a number.
pub const NUMERIC_DISTINCT_MIN: usize = 10;

/// The closed set of dataset domains used by the domain-transfer analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainTag {
    FinancialDemographic,
    MedicalHumanSensor,
    IndustrialOperational,
    HumanBehaviour,
    PhysicsAstronomy,
    BiologyEcology,
    VisionAudioText,
    OtherScience,
    DeterministicSimulated,
    Other,
}

impl DomainTag {
    pub const ALL: [DomainTag; 10] = [
        DomainTag::FinancialDemographic,
        DomainTag::MedicalHumanSensor,
        DomainTag::IndustrialOperational,
        DomainTag::HumanBehaviour,
        DomainTag::PhysicsAstronomy,
        DomainTag::BiologyEcology,
        DomainTag::VisionAudioText,
        DomainTag::OtherScience,
        DomainTag::DeterministicSimulated,
        DomainTag::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DomainTag::FinancialDemographic => "financial-demographic",
            DomainTag::MedicalHumanSensor => "medical-human-sensor",
            DomainTag::IndustrialOperational => "industrial-operational",
            DomainTag::HumanBehaviour => "human-behaviour",
            DomainTag::PhysicsAstronomy => "physics-astronomy",
            DomainTag::BiologyEcology => "biology-ecology",
            DomainTag::VisionAudioText => "vision-audio-text",
            DomainTag::OtherScience => "other-science",
            DomainTag::DeterministicSimulated => "deterministic-simulated",
            DomainTag::Other => "other",
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainTag {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainTag::ALL
            .iter()
            .find(|d| d.as_str() == s)
            .copied()
            .ok_or_else(|| CoreError::InvalidInput(format!("unknown domain tag '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
        })
    }
}

impl FromStr for ColumnKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numeric" => Ok(ColumnKind::Numeric),
            "categorical" => Ok(ColumnKind::Categorical),
            other => Err(CoreError::InvalidInput(format!(
                "unknown column kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Numeric values, or categorical codes in `[0, cardinality)`. Missing
    /// entries hold NaN (numeric) or `cardinality` (categorical).
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    /// Categorical only: number of observed distinct labels.
    pub cardinality: Option<usize>,
    /// Categorical only: code -> original label.
    pub labels: Vec<String>,
}

impl Column {
    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Value as an f64 feature; missing entries are NaN regardless of kind.
    pub fn feature_value(&self, row: usize) -> f64 {
        if self.missing[row] {
            f64::NAN
        } else {
            self.values[row]
        }
    }
}

/// An immutable named dataset with a domain tag.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub domain: DomainTag,
    columns: Vec<Column>,
    n_rows: usize,
}

impl Table {
    pub fn new(
        name: String,
        domain: DomainTag,
        columns: Vec<Column>,
        n_rows: usize,
    ) -> Result<Self, CoreError> {
        for c in &columns {
            if c.values.len() != n_rows || c.missing.len() != n_rows {
                return Err(CoreError::InvalidInput(format!(
                    "column '{}' has {} entries, table has {} rows",
                    c.name,
                    c.values.len(),
                    n_rows
                )));
            }
            if let Some(card) = c.cardinality {
                for (i, (&v, &m)) in c.values.iter().zip(&c.missing).enumerate() {
                    let code = v as usize;
                    let valid = if m { code == card } else { code < card };
                    if !valid {
                        return Err(CoreError::InvalidInput(format!(
                            "column '{name}' row {i}: code {v} out of range for cardinality {card}",
                            name = c.name
                        )));
                    }
                }
            }
        }
        Ok(Table {
            name,
            domain,
            columns,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn column_by_name(&self, name: &str) -> Option<(usize, &Column)> {
        self.columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.name == name)
    }

    pub fn n_categorical(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Categorical)
            .count()
    }

    pub fn n_numeric(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numeric)
            .count()
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = self.n_rows * self.columns.len();
        if total == 0 {
            return 0.0;
        }
        let missing: usize = self.columns.iter().map(|c| c.missing_count()).sum();
        missing as f64 / total as f64
    }

    /// Kind override map that makes a canonical-format round trip exact.
    pub fn kind_overrides(&self) -> HashMap<String, ColumnKind> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.kind))
            .collect()
    }
}

fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty()
        || t.eq_ignore_ascii_case("na")
        || t.eq_ignore_ascii_case("n/a")
        || t.eq_ignore_ascii_case("nan")
        || t.eq_ignore_ascii_case("null")
        || t == "?"
}

fn parse_finite(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Infers a column kind from raw string values: numeric iff at least 99% of
/// the non-missing entries parse as finite numbers and the distinct
/// non-missing value count exceeds 10; otherwise categorical.
pub fn infer_column_kind(raw_values: &[&str]) -> Result<ColumnKind, CoreError> {
    let present: Vec<&str> = raw_values
        .iter()
        .copied()
        .filter(|s| !is_missing_token(s))
        .collect();
    if present.is_empty() {
        return Err(CoreError::InvalidInput(
            "cannot infer kind: all entries missing".into(),
        ));
    }
    let parseable = present.iter().filter(|s| parse_finite(s).is_some()).count();
    let mut distinct: Vec<&str> = present.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let numeric = parseable as f64 >= NUMERIC_PARSE_THRESHOLD * present.len() as f64
        && distinct.len() > NUMERIC_DISTINCT_MIN;
    Ok(if numeric {
        ColumnKind::Numeric
    } else {
        ColumnKind::Categorical
    })
}

fn build_column(name: &str, raw: &[String], kind: ColumnKind) -> Column {
    let n = raw.len();
    let mut values = Vec::with_capacity(n);
    let mut missing = Vec::with_capacity(n);
    match kind {
        ColumnKind::Numeric => {
            for s in raw {
                match (!is_missing_token(s)).then(|| parse_finite(s)).flatten() {
                    Some(v) => {
                        values.push(v);
                        missing.push(false);
                    }
                    // unparseable entries in a numeric column count as missing
                    None => {
                        values.push(f64::NAN);
                        missing.push(true);
                    }
                }
            }
            Column {
                name: name.to_string(),
                kind,
                values,
                missing,
                cardinality: None,
                labels: Vec::new(),
            }
        }
        ColumnKind::Categorical => {
            let mut codes: HashMap<&str, usize> = HashMap::new();
            let mut labels: Vec<String> = Vec::new();
            let mut entries = Vec::with_capacity(n);
            for s in raw {
                if is_missing_token(s) {
                    entries.push(None);
                } else {
                    let trimmed = s.trim();
                    let next = labels.len();
                    let code = *codes.entry(trimmed).or_insert_with(|| {
                        labels.push(trimmed.to_string());
                        next
                    });
                    entries.push(Some(code));
                }
            }
            let card = labels.len();
            for e in entries {
                match e {
                    Some(code) => {
                        values.push(code as f64);
                        missing.push(false);
                    }
                    None => {
                        values.push(card as f64);
                        missing.push(true);
                    }
                }
            }
            Column {
                name: name.to_string(),
                kind,
                values,
                missing,
                cardinality: Some(card),
                labels,
            }
        }
    }
}

/// Loads a delimited-text table (comma or tab, sniffed from the header
/// line). Kinds are inferred per column unless overridden.
pub fn load_table(
    path: &Path,
    name: &str,
    domain: DomainTag,
    kind_overrides: &HashMap<String, ColumnKind>,
) -> Result<Table, CoreError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    load_table_from_str(&text, &path.display().to_string(), name, domain, kind_overrides)
}

pub fn load_table_from_str(
    text: &str,
    origin: &str,
    name: &str,
    domain: DomainTag,
    kind_overrides: &HashMap<String, ColumnKind>,
) -> Result<Table, CoreError> {
    let header_line = text
        .lines()
        .next()
        .ok_or_else(|| CoreError::parse(origin, "empty file"))?;
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CoreError::parse(origin, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    for col in kind_overrides.keys() {
        if !headers.iter().any(|h| h == col) {
            return Err(CoreError::parse(
                origin,
                format!("kind override for unknown column '{col}'"),
            ));
        }
    }

    let mut raw_columns: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| CoreError::parse(origin, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(CoreError::parse(
                origin,
                format!(
                    "ragged row: expected {} fields, got {}",
                    headers.len(),
                    record.len()
                ),
            ));
        }
        for (i, field) in record.iter().enumerate() {
            raw_columns[i].push(field.to_string());
        }
    }
    let n_rows = raw_columns.first().map_or(0, |c| c.len());
    if n_rows == 0 {
        return Err(CoreError::parse(origin, "table has no data rows"));
    }

    let mut columns = Vec::with_capacity(headers.len());
    for (h, raw) in headers.iter().zip(&raw_columns) {
        let kind = match kind_overrides.get(h) {
            Some(&k) => k,
            None => {
                let refs: Vec<&str> = raw.iter().map(|s| s.as_str()).collect();
                infer_column_kind(&refs)
                    .map_err(|e| CoreError::parse(origin, format!("column '{h}': {e}")))?
            }
        };
        columns.push(build_column(h, raw, kind));
    }

    Table::new(name.to_string(), domain, columns, n_rows)
}

/// Writes a table in the canonical comma-delimited format. Numeric cells use
/// the shortest round-trip float representation, categorical cells their
/// original labels, missing cells are empty.
pub fn write_table(table: &Table, path: &Path) -> Result<(), CoreError> {
    let mut out = String::new();
    let names: Vec<&str> = table.columns().iter().map(|c| c.name.as_str()).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for row in 0..table.n_rows() {
        let mut fields = Vec::with_capacity(table.n_cols());
        for c in table.columns() {
            if c.missing[row] {
                fields.push(String::new());
            } else {
                match c.kind {
                    ColumnKind::Numeric => fields.push(format!("{}", c.values[row])),
                    ColumnKind::Categorical => {
                        fields.push(c.labels[c.values[row] as usize].clone())
                    }
                }
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}
