//! Aligned OHLCV panels: CSV ingestion and export, universe filtering,
//! forward-return labels, cross-sectional z-scoring and date splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{is_missing, Matrix, MISSING};

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("required column `{0}` not found in header")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("line {line}: unparseable date `{value}` (expected YYYY-MM-DD)")]
    BadDate { line: u64, value: String },
    #[error("line {line}: duplicate row for ({date}, {instrument})")]
    DuplicateKey { line: u64, date: NaiveDate, instrument: String },
    #[error("panel has no rows")]
    EmptyPanel,
    #[error("universe filter removed every instrument (min_days = {min_days})")]
    EmptyUniverse { min_days: usize },
    #[error("invalid panel: {0}")]
    Invalid(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

pub type Result<T> = std::result::Result<T, PanelError>;

/// Raw market fields carried by a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Open,
    High,
    Low,
    Close,
    Volume,
}

impl Field {
    pub const ALL: [Field; 5] = [Field::Open, Field::High, Field::Low, Field::Close, Field::Volume];

    pub fn name(self) -> &'static str {
        match self {
            Field::Open => "open",
            Field::High => "high",
            Field::Low => "low",
            Field::Close => "close",
            Field::Volume => "volume",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// (date × instrument) OHLCV grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    dates: Vec<NaiveDate>,
    instruments: Vec<String>,
    fields: [Matrix; 5],
}

impl Panel {
    /// Validates and assembles a panel. `fields` are in [`Field::ALL`] order.
    pub fn new(dates: Vec<NaiveDate>, instruments: Vec<String>, fields: [Matrix; 5]) -> Result<Self> {
        if dates.is_empty() || instruments.is_empty() {
            return Err(PanelError::EmptyPanel);
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PanelError::Invalid("dates must be strictly increasing".into()));
        }
        let uniq: BTreeSet<&String> = instruments.iter().collect();
        if uniq.len() != instruments.len() {
            return Err(PanelError::Invalid("duplicate instrument identifiers".into()));
        }
        for (f, m) in Field::ALL.iter().zip(&fields) {
            if m.shape() != (dates.len(), instruments.len()) {
                return Err(PanelError::Invalid(format!("{f} matrix has wrong shape")));
            }
        }
        let vol = &fields[Field::Volume as usize];
        if vol.as_slice().iter().any(|v| !is_missing(*v) && *v < 0.0) {
            return Err(PanelError::Invalid("negative volume".into()));
        }
        let close = &fields[Field::Close as usize];
        for (c, name) in instruments.iter().enumerate() {
            if (0..dates.len()).all(|r| close.get(r, c).is_none()) {
                return Err(PanelError::Invalid(format!("instrument `{name}` has no close values")));
            }
        }
        Ok(Self { dates, instruments, fields })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn instruments(&self) -> &[String] {
        &self.instruments
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_instruments(&self) -> usize {
        self.instruments.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.dates.len(), self.instruments.len())
    }

    pub fn field(&self, f: Field) -> &Matrix {
        &self.fields[f as usize]
    }

    pub fn close(&self) -> &Matrix {
        self.field(Field::Close)
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Keeps dates in `range`; instruments that lose all their closes are dropped.
    pub fn slice_dates(&self, range: Range<usize>) -> Result<Panel> {
        let dates = self.dates[range.clone()].to_vec();
        let sliced: Vec<Matrix> = self.fields.iter().map(|m| m.slice_rows(range.clone())).collect();
        let keep: Vec<usize> = (0..self.instruments.len())
            .filter(|&c| (0..dates.len()).any(|r| sliced[Field::Close as usize].get(r, c).is_some()))
            .collect();
        let instruments = keep.iter().map(|&c| self.instruments[c].clone()).collect();
        let fields = sliced.iter().map(|m| m.select_cols(&keep)).collect::<Vec<_>>();
        Panel::new(dates, instruments, fields.try_into().expect("five fields"))
    }

    /// Returns a copy with every present cell in `rows` replaced by `f(field, value)`.
    /// Used to poison held-out intervals when auditing for leakage.
    pub fn map_rows(&self, rows: Range<usize>, f: impl Fn(Field, f64) -> f64) -> Result<Panel> {
        let mut fields = self.fields.clone();
        for (field, m) in Field::ALL.iter().zip(fields.iter_mut()) {
            for r in rows.clone() {
                for c in 0..m.cols() {
                    if let Some(v) = m.get(r, c) {
                        m.set(r, c, f(*field, v));
                    }
                }
            }
        }
        Panel::new(self.dates.clone(), self.instruments.clone(), fields)
    }

    /// Writes the panel in the ingestion CSV layout. Rows where every field is
    /// missing are omitted, so re-ingesting yields the same panel.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "symbol", "open", "high", "low", "close", "volume"])?;
        for (r, date) in self.dates.iter().enumerate() {
            for (c, sym) in self.instruments.iter().enumerate() {
                let vals: Vec<f64> = self.fields.iter().map(|m| m.raw(r, c)).collect();
                if vals.iter().all(|v| is_missing(*v)) {
                    continue;
                }
                let mut rec = vec![date.format("%Y-%m-%d").to_string(), sym.clone()];
                rec.extend(vals.iter().map(|v| if is_missing(*v) { String::new() } else { format!("{v}") }));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Column names used to locate the required fields in an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub date: String,
    pub instrument: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            instrument: "symbol".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Panel> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Parses the ingestion CSV layout from any reader.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let date_ix = col(&schema.date)?;
    let inst_ix = col(&schema.instrument)?;
    let field_ix = [
        col(&schema.open)?,
        col(&schema.high)?,
        col(&schema.low)?,
        col(&schema.close)?,
        col(&schema.volume)?,
    ];

    let mut cells: HashMap<(NaiveDate, String), ([f64; 5], u64)> = HashMap::new();
    let mut dates = BTreeSet::new();
    let mut instruments = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            PanelError::MalformedRow { line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let raw_date = rec.get(date_ix).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| PanelError::BadDate { line, value: raw_date.to_string() })?;
        let inst = rec.get(inst_ix).unwrap_or("").trim().to_string();
        if inst.is_empty() {
            return Err(PanelError::MalformedRow { line, message: "empty instrument identifier".into() });
        }
        let mut vals = [MISSING; 5];
        for (k, &ix) in field_ix.iter().enumerate() {
            let raw = rec.get(ix).unwrap_or("").trim();
            if raw.is_empty() {
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| PanelError::MalformedRow {
                line,
                message: format!("column `{}`: `{raw}` is not a number", Field::ALL[k]),
            })?;
            if !v.is_finite() {
                return Err(PanelError::MalformedRow {
                    line,
                    message: format!("column `{}`: non-finite value", Field::ALL[k]),
                });
            }
            if Field::ALL[k] == Field::Volume && v < 0.0 {
                return Err(PanelError::MalformedRow { line, message: "negative volume".into() });
            }
            vals[k] = v;
        }
        let key = (date, inst.clone());
        if cells.contains_key(&key) {
            return Err(PanelError::DuplicateKey { line, date, instrument: inst });
        }
        dates.insert(date);
        instruments.insert(inst);
        cells.insert(key, (vals, line));
    }
    if cells.is_empty() {
        return Err(PanelError::EmptyPanel);
    }

    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    // Instruments without a single close cannot be traded or labelled.
    let instruments: Vec<String> = instruments
        .into_iter()
        .filter(|sym| {
            let keep = cells
                .iter()
                .any(|((_, s), (v, _))| s == sym && !is_missing(v[Field::Close as usize]));
            if !keep {
                tracing::warn!(instrument = %sym, "dropping instrument with no close values");
            }
            keep
        })
        .collect();
    let date_pos: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let inst_pos: HashMap<&str, usize> = instruments.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut fields: [Matrix; 5] = std::array::from_fn(|_| Matrix::missing(dates.len(), instruments.len()));
    for ((date, inst), (vals, _)) in &cells {
        let Some(&c) = inst_pos.get(inst.as_str()) else { continue };
        let r = date_pos[date];
        for (k, v) in vals.iter().enumerate() {
            fields[k].set(r, c, *v);
        }
    }
    Panel::new(dates, instruments, fields)
}

/// Keeps instruments with at least `min_days` non-missing closes.
pub fn filter_universe(panel: &Panel, min_days: usize) -> Result<Panel> {
    if min_days == 0 {
        return Err(PanelError::Invalid("min_days must be >= 1".into()));
    }
    let close = panel.close();
    let keep: Vec<usize> = (0..panel.n_instruments())
        .filter(|&c| (0..panel.n_dates()).filter(|&r| close.get(r, c).is_some()).count() >= min_days)
        .collect();
    if keep.is_empty() {
        return Err(PanelError::EmptyUniverse { min_days });
    }
    let instruments = keep.iter().map(|&c| panel.instruments[c].clone()).collect();
    let fields = panel.fields.iter().map(|m| m.select_cols(&keep)).collect::<Vec<_>>();
    Panel::new(panel.dates.clone(), instruments, fields.try_into().expect("five fields"))
}

/// Simple forward returns over `horizon` dates; only ever used as labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub horizon: usize,
    pub values: Matrix,
}

impl ReturnPanel {
    /// Labels usable inside the date window `rows`: the cell at `t` is kept only
    /// when `t + horizon` also lies inside the window, so nothing past the
    /// window's end is ever read.
    pub fn within(&self, rows: Range<usize>) -> Matrix {
        let mut out = Matrix::missing(self.values.rows(), self.values.cols());
        for t in rows.clone() {
            if t + self.horizon >= rows.end {
                break;
            }
            out.row_mut(t).copy_from_slice(self.values.row(t));
        }
        out
    }
}

pub fn forward_returns(panel: &Panel, horizon: usize) -> ReturnPanel {
    assert!(horizon >= 1, "horizon must be >= 1");
    let close = panel.close();
    let (n, m) = close.shape();
    let mut values = Matrix::missing(n, m);
    for t in 0..n.saturating_sub(horizon) {
        for c in 0..m {
            if let (Some(now), Some(later)) = (close.get(t, c), close.get(t + horizon, c)) {
                values.set(t, c, later / now - 1.0);
            }
        }
    }
    ReturnPanel { horizon, values }
}

/// Per-date z-score over non-missing entries (population std). Dates with
/// fewer than two entries or zero variance map their entries to 0.
pub fn cross_sectional_zscore(matrix: &Matrix) -> Matrix {
    let mut out = Matrix::missing(matrix.rows(), matrix.cols());
    for r in 0..matrix.rows() {
        zscore_row_into(matrix.row(r), out.row_mut(r));
    }
    out
}

pub(crate) fn zscore_row_into(row: &[f64], out: &mut [f64]) {
    let present: Vec<f64> = row.iter().copied().filter(|v| !is_missing(*v)).collect();
    let (mu, sd) = if present.len() >= 2 {
        (crate::stats::mean(&present), crate::stats::std_pop(&present))
    } else {
        (0.0, 0.0)
    };
    let degenerate = present.len() < 2 || !(sd > 0.0) || crate::stats::is_degenerate_spread(sd, mu);
    for (o, &v) in out.iter_mut().zip(row) {
        *o = if is_missing(v) {
            MISSING
        } else if degenerate {
            0.0
        } else {
            crate::matrix::clean((v - mu) / sd)
        };
    }
}

/// Inclusive calendar interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateInterval {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    /// Parses `YYYY-MM-DD:YYYY-MM-DD`.
    pub fn parse(text: &str) -> Result<Self> {
        let (a, b) = text
            .split_once(':')
            .ok_or_else(|| PanelError::InvalidSplit(format!("`{text}` is not START:END")))?;
        let p = |s: &str| {
            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                .map_err(|_| PanelError::InvalidSplit(format!("bad date `{s}`")))
        };
        Ok(Self::new(p(a)?, p(b)?))
    }

    fn rows(&self, dates: &[NaiveDate]) -> Range<usize> {
        let lo = dates.partition_point(|d| *d < self.start);
        let hi = dates.partition_point(|d| *d <= self.end);
        lo..hi.max(lo)
    }
}

impl fmt::Display for DateInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start.format("%Y-%m-%d"), self.end.format("%Y-%m-%d"))
    }
}

impl std::str::FromStr for DateInterval {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self> {
        DateInterval::parse(s)
    }
}

/// Train / validation / test date intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateInterval,
    pub validation: DateInterval,
    pub test: DateInterval,
}

/// Row ranges of a [`SplitSpec`] on a concrete panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSplits {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [("train", self.train), ("validation", self.validation), ("test", self.test)] {
            if iv.start > iv.end {
                return Err(PanelError::InvalidSplit(format!("{name} interval ends before it starts")));
            }
        }
        if self.train.end >= self.validation.start || self.validation.end >= self.test.start {
            return Err(PanelError::InvalidSplit("intervals must be disjoint and ordered train < validation < test".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, panel: &Panel) -> Result<ResolvedSplits> {
        self.validate()?;
        let train = self.train.rows(panel.dates());
        let validation = self.validation.rows(panel.dates());
        let test = self.test.rows(panel.dates());
        for (name, r) in [("train", &train), ("validation", &validation), ("test", &test)] {
            if r.is_empty() {
                return Err(PanelError::InvalidSplit(format!("{name} interval contains no panel dates")));
            }
        }
        Ok(ResolvedSplits { train, validation, test })
    }
}
