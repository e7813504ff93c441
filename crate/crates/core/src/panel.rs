//! Monthly fund and factor panels.
//!
//! Every series in a [`MonthlyPanel`] is stored on the panel's full span, so a
//! fund that reports only part of the history carries leading or trailing
//! missing values. Returns are simple monthly returns (`0.02` = 2%).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Minimum number of paired observations accepted for a five-coefficient fit.
pub const MIN_OVERLAP: usize = 8;

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthIndex {
    year: i32,
    month: u32,
}

impl MonthIndex {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidMonth(format!("{year:04}-{month:02}")));
        }
        Ok(Self { year, month })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    /// Months since year 0, January.
    pub fn ordinal(&self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: ord.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn offset(&self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    pub fn next(&self) -> Self {
        self.offset(1)
    }

    pub fn prev(&self) -> Self {
        self.offset(-1)
    }

    /// Signed number of months from `self` to `other`.
    pub fn months_until(&self, other: MonthIndex) -> i64 {
        other.ordinal() - self.ordinal()
    }

    /// Inclusive range of months.
    pub fn range_inclusive(start: MonthIndex, end: MonthIndex) -> impl Iterator<Item = MonthIndex> {
        (start.ordinal()..=end.ordinal()).map(MonthIndex::from_ordinal)
    }
}

impl fmt::Display for MonthIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidMonth(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        MonthIndex::new(year, month).map_err(|_| bad())
    }
}

impl Serialize for MonthIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Monthly simple returns with optional gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub start: MonthIndex,
    pub values: Vec<Option<f64>>,
}

impl ReturnSeries {
    pub fn new(start: MonthIndex, values: Vec<Option<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("return series must have at least one month"));
        }
        if let Some(v) = values.iter().flatten().find(|v| !(**v > -1.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("return {v} is not > -1")));
        }
        Ok(Self { start, values })
    }

    /// Builds a fully observed series.
    pub fn from_values(start: MonthIndex, values: &[f64]) -> Result<Self> {
        Self::new(start, values.iter().map(|v| Some(*v)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> MonthIndex {
        self.start.offset(self.values.len() as i64 - 1)
    }

    pub fn get(&self, month: MonthIndex) -> Option<f64> {
        let i = self.start.months_until(month);
        if i < 0 {
            return None;
        }
        self.values.get(i as usize).copied().flatten()
    }

    pub fn covers(&self, month: MonthIndex) -> bool {
        month >= self.start && month <= self.end()
    }

    /// Present values in `[from, to]`, in month order.
    pub fn present_in(&self, from: MonthIndex, to: MonthIndex) -> Vec<f64> {
        MonthIndex::range_inclusive(from.max(self.start), to.min(self.end()))
            .filter_map(|m| self.get(m))
            .collect()
    }

    /// First and last month with a present value.
    pub fn coverage(&self) -> Option<(MonthIndex, MonthIndex)> {
        let first = self.values.iter().position(Option::is_some)?;
        let last = self.values.iter().rposition(Option::is_some)?;
        Some((self.start.offset(first as i64), self.start.offset(last as i64)))
    }

    /// Restricts the series to months `<= end`. Returns `None` when nothing is left.
    pub fn truncated(&self, end: MonthIndex) -> Option<Self> {
        let n = self.start.months_until(end) + 1;
        if n <= 0 {
            return None;
        }
        let n = (n as usize).min(self.values.len());
        Some(Self {
            start: self.start,
            values: self.values[..n].to_vec(),
        })
    }
}

/// Converts a simple return to a log return.
pub fn to_log_return(r: f64) -> f64 {
    r.ln_1p()
}

/// Converts a log return to a simple return.
pub fn from_log_return(l: f64) -> f64 {
    l.exp_m1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundRecord {
    pub id: String,
    pub returns: ReturnSeries,
    /// Assets under management, indexed like `returns`.
    pub aum: Vec<Option<f64>>,
}

impl FundRecord {
    pub fn aum_at(&self, month: MonthIndex) -> Option<f64> {
        let i = self.returns.start.months_until(month);
        if i < 0 {
            return None;
        }
        self.aum.get(i as usize).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRecord {
    pub id: String,
    pub returns: ReturnSeries,
}

/// Aligned fund and factor histories over a common span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPanel {
    pub funds: Vec<FundRecord>,
    pub factors: Vec<FactorRecord>,
    pub span: (MonthIndex, MonthIndex),
}

impl MonthlyPanel {
    /// Validates id uniqueness, span containment and factor completeness.
    pub fn new(
        funds: Vec<FundRecord>,
        factors: Vec<FactorRecord>,
        span: (MonthIndex, MonthIndex),
    ) -> Result<Self> {
        if span.1 < span.0 {
            return Err(Error::invalid("panel span ends before it starts"));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &funds {
            if !seen.insert(f.id.as_str()) {
                return Err(Error::invalid(format!("duplicate fund id '{}'", f.id)));
            }
            check_within(&f.returns, span, &f.id)?;
            if f.aum.len() != f.returns.len() {
                return Err(Error::invalid(format!("fund '{}': aum and returns differ in length", f.id)));
            }
            if let Some(a) = f.aum.iter().flatten().find(|a| !(**a >= 0.0)) {
                return Err(Error::invalid(format!("fund '{}': negative aum {a}", f.id)));
            }
        }
        seen.clear();
        for f in &factors {
            if !seen.insert(f.id.as_str()) {
                return Err(Error::invalid(format!("duplicate factor id '{}'", f.id)));
            }
            check_within(&f.returns, span, &f.id)?;
            check_no_gaps(f)?;
        }
        Ok(Self { funds, factors, span })
    }

    pub fn n_months(&self) -> usize {
        (self.span.0.months_until(self.span.1) + 1) as usize
    }

    pub fn months(&self) -> impl Iterator<Item = MonthIndex> {
        MonthIndex::range_inclusive(self.span.0, self.span.1)
    }

    pub fn fund(&self, id: &str) -> Result<&FundRecord> {
        self.funds
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Error::UnknownFund(id.to_string()))
    }

    pub fn factor(&self, id: &str) -> Result<&FactorRecord> {
        self.factors
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Error::UnknownFactor(id.to_string()))
    }

    /// Drops every observation after `end`, as if the data stopped there.
    pub fn truncated(&self, end: MonthIndex) -> Result<Self> {
        if end < self.span.0 {
            return Err(Error::invalid("truncation month precedes the panel span"));
        }
        let end = end.min(self.span.1);
        let funds = self
            .funds
            .iter()
            .filter_map(|f| {
                let returns = f.returns.truncated(end)?;
                let n = returns.len();
                Some(FundRecord {
                    id: f.id.clone(),
                    aum: f.aum[..n].to_vec(),
                    returns,
                })
            })
            .collect();
        let factors = self
            .factors
            .iter()
            .filter_map(|f| {
                Some(FactorRecord {
                    id: f.id.clone(),
                    returns: f.returns.truncated(end)?,
                })
            })
            .collect();
        Ok(Self {
            funds,
            factors,
            span: (self.span.0, end),
        })
    }
}

fn check_within(s: &ReturnSeries, span: (MonthIndex, MonthIndex), id: &str) -> Result<()> {
    if s.start < span.0 || s.end() > span.1 {
        return Err(Error::invalid(format!(
            "series '{id}' ({}..{}) falls outside the panel span {}..{}",
            s.start,
            s.end(),
            span.0,
            span.1
        )));
    }
    Ok(())
}

fn check_no_gaps(f: &FactorRecord) -> Result<()> {
    if let Some((first, last)) = f.returns.coverage() {
        if let Some(m) = MonthIndex::range_inclusive(first, last).find(|m| f.returns.get(*m).is_none()) {
            return Err(Error::invalid(format!("factor '{}' has a gap at {m}", f.id)));
        }
    }
    Ok(())
}

/// Paired, fully observed (y, x) samples over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub months: Vec<MonthIndex>,
    /// Months of the window skipped because either side was missing.
    pub dropped: usize,
}

impl AlignedPair {
    /// Builds a pair from raw vectors, labelling months from an arbitrary origin.
    pub fn from_vectors(y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if y.len() != x.len() {
            return Err(Error::invalid("y and x differ in length"));
        }
        let origin = MonthIndex { year: 2000, month: 1 };
        let months = (0..y.len() as i64).map(|i| origin.offset(i)).collect();
        Ok(Self { y, x, months, dropped: 0 })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Intersects `y` and `x` over `window`, keeping months where both are present.
pub fn align(y: &ReturnSeries, x: &ReturnSeries, window: (MonthIndex, MonthIndex)) -> Result<AlignedPair> {
    let (from, to) = window;
    if to < from {
        return Err(Error::invalid("window ends before it starts"));
    }
    if !(y.covers(from) && y.covers(to) && x.covers(from) && x.covers(to)) {
        return Err(Error::invalid(format!("window {from}..{to} is outside a series' span")));
    }
    let mut pair = AlignedPair {
        y: Vec::new(),
        x: Vec::new(),
        months: Vec::new(),
        dropped: 0,
    };
    for m in MonthIndex::range_inclusive(from, to) {
        match (y.get(m), x.get(m)) {
            (Some(a), Some(b)) => {
                pair.y.push(a);
                pair.x.push(b);
                pair.months.push(m);
            }
            _ => pair.dropped += 1,
        }
    }
    if pair.len() < MIN_OVERLAP {
        return Err(Error::InsufficientData {
            have: pair.len(),
            need: MIN_OVERLAP,
        });
    }
    Ok(pair)
}

/// Features that carry a fixed fill value when missing at selection time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureName {
    Return,
    Sharpe,
    #[serde(rename = "LTS")]
    Lts,
    #[serde(rename = "MRaR")]
    Mrar,
}

impl FeatureName {
    pub fn fill_value(self) -> f64 {
        match self {
            FeatureName::Return => -30.0,
            FeatureName::Sharpe => -3.0,
            FeatureName::Lts => -1.0,
            FeatureName::Mrar => -3.0,
        }
    }
}

impl FromStr for FeatureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "return" => Ok(FeatureName::Return),
            "sharpe" => Ok(FeatureName::Sharpe),
            "lts" => Ok(FeatureName::Lts),
            "mrar" => Ok(FeatureName::Mrar),
            _ => Err(Error::UnknownFeature(s.to_string())),
        }
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureName::Return => "Return",
            FeatureName::Sharpe => "Sharpe",
            FeatureName::Lts => "LTS",
            FeatureName::Mrar => "MRaR",
        })
    }
}

/// Replaces a missing feature value with its fill constant.
pub fn impute_feature(name: FeatureName, value: Option<f64>) -> f64 {
    value.unwrap_or_else(|| name.fill_value())
}

/// String-keyed variant of [`impute_feature`].
pub fn impute_named(name: &str, value: Option<f64>) -> Result<f64> {
    Ok(impute_feature(name.parse()?, value))
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct RawRow {
    id: String,
    month: MonthIndex,
    ret: Option<f64>,
    aum: Option<f64>,
}

fn parse_cell(cell: &str, what: &str, file: &str, row: usize) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        row,
        message: format!("non-numeric {what} '{cell}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            file: file.to_string(),
            row,
            message: format!("non-finite {what} '{cell}'"),
        });
    }
    Ok(Some(v))
}

/// Reads `id,date,return[,aum]` rows. Row numbers are 1-based file lines.
fn read_rows(path: &Path, with_aum: bool) -> Result<Vec<RawRow>> {
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_err(&file, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(&file, e))?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::EmptyFile { file });
    }
    let expected: &[&str] = if with_aum {
        &["id", "date", "return", "aum"]
    } else {
        &["id", "date", "return"]
    };
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            file,
            row: 1,
            message: format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        });
    }

    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&file, e))?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                file,
                row,
                message: "empty id".into(),
            });
        }
        let month: MonthIndex = rec[1].parse().map_err(|_| Error::Parse {
            file: file.clone(),
            row,
            message: format!("malformed date '{}'", &rec[1]),
        })?;
        let ret = parse_cell(&rec[2], "return", &file, row)?;
        if let Some(r) = ret {
            if r <= -1.0 {
                return Err(Error::Parse {
                    file,
                    row,
                    message: format!("return {r} is not > -1"),
                });
            }
        }
        let aum = if with_aum {
            let a = parse_cell(&rec[3], "aum", &file, row)?;
            if let Some(a) = a {
                if a < 0.0 {
                    return Err(Error::Parse {
                        file,
                        row,
                        message: format!("negative aum {a}"),
                    });
                }
            }
            a
        } else {
            None
        };
        if !seen.insert((id.clone(), month)) {
            return Err(Error::Parse {
                file,
                row,
                message: format!("duplicate row for ('{id}', {month})"),
            });
        }
        rows.push(RawRow { id, month, ret, aum });
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile { file });
    }
    Ok(rows)
}

fn csv_err(file: &str, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: file.to_string(),
            source,
        },
        kind => Error::Parse {
            file: file.to_string(),
            row,
            message: format!("{kind:?}"),
        },
    }
}

/// Groups rows by id in first-appearance order.
fn group(rows: &[RawRow]) -> Vec<(String, Vec<&RawRow>)> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<&str, Vec<&RawRow>> = HashMap::new();
    for r in rows {
        by_id
            .entry(r.id.as_str())
            .or_insert_with(|| {
                order.push(r.id.clone());
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let v = by_id.remove(id.as_str()).unwrap_or_default();
            (id, v)
        })
        .collect()
}

/// Loads fund and factor CSVs into a panel spanning every month seen in either file.
///
/// Missing cells stay missing; imputation happens at the selection layer.
pub fn load_panel(fund_path: impl AsRef<Path>, factor_path: impl AsRef<Path>) -> Result<MonthlyPanel> {
    let fund_rows = read_rows(fund_path.as_ref(), true)?;
    let factor_rows = read_rows(factor_path.as_ref(), false)?;
    let all = fund_rows.iter().chain(&factor_rows).map(|r| r.month);
    let start = all.clone().min().expect("non-empty");
    let end = all.max().expect("non-empty");
    let n = (start.months_until(end) + 1) as usize;

    let funds = group(&fund_rows)
        .into_iter()
        .map(|(id, rows)| {
            let mut values = vec![None; n];
            let mut aum = vec![None; n];
            for r in rows {
                let i = start.months_until(r.month) as usize;
                values[i] = r.ret;
                aum[i] = r.aum;
            }
            FundRecord {
                id,
                returns: ReturnSeries { start, values },
                aum,
            }
        })
        .collect();
    let factors = group(&factor_rows)
        .into_iter()
        .map(|(id, rows)| {
            let mut values = vec![None; n];
            for r in rows {
                values[start.months_until(r.month) as usize] = r.ret;
            }
            FactorRecord {
                id,
                returns: ReturnSeries { start, values },
            }
        })
        .collect();
    MonthlyPanel::new(funds, factors, (start, end))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the fund CSV. Months with neither a return nor an AUM are omitted.
pub fn write_funds_csv<W: Write>(panel: &MonthlyPanel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(["id", "date", "return", "aum"]).map_err(err)?;
    for f in &panel.funds {
        for (i, r) in f.returns.values.iter().enumerate() {
            let a = f.aum[i];
            if r.is_none() && a.is_none() {
                continue;
            }
            let m = f.returns.start.offset(i as i64).to_string();
            w.write_record([f.id.as_str(), &m, &fmt_opt(*r), &fmt_opt(a)]).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<fund csv>", e))
}

/// Writes the factor CSV over each factor's observed coverage.
pub fn write_factors_csv<W: Write>(panel: &MonthlyPanel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(["id", "date", "return"]).map_err(err)?;
    for f in &panel.factors {
        for (i, r) in f.returns.values.iter().enumerate() {
            if let Some(r) = r {
                let m = f.returns.start.offset(i as i64).to_string();
                w.write_record([f.id.as_str(), &m, &r.to_string()]).map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<factor csv>", e))
}

/// Writes both panel files.
pub fn save_panel(panel: &MonthlyPanel, fund_path: impl AsRef<Path>, factor_path: impl AsRef<Path>) -> Result<()> {
    let fp = fund_path.as_ref();
    let f = std::fs::File::create(fp).map_err(|e| Error::io(fp, e))?;
    write_funds_csv(panel, std::io::BufWriter::new(f))?;
    let xp = factor_path.as_ref();
    let f = std::fs::File::create(xp).map_err(|e| Error::io(xp, e))?;
    write_factors_csv(panel, std::io::BufWriter::new(f))
}

/// Loads a `date,return` benchmark index.
pub fn load_benchmark(path: impl AsRef<Path>) -> Result<ReturnSeries> {
    let path = path.as_ref();
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(&file, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(&file, e))?.clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != ["date", "return"] {
        return Err(Error::Parse {
            file,
            row: 1,
            message: format!("expected header 'date,return', found '{}'", got.join(",")),
        });
    }
    let mut points = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&file, e))?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let month: MonthIndex = rec[0].parse().map_err(|_| Error::Parse {
            file: file.clone(),
            row,
            message: format!("malformed date '{}'", &rec[0]),
        })?;
        let v = parse_cell(&rec[1], "return", &file, row)?;
        if points.insert(month, v).is_some() {
            return Err(Error::Parse {
                file,
                row,
                message: format!("duplicate date {month}"),
            });
        }
    }
    let (&start, _) = points.iter().next().ok_or(Error::EmptyFile { file })?;
    let end = *points.keys().next_back().expect("non-empty");
    let values = MonthIndex::range_inclusive(start, end)
        .map(|m| points.get(&m).copied().flatten())
        .collect();
    ReturnSeries::new(start, values)
}
