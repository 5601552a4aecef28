//! Open/high/low price ingestion and the log range-based volatility panel.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Range variances below this are clamped before the log.
pub const DEFAULT_FLOOR: f64 = 1e-12;

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, PartialEq)]
pub struct OhlcRecord {
    pub date: NaiveDate,
    pub series: String,
    pub open: f64,
    pub high: f64,
    pub low: f64,
}

impl OhlcRecord {
    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low];
        if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Data(format!(
                "{} {}: prices must be positive and finite",
                self.series, self.date
            )));
        }
        if self.high < self.low {
            return Err(Error::Data(format!(
                "{} {}: high {} is below low {}",
                self.series, self.date, self.high, self.low
            )));
        }
        if self.open < self.low || self.open > self.high {
            return Err(Error::Data(format!(
                "{} {}: open {} is outside [low, high]",
                self.series, self.date, self.open
            )));
        }
        Ok(())
    }

    pub fn parkinson_variance(&self) -> Result<f64> {
        parkinson_variance(self.open, self.high, self.low)
    }
}

/// (h − l)² / (4 ln 2) with h = ln(H/O) and l = ln(L/O).
pub fn parkinson_variance(open: f64, high: f64, low: f64) -> Result<f64> {
    if [open, high, low]
        .iter()
        .any(|p| !(p.is_finite() && *p > 0.0))
    {
        return Err(Error::Data("prices must be positive and finite".into()));
    }
    if high < low {
        return Err(Error::Data(format!("high {high} is below low {low}")));
    }
    let range = (high / open).ln() - (low / open).ln();
    Ok(range * range / (4.0 * std::f64::consts::LN_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// `date, series, open, high, low`
    #[default]
    Long,
    /// `date` then `<series>_open, <series>_high, <series>_low` per series.
    Wide,
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "long" => Ok(Schema::Long),
            "wide" => Ok(Schema::Wide),
            other => Err(Error::Parameter(format!("unknown schema {other:?}"))),
        }
    }
}

/// Validated OHLC records sorted by date, then by series order.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcTable {
    labels: Vec<String>,
    records: Vec<OhlcRecord>,
}

impl OhlcTable {
    /// Validates, rejects duplicate (date, series) pairs and sorts.
    /// Series keep the order of their first appearance.
    pub fn new(records: Vec<OhlcRecord>) -> Result<Self> {
        let mut labels: Vec<String> = Vec::new();
        let mut position: HashMap<String, usize> = HashMap::new();
        for record in &records {
            record.validate()?;
            if !position.contains_key(&record.series) {
                position.insert(record.series.clone(), labels.len());
                labels.push(record.series.clone());
            }
        }
        let mut records = records;
        records.sort_by_key(|r| (r.date, position[&r.series]));
        if let Some(pair) = records
            .windows(2)
            .find(|w| w[0].date == w[1].date && w[0].series == w[1].series)
        {
            return Err(Error::Data(format!(
                "duplicate record for series {} on {}",
                pair[0].series, pair[0].date
            )));
        }
        Ok(Self { labels, records })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn records(&self) -> &[OhlcRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Long-format CSV with full-precision prices.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["date", "series", "open", "high", "low"])?;
        for r in &self.records {
            out.write_record([
                r.date.format(DATE_FORMAT).to_string(),
                r.series.clone(),
                r.open.to_string(),
                r.high.to_string(),
                r.low.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn parse_date(field: &str, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(field.trim(), DATE_FORMAT).map_err(|e| Error::Parse {
        row,
        message: format!("invalid date {field:?}: {e}"),
    })
}

fn parse_price(field: &str, name: &str, row: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("invalid {name} price {field:?}"),
    })
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("missing column {name:?}"),
        })
}

fn with_row(record: OhlcRecord, row: usize) -> Result<OhlcRecord> {
    record.validate().map_err(|e| Error::Parse {
        row,
        message: e.to_string().trim_start_matches("data error: ").to_string(),
    })?;
    Ok(record)
}

/// Parses OHLC records; error rows are file line numbers (header = 1).
pub fn read_ohlc<R: Read>(reader: R, schema: Schema) -> Result<OhlcTable> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let mut records = Vec::new();
    match schema {
        Schema::Long => {
            let idx = ["date", "series", "open", "high", "low"].map(|name| column(&headers, name));
            let [date, series, open, high, low] = idx;
            let (date, series, open, high, low) = (date?, series?, open?, high?, low?);
            for row in csv.records() {
                let row = row?;
                let line = row.position().map_or(0, |p| p.line() as usize);
                let field = |i: usize| row.get(i).unwrap_or("");
                let record = OhlcRecord {
                    date: parse_date(field(date), line)?,
                    series: field(series).to_string(),
                    open: parse_price(field(open), "open", line)?,
                    high: parse_price(field(high), "high", line)?,
                    low: parse_price(field(low), "low", line)?,
                };
                if record.series.is_empty() {
                    return Err(Error::Parse {
                        row: line,
                        message: "empty series name".into(),
                    });
                }
                records.push(with_row(record, line)?);
            }
        }
        Schema::Wide => {
            let date = column(&headers, "date")?;
            let triplets = wide_columns(&headers, date)?;
            for row in csv.records() {
                let row = row?;
                let line = row.position().map_or(0, |p| p.line() as usize);
                let field = |i: usize| row.get(i).unwrap_or("");
                let day = parse_date(field(date), line)?;
                for (label, [o, h, l]) in &triplets {
                    let record = OhlcRecord {
                        date: day,
                        series: label.clone(),
                        open: parse_price(field(*o), "open", line)?,
                        high: parse_price(field(*h), "high", line)?,
                        low: parse_price(field(*l), "low", line)?,
                    };
                    records.push(with_row(record, line)?);
                }
            }
        }
    }
    OhlcTable::new(records)
}

fn wide_columns(headers: &csv::StringRecord, date: usize) -> Result<Vec<(String, [usize; 3])>> {
    let mut found: Vec<(String, [Option<usize>; 3])> = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        if i == date {
            continue;
        }
        let lower = name.to_ascii_lowercase();
        let (label, slot) = match ["_open", "_high", "_low"]
            .iter()
            .position(|suffix| lower.ends_with(suffix))
        {
            Some(slot) => (
                name[..name.len() - ["_open", "_high", "_low"][slot].len()].to_string(),
                slot,
            ),
            None => {
                return Err(Error::Parse {
                    row: 1,
                    message: format!("column {name:?} is not <series>_open/_high/_low"),
                })
            }
        };
        match found.iter_mut().find(|(l, _)| *l == label) {
            Some((_, slots)) if slots[slot].is_some() => {
                return Err(Error::Parse {
                    row: 1,
                    message: format!("duplicate column {name:?}"),
                })
            }
            Some((_, slots)) => slots[slot] = Some(i),
            None => {
                let mut slots = [None; 3];
                slots[slot] = Some(i);
                found.push((label, slots));
            }
        }
    }
    found
        .into_iter()
        .map(|(label, slots)| match slots {
            [Some(o), Some(h), Some(l)] => Ok((label, [o, h, l])),
            _ => Err(Error::Parse {
                row: 1,
                message: format!("series {label:?} lacks one of open/high/low"),
            }),
        })
        .collect()
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: Schema) -> Result<OhlcTable> {
    read_ohlc(std::fs::File::open(path)?, schema)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Any date missing a series is an error.
    #[default]
    Strict,
    /// Dates missing a series are dropped for all series.
    Lenient,
}

/// T×J log range variances on a common, strictly increasing date index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolatilityPanel {
    pub labels: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub log_vol: DMatrix<f64>,
    pub means: DVector<f64>,
}

impl VolatilityPanel {
    pub fn new(labels: Vec<String>, dates: Vec<NaiveDate>, log_vol: DMatrix<f64>) -> Result<Self> {
        if log_vol.nrows() != dates.len() || log_vol.ncols() != labels.len() {
            return Err(Error::Dimension(format!(
                "panel is {}x{} but has {} dates and {} labels",
                log_vol.nrows(),
                log_vol.ncols(),
                dates.len(),
                labels.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data(
                "panel dates must be strictly increasing".into(),
            ));
        }
        if log_vol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("panel has non-finite log volatilities".into()));
        }
        let means = if log_vol.nrows() == 0 {
            DVector::zeros(log_vol.ncols())
        } else {
            log_vol.row_mean().transpose()
        };
        Ok(Self {
            labels,
            dates,
            log_vol,
            means,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// `date` then one column per label.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.labels.iter().cloned());
        out.write_record(&header)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut row = vec![date.format(DATE_FORMAT).to_string()];
            row.extend(self.log_vol.row(t).iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.get(0).map(|h| h.eq_ignore_ascii_case("date")) != Some(true) {
            return Err(Error::Parse {
                row: 1,
                message: "first column must be date".into(),
            });
        }
        let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for row in csv.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            if row.len() != labels.len() + 1 {
                return Err(Error::Parse {
                    row: line,
                    message: format!("expected {} fields, got {}", labels.len() + 1, row.len()),
                });
            }
            dates.push(parse_date(&row[0], line)?);
            for field in row.iter().skip(1) {
                values.push(field.parse::<f64>().map_err(|_| Error::Parse {
                    row: line,
                    message: format!("invalid value {field:?}"),
                })?);
            }
        }
        let log_vol = DMatrix::from_row_slice(dates.len(), labels.len(), &values);
        Self::new(labels, dates, log_vol)
    }
}

/// Parkinson variances clamped at `floor`, then logged.
pub fn build_volatility_panel(
    table: &OhlcTable,
    floor: f64,
    alignment: Alignment,
) -> Result<VolatilityPanel> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::Parameter(format!(
            "floor must be positive, got {floor}"
        )));
    }
    let labels = table.labels().to_vec();
    let j = labels.len();
    let column: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut by_date: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for r in table.records() {
        let v = r.parkinson_variance()?.max(floor);
        by_date.entry(r.date).or_insert_with(|| vec![None; j])[column[r.series.as_str()]] =
            Some(v.ln());
    }
    let incomplete: Vec<NaiveDate> = by_date
        .iter()
        .filter(|(_, row)| row.iter().any(Option::is_none))
        .map(|(d, _)| *d)
        .collect();
    if !incomplete.is_empty() && alignment == Alignment::Strict {
        return Err(Error::Alignment(incomplete));
    }
    let rows: Vec<(NaiveDate, Vec<f64>)> = by_date
        .into_iter()
        .filter_map(|(d, row)| {
            row.into_iter()
                .collect::<Option<Vec<f64>>>()
                .map(|r| (d, r))
        })
        .collect();
    let dates: Vec<NaiveDate> = rows.iter().map(|(d, _)| *d).collect();
    let flat: Vec<f64> = rows.into_iter().flat_map(|(_, r)| r).collect();
    let log_vol = DMatrix::from_row_slice(dates.len(), j, &flat);
    VolatilityPanel::new(labels, dates, log_vol)
}
