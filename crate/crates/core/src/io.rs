//! CSV files.
//!
//! Every file starts with a `# taxopt-schema <name> v<version>` comment line,
//! followed by a header row. Lines starting with `#` are ignored on input.
//! Dates are ISO-8601, booleans are `true`/`false` (or `1`/`0`), and floats
//! are written in shortest round-trip form.
//!
//! | file | columns |
//! |------|---------|
//! | `lots.csv` | `asset_id, lot_id, quantity, basis, acquisition_date` |
//! | `prices.csv` | `date, asset_id, close, dividend, in_benchmark, benchmark_weight`; a missing row means not listed |
//! | `exposures.csv` | `date, asset_id, f0 .. f{k-1}` |
//! | `factor_cov.csv` | `f0 .. f{k-1}`, one row per factor |
//! | `specific_var.csv` | `date, asset_id, var` |
//! | `assets.csv` | `asset_id, price, alpha, benchmark_weight, spread, specific_var, buy_allowed` |
//! | `params.csv` | `key, value` |
//! | `trades.csv` | `date, asset_id, lot_id, side, shares, dollars, realized_tax, price, basis, acquisition_date, term` |
//! | `metrics.csv` | `date, active_risk, cum_tax_liability, account_value, utility, bound, gap, solve_seconds` |
//!
//! A single-instance directory holds `assets.csv`, `lots.csv`,
//! `exposures.csv` (its `date` column may be omitted), `factor_cov.csv` and
//! `params.csv`. Parameter keys: `asof`, `cash_init`, `eta`,
//! `gamma_risk_tilde`, `gamma_tc`, `gamma_tax`, `rho_lt`, `rho_st`. The risk
//! weight is `gamma_risk_tilde / account value`.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::backtest::{MarketData, MetricRow, RiskSnapshot, Side, TradeRecord};
use crate::ledger::{AssetPosition, TaxLot, TaxParameters, Term};
use crate::tam::{FactorRiskModel, LinearConstraintSet, RowTarget, TamError, TamProblemData};

pub const SCHEMA_VERSION: u32 = 1;
const SCHEMA_TAG: &str = "# taxopt-schema";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error(transparent)]
    Problem(#[from] TamError),
}

/// Parsed rows of one file with their line numbers.
pub struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

/// One row of a [`Table`] with typed field access.
pub struct Row<'a> {
    table: &'a Table,
    line: u64,
    fields: &'a [String],
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn require(&self, columns: &[&str]) -> Result<(), IoError> {
        let missing: Vec<&str> = columns
            .iter()
            .filter(|c| !self.headers.iter().any(|h| h == *c))
            .copied()
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(IoError::Schema {
                path: self.path.clone(),
                message: format!("missing column(s): {}", missing.join(", ")),
            })
        }
    }

    pub fn has(&self, column: &str) -> bool {
        self.headers.iter().any(|h| h == column)
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().map(|(line, fields)| Row {
            table: self,
            line: *line,
            fields,
        })
    }
}

impl Row<'_> {
    pub fn line(&self) -> u64 {
        self.line
    }

    pub fn error(&self, message: impl Into<String>) -> IoError {
        IoError::Parse {
            path: self.table.path.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    pub fn str(&self, column: &str) -> Result<&str, IoError> {
        let k = self
            .table
            .headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| self.error(format!("no column {column}")))?;
        self.fields.get(k).map(String::as_str).ok_or_else(|| self.error(format!("missing field {column}")))
    }

    pub fn f64(&self, column: &str) -> Result<f64, IoError> {
        let s = self.str(column)?;
        let v: f64 = s
            .parse()
            .map_err(|_| self.error(format!("{column}: cannot parse {s:?} as a number")))?;
        if v.is_nan() {
            return Err(self.error(format!("{column}: NaN is not allowed")));
        }
        Ok(v)
    }

    /// Empty fields read as `default`.
    pub fn f64_or(&self, column: &str, default: f64) -> Result<f64, IoError> {
        if !self.table.has(column) || self.str(column)?.is_empty() {
            Ok(default)
        } else {
            self.f64(column)
        }
    }

    pub fn date(&self, column: &str) -> Result<NaiveDate, IoError> {
        let s = self.str(column)?;
        NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| self.error(format!("{column}: {s:?} is not an ISO-8601 date")))
    }

    pub fn bool(&self, column: &str) -> Result<bool, IoError> {
        match self.str(column)? {
            "true" | "1" | "TRUE" | "True" => Ok(true),
            "false" | "0" | "FALSE" | "False" => Ok(false),
            other => Err(self.error(format!("{column}: {other:?} is not a boolean"))),
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => IoError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Writes a schema-tagged CSV through a temporary file in the target directory.
pub fn write_table(path: &Path, schema: &str, headers: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    let io = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    writeln!(tmp, "{SCHEMA_TAG} {schema} v{SCHEMA_VERSION}").map_err(io)?;
    {
        let mut w = csv::Writer::from_writer(&mut tmp);
        w.write_record(headers).map_err(|e| csv_error(path, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// The schema name and version from a file's first line, if tagged.
pub fn read_schema(path: &Path) -> Result<Option<(String, u32)>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let first = text.lines().next().unwrap_or("");
    let Some(rest) = first.strip_prefix(SCHEMA_TAG) else {
        return Ok(None);
    };
    let mut parts = rest.split_whitespace();
    let name = parts.next().unwrap_or("").to_string();
    let version = parts.next().and_then(|v| v.strip_prefix('v')).and_then(|v| v.parse().ok()).unwrap_or(0);
    Ok(Some((name, version)))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn read_lots(path: &Path) -> Result<Vec<(String, TaxLot)>, IoError> {
    let t = Table::read(path)?;
    t.require(&["asset_id", "lot_id", "quantity", "basis", "acquisition_date"])?;
    let mut out = Vec::new();
    for r in t.rows() {
        let quantity = r.f64("quantity")?;
        if !(quantity >= 0.0) || !quantity.is_finite() {
            return Err(r.error(format!("quantity must be nonnegative, got {quantity}")));
        }
        let basis = r.f64("basis")?;
        if !(basis > 0.0) || !basis.is_finite() {
            return Err(r.error(format!("basis must be positive, got {basis}")));
        }
        out.push((
            r.str("asset_id")?.to_string(),
            TaxLot::new(r.str("lot_id")?, quantity, basis, r.date("acquisition_date")?),
        ));
    }
    Ok(out)
}

pub fn write_lots(path: &Path, lots: &[(String, TaxLot)]) -> Result<(), IoError> {
    let rows: Vec<Vec<String>> = lots
        .iter()
        .map(|(a, l)| vec![a.clone(), l.lot_id.clone(), fmt(l.quantity), fmt(l.basis), l.acquisition_date.to_string()])
        .collect();
    write_table(path, "lots", &["asset_id", "lot_id", "quantity", "basis", "acquisition_date"], &rows)
}

fn factor_headers(k: usize) -> Vec<String> {
    (0..k).map(|f| format!("f{f}")).collect()
}

fn read_factor_cov(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let t = Table::read(path)?;
    let k = t.headers().len();
    let cols = factor_headers(k);
    let mut m = DMatrix::zeros(k, k);
    let mut count = 0;
    for (a, r) in t.rows().enumerate() {
        if a >= k {
            return Err(r.error(format!("expected {k} rows for a {k}-factor covariance")));
        }
        for (b, c) in cols.iter().enumerate() {
            m[(a, b)] = r.f64(c)?;
        }
        count += 1;
    }
    if count != k {
        return Err(IoError::Schema {
            path: path.to_path_buf(),
            message: format!("expected {k} rows, found {count}"),
        });
    }
    Ok(m)
}

fn write_factor_cov(path: &Path, m: &DMatrix<f64>) -> Result<(), IoError> {
    let headers = factor_headers(m.ncols());
    let rows: Vec<Vec<String>> = (0..m.nrows()).map(|a| (0..m.ncols()).map(|b| fmt(m[(a, b)])).collect()).collect();
    write_table(path, "factor_cov", &headers.iter().map(String::as_str).collect::<Vec<_>>(), &rows)
}

/// Reads `prices.csv`, `exposures.csv`, `factor_cov.csv` and `specific_var.csv`.
pub fn read_market(dir: &Path) -> Result<MarketData, IoError> {
    let prices_path = dir.join("prices.csv");
    let pt = Table::read(&prices_path)?;
    pt.require(&["date", "asset_id", "close"])?;
    let mut dates = BTreeSet::new();
    let mut assets: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    struct P {
        date: NaiveDate,
        asset: usize,
        close: f64,
        dividend: f64,
        member: bool,
        weight: f64,
        line: u64,
    }
    let mut parsed = Vec::new();
    for r in pt.rows() {
        let date = r.date("date")?;
        let id = r.str("asset_id")?.to_string();
        let close = r.f64("close")?;
        if !(close > 0.0) || !close.is_finite() {
            return Err(r.error(format!("close must be positive, got {close}")));
        }
        let asset = *index.entry(id.clone()).or_insert_with(|| {
            assets.push(id);
            assets.len() - 1
        });
        let weight = r.f64_or("benchmark_weight", 0.0)?;
        let member = if pt.has("in_benchmark") { r.bool("in_benchmark")? } else { weight > 0.0 };
        dates.insert(date);
        parsed.push(P {
            date,
            asset,
            close,
            dividend: r.f64_or("dividend", 0.0)?,
            member,
            weight,
            line: r.line(),
        });
    }
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let date_ix: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let (t, n) = (dates.len(), assets.len());
    let mut prices = vec![vec![None; n]; t];
    let mut dividends = vec![vec![0.0; n]; t];
    let mut in_benchmark = vec![vec![false; n]; t];
    let mut benchmark_weights = vec![vec![0.0; n]; t];
    for p in parsed {
        let d = date_ix[&p.date];
        if prices[d][p.asset].is_some() {
            return Err(IoError::Parse {
                path: prices_path.clone(),
                line: p.line,
                message: format!("duplicate row for {} on {}", assets[p.asset], p.date),
            });
        }
        prices[d][p.asset] = Some(p.close);
        dividends[d][p.asset] = p.dividend;
        in_benchmark[d][p.asset] = p.member;
        benchmark_weights[d][p.asset] = p.weight;
    }

    let factor_cov = read_factor_cov(&dir.join("factor_cov.csv"))?;
    let k = factor_cov.nrows();
    let cols = factor_headers(k);
    let et = Table::read(&dir.join("exposures.csv"))?;
    et.require(&["date", "asset_id"])?;
    let cols_ref: Vec<&str> = cols.iter().map(String::as_str).collect();
    et.require(&cols_ref)?;
    let vt = Table::read(&dir.join("specific_var.csv"))?;
    vt.require(&["date", "asset_id", "var"])?;

    let mut snaps: std::collections::BTreeMap<NaiveDate, (DMatrix<f64>, Vec<f64>, Vec<bool>, Vec<bool>)> = Default::default();
    let empty = || (DMatrix::zeros(n, k), vec![0.0; n], vec![false; n], vec![false; n]);
    for r in et.rows() {
        let date = r.date("date")?;
        let id = r.str("asset_id")?;
        let &i = index.get(id).ok_or_else(|| r.error(format!("unknown asset {id}")))?;
        let s = snaps.entry(date).or_insert_with(empty);
        for (f, c) in cols.iter().enumerate() {
            s.0[(i, f)] = r.f64(c)?;
        }
        s.2[i] = true;
    }
    for r in vt.rows() {
        let date = r.date("date")?;
        let id = r.str("asset_id")?;
        let &i = index.get(id).ok_or_else(|| r.error(format!("unknown asset {id}")))?;
        let var = r.f64("var")?;
        if !(var > 0.0) {
            return Err(r.error(format!("specific variance must be positive, got {var}")));
        }
        let s = snaps.entry(date).or_insert_with(empty);
        s.1[i] = var;
        s.3[i] = true;
    }
    let mut risk = Vec::new();
    for (date, (exposures, specific_var, has_x, has_d)) in snaps {
        if let Some(i) = (0..n).find(|&i| !has_x[i] || !has_d[i]) {
            return Err(IoError::Schema {
                path: dir.to_path_buf(),
                message: format!("risk snapshot {date} lacks exposures or specific variance for {}", assets[i]),
            });
        }
        risk.push(RiskSnapshot {
            date,
            exposures,
            specific_var,
        });
    }
    Ok(MarketData {
        dates,
        assets,
        prices,
        dividends,
        in_benchmark,
        benchmark_weights,
        factor_cov,
        risk,
    })
}

pub fn write_market(dir: &Path, m: &MarketData) -> Result<(), IoError> {
    let mut rows = Vec::new();
    for d in 0..m.dates.len() {
        for i in 0..m.n() {
            if let Some(p) = m.prices[d][i] {
                rows.push(vec![
                    m.dates[d].to_string(),
                    m.assets[i].clone(),
                    fmt(p),
                    fmt(m.dividends[d][i]),
                    m.in_benchmark[d][i].to_string(),
                    fmt(m.benchmark_weights[d][i]),
                ]);
            }
        }
    }
    write_table(
        &dir.join("prices.csv"),
        "prices",
        &["date", "asset_id", "close", "dividend", "in_benchmark", "benchmark_weight"],
        &rows,
    )?;
    write_factor_cov(&dir.join("factor_cov.csv"), &m.factor_cov)?;
    let cols = factor_headers(m.k());
    let mut headers = vec!["date", "asset_id"];
    headers.extend(cols.iter().map(String::as_str));
    let mut xrows = Vec::new();
    let mut vrows = Vec::new();
    for s in &m.risk {
        for i in 0..m.n() {
            let mut row = vec![s.date.to_string(), m.assets[i].clone()];
            row.extend((0..m.k()).map(|f| fmt(s.exposures[(i, f)])));
            xrows.push(row);
            vrows.push(vec![s.date.to_string(), m.assets[i].clone(), fmt(s.specific_var[i])]);
        }
    }
    write_table(&dir.join("exposures.csv"), "exposures", &headers, &xrows)?;
    write_table(&dir.join("specific_var.csv"), "specific_var", &["date", "asset_id", "var"], &vrows)
}

const TRADE_COLUMNS: [&str; 11] = [
    "date",
    "asset_id",
    "lot_id",
    "side",
    "shares",
    "dollars",
    "realized_tax",
    "price",
    "basis",
    "acquisition_date",
    "term",
];

fn term_tag(t: Option<Term>) -> &'static str {
    match t {
        Some(Term::Long) => "long",
        Some(Term::Short) => "short",
        None => "",
    }
}

pub fn write_trades(path: &Path, trades: &[TradeRecord]) -> Result<(), IoError> {
    let rows: Vec<Vec<String>> = trades
        .iter()
        .map(|t| {
            vec![
                t.date.to_string(),
                t.asset_id.clone(),
                t.lot_id.clone(),
                t.side.tag().to_string(),
                fmt(t.shares),
                fmt(t.dollars),
                fmt(t.realized_tax),
                fmt(t.price),
                fmt(t.basis),
                t.acquisition_date.to_string(),
                term_tag(t.term).to_string(),
            ]
        })
        .collect();
    write_table(path, "trades", &TRADE_COLUMNS, &rows)
}

pub fn read_trades(path: &Path) -> Result<Vec<TradeRecord>, IoError> {
    let t = Table::read(path)?;
    t.require(&TRADE_COLUMNS)?;
    t.rows()
        .map(|r| {
            let side = r.str("side")?;
            let term = match r.str("term")? {
                "long" => Some(Term::Long),
                "short" => Some(Term::Short),
                "" => None,
                other => return Err(r.error(format!("unknown term {other:?}"))),
            };
            Ok(TradeRecord {
                date: r.date("date")?,
                asset_id: r.str("asset_id")?.to_string(),
                lot_id: r.str("lot_id")?.to_string(),
                side: Side::parse(side).ok_or_else(|| r.error(format!("unknown side {side:?}")))?,
                shares: r.f64("shares")?,
                price: r.f64("price")?,
                dollars: r.f64("dollars")?,
                basis: r.f64("basis")?,
                acquisition_date: r.date("acquisition_date")?,
                term,
                realized_tax: r.f64("realized_tax")?,
            })
        })
        .collect()
}

pub fn write_metrics(path: &Path, metrics: &[MetricRow]) -> Result<(), IoError> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            vec![
                m.date.to_string(),
                fmt(m.active_risk),
                fmt(m.cum_tax_liability),
                fmt(m.account_value),
                fmt(m.utility),
                fmt(m.bound),
                fmt(m.gap),
                fmt(m.solve_seconds),
            ]
        })
        .collect();
    write_table(
        path,
        "metrics",
        &["date", "active_risk", "cum_tax_liability", "account_value", "utility", "bound", "gap", "solve_seconds"],
        &rows,
    )
}

/// Scalar inputs of a single-instance directory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceParams {
    pub asof: NaiveDate,
    pub cash_init: f64,
    pub eta: f64,
    pub gamma_risk_tilde: f64,
    pub gamma_tc: f64,
    pub gamma_tax: f64,
    pub tax: TaxParameters,
}

/// Per-asset rows of `assets.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetRow {
    pub asset_id: String,
    pub price: f64,
    pub alpha: f64,
    pub benchmark_weight: f64,
    pub spread: f64,
    pub specific_var: f64,
    pub buy_allowed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFiles {
    pub params: InstanceParams,
    pub assets: Vec<AssetRow>,
    pub lots: Vec<(String, TaxLot)>,
    pub exposures: DMatrix<f64>,
    pub factor_cov: DMatrix<f64>,
}

pub fn read_instance(dir: &Path) -> Result<InstanceFiles, IoError> {
    let pt = Table::read(&dir.join("params.csv"))?;
    pt.require(&["key", "value"])?;
    let mut kv: HashMap<String, (u64, String)> = HashMap::new();
    for r in pt.rows() {
        kv.insert(r.str("key")?.to_string(), (r.line(), r.str("value")?.to_string()));
    }
    let ppath = dir.join("params.csv");
    let get = |key: &str, default: Option<f64>| -> Result<f64, IoError> {
        match kv.get(key) {
            Some((line, v)) => v.parse().map_err(|_| IoError::Parse {
                path: ppath.clone(),
                line: *line,
                message: format!("{key}: cannot parse {v:?} as a number"),
            }),
            None => default.ok_or_else(|| IoError::Schema {
                path: ppath.clone(),
                message: format!("missing parameter {key}"),
            }),
        }
    };
    let asof = match kv.get("asof") {
        Some((line, v)) => NaiveDate::parse_from_str(v, "%Y-%m-%d").map_err(|_| IoError::Parse {
            path: ppath.clone(),
            line: *line,
            message: format!("asof: {v:?} is not an ISO-8601 date"),
        })?,
        None => {
            return Err(IoError::Schema {
                path: ppath.clone(),
                message: "missing parameter asof".into(),
            });
        }
    };
    let defaults = TaxParameters::default();
    let params = InstanceParams {
        asof,
        cash_init: get("cash_init", None)?,
        eta: get("eta", Some(0.005))?,
        gamma_risk_tilde: get("gamma_risk_tilde", Some(200.0))?,
        gamma_tc: get("gamma_tc", Some(1.0))?,
        gamma_tax: get("gamma_tax", Some(1.0))?,
        tax: TaxParameters {
            rho_lt: get("rho_lt", Some(defaults.rho_lt))?,
            rho_st: get("rho_st", Some(defaults.rho_st))?,
            ..defaults
        },
    };

    let at = Table::read(&dir.join("assets.csv"))?;
    at.require(&["asset_id", "price", "benchmark_weight", "specific_var"])?;
    let mut assets = Vec::new();
    for r in at.rows() {
        let price = r.f64("price")?;
        if !(price > 0.0) {
            return Err(r.error(format!("price must be positive, got {price}")));
        }
        assets.push(AssetRow {
            asset_id: r.str("asset_id")?.to_string(),
            price,
            alpha: r.f64_or("alpha", 0.0)?,
            benchmark_weight: r.f64("benchmark_weight")?,
            spread: r.f64_or("spread", 0.0005)?,
            specific_var: r.f64("specific_var")?,
            buy_allowed: if at.has("buy_allowed") { r.bool("buy_allowed")? } else { true },
        });
    }
    let index: HashMap<&str, usize> = assets.iter().enumerate().map(|(i, a)| (a.asset_id.as_str(), i)).collect();
    let lots = read_lots(&dir.join("lots.csv"))?;
    let lot_table = Table::read(&dir.join("lots.csv"))?;
    for (r, (a, _)) in lot_table.rows().zip(&lots) {
        if !index.contains_key(a.as_str()) {
            return Err(r.error(format!("lot for unknown asset {a}")));
        }
    }

    let factor_cov = read_factor_cov(&dir.join("factor_cov.csv"))?;
    let k = factor_cov.nrows();
    let cols = factor_headers(k);
    let et = Table::read(&dir.join("exposures.csv"))?;
    et.require(&["asset_id"])?;
    let mut exposures = DMatrix::zeros(assets.len(), k);
    let mut seen = vec![false; assets.len()];
    for r in et.rows() {
        let id = r.str("asset_id")?;
        let &i = index.get(id).ok_or_else(|| r.error(format!("unknown asset {id}")))?;
        for (f, c) in cols.iter().enumerate() {
            exposures[(i, f)] = r.f64(c)?;
        }
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(IoError::Schema {
            path: dir.join("exposures.csv"),
            message: format!("no exposures for {}", assets[i].asset_id),
        });
    }
    Ok(InstanceFiles {
        params,
        assets,
        lots,
        exposures,
        factor_cov,
    })
}

impl InstanceFiles {
    pub fn to_problem(&self) -> Result<TamProblemData, IoError> {
        let n = self.assets.len();
        let mut positions: Vec<AssetPosition> =
            self.assets.iter().map(|a| AssetPosition::empty(a.asset_id.clone(), a.price)).collect();
        let index: HashMap<&str, usize> = self.assets.iter().enumerate().map(|(i, a)| (a.asset_id.as_str(), i)).collect();
        for (a, lot) in &self.lots {
            let i = *index.get(a.as_str()).ok_or_else(|| {
                TamError::Validation(vec![format!("lot {} belongs to unknown asset {a}", lot.lot_id)])
            })?;
            positions[i].lots.push(lot.clone());
        }
        let initial_holdings: Vec<f64> = positions.iter().map(AssetPosition::holding).collect();
        let p = &self.params;
        let account = initial_holdings.iter().sum::<f64>() + p.cash_init;
        let mut trade_constraints = LinearConstraintSet::new(RowTarget::Trade);
        for (i, a) in self.assets.iter().enumerate() {
            if !a.buy_allowed {
                trade_constraints.forbid_buy(i);
            }
        }
        let data = TamProblemData {
            alpha: self.assets.iter().map(|a| a.alpha).collect(),
            benchmark: self.assets.iter().map(|a| a.benchmark_weight * account).collect(),
            cash_des: crate::tam::cash_target(&initial_holdings, p.cash_init, p.eta),
            initial_holdings,
            cash_init: p.cash_init,
            spreads: self.assets.iter().map(|a| a.spread).collect(),
            gamma_risk: if account > 0.0 { p.gamma_risk_tilde / account } else { 0.0 },
            gamma_tc: p.gamma_tc,
            gamma_tax: p.gamma_tax,
            risk_model: FactorRiskModel {
                exposures: self.exposures.clone(),
                factor_cov: self.factor_cov.clone(),
                specific_var: self.assets.iter().map(|a| a.specific_var).collect(),
            },
            trade_constraints,
            holding_constraints: LinearConstraintSet::new(RowTarget::Holding),
            positions,
            tax: p.tax,
            asof: p.asof,
        };
        debug_assert_eq!(data.n(), n);
        crate::tam::validate(&data)?;
        Ok(data)
    }

    /// Instance files describing `data`; only single-asset no-buy rows survive.
    pub fn from_problem(data: &TamProblemData) -> Self {
        let account = data.account_value();
        let caps = data.buy_caps();
        Self {
            params: InstanceParams {
                asof: data.asof,
                cash_init: data.cash_init,
                eta: data.cash_des / account,
                gamma_risk_tilde: data.gamma_risk * account,
                gamma_tc: data.gamma_tc,
                gamma_tax: data.gamma_tax,
                tax: data.tax,
            },
            assets: (0..data.n())
                .map(|i| AssetRow {
                    asset_id: data.positions[i].asset_id.clone(),
                    price: data.positions[i].price,
                    alpha: data.alpha[i],
                    benchmark_weight: data.benchmark[i] / account,
                    spread: data.spreads[i],
                    specific_var: data.risk_model.specific_var[i],
                    buy_allowed: caps[i] > 0.0,
                })
                .collect(),
            lots: data
                .positions
                .iter()
                .flat_map(|p| p.lots.iter().map(|l| (p.asset_id.clone(), l.clone())))
                .collect(),
            exposures: data.risk_model.exposures.clone(),
            factor_cov: data.risk_model.factor_cov.clone(),
        }
    }
}

pub fn write_instance(dir: &Path, inst: &InstanceFiles) -> Result<(), IoError> {
    let p = &inst.params;
    let params = vec![
        vec!["asof".to_string(), p.asof.to_string()],
        vec!["cash_init".into(), fmt(p.cash_init)],
        vec!["eta".into(), fmt(p.eta)],
        vec!["gamma_risk_tilde".into(), fmt(p.gamma_risk_tilde)],
        vec!["gamma_tc".into(), fmt(p.gamma_tc)],
        vec!["gamma_tax".into(), fmt(p.gamma_tax)],
        vec!["rho_lt".into(), fmt(p.tax.rho_lt)],
        vec!["rho_st".into(), fmt(p.tax.rho_st)],
    ];
    write_table(&dir.join("params.csv"), "params", &["key", "value"], &params)?;
    let rows: Vec<Vec<String>> = inst
        .assets
        .iter()
        .map(|a| {
            vec![
                a.asset_id.clone(),
                fmt(a.price),
                fmt(a.alpha),
                fmt(a.benchmark_weight),
                fmt(a.spread),
                fmt(a.specific_var),
                a.buy_allowed.to_string(),
            ]
        })
        .collect();
    write_table(
        &dir.join("assets.csv"),
        "assets",
        &["asset_id", "price", "alpha", "benchmark_weight", "spread", "specific_var", "buy_allowed"],
        &rows,
    )?;
    write_lots(&dir.join("lots.csv"), &inst.lots)?;
    write_factor_cov(&dir.join("factor_cov.csv"), &inst.factor_cov)?;
    let cols = factor_headers(inst.factor_cov.nrows());
    let mut headers = vec!["asset_id"];
    headers.extend(cols.iter().map(String::as_str));
    let xrows: Vec<Vec<String>> = inst
        .assets
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut row = vec![a.asset_id.clone()];
            row.extend((0..cols.len()).map(|f| fmt(inst.exposures[(i, f)])));
            row
        })
        .collect();
    write_table(&dir.join("exposures.csv"), "exposures", &headers, &xrows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::{SyntheticSpec, synthetic_market};
    use crate::instance::{InstanceSpec, random_instance};

    #[test]
    fn market_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            non_members: 1,
            delistings: 1,
            ..SyntheticSpec::new(11, 5, 2, 3)
        };
        let m = synthetic_market(&spec).unwrap();
        write_market(dir.path(), &m).unwrap();
        assert_eq!(read_market(dir.path()).unwrap(), m);
        assert_eq!(
            read_schema(&dir.path().join("prices.csv")).unwrap(),
            Some(("prices".to_string(), SCHEMA_VERSION))
        );
    }

    #[test]
    fn instance_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = random_instance(&InstanceSpec { buy_restricted: 2, ..InstanceSpec::default() }, 3);
        let files = InstanceFiles::from_problem(&data);
        write_instance(dir.path(), &files).unwrap();
        let back = read_instance(dir.path()).unwrap();
        assert_eq!(back, files);
        let again = back.to_problem().unwrap();
        assert_eq!(again.positions, data.positions);
        assert_eq!(again.buy_caps(), data.buy_caps());
        for (a, b) in again.benchmark.iter().zip(&data.benchmark) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn lot_parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lots.csv");
        std::fs::write(
            &path,
            "# taxopt-schema lots v1\nasset_id,lot_id,quantity,basis,acquisition_date\nA,1,10,5,2018-01-02\nA,2,-3,5,2018-01-02\n",
        )
        .unwrap();
        let err = read_lots(&path).unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 4, .. }), "{err}");
        std::fs::write(&path, "asset_id,lot_id,quantity,basis,acquisition_date\nA,1,ten,5,2018-01-02\n").unwrap();
        assert!(matches!(read_lots(&path).unwrap_err(), IoError::Parse { line: 2, .. }));
    }
}
