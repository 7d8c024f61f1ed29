//! Method identifiers and the CSV/JSON result formats.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GravidyError, Result};

pub const CSV_HEADER: [&str; 9] = [
    "geometry",
    "method",
    "seed",
    "outer_iter",
    "f_value",
    "kkt",
    "feasibility",
    "cum_seconds",
    "inner_iters",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Pos,
    Simplex,
    Box,
    Stiefel,
}

impl Geometry {
    pub const ALL: [Geometry; 4] = [
        Geometry::Pos,
        Geometry::Simplex,
        Geometry::Box,
        Geometry::Stiefel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Geometry::Pos => "pos",
            Geometry::Simplex => "simplex",
            Geometry::Box => "box",
            Geometry::Stiefel => "stiefel",
        }
    }

    /// Inner solver used when none is named.
    pub fn default_inner(self) -> InnerId {
        match self {
            Geometry::Pos | Geometry::Box => InnerId::Mgn,
            Geometry::Simplex => InnerId::NewtonKkt,
            Geometry::Stiefel => InnerId::NkGmres,
        }
    }

    pub fn inners(self) -> &'static [InnerId] {
        match self {
            Geometry::Pos | Geometry::Box => &[InnerId::Mgn, InnerId::Newton],
            Geometry::Simplex => &[InnerId::NewtonKkt, InnerId::FixedPoint, InnerId::ReducedMgn],
            Geometry::Stiefel => &[InnerId::NkGmres, InnerId::DenseNr],
        }
    }

    pub fn baselines(self) -> &'static [MethodId] {
        match self {
            Geometry::Pos => &[MethodId::PgdNesterov, MethodId::ProjectedBb, MethodId::Mu],
            Geometry::Simplex => &[MethodId::PgdNesterov, MethodId::ProjectedBb, MethodId::Emd],
            Geometry::Box => &[MethodId::PgdNesterov, MethodId::ProjectedBb],
            Geometry::Stiefel => &[MethodId::WenYin, MethodId::RgdQr],
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Geometry {
    type Err = GravidyError;

    fn from_str(s: &str) -> Result<Self> {
        Geometry::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| GravidyError::Spec(format!("unknown geometry `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerId {
    Mgn,
    Newton,
    NewtonKkt,
    FixedPoint,
    ReducedMgn,
    NkGmres,
    DenseNr,
}

impl InnerId {
    pub const ALL: [InnerId; 7] = [
        InnerId::Mgn,
        InnerId::Newton,
        InnerId::NewtonKkt,
        InnerId::FixedPoint,
        InnerId::ReducedMgn,
        InnerId::NkGmres,
        InnerId::DenseNr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InnerId::Mgn => "mgn",
            InnerId::Newton => "newton",
            InnerId::NewtonKkt => "newton-kkt",
            InnerId::FixedPoint => "fixed-point",
            InnerId::ReducedMgn => "reduced-mgn",
            InnerId::NkGmres => "nk-gmres",
            InnerId::DenseNr => "dense-nr",
        }
    }
}

impl fmt::Display for InnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InnerId {
    type Err = GravidyError;

    fn from_str(s: &str) -> Result<Self> {
        InnerId::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| GravidyError::Spec(format!("unknown inner solver `{s}`")))
    }
}

/// A solver identifier such as `gravidy-mgn` or `pgd-nesterov`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodId {
    Gravidy(InnerId),
    PgdNesterov,
    ProjectedBb,
    Mu,
    Emd,
    WenYin,
    RgdQr,
}

impl MethodId {
    pub fn is_valid_for(self, geometry: Geometry) -> bool {
        match self {
            MethodId::Gravidy(inner) => geometry.inners().contains(&inner),
            other => geometry.baselines().contains(&other),
        }
    }

    /// Parses an identifier, resolving a bare `gravidy` with `inner`.
    pub fn parse_with_inner(s: &str, inner: Option<InnerId>, geometry: Geometry) -> Result<Self> {
        if s == "gravidy" {
            return Ok(MethodId::Gravidy(inner.unwrap_or(geometry.default_inner())));
        }
        s.parse()
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodId::Gravidy(inner) => write!(f, "gravidy-{inner}"),
            MethodId::PgdNesterov => f.write_str("pgd-nesterov"),
            MethodId::ProjectedBb => f.write_str("projected-bb"),
            MethodId::Mu => f.write_str("mu"),
            MethodId::Emd => f.write_str("emd"),
            MethodId::WenYin => f.write_str("wen-yin"),
            MethodId::RgdQr => f.write_str("rgd-qr"),
        }
    }
}

impl FromStr for MethodId {
    type Err = GravidyError;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(inner) = s.strip_prefix("gravidy-") {
            return Ok(MethodId::Gravidy(inner.parse()?));
        }
        Ok(match s {
            "pgd-nesterov" => MethodId::PgdNesterov,
            "projected-bb" => MethodId::ProjectedBb,
            "mu" => MethodId::Mu,
            "emd" => MethodId::Emd,
            "wen-yin" => MethodId::WenYin,
            "rgd-qr" => MethodId::RgdQr,
            _ => return Err(GravidyError::Spec(format!("unknown method `{s}`"))),
        })
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One CSV row: the state after outer iteration `outer_iter` of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub geometry: Geometry,
    pub method: MethodId,
    pub seed: u64,
    pub outer_iter: usize,
    pub f_value: f64,
    pub kkt: f64,
    pub feasibility: f64,
    pub cum_seconds: f64,
    pub inner_iters: usize,
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the header and `records`.
pub fn write_csv<W: Write>(writer: W, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.geometry.to_string(),
            r.method.to_string(),
            r.seed.to_string(),
            r.outer_iter.to_string(),
            format_float(r.f_value),
            format_float(r.kkt),
            format_float(r.feasibility),
            format_float(r.cum_seconds),
            r.inner_iters.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a results CSV, requiring the exact header.
pub fn parse_csv<R: Read>(reader: R) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(GravidyError::Spec(format!(
            "unexpected CSV header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: BenchRecord = row?;
        if !rec.f_value.is_finite() {
            return Err(GravidyError::Spec(format!(
                "non-finite f_value at {} seed {} iter {}",
                rec.method, rec.seed, rec.outer_iter
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Outcome of one (method, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: MethodId,
    pub seed: u64,
    /// `converged`, `cap_hit`, `stalled`, or `error`.
    pub status: String,
    pub error: Option<String>,
    pub iterations: usize,
    pub final_f: Option<f64>,
    pub final_kkt: Option<f64>,
    pub final_feasibility: Option<f64>,
    pub seconds: Option<f64>,
    pub time_to_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodId,
    pub runs: usize,
    pub failed_runs: usize,
    pub converged_runs: usize,
    pub median_final_kkt: Option<f64>,
    /// Median over runs that reached the tolerance.
    pub median_time_to_tol: Option<f64>,
    pub runs_reaching_tol: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub generator: String,
    pub geometry: Geometry,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub eta: f64,
    pub max_outer: usize,
    pub kkt_tol: f64,
    pub time_tol: f64,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodSummary>,
    pub runs: Vec<RunSummary>,
}

pub fn write_summary_json<W: Write>(writer: W, summary: &ExperimentSummary) -> Result<()> {
    serde_json::to_writer_pretty(writer, summary)?;
    Ok(())
}

pub fn parse_summary_json(bytes: &[u8]) -> Result<ExperimentSummary> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Median of the finite values, averaging the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    })
}
