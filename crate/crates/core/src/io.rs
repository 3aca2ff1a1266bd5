//! CSV and JSON reading and writing for datasets, posterior draws, fit
//! reports, curves and study tables.
//!
//! Writers are deterministic: fixed column order, LF line endings and reals
//! printed with 17 significant digits so every f64 survives a round trip.
//!
//! Combined dataset files use reserved columns `id`, `time`, `status` and the
//! prefixes `x_`, `u1_`, `u2_` for covariates and the two platforms. Split
//! files carry an `id` column each, with `time` and `status` in the survival
//! file; rows are joined on `id` in survival-file order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assess::KaplanMeier;
use crate::baseline::BaselineState;
use crate::model::SurvivalDraw;
use crate::simulate::StudyReport;
use crate::{Dataset, Error, IntegratedState, McmcConfig, ModelKind, PosteriorDraws, Result};

pub const DRAWS_FORMAT_VERSION: u32 = 1;

/// Real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetFileSpec {
    Combined(PathBuf),
    Split {
        survival: PathBuf,
        covariates: PathBuf,
        platform1: PathBuf,
        platform2: PathBuf,
    },
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { path: path.to_path_buf(), header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| {
            Error::Validation(format!("{}: missing required column {name:?}", self.path.display()))
        })
    }

    /// Parses cell (row, col); `row` is 0-based over data rows.
    fn real(&self, row: usize, col: usize) -> Result<f64> {
        let raw = &self.rows[row][col];
        raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            row: row + 1,
            column: self.header[col].clone(),
            value: raw.clone(),
        })
    }

    fn ids(&self) -> Result<Vec<String>> {
        let c = self.require("id")?;
        let ids: Vec<String> = self.rows.iter().map(|r| r[c].clone()).collect();
        let mut seen = HashMap::new();
        let dups: Vec<String> = ids
            .iter()
            .filter(|id| seen.insert(id.as_str(), ()).is_some())
            .cloned()
            .collect();
        if !dups.is_empty() {
            return Err(Error::Alignment(dups));
        }
        Ok(ids)
    }

    fn matrix(&self, cols: &[usize], order: &[usize]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(order.len(), cols.len());
        for (i, &r) in order.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                m[(i, j)] = self.real(r, c)?;
            }
        }
        Ok(m)
    }
}

fn survival_columns(t: &Table, order: &[usize]) -> Result<(Vec<f64>, Vec<bool>)> {
    let (tc, sc) = (t.require("time")?, t.require("status")?);
    let mut log_time = Vec::with_capacity(order.len());
    let mut event = Vec::with_capacity(order.len());
    for &r in order {
        let time = t.real(r, tc)?;
        if time <= 0.0 {
            return Err(Error::Validation(format!(
                "{}: row {}: time must be strictly positive, got {time}",
                t.path.display(),
                r + 1
            )));
        }
        let status = t.real(r, sc)?;
        if status != 0.0 && status != 1.0 {
            return Err(Error::Validation(format!(
                "{}: row {}: status must be 0 or 1, got {}",
                t.path.display(),
                r + 1,
                t.rows[r][sc]
            )));
        }
        log_time.push(time.ln());
        event.push(status == 1.0);
    }
    Ok((log_time, event))
}

fn read_combined(path: &Path) -> Result<Dataset> {
    let t = Table::read(path)?;
    let mut groups: [(Vec<usize>, Vec<String>); 3] = Default::default();
    for (c, h) in t.header.iter().enumerate() {
        let slot = if let Some(rest) = h.strip_prefix("x_") {
            Some((0, rest))
        } else if let Some(rest) = h.strip_prefix("u1_") {
            Some((1, rest))
        } else if let Some(rest) = h.strip_prefix("u2_") {
            Some((2, rest))
        } else if matches!(h.as_str(), "id" | "time" | "status") {
            None
        } else {
            return Err(Error::Validation(format!(
                "{}: column {h:?} has no recognised prefix (x_, u1_, u2_)",
                path.display()
            )));
        };
        if let Some((g, name)) = slot {
            groups[g].0.push(c);
            groups[g].1.push(name.to_string());
        }
    }
    let order: Vec<usize> = (0..t.rows.len()).collect();
    let (log_time, event) = survival_columns(&t, &order)?;
    let [(xc, xn), (u1c, u1n), (u2c, u2n)] = groups;
    let data = Dataset::new(
        log_time,
        event,
        t.matrix(&xc, &order)?,
        t.matrix(&u1c, &order)?,
        t.matrix(&u2c, &order)?,
    )?;
    let data = match t.column("id") {
        Some(_) => data.with_ids(t.ids()?)?,
        None => data,
    };
    data.with_column_names(xn, u1n, u2n)
}

fn read_split(survival: &Path, covariates: &Path, platform1: &Path, platform2: &Path) -> Result<Dataset> {
    let surv = Table::read(survival)?;
    let ids = surv.ids()?;
    let others = [Table::read(covariates)?, Table::read(platform1)?, Table::read(platform2)?];
    let mut offending: Vec<String> = Vec::new();
    let mut orders = Vec::new();
    for t in &others {
        let tids = t.ids()?;
        let index: HashMap<&str, usize> = tids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let order: Vec<Option<usize>> = ids.iter().map(|id| index.get(id.as_str()).copied()).collect();
        offending.extend(ids.iter().zip(&order).filter(|(_, o)| o.is_none()).map(|(id, _)| id.clone()));
        let known: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        offending.extend(tids.iter().filter(|id| !known.contains(id.as_str())).cloned());
        orders.push(order.into_iter().flatten().collect::<Vec<_>>());
    }
    if !offending.is_empty() {
        offending.sort();
        offending.dedup();
        return Err(Error::Alignment(offending));
    }
    let own: Vec<usize> = (0..surv.rows.len()).collect();
    let (log_time, event) = survival_columns(&surv, &own)?;
    let data_cols = |t: &Table| -> (Vec<usize>, Vec<String>) {
        t.header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.as_str() != "id")
            .map(|(c, h)| (c, h.clone()))
            .unzip()
    };
    let mut mats = Vec::new();
    let mut names = Vec::new();
    for (t, order) in others.iter().zip(&orders) {
        let (cols, n) = data_cols(t);
        mats.push(t.matrix(&cols, order)?);
        names.push(n);
    }
    let [u2n, u1n, xn]: [Vec<String>; 3] = [names.pop().unwrap(), names.pop().unwrap(), names.pop().unwrap()];
    let u2 = mats.pop().unwrap();
    let u1 = mats.pop().unwrap();
    let x = mats.pop().unwrap();
    Dataset::new(log_time, event, x, u1, u2)?
        .with_ids(ids)?
        .with_column_names(xn, u1n, u2n)
}

pub fn read_dataset(spec: &DatasetFileSpec) -> Result<Dataset> {
    match spec {
        DatasetFileSpec::Combined(p) => read_combined(p),
        DatasetFileSpec::Split { survival, covariates, platform1, platform2 } => {
            read_split(survival, covariates, platform1, platform2)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the combined single-file layout. Times are written as `exp(log t)`.
pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut header: Vec<String> = vec!["id".into(), "time".into(), "status".into()];
    header.extend(data.x_names().iter().map(|n| format!("x_{n}")));
    header.extend(data.u1_names().iter().map(|n| format!("u1_{n}")));
    header.extend(data.u2_names().iter().map(|n| format!("u2_{n}")));
    let rows = (0..data.n()).map(|i| {
        let mut r = vec![
            data.ids()[i].clone(),
            fmt_real(data.log_time()[i].exp()),
            (data.event()[i] as u8).to_string(),
        ];
        for m in [data.x(), data.u1(), data.u2()] {
            r.extend(m.row(i).iter().map(|v| fmt_real(*v)));
        }
        r
    });
    write_rows(path, &header, rows)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

/// Dimensions a draws file was written for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawDims {
    pub n: usize,
    pub p: usize,
    pub q1: usize,
    pub q2: usize,
}

impl DrawDims {
    pub fn of(data: &Dataset) -> Self {
        Self { n: data.n(), p: data.p(), q1: data.q1(), q2: data.q2() }
    }
}

/// Flat row layout of a stored state.
pub trait DrawRecord: SurvivalDraw + Sized {
    fn columns(dims: DrawDims) -> Vec<String>;
    fn to_row(&self, out: &mut Vec<f64>);
    fn from_row(row: &[f64], dims: DrawDims) -> Self;
}

fn indexed(out: &mut Vec<String>, name: &str, len: usize) {
    out.extend((1..=len).map(|k| format!("{name}[{k}]")));
}

struct Cursor<'a> {
    row: &'a [f64],
    at: usize,
}

impl Cursor<'_> {
    fn one(&mut self) -> f64 {
        self.at += 1;
        self.row[self.at - 1]
    }

    fn many(&mut self, len: usize) -> Vec<f64> {
        self.at += len;
        self.row[self.at - len..self.at].to_vec()
    }
}

impl DrawRecord for IntegratedState {
    fn columns(d: DrawDims) -> Vec<String> {
        let mut c = vec!["alpha_t".to_string()];
        indexed(&mut c, "beta_t", d.p);
        c.extend(["phi_t".to_string(), "sigma_t2".to_string()]);
        indexed(&mut c, "alpha_u1", d.q1);
        indexed(&mut c, "phi_u1", d.q1);
        indexed(&mut c, "alpha_u2", d.q2);
        indexed(&mut c, "phi_u2", d.q2);
        indexed(&mut c, "eta1", d.n);
        indexed(&mut c, "eta2", d.n);
        indexed(&mut c, "y_aug", d.n);
        c
    }

    fn to_row(&self, out: &mut Vec<f64>) {
        out.push(self.alpha_t);
        out.extend(self.beta_t.iter());
        out.extend([self.phi_t, self.sigma_t2]);
        for v in [&self.alpha_u1, &self.phi_u1, &self.alpha_u2, &self.phi_u2, &self.eta1, &self.eta2, &self.y_aug] {
            out.extend(v);
        }
    }

    fn from_row(row: &[f64], d: DrawDims) -> Self {
        let mut c = Cursor { row, at: 0 };
        Self {
            alpha_t: c.one(),
            beta_t: DVector::from_vec(c.many(d.p)),
            phi_t: c.one(),
            sigma_t2: c.one(),
            alpha_u1: c.many(d.q1),
            phi_u1: c.many(d.q1),
            alpha_u2: c.many(d.q2),
            phi_u2: c.many(d.q2),
            eta1: c.many(d.n),
            eta2: c.many(d.n),
            y_aug: c.many(d.n),
        }
    }
}

impl DrawRecord for BaselineState {
    fn columns(d: DrawDims) -> Vec<String> {
        let mut c = vec!["alpha".to_string()];
        indexed(&mut c, "beta", d.p);
        indexed(&mut c, "gamma1", d.q1);
        indexed(&mut c, "gamma2", d.q2);
        c.push("sigma2".into());
        indexed(&mut c, "y_aug", d.n);
        c
    }

    fn to_row(&self, out: &mut Vec<f64>) {
        out.push(self.alpha);
        out.extend(self.beta.iter());
        out.extend(&self.gamma1);
        out.extend(&self.gamma2);
        out.push(self.sigma2);
        out.extend(&self.y_aug);
    }

    fn from_row(row: &[f64], d: DrawDims) -> Self {
        let mut c = Cursor { row, at: 0 };
        Self {
            alpha: c.one(),
            beta: DVector::from_vec(c.many(d.p)),
            gamma1: c.many(d.q1),
            gamma2: c.many(d.q2),
            sigma2: c.one(),
            y_aug: c.many(d.n),
        }
    }
}

/// JSON sidecar stored next to a draws CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub format_version: u32,
    pub model: ModelKind,
    pub dims: DrawDims,
    pub config: McmcConfig,
    pub draw_count: usize,
    pub scale_floor_hits: u64,
    pub dataset_hash: String,
}

/// `draws.csv` -> `draws.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes one row per stored draw (`chain`, `survival_loglik`, then the state)
/// and the JSON sidecar.
pub fn write_draws<S: DrawRecord>(draws: &PosteriorDraws<S>, data: &Dataset, path: &Path) -> Result<()> {
    let dims = DrawDims::of(data);
    let mut header = vec!["chain".to_string(), "survival_loglik".to_string()];
    header.extend(S::columns(dims));
    let mut buf = Vec::new();
    let rows = draws.draws.iter().enumerate().map(|(k, d)| {
        buf.clear();
        d.to_row(&mut buf);
        let mut r = Vec::with_capacity(buf.len() + 2);
        r.push(draws.chain[k].to_string());
        r.push(fmt_real(draws.survival_loglik[k]));
        r.extend(buf.iter().map(|v| fmt_real(*v)));
        r
    });
    write_rows(path, &header, rows)?;
    let meta = DrawsMeta {
        format_version: DRAWS_FORMAT_VERSION,
        model: S::MODEL,
        dims,
        config: draws.config,
        draw_count: draws.len(),
        scale_floor_hits: draws.scale_floor_hits,
        dataset_hash: data.content_hash(),
    };
    write_json(&meta, &sidecar_path(path))
}

pub fn read_draws_meta(path: &Path) -> Result<DrawsMeta> {
    let raw: serde_json::Value = read_json(&sidecar_path(path))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| Error::Corrupt {
        path: sidecar_path(path),
        reason: "missing format_version".into(),
    })?;
    if version != DRAWS_FORMAT_VERSION as u64 {
        return Err(Error::IncompatibleVersion { found: version as u32, expected: DRAWS_FORMAT_VERSION });
    }
    Ok(serde_json::from_value(raw)?)
}

/// Reads draws written by [`write_draws`]. Any mismatch between the sidecar
/// and the CSV body is reported as corruption; no partial result is returned.
pub fn read_draws<S: DrawRecord>(path: &Path) -> Result<(PosteriorDraws<S>, DrawsMeta)> {
    let meta = read_draws_meta(path)?;
    let corrupt = |reason: String| Error::Corrupt { path: path.to_path_buf(), reason };
    if meta.model != S::MODEL {
        return Err(Error::Validation(format!(
            "{} holds {} draws, expected {}",
            path.display(),
            meta.model,
            S::MODEL
        )));
    }
    let mut expected = vec!["chain".to_string(), "survival_loglik".to_string()];
    expected.extend(S::columns(meta.dims));
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| corrupt(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != expected {
        return Err(corrupt("header does not match the sidecar dimensions".into()));
    }
    let mut out = PosteriorDraws {
        config: meta.config,
        draws: Vec::with_capacity(meta.draw_count),
        chain: Vec::with_capacity(meta.draw_count),
        survival_loglik: Vec::with_capacity(meta.draw_count),
        scale_floor_hits: meta.scale_floor_hits,
    };
    let mut values = Vec::with_capacity(expected.len());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| corrupt(e.to_string()))?;
        if rec.len() != expected.len() {
            return Err(corrupt(format!("draw {} has {} fields, expected {}", k + 1, rec.len(), expected.len())));
        }
        let chain = rec[0].parse::<usize>().map_err(|_| corrupt(format!("draw {}: bad chain {:?}", k + 1, &rec[0])))?;
        values.clear();
        for (j, f) in rec.iter().enumerate().skip(1) {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| corrupt(format!("draw {}: bad value {f:?} in {}", k + 1, expected[j])))?,
            );
        }
        out.chain.push(chain);
        out.survival_loglik.push(values[0]);
        out.draws.push(S::from_row(&values[1..], meta.dims));
    }
    if out.draws.len() != meta.draw_count {
        return Err(corrupt(format!("{} draws present, sidecar records {}", out.draws.len(), meta.draw_count)));
    }
    Ok((out, meta))
}

/// Time grid, Kaplan-Meier step and optional model curves for one subject.
pub fn write_curves(
    path: &Path,
    grid: &[f64],
    km: &KaplanMeier,
    integrated: Option<&[f64]>,
    baseline: Option<&[f64]>,
) -> Result<()> {
    let header: Vec<String> = ["time", "km", "integrated", "baseline"].map(String::from).to_vec();
    let rows = grid.iter().enumerate().map(|(k, t)| {
        vec![
            fmt_real(*t),
            fmt_real(km.eval(*t)),
            fmt_opt(integrated.map(|c| c[k])),
            fmt_opt(baseline.map(|c| c[k])),
        ]
    });
    write_rows(path, &header, rows)
}

/// Writes `<name>_replicates.csv`, `<name>_table.csv`, `<name>_orderings.csv`
/// and `<name>_report.json` into `dir`; returns the paths written.
pub fn write_study(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let name = &report.config.name;
    let path = |suffix: &str| dir.join(format!("{name}_{suffix}"));
    let cells = &report.config.cells;

    let replicates = path("replicates.csv");
    let header: Vec<String> = [
        "cell", "label", "replicate", "model", "censor_rate", "dic", "lpml", "mse_imputed", "mse_fitted", "error",
    ]
    .map(String::from)
    .to_vec();
    write_rows(
        &replicates,
        &header,
        report.rows.iter().map(|r| {
            vec![
                r.cell.to_string(),
                cells[r.cell].label.clone(),
                r.replicate.to_string(),
                r.model.to_string(),
                fmt_real(r.censor_rate),
                fmt_opt(r.dic),
                fmt_opt(r.lpml),
                fmt_opt(r.mse_imputed),
                fmt_opt(r.mse_fitted),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )?;

    let table = path("table.csv");
    let header: Vec<String> = [
        "cell",
        "label",
        "generator",
        "sigma_t2",
        "censor_target",
        "fit_sigma2_u",
        "model",
        "replicates_ok",
        "replicates_failed",
        "censor_rate",
        "dic",
        "lpml",
        "mse",
    ]
    .map(String::from)
    .to_vec();
    write_rows(
        &table,
        &header,
        report.aggregates.iter().map(|a| {
            vec![
                a.cell.to_string(),
                a.label.clone(),
                a.generator.as_str().to_string(),
                fmt_real(a.sigma_t2),
                fmt_real(a.censor_target),
                fmt_real(a.fit_sigma2_u),
                a.model.to_string(),
                a.replicates_ok.to_string(),
                a.replicates_failed.to_string(),
                fmt_real(a.mean_censor_rate),
                fmt_opt(a.mean_dic),
                fmt_opt(a.mean_lpml),
                fmt_opt(a.mean_mse_imputed),
            ]
        }),
    )?;

    let orderings = path("orderings.csv");
    let header: Vec<String> = [
        "cell", "label", "paired", "mean_delta_dic", "mean_delta_lpml", "dic_wins", "lpml_wins", "integrated_preferred",
    ]
    .map(String::from)
    .to_vec();
    write_rows(
        &orderings,
        &header,
        report.orderings.iter().map(|o| {
            vec![
                o.cell.to_string(),
                o.label.clone(),
                o.paired.to_string(),
                fmt_real(o.mean_delta_dic),
                fmt_real(o.mean_delta_lpml),
                o.dic_wins.to_string(),
                o.lpml_wins.to_string(),
                o.integrated_preferred().to_string(),
            ]
        }),
    )?;

    let json = path("report.json");
    write_json(report, &json)?;
    Ok(vec![replicates, table, orderings, json])
}
