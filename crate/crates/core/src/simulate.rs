//! Synthetic data under the integrated or the non-integrated generator,
//! Gamma censoring calibrated to a target rate, and replicate studies that
//! fit and assess both models on each generated dataset.
//!
//! Every dataset is a pure function of its scenario: stream 0 of the seed
//! drives the uncensored truth and stream 1 the censoring exponentials. Only
//! the Gamma scale depends on the censoring target, so cells that differ in
//! their target share the same true times.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assess::FitReport;
use crate::baseline::{BaselineHyper, BaselineSampler};
use crate::integrated::IntegratedSampler;
use crate::kernels::{derive_seed, RngStream};
use crate::{Dataset, Error, Hyperparameters, McmcConfig, ModelKind, Result};

const CALIBRATION_KEY: u64 = 0xCA1B_0000;
const CALIBRATION_POOL: usize = 50_000;
const CALIBRATION_TOL: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Integrated,
    Nonintegrated,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::Integrated => "integrated",
            Generator::Nonintegrated => "nonintegrated",
        }
    }
}

impl std::str::FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "integrated" => Ok(Generator::Integrated),
            "nonintegrated" | "baseline" => Ok(Generator::Nonintegrated),
            other => Err(Error::InvalidArgument(format!("unknown generator {other:?}"))),
        }
    }
}

/// True-parameter recipe and dimensions for one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub q1: usize,
    pub q2: usize,
    pub sigma_t2: f64,
    pub sigma2_u1: Vec<f64>,
    pub sigma2_u2: Vec<f64>,
    pub sigma2_eta1: f64,
    pub sigma2_eta2: f64,
    pub phi_t: f64,
    pub phi_u1: f64,
    pub phi_u2: f64,
    /// Regression and intercept coefficients are drawn from U(coef_low, coef_high).
    pub coef_low: f64,
    pub coef_high: f64,
    pub censor_target: f64,
    pub generator: Generator,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::new(100, 2, 10, 10)
    }
}

impl Scenario {
    pub fn new(n: usize, p: usize, q1: usize, q2: usize) -> Self {
        Self {
            n,
            p,
            q1,
            q2,
            sigma_t2: 1.0,
            sigma2_u1: vec![1.0; q1],
            sigma2_u2: vec![1.0; q2],
            sigma2_eta1: 1.0,
            sigma2_eta2: 1.0,
            phi_t: 1.0,
            phi_u1: 1.0,
            phi_u2: 1.0,
            coef_low: -1.0,
            coef_high: 1.0,
            censor_target: 0.28,
            generator: Generator::Integrated,
            seed: 1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_censor_target(mut self, target: f64) -> Self {
        self.censor_target = target;
        self
    }

    pub fn with_generator(mut self, generator: Generator) -> Self {
        self.generator = generator;
        self
    }

    pub fn with_sigma_t2(mut self, v: f64) -> Self {
        self.sigma_t2 = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 || self.q1 == 0 || self.q2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "dimensions must be positive with n >= 2 (n={}, p={}, q1={}, q2={})",
                self.n, self.p, self.q1, self.q2
            )));
        }
        if self.sigma2_u1.len() != self.q1 || self.sigma2_u2.len() != self.q2 {
            return Err(Error::Shape("platform variance vectors must have lengths q1 and q2".into()));
        }
        let positive = [self.sigma_t2, self.sigma2_eta1, self.sigma2_eta2]
            .iter()
            .chain(&self.sigma2_u1)
            .chain(&self.sigma2_u2)
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::InvalidParameter("variances must be positive and finite".into()));
        }
        if !(self.coef_low < self.coef_high) {
            return Err(Error::InvalidParameter("coef_low must be below coef_high".into()));
        }
        if !(0.0..1.0).contains(&self.censor_target) {
            return Err(Error::InvalidArgument(format!(
                "censor target {} outside [0, 1)",
                self.censor_target
            )));
        }
        Ok(())
    }
}

/// Censoring times are `scale * G` with `G ~ Gamma(shape, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringGamma {
    pub shape: f64,
    pub scale: f64,
    /// Censoring rate reached on the calibration pool.
    pub achieved_rate: f64,
}

/// Everything used to generate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub generator: Generator,
    pub log_time: Vec<f64>,
    pub log_censor_time: Option<Vec<f64>>,
    pub censoring: Option<CensoringGamma>,
    pub alpha_t: f64,
    pub beta_t: Vec<f64>,
    pub phi_t: f64,
    pub sigma_t2: f64,
    pub alpha_u1: Vec<f64>,
    pub phi_u1: Vec<f64>,
    pub alpha_u2: Vec<f64>,
    pub phi_u2: Vec<f64>,
    /// Gene coefficients of the non-integrated generator.
    pub gamma1: Option<Vec<f64>>,
    pub gamma2: Option<Vec<f64>>,
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
}

struct Uncensored {
    x: DMatrix<f64>,
    u1: DMatrix<f64>,
    u2: DMatrix<f64>,
    truth: GroundTruth,
}

fn draw_uncensored(s: &Scenario) -> Result<Uncensored> {
    let mut rng = RngStream::split(s.seed, 0);
    let (n, p) = (s.n, s.p);
    let coef = |rng: &mut RngStream, k: usize| -> Vec<f64> {
        (0..k).map(|_| rng.uniform(s.coef_low, s.coef_high)).collect()
    };
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.standard_normal();
        }
    }
    let alpha_t = coef(&mut rng, 1)[0];
    let beta_t = coef(&mut rng, p);
    let alpha_u1 = coef(&mut rng, s.q1);
    let alpha_u2 = coef(&mut rng, s.q2);
    let gamma1 = coef(&mut rng, s.q1);
    let gamma2 = coef(&mut rng, s.q2);
    let eta2: Vec<f64> = (0..n)
        .map(|_| rng.sample_normal(0.0, s.sigma2_eta2))
        .collect::<Result<_>>()?;
    let eta1: Vec<f64> = eta2
        .iter()
        .map(|m| rng.sample_normal(*m, s.sigma2_eta1))
        .collect::<Result<_>>()?;
    let platform = |alpha: &[f64], phi: f64, var: &[f64], eta: &[f64], rng: &mut RngStream| -> Result<DMatrix<f64>> {
        let mut u = DMatrix::zeros(n, alpha.len());
        for k in 0..alpha.len() {
            for i in 0..n {
                u[(i, k)] = rng.sample_normal(alpha[k] + phi * eta[i], var[k])?;
            }
        }
        Ok(u)
    };
    let u1 = platform(&alpha_u1, s.phi_u1, &s.sigma2_u1, &eta1, &mut rng)?;
    let u2 = platform(&alpha_u2, s.phi_u2, &s.sigma2_u2, &eta2, &mut rng)?;
    let beta = DVector::from_column_slice(&beta_t);
    let xb = &x * &beta;
    let mean: Vec<f64> = match s.generator {
        Generator::Integrated => (0..n).map(|i| alpha_t + xb[i] + s.phi_t * eta1[i]).collect(),
        Generator::Nonintegrated => {
            let g1 = &u1 * DVector::from_column_slice(&gamma1);
            let g2 = &u2 * DVector::from_column_slice(&gamma2);
            (0..n).map(|i| alpha_t + xb[i] + g1[i] + g2[i]).collect()
        }
    };
    let log_time = mean
        .iter()
        .map(|m| rng.sample_normal(*m, s.sigma_t2))
        .collect::<Result<_>>()?;
    let nonint = s.generator == Generator::Nonintegrated;
    Ok(Uncensored {
        x,
        u1,
        u2,
        truth: GroundTruth {
            generator: s.generator,
            log_time,
            log_censor_time: None,
            censoring: None,
            alpha_t,
            beta_t,
            phi_t: s.phi_t,
            sigma_t2: s.sigma_t2,
            alpha_u1,
            phi_u1: vec![s.phi_u1; s.q1],
            alpha_u2,
            phi_u2: vec![s.phi_u2; s.q2],
            gamma1: nonint.then_some(gamma1),
            gamma2: nonint.then_some(gamma2),
            eta1,
            eta2,
        },
    })
}

fn gamma_units(seed: u64, n: usize, shape: f64) -> Result<Vec<f64>> {
    let mut rng = RngStream::split(seed, 1);
    (0..n).map(|_| rng.sample_gamma(shape, 1.0)).collect()
}

/// Generates with an explicit censoring distribution (`None` for no censoring),
/// ignoring `censor_target`.
pub fn generate_with_censoring(s: &Scenario, censoring: Option<CensoringGamma>) -> Result<(Dataset, GroundTruth)> {
    s.validate()?;
    let Uncensored { x, u1, u2, mut truth } = draw_uncensored(s)?;
    let mut log_obs = truth.log_time.clone();
    let mut event = vec![true; s.n];
    if let Some(c) = censoring {
        let g = gamma_units(s.seed, s.n, c.shape)?;
        let log_c: Vec<f64> = g.iter().map(|v| (c.scale * v).ln()).collect();
        for i in 0..s.n {
            if log_c[i] < truth.log_time[i] {
                log_obs[i] = log_c[i];
                event[i] = false;
            }
        }
        truth.log_censor_time = Some(log_c);
        truth.censoring = Some(c);
    }
    let data = Dataset::new(log_obs, event, x, u1, u2)?;
    Ok((data, truth))
}

/// Calibrates censoring for the scenario's target, then generates.
pub fn generate(s: &Scenario) -> Result<(Dataset, GroundTruth)> {
    let censoring = calibrate_censoring(s, s.censor_target)?;
    generate_with_censoring(s, censoring)
}

/// Censoring rate of `scale * g` against times `t`.
fn pool_rate(times: &[f64], units: &[f64], scale: f64) -> f64 {
    let hits = times.iter().zip(units).filter(|(t, g)| scale * **g < **t).count();
    hits as f64 / times.len() as f64
}

/// Gamma(1, scale) censoring whose rate on a pool of about 50k simulated
/// times is within 0.005 of `target`, found by bisection on log scale.
/// Returns `None` for a zero target. The pool depends on the scenario's
/// seed and recipe but not on its censoring target.
pub fn calibrate_censoring(s: &Scenario, target: f64) -> Result<Option<CensoringGamma>> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!("censor target {target} outside [0, 1)")));
    }
    if target == 0.0 {
        return Ok(None);
    }
    let mut base = s.clone();
    base.censor_target = 0.0;
    base.validate()?;
    let pool_seed = derive_seed(s.seed, CALIBRATION_KEY);
    let datasets = CALIBRATION_POOL.div_ceil(s.n);
    let times: Vec<f64> = (0..datasets)
        .into_par_iter()
        .map(|k| {
            let sc = base.clone().with_seed(derive_seed(pool_seed, k as u64));
            draw_uncensored(&sc).map(|u| u.truth.log_time)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .map(f64::exp)
        .collect();
    let units = gamma_units(pool_seed, times.len(), 1.0)?;
    let rate = |scale: f64| pool_rate(&times, &units, scale);

    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    while rate(lo) < target {
        lo /= 4.0;
        if lo < 1e-300 {
            return Err(Error::InvalidArgument(format!("censor target {target} unreachable")));
        }
    }
    while rate(hi) > target {
        hi *= 4.0;
        if hi > 1e300 {
            return Err(Error::InvalidArgument(format!("censor target {target} unreachable")));
        }
    }
    let mut scale = (lo * hi).sqrt();
    for _ in 0..200 {
        scale = (lo * hi).sqrt();
        let r = rate(scale);
        if (r - target).abs() < CALIBRATION_TOL {
            break;
        }
        if r > target {
            lo = scale;
        } else {
            hi = scale;
        }
    }
    Ok(Some(CensoringGamma { shape: 1.0, scale, achieved_rate: rate(scale) }))
}

/// One cell of a study grid. The scenario's seed is ignored; replicate seeds
/// come from the study root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub label: String,
    pub scenario: Scenario,
    /// Fixed platform measurement variance assumed by the integrated fit.
    pub fit_sigma2_u: f64,
    pub fit_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub name: String,
    pub root_seed: u64,
    pub replicates: usize,
    pub mcmc: McmcConfig,
    pub cells: Vec<StudyCell>,
}

impl StudyConfig {
    fn grid(name: &str, root_seed: u64, replicates: usize, mcmc: McmcConfig, cells: Vec<StudyCell>) -> Self {
        Self { name: name.into(), root_seed, replicates, mcmc, cells }
    }

    /// Censor rates 0, 28, 37 and 50 percent for each sigma_t2 in {1, 2},
    /// integrated generator, both models fitted.
    pub fn table1_desk(root_seed: u64, replicates: usize, mcmc: McmcConfig) -> Self {
        let mut cells = Vec::new();
        for sigma_t2 in [1.0, 2.0] {
            for target in [0.0, 0.28, 0.37, 0.50] {
                cells.push(StudyCell {
                    label: format!("sigma_t2={sigma_t2} censor={target}"),
                    scenario: Scenario::default().with_sigma_t2(sigma_t2).with_censor_target(target),
                    fit_sigma2_u: 1.0,
                    fit_baseline: true,
                });
            }
        }
        Self::grid("table1", root_seed, replicates, mcmc, cells)
    }

    /// The same censoring grid with data from the non-integrated generator.
    pub fn reverse_desk(root_seed: u64, replicates: usize, mcmc: McmcConfig) -> Self {
        let cells = [0.0, 0.28, 0.37, 0.50]
            .into_iter()
            .map(|target| StudyCell {
                label: format!("nonintegrated censor={target}"),
                scenario: Scenario::default()
                    .with_generator(Generator::Nonintegrated)
                    .with_censor_target(target),
                fit_sigma2_u: 1.0,
                fit_baseline: true,
            })
            .collect();
        Self::grid("reverse", root_seed, replicates, mcmc, cells)
    }

    /// Integrated fits under fixed platform variances 0.25 to 2 at 25 percent
    /// censoring. Data always come from unit platform variances.
    pub fn table2_desk(root_seed: u64, replicates: usize, mcmc: McmcConfig) -> Self {
        let cells = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0]
            .into_iter()
            .map(|v| StudyCell {
                label: format!("sigma2_u={v}"),
                scenario: Scenario::default().with_censor_target(0.25),
                fit_sigma2_u: v,
                fit_baseline: false,
            })
            .collect();
        Self::grid("table2", root_seed, replicates, mcmc, cells)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.cells.is_empty() {
            return Err(Error::InvalidArgument("a study needs at least one replicate and one cell".into()));
        }
        self.mcmc.validate()?;
        for c in &self.cells {
            c.scenario.validate()?;
            if !(c.fit_sigma2_u > 0.0) {
                return Err(Error::InvalidParameter(format!("cell {:?}: fit_sigma2_u must be positive", c.label)));
            }
        }
        Ok(())
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        derive_seed(self.root_seed, replicate as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub cell: usize,
    pub replicate: usize,
    pub model: ModelKind,
    pub censor_rate: f64,
    pub dic: Option<f64>,
    pub lpml: Option<f64>,
    pub mse_imputed: Option<f64>,
    pub mse_fitted: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cell: usize,
    pub label: String,
    pub generator: Generator,
    pub sigma_t2: f64,
    pub censor_target: f64,
    pub fit_sigma2_u: f64,
    pub model: ModelKind,
    pub replicates_ok: usize,
    pub replicates_failed: usize,
    pub mean_censor_rate: f64,
    pub mean_dic: Option<f64>,
    pub mean_lpml: Option<f64>,
    pub mean_mse_imputed: Option<f64>,
}

/// Paired comparison of the two models within one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub cell: usize,
    pub label: String,
    pub paired: usize,
    pub mean_delta_dic: f64,
    pub mean_delta_lpml: f64,
    /// Replicates with DIC(integrated) < DIC(baseline).
    pub dic_wins: usize,
    /// Replicates with LPML(integrated) > LPML(baseline).
    pub lpml_wins: usize,
}

impl OrderingCheck {
    /// Integrated preferred on both criteria by the cell means.
    pub fn integrated_preferred(&self) -> bool {
        self.mean_delta_dic < 0.0 && self.mean_delta_lpml > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub calibration: Vec<Option<CensoringGamma>>,
    pub rows: Vec<ReplicateRow>,
    pub aggregates: Vec<AggregateRow>,
    pub orderings: Vec<OrderingCheck>,
}

impl StudyReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn row(&self, cell: usize, replicate: usize, model: ModelKind) -> Option<&ReplicateRow> {
        self.rows
            .iter()
            .find(|r| r.cell == cell && r.replicate == replicate && r.model == model)
    }
}

fn assess_row(
    cell: usize,
    replicate: usize,
    model: ModelKind,
    censor_rate: f64,
    report: Result<FitReport>,
) -> ReplicateRow {
    match report {
        Ok(r) => ReplicateRow {
            cell,
            replicate,
            model,
            censor_rate,
            dic: Some(r.dic),
            lpml: Some(r.lpml),
            mse_imputed: r.mse_imputed,
            mse_fitted: r.mse_fitted,
            error: None,
        },
        Err(e) => ReplicateRow {
            cell,
            replicate,
            model,
            censor_rate,
            dic: None,
            lpml: None,
            mse_imputed: None,
            mse_fitted: None,
            error: Some(e.to_string()),
        },
    }
}

fn run_replicate(cfg: &StudyConfig, index: usize, cell: &StudyCell, censoring: Option<CensoringGamma>, replicate: usize) -> Vec<ReplicateRow> {
    let seed = cfg.replicate_seed(replicate);
    let scenario = cell.scenario.clone().with_seed(seed);
    let (data, truth) = match generate_with_censoring(&scenario, censoring) {
        Ok(v) => v,
        Err(e) => {
            let mut models = vec![ModelKind::Integrated];
            if cell.fit_baseline {
                models.push(ModelKind::Baseline);
            }
            return models
                .into_iter()
                .map(|m| assess_row(index, replicate, m, f64::NAN, Err(Error::Validation(e.to_string()))))
                .collect();
        }
    };
    let rate = data.censor_rate();
    let mcmc = |k: u64| McmcConfig { seed: derive_seed(seed, 100 + k), ..cfg.mcmc };

    let hyper = Hyperparameters::simulation(data.p(), data.q1(), data.q2()).with_platform_variance(cell.fit_sigma2_u);
    let integrated = IntegratedSampler::new(&data, &hyper)
        .and_then(|s| s.run(&mcmc(0), None))
        .and_then(|d| FitReport::assess(&d, &data, Some(&truth.log_time)));
    let mut rows = vec![assess_row(index, replicate, ModelKind::Integrated, rate, integrated)];
    if cell.fit_baseline {
        let baseline = BaselineSampler::new(&data, BaselineHyper::default())
            .and_then(|s| s.run(&mcmc(1), None))
            .and_then(|d| FitReport::assess(&d, &data, Some(&truth.log_time)));
        rows.push(assess_row(index, replicate, ModelKind::Baseline, rate, baseline));
    }
    rows
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn aggregate(cfg: &StudyConfig, rows: &[ReplicateRow]) -> (Vec<AggregateRow>, Vec<OrderingCheck>) {
    let mut aggregates = Vec::new();
    let mut orderings = Vec::new();
    for (index, cell) in cfg.cells.iter().enumerate() {
        let mut models = vec![ModelKind::Integrated];
        if cell.fit_baseline {
            models.push(ModelKind::Baseline);
        }
        for model in models {
            let mine: Vec<&ReplicateRow> = rows.iter().filter(|r| r.cell == index && r.model == model).collect();
            let ok: Vec<&&ReplicateRow> = mine.iter().filter(|r| r.error.is_none()).collect();
            aggregates.push(AggregateRow {
                cell: index,
                label: cell.label.clone(),
                generator: cell.scenario.generator,
                sigma_t2: cell.scenario.sigma_t2,
                censor_target: cell.scenario.censor_target,
                fit_sigma2_u: cell.fit_sigma2_u,
                model,
                replicates_ok: ok.len(),
                replicates_failed: mine.len() - ok.len(),
                mean_censor_rate: mean(mine.iter().map(|r| r.censor_rate).filter(|v| v.is_finite())).unwrap_or(f64::NAN),
                mean_dic: mean(ok.iter().filter_map(|r| r.dic)),
                mean_lpml: mean(ok.iter().filter_map(|r| r.lpml)),
                mean_mse_imputed: mean(ok.iter().filter_map(|r| r.mse_imputed)),
            });
        }
        if cell.fit_baseline {
            let pairs: Vec<(f64, f64, f64, f64)> = (0..cfg.replicates)
                .filter_map(|rep| {
                    let find = |m: ModelKind| rows.iter().find(|r| r.cell == index && r.replicate == rep && r.model == m);
                    let (a, b) = (find(ModelKind::Integrated)?, find(ModelKind::Baseline)?);
                    Some((a.dic?, b.dic?, a.lpml?, b.lpml?))
                })
                .collect();
            if !pairs.is_empty() {
                orderings.push(OrderingCheck {
                    cell: index,
                    label: cell.label.clone(),
                    paired: pairs.len(),
                    mean_delta_dic: mean(pairs.iter().map(|p| p.0 - p.1)).unwrap_or(f64::NAN),
                    mean_delta_lpml: mean(pairs.iter().map(|p| p.2 - p.3)).unwrap_or(f64::NAN),
                    dic_wins: pairs.iter().filter(|p| p.0 < p.1).count(),
                    lpml_wins: pairs.iter().filter(|p| p.2 > p.3).count(),
                });
            }
        }
    }
    (aggregates, orderings)
}

/// Runs every (cell, replicate) pair in parallel. A failed fit is kept as a
/// row carrying its error and excluded from the cell means.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let calibration: Vec<Option<CensoringGamma>> = cfg
        .cells
        .par_iter()
        .map(|c| {
            let template = c.scenario.clone().with_seed(cfg.root_seed);
            calibrate_censoring(&template, template.censor_target)
        })
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..cfg.cells.len())
        .flat_map(|c| (0..cfg.replicates).map(move |r| (c, r)))
        .collect();
    let rows: Vec<ReplicateRow> = tasks
        .par_iter()
        .map(|&(c, r)| run_replicate(cfg, c, &cfg.cells[c], calibration[c], r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let (aggregates, orderings) = aggregate(cfg, &rows);
    Ok(StudyReport { config: cfg.clone(), calibration, rows, aggregates, orderings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn no_censoring_observes_true_times() {
        let s = Scenario::default().with_censor_target(0.0).with_seed(3);
        let (data, truth) = generate(&s).unwrap();
        assert!(data.event().iter().all(|e| *e));
        assert_eq!(data.log_time(), &truth.log_time[..]);
        assert!(truth.censoring.is_none());
    }

    #[test]
    fn platform_correlation_matches_variance_decomposition() {
        let s = Scenario::new(10_000, 2, 1, 1).with_censor_target(0.0).with_seed(11);
        let (data, truth) = generate(&s).unwrap();
        let u: Vec<f64> = data.u1().column(0).iter().copied().collect();
        let r = corr(&u, &truth.eta1);
        assert!((r - (2.0f64 / 3.0).sqrt()).abs() < 0.02, "corr {r}");
        let u2: Vec<f64> = data.u2().column(0).iter().copied().collect();
        assert!((corr(&u2, &truth.eta2) - 0.5f64.sqrt()).abs() < 0.02);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let s = Scenario::default().with_seed(42);
        let (a, ta) = generate(&s).unwrap();
        let (b, tb) = generate(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate(&s.clone().with_seed(43)).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn censoring_shares_true_times_across_targets() {
        let s = Scenario::default().with_seed(5);
        let (_, t1) = generate(&s.clone().with_censor_target(0.28)).unwrap();
        let (_, t2) = generate(&s.clone().with_censor_target(0.5)).unwrap();
        assert_eq!(t1.log_time, t2.log_time);
        assert!(t1.censoring.unwrap().scale > t2.censoring.unwrap().scale);
    }

    #[test]
    fn log_time_variance_decomposition() {
        // one dataset with fixed coefficients: Var(log t) = b'b + phi^2 (s1 + s2) + sigma_t2
        let s = Scenario::new(200_000, 2, 1, 1).with_censor_target(0.0).with_seed(8);
        let (_, truth) = generate(&s).unwrap();
        let n = truth.log_time.len() as f64;
        let m = truth.log_time.iter().sum::<f64>() / n;
        let var = truth.log_time.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        let bb: f64 = truth.beta_t.iter().map(|b| b * b).sum();
        let expect = bb + 2.0 + 1.0;
        assert!((var / expect - 1.0).abs() < 0.05, "{var} vs {expect}");
    }

    #[test]
    fn nonintegrated_generator_records_gene_coefficients() {
        let s = Scenario::default().with_generator(Generator::Nonintegrated).with_seed(2);
        let (data, truth) = generate(&s).unwrap();
        let g1 = truth.gamma1.as_ref().unwrap();
        assert_eq!(g1.len(), 10);
        assert!(g1.iter().all(|g| (-1.0..1.0).contains(g)));
        assert!(data.censor_rate() > 0.0);
        let (_, ti) = generate(&s.clone().with_generator(Generator::Integrated)).unwrap();
        assert!(ti.gamma1.is_none());
        assert_eq!(ti.eta1, truth.eta1);
    }

    #[test]
    fn calibration_rejects_and_sentinels() {
        let s = Scenario::default();
        assert!(matches!(calibrate_censoring(&s, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(calibrate_censoring(&s, 1.2), Err(Error::InvalidArgument(_))));
        assert_eq!(calibrate_censoring(&s, 0.0).unwrap(), None);
        assert!(generate(&s.clone().with_censor_target(1.0)).is_err());
    }

    #[test]
    fn calibrated_rate_over_replicates() {
        let template = Scenario::default().with_seed(2024);
        let c = calibrate_censoring(&template, 0.28).unwrap().unwrap();
        assert!((c.achieved_rate - 0.28).abs() < CALIBRATION_TOL);
        let rates: Vec<f64> = (0..100)
            .map(|r| {
                let s = template.clone().with_seed(derive_seed(99, r));
                generate_with_censoring(&s, Some(c)).unwrap().0.censor_rate()
            })
            .collect();
        let mean = rates.iter().sum::<f64>() / 100.0;
        assert!((mean - 0.28).abs() < 0.03, "mean censor rate {mean}");
    }

    #[test]
    fn calibrated_half_reproduces_on_fresh_data() {
        let template = Scenario::default().with_seed(77);
        let c = calibrate_censoring(&template, 0.5).unwrap().unwrap();
        let (mut hits, mut total) = (0usize, 0usize);
        for r in 0..500 {
            let s = template.clone().with_seed(derive_seed(1234, r));
            let (d, _) = generate_with_censoring(&s, Some(c)).unwrap();
            hits += d.censored_count();
            total += d.n();
        }
        let rate = hits as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.01, "fresh rate {rate}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rate_decreases_with_scale(seed in 0u64..1000, a in 0.01f64..20.0, b in 0.01f64..20.0) {
            let s = Scenario::new(200, 2, 2, 2).with_seed(seed);
            let truth = draw_uncensored(&s).unwrap().truth;
            let times: Vec<f64> = truth.log_time.iter().map(|v| v.exp()).collect();
            let units = gamma_units(seed, times.len(), 1.0).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(pool_rate(&times, &units, hi) <= pool_rate(&times, &units, lo));
        }
    }

    #[test]
    fn study_bookkeeping() {
        let mcmc = McmcConfig { iterations: 60, burn_in: 10, thin: 5, seed: 0, chains: 1 };
        let cfg = StudyConfig {
            name: "tiny".into(),
            root_seed: 9,
            replicates: 2,
            mcmc,
            cells: vec![StudyCell {
                label: "one".into(),
                scenario: Scenario::new(30, 2, 3, 3),
                fit_sigma2_u: 1.0,
                fit_baseline: true,
            }],
        };
        let report = run_study(&cfg).unwrap();
        assert_eq!(report.failures(), 0);
        for m in [ModelKind::Integrated, ModelKind::Baseline] {
            assert_eq!(report.rows.iter().filter(|r| r.model == m).count(), 2);
        }
        assert_eq!(report.aggregates.len(), 2);
        assert_eq!(report.orderings.len(), 1);
        assert_eq!(report.orderings[0].paired, 2);
        assert_eq!(run_study(&cfg).unwrap(), report);
    }

    #[test]
    fn failed_replicates_are_recorded() {
        // baseline needs more subjects than columns: 1 + 2 + 6 + 6 > 12
        let mcmc = McmcConfig { iterations: 40, burn_in: 10, thin: 5, seed: 0, chains: 1 };
        let cfg = StudyConfig {
            name: "fail".into(),
            root_seed: 1,
            replicates: 2,
            mcmc,
            cells: vec![StudyCell {
                label: "wide".into(),
                scenario: Scenario::new(12, 2, 6, 6).with_censor_target(0.0),
                fit_sigma2_u: 1.0,
                fit_baseline: true,
            }],
        };
        let report = run_study(&cfg).unwrap();
        let base = report.aggregates.iter().find(|a| a.model == ModelKind::Baseline).unwrap();
        assert_eq!((base.replicates_ok, base.replicates_failed), (0, 2));
        assert_eq!(base.mean_dic, None);
        assert!(report.rows.iter().filter(|r| r.model == ModelKind::Baseline).all(|r| r.error.is_some()));
        assert!(report.orderings.is_empty());
    }

    #[test]
    fn presets_have_expected_grids() {
        let m = McmcConfig::desk();
        let t1 = StudyConfig::table1_desk(1, 10, m);
        assert_eq!(t1.cells.len(), 8);
        assert!(t1.cells.iter().all(|c| c.fit_baseline));
        let t2 = StudyConfig::table2_desk(1, 10, m);
        assert_eq!(t2.cells.iter().map(|c| c.fit_sigma2_u).collect::<Vec<_>>(), vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0]);
        assert!(t2.cells.iter().all(|c| c.scenario.sigma2_u1 == vec![1.0; 10]));
        let rev = StudyConfig::reverse_desk(1, 10, m);
        assert!(rev.cells.iter().all(|c| c.scenario.generator == Generator::Nonintegrated));
    }
}
