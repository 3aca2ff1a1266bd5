//! Model assessment on the survival component: DIC, CPO/LPML, MSE,
//! posterior survival curves, Kaplan-Meier and residual diagnostics.
//!
//! Criteria use a censoring-aware likelihood: the log-normal density at the
//! observed log time for events and the normal survival probability beyond it
//! for censored subjects. Augmented times never enter the criteria.

use serde::{Deserialize, Serialize};

use crate::kernels::{ln_normal_pdf, ln_std_normal_sf, std_normal_cdf, std_normal_quantile};
use crate::model::{ModelKind, SurvivalDraw};
use crate::{Dataset, Error, PosteriorDraws, Result};

/// Log-likelihood contribution of one subject.
pub fn subject_log_contribution(mean: f64, variance: f64, log_time: f64, event: bool) -> f64 {
    if event {
        ln_normal_pdf(log_time, mean, variance)
    } else {
        ln_std_normal_sf((log_time - mean) / variance.sqrt())
    }
}

fn contributions<S: SurvivalDraw>(state: &S, data: &Dataset) -> Vec<f64> {
    let v = state.time_variance();
    (0..data.n())
        .map(|i| subject_log_contribution(state.mean_log_time(data, i), v, data.log_time()[i], data.event()[i]))
        .collect()
}

/// -2 times the censoring-aware survival log-likelihood.
pub fn deviance<S: SurvivalDraw>(state: &S, data: &Dataset) -> f64 {
    -2.0 * contributions(state, data).iter().sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub p_d: f64,
    pub dbar: f64,
    pub d_at_mean: f64,
}

impl Dic {
    pub fn from_parts(deviances: &[f64], d_at_mean: f64) -> Self {
        let dbar = deviances.iter().sum::<f64>() / deviances.len() as f64;
        let p_d = dbar - d_at_mean;
        Self { dic: d_at_mean + 2.0 * p_d, p_d, dbar, d_at_mean }
    }
}

pub fn compute_dic<S: SurvivalDraw>(draws: &PosteriorDraws<S>, data: &Dataset) -> Result<Dic> {
    if draws.len() < 2 {
        return Err(Error::InsufficientDraws { needed: 2, got: draws.len() });
    }
    let deviances: Vec<f64> = draws.draws.iter().map(|s| deviance(s, data)).collect();
    let mean_state = S::posterior_mean(&draws.draws);
    Ok(Dic::from_parts(&deviances, deviance(&mean_state, data)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lpml {
    pub lpml: f64,
    pub cpo: Vec<f64>,
    pub log_cpo: Vec<f64>,
    /// Subjects whose CPO is zero in floating point (log CPO = -inf).
    pub underflows: usize,
}

/// Harmonic-mean CPO estimates from per-draw, per-subject log-likelihoods
/// (`loglik[s][i]`), evaluated in log space.
pub fn lpml_from_loglik(loglik: &[Vec<f64>]) -> Result<Lpml> {
    let s = loglik.len();
    if s == 0 {
        return Err(Error::InsufficientDraws { needed: 1, got: 0 });
    }
    let n = loglik[0].len();
    let ln_s = (s as f64).ln();
    let mut log_cpo = Vec::with_capacity(n);
    for i in 0..n {
        let neg_max = loglik.iter().map(|row| -row[i]).fold(f64::NEG_INFINITY, f64::max);
        let lse = if neg_max == f64::INFINITY {
            f64::INFINITY
        } else {
            neg_max + loglik.iter().map(|row| (-row[i] - neg_max).exp()).sum::<f64>().ln()
        };
        log_cpo.push(ln_s - lse);
    }
    let underflows = log_cpo.iter().filter(|v| **v == f64::NEG_INFINITY).count();
    Ok(Lpml {
        lpml: log_cpo.iter().sum(),
        cpo: log_cpo.iter().map(|v| v.exp()).collect(),
        log_cpo,
        underflows,
    })
}

pub fn compute_lpml<S: SurvivalDraw>(draws: &PosteriorDraws<S>, data: &Dataset) -> Result<Lpml> {
    let rows: Vec<Vec<f64>> = draws.draws.iter().map(|s| contributions(s, data)).collect();
    lpml_from_loglik(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mse {
    /// Over uncensored subjects, observed log time against the posterior-mean
    /// linear predictor. Absent when every subject is censored.
    pub fitted: Option<f64>,
    /// Over censored subjects, posterior-mean imputed log time against the
    /// true log time. Absent without ground truth.
    pub imputed: Option<f64>,
}

pub fn compute_mse<S: SurvivalDraw>(draws: &PosteriorDraws<S>, data: &Dataset, truth: Option<&[f64]>) -> Result<Mse> {
    if draws.is_empty() {
        return Err(Error::InsufficientDraws { needed: 1, got: 0 });
    }
    let n = data.n();
    if let Some(t) = truth {
        if t.len() != n {
            return Err(Error::Shape(format!("{} true log times for {n} subjects", t.len())));
        }
    }
    let s = draws.len() as f64;
    let mut fitted = vec![0.0; n];
    let mut imputed = vec![0.0; n];
    for d in &draws.draws {
        for i in 0..n {
            fitted[i] += d.mean_log_time(data, i) / s;
            imputed[i] += d.augmented()[i] / s;
        }
    }
    let events: Vec<usize> = (0..n).filter(|&i| data.event()[i]).collect();
    let mse_fitted = (!events.is_empty()).then(|| {
        events.iter().map(|&i| (data.log_time()[i] - fitted[i]).powi(2)).sum::<f64>() / events.len() as f64
    });
    let mse_imputed = truth.map(|t| {
        let censored: Vec<usize> = (0..n).filter(|&i| !data.event()[i]).collect();
        if censored.is_empty() {
            0.0
        } else {
            censored.iter().map(|&i| (imputed[i] - t[i]).powi(2)).sum::<f64>() / censored.len() as f64
        }
    });
    Ok(Mse { fitted: mse_fitted, imputed: mse_imputed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub dataset_hash: String,
    pub n: usize,
    pub draws: usize,
    pub dic: f64,
    pub p_d: f64,
    pub dbar: f64,
    pub d_at_mean: f64,
    pub lpml: f64,
    pub cpo: Vec<f64>,
    pub log_cpo: Vec<f64>,
    pub cpo_underflows: usize,
    pub mse_fitted: Option<f64>,
    pub mse_imputed: Option<f64>,
    pub scale_floor_hits: u64,
}

impl FitReport {
    pub fn assess<S: SurvivalDraw>(draws: &PosteriorDraws<S>, data: &Dataset, truth: Option<&[f64]>) -> Result<Self> {
        let dic = compute_dic(draws, data)?;
        let lpml = compute_lpml(draws, data)?;
        let mse = compute_mse(draws, data, truth)?;
        Ok(Self {
            model: S::MODEL,
            dataset_hash: data.content_hash(),
            n: data.n(),
            draws: draws.len(),
            dic: dic.dic,
            p_d: dic.p_d,
            dbar: dic.dbar,
            d_at_mean: dic.d_at_mean,
            lpml: lpml.lpml,
            cpo: lpml.cpo,
            log_cpo: lpml.log_cpo,
            cpo_underflows: lpml.underflows,
            mse_fitted: mse.fitted,
            mse_imputed: mse.imputed,
            scale_floor_hits: draws.scale_floor_hits,
        })
    }
}

/// Posterior-mean survival probability of training subject `subject` on a
/// strictly increasing grid of positive times.
pub fn survival_curve<S: SurvivalDraw>(
    draws: &PosteriorDraws<S>,
    data: &Dataset,
    subject: usize,
    time_grid: &[f64],
) -> Result<Vec<f64>> {
    if time_grid.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    if time_grid.iter().any(|t| !(*t > 0.0)) || time_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("time grid must be positive and strictly increasing".into()));
    }
    if subject >= data.n() {
        return Err(Error::InvalidArgument(format!("subject index {subject} out of range")));
    }
    if draws.is_empty() {
        return Err(Error::InsufficientDraws { needed: 1, got: 0 });
    }
    let params: Vec<(f64, f64)> = draws
        .draws
        .iter()
        .map(|d| (d.mean_log_time(data, subject), d.time_variance().sqrt()))
        .collect();
    let s = params.len() as f64;
    Ok(time_grid
        .iter()
        .map(|t| {
            let lt = t.ln();
            params.iter().map(|(mu, sd)| std_normal_cdf(-(lt - mu) / sd)).sum::<f64>() / s
        })
        .collect())
}

/// Product-limit estimate on the original time scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KaplanMeier {
    /// Distinct event times, increasing.
    pub times: Vec<f64>,
    /// The same times on the log scale, as stored in the dataset.
    pub log_times: Vec<f64>,
    /// Survival just after each event time.
    pub survival: Vec<f64>,
}

impl KaplanMeier {
    /// Right-continuous step value at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let lt = t.ln();
        match self.log_times.partition_point(|x| *x <= lt) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

pub fn kaplan_meier(data: &Dataset) -> KaplanMeier {
    let mut obs: Vec<(f64, bool)> = data
        .log_time()
        .iter()
        .zip(data.event())
        .map(|(lt, e)| (*lt, *e))
        .collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut at_risk = obs.len();
    let mut s = 1.0;
    let mut km = KaplanMeier { times: Vec::new(), log_times: Vec::new(), survival: Vec::new() };
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let mut deaths = 0;
        let mut leaving = 0;
        while i < obs.len() && obs[i].0 == t {
            deaths += obs[i].1 as usize;
            leaving += 1;
            i += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            km.times.push(t.exp());
            km.log_times.push(t);
            km.survival.push(s);
        }
        at_risk -= leaving;
    }
    km
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residuals {
    /// Indices of the uncensored subjects used.
    pub subjects: Vec<usize>,
    /// Standardized residuals in subject order.
    pub residuals: Vec<f64>,
    /// Residuals sorted ascending, paired with `theoretical` for a QQ plot.
    pub sorted: Vec<f64>,
    pub theoretical: Vec<f64>,
}

/// Standardized residuals on uncensored subjects with matching normal
/// quantiles at plotting positions (k - 0.5) / m.
pub fn residual_diagnostics(data: &Dataset, fitted_means: &[f64], sigma_hat: f64) -> Result<Residuals> {
    if fitted_means.len() != data.n() {
        return Err(Error::Shape(format!("{} fitted means for {} subjects", fitted_means.len(), data.n())));
    }
    if !(sigma_hat > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_hat {sigma_hat}")));
    }
    let subjects: Vec<usize> = (0..data.n()).filter(|&i| data.event()[i]).collect();
    if subjects.len() < 3 {
        return Err(Error::DiagnosticUnavailable(format!(
            "{} uncensored subjects, at least 3 required",
            subjects.len()
        )));
    }
    let residuals: Vec<f64> = subjects
        .iter()
        .map(|&i| (data.log_time()[i] - fitted_means[i]) / sigma_hat)
        .collect();
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let theoretical = (1..=sorted.len())
        .map(|k| std_normal_quantile((k as f64 - 0.5) / m))
        .collect();
    Ok(Residuals { subjects, residuals, sorted, theoretical })
}
