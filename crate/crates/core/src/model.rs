//! Data, parameter and chain types shared by both samplers, plus the
//! log-likelihood of the integrated model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kernels::ln_normal_pdf;
use crate::{Error, Result};

/// Survival data with one covariate block and two omics platforms.
///
/// `log_time` holds log t* = log min(death, censoring); `event[i]` is true when
/// the death was observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ids: Vec<String>,
    log_time: Vec<f64>,
    event: Vec<bool>,
    x: DMatrix<f64>,
    u1: DMatrix<f64>,
    u2: DMatrix<f64>,
    x_names: Vec<String>,
    u1_names: Vec<String>,
    u2_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        log_time: Vec<f64>,
        event: Vec<bool>,
        x: DMatrix<f64>,
        u1: DMatrix<f64>,
        u2: DMatrix<f64>,
    ) -> Result<Self> {
        let n = log_time.len();
        let ids = (1..=n).map(|i| format!("s{i:04}")).collect();
        let x_names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let u1_names = (1..=u1.ncols()).map(|k| format!("g{k}")).collect();
        let u2_names = (1..=u2.ncols()).map(|l| format!("g{l}")).collect();
        let data = Self {
            ids,
            log_time,
            event,
            x,
            u1,
            u2,
            x_names,
            u1_names,
            u2_names,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        self.ids = ids;
        self.validate()?;
        Ok(self)
    }

    pub fn with_column_names(
        mut self,
        x_names: Vec<String>,
        u1_names: Vec<String>,
        u2_names: Vec<String>,
    ) -> Result<Self> {
        self.x_names = x_names;
        self.u1_names = u1_names;
        self.u2_names = u2_names;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.log_time.len();
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 subjects, got {n}")));
        }
        if self.event.len() != n || self.ids.len() != n {
            return Err(Error::Validation(format!(
                "{n} times but {} status values and {} ids",
                self.event.len(),
                self.ids.len()
            )));
        }
        for (name, m) in [("covariate", &self.x), ("platform 1", &self.u1), ("platform 2", &self.u2)] {
            if m.nrows() != n {
                return Err(Error::Validation(format!(
                    "{name} matrix has {} rows, expected {n}",
                    m.nrows()
                )));
            }
            if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "{name} matrix has a non-finite entry at row {}, column {}",
                    pos % n + 1,
                    pos / n + 1
                )));
            }
        }
        if let Some(i) = self.log_time.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite log time at row {}", i + 1)));
        }
        if self.x_names.len() != self.x.ncols()
            || self.u1_names.len() != self.u1.ncols()
            || self.u2_names.len() != self.u2.ncols()
        {
            return Err(Error::Validation("column name count does not match matrix width".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.log_time.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q1(&self) -> usize {
        self.u1.ncols()
    }

    pub fn q2(&self) -> usize {
        self.u2.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn log_time(&self) -> &[f64] {
        &self.log_time
    }

    pub fn event(&self) -> &[bool] {
        &self.event
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn u1(&self) -> &DMatrix<f64> {
        &self.u1
    }

    pub fn u2(&self) -> &DMatrix<f64> {
        &self.u2
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn u1_names(&self) -> &[String] {
        &self.u1_names
    }

    pub fn u2_names(&self) -> &[String] {
        &self.u2_names
    }

    pub fn censored_count(&self) -> usize {
        self.event.iter().filter(|e| !**e).count()
    }

    pub fn censor_rate(&self) -> f64 {
        self.censored_count() as f64 / self.n() as f64
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    /// SHA-256 over the numeric content, hex encoded. Reports carry it so that
    /// fits of different datasets are never compared.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for d in [self.n(), self.p(), self.q1(), self.q2()] {
            h.update((d as u64).to_le_bytes());
        }
        for v in &self.log_time {
            h.update(v.to_bits().to_le_bytes());
        }
        for e in &self.event {
            h.update([*e as u8]);
        }
        for m in [&self.x, &self.u1, &self.u2] {
            for v in m.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Prior means and variances plus the fixed measurement and latent variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub beta_t0: DVector<f64>,
    /// Prior covariance of beta_t in units of sigma_t2.
    pub sigma_beta: DMatrix<f64>,
    pub alpha_t0: f64,
    /// Prior variance of alpha_t in units of sigma_t2.
    pub sigma2_alpha_t: f64,
    pub phi_t0: f64,
    pub sigma2_phi_t: f64,
    pub alpha_u1_0: Vec<f64>,
    pub sigma2_alpha_u1: Vec<f64>,
    pub phi_u1_0: Vec<f64>,
    pub sigma2_phi_u1: Vec<f64>,
    pub alpha_u2_0: Vec<f64>,
    pub sigma2_alpha_u2: Vec<f64>,
    pub phi_u2_0: Vec<f64>,
    pub sigma2_phi_u2: Vec<f64>,
    pub sigma2_u1: Vec<f64>,
    pub sigma2_u2: Vec<f64>,
    pub sigma2_eta1: f64,
    pub sigma2_eta2: f64,
}

impl Hyperparameters {
    /// Zero prior means, unit prior variances, `Sigma_beta = I` and unit fixed
    /// variances.
    pub fn unit(p: usize, q1: usize, q2: usize) -> Self {
        Self {
            beta_t0: DVector::zeros(p),
            sigma_beta: DMatrix::identity(p, p),
            alpha_t0: 0.0,
            sigma2_alpha_t: 1.0,
            phi_t0: 0.0,
            sigma2_phi_t: 1.0,
            alpha_u1_0: vec![0.0; q1],
            sigma2_alpha_u1: vec![1.0; q1],
            phi_u1_0: vec![0.0; q1],
            sigma2_phi_u1: vec![1.0; q1],
            alpha_u2_0: vec![0.0; q2],
            sigma2_alpha_u2: vec![1.0; q2],
            phi_u2_0: vec![0.0; q2],
            sigma2_phi_u2: vec![1.0; q2],
            sigma2_u1: vec![1.0; q1],
            sigma2_u2: vec![1.0; q2],
            sigma2_eta1: 1.0,
            sigma2_eta2: 1.0,
        }
    }

    /// Priors used for simulated data: as [`Hyperparameters::unit`] but with
    /// `Sigma_beta = 100 I`.
    pub fn simulation(p: usize, q1: usize, q2: usize) -> Self {
        let mut h = Self::unit(p, q1, q2);
        h.sigma_beta = DMatrix::identity(p, p) * 100.0;
        h
    }

    pub fn for_data(data: &Dataset) -> Self {
        Self::unit(data.p(), data.q1(), data.q2())
    }

    /// Sets every platform measurement variance to `value`.
    pub fn with_platform_variance(mut self, value: f64) -> Self {
        self.sigma2_u1.iter_mut().for_each(|v| *v = value);
        self.sigma2_u2.iter_mut().for_each(|v| *v = value);
        self
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let (p, q1, q2) = (data.p(), data.q1(), data.q2());
        let lens = [
            ("beta_t0", self.beta_t0.len(), p),
            ("alpha_u1_0", self.alpha_u1_0.len(), q1),
            ("sigma2_alpha_u1", self.sigma2_alpha_u1.len(), q1),
            ("phi_u1_0", self.phi_u1_0.len(), q1),
            ("sigma2_phi_u1", self.sigma2_phi_u1.len(), q1),
            ("sigma2_u1", self.sigma2_u1.len(), q1),
            ("alpha_u2_0", self.alpha_u2_0.len(), q2),
            ("sigma2_alpha_u2", self.sigma2_alpha_u2.len(), q2),
            ("phi_u2_0", self.phi_u2_0.len(), q2),
            ("sigma2_phi_u2", self.sigma2_phi_u2.len(), q2),
            ("sigma2_u2", self.sigma2_u2.len(), q2),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::Shape(format!("{name} has length {got}, expected {want}")));
            }
        }
        if self.sigma_beta.nrows() != p || self.sigma_beta.ncols() != p {
            return Err(Error::Shape(format!(
                "Sigma_beta is {}x{}, expected {p}x{p}",
                self.sigma_beta.nrows(),
                self.sigma_beta.ncols()
            )));
        }
        let scalars = [
            self.sigma2_alpha_t,
            self.sigma2_phi_t,
            self.sigma2_eta1,
            self.sigma2_eta2,
        ];
        let positive = scalars
            .iter()
            .chain(&self.sigma2_alpha_u1)
            .chain(&self.sigma2_phi_u1)
            .chain(&self.sigma2_u1)
            .chain(&self.sigma2_alpha_u2)
            .chain(&self.sigma2_phi_u2)
            .chain(&self.sigma2_u2)
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::InvalidParameter("all variances must be positive and finite".into()));
        }
        if p > 0 {
            let symmetric = (&self.sigma_beta - self.sigma_beta.transpose()).amax()
                <= 1e-12 * self.sigma_beta.amax().max(1.0);
            if !symmetric || self.sigma_beta.clone().cholesky().is_none() {
                return Err(Error::SingularCovariance {
                    dim: p,
                    columns: Vec::new(),
                });
            }
        }
        Ok(())
    }
}

/// One configuration of every unknown in the integrated model, including the
/// per-subject latent scores and the augmented log times.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedState {
    pub alpha_t: f64,
    pub beta_t: DVector<f64>,
    pub phi_t: f64,
    pub sigma_t2: f64,
    pub alpha_u1: Vec<f64>,
    pub phi_u1: Vec<f64>,
    pub alpha_u2: Vec<f64>,
    pub phi_u2: Vec<f64>,
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    pub y_aug: Vec<f64>,
}

impl IntegratedState {
    /// Neutral starting point: intercepts, loadings, coefficients and latents
    /// at zero, `sigma_t2 = 1`, censored times nudged above their bound by a
    /// tenth of the log-time standard deviation.
    pub fn initial(data: &Dataset) -> Self {
        let (n, p, q1, q2) = (data.n(), data.p(), data.q1(), data.q2());
        Self {
            alpha_t: 0.0,
            beta_t: DVector::zeros(p),
            phi_t: 0.0,
            sigma_t2: 1.0,
            alpha_u1: vec![0.0; q1],
            phi_u1: vec![0.0; q1],
            alpha_u2: vec![0.0; q2],
            phi_u2: vec![0.0; q2],
            eta1: vec![0.0; n],
            eta2: vec![0.0; n],
            y_aug: initial_augmented(data),
        }
    }

    /// alpha_t + x_i beta_t + eta1_i phi_t for every subject.
    pub fn linear_predictor(&self, data: &Dataset) -> Vec<f64> {
        let xb = data.x() * &self.beta_t;
        (0..data.n())
            .map(|i| self.alpha_t + xb[i] + self.eta1[i] * self.phi_t)
            .collect()
    }

    pub fn check_shape(&self, data: &Dataset) -> Result<()> {
        let (n, p, q1, q2) = (data.n(), data.p(), data.q1(), data.q2());
        let ok = self.beta_t.len() == p
            && self.alpha_u1.len() == q1
            && self.phi_u1.len() == q1
            && self.alpha_u2.len() == q2
            && self.phi_u2.len() == q2
            && self.eta1.len() == n
            && self.eta2.len() == n
            && self.y_aug.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "state does not match data dimensions n={n}, p={p}, q1={q1}, q2={q2}"
            )))
        }
    }
}

pub(crate) fn initial_augmented(data: &Dataset) -> Vec<f64> {
    let lt = data.log_time();
    let n = lt.len() as f64;
    let mean = lt.iter().sum::<f64>() / n;
    let sd = (lt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let bump = if sd > 0.0 { 0.1 * sd } else { 0.1 };
    lt.iter()
        .zip(data.event())
        .map(|(&t, &e)| if e { t } else { t + bump })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Integrated,
    Baseline,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Integrated => "integrated",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integrated" => Ok(ModelKind::Integrated),
            "baseline" | "nonintegrated" => Ok(ModelKind::Baseline),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

/// Chain length settings. `iterations` counts burn-in; a state is stored at
/// every `thin`-th iteration after burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            burn_in: 2_000,
            thin: 100,
            seed: 1,
            chains: 1,
        }
    }
}

impl McmcConfig {
    pub fn desk() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 1_000,
            thin: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 || self.chains == 0 {
            return Err(Error::InvalidArgument(
                "iterations, thin and chains must be positive".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.stored_per_chain() == 0 {
            return Err(Error::InvalidArgument("configuration stores no draws".into()));
        }
        Ok(())
    }

    pub fn stored_per_chain(&self) -> usize {
        (self.iterations - self.burn_in.min(self.iterations)) / self.thin.max(1)
    }

    pub fn total_stored(&self) -> usize {
        self.stored_per_chain() * self.chains
    }

    /// Whether 1-based iteration `t` is kept.
    pub fn keeps(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in) % self.thin == 0
    }
}

/// Thinned post-burn-in states of one or more chains, ordered by chain then
/// iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws<S> {
    pub config: McmcConfig,
    pub draws: Vec<S>,
    pub chain: Vec<usize>,
    /// Survival-component log-likelihood of each stored draw at its augmented times.
    pub survival_loglik: Vec<f64>,
    /// Times the sigma_t2 scale had to be floored.
    pub scale_floor_hits: u64,
}

impl<S> PosteriorDraws<S> {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// The survival-time view of a posterior draw, shared by both models.
pub trait SurvivalDraw: Clone {
    const MODEL: ModelKind;

    /// Mean of log t for subject `i` under this draw.
    fn mean_log_time(&self, data: &Dataset, i: usize) -> f64;

    fn time_variance(&self) -> f64;

    fn augmented(&self) -> &[f64];

    /// Element-wise average of the natural parameters.
    fn posterior_mean(draws: &[Self]) -> Self;

    fn mean_log_times(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n()).map(|i| self.mean_log_time(data, i)).collect()
    }
}

pub(crate) fn mean_of(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    values.sum::<f64>() / count as f64
}

pub(crate) fn mean_vec<'a>(rows: impl Iterator<Item = &'a [f64]>, len: usize, count: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    acc
}

impl SurvivalDraw for IntegratedState {
    const MODEL: ModelKind = ModelKind::Integrated;

    fn mean_log_time(&self, data: &Dataset, i: usize) -> f64 {
        let xb: f64 = (0..data.p()).map(|j| data.x()[(i, j)] * self.beta_t[j]).sum();
        self.alpha_t + xb + self.eta1[i] * self.phi_t
    }

    fn time_variance(&self) -> f64 {
        self.sigma_t2
    }

    fn augmented(&self) -> &[f64] {
        &self.y_aug
    }

    fn posterior_mean(draws: &[Self]) -> Self {
        let s = draws.len();
        let first = &draws[0];
        let mut beta = DVector::zeros(first.beta_t.len());
        for d in draws {
            beta += &d.beta_t;
        }
        beta /= s as f64;
        Self {
            alpha_t: mean_of(draws.iter().map(|d| d.alpha_t), s),
            beta_t: beta,
            phi_t: mean_of(draws.iter().map(|d| d.phi_t), s),
            sigma_t2: mean_of(draws.iter().map(|d| d.sigma_t2), s),
            alpha_u1: mean_vec(draws.iter().map(|d| d.alpha_u1.as_slice()), first.alpha_u1.len(), s),
            phi_u1: mean_vec(draws.iter().map(|d| d.phi_u1.as_slice()), first.phi_u1.len(), s),
            alpha_u2: mean_vec(draws.iter().map(|d| d.alpha_u2.as_slice()), first.alpha_u2.len(), s),
            phi_u2: mean_vec(draws.iter().map(|d| d.phi_u2.as_slice()), first.phi_u2.len(), s),
            eta1: mean_vec(draws.iter().map(|d| d.eta1.as_slice()), first.eta1.len(), s),
            eta2: mean_vec(draws.iter().map(|d| d.eta2.as_slice()), first.eta2.len(), s),
            y_aug: mean_vec(draws.iter().map(|d| d.y_aug.as_slice()), first.y_aug.len(), s),
        }
    }
}

/// Sum over subjects of log N(y_aug_i | alpha_t + x_i beta_t + eta1_i phi_t, sigma_t2).
pub fn survival_loglik_integrated(state: &IntegratedState, data: &Dataset) -> Result<f64> {
    state.check_shape(data)?;
    if !(state.sigma_t2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_t2 {}", state.sigma_t2)));
    }
    let mu = state.linear_predictor(data);
    Ok(state
        .y_aug
        .iter()
        .zip(&mu)
        .map(|(y, m)| ln_normal_pdf(*y, *m, state.sigma_t2))
        .sum())
}

/// Log-density of one platform block given its latent score.
pub(crate) fn platform_loglik(
    u: &DMatrix<f64>,
    alpha: &[f64],
    phi: &[f64],
    sigma2: &[f64],
    eta: &[f64],
) -> f64 {
    let mut total = 0.0;
    for k in 0..u.ncols() {
        for (i, e) in eta.iter().enumerate() {
            total += ln_normal_pdf(u[(i, k)], alpha[k] + e * phi[k], sigma2[k]);
        }
    }
    total
}

/// Survival term plus both platform regressions, conditional on the latents.
pub fn full_loglik_integrated(
    state: &IntegratedState,
    data: &Dataset,
    hyper: &Hyperparameters,
) -> Result<f64> {
    hyper.validate(data)?;
    let survival = survival_loglik_integrated(state, data)?;
    let p1 = platform_loglik(data.u1(), &state.alpha_u1, &state.phi_u1, &hyper.sigma2_u1, &state.eta1);
    let p2 = platform_loglik(data.u2(), &state.alpha_u2, &state.phi_u2, &hyper.sigma2_u2, &state.eta2);
    Ok(survival + p1 + p2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IdentifiabilityCondition {
    /// Some observed block loads on this latent alone.
    DedicatedIndicator,
    /// At least two observed indicators in total.
    TwoIndicators,
    /// The latent structure is the recursive eta1 <- eta2 form.
    RecursiveStructure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityCheck {
    pub latent: &'static str,
    pub condition: IdentifiabilityCondition,
    pub passed: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityReport {
    pub checks: Vec<IdentifiabilityCheck>,
}

impl IdentifiabilityReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// A latent with no indicators at all cannot be estimated; those are the
    /// only failures that block sampling.
    pub fn hard_failures(&self) -> Vec<&IdentifiabilityCheck> {
        self.checks
            .iter()
            .filter(|c| !c.passed && c.condition == IdentifiabilityCondition::DedicatedIndicator)
            .collect()
    }

    pub fn warnings(&self) -> Vec<&IdentifiabilityCheck> {
        self.checks
            .iter()
            .filter(|c| !c.passed && c.condition != IdentifiabilityCondition::DedicatedIndicator)
            .collect()
    }
}

/// Structural identification conditions for the two-latent model.
pub fn check_identifiability(data: &Dataset, _hyper: &Hyperparameters) -> IdentifiabilityReport {
    let mut checks = Vec::new();
    for (latent, block, q) in [("eta1", "platform 1", data.q1()), ("eta2", "platform 2", data.q2())] {
        checks.push(IdentifiabilityCheck {
            latent,
            condition: IdentifiabilityCondition::DedicatedIndicator,
            passed: q >= 1,
            message: format!("{block} has {q} indicator(s) loading only on {latent}"),
        });
        checks.push(IdentifiabilityCheck {
            latent,
            condition: IdentifiabilityCondition::TwoIndicators,
            passed: q >= 2,
            message: format!("{latent} has {q} observed indicator(s), at least 2 required"),
        });
    }
    checks.push(IdentifiabilityCheck {
        latent: "eta1",
        condition: IdentifiabilityCondition::RecursiveStructure,
        passed: true,
        message: "eta1 ~ N(eta2, s1), eta2 ~ N(0, s2) is recursive".into(),
    });
    IdentifiabilityReport { checks }
}
