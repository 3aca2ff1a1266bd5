//! Non-integrated comparator: a Bayesian log-normal AFT regression of log t
//! on the stacked design `[1 | X | U1 | U2]`.
//!
//! Coefficients have independent N(0, sigma2 * prior_variance) priors and
//! sigma2 has the 1/sigma2 reference prior, so each sweep is a censored-time
//! imputation, one joint normal draw of all coefficients and an inverse-gamma
//! draw of sigma2.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::integrated::{check_augmented, merge_chains, ChainOutput, ProgressFn, Progress, SCALE_FLOOR};
use crate::kernels::ln_normal_pdf;
use crate::model::{initial_augmented, mean_of, mean_vec, ModelKind, SurvivalDraw};
use crate::{Dataset, Error, McmcConfig, PosteriorDraws, Result, RngStream};

/// Relative residual norm below which a design column counts as linearly dependent.
const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineHyper {
    /// Prior variance of every coefficient in units of sigma2.
    pub prior_variance: f64,
}

impl Default for BaselineHyper {
    fn default() -> Self {
        Self { prior_variance: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub alpha: f64,
    pub beta: DVector<f64>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub sigma2: f64,
    pub y_aug: Vec<f64>,
}

impl BaselineState {
    pub fn initial(data: &Dataset) -> Self {
        Self {
            alpha: 0.0,
            beta: DVector::zeros(data.p()),
            gamma1: vec![0.0; data.q1()],
            gamma2: vec![0.0; data.q2()],
            sigma2: 1.0,
            y_aug: initial_augmented(data),
        }
    }

    /// Coefficients in design-column order.
    pub fn coefficients(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(1 + self.beta.len() + self.gamma1.len() + self.gamma2.len());
        v.push(self.alpha);
        v.extend(self.beta.iter());
        v.extend(&self.gamma1);
        v.extend(&self.gamma2);
        DVector::from_vec(v)
    }

    fn set_coefficients(&mut self, theta: &DVector<f64>) {
        let p = self.beta.len();
        let q1 = self.gamma1.len();
        self.alpha = theta[0];
        for j in 0..p {
            self.beta[j] = theta[1 + j];
        }
        for k in 0..q1 {
            self.gamma1[k] = theta[1 + p + k];
        }
        for (l, g) in self.gamma2.iter_mut().enumerate() {
            *g = theta[1 + p + q1 + l];
        }
    }
}

impl SurvivalDraw for BaselineState {
    const MODEL: ModelKind = ModelKind::Baseline;

    fn mean_log_time(&self, data: &Dataset, i: usize) -> f64 {
        let xb: f64 = (0..data.p()).map(|j| data.x()[(i, j)] * self.beta[j]).sum();
        let g1: f64 = (0..data.q1()).map(|k| data.u1()[(i, k)] * self.gamma1[k]).sum();
        let g2: f64 = (0..data.q2()).map(|l| data.u2()[(i, l)] * self.gamma2[l]).sum();
        self.alpha + xb + g1 + g2
    }

    fn time_variance(&self) -> f64 {
        self.sigma2
    }

    fn augmented(&self) -> &[f64] {
        &self.y_aug
    }

    fn posterior_mean(draws: &[Self]) -> Self {
        let s = draws.len();
        let first = &draws[0];
        let mut beta = DVector::zeros(first.beta.len());
        for d in draws {
            beta += &d.beta;
        }
        beta /= s as f64;
        Self {
            alpha: mean_of(draws.iter().map(|d| d.alpha), s),
            beta,
            gamma1: mean_vec(draws.iter().map(|d| d.gamma1.as_slice()), first.gamma1.len(), s),
            gamma2: mean_vec(draws.iter().map(|d| d.gamma2.as_slice()), first.gamma2.len(), s),
            sigma2: mean_of(draws.iter().map(|d| d.sigma2), s),
            y_aug: mean_vec(draws.iter().map(|d| d.y_aug.as_slice()), first.y_aug.len(), s),
        }
    }
}

/// `[1 | X | U1 | U2]` and its column names.
pub fn design_matrix(data: &Dataset) -> (DMatrix<f64>, Vec<String>) {
    let n = data.n();
    let d = 1 + data.p() + data.q1() + data.q2();
    let mut z = DMatrix::zeros(n, d);
    z.column_mut(0).fill(1.0);
    let mut names = vec!["intercept".to_string()];
    let mut col = 1;
    for (m, prefix, labels) in [
        (data.x(), "x_", data.x_names()),
        (data.u1(), "u1_", data.u1_names()),
        (data.u2(), "u2_", data.u2_names()),
    ] {
        for (k, label) in labels.iter().enumerate() {
            z.column_mut(col).copy_from(&m.column(k));
            names.push(format!("{prefix}{label}"));
            col += 1;
        }
    }
    (z, names)
}

/// Columns that are linear combinations of earlier columns (modified
/// Gram-Schmidt in design order).
pub fn dependent_columns(z: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..z.ncols() {
        let col = z.column(j).into_owned();
        let norm = col.norm();
        let mut r = col;
        for b in &basis {
            let c = b.dot(&r);
            r -= b * c;
        }
        let rn = r.norm();
        if rn <= RANK_TOLERANCE * norm.max(1.0) {
            dependent.push(names[j].clone());
        } else {
            basis.push(r / rn);
        }
    }
    dependent
}

pub struct BaselineSampler<'a> {
    data: &'a Dataset,
    hyper: BaselineHyper,
    z: DMatrix<f64>,
    /// Lower Cholesky factor of Z'Z + I / prior_variance.
    factor: DMatrix<f64>,
    initial: BaselineState,
}

impl<'a> BaselineSampler<'a> {
    pub fn new(data: &'a Dataset, hyper: BaselineHyper) -> Result<Self> {
        if !(hyper.prior_variance > 0.0 && hyper.prior_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!("prior variance {}", hyper.prior_variance)));
        }
        let (z, names) = design_matrix(data);
        let d = z.ncols();
        let dependent = dependent_columns(&z, &names);
        if !dependent.is_empty() || d > data.n() {
            return Err(Error::SingularCovariance { dim: d, columns: dependent });
        }
        let precision = z.tr_mul(&z) + DMatrix::identity(d, d) / hyper.prior_variance;
        let factor = precision
            .cholesky()
            .ok_or(Error::SingularCovariance { dim: d, columns: Vec::new() })?
            .l();
        Ok(Self { data, hyper, z, factor, initial: BaselineState::initial(data) })
    }

    pub fn with_initial(mut self, state: BaselineState) -> Result<Self> {
        check_augmented(self.data, &state.y_aug)?;
        self.initial = state;
        Ok(self)
    }

    pub fn impute_censored(&self, state: &mut BaselineState, rng: &mut RngStream) -> Result<()> {
        let mu = &self.z * state.coefficients();
        for (i, (&event, &lower)) in self.data.event().iter().zip(self.data.log_time()).enumerate() {
            if !event {
                state.y_aug[i] = rng.sample_truncated_normal_lower(mu[i], state.sigma2, lower)?;
            }
        }
        Ok(())
    }

    /// Posterior mean of the coefficients given sigma2 and the augmented times.
    pub fn coefficient_mean(&self, state: &BaselineState) -> DVector<f64> {
        let rhs = self.z.tr_mul(&DVector::from_column_slice(&state.y_aug));
        let w = self.factor.solve_lower_triangular(&rhs).expect("cholesky factor is invertible");
        self.factor.tr_solve_lower_triangular(&w).expect("cholesky factor is invertible")
    }

    pub fn update_coefficients(&self, state: &mut BaselineState, rng: &mut RngStream) {
        let mean = self.coefficient_mean(state);
        let theta = rng.sample_mvn_precision(&mean, &self.factor, state.sigma2);
        state.set_coefficients(&theta);
    }

    /// Inverse-gamma (shape, scale) of sigma2 given the coefficients.
    pub fn sigma2_conditional(&self, state: &BaselineState) -> (f64, f64) {
        let theta = state.coefficients();
        let mu = &self.z * &theta;
        let rss: f64 = state.y_aug.iter().zip(mu.iter()).map(|(y, m)| (y - m) * (y - m)).sum();
        let shape = (self.data.n() + theta.len()) as f64 / 2.0;
        (shape, 0.5 * (rss + theta.norm_squared() / self.hyper.prior_variance))
    }

    pub fn update_sigma2(&self, state: &mut BaselineState, rng: &mut RngStream) -> Result<bool> {
        let (shape, scale) = self.sigma2_conditional(state);
        let floored = !(scale > SCALE_FLOOR) || !scale.is_finite();
        state.sigma2 = rng.sample_inverse_gamma(shape, if floored { SCALE_FLOOR } else { scale })?;
        Ok(floored)
    }

    pub fn sweep(&self, state: &mut BaselineState, rng: &mut RngStream) -> Result<u64> {
        self.impute_censored(state, rng)?;
        self.update_coefficients(state, rng);
        Ok(self.update_sigma2(state, rng)? as u64)
    }

    pub fn survival_loglik(&self, state: &BaselineState) -> f64 {
        let mu = &self.z * state.coefficients();
        state
            .y_aug
            .iter()
            .zip(mu.iter())
            .map(|(y, m)| ln_normal_pdf(*y, *m, state.sigma2))
            .sum()
    }

    pub fn run(&self, config: &McmcConfig, progress: Option<ProgressFn<'_>>) -> Result<PosteriorDraws<BaselineState>> {
        config.validate()?;
        let chains: Vec<ChainOutput<BaselineState>> = (0..config.chains)
            .into_par_iter()
            .map(|c| {
                let mut rng = RngStream::split(config.seed, c as u64);
                let mut state = self.initial.clone();
                let mut out = ChainOutput::with_capacity(config.stored_per_chain());
                for t in 1..=config.iterations {
                    out.floors += self.sweep(&mut state, &mut rng)?;
                    if config.keeps(t) {
                        check_augmented(self.data, &state.y_aug)?;
                        let ll = self.survival_loglik(&state);
                        if let Some(cb) = progress {
                            cb(&Progress { chain: c, iteration: t, survival_loglik: ll });
                        }
                        out.draws.push(state.clone());
                        out.loglik.push(ll);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(merge_chains(*config, chains))
    }
}

pub fn run_chain_baseline(data: &Dataset, hyper: BaselineHyper, config: &McmcConfig) -> Result<PosteriorDraws<BaselineState>> {
    BaselineSampler::new(data, hyper)?.run(config, None)
}
