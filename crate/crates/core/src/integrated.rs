//! Gibbs sampler for the integrated structural-equation survival model.
//!
//! One sweep updates, in order: censored log times, eta1, eta2, the survival
//! regression block (beta_t, alpha_t, phi_t), sigma_t2, and the platform
//! intercepts and loadings. Every update is an exact draw from its full
//! conditional; the latent scores are per-subject and conditionally
//! independent across subjects.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::model::{check_identifiability, survival_loglik_integrated};
use crate::{Dataset, Error, Hyperparameters, IntegratedState, McmcConfig, PosteriorDraws, Result, RngStream};

/// Floor applied to a degenerate inverse-gamma scale.
pub const SCALE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub variance: f64,
}

/// Blocks held fixed at their current value during a sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrozenBlocks {
    pub censored: bool,
    pub eta1: bool,
    pub eta2: bool,
    pub regression: bool,
    pub sigma_t2: bool,
    pub platform: bool,
}

impl FrozenBlocks {
    pub fn all() -> Self {
        Self {
            censored: true,
            eta1: true,
            eta2: true,
            regression: true,
            sigma_t2: true,
            platform: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub chain: usize,
    pub iteration: usize,
    pub survival_loglik: f64,
}

pub type ProgressFn<'f> = &'f (dyn Fn(&Progress) + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Platform {
    One,
    Two,
}

pub struct IntegratedSampler<'a> {
    data: &'a Dataset,
    hyper: &'a Hyperparameters,
    /// Lower Cholesky factor of B = X'X + Sigma_beta^-1.
    b_factor: DMatrix<f64>,
    sigma_beta_inv: DMatrix<f64>,
    /// Sigma_beta^-1 beta_t0.
    prior_shift: DVector<f64>,
    u1_colsum: Vec<f64>,
    u2_colsum: Vec<f64>,
    frozen: FrozenBlocks,
    initial: IntegratedState,
}

impl<'a> IntegratedSampler<'a> {
    pub fn new(data: &'a Dataset, hyper: &'a Hyperparameters) -> Result<Self> {
        hyper.validate(data)?;
        let p = data.p();
        let sigma_beta_inv = if p == 0 {
            DMatrix::zeros(0, 0)
        } else {
            hyper
                .sigma_beta
                .clone()
                .cholesky()
                .ok_or(Error::SingularCovariance { dim: p, columns: Vec::new() })?
                .inverse()
        };
        let b = data.x().tr_mul(data.x()) + &sigma_beta_inv;
        let b_factor = if p == 0 {
            DMatrix::zeros(0, 0)
        } else {
            b.cholesky()
                .ok_or(Error::SingularCovariance { dim: p, columns: data.x_names().to_vec() })?
                .l()
        };
        let prior_shift = &sigma_beta_inv * &hyper.beta_t0;
        let colsum = |m: &DMatrix<f64>| (0..m.ncols()).map(|k| m.column(k).sum()).collect();
        Ok(Self {
            data,
            hyper,
            b_factor,
            sigma_beta_inv,
            prior_shift,
            u1_colsum: colsum(data.u1()),
            u2_colsum: colsum(data.u2()),
            frozen: FrozenBlocks::default(),
            initial: IntegratedState::initial(data),
        })
    }

    pub fn with_initial(mut self, state: IntegratedState) -> Result<Self> {
        state.check_shape(self.data)?;
        check_augmented(self.data, &state.y_aug)?;
        if !(state.sigma_t2 > 0.0) {
            return Err(Error::InvalidParameter(format!("initial sigma_t2 {}", state.sigma_t2)));
        }
        self.initial = state;
        Ok(self)
    }

    pub fn freeze(mut self, frozen: FrozenBlocks) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn initial(&self) -> &IntegratedState {
        &self.initial
    }

    fn x_beta(&self, state: &IntegratedState) -> DVector<f64> {
        self.data.x() * &state.beta_t
    }

    /// Draw each censored log time from N(mu_i, sigma_t2) truncated to
    /// (log t*_i, inf).
    pub fn impute_censored(&self, state: &mut IntegratedState, rng: &mut RngStream) -> Result<()> {
        let xb = self.x_beta(state);
        for (i, (&event, &lower)) in self.data.event().iter().zip(self.data.log_time()).enumerate() {
            if !event {
                let mu = state.alpha_t + xb[i] + state.eta1[i] * state.phi_t;
                state.y_aug[i] = rng.sample_truncated_normal_lower(mu, state.sigma_t2, lower)?;
            }
        }
        Ok(())
    }

    /// Full conditionals of eta1 for all subjects; the variance is shared.
    pub fn eta1_conditionals(&self, state: &IntegratedState) -> (Vec<f64>, f64) {
        let h = self.hyper;
        let w: DVector<f64> = DVector::from_iterator(
            state.phi_u1.len(),
            state.phi_u1.iter().zip(&h.sigma2_u1).map(|(f, s)| f / s),
        );
        let offset: f64 = w.iter().zip(&state.alpha_u1).map(|(w, a)| w * a).sum();
        let precision = 1.0 / h.sigma2_eta1
            + state.phi_u1.iter().zip(&h.sigma2_u1).map(|(f, s)| f * f / s).sum::<f64>()
            + state.phi_t * state.phi_t / state.sigma_t2;
        let uw = self.data.u1() * &w;
        let xb = self.x_beta(state);
        let means = (0..self.data.n())
            .map(|i| {
                let time_part = state.phi_t * (state.y_aug[i] - state.alpha_t - xb[i]) / state.sigma_t2;
                (state.eta2[i] / h.sigma2_eta1 + uw[i] - offset + time_part) / precision
            })
            .collect();
        (means, 1.0 / precision)
    }

    pub fn eta1_conditional(&self, state: &IntegratedState, i: usize) -> NormalParams {
        let (means, variance) = self.eta1_conditionals(state);
        NormalParams { mean: means[i], variance }
    }

    pub fn update_eta1(&self, state: &mut IntegratedState, rng: &mut RngStream) -> Result<()> {
        let (means, variance) = self.eta1_conditionals(state);
        for (e, m) in state.eta1.iter_mut().zip(means) {
            *e = rng.sample_normal(m, variance)?;
        }
        Ok(())
    }

    pub fn eta2_conditionals(&self, state: &IntegratedState) -> (Vec<f64>, f64) {
        let h = self.hyper;
        let w: DVector<f64> = DVector::from_iterator(
            state.phi_u2.len(),
            state.phi_u2.iter().zip(&h.sigma2_u2).map(|(f, s)| f / s),
        );
        let offset: f64 = w.iter().zip(&state.alpha_u2).map(|(w, a)| w * a).sum();
        let precision = 1.0 / h.sigma2_eta1
            + 1.0 / h.sigma2_eta2
            + state.phi_u2.iter().zip(&h.sigma2_u2).map(|(f, s)| f * f / s).sum::<f64>();
        let uw = self.data.u2() * &w;
        let means = (0..self.data.n())
            .map(|i| (state.eta1[i] / h.sigma2_eta1 + uw[i] - offset) / precision)
            .collect();
        (means, 1.0 / precision)
    }

    pub fn eta2_conditional(&self, state: &IntegratedState, i: usize) -> NormalParams {
        let (means, variance) = self.eta2_conditionals(state);
        NormalParams { mean: means[i], variance }
    }

    pub fn update_eta2(&self, state: &mut IntegratedState, rng: &mut RngStream) -> Result<()> {
        let (means, variance) = self.eta2_conditionals(state);
        for (e, m) in state.eta2.iter_mut().zip(means) {
            *e = rng.sample_normal(m, variance)?;
        }
        Ok(())
    }

    /// Mean and covariance of beta_t given everything else.
    pub fn beta_conditional(&self, state: &IntegratedState) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.data.p();
        if p == 0 {
            return (DVector::zeros(0), DMatrix::zeros(0, 0));
        }
        let mean = self.beta_mean(state);
        let l_inv = self
            .b_factor
            .clone()
            .try_inverse()
            .expect("cholesky factor is invertible");
        let cov = l_inv.tr_mul(&l_inv) * state.sigma_t2;
        (mean, cov)
    }

    fn beta_mean(&self, state: &IntegratedState) -> DVector<f64> {
        let r = DVector::from_iterator(
            self.data.n(),
            (0..self.data.n()).map(|i| state.y_aug[i] - state.alpha_t - state.eta1[i] * state.phi_t),
        );
        let rhs = self.data.x().tr_mul(&r) + &self.prior_shift;
        let z = self
            .b_factor
            .solve_lower_triangular(&rhs)
            .expect("cholesky factor is invertible");
        self.b_factor
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor is invertible")
    }

    pub fn alpha_t_conditional(&self, state: &IntegratedState) -> NormalParams {
        let h = self.hyper;
        let xb = self.x_beta(state);
        let a = self.data.n() as f64 + 1.0 / h.sigma2_alpha_t;
        let sum: f64 = (0..self.data.n())
            .map(|i| state.y_aug[i] - xb[i] - state.eta1[i] * state.phi_t)
            .sum();
        NormalParams {
            mean: (sum + h.alpha_t0 / h.sigma2_alpha_t) / a,
            variance: state.sigma_t2 / a,
        }
    }

    pub fn phi_t_conditional(&self, state: &IntegratedState) -> NormalParams {
        let h = self.hyper;
        let xb = self.x_beta(state);
        let eta_sq: f64 = state.eta1.iter().map(|e| e * e).sum();
        let cross: f64 = (0..self.data.n())
            .map(|i| state.eta1[i] * (state.y_aug[i] - state.alpha_t - xb[i]))
            .sum();
        let precision = eta_sq / state.sigma_t2 + 1.0 / h.sigma2_phi_t;
        NormalParams {
            mean: (cross / state.sigma_t2 + h.phi_t0 / h.sigma2_phi_t) / precision,
            variance: 1.0 / precision,
        }
    }

    /// Sequential draws of beta_t, alpha_t and phi_t.
    pub fn update_regression_block(&self, state: &mut IntegratedState, rng: &mut RngStream) -> Result<()> {
        if self.data.p() > 0 {
            let mean = self.beta_mean(state);
            state.beta_t = rng.sample_mvn_precision(&mean, &self.b_factor, state.sigma_t2);
        }
        let a = self.alpha_t_conditional(state);
        state.alpha_t = rng.sample_normal(a.mean, a.variance)?;
        let f = self.phi_t_conditional(state);
        state.phi_t = rng.sample_normal(f.mean, f.variance)?;
        Ok(())
    }

    /// Inverse-gamma (shape, scale) of sigma_t2 given everything else, before
    /// any flooring.
    pub fn sigma_t2_conditional(&self, state: &IntegratedState) -> (f64, f64) {
        let h = self.hyper;
        let (n, p) = (self.data.n(), self.data.p());
        let mu = state.linear_predictor(self.data);
        let rss: f64 = state.y_aug.iter().zip(&mu).map(|(y, m)| (y - m) * (y - m)).sum();
        let db = &state.beta_t - &h.beta_t0;
        let beta_term = if p == 0 { 0.0 } else { db.dot(&(&self.sigma_beta_inv * &db)) };
        let da = state.alpha_t - h.alpha_t0;
        let shape = (n + p + 1) as f64 / 2.0;
        (shape, 0.5 * (rss + beta_term + da * da / h.sigma2_alpha_t))
    }

    /// Returns true when the scale was degenerate and floored.
    pub fn update_sigma_t2(&self, state: &mut IntegratedState, rng: &mut RngStream) -> Result<bool> {
        let (shape, scale) = self.sigma_t2_conditional(state);
        let floored = !(scale > SCALE_FLOOR) || !scale.is_finite();
        let scale = if floored { SCALE_FLOOR } else { scale };
        state.sigma_t2 = rng.sample_inverse_gamma(shape, scale)?;
        Ok(floored)
    }

    fn platform_parts(&self, platform: Platform) -> PlatformParts<'_> {
        let h = self.hyper;
        match platform {
            Platform::One => PlatformParts {
                u: self.data.u1(),
                colsum: &self.u1_colsum,
                sigma2: &h.sigma2_u1,
                alpha0: &h.alpha_u1_0,
                s2_alpha: &h.sigma2_alpha_u1,
                phi0: &h.phi_u1_0,
                s2_phi: &h.sigma2_phi_u1,
            },
            Platform::Two => PlatformParts {
                u: self.data.u2(),
                colsum: &self.u2_colsum,
                sigma2: &h.sigma2_u2,
                alpha0: &h.alpha_u2_0,
                s2_alpha: &h.sigma2_alpha_u2,
                phi0: &h.phi_u2_0,
                s2_phi: &h.sigma2_phi_u2,
            },
        }
    }

    fn platform_state<'s>(state: &'s IntegratedState, platform: Platform) -> (&'s [f64], &'s [f64], &'s [f64]) {
        match platform {
            Platform::One => (&state.alpha_u1, &state.phi_u1, &state.eta1),
            Platform::Two => (&state.alpha_u2, &state.phi_u2, &state.eta2),
        }
    }

    /// Conditional of the intercept of indicator `k` given its loading.
    pub fn loading_intercept_conditional(&self, state: &IntegratedState, platform: Platform, k: usize) -> NormalParams {
        let parts = self.platform_parts(platform);
        let (_, phi, eta) = Self::platform_state(state, platform);
        let eta_sum: f64 = eta.iter().sum();
        parts.intercept(k, phi[k], eta_sum, eta.len())
    }

    /// Conditional of the loading of indicator `k` given its intercept.
    pub fn loading_slope_conditional(&self, state: &IntegratedState, platform: Platform, k: usize) -> NormalParams {
        let parts = self.platform_parts(platform);
        let (alpha, _, eta) = Self::platform_state(state, platform);
        let eta_sum: f64 = eta.iter().sum();
        let eta_sq: f64 = eta.iter().map(|e| e * e).sum();
        let cross: f64 = (0..eta.len()).map(|i| eta[i] * parts.u[(i, k)]).sum();
        parts.slope(k, alpha[k], eta_sum, eta_sq, cross)
    }

    pub fn update_platform_loadings(&self, state: &mut IntegratedState, rng: &mut RngStream) -> Result<()> {
        for platform in [Platform::One, Platform::Two] {
            let parts = self.platform_parts(platform);
            let (alpha, phi, eta) = match platform {
                Platform::One => (&mut state.alpha_u1, &mut state.phi_u1, &state.eta1),
                Platform::Two => (&mut state.alpha_u2, &mut state.phi_u2, &state.eta2),
            };
            if alpha.is_empty() {
                continue;
            }
            let n = eta.len();
            let eta_sum: f64 = eta.iter().sum();
            let eta_sq: f64 = eta.iter().map(|e| e * e).sum();
            let cross = parts.u.tr_mul(&DVector::from_column_slice(eta));
            for k in 0..alpha.len() {
                let a = parts.intercept(k, phi[k], eta_sum, n);
                alpha[k] = rng.sample_normal(a.mean, a.variance)?;
                let f = parts.slope(k, alpha[k], eta_sum, eta_sq, cross[k]);
                phi[k] = rng.sample_normal(f.mean, f.variance)?;
            }
        }
        Ok(())
    }

    /// One full scan in the fixed order. Returns the number of floored
    /// sigma_t2 scales (0 or 1).
    pub fn sweep(&self, state: &mut IntegratedState, rng: &mut RngStream) -> Result<u64> {
        let f = self.frozen;
        if !f.censored {
            self.impute_censored(state, rng)?;
        }
        if !f.eta1 {
            self.update_eta1(state, rng)?;
        }
        if !f.eta2 {
            self.update_eta2(state, rng)?;
        }
        if !f.regression {
            self.update_regression_block(state, rng)?;
        }
        let mut floors = 0;
        if !f.sigma_t2 && self.update_sigma_t2(state, rng)? {
            floors += 1;
        }
        if !f.platform {
            self.update_platform_loadings(state, rng)?;
        }
        Ok(floors)
    }

    pub fn run(&self, config: &McmcConfig, progress: Option<ProgressFn<'_>>) -> Result<PosteriorDraws<IntegratedState>> {
        config.validate()?;
        let report = check_identifiability(self.data, self.hyper);
        let hard = report.hard_failures();
        if !hard.is_empty() {
            let msgs: Vec<_> = hard.iter().map(|c| c.message.clone()).collect();
            return Err(Error::Identifiability(msgs.join("; ")));
        }
        let chains: Vec<ChainOutput<IntegratedState>> = (0..config.chains)
            .into_par_iter()
            .map(|c| self.run_one(config, c, progress))
            .collect::<Result<_>>()?;
        Ok(merge_chains(*config, chains))
    }

    fn run_one(&self, config: &McmcConfig, chain: usize, progress: Option<ProgressFn<'_>>) -> Result<ChainOutput<IntegratedState>> {
        let mut rng = RngStream::split(config.seed, chain as u64);
        let mut state = self.initial.clone();
        let mut out = ChainOutput::with_capacity(config.stored_per_chain());
        for t in 1..=config.iterations {
            out.floors += self.sweep(&mut state, &mut rng)?;
            if config.keeps(t) {
                check_augmented(self.data, &state.y_aug)?;
                let ll = survival_loglik_integrated(&state, self.data)?;
                if let Some(cb) = progress {
                    cb(&Progress { chain, iteration: t, survival_loglik: ll });
                }
                out.draws.push(state.clone());
                out.loglik.push(ll);
            }
        }
        Ok(out)
    }
}

struct PlatformParts<'p> {
    u: &'p DMatrix<f64>,
    colsum: &'p [f64],
    sigma2: &'p [f64],
    alpha0: &'p [f64],
    s2_alpha: &'p [f64],
    phi0: &'p [f64],
    s2_phi: &'p [f64],
}

impl PlatformParts<'_> {
    fn intercept(&self, k: usize, phi: f64, eta_sum: f64, n: usize) -> NormalParams {
        let precision = n as f64 / self.sigma2[k] + 1.0 / self.s2_alpha[k];
        let num = (self.colsum[k] - phi * eta_sum) / self.sigma2[k] + self.alpha0[k] / self.s2_alpha[k];
        NormalParams { mean: num / precision, variance: 1.0 / precision }
    }

    fn slope(&self, k: usize, alpha: f64, eta_sum: f64, eta_sq: f64, cross: f64) -> NormalParams {
        let precision = eta_sq / self.sigma2[k] + 1.0 / self.s2_phi[k];
        let num = (cross - alpha * eta_sum) / self.sigma2[k] + self.phi0[k] / self.s2_phi[k];
        NormalParams { mean: num / precision, variance: 1.0 / precision }
    }
}

pub(crate) struct ChainOutput<S> {
    pub draws: Vec<S>,
    pub loglik: Vec<f64>,
    pub floors: u64,
}

impl<S> ChainOutput<S> {
    pub fn with_capacity(cap: usize) -> Self {
        Self { draws: Vec::with_capacity(cap), loglik: Vec::with_capacity(cap), floors: 0 }
    }
}

pub(crate) fn merge_chains<S>(config: McmcConfig, chains: Vec<ChainOutput<S>>) -> PosteriorDraws<S> {
    let total: usize = chains.iter().map(|c| c.draws.len()).sum();
    let mut merged = PosteriorDraws {
        config,
        draws: Vec::with_capacity(total),
        chain: Vec::with_capacity(total),
        survival_loglik: Vec::with_capacity(total),
        scale_floor_hits: 0,
    };
    for (c, out) in chains.into_iter().enumerate() {
        merged.chain.extend(std::iter::repeat_n(c, out.draws.len()));
        merged.draws.extend(out.draws);
        merged.survival_loglik.extend(out.loglik);
        merged.scale_floor_hits += out.floors;
    }
    merged
}

pub(crate) fn check_augmented(data: &Dataset, y_aug: &[f64]) -> Result<()> {
    for (i, ((&e, &lt), &y)) in data.event().iter().zip(data.log_time()).zip(y_aug).enumerate() {
        let ok = if e { y == lt } else { y > lt };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "augmented log time {y} for subject {} violates observed {lt} (event={e})",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Runs the integrated sampler from its default starting point.
pub fn run_chain(data: &Dataset, hyper: &Hyperparameters, config: &McmcConfig) -> Result<PosteriorDraws<IntegratedState>> {
    IntegratedSampler::new(data, hyper)?.run(config, None)
}
