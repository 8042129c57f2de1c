//! Mean-field Gaussian variational inference.
//!
//! The approximate posterior is a product of independent Normals over the
//! unconstrained parameter vector `z`. Positive parameter blocks are mapped
//! through `exp`, and the engine adds the log-Jacobian itself, so models only
//! ever see (and differentiate) the constrained target density.
//!
//! The ELBO is maximized with reparameterized draws `z = mu + exp(omega) * eps`
//! and an Adam-style ascent on `(mu, omega)`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::constrain;

/// A differentiable log density over the constrained parameter vector.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(theta)` and overwrites `grad` with its gradient.
    fn log_density(&self, theta: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Unconstrained,
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlock {
    pub name: String,
    pub len: usize,
    pub constraint: Constraint,
}

impl ParameterBlock {
    pub fn new(name: impl Into<String>, len: usize, constraint: Constraint) -> Self {
        Self {
            name: name.into(),
            len,
            constraint,
        }
    }
}

/// Ordered list of named parameter blocks laid out back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    blocks: Vec<ParameterBlock>,
    offsets: Vec<usize>,
    total_dim: usize,
}

impl ParameterSpace {
    pub fn new(blocks: Vec<ParameterBlock>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut total_dim = 0;
        for (k, b) in blocks.iter().enumerate() {
            if blocks[..k].iter().any(|o| o.name == b.name) {
                return Err(Error::contract(format!("duplicate parameter block `{}`", b.name)));
            }
            offsets.push(total_dim);
            total_dim += b.len;
        }
        Ok(Self {
            blocks,
            offsets,
            total_dim,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn blocks(&self) -> &[ParameterBlock] {
        &self.blocks
    }

    pub fn range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let k = self.blocks.iter().position(|b| b.name == name)?;
        Some(self.offsets[k]..self.offsets[k] + self.blocks[k].len)
    }

    /// Name of the block holding scalar `index`.
    pub fn block_name(&self, index: usize) -> &str {
        let k = self.offsets.partition_point(|&o| o <= index).saturating_sub(1);
        &self.blocks[k].name
    }

    fn positive_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.blocks
            .iter()
            .zip(&self.offsets)
            .filter(|(b, _)| b.constraint == Constraint::Positive)
            .map(|(b, &o)| o..o + b.len)
    }

    /// Maps an unconstrained vector onto the constrained space.
    pub fn constrain(&self, z: &[f64]) -> Vec<f64> {
        let mut theta = z.to_vec();
        for r in self.positive_ranges() {
            for t in &mut theta[r] {
                *t = constrain(*t).0;
            }
        }
        theta
    }

    /// Log joint on the unconstrained space (target density plus
    /// log-Jacobian) and its gradient with respect to `z`.
    pub fn log_joint(&self, model: &dyn LogDensity, z: &[f64], grad_z: &mut [f64]) -> f64 {
        let mut theta = vec![0.0; self.total_dim];
        self.log_joint_with(model, z, grad_z, &mut theta)
    }

    fn log_joint_with(&self, model: &dyn LogDensity, z: &[f64], grad_z: &mut [f64], theta: &mut [f64]) -> f64 {
        theta.copy_from_slice(z);
        let mut log_jac = 0.0;
        for r in self.positive_ranges() {
            for t in &mut theta[r] {
                let (v, lj) = constrain(*t);
                *t = v;
                log_jac += lj;
            }
        }
        let value = model.log_density(theta, grad_z);
        for r in self.positive_ranges() {
            for k in r {
                grad_z[k] = grad_z[k] * theta[k] + 1.0;
            }
        }
        value + log_jac
    }

    fn offending_block(&self, z: &[f64], grad: &[f64]) -> String {
        let idx = z
            .iter()
            .position(|v| !v.is_finite())
            .or_else(|| grad.iter().position(|v| !v.is_finite()));
        match idx {
            Some(i) => self.block_name(i).to_string(),
            None => "<all>".to_string(),
        }
    }
}

/// Mean-field Gaussian over the unconstrained space.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub mu: Vec<f64>,
    /// Log standard deviations.
    pub omega: Vec<f64>,
}

impl VariationalPosterior {
    pub fn new(mu: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        if mu.len() != omega.len() {
            return Err(Error::contract("mu and omega lengths differ"));
        }
        if mu.iter().chain(&omega).any(|v| !v.is_finite()) {
            return Err(Error::domain("variational parameters must be finite"));
        }
        Ok(Self { mu, omega })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sd(&self) -> Vec<f64> {
        self.omega.iter().map(|w| w.exp()).collect()
    }

    /// Exact entropy of the Gaussian: `sum(omega) + d/2 (1 + ln 2 pi)`.
    pub fn entropy(&self) -> f64 {
        self.omega.iter().sum::<f64>() + 0.5 * self.dim() as f64 * (1.0 + (2.0 * PI).ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub seed: u64,
    pub max_iters: usize,
    /// Monte-Carlo draws per gradient step.
    pub mc_samples: usize,
    pub learning_rate: f64,
    /// Multiplicative step-size decay applied every 1000 iterations.
    pub lr_decay: f64,
    /// Number of ELBO evaluations per median window.
    pub convergence_window: usize,
    pub convergence_tol: f64,
    pub elbo_check_every: usize,
    pub elbo_eval_samples: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub init_sd: f64,
    pub init_omega: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iters: 20_000,
            mc_samples: 8,
            learning_rate: 0.05,
            lr_decay: 1.0,
            convergence_window: 10,
            convergence_tol: 1e-3,
            elbo_check_every: 100,
            elbo_eval_samples: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_sd: 0.1,
            init_omega: -1.0,
        }
    }
}

impl FitConfig {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.max_iters > 0, "max_iters must be > 0");
        need(self.mc_samples >= 1, "mc_samples must be >= 1");
        need(self.learning_rate > 0.0, "learning_rate must be > 0");
        need(self.lr_decay > 0.0 && self.lr_decay <= 1.0, "lr_decay must be in (0, 1]");
        need(self.convergence_window > 0, "convergence_window must be > 0");
        need(self.convergence_tol > 0.0, "convergence_tol must be > 0");
        need(self.elbo_check_every > 0, "elbo_check_every must be > 0");
        need(self.elbo_eval_samples >= 1, "elbo_eval_samples must be >= 1");
        need((0.0..1.0).contains(&self.beta1), "beta1 must be in [0, 1)");
        need((0.0..1.0).contains(&self.beta2), "beta2 must be in [0, 1)");
        need(self.epsilon > 0.0, "epsilon must be > 0");
        need(self.init_sd >= 0.0, "init_sd must be >= 0");
        need(self.init_omega.is_finite(), "init_omega must be finite");
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboPoint {
    pub iteration: usize,
    pub elbo: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub posterior: VariationalPosterior,
    pub trace: Vec<ElboPoint>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    /// `iteration,elbo` CSV.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,elbo\n");
        for p in &self.trace {
            out.push_str(&format!("{},{}\n", p.iteration, p.elbo));
        }
        out
    }
}

struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(dim: usize, cfg: &FitConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One ascent step along `grad`.
    fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p += lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

/// Draws one sample `z = mu + sd * eps`, storing eps.
fn draw(posterior: &VariationalPosterior, rng: &mut ChaCha8Rng, eps: &mut [f64], z: &mut [f64]) {
    for k in 0..eps.len() {
        let e: f64 = StandardNormal.sample(rng);
        eps[k] = e;
        z[k] = posterior.mu[k] + posterior.omega[k].exp() * e;
    }
}

fn check_dims(model: &dyn LogDensity, space: &ParameterSpace, posterior: &VariationalPosterior) -> Result<()> {
    if model.dim() != space.total_dim() || posterior.dim() != space.total_dim() {
        return Err(Error::contract(format!(
            "dimension mismatch: model {}, space {}, posterior {}",
            model.dim(),
            space.total_dim(),
            posterior.dim()
        )));
    }
    Ok(())
}

struct Estimator<'a> {
    model: &'a dyn LogDensity,
    space: &'a ParameterSpace,
    theta: Vec<f64>,
    z: Vec<f64>,
    grad: Vec<f64>,
    eps: Vec<f64>,
}

impl<'a> Estimator<'a> {
    fn new(model: &'a dyn LogDensity, space: &'a ParameterSpace) -> Self {
        let d = space.total_dim();
        Self {
            model,
            space,
            theta: vec![0.0; d],
            z: vec![0.0; d],
            grad: vec![0.0; d],
            eps: vec![0.0; d],
        }
    }

    fn eval(&mut self, iteration: usize) -> Result<f64> {
        let v = self
            .space
            .log_joint_with(self.model, &self.z, &mut self.grad, &mut self.theta);
        let bad_value = !v.is_finite();
        if bad_value || self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: if bad_value { "log joint" } else { "gradient" },
                iteration,
                block: self.space.offending_block(&self.z, &self.grad),
            });
        }
        Ok(v)
    }

    fn elbo(&mut self, posterior: &VariationalPosterior, n: usize, rng: &mut ChaCha8Rng, iteration: usize) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..n {
            draw(posterior, rng, &mut self.eps, &mut self.z);
            total += self.eval(iteration)?;
        }
        Ok(total / n as f64 + posterior.entropy())
    }

    /// Writes `[d/dmu, d/domega]` into `out` (length `2 d`).
    fn gradient(
        &mut self,
        posterior: &VariationalPosterior,
        n: usize,
        rng: &mut ChaCha8Rng,
        iteration: usize,
        out: &mut [f64],
    ) -> Result<()> {
        let d = posterior.dim();
        out.fill(0.0);
        for _ in 0..n {
            draw(posterior, rng, &mut self.eps, &mut self.z);
            self.eval(iteration)?;
            let (g_mu, g_omega) = out.split_at_mut(d);
            for k in 0..d {
                let g = self.grad[k];
                g_mu[k] += g;
                g_omega[k] += g * posterior.omega[k].exp() * self.eps[k];
            }
        }
        let inv = 1.0 / n as f64;
        let (g_mu, g_omega) = out.split_at_mut(d);
        g_mu.iter_mut().for_each(|g| *g *= inv);
        // Entropy contributes exactly 1 per omega coordinate.
        g_omega.iter_mut().for_each(|g| *g = *g * inv + 1.0);
        Ok(())
    }
}

/// Monte-Carlo ELBO estimate; deterministic given `seed`.
pub fn elbo(
    model: &dyn LogDensity,
    space: &ParameterSpace,
    posterior: &VariationalPosterior,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    check_dims(model, space, posterior)?;
    if n_samples == 0 {
        return Err(Error::contract("n_samples must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Estimator::new(model, space).elbo(posterior, n_samples, &mut rng, 0)
}

/// Reparameterization gradient of [`elbo`] with respect to `(mu, omega)`,
/// concatenated. Uses the same draws as [`elbo`] for the same seed.
pub fn grad_estimate(
    model: &dyn LogDensity,
    space: &ParameterSpace,
    posterior: &VariationalPosterior,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_dims(model, space, posterior)?;
    if n_samples == 0 {
        return Err(Error::contract("n_samples must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; 2 * posterior.dim()];
    Estimator::new(model, space).gradient(posterior, n_samples, &mut rng, 0, &mut out)?;
    Ok(out)
}

/// Sums of the optimizer iterates in consecutive ELBO-check blocks, keeping
/// the most recent `keep` closed blocks plus the open one.
struct IterateBlocks {
    closed: std::collections::VecDeque<(Vec<f64>, usize)>,
    open: (Vec<f64>, usize),
    keep: usize,
}

impl IterateBlocks {
    fn new(dim: usize, keep: usize) -> Self {
        Self {
            closed: std::collections::VecDeque::with_capacity(keep + 1),
            open: (vec![0.0; dim], 0),
            keep,
        }
    }

    fn add(&mut self, params: &[f64]) {
        self.open.0.iter_mut().zip(params).for_each(|(s, p)| *s += p);
        self.open.1 += 1;
    }

    fn close(&mut self) {
        let dim = self.open.0.len();
        let block = std::mem::replace(&mut self.open, (vec![0.0; dim], 0));
        self.closed.push_back(block);
        if self.closed.len() > self.keep {
            self.closed.pop_front();
        }
    }

    /// Average iterate over the retained window.
    fn mean(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.open.0.len()];
        let mut n = 0;
        for (s, c) in self.closed.iter().chain(std::iter::once(&self.open)) {
            sum.iter_mut().zip(s).for_each(|(a, b)| *a += b);
            n += c;
        }
        sum.iter().map(|x| x / n as f64).collect()
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Maximizes the ELBO by stochastic gradient ascent.
///
/// Stops after `max_iters` iterations, or once the median of the last
/// `convergence_window` ELBO evaluations moves by less than
/// `convergence_tol` (relative) against the preceding window. All ELBO
/// checks reuse one fixed set of draws so successive values are comparable.
///
/// The returned posterior is the average of the iterates over the final
/// window (`convergence_window * elbo_check_every` steps), which removes the
/// step-to-step jitter of a constant-step optimizer.
pub fn fit(model: &dyn LogDensity, space: &ParameterSpace, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let d = space.total_dim();
    if model.dim() != d {
        return Err(Error::contract(format!(
            "model dimension {} does not match parameter space {}",
            model.dim(),
            d
        )));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(config.seed, 0));
    let mu: Vec<f64> = if config.init_sd > 0.0 {
        let init = Normal::new(0.0, config.init_sd).expect("validated init_sd");
        (0..d).map(|_| init.sample(&mut init_rng)).collect()
    } else {
        vec![0.0; d]
    };
    let mut posterior = VariationalPosterior {
        mu,
        omega: vec![config.init_omega; d],
    };

    let mut step_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(config.seed, 1));
    let elbo_seed = crate::derive_seed(config.seed, 2);
    let mut est = Estimator::new(model, space);
    let mut adam = Adam::new(2 * d, config);
    let mut grad = vec![0.0; 2 * d];
    let mut params = vec![0.0; 2 * d];
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let w = config.convergence_window;
    let mut converged = false;
    let mut iterations = 0;

    let mut blocks = IterateBlocks::new(2 * d, w);

    for iter in 1..=config.max_iters {
        iterations = iter;
        est.gradient(&posterior, config.mc_samples, &mut step_rng, iter, &mut grad)?;
        params[..d].copy_from_slice(&posterior.mu);
        params[d..].copy_from_slice(&posterior.omega);
        let lr = config.learning_rate * config.lr_decay.powi((iter / 1000) as i32);
        adam.ascend(&mut params, &grad, lr);
        posterior.mu.copy_from_slice(&params[..d]);
        posterior.omega.copy_from_slice(&params[d..]);
        blocks.add(&params);

        if iter % config.elbo_check_every == 0 {
            blocks.close();
            let mut rng = ChaCha8Rng::seed_from_u64(elbo_seed);
            let value = est.elbo(&posterior, config.elbo_eval_samples, &mut rng, iter)?;
            trace.push(ElboPoint { iteration: iter, elbo: value });
            history.push(value);
            let n = history.len();
            if n >= 2 * w {
                let cur = median(&history[n - w..]);
                let prev = median(&history[n - 2 * w..n - w]);
                let rel = (cur - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
                if rel < config.convergence_tol {
                    converged = true;
                    break;
                }
            }
        }
    }

    let averaged = blocks.mean();
    posterior.mu.copy_from_slice(&averaged[..d]);
    posterior.omega.copy_from_slice(&averaged[d..]);

    if posterior.mu.iter().chain(&posterior.omega).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "variational parameter",
            iteration: iterations,
            block: space.offending_block(&posterior.mu, &posterior.omega),
        });
    }

    Ok(FitResult {
        posterior,
        trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
pub(crate) mod test_models {
    use super::*;

    /// Independent Normal prior `N(0, prior_sd)` on a scalar with Normal
    /// observations of unit noise.
    pub struct Conjugate {
        pub prior_sd: f64,
        pub obs: Vec<f64>,
    }

    impl LogDensity for Conjugate {
        fn dim(&self) -> usize {
            1
        }

        fn log_density(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
            let t = theta[0];
            let s2 = self.prior_sd * self.prior_sd;
            let mut v = crate::kernels::normal_lpdf(t, 0.0, self.prior_sd);
            let mut g = -t / s2;
            for y in &self.obs {
                v += crate::kernels::normal_lpdf(*y, t, 1.0);
                g += y - t;
            }
            grad[0] = g;
            v
        }
    }

    /// `-|theta|^2 / 2` (unnormalized).
    pub struct Quadratic(pub usize);

    impl LogDensity for Quadratic {
        fn dim(&self) -> usize {
            self.0
        }

        fn log_density(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
            let mut v = 0.0;
            for (g, t) in grad.iter_mut().zip(theta) {
                v -= 0.5 * t * t;
                *g = -t;
            }
            v
        }
    }

    pub fn flat_space(d: usize) -> ParameterSpace {
        ParameterSpace::new(vec![ParameterBlock::new("theta", d, Constraint::Unconstrained)]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_models::*;
    use super::*;

    #[test]
    fn conjugate_posterior_is_recovered() {
        let model = Conjugate { prior_sd: 1.0, obs: vec![2.0] };
        let space = flat_space(1);
        let res = fit(&model, &space, &FitConfig { seed: 3, ..Default::default() }).unwrap();
        let mu = res.posterior.mu[0];
        let sd = res.posterior.omega[0].exp();
        assert!((mu - 1.0).abs() < 0.05, "mu {mu}");
        assert!((sd - 0.5f64.sqrt()).abs() < 0.05, "sd {sd}");
        assert!(res.trace.iter().all(|p| p.elbo.is_finite()));
    }

    #[test]
    fn prior_only_model_returns_prior() {
        let model = Conjugate { prior_sd: 0.8, obs: vec![] };
        let res = fit(&model, &flat_space(1), &FitConfig { seed: 11, ..Default::default() }).unwrap();
        assert!(res.posterior.mu[0].abs() < 0.05);
        assert!((res.posterior.omega[0].exp() - 0.8).abs() < 0.05);
    }

    #[test]
    fn entropy_closed_form() {
        let q = VariationalPosterior::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!((q.entropy() - (1.0 + (2.0 * PI).ln())).abs() < 1e-15);
    }

    #[test]
    fn collapsed_posterior_elbo_is_log_joint_plus_entropy() {
        let model = Quadratic(3);
        let space = flat_space(3);
        let mu = vec![0.3, -1.2, 0.7];
        let q = VariationalPosterior::new(mu.clone(), vec![-10.0; 3]).unwrap();
        let e = elbo(&model, &space, &q, 20, 5).unwrap();
        let lj = -0.5 * mu.iter().map(|m| m * m).sum::<f64>();
        assert!((e - (lj + q.entropy())).abs() < 1e-3);
    }

    #[test]
    fn single_draw_gradient_matches_hand_trace() {
        let model = Quadratic(1);
        let space = flat_space(1);
        let q = VariationalPosterior::new(vec![0.0], vec![0.0]).unwrap();
        let seed = 99;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let g = grad_estimate(&model, &space, &q, 1, seed).unwrap();
        // theta = mu + exp(omega) eps; d/dmu = -theta, d/domega = -theta exp(omega) eps + 1.
        assert!((g[0] - (-eps)).abs() < 1e-15);
        assert!((g[1] - (-eps * eps + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_crn_finite_difference_with_positive_block() {
        // Exponential(1) prior on a positive scalar plus a Normal location.
        struct M;
        impl LogDensity for M {
            fn dim(&self) -> usize {
                2
            }
            fn log_density(&self, t: &[f64], g: &mut [f64]) -> f64 {
                let v = crate::kernels::normal_lpdf(1.5, t[0], t[1]) + crate::kernels::exponential_lpdf(t[1], 1.0);
                let gn = crate::kernels::normal_lpdf_grad(1.5, t[0], t[1]);
                g[0] = gn.dloc;
                g[1] = gn.dscale - 1.0;
                v
            }
        }
        let space = ParameterSpace::new(vec![
            ParameterBlock::new("loc", 1, Constraint::Unconstrained),
            ParameterBlock::new("scale", 1, Constraint::Positive),
        ])
        .unwrap();
        let q = VariationalPosterior::new(vec![0.4, -0.2], vec![-0.7, -1.1]).unwrap();
        let g = grad_estimate(&M, &space, &q, 16, 8).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let mut up = q.clone();
            let mut dn = q.clone();
            if k < 2 {
                up.mu[k] += h;
                dn.mu[k] -= h;
            } else {
                up.omega[k - 2] += h;
                dn.omega[k - 2] -= h;
            }
            let fd = (elbo(&M, &space, &up, 16, 8).unwrap() - elbo(&M, &space, &dn, 16, 8).unwrap()) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "{k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn non_finite_log_joint_names_block() {
        struct Bad;
        impl LogDensity for Bad {
            fn dim(&self) -> usize {
                2
            }
            fn log_density(&self, _t: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 0.0;
                g[1] = f64::NAN;
                0.0
            }
        }
        let space = ParameterSpace::new(vec![
            ParameterBlock::new("a", 1, Constraint::Unconstrained),
            ParameterBlock::new("b", 1, Constraint::Unconstrained),
        ])
        .unwrap();
        match fit(&Bad, &space, &FitConfig::default()) {
            Err(Error::NonFinite { iteration, block, .. }) => {
                assert_eq!(iteration, 1);
                assert_eq!(block, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fit_is_bitwise_deterministic() {
        let model = Conjugate { prior_sd: 1.0, obs: vec![2.0, 0.5] };
        let cfg = FitConfig { seed: 21, max_iters: 700, ..Default::default() };
        let a = fit(&model, &flat_space(1), &cfg).unwrap();
        let b = fit(&model, &flat_space(1), &cfg).unwrap();
        assert_eq!(a.posterior, b.posterior);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn space_rejects_duplicate_names_and_locates_blocks() {
        let dup = ParameterSpace::new(vec![
            ParameterBlock::new("u", 2, Constraint::Unconstrained),
            ParameterBlock::new("u", 1, Constraint::Positive),
        ]);
        assert!(dup.is_err());
        let s = ParameterSpace::new(vec![
            ParameterBlock::new("u", 2, Constraint::Unconstrained),
            ParameterBlock::new("s", 3, Constraint::Positive),
        ])
        .unwrap();
        assert_eq!(s.total_dim(), 5);
        assert_eq!(s.block_name(1), "u");
        assert_eq!(s.block_name(2), "s");
        assert_eq!(s.range("s"), Some(2..5));
    }
}
