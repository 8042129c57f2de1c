//! Standard matrix completion model: `y_ij ~ Cauchy(u_i . v_j, lambda)` with
//! independent `Normal(0, sigma)` priors on every latent coordinate.
//!
//! Parameter layout is row-major `U` (I x K) followed by row-major `V` (J x K).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PropertyMatrix;
use crate::kernels::{cauchy_lpdf, cauchy_lpdf_grad, normal_lpdf};
use crate::vi::{self, Constraint, FitConfig, FitResult, LogDensity, ParameterBlock, ParameterSpace, VariationalPosterior};
use crate::{dot, Dense};

#[derive(Debug, Clone, PartialEq)]
pub struct SmcmConfig {
    pub k: usize,
    pub sigma_prior: f64,
    pub lambda_like: f64,
    pub fit: FitConfig,
}

impl Default for SmcmConfig {
    fn default() -> Self {
        Self {
            k: 4,
            sigma_prior: 0.8,
            lambda_like: 0.15,
            fit: FitConfig::default(),
        }
    }
}

impl SmcmConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.k < 1 {
            v.push("k must be >= 1".to_string());
        }
        if !(self.sigma_prior > 0.0) {
            v.push("sigma must be > 0".to_string());
        }
        if !(self.lambda_like > 0.0) {
            v.push("lambda must be > 0".to_string());
        }
        v.extend(self.fit.violations());
        v
    }
}

/// Point estimates of the latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactorSet {
    pub k: usize,
    /// Solute vectors, I x K.
    pub u: Dense,
    /// Solvent vectors, J x K.
    pub v: Dense,
}

impl LatentFactorSet {
    pub fn new(u: Dense, v: Dense) -> Result<Self> {
        if u.cols != v.cols {
            return Err(Error::contract(format!("latent widths differ: {} vs {}", u.cols, v.cols)));
        }
        if u.data.iter().chain(&v.data).any(|x| !x.is_finite()) {
            return Err(Error::domain("latent factors must be finite"));
        }
        Ok(Self { k: u.cols, u, v })
    }

    /// Reshapes a flat `U`-then-`V` vector.
    pub fn from_flat(theta: &[f64], n_solutes: usize, n_solvents: usize, k: usize) -> Result<Self> {
        if theta.len() < (n_solutes + n_solvents) * k {
            return Err(Error::contract("parameter vector too short for factor layout"));
        }
        let split = n_solutes * k;
        let u = Dense {
            rows: n_solutes,
            cols: k,
            data: theta[..split].to_vec(),
        };
        let v = Dense {
            rows: n_solvents,
            cols: k,
            data: theta[split..split + n_solvents * k].to_vec(),
        };
        Self::new(u, v)
    }

    pub fn n_solutes(&self) -> usize {
        self.u.rows
    }

    pub fn n_solvents(&self) -> usize {
        self.v.rows
    }
}

/// `u_i . v_j`.
pub fn predict(factors: &LatentFactorSet, i: usize, j: usize) -> Result<f64> {
    if i >= factors.n_solutes() || j >= factors.n_solvents() {
        return Err(Error::contract(format!(
            "cell ({i}, {j}) outside {}x{}",
            factors.n_solutes(),
            factors.n_solvents()
        )));
    }
    Ok(dot(factors.u.row(i), factors.v.row(j)))
}

/// Fills every cell with the model prediction, observed cells included.
pub fn complete_matrix(factors: &LatentFactorSet) -> Dense {
    let (rows, cols) = (factors.n_solutes(), factors.n_solvents());
    let mut out = Dense::zeros(rows, cols);
    if cols == 0 {
        return out;
    }
    out.data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        let u = factors.u.row(i);
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = dot(u, factors.v.row(j));
        }
    });
    out
}

/// Monte-Carlo average of `u_i . v_j` under the variational posterior
/// (alternative to the plug-in mean used by [`predict`]).
pub fn predict_posterior_average(
    posterior: &VariationalPosterior,
    n_solutes: usize,
    n_solvents: usize,
    k: usize,
    i: usize,
    j: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if i >= n_solutes || j >= n_solvents || posterior.dim() < (n_solutes + n_solvents) * k {
        return Err(Error::contract("cell or layout out of range"));
    }
    if samples == 0 {
        return Err(Error::contract("samples must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ui, vj) = (i * k, (n_solutes + j) * k);
    let mut total = 0.0;
    for _ in 0..samples {
        let mut s = 0.0;
        for c in 0..k {
            let draw = |idx: usize, rng: &mut ChaCha8Rng| {
                let e: f64 = StandardNormal.sample(rng);
                posterior.mu[idx] + posterior.omega[idx].exp() * e
            };
            s += draw(ui + c, &mut rng) * draw(vj + c, &mut rng);
        }
        total += s;
    }
    Ok(total / samples as f64)
}

/// Target density of the standard model over its `(I + J) K` parameters.
pub struct SmcmModel<'a> {
    data: &'a PropertyMatrix,
    k: usize,
    sigma: f64,
    lambda: f64,
}

impl<'a> SmcmModel<'a> {
    pub fn new(data: &'a PropertyMatrix, config: &SmcmConfig) -> Self {
        Self {
            data,
            k: config.k,
            sigma: config.sigma_prior,
            lambda: config.lambda_like,
        }
    }

    pub fn space(&self) -> ParameterSpace {
        ParameterSpace::new(vec![
            ParameterBlock::new("U", self.data.n_solutes() * self.k, Constraint::Unconstrained),
            ParameterBlock::new("V", self.data.n_solvents() * self.k, Constraint::Unconstrained),
        ])
        .expect("distinct block names")
    }
}

impl LogDensity for SmcmModel<'_> {
    fn dim(&self) -> usize {
        (self.data.n_solutes() + self.data.n_solvents()) * self.k
    }

    fn log_density(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.k;
        let s2 = self.sigma * self.sigma;
        let mut lp = 0.0;
        for (g, &t) in grad.iter_mut().zip(theta) {
            lp += normal_lpdf(t, 0.0, self.sigma);
            *g = -t / s2;
        }
        lp += likelihood(self.data, theta, grad, self.data.n_solutes() * k, k, self.lambda);
        lp
    }
}

/// Adds the Cauchy likelihood of every observed cell for factors stored at
/// `u_offset` / `v_offset` (U then V) and accumulates its gradient.
pub(crate) fn likelihood_at(
    data: &PropertyMatrix,
    theta: &[f64],
    grad: &mut [f64],
    u_offset: usize,
    v_offset: usize,
    k: usize,
    lambda: f64,
) -> f64 {
    let mut lp = 0.0;
    for e in data.entries() {
        let (ui, vj) = (u_offset + e.row * k, v_offset + e.col * k);
        let mean = dot(&theta[ui..ui + k], &theta[vj..vj + k]);
        lp += cauchy_lpdf(e.value, mean, lambda);
        let d = cauchy_lpdf_grad(e.value, mean, lambda).dloc;
        for c in 0..k {
            grad[ui + c] += d * theta[vj + c];
            grad[vj + c] += d * theta[ui + c];
        }
    }
    lp
}

fn likelihood(data: &PropertyMatrix, theta: &[f64], grad: &mut [f64], v_offset: usize, k: usize, lambda: f64) -> f64 {
    likelihood_at(data, theta, grad, 0, v_offset, k, lambda)
}

/// Log joint and its gradient at `theta` (no constrained blocks, so the
/// unconstrained and constrained densities coincide).
pub fn log_joint_smcm(theta: &[f64], data: &PropertyMatrix, config: &SmcmConfig) -> Result<(f64, Vec<f64>)> {
    let model = SmcmModel::new(data, config);
    if theta.len() != model.dim() {
        return Err(Error::contract(format!(
            "theta has length {}, expected (I + J) K = {}",
            theta.len(),
            model.dim()
        )));
    }
    let mut grad = vec![0.0; theta.len()];
    let v = model.log_density(theta, &mut grad);
    Ok((v, grad))
}

#[derive(Debug, Clone)]
pub struct SmcmFit {
    pub factors: LatentFactorSet,
    pub posterior: VariationalPosterior,
    pub result: FitResult,
}

pub fn fit_smcm(data: &PropertyMatrix, config: &SmcmConfig) -> Result<SmcmFit> {
    let problems = config.violations();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if data.is_empty() {
        return Err(Error::contract("cannot fit an empty matrix"));
    }
    let model = SmcmModel::new(data, config);
    let result = vi::fit(&model, &model.space(), &config.fit)?;
    let factors = LatentFactorSet::from_flat(&result.posterior.mu, data.n_solutes(), data.n_solvents(), config.k)?;
    Ok(SmcmFit {
        factors,
        posterior: result.posterior.clone(),
        result,
    })
}

/// JSON wire form of a factor set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorsFile {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub solutes: Vec<String>,
    pub solvents: Vec<String>,
}

impl FactorsFile {
    pub fn new(factors: &LatentFactorSet, solutes: &[String], solvents: &[String]) -> Self {
        Self {
            k: factors.k,
            u: factors.u.to_rows(),
            v: factors.v.to_rows(),
            solutes: solutes.to_vec(),
            solvents: solvents.to_vec(),
        }
    }

    pub fn factors(&self) -> Result<LatentFactorSet> {
        let u = dense_with_width(&self.u, self.k)?;
        let v = dense_with_width(&self.v, self.k)?;
        if u.rows != self.solutes.len() || v.rows != self.solvents.len() {
            return Err(Error::contract("factor rows do not match key lists"));
        }
        LatentFactorSet::new(u, v)
    }
}

pub(crate) fn dense_with_width(rows: &[Vec<f64>], k: usize) -> Result<Dense> {
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::contract(format!("expected rows of length {k}")));
    }
    Ok(Dense {
        rows: rows.len(),
        cols: k,
        data: rows.iter().flatten().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_matrix, ObservationRecord};
    use rand::Rng;
    use std::f64::consts::PI;

    fn grid(n: usize, m: usize, f: impl Fn(usize, usize) -> f64) -> PropertyMatrix {
        let recs: Vec<_> = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| ObservationRecord::new(format!("S{i}"), format!("W{j}"), f(i, j)))
            .collect();
        build_matrix(&recs).unwrap()
    }

    #[test]
    fn prior_only_log_joint_at_zero() {
        let empty = PropertyMatrix::from_parts(vec!["a".into(), "b".into()], vec!["x".into()], vec![]).unwrap();
        let cfg = SmcmConfig { k: 3, ..Default::default() };
        let (v, g) = log_joint_smcm(&[0.0; 9], &empty, &cfg).unwrap();
        let expected = 9.0 * -(0.8 * (2.0 * PI).sqrt()).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exact_fit_contributes_cauchy_mode() {
        let m = grid(1, 1, |_, _| 2.0);
        let cfg = SmcmConfig { k: 1, ..Default::default() };
        let theta = [1.0, 2.0];
        let (v, _) = log_joint_smcm(&theta, &m, &cfg).unwrap();
        let prior = normal_lpdf(1.0, 0.0, 0.8) + normal_lpdf(2.0, 0.0, 0.8);
        assert!((v - prior - (-(0.15 * PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let m = grid(2, 2, |_, _| 0.0);
        assert!(matches!(log_joint_smcm(&[0.0; 3], &m, &SmcmConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = grid(3, 3, |i, j| (i as f64 - j as f64) * 0.7 + 0.2);
        let cfg = SmcmConfig { k: 2, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-5;
        for _ in 0..20 {
            let theta: Vec<f64> = (0..12).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (_, g) = log_joint_smcm(&theta, &m, &cfg).unwrap();
            for k in 0..theta.len() {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (log_joint_smcm(&up, &m, &cfg).unwrap().0 - log_joint_smcm(&dn, &m, &cfg).unwrap().0) / (2.0 * h);
                assert!((g[k] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "coord {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn predict_and_complete() {
        let u = Dense::from_rows(&[vec![1.0, 2.0, 0.0, -1.0], vec![0.0; 4]]).unwrap();
        let v = Dense::from_rows(&[vec![0.5, 0.0, 1.0, 2.0]]).unwrap();
        let f = LatentFactorSet::new(u, v).unwrap();
        assert_eq!(predict(&f, 0, 0).unwrap(), -1.5);
        assert_eq!(predict(&f, 1, 0).unwrap(), 0.0);
        assert!(matches!(predict(&f, 2, 0), Err(Error::Contract(_))));

        let f = LatentFactorSet::new(
            Dense::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
            Dense::from_rows(&[vec![3.0], vec![4.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(complete_matrix(&f).to_rows(), vec![vec![3.0, 4.0], vec![6.0, 8.0]]);
        let z = LatentFactorSet::new(Dense::zeros(3, 2), Dense::zeros(2, 2)).unwrap();
        assert!(complete_matrix(&z).data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_matrix_fits_to_zero() {
        let m = grid(5, 5, |_, _| 0.0);
        let cfg = SmcmConfig {
            fit: FitConfig { seed: 1, ..Default::default() },
            ..Default::default()
        };
        let fit = fit_smcm(&m, &cfg).unwrap();
        let c = complete_matrix(&fit.factors);
        assert!(c.data.iter().all(|x| x.abs() < 0.05), "{:?}", c.data);
    }

    #[test]
    fn rank_one_observations_are_reproduced() {
        let a = [0.9, -0.6, 1.3];
        let b = [1.1, 0.4, -0.8];
        let m = grid(3, 3, |i, j| a[i] * b[j]);
        let cfg = SmcmConfig {
            k: 1,
            fit: FitConfig { seed: 2, ..Default::default() },
            ..Default::default()
        };
        let fit = fit_smcm(&m, &cfg).unwrap();
        for e in m.entries() {
            let p = predict(&fit.factors, e.row, e.col).unwrap();
            assert!((p - e.value).abs() < 0.15, "{} vs {}", p, e.value);
        }
    }

    #[test]
    fn posterior_average_tracks_plug_in_mean() {
        let post = VariationalPosterior::new(vec![1.0, 2.0], vec![-3.0, -3.0]).unwrap();
        let avg = predict_posterior_average(&post, 1, 1, 1, 0, 0, 4000, 1).unwrap();
        assert!((avg - 2.0).abs() < 0.01);
    }

    #[test]
    fn factors_file_round_trip() {
        let f = LatentFactorSet::new(
            Dense::from_rows(&[vec![0.1, 1.0 / 3.0]]).unwrap(),
            Dense::from_rows(&[vec![-2.5, 1e-17], vec![4.0, 5.0]]).unwrap(),
        )
        .unwrap();
        let file = FactorsFile::new(&f, &["s".into()], &["a".into(), "b".into()]);
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"K\":2"));
        let back: FactorsFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.factors().unwrap(), f);
    }

    proptest::proptest! {
        #[test]
        fn prediction_is_bilinear(
            u in proptest::collection::vec(-3.0f64..3.0, 4),
            v in proptest::collection::vec(-3.0f64..3.0, 4),
            c in proptest::sample::select(vec![0.5, 2.0, -3.0]),
        ) {
            let base = LatentFactorSet::new(Dense::from_rows(&[u.clone()]).unwrap(), Dense::from_rows(&[v.clone()]).unwrap()).unwrap();
            let scaled = LatentFactorSet::new(
                Dense::from_rows(&[u.iter().map(|x| c * x).collect()]).unwrap(),
                Dense::from_rows(&[v.iter().map(|x| x / c).collect()]).unwrap(),
            ).unwrap();
            let a = predict(&base, 0, 0).unwrap();
            let b = predict(&scaled, 0, 0).unwrap();
            let ulp = f64::EPSILON * u.iter().zip(&v).map(|(x, y)| (x * y).abs()).sum::<f64>().max(f64::MIN_POSITIVE);
            proptest::prop_assert!((a - b).abs() <= 4.0 * ulp, "{} vs {}", a, b);
        }
    }
}
