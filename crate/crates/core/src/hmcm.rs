//! Hierarchical matrix completion model.
//!
//! Each solute class `r` carries a latent vector `A_r` and each solvent class
//! `s` a vector `B_s`, both with `Normal(0, sigma_hp)` hyperpriors. Component
//! vectors are drawn around their class vector,
//! `u_ik ~ Cauchy(A_{r(i)k}, sigma_r)` and `v_jk ~ Cauchy(B_{s(j)k}, sigma_s)`,
//! with `sigma_r, sigma_s ~ Exponential(scale = eta)`. The likelihood is the
//! same Cauchy likelihood as the standard model.
//!
//! Layout of the unconstrained vector: `A`, `B`, `U`, `V` (all row-major,
//! width K), then `log sigma_r`, then `log sigma_s`.

use serde::{Deserialize, Serialize};

use crate::clustering::ClassAssignment;
use crate::error::{Error, Result};
use crate::ingest::PropertyMatrix;
use crate::kernels::{cauchy_lpdf, cauchy_lpdf_grad, exponential_lpdf, normal_lpdf};
use crate::smcm::{dense_with_width, likelihood_at, LatentFactorSet};
use crate::vi::{self, Constraint, FitConfig, FitResult, LogDensity, ParameterBlock, ParameterSpace, VariationalPosterior};
use crate::{dot, Dense};

#[derive(Debug, Clone, PartialEq)]
pub struct HmcmConfig {
    pub k: usize,
    pub sigma_hp: f64,
    pub lambda_like: f64,
    /// Scale (mean) of the exponential prior on class deviation scales.
    pub eta: f64,
    pub fit: FitConfig,
}

impl Default for HmcmConfig {
    fn default() -> Self {
        Self {
            k: 4,
            sigma_hp: 1.0,
            lambda_like: 0.15,
            eta: 1.0,
            fit: FitConfig::default(),
        }
    }
}

impl HmcmConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.k < 1 {
            v.push("k must be >= 1".to_string());
        }
        for (name, x) in [("sigma_hp", self.sigma_hp), ("lambda", self.lambda_like), ("eta", self.eta)] {
            if !(x > 0.0) {
                v.push(format!("{name} must be > 0"));
            }
        }
        v.extend(self.fit.violations());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalParams {
    pub k: usize,
    /// Solute-class vectors, R x K.
    pub a: Dense,
    /// Solvent-class vectors, S x K.
    pub b: Dense,
    pub sigma_r: Vec<f64>,
    pub sigma_s: Vec<f64>,
    pub u: Dense,
    pub v: Dense,
}

impl HierarchicalParams {
    pub fn factors(&self) -> LatentFactorSet {
        LatentFactorSet {
            k: self.k,
            u: self.u.clone(),
            v: self.v.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let k = self.k;
        if [&self.a, &self.b, &self.u, &self.v].iter().any(|m| m.cols != k) {
            return Err(Error::contract("latent blocks must all have width K"));
        }
        if self.sigma_r.len() != self.a.rows || self.sigma_s.len() != self.b.rows {
            return Err(Error::contract("one scale per class is required"));
        }
        if self.sigma_r.iter().chain(&self.sigma_s).any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::domain("class scales must be positive and finite"));
        }
        Ok(())
    }
}

struct Layout {
    k: usize,
    n_a: usize,
    n_b: usize,
    n_u: usize,
    n_v: usize,
}

impl Layout {
    fn new(data: &PropertyMatrix, solutes: &ClassAssignment, solvents: &ClassAssignment, k: usize) -> Self {
        Self {
            k,
            n_a: solutes.n_classes,
            n_b: solvents.n_classes,
            n_u: data.n_solutes(),
            n_v: data.n_solvents(),
        }
    }

    fn a(&self) -> usize {
        0
    }
    fn b(&self) -> usize {
        self.n_a * self.k
    }
    fn u(&self) -> usize {
        self.b() + self.n_b * self.k
    }
    fn v(&self) -> usize {
        self.u() + self.n_u * self.k
    }
    fn sigma_r(&self) -> usize {
        self.v() + self.n_v * self.k
    }
    fn sigma_s(&self) -> usize {
        self.sigma_r() + self.n_a
    }
    fn dim(&self) -> usize {
        self.sigma_s() + self.n_b
    }
}

/// Target density of the hierarchical model over the constrained parameters.
pub struct HmcmModel<'a> {
    data: &'a PropertyMatrix,
    solutes: &'a ClassAssignment,
    solvents: &'a ClassAssignment,
    layout: Layout,
    sigma_hp: f64,
    lambda: f64,
    eta: f64,
}

impl<'a> HmcmModel<'a> {
    pub fn new(
        data: &'a PropertyMatrix,
        solutes: &'a ClassAssignment,
        solvents: &'a ClassAssignment,
        config: &HmcmConfig,
    ) -> Result<Self> {
        if solutes.labels.len() != data.n_solutes() || solvents.labels.len() != data.n_solvents() {
            return Err(Error::contract(format!(
                "class assignments cover {}x{} components, matrix is {}x{}",
                solutes.labels.len(),
                solvents.labels.len(),
                data.n_solutes(),
                data.n_solvents()
            )));
        }
        for (which, a) in [("solute", solutes), ("solvent", solvents)] {
            if let Some(&l) = a.labels.iter().find(|&&l| l >= a.n_classes) {
                return Err(Error::contract(format!("{which} class label {l} >= {}", a.n_classes)));
            }
        }
        Ok(Self {
            data,
            solutes,
            solvents,
            layout: Layout::new(data, solutes, solvents, config.k),
            sigma_hp: config.sigma_hp,
            lambda: config.lambda_like,
            eta: config.eta,
        })
    }

    pub fn space(&self) -> ParameterSpace {
        let l = &self.layout;
        ParameterSpace::new(vec![
            ParameterBlock::new("A", l.n_a * l.k, Constraint::Unconstrained),
            ParameterBlock::new("B", l.n_b * l.k, Constraint::Unconstrained),
            ParameterBlock::new("U", l.n_u * l.k, Constraint::Unconstrained),
            ParameterBlock::new("V", l.n_v * l.k, Constraint::Unconstrained),
            ParameterBlock::new("sigma_r", l.n_a, Constraint::Positive),
            ParameterBlock::new("sigma_s", l.n_b, Constraint::Positive),
        ])
        .expect("distinct block names")
    }

    fn params(&self, theta: &[f64]) -> HierarchicalParams {
        let l = &self.layout;
        let block = |off: usize, rows: usize| Dense {
            rows,
            cols: l.k,
            data: theta[off..off + rows * l.k].to_vec(),
        };
        HierarchicalParams {
            k: l.k,
            a: block(l.a(), l.n_a),
            b: block(l.b(), l.n_b),
            u: block(l.u(), l.n_u),
            v: block(l.v(), l.n_v),
            sigma_r: theta[l.sigma_r()..l.sigma_r() + l.n_a].to_vec(),
            sigma_s: theta[l.sigma_s()..l.sigma_s() + l.n_b].to_vec(),
        }
    }
}

/// Cauchy class priors of one axis: members at `member_off`, class vectors
/// at `class_off`, class scales at `scale_off`.
fn class_prior(
    labels: &[usize],
    k: usize,
    member_off: usize,
    class_off: usize,
    scale_off: usize,
    theta: &[f64],
    grad: &mut [f64],
) -> f64 {
    let mut lp = 0.0;
    for (i, &r) in labels.iter().enumerate() {
        let scale = theta[scale_off + r];
        for c in 0..k {
            let (x, loc) = (member_off + i * k + c, class_off + r * k + c);
            lp += cauchy_lpdf(theta[x], theta[loc], scale);
            let g = cauchy_lpdf_grad(theta[x], theta[loc], scale);
            grad[x] += g.dx;
            grad[loc] += g.dloc;
            grad[scale_off + r] += g.dscale;
        }
    }
    lp
}

impl LogDensity for HmcmModel<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        let k = l.k;
        grad.fill(0.0);
        let mut lp = 0.0;

        let hp2 = self.sigma_hp * self.sigma_hp;
        for idx in l.a()..l.u() {
            lp += normal_lpdf(theta[idx], 0.0, self.sigma_hp);
            grad[idx] = -theta[idx] / hp2;
        }

        lp += class_prior(&self.solutes.labels, k, l.u(), l.a(), l.sigma_r(), theta, grad);
        lp += class_prior(&self.solvents.labels, k, l.v(), l.b(), l.sigma_s(), theta, grad);

        for idx in l.sigma_r()..l.dim() {
            lp += exponential_lpdf(theta[idx], self.eta);
            grad[idx] -= 1.0 / self.eta;
        }

        lp + likelihood_at(self.data, theta, grad, l.u(), l.v(), k, self.lambda)
    }
}

/// Log joint over the unconstrained vector (log-Jacobian of the scale
/// transform included) and its gradient.
pub fn log_joint_hmcm(
    theta: &[f64],
    data: &PropertyMatrix,
    solute_classes: &ClassAssignment,
    solvent_classes: &ClassAssignment,
    config: &HmcmConfig,
) -> Result<(f64, Vec<f64>)> {
    let model = HmcmModel::new(data, solute_classes, solvent_classes, config)?;
    if theta.len() != model.dim() {
        return Err(Error::contract(format!(
            "theta has length {}, expected {}",
            theta.len(),
            model.dim()
        )));
    }
    let mut grad = vec![0.0; theta.len()];
    let v = model.space().log_joint(&model, theta, &mut grad);
    Ok((v, grad))
}

#[derive(Debug, Clone)]
pub struct HmcmFit {
    pub params: HierarchicalParams,
    pub posterior: VariationalPosterior,
    pub result: FitResult,
}

pub fn fit_hmcm(
    data: &PropertyMatrix,
    solute_classes: &ClassAssignment,
    solvent_classes: &ClassAssignment,
    config: &HmcmConfig,
) -> Result<HmcmFit> {
    let problems = config.violations();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if data.is_empty() {
        return Err(Error::contract("cannot fit an empty matrix"));
    }
    let model = HmcmModel::new(data, solute_classes, solvent_classes, config)?;
    let space = model.space();
    let result = vi::fit(&model, &space, &config.fit)?;
    let params = model.params(&space.constrain(&result.posterior.mu));
    params.validate()?;
    Ok(HmcmFit {
        params,
        posterior: result.posterior.clone(),
        result,
    })
}

/// `u_i . v_j`; class vectors play no part for known components.
pub fn predict_hmcm(params: &HierarchicalParams, i: usize, j: usize) -> Result<f64> {
    crate::smcm::predict(&params.factors(), i, j)
}

/// Prediction for a solute absent from training, standing in the class
/// vector `A_r` for its latent vector.
pub fn predict_cold_solute(params: &HierarchicalParams, r: usize, solvent_factors: &[f64]) -> Result<f64> {
    if r >= params.a.rows {
        return Err(Error::contract(format!("solute class {r} >= {}", params.a.rows)));
    }
    if solvent_factors.len() != params.k {
        return Err(Error::contract("counterpart factor length differs from K"));
    }
    Ok(dot(params.a.row(r), solvent_factors))
}

/// Prediction for a solvent absent from training, using `B_s`.
pub fn predict_cold_solvent(params: &HierarchicalParams, s: usize, solute_factors: &[f64]) -> Result<f64> {
    if s >= params.b.rows {
        return Err(Error::contract(format!("solvent class {s} >= {}", params.b.rows)));
    }
    if solute_factors.len() != params.k {
        return Err(Error::contract("counterpart factor length differs from K"));
    }
    Ok(dot(solute_factors, params.b.row(s)))
}

/// JSON wire form of fitted hierarchical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub sigma_r: Vec<f64>,
    pub sigma_s: Vec<f64>,
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub solutes: Vec<String>,
    pub solvents: Vec<String>,
    pub solute_classes: Vec<usize>,
    pub solvent_classes: Vec<usize>,
}

impl ParamsFile {
    pub fn new(
        params: &HierarchicalParams,
        solutes: &[String],
        solvents: &[String],
        solute_classes: &ClassAssignment,
        solvent_classes: &ClassAssignment,
    ) -> Self {
        Self {
            k: params.k,
            a: params.a.to_rows(),
            b: params.b.to_rows(),
            sigma_r: params.sigma_r.clone(),
            sigma_s: params.sigma_s.clone(),
            u: params.u.to_rows(),
            v: params.v.to_rows(),
            solutes: solutes.to_vec(),
            solvents: solvents.to_vec(),
            solute_classes: solute_classes.labels.clone(),
            solvent_classes: solvent_classes.labels.clone(),
        }
    }

    pub fn params(&self) -> Result<HierarchicalParams> {
        let p = HierarchicalParams {
            k: self.k,
            a: dense_with_width(&self.a, self.k)?,
            b: dense_with_width(&self.b, self.k)?,
            sigma_r: self.sigma_r.clone(),
            sigma_s: self.sigma_s.clone(),
            u: dense_with_width(&self.u, self.k)?,
            v: dense_with_width(&self.v, self.k)?,
        };
        p.validate()?;
        if p.u.rows != self.solutes.len()
            || p.v.rows != self.solvents.len()
            || self.solute_classes.len() != self.solutes.len()
            || self.solvent_classes.len() != self.solvents.len()
        {
            return Err(Error::contract("parameter rows do not match key or class lists"));
        }
        if self.solute_classes.iter().any(|&r| r >= p.a.rows) || self.solvent_classes.iter().any(|&s| s >= p.b.rows) {
            return Err(Error::contract("class label out of range in params file"));
        }
        Ok(p)
    }
}
