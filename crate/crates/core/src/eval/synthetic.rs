use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ObservationRecord;
use crate::{dot, Dense};

const MASK_ATTEMPTS: usize = 100;

/// Parameters of a clustered low-rank corpus with Cauchy observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_solutes: usize,
    pub n_solvents: usize,
    pub k: usize,
    pub n_solute_classes: usize,
    pub n_solvent_classes: usize,
    /// Standard deviation of component vectors around their class vector.
    pub class_spread: f64,
    /// Scale of the Cauchy noise added to every observation.
    pub noise_scale: f64,
    /// Probability that a cell is observed.
    pub occupancy: f64,
    pub seed: u64,
    /// If set, the last solute is observed in exactly this many solvents.
    #[serde(default)]
    pub rare_solute_observations: Option<usize>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_solutes: 30,
            n_solvents: 30,
            k: 4,
            n_solute_classes: 4,
            n_solvent_classes: 4,
            class_spread: 0.2,
            noise_scale: 0.05,
            occupancy: 0.3,
            seed: 0,
            rare_solute_observations: None,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_solutes < 2 || self.n_solvents < 2 {
            errs.push("at least two solutes and two solvents are required".to_string());
        }
        if self.k < 1 {
            errs.push("k must be >= 1".to_string());
        }
        if self.n_solute_classes < 1 || self.n_solute_classes > self.n_solutes {
            errs.push("n_solute_classes must be in [1, n_solutes]".to_string());
        }
        if self.n_solvent_classes < 1 || self.n_solvent_classes > self.n_solvents {
            errs.push("n_solvent_classes must be in [1, n_solvents]".to_string());
        }
        if !(self.class_spread >= 0.0) {
            errs.push("class_spread must be >= 0".to_string());
        }
        if !(self.noise_scale >= 0.0) {
            errs.push("noise_scale must be >= 0".to_string());
        }
        if !(self.occupancy > 0.0 && self.occupancy <= 1.0) {
            errs.push("occupancy must be in (0, 1]".to_string());
        }
        if let Some(m) = self.rare_solute_observations {
            if m < 2 || m > self.n_solvents {
                errs.push("rare_solute_observations must be in [2, n_solvents]".to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<ObservationRecord>,
    /// Noise-free `U V^T`.
    pub truth: Dense,
    pub solute_labels: Vec<usize>,
    pub solvent_labels: Vec<usize>,
    pub u: Dense,
    pub v: Dense,
    pub a: Dense,
    pub b: Dense,
    pub observed: Vec<Vec<bool>>,
    pub solute_keys: Vec<String>,
    pub solvent_keys: Vec<String>,
    pub rare_solute: Option<usize>,
}

fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Dense {
    Dense {
        rows,
        cols,
        data: (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect(),
    }
}

/// Balanced labels in random order.
fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..n).map(|i| i % classes).collect();
    l.shuffle(rng);
    l
}

fn members(rng: &mut ChaCha8Rng, centers: &Dense, labels: &[usize], spread: f64) -> Dense {
    let k = centers.cols;
    let mut out = Dense::zeros(labels.len(), k);
    for (i, &r) in labels.iter().enumerate() {
        for c in 0..k {
            let e: f64 = StandardNormal.sample(rng);
            out.data[i * k + c] = centers.get(r, c) + spread * e;
        }
    }
    out
}

/// Draws a corpus; deterministic given `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let (ni, nj, k) = (spec.n_solutes, spec.n_solvents, spec.k);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let a = standard_normal(&mut rng, spec.n_solute_classes, k);
    let b = standard_normal(&mut rng, spec.n_solvent_classes, k);
    let solute_labels = labels(&mut rng, ni, spec.n_solute_classes);
    let solvent_labels = labels(&mut rng, nj, spec.n_solvent_classes);
    let u = members(&mut rng, &a, &solute_labels, spec.class_spread);
    let v = members(&mut rng, &b, &solvent_labels, spec.class_spread);

    let mut truth = Dense::zeros(ni, nj);
    for i in 0..ni {
        for j in 0..nj {
            truth.data[i * nj + j] = dot(u.row(i), v.row(j));
        }
    }

    let rare_solute = spec.rare_solute_observations.map(|_| ni - 1);
    let mut observed = None;
    for _ in 0..MASK_ATTEMPTS {
        let mut mask: Vec<Vec<bool>> = (0..ni)
            .map(|_| (0..nj).map(|_| rng.random::<f64>() < spec.occupancy).collect())
            .collect();
        if let (Some(r), Some(m)) = (rare_solute, spec.rare_solute_observations) {
            mask[r] = vec![false; nj];
            for j in index::sample(&mut rng, nj, m) {
                mask[r][j] = true;
            }
        }
        let rows_ok = mask.iter().all(|row| row.iter().filter(|&&x| x).count() >= 2);
        let cols_ok = (0..nj).all(|j| mask.iter().filter(|row| row[j]).count() >= 2);
        if rows_ok && cols_ok {
            observed = Some(mask);
            break;
        }
    }
    let observed = observed.ok_or_else(|| {
        Error::Generation(format!(
            "occupancy {} left a component with fewer than 2 observations in {MASK_ATTEMPTS} attempts",
            spec.occupancy
        ))
    })?;

    let noise = (spec.noise_scale > 0.0).then(|| Cauchy::new(0.0, spec.noise_scale).expect("positive scale"));
    let solute_keys: Vec<String> = (0..ni).map(|i| format!("S{i:03}")).collect();
    let solvent_keys: Vec<String> = (0..nj).map(|j| format!("W{j:03}")).collect();
    let mut records = Vec::new();
    for i in 0..ni {
        for j in 0..nj {
            if observed[i][j] {
                let eps = noise.as_ref().map_or(0.0, |c| c.sample(&mut rng));
                records.push(ObservationRecord::new(&solute_keys[i], &solvent_keys[j], truth.get(i, j) + eps));
            }
        }
    }

    Ok(SyntheticCorpus {
        records,
        truth,
        solute_labels,
        solvent_labels,
        u,
        v,
        a,
        b,
        observed,
        solute_keys,
        solvent_keys,
        rare_solute,
    })
}
