use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{EvalReport, Residual};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::hmcm;
use crate::ingest::{self, ObservationRecord, PropertyMatrix};
use crate::pipeline;
use crate::smcm;

/// Both models' predictions for one withheld cell, from the same training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    pub smcm: f64,
    pub hmcm: f64,
}

/// Trains on `train` and predicts cell (`row`, `col`) of it.
pub trait FoldPredictor: Sync {
    fn predict(&self, train: &PropertyMatrix, row: usize, col: usize, seed: u64) -> Result<FoldPrediction>;
}

/// The full four-stage pipeline.
#[derive(Debug, Clone)]
pub struct PipelinePredictor {
    pub config: PipelineConfig,
}

impl FoldPredictor for PipelinePredictor {
    fn predict(&self, train: &PropertyMatrix, row: usize, col: usize, seed: u64) -> Result<FoldPrediction> {
        let fit = pipeline::fit_pipeline(train, &self.config, seed)?;
        Ok(FoldPrediction {
            smcm: smcm::predict(&fit.smcm.factors, row, col)?,
            hmcm: hmcm::predict_hmcm(&fit.hmcm.params, row, col)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldOutcome {
    Predicted { smcm: f64, hmcm: f64 },
    Excluded { reason: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub seed: u64,
    pub solute: String,
    pub solvent: String,
    pub y_exp: f64,
    #[serde(flatten)]
    pub outcome: FoldOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub folds: Vec<FoldRecord>,
    /// `None` when no fold produced a prediction.
    pub hmcm: Option<EvalReport>,
    pub smcm: Option<EvalReport>,
    pub excluded: Vec<usize>,
    pub failed: Vec<usize>,
}

impl LooReport {
    /// Paired absolute errors `(smcm, hmcm)` of the predicted folds.
    pub fn paired_abs_errors(&self) -> Vec<(f64, f64)> {
        self.folds
            .iter()
            .filter_map(|f| match f.outcome {
                FoldOutcome::Predicted { smcm, hmcm } => Some(((f.y_exp - smcm).abs(), (f.y_exp - hmcm).abs())),
                _ => None,
            })
            .collect()
    }
}

fn run_fold(
    records: &[ObservationRecord],
    fold: usize,
    seed: u64,
    min_systems: usize,
    predictor: &dyn FoldPredictor,
) -> FoldOutcome {
    let held = &records[fold];
    let train: Vec<ObservationRecord> = records
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != fold)
        .map(|(_, r)| r.clone())
        .collect();
    let matrix = match ingest::preprocess(train, min_systems) {
        Ok((m, _)) => m,
        Err(e) => return FoldOutcome::Failed { error: e.to_string() },
    };
    let (row, col) = match (matrix.solute_row(&held.solute), matrix.solvent_col(&held.solvent)) {
        (Some(r), Some(c)) => (r, c),
        (r, _) => {
            let reason = if r.is_none() {
                format!("solute {} dropped by the minimum-systems filter", held.solute)
            } else {
                format!("solvent {} dropped by the minimum-systems filter", held.solvent)
            };
            return FoldOutcome::Excluded { reason };
        }
    };
    match predictor.predict(&matrix, row, col, seed) {
        Ok(p) => FoldOutcome::Predicted { smcm: p.smcm, hmcm: p.hmcm },
        Err(e) => FoldOutcome::Failed { error: e.to_string() },
    }
}

/// Leave-one-out over `records` (or the listed `subset` of their indices).
/// Folds run on `config.workers` threads; results are ordered by fold index
/// regardless of scheduling.
pub fn loo_run(
    records: &[ObservationRecord],
    config: &PipelineConfig,
    subset: Option<&[usize]>,
    predictor: &dyn FoldPredictor,
) -> Result<LooReport> {
    let folds: Vec<usize> = match subset {
        Some(s) => {
            if let Some(&bad) = s.iter().find(|&&i| i >= records.len()) {
                return Err(Error::contract(format!(
                    "fold index {bad} out of range for {} records",
                    records.len()
                )));
            }
            s.to_vec()
        }
        None => (0..records.len()).collect(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<FoldOutcome> = pool.install(|| {
        folds
            .par_iter()
            .map(|&f| run_fold(records, f, crate::derive_seed(config.seed, f as u64), config.min_systems, predictor))
            .collect()
    });

    let mut report = LooReport {
        folds: Vec::with_capacity(folds.len()),
        hmcm: None,
        smcm: None,
        excluded: Vec::new(),
        failed: Vec::new(),
    };
    let (mut res_s, mut res_h) = (Vec::new(), Vec::new());
    for (&fold, outcome) in folds.iter().zip(outcomes) {
        let r = &records[fold];
        match &outcome {
            FoldOutcome::Predicted { smcm, hmcm } => {
                res_s.push(Residual::new(&r.solute, &r.solvent, r.ln_gamma, *smcm));
                res_h.push(Residual::new(&r.solute, &r.solvent, r.ln_gamma, *hmcm));
            }
            FoldOutcome::Excluded { reason } => {
                log::warn!("fold {fold} excluded: {reason}");
                report.excluded.push(fold);
            }
            FoldOutcome::Failed { error } => {
                log::warn!("fold {fold} failed: {error}");
                report.failed.push(fold);
            }
        }
        report.folds.push(FoldRecord {
            fold,
            seed: crate::derive_seed(config.seed, fold as u64),
            solute: r.solute.clone(),
            solvent: r.solvent.clone(),
            y_exp: r.ln_gamma,
            outcome,
        });
    }
    if !res_h.is_empty() {
        report.smcm = Some(EvalReport::from_residuals(res_s)?);
        report.hmcm = Some(EvalReport::from_residuals(res_h)?);
    }
    if !report.failed.is_empty() {
        log::warn!("{} folds failed: {:?}", report.failed.len(), report.failed);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero;

    impl FoldPredictor for Zero {
        fn predict(&self, _: &PropertyMatrix, _: usize, _: usize, _: u64) -> Result<FoldPrediction> {
            Ok(FoldPrediction { smcm: 0.0, hmcm: 0.0 })
        }
    }

    /// Echoes the training set size so tests can see what each fold trained on.
    struct Size;

    impl FoldPredictor for Size {
        fn predict(&self, train: &PropertyMatrix, _: usize, _: usize, _: u64) -> Result<FoldPrediction> {
            Ok(FoldPrediction { smcm: train.len() as f64, hmcm: -(train.len() as f64) })
        }
    }

    struct Failing;

    impl FoldPredictor for Failing {
        fn predict(&self, _: &PropertyMatrix, row: usize, _: usize, _: u64) -> Result<FoldPrediction> {
            if row == 0 {
                Err(Error::domain("boom"))
            } else {
                Ok(FoldPrediction { smcm: 1.0, hmcm: 1.0 })
            }
        }
    }

    fn grid(n: usize, m: usize) -> Vec<ObservationRecord> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..m {
                out.push(ObservationRecord::new(format!("S{i}"), format!("W{j}"), (i * m + j) as f64 - 3.5));
            }
        }
        out
    }

    #[test]
    fn zero_predictor_gives_mean_abs_target() {
        let recs = grid(3, 3);
        let cfg = PipelineConfig::default();
        let rep = loo_run(&recs, &cfg, None, &Zero).unwrap();
        let expected = recs.iter().map(|r| r.ln_gamma.abs()).sum::<f64>() / 9.0;
        assert_eq!(rep.hmcm.as_ref().unwrap().mae, expected);
        assert_eq!(rep.smcm.as_ref().unwrap().mae, expected);
        assert_eq!(rep.folds.len(), 9);
    }

    #[test]
    fn two_by_two_with_min_one_has_four_residuals() {
        let recs = grid(2, 2);
        let cfg = PipelineConfig { min_systems: 1, ..Default::default() };
        let rep = loo_run(&recs, &cfg, None, &Size).unwrap();
        assert_eq!(rep.hmcm.as_ref().unwrap().n, 4);
        assert!(rep.folds.iter().all(|f| f.outcome == FoldOutcome::Predicted { smcm: 3.0, hmcm: -3.0 }));
    }

    #[test]
    fn two_by_two_with_default_filter_excludes_every_fold() {
        let recs = grid(2, 2);
        let rep = loo_run(&recs, &PipelineConfig::default(), None, &Zero).unwrap();
        assert_eq!(rep.excluded, vec![0, 1, 2, 3]);
        assert!(rep.hmcm.is_none());
        match &rep.folds[0].outcome {
            FoldOutcome::Excluded { reason } => assert!(reason.contains("S0") || reason.contains("W0")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failures_are_recorded_without_aborting() {
        let recs = grid(3, 3);
        let rep = loo_run(&recs, &PipelineConfig::default(), None, &Failing).unwrap();
        assert_eq!(rep.failed, vec![0, 1, 2]);
        assert_eq!(rep.hmcm.as_ref().unwrap().n, 6);
    }

    #[test]
    fn subset_order_and_worker_count_do_not_change_results() {
        let recs = grid(3, 4);
        let one = PipelineConfig::default();
        let many = PipelineConfig { workers: 4, ..one.clone() };
        let subset = [7, 2, 5];
        let a = loo_run(&recs, &one, Some(&subset), &Size).unwrap();
        let b = loo_run(&recs, &many, Some(&subset), &Size).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.folds.iter().map(|f| f.fold).collect::<Vec<_>>(), subset);
        assert!(loo_run(&recs, &one, Some(&[12]), &Zero).is_err());
    }
}
