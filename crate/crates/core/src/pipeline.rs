//! The four-stage pipeline: standard model, completion, clustering of both
//! axes, hierarchical refit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{self, ClassAssignment, ClassFile, LinkageFile, LinkageTree};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::hmcm::{self, HmcmFit, ParamsFile};
use crate::ingest::{self, PropertyMatrix};
use crate::io::{self, DenseFile};
use crate::smcm::{self, FactorsFile, SmcmFit};
use crate::Dense;

#[derive(Debug, Clone)]
pub struct PipelineFit {
    pub smcm: SmcmFit,
    pub completed: Dense,
    pub solute_tree: LinkageTree,
    pub solvent_tree: LinkageTree,
    pub solute_classes: ClassAssignment,
    pub solvent_classes: ClassAssignment,
    pub hmcm: HmcmFit,
}

/// Class count actually used: the configured count, capped at the number
/// of components.
pub fn effective_classes(requested: usize, n_leaves: usize) -> usize {
    requested.clamp(1, n_leaves.max(1))
}

/// Runs steps 1-4 on a prepared matrix.
pub fn fit_pipeline(matrix: &PropertyMatrix, cfg: &PipelineConfig, seed: u64) -> Result<PipelineFit> {
    let smcm = smcm::fit_smcm(matrix, &cfg.smcm(cfg.smcm_seed(seed)))?;
    let completed = smcm::complete_matrix(&smcm.factors);
    let solute_tree = clustering::hac_complete(&clustering::row_profiles(&completed))?;
    let solvent_tree = clustering::hac_complete(&clustering::col_profiles(&completed))?;
    let solute_classes = clustering::cut_tree(
        &solute_tree,
        effective_classes(cfg.n_solute_classes, matrix.n_solutes()),
    )?;
    let solvent_classes = clustering::cut_tree(
        &solvent_tree,
        effective_classes(cfg.n_solvent_classes, matrix.n_solvents()),
    )?;
    let hmcm = hmcm::fit_hmcm(matrix, &solute_classes, &solvent_classes, &cfg.hmcm(cfg.hmcm_seed(seed)))?;
    Ok(PipelineFit {
        smcm,
        completed,
        solute_tree,
        solvent_tree,
        solute_classes,
        solvent_classes,
        hmcm,
    })
}

pub const ARTIFACTS: [&str; 8] = [
    "matrix.json",
    "smcm_factors.json",
    "completed.json",
    "solute_linkage.json",
    "solvent_linkage.json",
    "solute_classes.json",
    "solvent_classes.json",
    "hmcm_params.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: String,
    pub base_seed: u64,
    pub smcm_seed: u64,
    pub hmcm_seed: u64,
    pub stages: Vec<StageRecord>,
    pub failed_stage: Option<String>,
}

struct Runner<'a> {
    dir: &'a Path,
    manifest: Manifest,
}

impl Runner<'_> {
    fn record<T: Serialize>(&mut self, stage: &str, artifact: &str, value: &T) -> Result<()> {
        let path = self.dir.join(artifact);
        io::write_json(&path, value)?;
        self.manifest.stages.push(StageRecord {
            stage: stage.to_string(),
            status: "ok".to_string(),
            artifact: Some(artifact.to_string()),
            sha256: Some(io::sha256_file(&path)?),
            error: None,
        });
        Ok(())
    }

    fn fail(&mut self, stage: &str, err: &Error) -> Result<()> {
        self.manifest.stages.push(StageRecord {
            stage: stage.to_string(),
            status: "failed".to_string(),
            artifact: None,
            sha256: None,
            error: Some(err.to_string()),
        });
        self.manifest.failed_stage = Some(stage.to_string());
        self.finish()
    }

    fn finish(&self) -> Result<()> {
        io::write_json(&self.dir.join("manifest.json"), &self.manifest)
    }
}

/// Executes every stage on the CSV at `input`, writing artifacts and a
/// manifest into `out_dir`. On failure the manifest names the failed stage
/// and the error is returned.
pub fn run_pipeline(cfg: &PipelineConfig, input: &Path, out_dir: &Path) -> Result<Manifest> {
    if !input.is_file() {
        return Err(Error::Usage(format!("input file not found: {}", input.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let seed = cfg.seed;
    let mut run = Runner {
        dir: out_dir,
        manifest: Manifest {
            config_hash: cfg.hash(),
            config: cfg.canonical(),
            base_seed: seed,
            smcm_seed: cfg.smcm_seed(seed),
            hmcm_seed: cfg.hmcm_seed(seed),
            stages: Vec::new(),
            failed_stage: None,
        },
    };

    macro_rules! stage {
        ($name:expr, $body:expr) => {
            match $body {
                Ok(v) => v,
                Err(e) => {
                    run.fail($name, &e)?;
                    return Err(e);
                }
            }
        };
    }

    let matrix = stage!("ingest", {
        let text = io::read_text(input)?;
        ingest::parse_observations(text.as_bytes())
            .and_then(|records| ingest::preprocess(records, cfg.min_systems))
            .and_then(|(m, outcome)| {
                log::info!(
                    "ingest: {} solutes x {} solvents, {} entries (occupancy {:.4}); dropped {} solutes, {} solvents",
                    m.n_solutes(),
                    m.n_solvents(),
                    m.len(),
                    m.occupancy(),
                    outcome.removed_solutes.len(),
                    outcome.removed_solvents.len()
                );
                if m.is_empty() {
                    Err(Error::contract("no observations survive preprocessing"))
                } else {
                    Ok(m)
                }
            })
    });
    run.record("ingest", ARTIFACTS[0], &matrix.to_file())?;
    let (solutes, solvents) = (matrix.solutes().to_vec(), matrix.solvents().to_vec());

    let smcm_fit = stage!("fit-smcm", smcm::fit_smcm(&matrix, &cfg.smcm(cfg.smcm_seed(seed))));
    log::info!(
        "fit-smcm: {} iterations, converged = {}",
        smcm_fit.result.iterations,
        smcm_fit.result.converged
    );
    run.record("fit-smcm", ARTIFACTS[1], &FactorsFile::new(&smcm_fit.factors, &solutes, &solvents))?;

    let completed = smcm::complete_matrix(&smcm_fit.factors);
    run.record("complete", ARTIFACTS[2], &DenseFile::new(&completed, &solutes, &solvents))?;

    let solute_tree = stage!("cluster-rows", clustering::hac_complete(&clustering::row_profiles(&completed)));
    run.record("cluster-rows", ARTIFACTS[3], &LinkageFile::new(&solute_tree, Some(solutes.clone())))?;
    let solvent_tree = stage!("cluster-cols", clustering::hac_complete(&clustering::col_profiles(&completed)));
    run.record("cluster-cols", ARTIFACTS[4], &LinkageFile::new(&solvent_tree, Some(solvents.clone())))?;

    let solute_classes = stage!(
        "cut-rows",
        clustering::cut_tree(&solute_tree, effective_classes(cfg.n_solute_classes, solutes.len()))
    );
    run.record("cut-rows", ARTIFACTS[5], &ClassFile::new(&solute_classes, solutes.clone()))?;
    let solvent_classes = stage!(
        "cut-cols",
        clustering::cut_tree(&solvent_tree, effective_classes(cfg.n_solvent_classes, solvents.len()))
    );
    run.record("cut-cols", ARTIFACTS[6], &ClassFile::new(&solvent_classes, solvents.clone()))?;

    let hmcm_fit = stage!(
        "fit-hmcm",
        hmcm::fit_hmcm(&matrix, &solute_classes, &solvent_classes, &cfg.hmcm(cfg.hmcm_seed(seed)))
    );
    log::info!(
        "fit-hmcm: {} iterations, converged = {}",
        hmcm_fit.result.iterations,
        hmcm_fit.result.converged
    );
    run.record(
        "fit-hmcm",
        ARTIFACTS[7],
        &ParamsFile::new(&hmcm_fit.params, &solutes, &solvents, &solute_classes, &solvent_classes),
    )?;

    run.finish()?;
    Ok(run.manifest)
}

pub fn artifact_paths(out_dir: &Path) -> Vec<PathBuf> {
    ARTIFACTS.iter().map(|a| out_dir.join(a)).collect()
}
