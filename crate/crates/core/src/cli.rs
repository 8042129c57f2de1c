//! Command-line front end. Each stage is a subcommand reading and writing
//! JSON artifacts; `run` chains them all.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::clustering::{self, ClassFile, LinkageFile};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{self, PipelinePredictor, SyntheticSpec};
use crate::hmcm::{self, ParamsFile};
use crate::ingest::{self, MatrixFile, PropertyMatrix};
use crate::io::{self, DenseFile};
use crate::pipeline;
use crate::smcm::{self, FactorsFile};

#[derive(Debug, Parser)]
#[command(name = "classmc", version, about = "Hierarchical Bayesian matrix completion with class-informed priors")]
pub struct Cli {
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides the config file.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Key-value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more detail on standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, clean and filter an observation CSV into a matrix.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        min_systems: Option<usize>,
    },
    /// Fit the standard model.
    FitSmcm {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out_factors: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        fit: FitFlags,
    },
    /// Fill every cell from fitted factors.
    Complete {
        #[arg(long)]
        factors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete-linkage clustering of rows or columns of a completed matrix.
    Cluster {
        #[arg(long)]
        completed: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        out_linkage: PathBuf,
    },
    /// Cut a dendrogram into a fixed number of classes.
    Cut {
        #[arg(long)]
        linkage: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leaf order of a dendrogram, for display.
    Order {
        #[arg(long)]
        linkage: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the hierarchical model with fixed class assignments.
    FitHmcm {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        solute_classes: PathBuf,
        #[arg(long)]
        solvent_classes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        sigma_hp: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        fit: FitFlags,
    },
    /// Predict listed pairs from hierarchical parameters.
    Predict {
        #[arg(long)]
        params: PathBuf,
        /// CSV with `solute,solvent` and optional `solute_class,solvent_class` columns.
        #[arg(long)]
        pairs: PathBuf,
        /// Use class vectors for components absent from training.
        #[arg(long)]
        cold_class: bool,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-out evaluation of the whole pipeline.
    Loo {
        #[arg(long)]
        input: PathBuf,
        /// Half-open fold range `i..j`.
        #[arg(long, conflicts_with = "folds_list")]
        folds: Option<String>,
        /// File of whitespace- or comma-separated fold indices.
        #[arg(long)]
        folds_list: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a residual histogram CSV of the hierarchical model.
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        bin_width: f64,
        #[arg(long, default_value_t = 3.0)]
        half_range: f64,
    },
    /// Write a synthetic clustered corpus with known ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Ground truth (factors, labels, dense matrix) as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        n_solutes: usize,
        #[arg(long, default_value_t = 30)]
        n_solvents: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 4)]
        solute_classes: usize,
        #[arg(long, default_value_t = 4)]
        solvent_classes: usize,
        #[arg(long, default_value_t = 0.2)]
        class_spread: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0.3)]
        occupancy: f64,
        #[arg(long)]
        rare_observations: Option<usize>,
    },
    /// Run every stage and write all artifacts plus a manifest.
    Run {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Args)]
pub struct FitFlags {
    #[arg(long)]
    max_iters: Option<usize>,
    /// Write the ELBO trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OrderFile {
    order: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keys: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
struct TruthFile<'a> {
    spec: &'a SyntheticSpec,
    solutes: &'a [String],
    solvents: &'a [String],
    solute_labels: &'a [usize],
    solvent_labels: &'a [usize],
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
    rare_solute: Option<usize>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn base_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::Usage(format!("config file not found: {}", p.display())));
            }
            PipelineConfig::load(p)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn checked(cfg: PipelineConfig) -> Result<PipelineConfig> {
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(v))
    }
}

fn read_matrix(path: &Path) -> Result<PropertyMatrix> {
    PropertyMatrix::from_file(io::read_json::<MatrixFile>(path)?)
}

fn read_records(path: &Path) -> Result<Vec<ingest::ObservationRecord>> {
    if !path.is_file() {
        return Err(Error::Usage(format!("input file not found: {}", path.display())));
    }
    ingest::parse_observations(io::read_text(path)?.as_bytes())
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = base_config(cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build_global()
        .unwrap_or_else(|e| log::debug!("worker pool already set: {e}"));

    match &cli.command {
        Command::Ingest { input, output, min_systems } => {
            if let Some(m) = min_systems {
                cfg.min_systems = *m;
            }
            let cfg = checked(cfg)?;
            let (m, outcome) = ingest::preprocess(read_records(input)?, cfg.min_systems)?;
            log::info!(
                "{} solutes x {} solvents, {} entries, occupancy {:.4}",
                m.n_solutes(),
                m.n_solvents(),
                m.len(),
                m.occupancy()
            );
            if !outcome.removed_solutes.is_empty() || !outcome.removed_solvents.is_empty() {
                log::info!(
                    "dropped solutes {:?} and solvents {:?}",
                    outcome.removed_solutes,
                    outcome.removed_solvents
                );
            }
            io::write_json(output, &m.to_file())
        }
        Command::FitSmcm { matrix, out_factors, k, sigma, lambda, fit } => {
            set(&mut cfg.k, k);
            set(&mut cfg.sigma_prior, sigma);
            set(&mut cfg.lambda_like, lambda);
            set(&mut cfg.fit.max_iters, &fit.max_iters);
            let cfg = checked(cfg)?;
            let m = read_matrix(matrix)?;
            let result = smcm::fit_smcm(&m, &cfg.smcm(cfg.smcm_seed(cfg.seed)))?;
            log::info!("{} iterations, converged = {}", result.result.iterations, result.result.converged);
            if let Some(t) = &fit.trace {
                io::write_text(t, &result.result.trace_csv())?;
            }
            io::write_json(out_factors, &FactorsFile::new(&result.factors, m.solutes(), m.solvents()))
        }
        Command::Complete { factors, out } => {
            let file: FactorsFile = io::read_json(factors)?;
            let completed = smcm::complete_matrix(&file.factors()?);
            io::write_json(out, &DenseFile::new(&completed, &file.solutes, &file.solvents))
        }
        Command::Cluster { completed, axis, out_linkage } => {
            let file: DenseFile = io::read_json(completed)?;
            let dense = file.matrix()?;
            let (profiles, keys) = match axis {
                Axis::Rows => (clustering::row_profiles(&dense), file.solutes),
                Axis::Cols => (clustering::col_profiles(&dense), file.solvents),
            };
            let tree = clustering::hac_complete(&profiles)?;
            io::write_json(out_linkage, &LinkageFile::new(&tree, Some(keys)))
        }
        Command::Cut { linkage, classes, out } => {
            let file: LinkageFile = io::read_json(linkage)?;
            let assignment = clustering::cut_tree(&file.tree()?, *classes)?;
            io::write_json(out, &ClassFile::new(&assignment, file.keys.unwrap_or_default()))
        }
        Command::Order { linkage, out } => {
            let file: LinkageFile = io::read_json(linkage)?;
            let order = clustering::sorted_order(&file.tree()?);
            let keys = file.keys.map(|k| order.iter().map(|&i| k[i].clone()).collect());
            io::write_json(out, &OrderFile { order, keys })
        }
        Command::FitHmcm {
            matrix,
            solute_classes,
            solvent_classes,
            out,
            k,
            sigma_hp,
            eta,
            lambda,
            fit,
        } => {
            set(&mut cfg.k, k);
            set(&mut cfg.sigma_hp, sigma_hp);
            set(&mut cfg.eta, eta);
            set(&mut cfg.lambda_like, lambda);
            set(&mut cfg.fit.max_iters, &fit.max_iters);
            let cfg = checked(cfg)?;
            let m = read_matrix(matrix)?;
            let rows = io::read_json::<ClassFile>(solute_classes)?.aligned_to(m.solutes())?;
            let cols = io::read_json::<ClassFile>(solvent_classes)?.aligned_to(m.solvents())?;
            let result = hmcm::fit_hmcm(&m, &rows, &cols, &cfg.hmcm(cfg.hmcm_seed(cfg.seed)))?;
            log::info!("{} iterations, converged = {}", result.result.iterations, result.result.converged);
            if let Some(t) = &fit.trace {
                io::write_text(t, &result.result.trace_csv())?;
            }
            io::write_json(out, &ParamsFile::new(&result.params, m.solutes(), m.solvents(), &rows, &cols))
        }
        Command::Predict { params, pairs, cold_class, out } => {
            let file: ParamsFile = io::read_json(params)?;
            let text = predict_pairs(&file, &io::read_text(pairs)?, *cold_class)?;
            match out {
                Some(p) => io::write_text(p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Loo {
            input,
            folds,
            folds_list,
            out,
            histogram,
            bin_width,
            half_range,
        } => {
            let cfg = checked(cfg)?;
            let (m, _) = ingest::preprocess(read_records(input)?, cfg.min_systems)?;
            let records = m.records();
            let subset = match (folds, folds_list) {
                (Some(r), _) => Some(parse_range(r)?),
                (None, Some(p)) => Some(parse_list(&io::read_text(p)?)?),
                (None, None) => None,
            };
            log::info!(
                "{} folds over {} records with {} workers",
                subset.as_ref().map_or(records.len(), Vec::len),
                records.len(),
                cfg.workers
            );
            let report = eval::loo_run(&records, &cfg, subset.as_deref(), &PipelinePredictor { config: cfg.clone() })?;
            if let (Some(s), Some(h)) = (&report.smcm, &report.hmcm) {
                log::info!("sMCM mae {:.4} mse {:.4}; hMCM mae {:.4} mse {:.4}", s.mae, s.mse, h.mae, h.mse);
            }
            io::write_json(out, &report)?;
            if let (Some(path), Some(h)) = (histogram, &report.hmcm) {
                let hist = eval::histogram(&h.deltas(), *bin_width, (-half_range, *half_range))?;
                io::write_text(path, &hist.to_csv())?;
            }
            Ok(())
        }
        Command::Synth {
            out,
            truth,
            n_solutes,
            n_solvents,
            k,
            solute_classes,
            solvent_classes,
            class_spread,
            noise,
            occupancy,
            rare_observations,
        } => {
            let spec = SyntheticSpec {
                n_solutes: *n_solutes,
                n_solvents: *n_solvents,
                k: *k,
                n_solute_classes: *solute_classes,
                n_solvent_classes: *solvent_classes,
                class_spread: *class_spread,
                noise_scale: *noise,
                occupancy: *occupancy,
                seed: cfg.seed,
                rare_solute_observations: *rare_observations,
            };
            let corpus = eval::generate_synthetic(&spec)?;
            io::write_text(out, &ingest::write_observations(&corpus.records))?;
            if let Some(t) = truth {
                io::write_json(
                    t,
                    &TruthFile {
                        spec: &spec,
                        solutes: &corpus.solute_keys,
                        solvents: &corpus.solvent_keys,
                        solute_labels: &corpus.solute_labels,
                        solvent_labels: &corpus.solvent_labels,
                        u: corpus.u.to_rows(),
                        v: corpus.v.to_rows(),
                        truth: corpus.truth.to_rows(),
                        rare_solute: corpus.rare_solute,
                    },
                )?;
            }
            Ok(())
        }
        Command::Run { input, out_dir } => {
            if let Some(i) = input {
                cfg.input = Some(i.clone());
            }
            if let Some(o) = out_dir {
                cfg.output_dir = Some(o.clone());
            }
            let cfg = checked(cfg)?;
            let input = cfg
                .input
                .clone()
                .ok_or_else(|| Error::Usage("`run` needs --input or `input` in the config".into()))?;
            let out_dir = cfg
                .output_dir
                .clone()
                .ok_or_else(|| Error::Usage("`run` needs --out-dir or `output_dir` in the config".into()))?;
            let manifest = pipeline::run_pipeline(&cfg, &input, &out_dir)?;
            log::info!("wrote {} artifacts to {}", manifest.stages.len(), out_dir.display());
            Ok(())
        }
    }
}

fn set<T: Copy>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = *v;
    }
}

fn parse_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Usage(format!("--folds expects `i..j`, got `{s}`"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a..b).collect())
}

fn parse_list(text: &str) -> Result<Vec<usize>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::Usage(format!("bad fold index `{t}`"))))
        .collect()
}

#[derive(Debug, Deserialize)]
struct PairRow {
    solute: String,
    solvent: String,
    #[serde(default)]
    solute_class: Option<usize>,
    #[serde(default)]
    solvent_class: Option<usize>,
}

/// Output rows `solute,solvent,prediction,mode` where mode is `fitted`,
/// `cold_solute`, `cold_solvent` or `cold_both`.
fn predict_pairs(file: &ParamsFile, csv_text: &str, cold_class: bool) -> Result<String> {
    let params = file.params()?;
    let row_of = |key: &str| file.solutes.iter().position(|s| s == key);
    let col_of = |key: &str| file.solvents.iter().position(|s| s == key);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_text.as_bytes());
    let mut out = String::from("solute,solvent,prediction,mode\n");
    for (n, row) in reader.deserialize::<PairRow>().enumerate() {
        let line = n + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let missing = |what: &str, key: &str| {
            Error::contract(format!(
                "line {line}: {what} `{key}` is not in the fitted parameters (pass --cold-class with a class column)"
            ))
        };
        let need_class = |c: Option<usize>, what: &str| {
            c.ok_or_else(|| Error::contract(format!("line {line}: cold {what} needs a {what}_class value")))
        };
        let (value, mode) = match (row_of(&row.solute), col_of(&row.solvent)) {
            (Some(i), Some(j)) => (hmcm::predict_hmcm(&params, i, j)?, "fitted"),
            (None, Some(j)) if cold_class => {
                let r = need_class(row.solute_class, "solute")?;
                (hmcm::predict_cold_solute(&params, r, params.v.row(j))?, "cold_solute")
            }
            (Some(i), None) if cold_class => {
                let s = need_class(row.solvent_class, "solvent")?;
                (hmcm::predict_cold_solvent(&params, s, params.u.row(i))?, "cold_solvent")
            }
            (None, None) if cold_class => {
                let r = need_class(row.solute_class, "solute")?;
                let s = need_class(row.solvent_class, "solvent")?;
                if s >= params.b.rows {
                    return Err(Error::contract(format!("solvent class {s} >= {}", params.b.rows)));
                }
                (hmcm::predict_cold_solute(&params, r, params.b.row(s))?, "cold_both")
            }
            (None, _) => return Err(missing("solute", &row.solute)),
            (_, None) => return Err(missing("solvent", &row.solvent)),
        };
        out.push_str(&format!("{},{},{value:?},{mode}\n", row.solute, row.solvent));
    }
    Ok(out)
}
