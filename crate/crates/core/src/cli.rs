//! The `imvc` command line: synthetic data, masks, missing-rate sweeps,
//! ablations, diagnostics and embedding export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::KmeansOptions;
use crate::data::{
    generate_mask, load_dataset, normalize_minmax, synthetic, DatasetFormat, MultiViewDataset,
    ObservationMask, SynthParams,
};
use crate::diagnostics::{ConvergenceLog, SpectrumReport};
use crate::io;
use crate::metrics::Scores;
use crate::model::{Ablation, ModelConfig};
use crate::recover::{fuse, recover_latents, Fusion, LatentBundle, Provenance};
use crate::train::{
    bundle_spectra, embed_with, load_checkpoint, recovery_fidelity, run_pipeline, save_checkpoint,
    ClusterReport, FidelityReport, PipelineOptions,
};
use crate::{Error, Result};

/// Default missing rates swept by `run`.
pub const DEFAULT_ETAS: [f64; 4] = [0.1, 0.3, 0.5, 0.7];
/// Missing rate used by `ablate`.
pub const ABLATION_ETA: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(
    name = "imvc",
    version,
    about = "Incomplete multi-view contrastive clustering"
)]
pub struct Cli {
    /// Model configuration as JSON (every field required).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "imvc-out")]
    pub out: PathBuf,
    /// Base seed for data, masks and models.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic clustered multi-view dataset.
    Synth(SynthArgs),
    /// Write an observation mask at a given missing rate.
    Mask(MaskArgs),
    /// Train and cluster for every (missing rate, seed) cell.
    Run(RunArgs),
    /// Loss-term and contrast-target ablations at missing rate 0.5.
    Ablate(AblateArgs),
    /// Singular spectra and convergence summary of a finished run.
    Diagnose(DiagnoseArgs),
    /// Re-export latents, fused features and decoded views of a run.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub v: usize,
    #[arg(long, default_value_t = 5.0)]
    pub sep: f64,
    /// File prefix inside the output directory.
    #[arg(long, default_value = "synth")]
    pub name: String,
    #[arg(long, default_value = "csv-per-view")]
    pub format: DatasetFormat,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub v: usize,
    #[arg(long)]
    pub eta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset prefix (csv-per-view) or file (packed-binary).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "csv-per-view")]
    pub format: DatasetFormat,
    /// Cluster count; required when the dataset has no labels.
    #[arg(long)]
    pub k: Option<usize>,
    /// Skip min-max normalization.
    #[arg(long)]
    pub no_normalize: bool,
    /// Skip reconstruction pretraining.
    #[arg(long)]
    pub no_pretrain: bool,
    #[arg(long, default_value = "concat_sub")]
    pub fusion: Fusion,
    /// Comma-separated seeds; defaults to the global seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated missing rates.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ETAS)]
    pub eta: Vec<f64>,
    /// Lambda grid `L1S x L2S`, e.g. `0.1,1,10x0.1,1`.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Run directory holding `embeddings/latents.csv`.
    pub run: PathBuf,
    /// A second run to compare effective ranks against.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub run: PathBuf,
    #[command(flatten)]
    pub data: ExportData,
}

#[derive(Debug, Args)]
pub struct ExportData {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "csv-per-view")]
    pub format: DatasetFormat,
    #[arg(long)]
    pub k: Option<usize>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global();
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a).map(|_| ()),
        Command::Mask(a) => cmd_mask(cli, a),
        Command::Run(a) => cmd_run(cli, a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(cli, a).map(|_| ()),
        Command::Diagnose(a) => cmd_diagnose(a).map(|_| ()),
        Command::ExportEmbeddings(a) => cmd_export(a),
    }
}

fn base_config(cli: &Cli) -> Result<ModelConfig> {
    let cfg = match &cli.config {
        Some(p) => serde_json::from_str(&io::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => ModelConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<Vec<PathBuf>> {
    let ds = synthetic(SynthParams {
        n: a.n,
        k: a.k,
        v: a.v,
        sep: a.sep,
        seed: cli.seed,
    })?;
    let files = ds.save(&cli.out.join(&a.name), a.format)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(files)
}

fn cmd_mask(cli: &Cli, a: &MaskArgs) -> Result<()> {
    let mask = generate_mask(a.n, a.v, a.eta, cli.seed)?;
    let path = cli.out.join("mask.csv");
    mask.save(&path)?;
    println!("{}", path.display());
    Ok(())
}

/// One configuration swept over missing rates and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub label: String,
    pub config: ModelConfig,
}

/// Where one (mode, eta, seed) cell writes its artifacts.
pub fn cell_dir(root: &Path, mode: &str, eta: f64, seed: u64) -> PathBuf {
    let safe: String = mode
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '=' {
                c
            } else {
                '_'
            }
        })
        .collect();
    root.join(format!("{safe}/eta{eta:.2}_seed{seed}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub file: String,
    pub sha256: String,
}

/// Content of `result.json` in every cell directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub mode: String,
    pub eta: f64,
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub config_sha256: String,
    pub dataset: Vec<FileHash>,
    pub normalized: bool,
    pub pretrain: bool,
    pub fusion: Fusion,
    pub scores: Option<Scores>,
    pub report: Option<ClusterReport>,
    pub fidelity: Option<FidelityReport>,
}

struct Experiment<'a> {
    ds: &'a MultiViewDataset,
    hashes: Vec<FileHash>,
    normalized: bool,
    opts: PipelineOptions,
}

fn dataset_hashes(path: &Path, format: DatasetFormat) -> Result<Vec<FileHash>> {
    MultiViewDataset::files_on_disk(path, format)
        .into_iter()
        .map(|f| {
            Ok(FileHash {
                file: f
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                sha256: io::sha256_hex(&io::read_bytes(&f)?),
            })
        })
        .collect()
}

fn prepare<'a>(a: &DataArgs, storage: &'a mut Option<MultiViewDataset>) -> Result<Experiment<'a>> {
    let raw = load_dataset(&a.data, a.format, a.k)?;
    let normalized = !a.no_normalize;
    let ds = if normalized {
        normalize_minmax(&raw)
    } else {
        raw
    };
    let hashes = dataset_hashes(&a.data, a.format)?;
    Ok(Experiment {
        ds: storage.insert(ds),
        hashes,
        normalized,
        opts: PipelineOptions {
            fusion: a.fusion,
            kmeans: KmeansOptions::default(),
            pretrain: !a.no_pretrain,
            score_trace: true,
        },
    })
}

fn run_cell(exp: &Experiment<'_>, mode: &Mode, eta: f64, seed: u64, dir: &Path) -> CellRecord {
    let cfg = ModelConfig {
        seed,
        ..mode.config.clone()
    };
    let cfg_json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    let mut record = CellRecord {
        mode: mode.label.clone(),
        eta,
        seed,
        status: "ok".into(),
        error: None,
        config_sha256: io::sha256_hex(cfg_json.as_bytes()),
        dataset: exp.hashes.clone(),
        normalized: exp.normalized,
        pretrain: exp.opts.pretrain,
        fusion: exp.opts.fusion,
        scores: None,
        report: None,
        fidelity: None,
    };
    let outcome = (|| -> Result<()> {
        io::write_string(&dir.join("config.json"), &cfg_json)?;
        let mask = generate_mask(exp.ds.n_samples(), exp.ds.n_views(), eta, seed)?;
        mask.save(&dir.join("mask.csv"))?;
        let out = run_pipeline(exp.ds, &mask, &cfg, &exp.opts)?;
        io::write_string(&dir.join("trace.csv"), &out.state.trace.to_csv())?;
        if !out.state.pretrain_trace.rows().is_empty() {
            io::write_string(
                &dir.join("pretrain_trace.csv"),
                &out.state.pretrain_trace.to_csv(),
            )?;
        }
        let best = out.state.best_model()?;
        save_checkpoint(&best, out.state.best(), &dir.join("checkpoint.bin"))?;
        write_embeddings(&dir.join("embeddings"), &out.bundle, out.fused.fusion)?;
        let labels: String = out.report.labels.iter().map(|l| format!("{l}\n")).collect();
        io::write_string(&dir.join("labels.csv"), &labels)?;
        record.fidelity = Some(recovery_fidelity(&best, exp.ds, &mask)?);
        record.scores = out.report.scores;
        record.report = Some(out.report);
        Ok(())
    })();
    if let Err(e) = outcome {
        record.status = format!("failed (exit {})", e.exit_code());
        record.error = Some(e.to_string());
    }
    if let Ok(json) = serde_json::to_string_pretty(&record) {
        let _ = io::write_string(&dir.join("result.json"), &json);
    }
    record
}

fn write_embeddings(dir: &Path, bundle: &LatentBundle, fusion: Fusion) -> Result<()> {
    io::write_string(&dir.join("latents.csv"), &bundle.to_csv())?;
    let fused = fuse(bundle, fusion)?;
    io::write_string(&dir.join("fused.csv"), &io::matrix_to_csv(&fused.matrix))
}

/// One row of an aggregate table: means over the seeds that succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: String,
    pub eta: f64,
    pub seeds: usize,
    pub failed: usize,
    pub mean: Option<Scores>,
}

fn aggregate(mode: &str, eta: f64, cells: &[&CellRecord]) -> AggregateRow {
    let ok: Vec<Scores> = cells.iter().filter_map(|c| c.scores).collect();
    let mean = (!ok.is_empty()).then(|| {
        let k = ok.len() as f64;
        Scores {
            acc: ok.iter().map(|s| s.acc).sum::<f64>() / k,
            nmi: ok.iter().map(|s| s.nmi).sum::<f64>() / k,
            ari: ok.iter().map(|s| s.ari).sum::<f64>() / k,
        }
    });
    AggregateRow {
        mode: mode.to_string(),
        eta,
        seeds: cells.len(),
        failed: cells.iter().filter(|c| c.status != "ok").count(),
        mean,
    }
}

/// Aggregate CSV with metrics as percentages to two decimals. Failed cells
/// stay in the table with a status marker.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("mode,eta,seeds,failed,acc,nmi,ari,status\n");
    for r in rows {
        let status = match (r.failed, &r.mean) {
            (0, _) => "ok",
            (_, Some(_)) => "partial",
            (_, None) => "FAILED",
        };
        let _ = write!(s, "{},{:.2},{},{},", r.mode, r.eta, r.seeds, r.failed);
        match r.mean {
            Some(m) => {
                let _ = write!(
                    s,
                    "{:.2},{:.2},{:.2}",
                    100.0 * m.acc,
                    100.0 * m.nmi,
                    100.0 * m.ari
                );
            }
            None => s.push_str(",,"),
        }
        let _ = writeln!(s, ",{status}");
    }
    s
}

/// Outcome of a sweep: every cell and the aggregate table.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellRecord>,
    pub rows: Vec<AggregateRow>,
}

impl SweepResult {
    fn first_failure(&self) -> Option<Error> {
        let c = self.cells.iter().find(|c| c.status != "ok")?;
        let msg = format!(
            "{} of {} cells failed; first: {} eta={} seed={}: {}",
            self.cells.iter().filter(|c| c.status != "ok").count(),
            self.cells.len(),
            c.mode,
            c.eta,
            c.seed,
            c.error.as_deref().unwrap_or("unknown")
        );
        Some(if c.status.contains("exit 4") {
            Error::Evaluation(msg)
        } else if c.status.contains("exit 3") {
            Error::Training(msg)
        } else {
            Error::Data(msg)
        })
    }
}

fn sweep(
    exp: &Experiment<'_>,
    root: &Path,
    modes: &[Mode],
    etas: &[f64],
    seeds: &[u64],
) -> SweepResult {
    let mut jobs = Vec::new();
    for m in modes {
        for &eta in etas {
            for &seed in seeds {
                jobs.push((m, eta, seed));
            }
        }
    }
    let cells: Vec<CellRecord> = jobs
        .par_iter()
        .map(|&(m, eta, seed)| run_cell(exp, m, eta, seed, &cell_dir(root, &m.label, eta, seed)))
        .collect();
    let mut rows = Vec::new();
    for m in modes {
        for &eta in etas {
            let group: Vec<&CellRecord> = cells
                .iter()
                .filter(|c| c.mode == m.label && c.eta == eta)
                .collect();
            rows.push(aggregate(&m.label, eta, &group));
        }
    }
    SweepResult { cells, rows }
}

fn validate_etas(etas: &[f64]) -> Result<()> {
    if etas.is_empty() {
        return Err(Error::Param("eta list is empty".into()));
    }
    for &e in etas {
        if !(0.0..1.0).contains(&e) {
            return Err(Error::Param(format!("missing rate {e} outside [0, 1)")));
        }
    }
    Ok(())
}

fn seeds_of(cli: &Cli, a: &DataArgs) -> Vec<u64> {
    if a.seeds.is_empty() {
        vec![cli.seed]
    } else {
        a.seeds.clone()
    }
}

/// Parses `a,b,c x d,e` into the two lambda lists.
pub fn parse_grid(spec: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let bad = || Error::Param(format!("grid must look like 0.1,1x0.5,2; got {spec:?}"));
    let (l1, l2) = spec.split_once('x').ok_or_else(bad)?;
    let list = |s: &str| -> Result<Vec<f64>> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    };
    let (a, b) = (list(l1)?, list(l2)?);
    if a.is_empty() || b.is_empty() || a.iter().chain(&b).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(bad());
    }
    Ok((a, b))
}

pub fn cmd_run(cli: &Cli, a: &RunArgs) -> Result<SweepResult> {
    validate_etas(&a.eta)?;
    let base = base_config(cli)?;
    let modes = match &a.grid {
        None => vec![Mode {
            label: "full".into(),
            config: base,
        }],
        Some(g) => {
            let (l1s, l2s) = parse_grid(g)?;
            let mut modes = Vec::new();
            for &l1 in &l1s {
                for &l2 in &l2s {
                    let config = ModelConfig {
                        lambda1: l1,
                        lambda2: l2,
                        ..base.clone()
                    };
                    config.validate()?;
                    modes.push(Mode {
                        label: format!("l1={l1}_l2={l2}"),
                        config,
                    });
                }
            }
            modes
        }
    };
    let seeds = seeds_of(cli, &a.data);
    let mut storage = None;
    let exp = prepare(&a.data, &mut storage)?;
    let res = sweep(&exp, &cli.out.join("runs"), &modes, &a.eta, &seeds);
    let table = aggregate_csv(&res.rows);
    io::write_string(&cli.out.join("results.csv"), &table)?;
    print!("{table}");
    if let Some(g) = &a.grid {
        let (l1s, l2s) = parse_grid(g)?;
        let mut s = String::from("eta,lambda1,lambda2,acc,nmi\n");
        let mut i = 0;
        for &l1 in &l1s {
            for &l2 in &l2s {
                for _ in &a.eta {
                    let r = &res.rows[i];
                    let (acc, nmi) = r
                        .mean
                        .map(|m| {
                            (
                                format!("{:.2}", 100.0 * m.acc),
                                format!("{:.2}", 100.0 * m.nmi),
                            )
                        })
                        .unwrap_or_default();
                    let _ = writeln!(s, "{:.2},{l1},{l2},{acc},{nmi}", r.eta);
                    i += 1;
                }
            }
        }
        io::write_string(&cli.out.join("grid.csv"), &s)?;
    }
    match res.first_failure() {
        Some(e) => Err(e),
        None => Ok(res),
    }
}

/// The loss-term study and the contrast-target study.
#[derive(Debug, Clone)]
pub struct AblationResult {
    pub loss: SweepResult,
    pub representation: SweepResult,
}

pub fn ablation_modes(base: &ModelConfig, study: &[Ablation]) -> Result<Vec<Mode>> {
    study
        .iter()
        .map(|ab| {
            Ok(Mode {
                label: if *ab == Ablation::FULL {
                    "full".into()
                } else {
                    ab.label()
                },
                config: ab.apply(base)?,
            })
        })
        .collect()
}

pub fn cmd_ablate(cli: &Cli, a: &AblateArgs) -> Result<AblationResult> {
    let base = base_config(cli)?;
    let seeds = seeds_of(cli, &a.data);
    let mut storage = None;
    let exp = prepare(&a.data, &mut storage)?;
    if exp.ds.labels().is_none() {
        return Err(Error::Config("ablations need a labeled dataset".into()));
    }
    let root = cli.out.join("runs");
    let loss = sweep(
        &exp,
        &root,
        &ablation_modes(&base, &Ablation::loss_study())?,
        &[ABLATION_ETA],
        &seeds,
    );
    let representation = sweep(
        &exp,
        &root,
        &ablation_modes(&base, &Ablation::representation_study())?,
        &[ABLATION_ETA],
        &seeds,
    );
    // the contrast-target rows are named after the representation they use
    let mut rep_rows = representation.rows.clone();
    for (row, ab) in rep_rows.iter_mut().zip(Ablation::representation_study()) {
        row.mode = ab.target.to_string().replace(',', " ");
    }
    let t1 = aggregate_csv(&loss.rows);
    let t2 = aggregate_csv(&rep_rows);
    io::write_string(&cli.out.join("ablation_loss.csv"), &t1)?;
    io::write_string(&cli.out.join("ablation_representation.csv"), &t2)?;
    print!("{t1}\n{t2}");
    let res = AblationResult {
        loss,
        representation,
    };
    match res
        .loss
        .first_failure()
        .or_else(|| res.representation.first_failure())
    {
        Some(e) => Err(e),
        None => Ok(res),
    }
}

/// Spectra and trace summary of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub run: PathBuf,
    pub lambda1: f64,
    pub sub: SpectrumReport,
    pub full: SpectrumReport,
    pub trace: Option<crate::diagnostics::TraceSummary>,
}

pub fn diagnose_run(run: &Path) -> Result<Diagnosis> {
    let cfg: ModelConfig = serde_json::from_str(&io::read_to_string(&run.join("config.json"))?)?;
    let mask = ObservationMask::load(&run.join("mask.csv"))?;
    let latents = run.join("embeddings").join("latents.csv");
    if !latents.exists() {
        return Err(Error::Data(format!(
            "{} is missing; was the run completed?",
            latents.display()
        )));
    }
    let bundle = LatentBundle::from_csv(&latents, mask.n_samples(), mask.n_views(), cfg.sub_dim)?;
    if bundle.count(Provenance::Absent) > 0 {
        return Err(Error::Data(format!(
            "{} has absent entries",
            latents.display()
        )));
    }
    let (sub, full) = bundle_spectra(&bundle)?;
    let trace_path = run.join("trace.csv");
    let trace = if trace_path.exists() {
        ConvergenceLog::from_csv(&trace_path)?.summary()
    } else {
        None
    };
    let dir = run.join("diagnostics");
    io::write_string(&dir.join("spectrum_sub.csv"), &sub.to_csv())?;
    io::write_string(&dir.join("spectrum_full.csv"), &full.to_csv())?;
    let d = Diagnosis {
        run: run.to_path_buf(),
        lambda1: cfg.lambda1,
        sub,
        full,
        trace,
    };
    io::write_string(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&d)?,
    )?;
    Ok(d)
}

fn print_diagnosis(d: &Diagnosis) {
    println!("run {}", d.run.display());
    println!(
        "  effective rank Z* {:.4} (participation {:.3}), Z {:.4} (participation {:.3})",
        d.sub.effective_rank, d.sub.participation, d.full.effective_rank, d.full.participation
    );
    if let Some(t) = &d.trace {
        println!("  epochs {}", t.epochs);
        for (name, c) in [("Lz", t.lz), ("Lc", t.lc), ("Lr", t.lr), ("total", t.total)] {
            println!(
                "  {name:<5} min {:.6} max {:.6} final {:.6}",
                c.min, c.max, c.last
            );
        }
    }
}

/// Whether the run with contrast enabled has the higher `Z*` effective rank.
/// `None` when both or neither run uses the contrastive term.
pub fn rank_expectation(a: &Diagnosis, b: &Diagnosis) -> Option<bool> {
    let (with, without) = match (a.lambda1 > 0.0, b.lambda1 > 0.0) {
        (true, false) => (a, b),
        (false, true) => (b, a),
        _ => return None,
    };
    Some(with.sub.effective_rank > without.sub.effective_rank)
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> Result<Vec<Diagnosis>> {
    let first = diagnose_run(&a.run)?;
    print_diagnosis(&first);
    let mut out = vec![first];
    if let Some(other) = &a.compare {
        let second = diagnose_run(other)?;
        print_diagnosis(&second);
        match rank_expectation(&out[0], &second) {
            Some(true) => println!("PASS effective rank of Z* is higher with the contrastive term"),
            Some(false) => {
                println!("FAIL effective rank of Z* is not higher with the contrastive term")
            }
            None => println!("SKIP both runs use the same contrastive setting"),
        }
        out.push(second);
    }
    Ok(out)
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let record: CellRecord =
        serde_json::from_str(&io::read_to_string(&a.run.join("result.json"))?)?;
    let raw = load_dataset(&a.data.data, a.data.format, a.data.k)?;
    let ds = if record.normalized {
        normalize_minmax(&raw)
    } else {
        raw
    };
    let model = load_checkpoint(&a.run.join("checkpoint.bin"))?;
    let mask = ObservationMask::load(&a.run.join("mask.csv"))?;
    let bundle = recover_latents(&model, &embed_with(&model, &ds, &mask)?, &mask)?;
    let dir = a.run.join("embeddings");
    write_embeddings(&dir, &bundle, record.fusion)?;
    // decoded views, including those rebuilt from recovered latents
    for v in 0..ds.n_views() {
        let xhat = model.views[v].decoder.predict(bundle.z(v).view())?;
        io::write_string(
            &dir.join(format!("decoded_view{v}.csv")),
            &io::matrix_to_csv(&xhat),
        )?;
    }
    println!("{}", dir.display());
    Ok(())
}
