use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use sbolab::campaign::{
    self, dataset_to_csv, load_dataset, CampaignConfig, CampaignError, Label, RunRecord,
};
use sbolab::config::KvConfig;
use sbolab::detect::{
    clean_feature_matrix, feature_matrix, fit_detector, model_io, rank_features, AeHyper,
    DetectorKind, Hyper, Mode, RankMethod,
};
use sbolab::emu::{self, DEFAULT_STEP_LIMIT};
use sbolab::eval::{evaluate, render_report, sweep, EvalCell, EvalReport, SweepConfig};
use sbolab::isa::{assemble, disassemble, AsmOptions};
use sbolab::workloads::{
    build_workload, calibrate, craft_attack_input, gen_clean_input, WorkloadName, WorkloadSpec,
};

pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn data_err<E: std::error::Error + Send + Sync + 'static>(e: E) -> CliError {
    CliError::Data(anyhow::Error::new(e))
}

#[derive(Parser)]
#[command(
    name = "sbolab",
    about = "Stack-buffer-overflow detection lab: emulate, exploit, detect",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Assemble a source file and write the canonical listing
    Assemble(AssembleArgs),
    /// Execute one workload run and print its record
    Run(RunArgs),
    /// Generate train/test/calibration datasets for one workload
    Campaign(CampaignArgs),
    /// Fit a detector on a clean training dataset
    Train(TrainArgs),
    /// Evaluate a saved model on a labeled test dataset
    Eval(EvalArgs),
    /// Run the payload-size x feature-count sweep over campaign data
    Sweep(SweepArgs),
    /// Render results.csv and the per-workload SVG charts from a report
    Report(ReportArgs),
}

#[derive(Args)]
pub struct AssembleArgs {
    /// Assembly source file (.s)
    pub src: PathBuf,
    /// Output listing path
    #[arg(short, long)]
    pub out: PathBuf,
    /// Assign 2-byte widths to compressible instructions
    #[arg(long)]
    pub compress: bool,
}

#[derive(Args)]
pub struct RunArgs {
    /// Workload name: aes, rsa_fixed, rsa_full, sha, dijkstra
    #[arg(long)]
    pub workload: String,
    /// Run seed (also the calibration master seed for --attack)
    #[arg(long)]
    pub seed: u64,
    /// Deliver the stack-smashing input instead of a clean one
    #[arg(long)]
    pub attack: bool,
    /// Payload size as a percentage of the clean baseline
    #[arg(long, requires = "attack")]
    pub payload_pct: Option<f64>,
    /// Build with compressed instruction widths
    #[arg(long)]
    pub compress: bool,
    /// Step limit for the emulator
    #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
    pub step_limit: u64,
}

#[derive(Args)]
pub struct CampaignArgs {
    /// Campaign config file (key = value lines); flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Workload name
    #[arg(long)]
    pub workload: Option<String>,
    /// Clean training runs
    #[arg(long)]
    pub train_runs: Option<u64>,
    /// Balanced test runs per payload percentage (must be even)
    #[arg(long)]
    pub test_runs: Option<u64>,
    /// Comma-separated payload percentages
    #[arg(long)]
    pub payload_pcts: Option<String>,
    /// Master seed
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Build with compressed instruction widths (default true)
    #[arg(long)]
    pub compress: Option<bool>,
    /// Step limit for the emulator
    #[arg(long)]
    pub step_limit: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full-scale corpus (10000 train / 10000 test) instead of the desk defaults
    #[arg(long)]
    pub paper_scale: bool,
    /// Worker threads (0 = all cores); output is identical for any value
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Detector: ocsvm, lof, iforest, elliptic (omit for --mode ae_recon)
    #[arg(long)]
    pub detector: Option<String>,
    /// Pipeline mode: raw, ae_latent or ae_recon
    #[arg(long, default_value = "raw")]
    pub mode: String,
    /// Clean training dataset (CSV)
    #[arg(long)]
    pub train: PathBuf,
    /// Number of top-ranked features to use (1..=8)
    #[arg(long, default_value_t = 8)]
    pub features: usize,
    /// Feature ranking method: dispersion or probe
    #[arg(long, default_value = "dispersion")]
    pub rank: String,
    /// Labeled calibration dataset, required by the probe ranking
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Output model path
    #[arg(short, long)]
    pub out: PathBuf,
    /// OC-SVM margin fraction
    #[arg(long, default_value_t = 0.05)]
    pub nu: f64,
    /// RBF kernel width (default 1/d)
    #[arg(long)]
    pub gamma: Option<f64>,
    /// LOF neighbor count
    #[arg(long, default_value_t = 20)]
    pub lof_k: usize,
    /// Threshold quantile for LOF
    #[arg(long, default_value_t = 0.95)]
    pub lof_quantile: f64,
    /// Isolation forest tree count
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    /// Isolation forest subsample size (default min(256, n))
    #[arg(long)]
    pub psi: Option<usize>,
    /// Contamination for quantile thresholds
    #[arg(long, default_value_t = 0.05)]
    pub contamination: f64,
    /// Autoencoder training epochs
    #[arg(long, default_value_t = 200)]
    pub ae_epochs: usize,
    /// Autoencoder learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub ae_lr: f64,
    /// Autoencoder batch size
    #[arg(long, default_value_t = 32)]
    pub ae_batch: usize,
    /// Seed for seeded fits (forest, envelope, autoencoder)
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Saved model file
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled test dataset (CSV)
    #[arg(long)]
    pub test: PathBuf,
    /// Output report path (results.csv format)
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Sweep config file (key = value lines)
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads (0 = all cores); output is identical for any value
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Sweep report (results.csv format)
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for results.csv and the SVG charts
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Assemble(args) => cmd_assemble(args),
        Command::Run(args) => cmd_run(args),
        Command::Campaign(args) => cmd_campaign(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn parse_workload(name: &str) -> Result<WorkloadName> {
    WorkloadName::parse(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown workload `{name}`; expected one of aes, rsa_fixed, rsa_full, sha, dijkstra"
        ))
    })
}

fn color_enabled() -> bool {
    std::env::var_os("NO_COLOR").is_none()
}

fn bold(s: &str) -> String {
    if color_enabled() {
        format!("\x1b[1m{s}\x1b[0m")
    } else {
        s.to_string()
    }
}

fn cmd_assemble(args: AssembleArgs) -> Result<()> {
    let source = std::fs::read_to_string(&args.src)
        .with_context(|| format!("reading {}", args.src.display()))?;
    let program = assemble(&source, AsmOptions { compress: args.compress }).map_err(data_err)?;
    let listing = disassemble(&program);
    std::fs::write(&args.out, listing)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "assembled {}: {} instructions, text {} bytes, data {} bytes, entry {:#x}",
        args.src.display(),
        program.text.len(),
        program.text_end() - program.text_base,
        program.data.len(),
        program.entry
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let name = parse_workload(&args.workload)?;
    if args.attack && args.payload_pct.is_none() {
        return Err(CliError::Usage("--attack requires --payload-pct".into()));
    }
    let spec = WorkloadSpec::new(name);
    let program = build_workload(name, AsmOptions { compress: args.compress });
    let (label, pct, input) = if args.attack {
        let pct = args.payload_pct.unwrap();
        if pct <= 0.0 {
            return Err(CliError::Usage("--payload-pct must be positive".into()));
        }
        let cal = calibrate(&spec, &program, pct, args.seed).map_err(data_err)?;
        let input =
            craft_attack_input(&spec, &program, &cal.params, args.seed).map_err(data_err)?;
        (Label::Attack, pct, input)
    } else {
        (Label::Clean, 0.0, gen_clean_input(&spec, args.seed))
    };
    let result = emu::run(&program, &input, args.step_limit).map_err(data_err)?;
    let record = RunRecord {
        workload: name,
        run_index: 0,
        seed: args.seed,
        label,
        payload_pct: pct,
        hpc: result.hpc,
        exit_status: result.exit_status,
        payload_executed: result.payload_executed,
    };
    print!("{}", dataset_to_csv(std::slice::from_ref(&record)));
    println!();
    println!("{}", bold(&format!("{name} ({})", label.as_str())));
    let h = &result.hpc;
    for (tag, value) in [
        ("instr_executed", h.instr_executed),
        ("load_hazards", h.load_hazards),
        ("loads", h.loads),
        ("stores", h.stores),
        ("jumps", h.jumps),
        ("branches_total", h.branches_total),
        ("branches_taken", h.branches_taken),
        ("compressed", h.compressed),
    ] {
        println!("  {tag:>15} {value}");
    }
    println!(
        "  {:>15} {} (code {})",
        "exit",
        result.exit_status.as_str(),
        result.exit_code
    );
    Ok(())
}

const CAMPAIGN_KEYS: [&str; 8] = [
    "workload",
    "n_train_clean",
    "n_test",
    "payload_pcts",
    "master_seed",
    "compress",
    "step_limit",
    "out_dir",
];

fn cmd_campaign(args: CampaignArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let kv = KvConfig::parse(&text).map_err(data_err)?;
            kv.check_keys(&CAMPAIGN_KEYS).map_err(data_err)?;
            kv
        }
        None => KvConfig::default(),
    };

    let workload_str = match (&args.workload, file.get("workload")) {
        (Some(w), _) => w.clone(),
        (None, Some(w)) => w.to_string(),
        (None, None) => {
            return Err(CliError::Usage(
                "campaign needs --workload or a config file with `workload`".into(),
            ))
        }
    };
    let workload = parse_workload(&workload_str)?;
    let out_dir = args
        .out
        .or_else(|| file.get("out_dir").map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("campaign needs --out or `out_dir`".into()))?;

    let mut config = CampaignConfig::desk(workload, out_dir);
    if args.paper_scale {
        config.n_train_clean = campaign::FULL_RUNS;
        config.n_test = campaign::FULL_RUNS;
    }
    if let Some(v) = file.get_u64("n_train_clean").map_err(data_err)? {
        config.n_train_clean = v;
    }
    if let Some(v) = file.get_u64("n_test").map_err(data_err)? {
        config.n_test = v;
    }
    if let Some(v) = file.get_f64_list("payload_pcts").map_err(data_err)? {
        config.payload_pcts = v;
    }
    if let Some(v) = file.get_u64("master_seed").map_err(data_err)? {
        config.master_seed = v;
    }
    if let Some(v) = file.get_bool("compress").map_err(data_err)? {
        config.compress = v;
    }
    if let Some(v) = file.get_u64("step_limit").map_err(data_err)? {
        config.step_limit = v;
    }
    // flags override file values
    if let Some(v) = args.train_runs {
        config.n_train_clean = v;
    }
    if let Some(v) = args.test_runs {
        config.n_test = v;
    }
    if let Some(list) = &args.payload_pcts {
        config.payload_pcts = list
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CliError::Usage(format!("bad --payload-pcts `{list}`")))?;
    }
    if let Some(v) = args.master_seed {
        config.master_seed = v;
    }
    if let Some(v) = args.compress {
        config.compress = v;
    }
    if let Some(v) = args.step_limit {
        config.step_limit = v;
    }

    let out = campaign::run_campaign(&config, args.jobs).map_err(|e| match e {
        CampaignError::LabelSoundness { .. } => CliError::Internal(anyhow::Error::new(e)),
        other => CliError::Data(anyhow::Error::new(other)),
    })?;
    println!(
        "campaign {}: {} train rows, {} test sets into {}",
        config.workload,
        out.train.len(),
        out.per_pct.len(),
        config.out_dir.display()
    );
    for (pct, test, _, cal) in &out.per_pct {
        println!(
            "  pct {pct}: k = {}, baseline = {} instructions, {} test rows{}",
            cal.params.k,
            cal.baseline_instret,
            test.len(),
            cal.warning.as_deref().map(|w| format!(" (warning: {w})")).unwrap_or_default()
        );
    }
    Ok(())
}

fn hyper_from_train_args(args: &TrainArgs) -> Hyper {
    Hyper {
        nu: args.nu,
        gamma: args.gamma,
        lof_k: args.lof_k,
        lof_quantile: args.lof_quantile,
        n_trees: args.trees,
        psi: args.psi,
        contamination: args.contamination,
        mcd_h: None,
        ae: AeHyper {
            epochs: args.ae_epochs,
            learning_rate: args.ae_lr,
            batch_size: args.ae_batch,
            seed: args.seed,
        },
        seed: args.seed,
    }
}

fn ranked_features(
    train: &[RunRecord],
    rank: &str,
    calib: Option<&Path>,
    count: usize,
) -> Result<Vec<usize>> {
    if !(1..=8).contains(&count) {
        return Err(CliError::Usage("--features must be in 1..=8".into()));
    }
    let method = RankMethod::parse(rank)
        .ok_or_else(|| CliError::Usage(format!("unknown ranking method `{rank}`")))?;
    let all: Vec<usize> = (0..8).collect();
    let matrix = clean_feature_matrix(train, &all).map_err(data_err)?;
    let order = match method {
        RankMethod::Dispersion => {
            rank_features(&matrix, None, RankMethod::Dispersion).map_err(data_err)?
        }
        RankMethod::SingleFeatureProbe => {
            let path = calib.ok_or_else(|| {
                CliError::Usage("--rank probe requires --calib <labeled csv>".into())
            })?;
            let calib_records = load_dataset(path).map_err(data_err)?;
            let calib_matrix = feature_matrix(&calib_records, &all).map_err(data_err)?;
            let labels: Vec<bool> =
                calib_records.iter().map(|r| r.label == Label::Attack).collect();
            rank_features(&matrix, Some((&calib_matrix, &labels)), method).map_err(data_err)?
        }
    };
    Ok(order[..count].to_vec())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mode = Mode::parse(&args.mode)
        .ok_or_else(|| CliError::Usage(format!("unknown mode `{}`", args.mode)))?;
    let kind = match (&args.detector, mode) {
        (None, Mode::AeRecon) => None,
        (Some(name), Mode::AeRecon) if name == "ae_recon" || name == "autoencoder" => None,
        (Some(name), Mode::AeRecon) => {
            return Err(CliError::Usage(format!(
                "--mode ae_recon uses the autoencoder alone; remove --detector {name}"
            )))
        }
        (Some(name), _) => Some(DetectorKind::parse(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown detector `{name}`; expected ocsvm, lof, iforest or elliptic"
            ))
        })?),
        (None, _) => {
            return Err(CliError::Usage(
                "--detector is required unless --mode ae_recon".into(),
            ))
        }
    };
    let train = load_dataset(&args.train).map_err(data_err)?;
    let features = ranked_features(&train, &args.rank, args.calib.as_deref(), args.features)?;
    let hyper = hyper_from_train_args(&args);
    let det = fit_detector(&train, kind, mode, &features, &hyper).map_err(data_err)?;
    model_io::save_detector(&det, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "trained {} ({mode}) on {} rows, features {:?} -> {}",
        det.kind_str(),
        train.len(),
        det.features,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let det = model_io::load_detector(&args.model).map_err(data_err)?;
    let test = load_dataset(&args.test).map_err(data_err)?;
    let confusion = evaluate(&det, &test).map_err(data_err)?;
    let workload = test
        .first()
        .map(|r| r.workload)
        .ok_or_else(|| CliError::Data(anyhow!("empty test set")))?;
    let pct = test
        .iter()
        .filter(|r| r.label == Label::Attack)
        .map(|r| r.payload_pct)
        .fold(0.0f64, f64::max);
    let cell = EvalCell {
        workload,
        detector: det.kind_str().to_string(),
        mode: det.mode,
        payload_pct: if pct > 0.0 { pct } else { f64::NAN },
        n_features: det.features.len(),
        confusion,
    };
    println!(
        "{}: accuracy {:.4}, tpr {:.4}, fpr {:.4}, precision {:.4} over {} rows",
        bold(&format!("{} ({})", cell.detector, cell.mode)),
        confusion.accuracy(),
        confusion.tpr(),
        confusion.fpr(),
        confusion.precision(),
        confusion.total()
    );
    let report = EvalReport { cells: vec![cell], metadata: Default::default() };
    let text = report.to_csv();
    std::fs::write(&args.out, text)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

const SWEEP_KEYS: [&str; 20] = [
    "data_dir",
    "workloads",
    "payload_pcts",
    "detectors",
    "modes",
    "n_features",
    "rank_method",
    "out",
    "nu",
    "gamma",
    "lof_k",
    "lof_quantile",
    "n_trees",
    "psi",
    "contamination",
    "mcd_h",
    "ae_epochs",
    "ae_lr",
    "ae_batch",
    "seed",
];

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let kv = KvConfig::parse(&text).map_err(data_err)?;
    kv.check_keys(&SWEEP_KEYS).map_err(data_err)?;

    let data_dir = kv
        .get("data_dir")
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage("sweep config needs `data_dir`".into()))?;
    let out = kv
        .get("out")
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage("sweep config needs `out`".into()))?;

    let mut config = SweepConfig::desk(data_dir);
    config.jobs = args.jobs;
    if let Some(names) = kv.get_str_list("workloads") {
        config.workloads = names
            .iter()
            .map(|n| parse_workload(n))
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(v) = kv.get_f64_list("payload_pcts").map_err(data_err)? {
        config.payload_pcts = v;
    }
    if let Some(names) = kv.get_str_list("detectors") {
        config.detectors = names
            .iter()
            .map(|n| {
                DetectorKind::parse(n)
                    .ok_or_else(|| CliError::Usage(format!("unknown detector `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(names) = kv.get_str_list("modes") {
        config.modes = names
            .iter()
            .map(|n| {
                Mode::parse(n).ok_or_else(|| CliError::Usage(format!("unknown mode `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(list) = kv.get_str_list("n_features") {
        config.n_features = list
            .iter()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("bad n_features entry `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(m) = kv.get("rank_method") {
        config.rank_method = RankMethod::parse(m)
            .ok_or_else(|| CliError::Usage(format!("unknown rank_method `{m}`")))?;
    }
    let h = &mut config.hyper;
    if let Some(v) = kv.get_f64("nu").map_err(data_err)? {
        h.nu = v;
    }
    if let Some(v) = kv.get_f64("gamma").map_err(data_err)? {
        h.gamma = Some(v);
    }
    if let Some(v) = kv.get_u64("lof_k").map_err(data_err)? {
        h.lof_k = v as usize;
    }
    if let Some(v) = kv.get_f64("lof_quantile").map_err(data_err)? {
        h.lof_quantile = v;
    }
    if let Some(v) = kv.get_u64("n_trees").map_err(data_err)? {
        h.n_trees = v as usize;
    }
    if let Some(v) = kv.get_u64("psi").map_err(data_err)? {
        h.psi = Some(v as usize);
    }
    if let Some(v) = kv.get_f64("contamination").map_err(data_err)? {
        h.contamination = v;
    }
    if let Some(v) = kv.get_u64("mcd_h").map_err(data_err)? {
        h.mcd_h = Some(v as usize);
    }
    if let Some(v) = kv.get_u64("ae_epochs").map_err(data_err)? {
        h.ae.epochs = v as usize;
    }
    if let Some(v) = kv.get_f64("ae_lr").map_err(data_err)? {
        h.ae.learning_rate = v;
    }
    if let Some(v) = kv.get_u64("ae_batch").map_err(data_err)? {
        h.ae.batch_size = v as usize;
    }
    if let Some(v) = kv.get_u64("seed").map_err(data_err)? {
        h.seed = v;
        h.ae.seed = v;
    }

    let report = sweep(&config).map_err(data_err)?;
    report.save_csv(&out).map_err(data_err)?;
    let meta_path = out.with_extension("meta.txt");
    let mut meta = String::new();
    for (k, v) in &report.metadata {
        meta.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(&meta_path, meta)
        .with_context(|| format!("writing {}", meta_path.display()))?;
    println!("sweep: {} cells -> {}", report.cells.len(), out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let report = EvalReport::load_csv(&args.input).map_err(data_err)?;
    let files = render_report(&report, &args.out).map_err(data_err)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
