//! Reproducible runs over the `vskd-core` pipeline.
//!
//! Every command that produces artifacts writes them into a fresh
//! timestamped directory under `--out`, next to a `config.txt` echo that
//! reproduces the run when passed back through `--config`.

pub mod config;
pub mod error;
pub mod io;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::RunConfig;
use error::{CliError, CliResult};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use vskd_core::autodiff::Primitive;
use vskd_core::checkpoint::{self, gaf_to_bytes, network_from_bytes, save_network};
use vskd_core::data::{encode_dataset, encode_windows, generate_dataset, EncodedDataset};
use vskd_core::encoding::{encode_window, quantize_image};
use vskd_core::metrics::Evaluation;
use vskd_core::models::{Network, StudentNet, TeacherNet};
use vskd_core::train::{distill_student, evaluate, run_ablation, train_teacher, TrainingCurve, Variant};
use vskd_core::verify::run_gradcheck;

pub const CONFIG_ECHO: &str = "config.txt";
pub const METRICS: &str = "metrics.jsonl";
pub const TEACHER_CHECKPOINT: &str = "teacher.ckpt";
pub const STUDENT_CHECKPOINT: &str = "student.ckpt";
pub const MANIFEST: &str = "manifest.csv";
pub const ABLATION_TABLE: &str = "ablation.csv";
pub const TEACHER_TABLE: &str = "teachers.csv";
pub const EVALUATION: &str = "eval.json";

#[derive(Debug, Parser)]
#[command(name = "vskd", version, about = "GAF encoding and DASK teacher-student distillation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Overrides the configured image side.
    #[arg(long, global = true)]
    pub side: Option<u32>,
    /// Print per-epoch metrics to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    /// 8-bit RGB, one channel per axis.
    Png,
    /// Full-precision tensor file in checkpoint layout.
    Raw,
}

impl ImageFormat {
    fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Raw => "raw",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a sensor CSV into one GAF image per window.
    Encode {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "png")]
        format: ImageFormat,
        /// Overrides the configured window length in rows.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Train the teacher on the teacher view with cross-entropy.
    TrainTeacher,
    /// Distill a student from a frozen teacher checkpoint.
    Distill {
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Evaluate a teacher or student checkpoint.
    Eval {
        checkpoint: PathBuf,
        /// Sensor CSV to evaluate on instead of the synthetic test split.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train a teacher and all six distillation variants per seed.
    Ablate {
        /// Number of consecutive seeds starting at the run seed.
        #[arg(long, default_value_t = 1)]
        seeds: u32,
    },
    /// Finite-difference check of every loss and network forward pass.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u32,
        /// Scale one backward rule, e.g. `relu` or `matmul:1.01`.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn load_config(global: &GlobalArgs) -> CliResult<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(side) = global.side {
        cfg.side = side as usize;
    }
    Ok(cfg)
}

fn metrics_jsonl(curve: &TrainingCurve) -> String {
    let mut s = String::new();
    for r in &curve.records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

fn report_curve(curve: &TrainingCurve, verbose: bool) {
    if verbose {
        eprint!("{}", metrics_jsonl(curve));
    }
}

fn dataset(cfg: &RunConfig) -> CliResult<EncodedDataset> {
    let spec = cfg.data_spec();
    Ok(encode_dataset(&generate_dataset(&spec)?, cfg.side, spec.classes)?)
}

fn check_compatible<N: Network>(net: &N, data: &EncodedDataset) -> CliResult<()> {
    if net.input_width() != data.input_width() || net.classes() != data.classes {
        return Err(CliError::artifact(format!(
            "{} checkpoint expects {} inputs and {} classes; the configuration gives {} and {}",
            N::KIND,
            net.input_width(),
            net.classes(),
            data.input_width(),
            data.classes
        )));
    }
    Ok(())
}

fn read_checkpoint(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::artifact(format!("cannot read checkpoint {}: {e}", path.display())))
}

fn cmd_encode(cfg: &RunConfig, out: &Path, input: &Path, format: ImageFormat) -> CliResult<PathBuf> {
    let windows = io::read_sensor_csv(input, cfg.window)?;
    let images = windows.iter().map(|w| encode_window(w, cfg.side)).collect::<Result<Vec<_>, _>>()?;
    let dir = io::create_run_dir(out, "encode")?;
    io::write_file(&dir.join(CONFIG_ECHO), cfg.to_echo())?;
    let mut manifest = String::new();
    for (i, img) in images.iter().enumerate() {
        let name = format!("window_{i:05}.{}", format.extension());
        let path = dir.join(&name);
        match format {
            ImageFormat::Png => io::write_png(&path, &quantize_image(img))?,
            ImageFormat::Raw => io::write_file(&path, gaf_to_bytes(img))?,
        }
        writeln!(manifest, "{i},{name},{},{}", img.label(), img.side()).expect("write to string");
    }
    io::write_file(&dir.join(MANIFEST), manifest)?;
    println!("encoded {} windows", images.len());
    Ok(dir)
}

fn cmd_train_teacher(cfg: &RunConfig, out: &Path, verbose: bool) -> CliResult<PathBuf> {
    let data = dataset(cfg)?;
    let (teacher, curve) = train_teacher(&data, &cfg.train_config())?;
    report_curve(&curve, verbose);
    let dir = io::create_run_dir(out, "train-teacher")?;
    io::write_file(&dir.join(CONFIG_ECHO), cfg.to_echo())?;
    io::write_file(&dir.join(METRICS), metrics_jsonl(&curve))?;
    save_network(&dir.join(TEACHER_CHECKPOINT), &teacher)?;
    let last = curve.last("test").expect("at least one epoch");
    println!("teacher test accuracy {} f1 {}", last.accuracy, last.f1);
    Ok(dir)
}

fn cmd_distill(cfg: &RunConfig, out: &Path, teacher: Option<&Path>, verbose: bool) -> CliResult<PathBuf> {
    let path = teacher
        .map(Path::to_path_buf)
        .or_else(|| cfg.teacher_checkpoint.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::input("distill needs --teacher or a teacher_checkpoint config key"))?;
    let teacher: TeacherNet = network_from_bytes(&read_checkpoint(&path)?)?;
    let data = dataset(cfg)?;
    check_compatible(&teacher, &data)?;
    let (student, curve) = distill_student(&data, &teacher, &cfg.train_config())?;
    report_curve(&curve, verbose);
    let dir = io::create_run_dir(out, "distill")?;
    // The echo records the teacher actually used.
    let echo = RunConfig { teacher_checkpoint: Some(path.display().to_string()), ..cfg.clone() };
    io::write_file(&dir.join(CONFIG_ECHO), echo.to_echo())?;
    io::write_file(&dir.join(METRICS), metrics_jsonl(&curve))?;
    save_network(&dir.join(STUDENT_CHECKPOINT), &student)?;
    let last = curve.last("test").expect("at least one epoch");
    println!("student test accuracy {} f1 {}", last.accuracy, last.f1);
    Ok(dir)
}

#[derive(serde::Serialize)]
struct EvalReport<'a> {
    kind: &'a str,
    source: String,
    samples: usize,
    #[serde(flatten)]
    evaluation: &'a Evaluation,
}

fn cmd_eval(cfg: &RunConfig, out: &Path, ckpt: &Path, input: Option<&Path>) -> CliResult<PathBuf> {
    let bytes = read_checkpoint(ckpt)?;
    let names = checkpoint::decode_tensors(&bytes)?;
    let kind = names.first().and_then(|(n, _)| n.split('.').next()).unwrap_or("").to_string();
    let (inputs, labels, source) = match input {
        Some(csv) => {
            let windows = io::read_sensor_csv(csv, cfg.window)?;
            let labels: Vec<usize> = windows.iter().map(|w| w.label()).collect();
            (encode_windows(&windows, cfg.side)?, labels, csv.display().to_string())
        }
        None => {
            let data = dataset(cfg)?;
            let view = if kind == TeacherNet::KIND { data.test.teacher } else { data.test.student };
            (view, data.test.labels, "synthetic test split".to_string())
        }
    };
    let evaluation = match kind.as_str() {
        k if k == TeacherNet::KIND => eval_network::<TeacherNet>(&bytes, &inputs, &labels)?,
        k if k == StudentNet::KIND => eval_network::<StudentNet>(&bytes, &inputs, &labels)?,
        _ => return Err(CliError::artifact(format!("{} holds neither a teacher nor a student", ckpt.display()))),
    };
    let report = EvalReport { kind: &kind, source, samples: labels.len(), evaluation: &evaluation };
    let json = serde_json::to_string(&report).expect("report serializes");
    let dir = io::create_run_dir(out, "eval")?;
    io::write_file(&dir.join(CONFIG_ECHO), cfg.to_echo())?;
    io::write_file(&dir.join(EVALUATION), format!("{json}\n"))?;
    println!("{json}");
    Ok(dir)
}

fn eval_network<N: Network>(bytes: &[u8], inputs: &vskd_core::Tensor, labels: &[usize]) -> CliResult<Evaluation> {
    let net: N = network_from_bytes(bytes)?;
    if net.input_width() != inputs.cols() {
        return Err(CliError::artifact(format!(
            "{} checkpoint expects {} inputs, the data has {}",
            N::KIND,
            net.input_width(),
            inputs.cols()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= net.classes()) {
        return Err(CliError::input(format!("label {bad} is outside the model's {} classes", net.classes())));
    }
    Ok(evaluate(&net, inputs, labels)?)
}

fn cmd_ablate(cfg: &RunConfig, out: &Path, seeds: u32, verbose: bool) -> CliResult<PathBuf> {
    if seeds == 0 {
        return Err(CliError::input("--seeds must be at least 1"));
    }
    let mut table = String::from("variant,seed,accuracy,f1\n");
    let mut teachers = String::from("seed,accuracy,f1\n");
    let mut sums = [0.0; Variant::ALL.len()];
    for k in 0..u64::from(seeds) {
        let run = RunConfig { seed: cfg.seed + k, ..cfg.clone() };
        let data = dataset(&run)?;
        let (teacher, curve) = train_teacher(&data, &run.train_config())?;
        report_curve(&curve, verbose);
        let t = curve.last("test").expect("at least one epoch");
        writeln!(teachers, "{},{},{}", run.seed, t.accuracy, t.f1).expect("write to string");
        let rows = run_ablation(&data, &teacher, &run.train_config())?;
        for (i, r) in rows.rows.iter().enumerate() {
            sums[i] += r.accuracy;
        }
        table.push_str(rows.to_csv().split_once('\n').map_or("", |(_, body)| body));
        if verbose {
            eprint!("{}", rows.to_csv());
        }
    }
    let dir = io::create_run_dir(out, "ablate")?;
    io::write_file(&dir.join(CONFIG_ECHO), cfg.to_echo())?;
    io::write_file(&dir.join(ABLATION_TABLE), &table)?;
    io::write_file(&dir.join(TEACHER_TABLE), &teachers)?;
    for (v, s) in Variant::ALL.iter().zip(sums) {
        println!("{:<8} mean accuracy {:.4}", v.name(), s / f64::from(seeds));
    }
    Ok(dir)
}

fn parse_fault(spec: &str) -> CliResult<(Primitive, f64)> {
    let (name, factor) = spec.split_once(':').unwrap_or((spec, "1.5"));
    let p: Primitive = name.parse().map_err(CliError::Input)?;
    let f: f64 = factor.parse().map_err(|_| CliError::input(format!("bad fault factor '{factor}'")))?;
    Ok((p, f))
}

fn cmd_gradcheck(cfg: &RunConfig, seeds: u32, fault: Option<&str>) -> CliResult<()> {
    let fault = fault.map(parse_fault).transpose()?;
    let report = run_gradcheck(seeds, cfg.seed, fault)?;
    for op in &report.ops {
        let status = if op.max_error < report.threshold { "ok" } else { "FAIL" };
        println!("{:<16} max relative error {:.3e}  {status}", op.name, op.max_error);
    }
    let failing: Vec<&str> = report.failing().iter().map(|o| o.name).collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("gradient check above {:e} for: {}", report.threshold, failing.join(", "))))
    }
}

/// Executes one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load_config(&cli.global)?;
    let out = cli.global.out.as_path();
    let verbose = cli.global.verbose;
    let dir = match &cli.command {
        Command::Encode { input, format, window } => {
            if let Some(w) = window {
                cfg.window = *w;
            }
            cfg.validate()?;
            cmd_encode(&cfg, out, input, *format)?
        }
        Command::TrainTeacher => {
            cfg.validate()?;
            cmd_train_teacher(&cfg, out, verbose)?
        }
        Command::Distill { teacher } => {
            cfg.validate()?;
            cmd_distill(&cfg, out, teacher.as_deref(), verbose)?
        }
        Command::Eval { checkpoint, input } => {
            cfg.validate()?;
            cmd_eval(&cfg, out, checkpoint, input.as_deref())?
        }
        Command::Ablate { seeds } => {
            cfg.validate()?;
            cmd_ablate(&cfg, out, *seeds, verbose)?
        }
        Command::Gradcheck { seeds, inject_fault } => return cmd_gradcheck(&cfg, *seeds, inject_fault.as_deref()),
    };
    println!("run directory: {}", dir.display());
    Ok(())
}
