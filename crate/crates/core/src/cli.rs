//! Command implementations behind the `corridorflow` binary.
//!
//! Human-readable output goes to stdout, artifacts to files, errors to
//! stderr. Exit codes: 2 config/usage, 3 I/O or malformed input, 4 numerical
//! abort, 5 gradient check failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::flowmatch::euler_sample;
use crate::geometry::{rdp_dp_select, uniform_select, AnchorMethod, Polyline, Vec3};
use crate::harness::{
    eval_settings, evaluate, grad_check_run, held_out_with, run_ablation_suite, train, Checkpoint, GradCheckSettings,
    RunConfig, RunPaths,
};
use crate::rng::{stream, Stream};
use crate::synthdata::{generate_dataset, read_dataset, write_dataset, Record};

#[derive(Debug, Parser)]
#[command(name = "corridorflow", version, about = "Corridor-constrained flow matching over action chunks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic chunk dataset (JSON lines).
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `data.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pick K anchor indices on a polyline given as a JSON array of [x,y,z].
    SelectAnchors {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "rdp_dp")]
        method: AnchorMethod,
    },
    /// Train a model; writes metrics.jsonl and checkpoint.json.
    Train(RunArgs),
    /// Score a checkpoint on the held-out split; prints the report.
    Eval(RunArgs),
    /// Sample chunks for held-out contexts; writes samples.jsonl.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        /// Number of contexts to sample for (default: all held-out).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Finite-difference check of the configured objective.
    GradCheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
    },
    /// Train the nine ablation variants; writes ablation.csv / ablation.json.
    Ablate(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Dataset file; otherwise `train.dataset`, otherwise generated from
    /// the `data` section.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint to read (eval/sample); defaults to the run's own.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// What went wrong, mapped onto an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("gradient check failed: max relative error {max_rel_err:e} > tol {tol:e} at {param}[{index}]")]
    GradCheck {
        max_rel_err: f64,
        tol: f64,
        param: String,
        index: usize,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(e) => match e {
                Error::Config(_) | Error::InvalidArgument(_) => 2,
                Error::Io { .. } | Error::Parse { .. } | Error::Schema { .. } => 3,
                Error::Numerical { .. } | Error::NanGradient { .. } => 4,
                Error::State(_) => 1,
            },
            CliError::GradCheck { .. } => 5,
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code after reporting any error on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> std::result::Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out, seed } => gen_data(&config, &out, seed)?,
        Command::SelectAnchors { input, k, method } => select_anchors(&input, k, method)?,
        Command::Train(a) => cmd_train(&a)?,
        Command::Eval(a) => cmd_eval(&a)?,
        Command::Sample { run, n } => cmd_sample(&run, n)?,
        Command::GradCheck { run, tol, coords, h } => cmd_grad_check(&run, tol, coords, h)?,
        Command::Ablate(a) => cmd_ablate(&a)?,
    }
    Ok(())
}

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_data(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if seed.is_some() {
        cfg.data.seed = seed;
    }
    let seed = cfg
        .data
        .seed
        .ok_or_else(|| Error::Config("missing field `data.seed` (or pass --seed)".into()))?;
    let records = generate_dataset(&cfg.data, seed, cfg.corridor.alpha)?;
    write_dataset(out, &records)?;
    let mut echo = out.as_os_str().to_owned();
    echo.push(".config.json");
    write_text(Path::new(&echo), &cfg.resolved_json())?;
    say!("{} records written to {}", records.len(), out.display());
    Ok(())
}

fn read_polyline(path: &Path) -> Result<Polyline> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let points: Vec<Vec3> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    Polyline::new(points)
}

fn select_anchors(input: &Path, k: usize, method: AnchorMethod) -> Result<()> {
    let poly = read_polyline(input)?;
    let n = poly.len();
    if k == 0 || k + 1 >= n {
        return Err(Error::invalid(format!("k = {k} is infeasible for {n} points (need 1 <= k <= N-2)")));
    }
    let (indices, objective) = match method {
        AnchorMethod::RdpDp => {
            let sel = rdp_dp_select(&poly, k)?;
            (sel.indices, sel.objective)
        }
        AnchorMethod::Uniform => {
            let set = uniform_select(n, k)?;
            let mut retained = vec![0];
            retained.extend(set.indices.iter().copied().filter(|&i| i < n - 1));
            retained.push(n - 1);
            let obj = poly.approximation_error(&retained)?;
            (set.indices, obj)
        }
    };
    let joined: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
    say!("indices: {}", joined.join(" "));
    say!("objective: {objective}");
    Ok(())
}

/// Run config with flag overrides applied, echoed to the output directory.
fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&a.config)?;
    if a.seed.is_some() {
        cfg.train.seed = a.seed;
    }
    if a.dataset.is_some() {
        cfg.train.dataset = a.dataset.clone();
    }
    cfg.train_seed()?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    write_text(&a.out_dir.join("config.resolved.json"), &cfg.resolved_json())?;
    Ok(cfg)
}

fn records_for(cfg: &RunConfig) -> Result<Vec<Record>> {
    match &cfg.train.dataset {
        Some(p) => read_dataset(p),
        None => {
            let seed = cfg
                .data
                .seed
                .ok_or_else(|| Error::Config("no dataset given and missing field `data.seed`".into()))?;
            generate_dataset(&cfg.data, seed, cfg.corridor.alpha)
        }
    }
}

fn cmd_train(a: &RunArgs) -> Result<()> {
    let cfg = run_config(a)?;
    let records = records_for(&cfg)?;
    let paths = RunPaths::in_dir(&a.out_dir, &cfg);
    let run = train(&cfg, &records, Some(&paths))?;
    let rep = run.final_report();
    say!(
        "trained {} steps: endpoint_error={:.6} violation_rate={:.4} anchor_mae={:.6} fm_val_loss={:.4}",
        cfg.train.steps, rep.endpoint_error, rep.corridor_violation_rate, rep.anchor_mae, rep.fm_val_loss
    );
    say!("metrics: {}", paths.metrics.display());
    say!("checkpoint: {}", paths.checkpoint.display());
    Ok(())
}

fn checkpoint_for(a: &RunArgs, cfg: &RunConfig) -> Result<Checkpoint> {
    let path = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| RunPaths::in_dir(&a.out_dir, cfg).checkpoint);
    let ck = Checkpoint::load(&path)?;
    if ck.arch != cfg.arch() {
        return Err(Error::Config(format!(
            "checkpoint architecture {:?} does not match the config {:?}",
            ck.arch,
            cfg.arch()
        )));
    }
    Ok(ck)
}

fn cmd_eval(a: &RunArgs) -> Result<()> {
    let cfg = run_config(a)?;
    let model = checkpoint_for(a, &cfg)?.model()?;
    let records = records_for(&cfg)?;
    let (_, examples) = held_out_with(
        &records,
        &cfg.data,
        &cfg.corridor,
        cfg.train.holdout_every,
        cfg.eval.max_records,
        &model.norm,
    )?;
    let report = evaluate(&model, &examples, eval_settings(&cfg)?)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&a.out_dir.join("eval.json"), &text)?;
    say!("{text}");
    Ok(())
}

fn cmd_sample(a: &RunArgs, n: Option<usize>) -> Result<()> {
    let cfg = run_config(a)?;
    let model = checkpoint_for(a, &cfg)?.model()?;
    let records = records_for(&cfg)?;
    let (held, examples) = held_out_with(&records, &cfg.data, &cfg.corridor, cfg.train.holdout_every, n, &model.norm)?;
    let layout = cfg.corridor.layout();
    let width = layout.width();
    let mut rng = stream(cfg.eval_seed()?, Stream::Sample);
    let mut out = Vec::with_capacity(held.len());
    for (rec, ex) in held.iter().zip(&examples) {
        let rows = euler_sample(&model, &model.norm, &ex.context, cfg.eval.sampler_steps, width, &mut rng)?;
        // without the extra columns the commanded delta doubles as the
        // spatial read-out
        let chunk = rows
            .into_iter()
            .map(|r| {
                if width == 7 {
                    r
                } else {
                    let mut full = r.clone();
                    full.extend_from_slice(&r[..3]);
                    full
                }
            })
            .collect();
        out.push(Record {
            chunk,
            generated: true,
            ..rec.clone()
        });
    }
    let path = a.out_dir.join("samples.jsonl");
    write_dataset(&path, &out)?;
    say!("{} generated chunks written to {}", out.len(), path.display());
    Ok(())
}

fn cmd_grad_check(a: &RunArgs, tol: f64, coords: usize, h: f64) -> std::result::Result<(), CliError> {
    let cfg = run_config(a)?;
    if !(tol > 0.0 && h > 0.0) || coords == 0 {
        return Err(Error::invalid("tol, h and coords must be positive").into());
    }
    let records = records_for(&cfg)?;
    let settings = GradCheckSettings {
        h,
        coords,
        seed: cfg.train_seed()?,
        tol,
    };
    let report = grad_check_run(&cfg, &records, settings)?;
    let text = format!(
        "{{\"max_rel_err\": {:e}, \"worst_param\": \"{}\", \"worst_index\": {}, \"checked\": {}, \"skipped_kinks\": {}}}",
        report.max_rel_err, report.worst_param, report.worst_index, report.checked, report.skipped_kinks
    );
    write_text(&a.out_dir.join("gradcheck.json"), &text)?;
    say!("{text}");
    if report.max_rel_err > tol {
        return Err(CliError::GradCheck {
            max_rel_err: report.max_rel_err,
            tol,
            param: report.worst_param,
            index: report.worst_index,
        });
    }
    Ok(())
}

fn cmd_ablate(a: &RunArgs) -> Result<()> {
    let cfg = run_config(a)?;
    let records = records_for(&cfg)?;
    let rows = run_ablation_suite(&cfg, &records, Some(&a.out_dir))?;
    let _ = std::io::stdout().lock().write_all(crate::harness::ablation_csv(&rows).as_bytes());
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("variant {} failed: {}", r.variant, r.error.as_deref().unwrap_or(""));
    }
    Ok(())
}
