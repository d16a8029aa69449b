//! `depthnet` command line: data generation, training, ablation,
//! completion, evaluation, sparsity sweeps and diagnostics.
//!
//! Data goes to files or stdout, diagnostics to stderr. Exit code 0 on
//! success, 2 for usage and extent errors, 1 for every other failure.

mod gradcheck;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use gradcheck::{check_dcn_mse, check_lcn_chamfer, grad_check_suite, GradCheckEntry};

use crate::dcn::{dcn_param_count, DcnConfig};
use crate::error::Error;
use crate::eval_metrics::{evaluate, MetricsReport};
use crate::geometry::io::{read_depth_pgm, write_depth_pgm};
use crate::lcn::{lcn_param_count, LcnConfig};
use crate::synthetic_data::{
    generate_dataset, read_dataset, read_sample, write_dataset, SceneConfig,
};
use crate::training::{
    load_checkpoint, run_ablation_suite, save_checkpoint, sweep, sweep_csv, train_two_stage,
    write_loss_csv, Pipeline, TrainConfig, Variant,
};

#[derive(Debug, Parser)]
#[command(name = "depthnet", version, about = "Two-stage LiDAR depth completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train both stages and write a checkpoint plus loss curves.
    Train(TrainArgs),
    /// Train and score ablation variants; one CSV row per variant.
    Ablate(AblateArgs),
    /// Complete one sample with a trained checkpoint.
    Complete(CompleteArgs),
    /// Score a predicted depth image against ground truth.
    Eval(EvalArgs),
    /// Score a checkpoint on sparser and sparser input.
    Sweep(SweepArgs),
    /// Finite-difference check of every differentiable operation.
    GradCheck(GradCheckArgs),
    /// Print network parameter counts.
    ParamCount(ParamCountArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 0.04)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub stage1_epochs: u64,
    #[arg(long, default_value_t = 11, value_parser = clap::value_parser!(u64).range(1..))]
    pub stage2_epochs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ScheduleArgs {
    fn config(&self, variant: Variant) -> TrainConfig {
        TrainConfig {
            stage1_epochs: self.stage1_epochs as usize,
            stage2_epochs: self.stage2_epochs as usize,
            seed: self.seed,
            variant,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    Model1,
    Model2,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::Model1 => Variant::Model1,
            VariantArg::Model2 => Variant::Model2,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; loss curves go next to it with a `.csv` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    pub variant: VariantArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblateVariant {
    Full,
    Model1,
    Model2,
    All,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset; defaults to the last quarter of `--data`.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AblateVariant::All)]
    pub variant: AblateVariant,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub sample: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64,256")]
    pub ratios: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ParamCountArgs {}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Dimension(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Error::io(path, e).into()
}

fn emit(out: &mut dyn Write, dest: Option<&Path>, text: &str) -> CmdResult {
    match dest {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::GenData(a) => gen_data(a, out, err),
        Command::Train(a) => train(a, err),
        Command::Ablate(a) => ablate(a, out, err),
        Command::Complete(a) => complete(a, err),
        Command::Eval(a) => eval(a, out, err),
        Command::Sweep(a) => sweep_cmd(a, out, err),
        Command::GradCheck(a) => grad_check(a, out, err),
        Command::ParamCount(_) => param_count(out, err),
    }
}

fn log(err: &mut dyn Write, text: &str) {
    let _ = write!(err, "{text}");
    if !text.ends_with('\n') {
        let _ = writeln!(err);
    }
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let config = SceneConfig {
        width: a.width,
        height: a.height,
        target_density: a.density,
        ..SceneConfig::default()
    };
    log(err, &format!("config: {config:?}\nseed: {}", a.seed));
    config.validate()?;
    let samples = generate_dataset(&config, a.count, a.seed)?;
    write_dataset(&a.out, &samples)?;
    let _ = writeln!(out, "wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs, err: &mut dyn Write) -> CmdResult {
    let config = a.schedule.config(a.variant.into());
    log(err, &crate::training::describe_config(&config));
    let data = read_dataset(&a.data)?;
    let outcome = train_two_stage(&data, &config)?;
    save_checkpoint(&a.out, &outcome.to_checkpoint())?;
    let csv = a.out.with_extension("csv");
    write_loss_csv(&csv, &outcome.losses)?;
    log(
        err,
        &format!("checkpoint: {}\nloss curves: {}", a.out.display(), csv.display()),
    );
    Ok(())
}

fn ablate(a: AblateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let config = a.schedule.config(Variant::Full);
    log(err, &crate::training::describe_config(&config));
    let mut data = read_dataset(&a.data)?;
    let heldout = match &a.heldout {
        Some(p) => read_dataset(p)?,
        None => {
            if data.len() < 2 {
                return Err(Error::Config("need at least two samples to split".into()).into());
            }
            let keep = data.len() - (data.len() / 4).max(1);
            data.split_off(keep)
        }
    };
    let variants: Vec<Variant> = match a.variant {
        AblateVariant::All => Variant::ALL.to_vec(),
        AblateVariant::Full => vec![Variant::Full],
        AblateVariant::Model1 => vec![Variant::Model1],
        AblateVariant::Model2 => vec![Variant::Model2],
    };
    let runs = run_ablation_suite(&data, &heldout, &config, &variants)?;
    let mut csv = format!("variant,{}\n", MetricsReport::CSV_HEADER);
    for r in &runs {
        csv.push_str(&format!("{},{}\n", r.variant.as_str(), r.report.csv_row()));
    }
    emit(out, a.out.as_deref(), &csv)
}

fn load_pipeline(path: &Path, err: &mut dyn Write) -> std::result::Result<Pipeline, Failure> {
    let ckpt = load_checkpoint(path)?;
    log(err, &crate::training::describe_config(&ckpt.config));
    Ok(Pipeline::from_checkpoint(&ckpt))
}

fn complete(a: CompleteArgs, err: &mut dyn Write) -> CmdResult {
    let pipeline = load_pipeline(&a.ckpt, err)?;
    let sample = read_sample(&a.sample)?;
    let pred = pipeline.predict(&sample)?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_depth_pgm(&a.out.join("dense_lcn.pgm"), &pred.coarse)?;
    write_depth_pgm(&a.out.join("dense.pgm"), &pred.dense)?;
    log(err, &format!("wrote dense_lcn.pgm and dense.pgm to {}", a.out.display()));
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    log(err, &format!("pred: {}\ngt: {}", a.pred.display(), a.gt.display()));
    let pred = read_depth_pgm(&a.pred)?;
    let gt = read_depth_pgm(&a.gt)?;
    let report = evaluate(&pred, &gt)?;
    emit(out, None, &report.to_text())
}

fn sweep_cmd(a: SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let pipeline = load_pipeline(&a.ckpt, err)?;
    log(err, &format!("ratios: {:?}\nseed: {}", a.ratios, a.seed));
    let data = read_dataset(&a.data)?;
    let rows = sweep(&pipeline, &data, &a.ratios, a.seed)?;
    emit(out, a.out.as_deref(), &sweep_csv(&rows))
}

fn grad_check(a: GradCheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    log(
        err,
        &format!("instances: {}\neps: {}\ntol: {}\nseed: {}", a.instances, a.eps, a.tol, a.seed),
    );
    let entries = grad_check_suite(a.instances.max(1), a.seed, a.eps)?;
    let mut failed = Vec::new();
    let mut text = String::from("op,instances,max_rel_error,pass\n");
    for e in &entries {
        let pass = e.report.passed(a.tol);
        if !pass {
            failed.push(e.name);
        }
        text.push_str(&format!("{},{},{:e},{}\n", e.name, e.instances, e.report.max_rel_error, pass));
    }
    emit(out, None, &text)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("gradient check failed for {}", failed.join(", ")),
        })
    }
}

fn param_count(out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let desk = TrainConfig::default();
    log(err, &format!("desk lcn: {:?}\ndesk dcn: {:?}", desk.lcn, desk.dcn));
    let mut text = String::from("network,preset,params\n");
    let rows = [
        ("lcn", "desk", lcn_param_count(&desk.lcn)),
        ("lcn", "paper", lcn_param_count(&LcnConfig::paper_scale())),
        ("dcn_dual", "desk", dcn_param_count(&desk.dcn)),
        ("dcn_single_matched", "desk", dcn_param_count(&desk.dcn.matched_single_pathway())),
        ("dcn_dual", "paper", dcn_param_count(&DcnConfig::paper_scale())),
    ];
    for (net, preset, n) in rows {
        text.push_str(&format!("{net},{preset},{n}\n"));
    }
    emit(out, None, &text)
}

/// Entry point for the binary.
pub fn main_from_env() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
