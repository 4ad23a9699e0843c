//! ContrastForge command line: phantom dataset generation, training,
//! synthesis, evaluation, and report emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use contrastforge_core::config::TrainConfig;
use contrastforge_core::dataset::{build_phantom_dataset, NoiseTarget, PhantomSpec, Role};
use contrastforge_core::error::{Error, Result};
use contrastforge_core::io;
use contrastforge_core::metrics::evaluate;
use contrastforge_core::report::{format_table, parse_csv, report_csv};
use contrastforge_core::trainer::{load_model, synthesize_any, train};
use contrastforge_core::volume::Volume;

#[derive(Parser)]
#[command(
    name = "contrastforge",
    version,
    about = "Multi-contrast MR phantom synthesis: train paired/unpaired conditional adversarial models and evaluate them"
)]
struct Cli {
    /// Worker threads for slice-parallel stages (default 1 for bit-exact
    /// reproducibility; the CONTRASTFORGE_THREADS env var is the fallback)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a normalized multi-contrast phantom dataset
    Phantom(PhantomArgs),
    /// Train a model as described by a config file
    Train(TrainArgs),
    /// Synthesize the counterpart contrast of a source volume
    Synth(SynthArgs),
    /// Compute PSNR/SSIM of synthesized volumes against references
    Eval(EvalArgs),
    /// Merge evaluation CSVs into one comparison table
    Report(ReportArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Number of subjects
    #[arg(long)]
    subjects: usize,
    /// In-plane slice size (height = width)
    #[arg(long)]
    size: usize,
    /// Axial slices per volume
    #[arg(long, default_value_t = 16)]
    slices: usize,
    /// Dataset seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Also write rigidly misaligned volume variants
    #[arg(long)]
    misalign: bool,
    /// Additive render-noise amplitude relative to the mean brain signal
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Which contrast receives noise: both|t1w|t2w
    #[arg(long, default_value = "both")]
    noise_contrast: String,
    /// Fraction of subjects assigned to the training split
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Distinct tissue classes (2..=5)
    #[arg(long, default_value_t = 5)]
    tissues: usize,
    /// Misalignment rotation bound in degrees
    #[arg(long, default_value_t = 5.0)]
    max_rot: f64,
    /// Misalignment shift bound in voxels
    #[arg(long, default_value_t = 3.0)]
    max_shift: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file path
    #[arg(long)]
    config: PathBuf,
    /// key=value config overrides
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Resume from a checkpoint produced by the same config
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Source volume (.cfv)
    #[arg(long)]
    source: PathBuf,
    /// Output volume (.cfv)
    #[arg(long)]
    out: PathBuf,
    /// Also export every axial slice as 16-bit PGM into this directory
    #[arg(long)]
    export_pgm: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of synthesized volumes
    #[arg(long)]
    pred: PathBuf,
    /// Directory of reference volumes (matched by file name)
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Task label for the report rows (default derived from contrast tags)
    #[arg(long)]
    task: Option<String>,
    /// Method label for the report rows
    #[arg(long, default_value = "model")]
    method: String,
    /// Restrict PSNR to nonzero reference voxels
    #[arg(long)]
    masked: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation CSVs to merge
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Output text table
    #[arg(long)]
    out: PathBuf,
    /// Optional merged CSV path
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("CONTRASTFORGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
        })
        .unwrap_or(1)
        .max(1);
    let outcome = match cli.command {
        Command::Phantom(a) => cmd_phantom(a, threads),
        Command::Train(a) => cmd_train(a),
        Command::Synth(a) => cmd_synth(a, threads),
        Command::Eval(a) => cmd_eval(a, threads),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Frozen record of a command's fully resolved arguments, written next to its
/// outputs. Contains no timestamps so reruns are byte-identical.
fn write_run_record(path: &Path, lines: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in lines {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(v);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_phantom(a: PhantomArgs, threads: usize) -> Result<()> {
    let spec = PhantomSpec {
        subjects: a.subjects,
        dims: [a.slices, a.size, a.size],
        seed: a.seed,
        n_tissues: a.tissues,
        train_fraction: a.train_fraction,
        noise_amplitude: a.noise,
        noise_target: NoiseTarget::parse(&a.noise_contrast)?,
        misalign: a.misalign,
        max_rot_deg: a.max_rot,
        max_shift_vox: a.max_shift,
    };
    let manifest = build_phantom_dataset(&spec, &a.out, threads)?;
    write_run_record(
        &a.out.join("phantom.run.txt"),
        &[
            ("command", "phantom".into()),
            ("subjects", a.subjects.to_string()),
            ("dims", format!("{} {} {}", a.slices, a.size, a.size)),
            ("seed", a.seed.to_string()),
            ("tissues", a.tissues.to_string()),
            ("train_fraction", a.train_fraction.to_string()),
            ("noise", a.noise.to_string()),
            ("noise_contrast", spec.noise_target.label()),
            ("misalign", a.misalign.to_string()),
            ("max_rot", a.max_rot.to_string()),
            ("max_shift", a.max_shift.to_string()),
        ],
    )?;
    let n_train = manifest.subjects_with_role(Role::Train).len();
    let n_test = manifest.subjects_with_role(Role::Test).len();
    println!(
        "dataset: {} subjects ({n_train} train / {n_test} test), dims {}x{}x{}, out {}",
        manifest.subjects.len(),
        manifest.dims[0],
        manifest.dims[1],
        manifest.dims[2],
        a.out.display()
    );
    for (c, s) in &manifest.norm_stats {
        println!("norm {}: pooled mean {:.6} std {:.6}", c.label(), s.mean, s.std);
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let mut cfg = TrainConfig::parse(&text)?;
    for ov in &a.overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("override '{ov}' is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let summary = train(&cfg, a.resume.as_deref())?;
    println!(
        "trained {} epochs ({} mode); final checkpoint {}",
        summary.epochs_completed,
        cfg.mode.label(),
        summary.final_checkpoint.display()
    );
    println!("runlog {}", summary.out_dir.join("runlog.csv").display());
    Ok(())
}

fn cmd_synth(a: SynthArgs, threads: usize) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let source = io::read_volume(&a.source)?;
    let out = synthesize_any(&model, &source, threads)?;
    io::write_volume(&a.out, &out)?;
    if let Some(dir) = &a.export_pgm {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = a
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "slice".into());
        for z in 0..out.dims[0] {
            let path = dir.join(format!("{stem}_z{z:03}.pgm"));
            io::write_pgm16(&path, out.dims[1], out.dims[2], out.slice(z))?;
        }
    }
    write_run_record(
        &run_record_path(&a.out),
        &[
            ("command", "synth".into()),
            ("ckpt", a.ckpt.display().to_string()),
            ("source", a.source.display().to_string()),
            ("out", a.out.display().to_string()),
        ],
    )?;
    println!(
        "synthesized {} volume {} from {}",
        out.contrast.label(),
        a.out.display(),
        a.source.display()
    );
    Ok(())
}

fn run_record_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    name.push_str(".run.txt");
    out.with_file_name(name)
}

fn volumes_in(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut entries = Vec::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "cfv") {
            entries.push((entry.file_name().to_string_lossy().to_string(), path));
        }
    }
    entries.sort();
    Ok(entries)
}

fn cmd_eval(a: EvalArgs, threads: usize) -> Result<()> {
    let pred_files = volumes_in(&a.pred)?;
    let ref_files = volumes_in(&a.reference)?;
    let mut preds: Vec<Volume> = Vec::new();
    let mut refs: Vec<Volume> = Vec::new();
    for (name, pred_path) in &pred_files {
        if let Some((_, ref_path)) = ref_files.iter().find(|(n, _)| n == name) {
            preds.push(io::read_volume(pred_path)?);
            refs.push(io::read_volume(ref_path)?);
        }
    }
    if preds.is_empty() {
        return Err(Error::data(format!(
            "no matching volume file names between {} and {}",
            a.pred.display(),
            a.reference.display()
        )));
    }
    let task = a.task.unwrap_or_else(|| {
        let c = refs[0].contrast;
        format!("{}->{}", c.other().label(), c.label())
    });
    let report = evaluate(&task, &a.method, &preds, &refs, a.masked, threads)?;
    let csv = report_csv(&[report])?;
    fs::write(&a.out, csv).map_err(|e| Error::io(&a.out, e))?;
    write_run_record(
        &run_record_path(&a.out),
        &[
            ("command", "eval".into()),
            ("pred", a.pred.display().to_string()),
            ("ref", a.reference.display().to_string()),
            ("task", task.clone()),
            ("method", a.method.clone()),
            ("masked", a.masked.to_string()),
            ("n_volumes", preds.len().to_string()),
        ],
    )?;
    println!("evaluated {} volume pairs ({task}, {})", preds.len(), a.method);
    println!("report {}", a.out.display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for input in &a.inputs {
        let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
        rows.extend(parse_csv(&text)?);
    }
    let table = format_table(&rows)?;
    fs::write(&a.out, &table).map_err(|e| Error::io(&a.out, e))?;
    if let Some(csv_out) = &a.csv_out {
        let mut merged = String::from(contrastforge_core::report::CSV_HEADER);
        merged.push('\n');
        for (task, method, metric, mean, std, n) in &rows {
            merged.push_str(&format!("{task},{method},{metric},{mean:.6},{std:.6},{n}\n"));
        }
        fs::write(csv_out, merged).map_err(|e| Error::io(csv_out, e))?;
    }
    write_run_record(
        &run_record_path(&a.out),
        &[
            ("command", "report".into()),
            (
                "inputs",
                a.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" "),
            ),
            ("out", a.out.display().to_string()),
        ],
    )?;
    print!("{table}");
    Ok(())
}
