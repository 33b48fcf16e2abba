//! Command-line front end over the core library: dataset synthesis, mesh
//! sampling, training, evaluation, ablation sweeps, gradient verification,
//! and report rendering.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data or format
//! error, 3 numeric failure (divergence or a failed gradient check).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dfa_core::checkpoint::{checkpoint_dtype, load_checkpoint};
use dfa_core::data::{
    parse_off, read_pcb, sample_surface_uniform, write_pcb, generate_synthetic_set, PointCloud,
    ShapeKind, SynthSpec,
};
use dfa_core::dfa::Aggregation;
use dfa_core::error::{Error, Result};
use dfa_core::graph::Domain;
use dfa_core::models::{count_parameters, parse_domain, ModelConfig, Network, Task};
use dfa_core::suite::run_gradient_suite;
use dfa_core::train::ablation::run_ablation;
use dfa_core::train::metrics::{
    evaluate_classification, evaluate_part_segmentation, EpochStat, MetricReport, PartCatalog,
};
use dfa_core::train::report::{
    ablation_csv, curves_svg, training_csv, write_text, TRAINING_CSV_HEADER,
};
use dfa_core::train::{train, TrainConfig};
use dfa_core::{Dtype, Scalar};

#[derive(Parser)]
#[command(name = "dfa", version, about = "Point-cloud learning with dynamic feature graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset and write it as a PCB file.
    Synth(SynthArgs),
    /// Sample a point cloud uniformly from an OFF mesh surface.
    SampleOff(SampleOffArgs),
    /// Train a model and write its checkpoint, metrics CSV, and curves.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Train one model per ablation cell and write the results CSV.
    Ablate(AblateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Render training curves from a metrics CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct ModelOpts {
    /// Task the model solves.
    #[arg(long, default_value = "cls", value_parser = Task::parse)]
    task: Task,
    /// Points per cloud the configuration is described with.
    #[arg(long)]
    points: Option<usize>,
    /// Neighbors per point in every graph build.
    #[arg(long)]
    k: Option<usize>,
    /// Neighbor aggregation: max|sum|mean|attn.
    #[arg(long, value_parser = Aggregation::parse)]
    agg: Option<Aggregation>,
    /// Graph domain after the first layer: feature|spatial.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain>,
    /// Drop the geometric position encoding from every edge kernel.
    #[arg(long)]
    no_pos_enc: bool,
    /// Drop the low-dimensional global feature branch.
    #[arg(long)]
    no_global: bool,
    /// Uniform multiplier on every hidden width.
    #[arg(long)]
    width_scale: Option<f64>,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Clouds per optimizer step.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Numeric width of parameters and arithmetic.
    #[arg(long, default_value = "32", value_parser = parse_precision)]
    precision: Dtype,
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated class list: sphere|cube|torus|plane|lollipop.
    #[arg(long, default_value = "sphere,cube,torus,plane")]
    shapes: String,
    /// Clouds generated per class.
    #[arg(long, default_value_t = 16)]
    per_class: usize,
    #[arg(long, default_value_t = 256)]
    points: usize,
    /// Surface noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output PCB path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleOffArgs {
    /// Input OFF mesh.
    #[arg(long)]
    data: PathBuf,
    /// Points to sample.
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output PCB path (a one-cloud batch).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (PCB).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    training: TrainOpts,
    /// Where the best checkpoint is written.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Directory that receives training.csv and curves.svg.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation dataset (PCB).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to evaluate; its stored precision is used.
    #[arg(long)]
    ckpt: PathBuf,
    /// Clouds per forward pass.
    #[arg(long, default_value_t = 16)]
    batch: usize,
}

#[derive(Args)]
struct AblateArgs {
    /// Training dataset (PCB).
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset the cells are scored on (PCB).
    #[arg(long)]
    test_data: PathBuf,
    /// Sweep description, e.g. "k=4,8;aggregation=max,mean".
    #[arg(long)]
    grid: String,
    /// Comma-separated training seeds averaged per cell.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    training: TrainOpts,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Probe fewer coordinates per check.
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics CSV produced by `train`.
    #[arg(long)]
    data: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_precision(s: &str) -> Result<Dtype> {
    match s {
        "32" => Ok(Dtype::F32),
        "64" => Ok(Dtype::F64),
        other => Err(Error::Config(format!("unknown precision '{other}' (expected 32|64)"))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap folds --help/--version into Err; they are not failures.
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args)?,
        Command::SampleOff(args) => cmd_sample_off(args)?,
        Command::Train(args) => match args.training.precision {
            Dtype::F32 => cmd_train::<f32>(args)?,
            Dtype::F64 => cmd_train::<f64>(args)?,
        },
        Command::Eval(args) => match checkpoint_dtype(&args.ckpt)? {
            Dtype::F32 => cmd_eval::<f32>(args)?,
            Dtype::F64 => cmd_eval::<f64>(args)?,
        },
        Command::Ablate(args) => match args.training.precision {
            Dtype::F32 => cmd_ablate::<f32>(args)?,
            Dtype::F64 => cmd_ablate::<f64>(args)?,
        },
        Command::Gradcheck(args) => return cmd_gradcheck(args),
        Command::Report(args) => cmd_report(args)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let classes: Result<Vec<ShapeKind>> =
        args.shapes.split(',').map(|t| ShapeKind::parse(t.trim())).collect();
    let spec = SynthSpec {
        classes: classes?,
        per_class: args.per_class,
        points: args.points,
        noise: args.noise,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let clouds = generate_synthetic_set(&spec, &mut rng)?;
    write_pcb(&args.out, &clouds)?;
    println!(
        "wrote {} clouds ({} classes x {}, {} points each) to {}",
        clouds.len(),
        spec.classes.len(),
        spec.per_class,
        spec.points,
        args.out.display()
    );
    Ok(())
}

fn cmd_sample_off(args: SampleOffArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.data)?;
    let mesh = parse_off(&text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut cloud = sample_surface_uniform(&mesh, args.points, &mut rng)?;
    cloud.normalize();
    write_pcb(&args.out, std::slice::from_ref(&cloud))?;
    println!(
        "sampled {} points from {} triangles to {}",
        args.points,
        mesh.faces.len(),
        args.out.display()
    );
    Ok(())
}

/// Builds the model configuration for `clouds`, sizing the output heads from
/// the labels present and applying the command-line overrides.
fn configure_model(opts: &ModelOpts, clouds: &[PointCloud]) -> Result<ModelConfig> {
    let first = clouds
        .first()
        .ok_or_else(|| Error::Config("dataset holds no clouds".into()))?;
    let mut cfg = match opts.task {
        Task::Classification => {
            let max = clouds
                .iter()
                .map(|c| c.class_label.unwrap_or(-1))
                .max()
                .expect("non-empty");
            if max < 0 {
                return Err(Error::Config("classification data carries no class labels".into()));
            }
            ModelConfig::classification(max as usize + 1)
        }
        Task::PartSegmentation | Task::SemanticSegmentation => {
            let max = clouds
                .iter()
                .filter_map(|c| c.part_labels.as_ref())
                .flat_map(|p| p.iter().copied())
                .max()
                .unwrap_or(-1);
            if max < 0 {
                return Err(Error::Config("segmentation data carries no part labels".into()));
            }
            let parts = max as usize + 1;
            match opts.task {
                Task::PartSegmentation => ModelConfig::part_segmentation(1, parts),
                _ => ModelConfig::semantic_segmentation(parts),
            }
        }
    };
    cfg.num_points = opts.points.unwrap_or(first.len());
    cfg.input_dim = first.input_dim();
    if let Some(k) = opts.k {
        cfg.k = k;
    }
    if let Some(agg) = opts.agg {
        cfg.aggregation = agg;
    }
    if let Some(domain) = opts.domain {
        cfg.graph_domain = domain;
    }
    if opts.no_pos_enc {
        cfg.use_position_encoding = false;
    }
    if opts.no_global {
        cfg.use_low_dim_global = false;
    }
    if let Some(ws) = opts.width_scale {
        cfg.width_scale = ws;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_training(opts: &TrainOpts, task: Task) -> Result<TrainConfig> {
    let mut tcfg = if task == Task::Classification {
        TrainConfig::classification()
    } else {
        TrainConfig::segmentation()
    };
    if let Some(lr) = opts.lr {
        tcfg.lr = lr;
        tcfg.lr_final = tcfg.lr_final.min(lr);
    }
    if let Some(epochs) = opts.epochs {
        tcfg.epochs = epochs;
    }
    if let Some(batch) = opts.batch {
        tcfg.batch_size = batch;
    }
    tcfg.seed = opts.seed;
    tcfg.validate()?;
    Ok(tcfg)
}

/// Part segmentation runs against a single category spanning every part id
/// seen in the data; classification passes no catalog through.
fn catalog_for(task: Task, cfg: &ModelConfig) -> Result<Option<PartCatalog>> {
    match task {
        Task::Classification => Ok(None),
        _ => Ok(Some(PartCatalog::single_category(cfg.num_parts as u32)?)),
    }
}

fn print_report(report: &MetricReport) {
    println!("epochs: {}", report.epochs.len());
    println!("overall accuracy: {:.4}", report.oa);
    println!("mean class accuracy: {:.4}", report.macc);
    if let Some(miou) = report.miou {
        println!("mean IoU: {miou:.4}");
    }
    println!("wall clock: {:.1}s", report.wall_clock_s);
    println!("fingerprint: {}", report.fingerprint);
}

fn cmd_train<S: Scalar>(args: TrainArgs) -> Result<()> {
    let clouds = read_pcb(&args.data)?;
    let cfg = configure_model(&args.model, &clouds)?;
    let tcfg = configure_training(&args.training, args.model.task)?;
    let catalog = catalog_for(args.model.task, &cfg)?;
    let net = Network::build(cfg)?;
    println!(
        "training {} on {} clouds ({} trainable parameters, {}-bit)",
        net.cfg.task.token(),
        clouds.len(),
        count_parameters(&net.cfg)?,
        S::DTYPE.size() * 8,
    );
    let (_, report) =
        train::<S>(&net, &clouds, catalog.as_ref(), &tcfg, args.ckpt.as_deref())?;
    print_report(&report);
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_text(&dir.join("training.csv"), &training_csv(&report))?;
        write_text(&dir.join("curves.svg"), &curves_svg(&report))?;
        println!("wrote training.csv and curves.svg to {}", dir.display());
    }
    Ok(())
}

fn cmd_eval<S: Scalar>(args: EvalArgs) -> Result<()> {
    let clouds = read_pcb(&args.data)?;
    let (cfg, mut pset, _) = load_checkpoint::<S>(&args.ckpt)?;
    let net = Network::build(cfg)?;
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    match net.cfg.task {
        Task::Classification => {
            let m = evaluate_classification(&net, &mut pset, &refs, args.batch)?;
            println!("overall accuracy: {:.4}", m.oa);
            println!("mean class accuracy: {:.4}", m.macc);
            for c in &m.per_class {
                println!("  class {}: {:.4} ({} clouds)", c.class, c.accuracy(), c.support);
            }
        }
        _ => {
            let catalog = catalog_for(net.cfg.task, &net.cfg)?.expect("segmentation");
            let m = evaluate_part_segmentation(&net, &mut pset, &refs, &catalog, args.batch)?;
            println!("mean IoU: {:.4}", m.miou);
            println!("point accuracy: {:.4}", m.point_oa);
            println!("mean part accuracy: {:.4}", m.part_macc);
        }
    }
    Ok(())
}

fn cmd_ablate<S: Scalar>(args: AblateArgs) -> Result<()> {
    let train_set = read_pcb(&args.data)?;
    let test_set = read_pcb(&args.test_data)?;
    let base = configure_model(&args.model, &train_set)?;
    let tcfg = configure_training(&args.training, args.model.task)?;
    let catalog = catalog_for(args.model.task, &base)?;
    let seeds: Result<Vec<u64>> = args
        .seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed '{s}'")))
        })
        .collect();
    let rows = run_ablation::<S>(
        &args.grid,
        &base,
        &tcfg,
        &train_set,
        &test_set,
        catalog.as_ref(),
        &seeds?,
    )?;
    write_text(&args.out, &ablation_csv(&rows))?;
    println!("wrote {} ablation rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let outcomes = run_gradient_suite(args.quick)?;
    let mut failures = 0usize;
    for o in &outcomes {
        println!("{}", o.line());
        if !o.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        eprintln!("{failures} of {} gradient checks failed", outcomes.len());
        // A blown tolerance is a numeric failure, same class as divergence.
        return Ok(ExitCode::from(3));
    }
    println!("all {} gradient checks passed", outcomes.len());
    Ok(ExitCode::SUCCESS)
}

/// Rebuilds the epoch table from a training CSV; accepts exactly the layout
/// [`training_csv`] writes.
fn parse_training_csv(text: &str) -> Result<Vec<EpochStat>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty metrics CSV".into() })?;
    if header != TRAINING_CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header '{TRAINING_CSV_HEADER}', got '{header}'"),
        });
    }
    let mut epochs = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let num = |idx: usize| -> Result<f64> {
            fields[idx].parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad number '{}'", fields[idx]),
            })
        };
        epochs.push(EpochStat {
            epoch: num(0)? as usize,
            loss: num(1)?,
            lr: num(2)?,
            val_metric: num(3)?,
            wall_clock_s: num(4)?,
        });
    }
    Ok(epochs)
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.data)?;
    let epochs = parse_training_csv(&text)?;
    let wall_clock_s = epochs.iter().map(|e| e.wall_clock_s).sum();
    let report = MetricReport {
        epochs,
        oa: 0.0,
        macc: 0.0,
        miou: None,
        class_breakdown: Vec::new(),
        category_breakdown: Vec::new(),
        wall_clock_s,
        fingerprint: "csv-replay".into(),
    };
    write_text(&args.out, &curves_svg(&report))?;
    println!("wrote curves for {} epochs to {}", report.epochs.len(), args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_tokens_parse() {
        assert_eq!(parse_precision("32").unwrap(), Dtype::F32);
        assert_eq!(parse_precision("64").unwrap(), Dtype::F64);
        assert!(parse_precision("16").is_err());
    }

    #[test]
    fn training_csv_round_trips_through_parser() {
        let text = format!("{TRAINING_CSV_HEADER}\n0,1.5,0.1,-1.5,0.25\n1,0.75,0.05,-0.75,0.3\n");
        let epochs = parse_training_csv(&text).unwrap();
        assert_eq!(epochs.len(), 2);
        assert_eq!(epochs[1].epoch, 1);
        assert_eq!(epochs[1].loss, 0.75);
        assert_eq!(epochs[0].wall_clock_s, 0.25);
    }

    #[test]
    fn training_csv_parser_rejects_drift() {
        assert!(parse_training_csv("").is_err());
        assert!(parse_training_csv("epoch,loss\n").is_err());
        let bad = format!("{TRAINING_CSV_HEADER}\n0,abc,0.1,0,0\n");
        assert!(matches!(parse_training_csv(&bad), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
