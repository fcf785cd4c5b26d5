//! `cpwl` command-line tool: generate datasets, build networks realizing
//! piecewise-linear fits, certify them as local minima, and enumerate
//! fitting patterns.
//!
//! Exit codes: 0 ok, 1 usage/argument error, 2 shape mismatch,
//! 3 predictor inconsistency, 4 zero activation margin.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use cpwl_core::build::{BuildConfig, CnnArch, CnnStagePlan, PatchSpec, PoolKind};
use cpwl_core::data::{gen_parabola, load_csv, to_csv, Dataset, Loss};
use cpwl_core::partition::{Partition, Polytope};
use cpwl_core::pipeline::{
    build_1d_state, build_state_on_partition, even_count_boundaries, PipelineState,
};
use cpwl_core::plot::render_fit_svg;
use cpwl_core::runtime::{network_risk, Network};
use cpwl_core::verify::{demonstrate_spurious, enumerate_patterns_1d};
use cpwl_core::Error;

#[derive(Parser)]
#[command(name = "cpwl", version, about = "Piecewise-linear fits as explicit ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV
    Gen(GenArgs),
    /// Run the full pipeline and certify the build (report JSON)
    Certify(CertifyArgs),
    /// Enumerate contiguous fitting patterns and their risks (CSV + summary)
    Enumerate(EnumerateArgs),
    /// Build a network from a dataset and partition (network JSON)
    Build(BuildArgs),
    /// Evaluate a network JSON on a dataset (predictions CSV + risk)
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Abs,
}

impl LossArg {
    fn to_loss(self) -> Loss {
        match self {
            LossArg::Mse => Loss::Mse,
            LossArg::Abs => Loss::absolute(),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Evenly spaced samples with targets y = x^2
    #[arg(long)]
    parabola: bool,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    lo: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    hi: f64,
    /// Output CSV path (stdout when omitted)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PartitionArgs {
    /// Split positions on the x axis (1-D datasets)
    #[arg(long, num_args = 0.., allow_negative_numbers = true)]
    boundaries: Vec<f64>,
    /// Contiguous even-count split into this many groups (1-D datasets)
    #[arg(long, conflicts_with = "boundaries")]
    groups: Option<usize>,
    /// Partition JSON with explicit regions and domain (any dimension)
    #[arg(long, conflicts_with_all = ["boundaries", "groups"])]
    partition: Option<PathBuf>,
}

#[derive(Deserialize)]
struct PartitionSpec {
    regions: Vec<Polytope>,
    domain: Polytope,
}

impl PartitionArgs {
    fn resolve(&self, dataset: &Dataset) -> Result<Partition, Error> {
        if let Some(path) = &self.partition {
            let text = std::fs::read_to_string(path)?;
            let spec: PartitionSpec = serde_json::from_str(&text)?;
            return Partition::from_regions(spec.regions, spec.domain, dataset);
        }
        let boundaries = self.resolve_boundaries(dataset)?;
        cpwl_core::partition::partition_1d(dataset, &boundaries)
    }

    fn resolve_boundaries(&self, dataset: &Dataset) -> Result<Vec<f64>, Error> {
        if let Some(groups) = self.groups {
            even_count_boundaries(dataset, groups)
        } else {
            for w in self.boundaries.windows(2) {
                if !(w[0] < w[1]) {
                    return Err(Error::Argument(format!(
                        "boundaries must be strictly increasing, got {} then {}",
                        w[0], w[1]
                    )));
                }
            }
            Ok(self.boundaries.clone())
        }
    }
}

#[derive(Args)]
struct CertifyArgs {
    /// Dataset CSV
    #[arg(short, long)]
    data: PathBuf,
    #[command(flatten)]
    partition: PartitionArgs,
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    /// Perturbation trials per probe
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the automatic positive piece-layer shift
    #[arg(long)]
    c: Option<f64>,
    /// Report JSON path (stdout when omitted)
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write a fit panel SVG
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateArgs {
    #[arg(short, long)]
    data: PathBuf,
    /// Largest number of groups to enumerate
    #[arg(long)]
    pmax: usize,
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    /// Table CSV path (stdout when omitted)
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Summary JSON path (stdout when omitted)
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Fc,
    Cnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Avg,
    Max,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(short, long)]
    data: PathBuf,
    #[command(flatten)]
    partition: PartitionArgs,
    #[arg(long, value_enum, default_value = "fc")]
    arch: ArchArg,
    /// First conv layer patch size (cnn only)
    #[arg(long)]
    patch: Option<usize>,
    /// First conv layer stride (cnn only, defaults to the patch size)
    #[arg(long)]
    stride: Option<usize>,
    /// Pooling layer after the conv layer (cnn only)
    #[arg(long, value_enum)]
    pool: Option<PoolArg>,
    /// Pooling patch size (defaults to the remaining signal length)
    #[arg(long)]
    pool_patch: Option<usize>,
    /// Pooling stride (defaults to the pooling patch size)
    #[arg(long)]
    pool_stride: Option<usize>,
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    #[arg(long)]
    c: Option<f64>,
    /// Network JSON path (stdout when omitted)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Network JSON
    #[arg(short = 'm', long)]
    model: PathBuf,
    #[arg(short, long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    /// Predictions CSV path (omitted: predictions are not written)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Shape(_) => 2,
        Error::Consistency(_) => 3,
        Error::ZeroMargin { .. } => 4,
        _ => 1,
    }
}

fn emit(path: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Certify(args) => cmd_certify(args),
        Command::Enumerate(args) => cmd_enumerate(args),
        Command::Build(args) => cmd_build(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), Error> {
    if !args.parabola {
        return Err(Error::Argument(
            "no generator selected; pass --parabola".into(),
        ));
    }
    let ds = gen_parabola(args.n, args.lo, args.hi)?;
    emit(&args.output, &to_csv(&ds))
}

fn build_state(
    dataset: &Dataset,
    partition_args: &PartitionArgs,
    loss: &Loss,
    c: Option<f64>,
) -> Result<PipelineState, Error> {
    let config = BuildConfig { c };
    if partition_args.partition.is_some() || dataset.dx() > 1 {
        let partition = partition_args.resolve(dataset)?;
        build_state_on_partition(dataset, partition, loss, &config)
    } else {
        let boundaries = partition_args.resolve_boundaries(dataset)?;
        build_1d_state(dataset, &boundaries, loss, &config)
    }
}

fn cmd_certify(args: CertifyArgs) -> Result<(), Error> {
    let ds = load_csv(&args.data)?;
    let loss = args.loss.to_loss();
    let state = build_state(&ds, &args.partition, &loss, args.c)?;
    let report = demonstrate_spurious(&state, &ds, &loss, args.trials, args.seed)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    emit(&args.output, &json)?;
    if let Some(plot) = &args.plot {
        let svg = render_fit_svg(&ds, &state.predictor, 640, 400)?;
        std::fs::write(plot, svg)?;
    }
    Ok(())
}

fn cmd_enumerate(args: EnumerateArgs) -> Result<(), Error> {
    let ds = load_csv(&args.data)?;
    let table = enumerate_patterns_1d(&ds, args.pmax, &args.loss.to_loss())?;
    emit(&args.output, &table.to_csv())?;
    let risks: Vec<f64> = table.rows.iter().map(|r| r.risk).collect();
    let summary = serde_json::json!({
        "rows": table.rows.len(),
        "p_max": args.pmax,
        "distinct_risk_levels": table.distinct_levels,
        "min_risk": risks.iter().copied().fold(f64::INFINITY, f64::min),
        "max_risk": risks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    emit(&args.summary, &(serde_json::to_string_pretty(&summary)? + "\n"))
}

fn cmd_build(args: BuildArgs) -> Result<(), Error> {
    let ds = load_csv(&args.data)?;
    let loss = args.loss.to_loss();
    let network = match args.arch {
        ArchArg::Fc => build_state(&ds, &args.partition, &loss, args.c)?.network,
        ArchArg::Cnn => {
            let patch = args.patch.ok_or_else(|| {
                Error::Argument("--arch cnn requires --patch".into())
            })?;
            let stride = args.stride.unwrap_or(patch);
            let conv = PatchSpec { size: patch, stride };
            let mut stages = vec![CnnStagePlan::Conv(conv)];
            if let Some(pool) = args.pool {
                let after_conv = conv.num_patches(ds.dx())?;
                let size = args.pool_patch.unwrap_or(after_conv);
                let stride = args.pool_stride.unwrap_or(size);
                let kind = match pool {
                    PoolArg::Avg => PoolKind::Average,
                    PoolArg::Max => PoolKind::Max,
                };
                stages.push(CnnStagePlan::Pool(kind, PatchSpec { size, stride }));
            }
            let arch = CnnArch { stages };
            let partition = args.partition.resolve(&ds)?;
            let (net, _fits) =
                cpwl_core::build::build_cnn_network(&ds, &partition, &BuildConfig { c: args.c }, &arch)?;
            Network::Cnn(net)
        }
    };
    emit(&args.output, &(serde_json::to_string_pretty(&network)? + "\n"))
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.model)?;
    let network: Network = serde_json::from_str(&text)?;
    let ds = load_csv(&args.data)?;
    let report = network_risk(&network, &ds, &args.loss.to_loss())?;
    if args.output.is_some() {
        let mut csv = String::new();
        for k in 0..ds.dy() {
            if k > 0 {
                csv.push(',');
            }
            csv.push_str(&format!("yhat{k}"));
        }
        csv.push('\n');
        for out in &report.outputs {
            let row: Vec<String> = out.iter().map(f64::to_string).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        emit(&args.output, &csv)?;
    }
    println!("{}", serde_json::json!({ "risk": report.risk }));
    Ok(())
}
