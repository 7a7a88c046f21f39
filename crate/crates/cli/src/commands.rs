//! Subcommand definitions and execution.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use plp_core::diag::{
    compare_methods, evaluate, first_other_id, run_break_make, CompareConfig, EvalTarget,
    MetricsReport,
};
use plp_core::format::{
    load_adapter, load_task, save_adapter, save_task, trace_lines, AdapterFile, AdapterPayload,
};
use plp_core::plp::{
    make_adapter, merge_into_base, Adapter, InitMode, PlpSpec, TrainableInit,
};
use plp_core::synth::SynthTask;
use plp_core::train::{
    finetune_combined, train_content, train_style, Optimizer, Routing, TrainConfig,
};
use plp_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "plp",
    version,
    about = "Partitioned low-rank adapters with frozen orthogonal blocks",
    after_help = "Exit codes: 0 success, 2 usage/validation, 3 frozen-subspace compatibility, 4 i/o."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic content-style regression task file.
    GenTask(GenTaskArgs),
    /// Train a content adapter (primary batches update B).
    TrainContent(TrainArgs),
    /// Train a style adapter (primary batches update D).
    TrainStyle(TrainArgs),
    /// Split an adapter file into up and down half files.
    Break(BreakArgs),
    /// Fuse an up half with a down half sharing the frozen construction.
    Combine(CombineArgs),
    /// Fine-tune a combined adapter on one (content, style) pair.
    Finetune(FinetuneArgs),
    /// Evaluate an adapter (optionally merged with others) against a pair.
    Eval(EvalArgs),
    /// Run the three-method comparison on one pair.
    Compare(CompareArgs),
    /// Run an ablation arm across seeds.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ExactDisjoint,
    ApproximateRandom,
}

impl From<ModeArg> for InitMode {
    fn from(value: ModeArg) -> InitMode {
        match value {
            ModeArg::ExactDisjoint => InitMode::ExactDisjoint,
            ModeArg::ApproximateRandom => InitMode::ApproximateRandom,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoutingArg {
    Mcp,
    OneToOne,
    McpBoth,
}

impl From<RoutingArg> for Routing {
    fn from(value: RoutingArg) -> Routing {
        match value {
            RoutingArg::Mcp => Routing::Mcp,
            RoutingArg::OneToOne => Routing::OneToOne,
            RoutingArg::McpBoth => Routing::McpBoth,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    ZeroD,
    ZeroB,
    GaussianBoth,
}

impl From<InitArg> for TrainableInit {
    fn from(value: InitArg) -> TrainableInit {
        match value {
            InitArg::ZeroD => TrainableInit::ZeroD,
            InitArg::ZeroB => TrainableInit::ZeroB,
            InitArg::GaussianBoth => TrainableInit::GaussianBoth,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Momentum,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArm {
    DRatio,
    Mcp,
    Orthogonality,
    Finetune,
}

#[derive(Args)]
struct GenTaskArgs {
    /// Output feature count.
    #[arg(long, default_value_t = 32)]
    m: usize,
    /// Input feature count.
    #[arg(long, default_value_t = 32)]
    n: usize,
    /// Number of content maps.
    #[arg(long, default_value_t = 3)]
    contents: usize,
    /// Number of style maps.
    #[arg(long, default_value_t = 5)]
    styles: usize,
    /// Rank of each ground-truth map.
    #[arg(long, default_value_t = 2)]
    gt_rank: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "task.plpt")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Task file.
    #[arg(long)]
    task: PathBuf,
    /// Content id (train-content) or style id (train-style).
    #[arg(long)]
    id: usize,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    /// Frozen feature fraction; d = floor(ratio * m).
    #[arg(long, default_value_t = 0.5)]
    d_ratio: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::ExactDisjoint)]
    mode: ModeArg,
    #[arg(long, default_value_t = 7)]
    frozen_seed: u64,
    #[arg(long, value_enum, default_value_t = RoutingArg::Mcp)]
    routing: RoutingArg,
    /// Auxiliary partner count; defaults to every partner in the task.
    #[arg(long)]
    n_aux: Option<usize>,
    /// Designated partner id for one-to-one routing.
    #[arg(long)]
    partner: Option<usize>,
    /// Trainable block initialization.
    #[arg(long, value_enum, default_value_t = InitArg::ZeroD)]
    init: InitArg,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    optimizer: OptimizerArg,
    /// Momentum coefficient when --optimizer momentum.
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Training seed (batch draws and trainable init).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "adapter.plpa")]
    out: PathBuf,
    /// Optional per-step trace file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BreakArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_up: PathBuf,
    #[arg(long)]
    out_down: PathBuf,
}

#[derive(Args)]
struct CombineArgs {
    #[arg(long)]
    up: PathBuf,
    #[arg(long)]
    down: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    content: usize,
    #[arg(long)]
    style: usize,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    adapter: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    content: usize,
    #[arg(long)]
    style: usize,
    /// Additional adapter files merged into the base alongside --adapter.
    #[arg(long, num_args = 1..)]
    merged_with: Vec<PathBuf>,
    /// Merge strengths, one per adapter (default 1.0 each).
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    lambdas: Vec<f64>,
    /// Machine-readable records file (key=value lines).
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    content: usize,
    #[arg(long)]
    style: usize,
    /// Training seeds, one comparison per seed.
    #[arg(long, num_args = 1.., default_values_t = [1u64])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    #[arg(long, default_value_t = 0.5)]
    d_ratio: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::ExactDisjoint)]
    mode: ModeArg,
    #[arg(long, default_value_t = 7)]
    frozen_seed: u64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Stage-one learning rate; 2e-3 keeps every method stable at the
    /// default 32-dim task scale.
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    finetune_steps: usize,
    #[arg(long, default_value_t = 2e-3)]
    finetune_lr: f64,
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    which: AblationArm,
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value_t = 0)]
    content: usize,
    #[arg(long, default_value_t = 1)]
    style: usize,
    #[arg(long, num_args = 1.., default_values_t = [1u64])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    #[arg(long, default_value_t = 0.5)]
    d_ratio: f64,
    #[arg(long, default_value_t = 7)]
    frozen_seed: u64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    finetune_steps: usize,
    #[arg(long, default_value_t = 2e-3)]
    finetune_lr: f64,
    #[arg(long)]
    records: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTask(args) => gen_task(args),
        Command::TrainContent(args) => train(args, TrainSide::Content),
        Command::TrainStyle(args) => train(args, TrainSide::Style),
        Command::Break(args) => break_cmd(args),
        Command::Combine(args) => combine(args),
        Command::Finetune(args) => finetune(args),
        Command::Eval(args) => eval(args),
        Command::Compare(args) => compare(args),
        Command::Ablate(args) => ablate(args),
    }
}

fn usage_error(details: impl Into<String>) -> Error {
    Error::InvalidArgument {
        what: "command line",
        details: details.into(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn frozen_dim_from_ratio(ratio: f64, m: usize, n: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(usage_error(format!(
            "--d-ratio {ratio} must lie strictly between 0 and 1"
        )));
    }
    let d = ((ratio * m as f64).floor() as usize).max(1);
    if d >= m.min(n) {
        return Err(usage_error(format!(
            "--d-ratio {ratio} gives d = {d}, not strictly inside min(m, n) = {}",
            m.min(n)
        )));
    }
    Ok(d)
}

fn gen_task(args: GenTaskArgs) -> Result<()> {
    let task = SynthTask::generate(args.m, args.n, args.contents, args.styles, args.gt_rank, args.seed)?;
    save_task(&args.out, &task)?;
    println!(
        "wrote {}: {}x{} task, {} contents, {} styles, gt_rank {}, seed {}, checksum {:#018x}",
        args.out.display(),
        task.m(),
        task.n(),
        task.num_contents(),
        task.num_styles(),
        task.gt_rank(),
        task.seed(),
        task.w0_checksum()
    );
    Ok(())
}

enum TrainSide {
    Content,
    Style,
}

fn train(args: TrainArgs, side: TrainSide) -> Result<()> {
    let task = load_task(&args.task)?;
    let frozen_dim = frozen_dim_from_ratio(args.d_ratio, task.m(), task.n())?;
    let spec = PlpSpec {
        rank: args.rank,
        frozen_dim,
        init_mode: args.mode.into(),
        trainable_init: args.init.into(),
    };
    let cfg = TrainConfig {
        steps: args.steps,
        batch_size: args.batch,
        lr: args.lr,
        optimizer: match args.optimizer {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Momentum => Optimizer::SgdMomentum(args.momentum),
        },
        seed: args.seed,
        n_aux: args.n_aux,
        routing: args.routing.into(),
        loss_weights: (1.0, 1.0),
        partner_id: args.partner,
    };
    let (verb, (adapter, traces)) = match side {
        TrainSide::Content => (
            "train-content",
            train_content(&task, args.id, &spec, &cfg, args.frozen_seed)?,
        ),
        TrainSide::Style => (
            "train-style",
            train_style(&task, args.id, &spec, &cfg, args.frozen_seed)?,
        ),
    };
    let mut file = AdapterFile::new(AdapterPayload::Plp(adapter.clone()));
    file.history.push(format!(
        "{verb} task-seed={} id={} rank={} d={frozen_dim} steps={} lr={} batch={} seed={}",
        task.seed(),
        args.id,
        args.rank,
        args.steps,
        args.lr,
        args.batch,
        args.seed
    ));
    save_adapter(&args.out, &file)?;
    if let Some(trace_path) = &args.trace {
        write_text(trace_path, &trace_lines(&traces))?;
    }
    let last = traces.last().expect("steps >= 1");
    println!(
        "wrote {}: tag {:?}, d = {frozen_dim}, trainable params {}, final loss {:.6}",
        args.out.display(),
        adapter.tag(),
        adapter.trainable_params(),
        last.loss
    );
    Ok(())
}

fn break_cmd(args: BreakArgs) -> Result<()> {
    let file = load_adapter(&args.input)?;
    let adapter = match file.payload {
        AdapterPayload::Plp(a) => a,
        _ => {
            return Err(usage_error(format!(
                "{} does not hold a partitioned adapter",
                args.input.display()
            )))
        }
    };
    let (up, down) = adapter.break_adapter();
    let mut up_file = AdapterFile::new(AdapterPayload::Up(up));
    up_file.history = file.history.clone();
    up_file.history.push("break: up half".to_string());
    save_adapter(&args.out_up, &up_file)?;
    let mut down_file = AdapterFile::new(AdapterPayload::Down(down));
    down_file.history = file.history;
    down_file.history.push("break: down half".to_string());
    save_adapter(&args.out_down, &down_file)?;
    println!(
        "wrote {} and {}",
        args.out_up.display(),
        args.out_down.display()
    );
    Ok(())
}

fn combine(args: CombineArgs) -> Result<()> {
    let up_file = load_adapter(&args.up)?;
    let down_file = load_adapter(&args.down)?;
    let up = match up_file.payload {
        AdapterPayload::Up(h) => h,
        _ => {
            return Err(usage_error(format!(
                "{} is not an up-half file",
                args.up.display()
            )))
        }
    };
    let down = match down_file.payload {
        AdapterPayload::Down(h) => h,
        _ => {
            return Err(usage_error(format!(
                "{} is not a down-half file",
                args.down.display()
            )))
        }
    };
    let combined = make_adapter(&up, &down)?;
    let mut file = AdapterFile::new(AdapterPayload::Plp(combined.clone()));
    file.history = up_file.history;
    file.history.extend(down_file.history);
    file.history.push(format!("combine: tag {:?}", combined.tag()));
    save_adapter(&args.out, &file)?;
    println!("wrote {}: tag {:?}", args.out.display(), combined.tag());
    Ok(())
}

fn finetune(args: FinetuneArgs) -> Result<()> {
    let task = load_task(&args.task)?;
    let file = load_adapter(&args.input)?;
    let adapter = match file.payload {
        AdapterPayload::Plp(a) => a,
        _ => {
            return Err(usage_error(format!(
                "{} does not hold a partitioned adapter",
                args.input.display()
            )))
        }
    };
    let (tuned, traces) = finetune_combined(
        adapter,
        &task,
        args.content,
        args.style,
        args.steps,
        args.lr,
        args.seed,
    )?;
    let mut out = AdapterFile::new(AdapterPayload::Plp(tuned));
    out.history = file.history;
    out.history.push(format!(
        "finetune content={} style={} steps={} lr={} seed={}",
        args.content, args.style, args.steps, args.lr, args.seed
    ));
    save_adapter(&args.out, &out)?;
    if let Some(trace_path) = &args.trace {
        write_text(trace_path, &trace_lines(&traces))?;
    }
    match traces.last() {
        Some(last) => println!(
            "wrote {}: {} steps, final loss {:.6}",
            args.out.display(),
            traces.len(),
            last.loss
        ),
        None => println!("wrote {}: 0 steps, adapter unchanged", args.out.display()),
    }
    Ok(())
}

fn report_block(report: &MetricsReport) -> String {
    let mut line = format!(
        "combined_err={:.6} content_err={:.6} style_err={:.6} oracle_residual={:.6} \
         oracle_gap={:+.6} oracle_converged={}",
        report.combined_err,
        report.content_err,
        report.style_err,
        report.oracle_residual,
        report.oracle_gap,
        report.oracle_converged
    );
    if let Some(profile) = report.block_profile {
        let _ = write!(
            line,
            " norm_ul={:.6} norm_ur={:.6} norm_dl={:.6} norm_dr={:.6}",
            profile.norm_ul, profile.norm_ur, profile.norm_dl, profile.norm_dr
        );
    }
    line
}

fn eval(args: EvalArgs) -> Result<()> {
    let task = load_task(&args.task)?;
    let main_file = load_adapter(&args.adapter)?;
    let report = if args.merged_with.is_empty() {
        if !args.lambdas.is_empty() && args.lambdas.len() != 1 {
            return Err(Error::LengthMismatch {
                what: "--lambdas",
                got: args.lambdas.len(),
                expected: 1,
            });
        }
        let lambda = args.lambdas.first().copied().unwrap_or(1.0);
        match &main_file.payload {
            AdapterPayload::Plp(a) if lambda == 1.0 => {
                evaluate(&task, args.content, args.style, EvalTarget::Plp(a))?
            }
            AdapterPayload::Plain(a) if lambda == 1.0 => {
                evaluate(&task, args.content, args.style, EvalTarget::Plain(a))?
            }
            AdapterPayload::Plp(_) | AdapterPayload::Plain(_) => {
                let adapter = adapter_ref(&main_file.payload);
                let merged = merge_into_base(task.w0(), &[adapter], &[lambda])?;
                evaluate(
                    &task,
                    args.content,
                    args.style,
                    EvalTarget::Merged {
                        w: &merged,
                        rank_class: adapter.rank(),
                    },
                )?
            }
            _ => {
                return Err(usage_error(
                    "eval needs a full adapter file, not a half file",
                ))
            }
        }
    } else {
        let mut files = vec![main_file];
        for path in &args.merged_with {
            files.push(load_adapter(path)?);
        }
        let adapters: Vec<&dyn Adapter> = files
            .iter()
            .map(|f| match &f.payload {
                AdapterPayload::Plp(_) | AdapterPayload::Plain(_) => Ok(adapter_ref(&f.payload)),
                _ => Err(usage_error("cannot merge half files")),
            })
            .collect::<Result<_>>()?;
        let lambdas = if args.lambdas.is_empty() {
            vec![1.0; adapters.len()]
        } else {
            args.lambdas.clone()
        };
        if lambdas.len() != adapters.len() {
            return Err(Error::LengthMismatch {
                what: "--lambdas",
                got: lambdas.len(),
                expected: adapters.len(),
            });
        }
        let rank_class = adapters.iter().map(|a| a.rank()).sum();
        let merged = merge_into_base(task.w0(), &adapters, &lambdas)?;
        evaluate(
            &task,
            args.content,
            args.style,
            EvalTarget::Merged {
                w: &merged,
                rank_class,
            },
        )?
    };
    println!(
        "eval tag={:?} content={} style={}",
        report.tag, args.content, args.style
    );
    println!("{}", report_block(&report));
    if let Some(path) = &args.records {
        write_text(
            path,
            &format!(
                "tag={} content={} style={} {}\n",
                report.tag,
                args.content,
                args.style,
                report_block(&report)
            ),
        )?;
    }
    Ok(())
}

fn adapter_ref(payload: &AdapterPayload) -> &dyn Adapter {
    match payload {
        AdapterPayload::Plp(a) => a,
        AdapterPayload::Plain(a) => a,
        _ => unreachable!("checked by caller"),
    }
}

fn compare(args: CompareArgs) -> Result<()> {
    let task = load_task(&args.task)?;
    let frozen_dim = frozen_dim_from_ratio(args.d_ratio, task.m(), task.n())?;
    let mut records = String::new();
    for &seed in &args.seeds {
        let cfg = CompareConfig {
            rank: args.rank,
            frozen_dim,
            init_mode: args.mode.into(),
            frozen_seed: args.frozen_seed,
            train: TrainConfig {
                steps: args.steps,
                batch_size: args.batch,
                lr: args.lr,
                seed,
                ..TrainConfig::default()
            },
            finetune_steps: args.finetune_steps,
            finetune_lr: args.finetune_lr,
        };
        let rows = compare_methods(&task, args.content, args.style, &cfg)?;
        println!(
            "seed {seed} (content {}, style {}):",
            args.content, args.style
        );
        for (method, report) in &rows {
            println!("  {method:>12}: {}", report_block(report));
            let _ = writeln!(
                records,
                "method={method} seed={seed} {}",
                report_block(report)
            );
        }
    }
    if let Some(path) = &args.records {
        write_text(path, &records)?;
    }
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let task = load_task(&args.task)?;
    let base_cfg = |frozen_dim: usize, mode: InitMode, seed: u64| CompareConfig {
        rank: args.rank,
        frozen_dim,
        init_mode: mode,
        frozen_seed: args.frozen_seed,
        train: TrainConfig {
            steps: args.steps,
            batch_size: args.batch,
            lr: args.lr,
            seed,
            ..TrainConfig::default()
        },
        finetune_steps: args.finetune_steps,
        finetune_lr: args.finetune_lr,
    };
    let mut records = String::new();
    match args.which {
        AblationArm::DRatio => {
            // Ratio 1 is excluded: d = min(m, n) leaves no trainable features.
            let grid = [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875];
            for &ratio in &grid {
                for &seed in &args.seeds {
                    let frozen_dim = frozen_dim_from_ratio(ratio, task.m(), task.n())?;
                    let cfg = base_cfg(frozen_dim, InitMode::ExactDisjoint, seed);
                    let tuned = run_break_make(&task, args.content, args.style, &cfg)?;
                    let report =
                        evaluate(&task, args.content, args.style, EvalTarget::Plp(&tuned))?;
                    let line = format!(
                        "arm=d-ratio ratio={ratio} d={frozen_dim} seed={seed} {}",
                        report_block(&report)
                    );
                    println!("{line}");
                    records.push_str(&line);
                    records.push('\n');
                }
            }
        }
        AblationArm::Mcp => {
            let frozen_dim = frozen_dim_from_ratio(args.d_ratio, task.m(), task.n())?;
            for &seed in &args.seeds {
                let cfg = base_cfg(frozen_dim, InitMode::ExactDisjoint, seed);
                let spec = PlpSpec::exact(args.rank, frozen_dim);

                // With multi-correspondence training (the full pipeline).
                let tuned = run_break_make(&task, args.content, args.style, &cfg)?;
                let with_mcp = evaluate(&task, args.content, args.style, EvalTarget::Plp(&tuned))?;

                // W/o MCP-I: one-to-one training directly on the target pair,
                // used as-is without the combine stage.
                let one_cfg = TrainConfig {
                    routing: Routing::OneToOne,
                    partner_id: Some(args.style),
                    ..cfg.train.clone()
                };
                let (direct, _) =
                    train_content(&task, args.content, &spec, &one_cfg, args.frozen_seed)?;
                let wo_mcp_1 =
                    evaluate(&task, args.content, args.style, EvalTarget::Plp(&direct))?;

                // W/o MCP-II: content trained one-to-one against a single
                // non-target style, then combined with the normal style
                // adapter and fine-tuned.
                let off_cfg = TrainConfig {
                    routing: Routing::OneToOne,
                    partner_id: Some(first_other_id(task.num_styles(), args.style)),
                    ..cfg.train.clone()
                };
                let (content, _) =
                    train_content(&task, args.content, &spec, &off_cfg, args.frozen_seed)?;
                let mut style_cfg = cfg.train.clone();
                style_cfg.seed = cfg.train.seed.wrapping_add(1000);
                let (style, _) =
                    train_style(&task, args.style, &spec, &style_cfg, args.frozen_seed)?;
                let combined =
                    make_adapter(&content.break_adapter().0, &style.break_adapter().1)?;
                let (ablated, _) = finetune_combined(
                    combined,
                    &task,
                    args.content,
                    args.style,
                    cfg.finetune_steps,
                    cfg.finetune_lr,
                    cfg.train.seed.wrapping_add(2000),
                )?;
                let wo_mcp_2 =
                    evaluate(&task, args.content, args.style, EvalTarget::Plp(&ablated))?;

                for (arm, report) in [
                    ("with-mcp", &with_mcp),
                    ("wo-mcp-1", &wo_mcp_1),
                    ("wo-mcp-2", &wo_mcp_2),
                ] {
                    let line = format!("arm={arm} seed={seed} {}", report_block(report));
                    println!("{line}");
                    records.push_str(&line);
                    records.push('\n');
                }
            }
        }
        AblationArm::Orthogonality => {
            let frozen_dim = frozen_dim_from_ratio(args.d_ratio, task.m(), task.n())?;
            for &seed in &args.seeds {
                for (label, mode) in [
                    ("exact-disjoint", InitMode::ExactDisjoint),
                    ("approximate-random", InitMode::ApproximateRandom),
                ] {
                    let cfg = base_cfg(frozen_dim, mode, seed);
                    let tuned = run_break_make(&task, args.content, args.style, &cfg)?;
                    let leakage = tuned.orth_ratio();
                    let report =
                        evaluate(&task, args.content, args.style, EvalTarget::Plp(&tuned))?;
                    let line = format!(
                        "arm=orthogonality mode={label} seed={seed} ac_ratio={leakage:.6} {}",
                        report_block(&report)
                    );
                    println!("{line}");
                    records.push_str(&line);
                    records.push('\n');
                }
            }
        }
        AblationArm::Finetune => {
            let frozen_dim = frozen_dim_from_ratio(args.d_ratio, task.m(), task.n())?;
            let steps_grid = [0usize, 10, 25, 50, 100];
            for &seed in &args.seeds {
                for &ft_steps in &steps_grid {
                    let mut cfg = base_cfg(frozen_dim, InitMode::ExactDisjoint, seed);
                    cfg.finetune_steps = ft_steps;
                    let tuned = run_break_make(&task, args.content, args.style, &cfg)?;
                    let report =
                        evaluate(&task, args.content, args.style, EvalTarget::Plp(&tuned))?;
                    let line = format!(
                        "arm=finetune steps={ft_steps} seed={seed} {}",
                        report_block(&report)
                    );
                    println!("{line}");
                    records.push_str(&line);
                    records.push('\n');
                }
            }
        }
    }
    if let Some(path) = &args.records {
        write_text(path, &records)?;
    }
    Ok(())
}

