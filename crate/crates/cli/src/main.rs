//! Command-line driver: run inference on a sequence, run few-shot /
//! continual learning episodes, dump cost reports and memory maps, and
//! generate fixture checkpoints.
//!
//! Set `CHAMELEON_SIM_LOG=debug` for progress logging. All commands are
//! deterministic given their inputs, flags and seeds.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use chameleon_sim::cost_model;
use chameleon_sim::episode::{self, EpisodeSpec, SumMode, SyntheticConfig};
use chameleon_sim::netmodel::format as ckpt_format;
use chameleon_sim::netmodel::{Checkpoint, NetworkConfig};
use chameleon_sim::pe_array::{ArrayMode, PeArrayState};
use chameleon_sim::proto_learn::{self, BiasShift, LearnerState, MemoryBudget};
use chameleon_sim::quant::{OverflowMode, QAct};
use chameleon_sim::scheduler::{dependency_sets, greedy_schedule, LayerGraph};

#[derive(Parser)]
#[command(
    name = "chameleon",
    version,
    about = "MatMul-free TCN accelerator simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "16x16")]
    M16x16,
    #[value(name = "4x4")]
    M4x4,
}

impl From<ModeArg> for ArrayMode {
    fn from(m: ModeArg) -> ArrayMode {
        match m {
            ModeArg::M16x16 => ArrayMode::M16x16,
            ModeArg::M4x4 => ArrayMode::M4x4,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BiasModeArg {
    Exact,
    PaperLiteral,
}

impl From<BiasModeArg> for BiasShift {
    fn from(m: BiasModeArg) -> BiasShift {
        match m {
            BiasModeArg::Exact => BiasShift::Exact,
            BiasModeArg::PaperLiteral => BiasShift::DoubledCeil,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OverflowArg {
    Wrap,
    Clamp,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    /// 13-block, 48-channel raw-audio keyword spotter (16k-step inputs).
    RawAudio,
    /// 7-block, 54-channel image-sequence embedder (48-dim embeddings).
    FslImage,
    /// 2-block, 4-channel toy network for fixtures.
    Tiny,
}

impl PresetArg {
    fn config(self) -> NetworkConfig {
        match self {
            PresetArg::RawAudio => NetworkConfig::kws_raw_audio(),
            PresetArg::FslImage => NetworkConfig::fsl_image_embedder(),
            PresetArg::Tiny => NetworkConfig::uniform(1, 16, 2, 4, 2, vec![4]),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Classify one input sequence through a checkpoint.
    Infer(InferArgs),
    /// Run few-shot / continual learning episodes and grade them.
    Learn(LearnArgs),
    /// Write the streaming-vs-dense cost report for a network.
    Report(ReportArgs),
    /// Generate a deterministic pseudo-random checkpoint.
    GenFixture(GenFixtureArgs),
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input sequence: one timestep per line, whitespace-separated
    /// channel values in 0..=15.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "16x16")]
    mode: ModeArg,
    /// Treat input values as reals and quantize them with this left
    /// shift.
    #[arg(long)]
    real_input_shift: Option<i8>,
    /// Override every layer's overflow mode.
    #[arg(long, value_enum)]
    overflow: Option<OverflowArg>,
    /// Write the execution-order trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the weight memory-map dump here.
    #[arg(long)]
    dump_memory_map: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    /// Embedding dimension for synthetic episodes (ignored with
    /// --checkpoint, which embeds with the deployed network).
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    ways: usize,
    #[arg(long, default_value_t = 1)]
    shots: usize,
    #[arg(long, default_value_t = 5)]
    queries: usize,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "exact")]
    bias_mode: BiasModeArg,
    /// Synthetic embedding family.
    #[arg(long, value_enum, default_value = "pow2")]
    sum_mode: SumModeArg,
    /// Cluster separation for the general family.
    #[arg(long, default_value_t = 2.0)]
    margin: f64,
    /// Evaluate episodes in parallel.
    #[arg(long)]
    parallel: bool,
    /// Embed with this deployed network instead of sampling
    /// synthetically; requires --sequences.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Listing file: `support <class> <path>` / `query <class> <path>`
    /// lines naming input sequence files.
    #[arg(long)]
    sequences: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "16x16")]
    mode: ModeArg,
    /// Write the learned-class table here after the last episode.
    #[arg(long)]
    export_classes: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SumModeArg {
    Pow2,
    General,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, conflicts_with = "preset")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Sequence length (defaults to the network's nominal length).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 150e6)]
    clock_hz: f64,
    /// Write the machine-readable JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenFixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 2)]
    kernel: usize,
    #[arg(long, default_value_t = 1)]
    input_channels: usize,
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Head widths, repeatable.
    #[arg(long)]
    head: Vec<usize>,
    #[arg(long, value_enum)]
    overflow: Option<OverflowArg>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("CHAMELEON_SIM_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Infer(args) => cmd_infer(args),
        Command::Learn(args) => cmd_learn(args),
        Command::Report(args) => cmd_report(args),
        Command::GenFixture(args) => cmd_gen_fixture(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_checkpoint(path: &Path, overflow: Option<OverflowArg>) -> anyhow::Result<Checkpoint> {
    let mut ckpt = ckpt_format::load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(mode) = overflow {
        let mode = match mode {
            OverflowArg::Wrap => OverflowMode::Wrap,
            OverflowArg::Clamp => OverflowMode::Clamp,
        };
        for layer in &mut ckpt.layers {
            layer.rescale.overflow = mode;
        }
    }
    Ok(ckpt)
}

/// Parses an input sequence file: one timestep per line, one value per
/// channel. With `real_shift`, values are reals scaled by `2^shift` and
/// clamped into the 4-bit range.
fn read_input(
    path: &Path,
    channels: usize,
    real_shift: Option<i8>,
) -> anyhow::Result<Vec<Vec<QAct>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading input {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::with_capacity(channels);
        for tok in line.split_whitespace() {
            let v = match real_shift {
                None => {
                    let v: i64 = tok
                        .parse()
                        .with_context(|| format!("line {}: bad value `{tok}`", lineno + 1))?;
                    if !(0..=15).contains(&v) {
                        bail!(
                            "line {}: value {v} outside 0..=15 (use --real-input-shift for reals)",
                            lineno + 1
                        );
                    }
                    v as u8
                }
                Some(shift) => {
                    let v: f64 = tok
                        .parse()
                        .with_context(|| format!("line {}: bad value `{tok}`", lineno + 1))?;
                    let scaled = if shift >= 0 {
                        v * f64::from(1u32 << shift)
                    } else {
                        v / f64::from(1u32 << (-shift))
                    };
                    scaled.round().clamp(0.0, 15.0) as u8
                }
            };
            row.push(QAct::new(v));
        }
        if row.len() != channels {
            bail!(
                "line {}: {} values for {channels} input channels",
                lineno + 1,
                row.len()
            );
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("input {} holds no timesteps", path.display());
    }
    Ok(rows)
}

fn argmax(values: &[QAct]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.get() > values[best].get() {
            best = i;
        }
    }
    best
}

fn cmd_infer(args: InferArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint, args.overflow)?;
    let input = read_input(
        &args.input,
        ckpt.config.input_channels,
        args.real_input_shift,
    )?;
    log::info!(
        "loaded {} layers, {} weights, {} timesteps",
        ckpt.layers.len(),
        ckpt.config.weight_count(),
        input.len()
    );

    let graph = LayerGraph::from_config(&ckpt.config);
    let deps = dependency_sets(&graph, input.len());
    let schedule = greedy_schedule(&deps, &graph);
    let fifo = chameleon_sim::scheduler::simulate_fifo(&schedule, &graph)
        .map_err(|e| anyhow::anyhow!("schedule replay failed: {e}"))?;
    if let Some(path) = &args.trace {
        std::fs::write(path, schedule.render_trace())
            .with_context(|| format!("writing trace {}", path.display()))?;
    }

    let mode: ArrayMode = args.mode.into();
    if let Some(path) = &args.dump_memory_map {
        let engine = chameleon_sim::pe_array::Engine::new(&ckpt, mode)?;
        std::fs::write(path, engine.memory_map().render_text())
            .with_context(|| format!("writing memory map {}", path.display()))?;
    }
    let out = chameleon_sim::pe_array::run_schedule(&ckpt, &input, mode, &schedule)?;

    println!("class {}", argmax(&out.final_output));
    let scores: Vec<String> = out
        .final_output
        .iter()
        .map(|a| a.get().to_string())
        .collect();
    println!("scores {}", scores.join(" "));
    println!("cycles {}", out.cycles);
    println!("events {}", out.events);
    println!("activation_bytes {}", fifo.activation_bytes);
    println!("input_bytes {}", fifo.input_bytes);
    println!("bank_reads {}", out.bank_reads);
    Ok(())
}

/// Episode source listing: sequence files embedded by the deployed
/// network.
fn episodes_from_sequences(
    ckpt: &Checkpoint,
    listing: &Path,
    mode: ArrayMode,
) -> anyhow::Result<episode::Episode> {
    let text = std::fs::read_to_string(listing)
        .with_context(|| format!("reading listing {}", listing.display()))?;
    let base = listing.parent().unwrap_or(Path::new("."));
    let mut support: Vec<Vec<Vec<QAct>>> = Vec::new();
    let mut queries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            bail!(
                "listing line {}: expected `<support|query> <class> <path>`",
                lineno + 1
            );
        }
        let class: usize = toks[1]
            .parse()
            .with_context(|| format!("listing line {}: bad class", lineno + 1))?;
        let seq = read_input(&base.join(toks[2]), ckpt.config.input_channels, None)?;
        let embedding = chameleon_sim::pe_array::run_network(ckpt, &seq, mode)?.final_output;
        match toks[0] {
            "support" => {
                if support.len() <= class {
                    support.resize(class + 1, Vec::new());
                }
                support[class].push(embedding);
            }
            "query" => queries.push((embedding, class)),
            other => bail!("listing line {}: unknown kind `{other}`", lineno + 1),
        }
    }
    if support.is_empty() || support.iter().any(|s| s.is_empty()) {
        bail!("listing must provide at least one support shot for every class");
    }
    Ok(episode::Episode { support, queries })
}

fn cmd_learn(args: LearnArgs) -> anyhow::Result<()> {
    let bias_mode: BiasShift = args.bias_mode.into();

    let outcome = if let Some(ckpt_path) = &args.checkpoint {
        let listing = args
            .sequences
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("--checkpoint requires --sequences"))?;
        let ckpt = load_checkpoint(ckpt_path, None)?;
        let ep = episodes_from_sequences(&ckpt, listing, args.mode.into())?;
        let (res, disagreements) = episode::run_episode(&ep, bias_mode)?;
        let mut out = episode::BatchOutcome {
            episodes: 1,
            queries: res.queries,
            correct: res.correct,
            oracle_agreement: res.oracle_agreement,
            learn_cycles: res.learn_cycles,
            shots_learned: res.shots_learned,
            disagreements: Vec::new(),
        };
        out.disagreements = disagreements
            .into_iter()
            .map(
                |(query, datapath_class, reference_class)| episode::Disagreement {
                    episode: 0,
                    query,
                    datapath_class,
                    reference_class,
                },
            )
            .collect();
        maybe_export(&args, &ep, bias_mode)?;
        out
    } else {
        let synth = SyntheticConfig {
            embed_dim: args.dim,
            margin: args.margin,
            mode: match args.sum_mode {
                SumModeArg::Pow2 => SumMode::PowerOfTwo,
                SumModeArg::General => SumMode::General,
            },
        };
        let specs = episode::specs_for(
            args.episodes,
            EpisodeSpec {
                ways: args.ways,
                shots: args.shots,
                queries_per_way: args.queries,
                seed: args.seed,
            },
        );
        let out = if args.parallel {
            episode::run_batch(&specs, &synth, bias_mode)?
        } else {
            episode::run_batch_seq(&specs, &synth, bias_mode)?
        };
        if args.export_classes.is_some() {
            let ep = episode::generate_episode(&specs[specs.len() - 1], &synth)?;
            maybe_export(&args, &ep, bias_mode)?;
        }
        out
    };

    println!("episodes {}", outcome.episodes);
    println!("queries {}", outcome.queries);
    println!("accuracy {:.4}", outcome.accuracy());
    println!("oracle_agreement {:.4}", outcome.agreement());
    println!("disagreements {}", outcome.disagreements.len());
    for d in outcome.disagreements.iter().take(20) {
        log::info!(
            "episode {} query {}: datapath {} reference {}",
            d.episode,
            d.query,
            d.datapath_class,
            d.reference_class
        );
    }
    println!("learn_cycles {}", outcome.learn_cycles);
    println!("cycles_per_shot {:.3}", outcome.cycles_per_shot());
    let dim = if args.checkpoint.is_some() {
        None
    } else {
        Some(args.dim)
    };
    if let Some(dim) = dim {
        println!("bytes_per_way {}", proto_learn::bytes_per_way(dim));
    }
    Ok(())
}

/// Re-learns the episode's support into a fresh learner and writes the
/// class table.
fn maybe_export(
    args: &LearnArgs,
    ep: &episode::Episode,
    bias_mode: BiasShift,
) -> anyhow::Result<()> {
    let Some(path) = &args.export_classes else {
        return Ok(());
    };
    let dim = ep.support[0][0].len();
    let mut learner = LearnerState::new(dim, MemoryBudget::unlimited(), bias_mode)?;
    let mut array = PeArrayState::new(ArrayMode::M16x16);
    for shots in &ep.support {
        learner.learn_class(shots, &mut array)?;
    }
    let table = ckpt_format::write_class_table(&learner.export_classes(), dim);
    std::fs::write(path, table)
        .with_context(|| format!("writing class table {}", path.display()))?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let config = match (&args.checkpoint, args.preset) {
        (Some(path), None) => load_checkpoint(path, None)?.config,
        (None, Some(preset)) => preset.config(),
        (None, None) => bail!("pass --checkpoint or --preset"),
        (Some(_), Some(_)) => unreachable!("clap forbids this"),
    };
    let n = args.n.unwrap_or(config.sequence_length);
    let report = cost_model::compare_strategies(&config, n, args.clock_hz)?;
    print!("{}", report.to_kv_text());
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, json).with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(())
}

fn cmd_gen_fixture(args: GenFixtureArgs) -> anyhow::Result<()> {
    let config = match args.preset {
        Some(preset) => preset.config(),
        None => NetworkConfig::uniform(
            args.input_channels,
            args.n,
            args.blocks,
            args.channels,
            args.kernel,
            args.head.clone(),
        ),
    };
    let violations = config.validate();
    if !violations.is_empty() {
        bail!(
            "fixture config invalid: {}",
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        );
    }
    let mut ckpt = Checkpoint::random_seeded(config, args.seed);
    if let Some(mode) = args.overflow {
        let mode = match mode {
            OverflowArg::Wrap => OverflowMode::Wrap,
            OverflowArg::Clamp => OverflowMode::Clamp,
        };
        for layer in &mut ckpt.layers {
            layer.rescale.overflow = mode;
        }
    }
    ckpt_format::save_checkpoint(&ckpt, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {}", args.out.display());
    Ok(())
}
