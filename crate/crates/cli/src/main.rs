use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use autoq_core::accuracy::{
    derive_sensitivities, frozen_inference_accuracy, parse_dataset, AccuracyConfig, InferenceConfig,
};
use autoq_core::cost::{parse_hardware_config, Budgets, CostReport, HardwareConfig};
use autoq_core::env::{EnvConfig, RewardTiming, RewardWeights};
use autoq_core::model::{
    decode_policy_file, encode_policy_file, parse_network_spec, policy_from_json, policy_to_json, POLICY_MAGIC,
};
use autoq_core::search::{
    brute_force_search, evaluate_policy, export_trace, layerwise_baseline_search, networkwise_baseline_search,
    BaselineResult, SearchConfig, Searcher,
};
use autoq_core::{Error, NetworkSpec, QbnPolicy};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "autoq", version, about = "Kernel-wise mixed-precision quantization search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the hierarchical agent and export its best policy.
    Search(SearchArgs),
    /// Exhaustive kernel-wise search over small QBN sets.
    Brute(BruteArgs),
    /// Exhaustive layer-wise or network-wise search.
    Baseline(BaselineArgs),
    /// Report the cost of a policy file.
    Eval(EvalArgs),
    /// Convert a JSON policy to the packed binary format.
    Pack(PackArgs),
    /// Convert a packed policy to JSON.
    Unpack(UnpackArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Resource,
    Accuracy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Timing {
    PerStep,
    Final,
}

#[derive(Clone, Copy, ValueEnum)]
enum Granularity {
    Layer,
    Network,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    hw: PathBuf,
    /// Total weight sensitivity shared among kernels.
    #[arg(long, default_value_t = 0.5)]
    kappa: f64,
    /// Total activation sensitivity shared among layers.
    #[arg(long, default_value_t = 0.2)]
    kappa_act: f64,
}

#[derive(Args)]
struct RewardArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Latency budget in seconds; overrides the hardware file.
    #[arg(long)]
    budget_latency: Option<f64>,
    /// Energy budget in joules; overrides the hardware file.
    #[arg(long)]
    budget_energy: Option<f64>,
    /// Area budget; overrides the hardware file.
    #[arg(long)]
    budget_area: Option<f64>,
    /// Latency exponent in accuracy-guaranteed mode.
    #[arg(long, default_value_t = 0.5)]
    psi_latency: f64,
    /// Energy exponent in accuracy-guaranteed mode.
    #[arg(long, default_value_t = 0.5)]
    psi_energy: f64,
    /// Area exponent in accuracy-guaranteed mode.
    #[arg(long, default_value_t = 0.5)]
    psi_area: f64,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    reward: RewardArgs,
    /// Training episodes; the first min(100, E) explore at constant noise.
    #[arg(long, default_value_t = 400)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Timing::PerStep)]
    timing: Timing,
    /// Replay buffer capacity of each controller.
    #[arg(long)]
    buffer: Option<usize>,
    /// Per-episode noise decay after exploration.
    #[arg(long)]
    noise_decay: Option<f64>,
    /// Holds the shaping weight constant instead of following the schedule.
    #[arg(long)]
    zeta: Option<f64>,
    /// Writes `checkpoint.bin` to the output directory every N episodes.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continues from a checkpoint written with the same arguments.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct BruteArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    reward: RewardArgs,
    /// Weight QBNs to enumerate, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    weight_set: Vec<u8>,
    /// Activation QBNs to enumerate, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    act_set: Vec<u8>,
    /// Directory for the optimal policy files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    brute: BruteArgs,
    #[arg(long, value_enum, default_value_t = Granularity::Layer)]
    granularity: Granularity,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Packed (`AUTOQPOL`) or JSON policy.
    #[arg(long)]
    policy: PathBuf,
    /// Labelled samples for frozen-weight inference accuracy.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct PackArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UnpackArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Writes the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_net(path: &Path) -> Result<NetworkSpec> {
    parse_network_spec(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_hw(path: &Path) -> Result<HardwareConfig> {
    parse_hardware_config(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_policy(path: &Path, net: &NetworkSpec) -> Result<QbnPolicy> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let policy = if bytes.starts_with(POLICY_MAGIC) {
        decode_policy_file(&bytes, net)?
    } else {
        policy_from_json(
            std::str::from_utf8(&bytes).context("policy is neither AUTOQPOL nor UTF-8 JSON")?,
            net,
        )?
    };
    Ok(policy)
}

fn accuracy_config(m: &ModelArgs) -> AccuracyConfig {
    AccuracyConfig {
        kappa: m.kappa,
        kappa_act: m.kappa_act,
    }
}

fn reward_setup(r: &RewardArgs, hw: &HardwareConfig) -> Result<(RewardWeights, Option<Budgets>)> {
    let cli = Budgets {
        latency_s: r.budget_latency,
        energy_j: r.budget_energy,
        area_units: r.budget_area,
    };
    match r.mode {
        Mode::Resource => {
            let file = hw.budgets.unwrap_or_default();
            let budgets = Budgets {
                latency_s: cli.latency_s.or(file.latency_s),
                energy_j: cli.energy_j.or(file.energy_j),
                area_units: cli.area_units.or(file.area_units),
            };
            Ok((RewardWeights::resource_constrained(), Some(budgets)))
        }
        Mode::Accuracy => {
            if !cli.is_empty() {
                return Err(Error::Config("budgets only apply to --mode resource".into()).into());
            }
            Ok((
                RewardWeights::accuracy_guaranteed(r.psi_latency, r.psi_energy, r.psi_area)?,
                None,
            ))
        }
    }
}

fn report_json(report: &CostReport) -> serde_json::Value {
    json!({
        "accuracy": report.accuracy,
        "latency_s": report.latency_s,
        "energy_j": report.energy_j,
        "area": report.area_units,
    })
}

fn write_policy(dir: &Path, net: &NetworkSpec, policy: &QbnPolicy) -> Result<()> {
    fs::write(dir.join("policy.bin"), encode_policy_file(policy)?)?;
    fs::write(dir.join("policy.json"), policy_to_json(net, policy))?;
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    let net = load_net(&a.model.net)?;
    let hw = load_hw(&a.model.hw)?;
    let (weights, budgets) = reward_setup(&a.reward, &hw)?;
    let mut cfg = SearchConfig::new(weights, budgets, a.seed);
    cfg.accuracy = accuracy_config(&a.model);
    cfg.timing = match a.timing {
        Timing::PerStep => RewardTiming::PerStep,
        Timing::Final => RewardTiming::Final,
    };
    cfg.episodes = a.episodes;
    cfg.hyper.explore_episodes = cfg.hyper.explore_episodes.min(a.episodes);
    cfg.hyper.exploit_episodes = a.episodes - cfg.hyper.explore_episodes;
    if let Some(b) = a.buffer {
        cfg.hyper.buffer_capacity = b;
    }
    if let Some(d) = a.noise_decay {
        cfg.hyper.noise_decay = d;
    }
    cfg.zeta_fixed = a.zeta;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ckpt = a.out.join("checkpoint.bin");
    cfg.checkpoint = a.checkpoint_every.map(|n| (ckpt.clone(), n));

    let searcher = match &a.resume {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            Searcher::resume(&net, &hw, &cfg, &bytes)?
        }
        None => Searcher::new(&net, &hw, &cfg)?,
    };
    let result = searcher.finish()?;
    export_trace(&result.trace, &a.out.join("trace.csv"))?;
    write_policy(&a.out, &net, &result.best_policy)?;
    let summary = json!({
        "seed": a.seed,
        "episodes": a.episodes,
        "best_episode": result.best_episode,
        "best_reward": result.best_reward,
        "best_report": report_json(&result.best_report),
    });
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(a.out.join("summary.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn print_baseline(kind: &str, net: &NetworkSpec, r: &BaselineResult, out: Option<&Path>) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_policy(dir, net, &r.policy)?;
    }
    let summary = json!({
        "search": kind,
        "evaluated": r.evaluated,
        "reward": r.reward,
        "report": report_json(&r.report),
        "act_qbn": r.policy.act_qbn,
        "weight_qbn": r.policy.weight_qbn,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

type Exhaustive = fn(
    &NetworkSpec,
    &HardwareConfig,
    &autoq_core::accuracy::AccuracyModelParams,
    &EnvConfig,
    &[u8],
    &[u8],
) -> autoq_core::Result<BaselineResult>;

fn exhaustive(a: &BruteArgs, kind: &str, run: Exhaustive) -> Result<()> {
    let net = load_net(&a.model.net)?;
    let hw = load_hw(&a.model.hw)?;
    let (weights, budgets) = reward_setup(&a.reward, &hw)?;
    let env = EnvConfig {
        weights,
        budgets,
        timing: RewardTiming::PerStep,
    };
    env.validate()?;
    let params = derive_sensitivities(&net, &accuracy_config(&a.model))?;
    let result = run(&net, &hw, &params, &env, &a.weight_set, &a.act_set)?;
    print_baseline(kind, &net, &result, a.out.as_deref())
}

fn eval(a: EvalArgs) -> Result<()> {
    let net = load_net(&a.model.net)?;
    let hw = load_hw(&a.model.hw)?;
    let policy = load_policy(&a.policy, &net)?;
    let params = derive_sensitivities(&net, &accuracy_config(&a.model))?;
    let report = evaluate_policy(&net, &hw, &params, &policy)?;
    let mut out = json!({ "report": report_json(&report) });
    if let Some(path) = &a.dataset {
        let samples = parse_dataset(&read(path)?)?;
        let acc = frozen_inference_accuracy(&net, &policy, &samples, &InferenceConfig::default())?;
        out["inference_accuracy"] = json!(acc);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn pack(a: PackArgs) -> Result<()> {
    let net = load_net(&a.net)?;
    let policy = policy_from_json(&read(&a.policy)?, &net)?;
    fs::write(&a.out, encode_policy_file(&policy)?).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn unpack(a: UnpackArgs) -> Result<()> {
    let net = load_net(&a.net)?;
    let bytes = fs::read(&a.policy).with_context(|| format!("reading {}", a.policy.display()))?;
    let text = policy_to_json(&net, &decode_policy_file(&bytes, &net)?);
    match &a.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search(a) => search(a),
        Command::Brute(a) => exhaustive(&a, "kernel", brute_force_search),
        Command::Baseline(a) => match a.granularity {
            Granularity::Layer => exhaustive(&a.brute, "layer", layerwise_baseline_search),
            Granularity::Network => exhaustive(&a.brute, "network", networkwise_baseline_search),
        },
        Command::Eval(a) => eval(a),
        Command::Pack(a) => pack(a),
        Command::Unpack(a) => unpack(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::InfeasibleBudget(_)) => 3,
        Some(
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::InvalidNetwork(_)
            | Error::SpaceTooLarge { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 2 on usage errors and 0 for --help
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
