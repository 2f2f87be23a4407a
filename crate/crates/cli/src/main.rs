//! `pair-rl`: train policies, evaluate checkpoints, and run the experiment
//! sweeps. Every subcommand writes its artifacts under `--out` and is
//! deterministic given its flags, so re-running a command reproduces its
//! output files byte for byte (metrics timing fields aside).

use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pair_rl_core::autodiff::{load_checkpoint, save_checkpoint};
use pair_rl_core::env::{build_splits, EnvConfig, ScenarioKind, ScenarioSpec};
use pair_rl_core::harness::{
    curve_csv_string, episode_jsonl, evaluate, round6, run_alpha_sweep, run_clutter_curve,
    run_ood_suite, run_viewpoint_extrapolation, EvalReport, Method,
};
use pair_rl_core::policy::PolicyNet;
use pair_rl_core::ppo::{train, MetricsRecord, TrainConfig, TrainHook};

#[derive(Parser)]
#[command(name = "pair-rl", version, about = "Paired-view regularized PPO toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one policy; writes config.json, metrics.jsonl, final.ckpt.
    Train(TrainArgs),
    /// Roll out a checkpoint on one scenario with the deterministic policy.
    Eval(EvalArgs),
    /// Held-out-factor suite over one or more checkpoints; writes report.json.
    Suite(SuiteArgs),
    /// Train across invariance weights (sensitivity off) and run the suite per value.
    SweepAlpha(SweepAlphaArgs),
    /// Success against distractor count for the chosen presets.
    ClutterCurve(CurveArgs),
    /// Camera-angle extrapolation with viewpoint-mode views.
    Viewpoint(CurveArgs),
    /// Print or write the deterministic benchmark split tables.
    MakeSplits(MakeSplitsArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON training config; absent fields take built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Invariance weight override.
    #[arg(long)]
    alpha: Option<f64>,
    /// Sensitivity weight override.
    #[arg(long)]
    beta: Option<f64>,
    /// Sensitivity clip threshold override.
    #[arg(long = "clip-c")]
    clip_c: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut tc = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            tc.seed = seed;
        }
        if let Some(alpha) = self.alpha {
            tc.alpha = alpha;
        }
        if let Some(beta) = self.beta {
            tc.beta = beta;
        }
        if let Some(c) = self.clip_c {
            tc.sens_clip = c;
        }
        Ok(tc)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    s.parse()
}

#[derive(Args)]
struct EvalArgs {
    /// Policy checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scenario kind: train, texture_ood, lighting_ood, pose_ood, clutter_ood, camera.
    #[arg(long, default_value = "train", value_parser = parse_scenario)]
    scenario: ScenarioKind,
    /// Episode count.
    #[arg(long, default_value_t = 128)]
    episodes: usize,
    /// Evaluation seed (fixes the episode set).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Distractor count; defaults to 1 (4 for clutter_ood).
    #[arg(long)]
    distractors: Option<usize>,
    /// Seed of the split tables; must match training.
    #[arg(long, default_value_t = TrainConfig::default_split_seed())]
    split_seed: u64,
    /// Optional output directory for eval.json and episodes.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    /// Policy checkpoint; repeat the flag for one checkpoint per training seed.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// Seed labels matching the checkpoints, comma-separated; defaults to 0..k.
    #[arg(long, value_delimiter = ',')]
    train_seeds: Vec<u64>,
    /// Episodes per suite cell.
    #[arg(long, default_value_t = 128)]
    episodes: usize,
    /// Evaluation seed shared by every cell.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Distractors in the non-clutter cells.
    #[arg(long, default_value_t = 1)]
    distractors: usize,
    /// Seed of the split tables; must match training.
    #[arg(long, default_value_t = TrainConfig::default_split_seed())]
    split_seed: u64,
    /// Baseline report.json; fills baseline_ref and delta_avg.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepAlphaArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Invariance weights to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0, 4.0])]
    alphas: Vec<f64>,
    /// Training seeds, shared across sweep values.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
    seeds: Vec<u64>,
    /// Episodes per evaluation cell.
    #[arg(long, default_value_t = 128)]
    episodes: usize,
    /// Evaluation seed shared by every cell.
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Presets to run: ppo, invariance, sensitivity, ours, vp-ppo, vp-ours.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<Method>,
    /// Training seeds, shared across presets.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
    seeds: Vec<u64>,
    /// Episodes per evaluation cell.
    #[arg(long, default_value_t = 128)]
    episodes: usize,
    /// Evaluation seed shared by every cell.
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MakeSplitsArgs {
    /// Split-table seed.
    #[arg(long, default_value_t = TrainConfig::default_split_seed())]
    seed: u64,
    /// Output directory for splits.json; prints to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Suite(a) => cmd_suite(a),
        Cmd::SweepAlpha(a) => cmd_sweep_alpha(a),
        Cmd::ClutterCurve(a) => cmd_clutter_curve(a),
        Cmd::Viewpoint(a) => cmd_viewpoint(a),
        Cmd::MakeSplits(a) => cmd_make_splits(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Streams one JSONL metrics line per update so long runs can be tailed.
struct JsonlHook {
    w: BufWriter<File>,
    io_error: Option<std::io::Error>,
}

impl JsonlHook {
    fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(JsonlHook { w: BufWriter::new(f), io_error: None })
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.io_error.take() {
            return Err(e).context("writing metrics.jsonl");
        }
        self.w.flush().context("flushing metrics.jsonl")
    }
}

impl TrainHook for JsonlHook {
    fn after_update(&mut self, _update: usize, record: &MetricsRecord) -> bool {
        let line = serde_json::to_string(record).expect("metrics serialize");
        let res = writeln!(self.w, "{line}").and_then(|_| self.w.flush());
        match res {
            Ok(()) => true,
            Err(e) => {
                self.io_error = Some(e);
                false
            }
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let tc = args.config.resolve()?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut cfg_json = serde_json::to_string_pretty(&tc).expect("config serialize");
    cfg_json.push('\n');
    write_text(&args.out.join("config.json"), &cfg_json)?;

    let mut hook = JsonlHook::create(&args.out.join("metrics.jsonl"))?;
    let out = train(&tc, &mut hook).map_err(|e| anyhow!("training failed: {e}"))?;
    hook.finish()?;

    let ckpt = args.out.join("final.ckpt");
    save_checkpoint(&ckpt, &out.net.named_params())
        .with_context(|| format!("writing {}", ckpt.display()))?;
    if out.diverged {
        eprintln!(
            "warning: training hit a numeric failure after {} updates; \
             the checkpoint holds the last stable parameters",
            out.metrics.len()
        );
    }
    let last_success = out.metrics.last().map_or(0.0, |m| m.rollout_success_rate);
    println!(
        "trained {} updates (last rollout success {:.3}); wrote {}",
        out.metrics.len(),
        last_success,
        ckpt.display()
    );
    Ok(())
}

fn load_net(path: &Path) -> Result<PolicyNet> {
    let tensors =
        load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    PolicyNet::from_named(tensors)
        .map_err(|e| anyhow!("{}: invalid policy checkpoint: {e}", path.display()))
}

fn scenario_for(kind: ScenarioKind, cfg: &EnvConfig, distractors: Option<usize>) -> ScenarioSpec {
    let sp = &cfg.splits;
    let n = distractors.unwrap_or(match kind {
        ScenarioKind::ClutterOod => 4,
        _ => 1,
    });
    match kind {
        ScenarioKind::Train => ScenarioSpec::train(sp, n),
        ScenarioKind::TextureOod => ScenarioSpec::texture_ood(sp, n),
        ScenarioKind::LightingOod => ScenarioSpec::lighting_ood(sp, n),
        ScenarioKind::PoseOod => ScenarioSpec::pose_ood(sp, n),
        ScenarioKind::ClutterOod => ScenarioSpec::clutter_ood(sp, n),
        ScenarioKind::Camera => ScenarioSpec::camera(sp, n),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let net = load_net(&args.checkpoint)?;
    let cfg = EnvConfig::new(build_splits(args.split_seed));
    let scenario = scenario_for(args.scenario, &cfg, args.distractors);
    let result = evaluate(&net, &cfg, &scenario, args.episodes, args.seed)
        .map_err(|e| anyhow!("evaluation failed: {e}"))?;
    println!(
        "scenario={} episodes={} successes={} success_rate={}",
        args.scenario.as_str(),
        result.episodes,
        result.successes,
        round6(result.success_rate)
    );
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let summary = serde_json::json!({
            "scenario": args.scenario.as_str(),
            "n_distractors": scenario.n_distractors,
            "episodes": result.episodes,
            "successes": result.successes,
            "success_rate": round6(result.success_rate),
            "mean_return": round6(result.mean_return),
            "seed": args.seed,
        });
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serialize");
        text.push('\n');
        write_text(&out.join("eval.json"), &text)?;
        write_text(&out.join("episodes.jsonl"), &episode_jsonl(&result))?;
    }
    Ok(())
}

fn cmd_suite(args: SuiteArgs) -> Result<()> {
    if !args.train_seeds.is_empty() && args.train_seeds.len() != args.checkpoint.len() {
        bail!(
            "{} train seeds for {} checkpoints",
            args.train_seeds.len(),
            args.checkpoint.len()
        );
    }
    let nets: Vec<PolicyNet> =
        args.checkpoint.iter().map(|p| load_net(p)).collect::<Result<_>>()?;
    let labeled: Vec<(u64, &PolicyNet)> = nets
        .iter()
        .enumerate()
        .map(|(i, n)| (args.train_seeds.get(i).copied().unwrap_or(i as u64), n))
        .collect();
    let cfg = EnvConfig::new(build_splits(args.split_seed));
    let mut report = run_ood_suite(&labeled, &cfg, args.distractors, args.episodes, args.seed)
        .map_err(|e| anyhow!("suite failed: {e}"))?;
    if let Some(base_path) = &args.baseline {
        let text = fs::read_to_string(base_path)
            .with_context(|| format!("reading {}", base_path.display()))?;
        let baseline = EvalReport::from_json_str(&text)
            .with_context(|| format!("parsing {}", base_path.display()))?;
        report.set_baseline(base_path.display().to_string(), baseline.avg);
    }
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("report.json"), &report.to_json_string())?;
    println!(
        "suite avg={} over {} checkpoint(s); wrote {}",
        report.avg,
        nets.len(),
        args.out.join("report.json").display()
    );
    Ok(())
}

fn cmd_sweep_alpha(args: SweepAlphaArgs) -> Result<()> {
    let base = args.config.resolve()?;
    if args.alphas.is_empty() || args.seeds.is_empty() {
        bail!("at least one alpha and one seed are required");
    }
    let outcome = run_alpha_sweep(&base, &args.alphas, &args.seeds, args.episodes, args.eval_seed)
        .map_err(|e| anyhow!("alpha sweep failed: {e}"))?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("sweep_alpha.csv"), &curve_csv_string(&outcome.points))?;
    for (alpha, report) in &outcome.reports {
        let name = format!("report_alpha_{alpha}.json");
        write_text(&args.out.join(name), &report.to_json_string())?;
    }
    println!(
        "swept {} alpha value(s) x {} seed(s); wrote {}",
        args.alphas.len(),
        args.seeds.len(),
        args.out.join("sweep_alpha.csv").display()
    );
    Ok(())
}

fn cmd_clutter_curve(args: CurveArgs) -> Result<()> {
    let base = args.config.resolve()?;
    let methods = if args.methods.is_empty() {
        vec![Method::Ppo, Method::Ours]
    } else {
        args.methods.clone()
    };
    if args.seeds.is_empty() {
        bail!("at least one seed is required");
    }
    let points = run_clutter_curve(&base, &methods, &args.seeds, args.episodes, args.eval_seed)
        .map_err(|e| anyhow!("clutter curve failed: {e}"))?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("clutter_curve.csv"), &curve_csv_string(&points))?;
    println!(
        "clutter curve over {} preset(s); wrote {}",
        methods.len(),
        args.out.join("clutter_curve.csv").display()
    );
    Ok(())
}

fn cmd_viewpoint(args: CurveArgs) -> Result<()> {
    let base = args.config.resolve()?;
    let methods = if args.methods.is_empty() {
        vec![Method::VpPpo, Method::VpOurs]
    } else {
        args.methods.clone()
    };
    if args.seeds.is_empty() {
        bail!("at least one seed is required");
    }
    let outcome =
        run_viewpoint_extrapolation(&base, &methods, &args.seeds, args.episodes, args.eval_seed)
            .map_err(|e| anyhow!("viewpoint sweep failed: {e}"))?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("viewpoint_curve.csv"), &curve_csv_string(&outcome.points))?;
    let mut summary =
        serde_json::to_string_pretty(&outcome.ranges).expect("range summary serialize");
    summary.push('\n');
    write_text(&args.out.join("viewpoint_summary.json"), &summary)?;
    println!(
        "viewpoint sweep over {} preset(s); wrote {}",
        methods.len(),
        args.out.join("viewpoint_curve.csv").display()
    );
    Ok(())
}

fn cmd_make_splits(args: MakeSplitsArgs) -> Result<()> {
    let splits = build_splits(args.seed);
    let mut text = serde_json::to_string_pretty(&splits).expect("splits serialize");
    text.push('\n');
    match &args.out {
        Some(out) => {
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let path = out.join("splits.json");
            write_text(&path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
