//! Deterministic evaluation and the experiment drivers built on it: the
//! held-out-factor suite, ablation presets, and the sweep curves.
//!
//! All success-rate floats in serialized artifacts are rounded to six
//! significant digits, so a re-run with the same inputs reproduces reports
//! byte for byte.

use serde::{Deserialize, Serialize};

use crate::env::{
    build_splits, render, reset, step, ActionCmd, EnvConfig, Observation, SceneState,
    ScenarioSpec, SplitTables,
};
use crate::policy::{ActionValue, PolicyNet};
use crate::ppo::rollout::TrainError;
use crate::ppo::train::{train, NoopHook, TrainConfig};
use crate::rng::{stream, stream_seed};
use crate::views::ViewMode;

/// Round to six significant digits (not six decimals).
pub fn round6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor();
    let factor = 10f64.powi(5 - magnitude as i32);
    (x * factor).round() / factor
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub success: bool,
    pub episode_return: f64,
    pub steps: usize,
    /// Digest of the terminal state, for replay spot checks.
    pub final_digest: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub per_episode: Vec<EpisodeRecord>,
}

pub fn episode_jsonl(result: &EvalResult) -> String {
    let mut out = String::new();
    for r in &result.per_episode {
        out.push_str(&serde_json::to_string(r).expect("episode serialize"));
        out.push('\n');
    }
    out
}

/// Run `n_episodes` with the deterministic policy (Gaussian mean, or argmax
/// logits). Episode `i` is reset from its own stream of `seed`, so the same
/// seed confronts every evaluated policy with the same scenes. Episodes run
/// in lockstep so the policy forward is batched.
pub fn evaluate(
    net: &PolicyNet,
    cfg: &EnvConfig,
    scenario: &ScenarioSpec,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalResult, TrainError> {
    scenario.validate(&cfg.splits).map_err(TrainError::Config)?;
    if n_episodes == 0 {
        return Err(TrainError::Config("n_episodes must be positive".into()));
    }
    let ind = net.cfg.input_dim;
    if ind != Observation::input_dim(cfg.grid) {
        return Err(TrainError::Config(format!(
            "network input dim {ind} does not match the {0}x{0} observation",
            cfg.grid
        )));
    }

    let mut states: Vec<SceneState> = (0..n_episodes)
        .map(|i| reset(cfg, scenario, &mut stream(seed, "eval-env", i as u64)))
        .collect::<Result<_, _>>()?;
    let mut inputs: Vec<Vec<f64>> = states.iter().map(|s| render(cfg, s).to_input()).collect();
    let mut returns = vec![0.0; n_episodes];
    let mut steps_taken = vec![0usize; n_episodes];
    let mut success = vec![false; n_episodes];
    let mut digests = vec![0u64; n_episodes];
    let mut live: Vec<usize> = (0..n_episodes).collect();

    while !live.is_empty() {
        let rows = live.len();
        let mut xs = vec![0.0; rows * ind];
        for (k, &i) in live.iter().enumerate() {
            xs[k * ind..(k + 1) * ind].copy_from_slice(&inputs[i]);
        }
        let plain = net.forward_batch_plain(&xs, rows);
        let mut next_live = Vec::with_capacity(rows);
        for (k, &i) in live.iter().enumerate() {
            let cmd = match plain.dist_at(k).mode() {
                ActionValue::Continuous(v) => {
                    ActionCmd::Continuous { dx: v[0], dy: v[1], grip_logit: v[2] }
                }
                ActionValue::Discrete(d) => ActionCmd::Discrete(d),
            };
            let (ns, r, done, _) = step(cfg, &states[i], &cmd)?;
            returns[i] += r;
            steps_taken[i] += 1;
            if done {
                success[i] = ns.succeeded;
                digests[i] = ns.digest();
            } else {
                inputs[i] = render(cfg, &ns).to_input();
                next_live.push(i);
            }
            states[i] = ns;
        }
        live = next_live;
    }

    let successes = success.iter().filter(|&&s| s).count();
    let per_episode = (0..n_episodes)
        .map(|i| EpisodeRecord {
            episode: i,
            success: success[i],
            episode_return: returns[i],
            steps: steps_taken[i],
            final_digest: digests[i],
        })
        .collect();
    Ok(EvalResult {
        episodes: n_episodes,
        successes,
        success_rate: successes as f64 / n_episodes as f64,
        mean_return: mean(&returns),
        per_episode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterCells {
    #[serde(rename = "2")]
    pub n2: f64,
    #[serde(rename = "4")]
    pub n4: f64,
    #[serde(rename = "6")]
    pub n6: f64,
    #[serde(rename = "8")]
    pub n8: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisResults {
    pub texture: f64,
    pub lighting: f64,
    pub pose: f64,
    pub clutter: ClutterCells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAxes {
    pub seed: u64,
    pub axes: AxisResults,
    pub avg: f64,
}

/// Held-out-factor results averaged over seeds, with the per-seed breakdown.
/// `avg` is the mean of the four axis cells, where the clutter cell is
/// itself the mean over the four distractor counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub axes: AxisResults,
    pub avg: f64,
    pub per_seed: Vec<SeedAxes>,
    pub baseline_ref: Option<String>,
    pub delta_avg: Option<f64>,
}

impl EvalReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialize");
        s.push('\n');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn set_baseline(&mut self, reference: String, baseline_avg: f64) {
        self.baseline_ref = Some(reference);
        self.delta_avg = Some(round6(self.avg - baseline_avg));
    }
}

pub const CLUTTER_COUNTS: [usize; 4] = [2, 4, 6, 8];

struct RawAxes {
    texture: f64,
    lighting: f64,
    pose: f64,
    clutter: [f64; 4],
}

impl RawAxes {
    fn clutter_mean(&self) -> f64 {
        mean(&self.clutter)
    }

    fn avg(&self) -> f64 {
        mean(&[self.texture, self.lighting, self.pose, self.clutter_mean()])
    }

    fn rounded(&self) -> AxisResults {
        AxisResults {
            texture: round6(self.texture),
            lighting: round6(self.lighting),
            pose: round6(self.pose),
            clutter: ClutterCells {
                n2: round6(self.clutter[0]),
                n4: round6(self.clutter[1]),
                n6: round6(self.clutter[2]),
                n8: round6(self.clutter[3]),
                mean: round6(self.clutter_mean()),
            },
        }
    }
}

fn eval_axes(
    net: &PolicyNet,
    cfg: &EnvConfig,
    n_distractors: usize,
    n_episodes: usize,
    eval_seed: u64,
) -> Result<RawAxes, TrainError> {
    let sp = &cfg.splits;
    let cell = |sc: &ScenarioSpec, label: &str, idx: u64| -> Result<f64, TrainError> {
        Ok(evaluate(net, cfg, sc, n_episodes, stream_seed(eval_seed, label, idx))?.success_rate)
    };
    let texture = cell(&ScenarioSpec::texture_ood(sp, n_distractors), "texture", 0)?;
    let lighting = cell(&ScenarioSpec::lighting_ood(sp, n_distractors), "lighting", 0)?;
    let pose = cell(&ScenarioSpec::pose_ood(sp, n_distractors), "pose", 0)?;
    let mut clutter = [0.0; 4];
    for (j, &n) in CLUTTER_COUNTS.iter().enumerate() {
        clutter[j] = cell(&ScenarioSpec::clutter_ood(sp, n), "clutter", n as u64)?;
    }
    Ok(RawAxes { texture, lighting, pose, clutter })
}

/// Evaluate each seed's policy on every held-out axis and aggregate.
/// The same `eval_seed` gives every method the same episode sets per cell,
/// so cross-method comparisons are paired.
pub fn run_ood_suite(
    nets: &[(u64, &PolicyNet)],
    cfg: &EnvConfig,
    n_distractors: usize,
    n_episodes: usize,
    eval_seed: u64,
) -> Result<EvalReport, TrainError> {
    if nets.is_empty() {
        return Err(TrainError::Config("at least one policy is required".into()));
    }
    let mut raws = Vec::with_capacity(nets.len());
    let mut per_seed = Vec::with_capacity(nets.len());
    for &(seed, net) in nets {
        let raw = eval_axes(net, cfg, n_distractors, n_episodes, eval_seed)?;
        per_seed.push(SeedAxes { seed, axes: raw.rounded(), avg: round6(raw.avg()) });
        raws.push(raw);
    }
    let agg = RawAxes {
        texture: mean(&raws.iter().map(|r| r.texture).collect::<Vec<_>>()),
        lighting: mean(&raws.iter().map(|r| r.lighting).collect::<Vec<_>>()),
        pose: mean(&raws.iter().map(|r| r.pose).collect::<Vec<_>>()),
        clutter: [0, 1, 2, 3]
            .map(|j| mean(&raws.iter().map(|r| r.clutter[j]).collect::<Vec<_>>())),
    };
    Ok(EvalReport {
        axes: agg.rounded(),
        avg: round6(agg.avg()),
        per_seed,
        baseline_ref: None,
        delta_avg: None,
    })
}

/// Ablation presets over one base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Both auxiliary weights zeroed.
    Ppo,
    /// Invariance term only (`beta = 0`).
    Invariance,
    /// Sensitivity term only (`alpha = 0`).
    Sensitivity,
    /// Base configuration as-is.
    Ours,
    /// Plain PPO with viewpoint-mode views (weights zero).
    VpPpo,
    /// Base weights with viewpoint-mode views.
    VpOurs,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Ppo => "ppo",
            Method::Invariance => "invariance",
            Method::Sensitivity => "sensitivity",
            Method::Ours => "ours",
            Method::VpPpo => "vp-ppo",
            Method::VpOurs => "vp-ours",
        }
    }

    pub const ALL: [Method; 6] = [
        Method::Ppo,
        Method::Invariance,
        Method::Sensitivity,
        Method::Ours,
        Method::VpPpo,
        Method::VpOurs,
    ];

    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut tc = base.clone();
        match self {
            Method::Ppo => {
                tc.alpha = 0.0;
                tc.beta = 0.0;
            }
            Method::Invariance => tc.beta = 0.0,
            Method::Sensitivity => tc.alpha = 0.0,
            Method::Ours => {}
            Method::VpPpo => {
                tc.alpha = 0.0;
                tc.beta = 0.0;
                tc.view_mode = ViewMode::Viewpoint;
            }
            Method::VpOurs => tc.view_mode = ViewMode::Viewpoint,
        }
        tc
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown method: {s}"))
    }
}

/// One row of long-form curve data: a method evaluated at one x position,
/// with the per-seed outcomes behind the aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub method: String,
    pub x: f64,
    pub seed_values: Vec<f64>,
}

impl CurvePoint {
    pub fn mean(&self) -> f64 {
        mean(&self.seed_values)
    }

    pub fn std(&self) -> f64 {
        pop_std(&self.seed_values)
    }
}

pub fn curve_csv_string(points: &[CurvePoint]) -> String {
    let mut out = String::from("method,x,mean,std,seed_values\n");
    for p in points {
        let vals: Vec<String> =
            p.seed_values.iter().map(|v| format!("{}", round6(*v))).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.method,
            p.x,
            round6(p.mean()),
            round6(p.std()),
            vals.join(";")
        ));
    }
    out
}

/// One alpha sweep result: the per-alpha suite reports plus long-form plot
/// rows (one row per axis per alpha, seed values retained).
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSweepOutcome {
    pub reports: Vec<(f64, EvalReport)>,
    pub points: Vec<CurvePoint>,
}

/// Train one policy per (alpha, seed) with the sensitivity term disabled and
/// measure in-distribution and held-out success. The seed schedule is shared
/// across alpha values, so each seed's runs differ only in alpha.
pub fn run_alpha_sweep(
    base: &TrainConfig,
    alphas: &[f64],
    seeds: &[u64],
    n_episodes: usize,
    eval_seed: u64,
) -> Result<AlphaSweepOutcome, TrainError> {
    let cfg = EnvConfig::new(build_splits(base.split_seed));
    let mut reports = Vec::with_capacity(alphas.len());
    let mut points = Vec::new();
    for &alpha in alphas {
        let mut nets = Vec::with_capacity(seeds.len());
        let mut id_vals = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut tc = base.clone();
            tc.alpha = alpha;
            tc.beta = 0.0;
            tc.seed = seed;
            let out = train(&tc, &mut NoopHook)?;
            let id = evaluate(
                &out.net,
                &cfg,
                &ScenarioSpec::train(&cfg.splits, tc.n_distractors),
                n_episodes,
                stream_seed(eval_seed, "id", 0),
            )?;
            id_vals.push(id.success_rate);
            nets.push((seed, out.net));
        }
        let refs: Vec<(u64, &PolicyNet)> = nets.iter().map(|(s, n)| (*s, n)).collect();
        let report = run_ood_suite(&refs, &cfg, base.n_distractors, n_episodes, eval_seed)?;
        let col = |f: &dyn Fn(&SeedAxes) -> f64| report.per_seed.iter().map(f).collect::<Vec<_>>();
        points.push(CurvePoint { method: "id".into(), x: alpha, seed_values: id_vals });
        points.push(CurvePoint {
            method: "ood_avg".into(),
            x: alpha,
            seed_values: col(&|s| s.avg),
        });
        points.push(CurvePoint {
            method: "texture".into(),
            x: alpha,
            seed_values: col(&|s| s.axes.texture),
        });
        points.push(CurvePoint {
            method: "lighting".into(),
            x: alpha,
            seed_values: col(&|s| s.axes.lighting),
        });
        points.push(CurvePoint {
            method: "pose".into(),
            x: alpha,
            seed_values: col(&|s| s.axes.pose),
        });
        points.push(CurvePoint {
            method: "clutter_mean".into(),
            x: alpha,
            seed_values: col(&|s| s.axes.clutter.mean),
        });
        reports.push((alpha, report));
    }
    Ok(AlphaSweepOutcome { reports, points })
}

/// Success against distractor count for each ablation preset.
pub fn run_clutter_curve(
    base: &TrainConfig,
    methods: &[Method],
    seeds: &[u64],
    n_episodes: usize,
    eval_seed: u64,
) -> Result<Vec<CurvePoint>, TrainError> {
    let cfg = EnvConfig::new(build_splits(base.split_seed));
    let mut points = Vec::new();
    for &method in methods {
        let mut per_n: Vec<Vec<f64>> = vec![Vec::new(); CLUTTER_COUNTS.len()];
        for &seed in seeds {
            let mut tc = method.configure(base);
            tc.seed = seed;
            let out = train(&tc, &mut NoopHook)?;
            for (j, &n) in CLUTTER_COUNTS.iter().enumerate() {
                let r = evaluate(
                    &out.net,
                    &cfg,
                    &ScenarioSpec::clutter_ood(&cfg.splits, n),
                    n_episodes,
                    stream_seed(eval_seed, "clutter", n as u64),
                )?;
                per_n[j].push(r.success_rate);
            }
        }
        for (j, &n) in CLUTTER_COUNTS.iter().enumerate() {
            points.push(CurvePoint {
                method: method.label().into(),
                x: n as f64,
                seed_values: per_n[j].clone(),
            });
        }
    }
    Ok(points)
}

/// A single-angle evaluation cell. Training angles stay a train-kind
/// scenario; held-out angles use the camera axis.
pub fn camera_cell(splits: &SplitTables, n_distractors: usize, angle_deg: u32) -> ScenarioSpec {
    if splits.camera_train_deg.contains(&angle_deg) {
        ScenarioSpec {
            camera_angle_deg: vec![angle_deg],
            ..ScenarioSpec::train(splits, n_distractors)
        }
    } else {
        ScenarioSpec::camera_at(splits, n_distractors, vec![angle_deg])
    }
}

/// Per-method means over the training-angle range and the held-out range,
/// with the seed values behind each mean. All floats six significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMeans {
    pub method: String,
    pub id_mean: f64,
    pub ood_mean: f64,
    pub per_seed_id: Vec<f64>,
    pub per_seed_ood: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointOutcome {
    pub points: Vec<CurvePoint>,
    pub ranges: Vec<RangeMeans>,
}

/// Success at every camera angle, training range and beyond, for each
/// preset. The x axis is the angle in degrees; the summary collapses each
/// method to its mean over the six training angles and over the two
/// held-out angles.
pub fn run_viewpoint_extrapolation(
    base: &TrainConfig,
    methods: &[Method],
    seeds: &[u64],
    n_episodes: usize,
    eval_seed: u64,
) -> Result<ViewpointOutcome, TrainError> {
    let cfg = EnvConfig::new(build_splits(base.split_seed));
    let n_train_angles = cfg.splits.camera_train_deg.len();
    let mut angles: Vec<u32> = cfg.splits.camera_train_deg.clone();
    angles.extend_from_slice(&cfg.splits.camera_eval_deg);
    let mut points = Vec::new();
    let mut ranges = Vec::new();
    for &method in methods {
        let mut per_angle: Vec<Vec<f64>> = vec![Vec::new(); angles.len()];
        let mut per_seed_id = Vec::with_capacity(seeds.len());
        let mut per_seed_ood = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut tc = method.configure(base);
            tc.seed = seed;
            let out = train(&tc, &mut NoopHook)?;
            let mut rates = Vec::with_capacity(angles.len());
            for (j, &a) in angles.iter().enumerate() {
                let sc = camera_cell(&cfg.splits, tc.n_distractors, a);
                let r = evaluate(
                    &out.net,
                    &cfg,
                    &sc,
                    n_episodes,
                    stream_seed(eval_seed, "camera", a as u64),
                )?;
                per_angle[j].push(r.success_rate);
                rates.push(r.success_rate);
            }
            per_seed_id.push(mean(&rates[..n_train_angles]));
            per_seed_ood.push(mean(&rates[n_train_angles..]));
        }
        for (j, &a) in angles.iter().enumerate() {
            points.push(CurvePoint {
                method: method.label().into(),
                x: f64::from(a),
                seed_values: per_angle[j].clone(),
            });
        }
        ranges.push(RangeMeans {
            method: method.label().into(),
            id_mean: round6(mean(&per_seed_id)),
            ood_mean: round6(mean(&per_seed_ood)),
            per_seed_id: per_seed_id.iter().map(|&v| round6(v)).collect(),
            per_seed_ood: per_seed_ood.iter().map(|&v| round6(v)).collect(),
        });
    }
    Ok(ViewpointOutcome { points, ranges })
}
