//! Paired observation views for the two auxiliary objectives.
//!
//! The preserving view keeps task pixels and swaps everything else for a
//! pre-rendered background snapshot (or re-renders from another training
//! camera angle). The altering view re-renders after perturbing the pose of
//! the task object. Both are built from a state plus its observation; the
//! state itself is never mutated.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{
    render, render_background, segmentation_mask, EnvConfig, EnvError, LightingConfig,
    Observation, SceneState, CHANNELS, ORIENTATIONS, TARGET_ID,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// Composite task pixels over a snapshot background.
    Composite,
    /// Re-render the same scene from a different training camera angle.
    Viewpoint,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub grid: Vec<f64>,
    pub texture_id: usize,
    pub lighting: LightingConfig,
}

#[derive(Debug, Clone)]
pub struct SnapshotBank {
    pub snapshots: Vec<Snapshot>,
}

impl SnapshotBank {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// Pre-render `k` empty-table snapshots. The pool must be a non-empty subset
/// of the training textures: backgrounds must never leak held-out styles.
/// Snapshots use the canonical camera and training lighting.
pub fn build_snapshot_bank(
    cfg: &EnvConfig,
    pool: &[usize],
    k: usize,
    rng: &mut impl Rng,
) -> Result<SnapshotBank, EnvError> {
    if pool.is_empty() {
        return Err(EnvError::Scenario("empty texture pool for snapshot bank".into()));
    }
    if k == 0 {
        return Err(EnvError::Scenario("snapshot bank size must be at least 1".into()));
    }
    for &t in pool {
        if !cfg.splits.texture_train.contains(&t) {
            return Err(EnvError::Scenario(format!(
                "texture {t} is not in the training split"
            )));
        }
    }
    let mut ids = pool.to_vec();
    ids.shuffle(rng);
    let snapshots = (0..k)
        .map(|i| {
            let texture_id = ids[i % ids.len()];
            Snapshot {
                grid: render_background(cfg, texture_id, LightingConfig::TRAIN, 0.0),
                texture_id,
                lighting: LightingConfig::TRAIN,
            }
        })
        .collect();
    Ok(SnapshotBank { snapshots })
}

/// Per-pixel composite `m * obs + (1 - m) * snapshot` across all channels.
/// `mask` is binary, so each output value is a bitwise copy of one input.
/// Returns the view and the index of the snapshot used.
pub fn make_preserving_view(
    obs: &Observation,
    mask: &[f64],
    bank: &SnapshotBank,
    rng: &mut impl Rng,
) -> (Observation, usize) {
    let j = rng.random_range(0..bank.len());
    let snap = &bank.snapshots[j];
    let hw = obs.n * obs.n;
    let mut grid = vec![0.0; CHANNELS * hw];
    for ch in 0..CHANNELS {
        for idx in 0..hw {
            let m = mask[idx];
            grid[ch * hw + idx] =
                m * obs.grid[ch * hw + idx] + (1.0 - m) * snap.grid[ch * hw + idx];
        }
    }
    (
        Observation {
            grid,
            proprio: obs.proprio,
            instruction: obs.instruction.clone(),
            n: obs.n,
        },
        j,
    )
}

/// Preserving view for the viewpoint variant: the identical scene rendered
/// from another training camera angle. Angles outside the training set are a
/// contract violation, not a silent extrapolation.
pub fn make_preserving_view_viewpoint(
    cfg: &EnvConfig,
    state: &SceneState,
    angle_deg: u32,
) -> Result<Observation, EnvError> {
    if !cfg.splits.camera_train_deg.contains(&angle_deg) {
        return Err(EnvError::Contract(format!(
            "camera angle {angle_deg} deg is outside the training set"
        )));
    }
    let mut s = state.clone();
    s.camera_angle = f64::from(angle_deg).to_radians();
    Ok(render(cfg, &s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseNoise {
    pub translation_std: f64,
    pub resample_orientation: bool,
}

impl Default for PoseNoise {
    fn default() -> Self {
        PoseNoise { translation_std: 0.06, resample_orientation: true }
    }
}

/// Perturb the pose of the task object (or of the gripper-plus-object pair
/// when it is held, keeping the grasp rigid). Draw order: dx, dy, then the
/// orientation resample.
pub fn perturb_pose(
    cfg: &EnvConfig,
    state: &SceneState,
    noise: &PoseNoise,
    rng: &mut impl Rng,
) -> SceneState {
    let _ = cfg;
    let normal = Normal::new(0.0, noise.translation_std).expect("translation_std must be >= 0");
    let dx: f64 = normal.sample(rng);
    let dy: f64 = normal.sample(rng);
    let mut s = state.clone();
    if s.gripper.grasped == Some(TARGET_ID) {
        s.gripper.x = (s.gripper.x + dx).clamp(-1.0, 1.0);
        s.gripper.y = (s.gripper.y + dy).clamp(-1.0, 1.0);
        s.target.x = s.gripper.x;
        s.target.y = s.gripper.y;
    } else {
        s.target.x = (s.target.x + dx).clamp(-1.0, 1.0);
        s.target.y = (s.target.y + dy).clamp(-1.0, 1.0);
    }
    if noise.resample_orientation {
        s.target.orientation = ORIENTATIONS[rng.random_range(0..ORIENTATIONS.len())];
    }
    s
}

pub fn make_altering_view(
    cfg: &EnvConfig,
    state: &SceneState,
    noise: &PoseNoise,
    rng: &mut impl Rng,
) -> Observation {
    let s = perturb_pose(cfg, state, noise, rng);
    render(cfg, &s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewProvenance {
    pub snapshot_index: Option<usize>,
    pub viewpoint_deg: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct PairedViews {
    pub prev: Observation,
    pub alt: Observation,
    pub provenance: ViewProvenance,
}

/// Build both views for one transition. Draw order: the preserving draw
/// (snapshot index or angle index), then the altering-view pose noise.
/// Callers that do not use the views still call this so their RNG streams
/// stay aligned with runs that do.
pub fn build_paired_views(
    cfg: &EnvConfig,
    state: &SceneState,
    obs: &Observation,
    mode: ViewMode,
    bank: &SnapshotBank,
    noise: &PoseNoise,
    rng: &mut impl Rng,
) -> Result<PairedViews, EnvError> {
    let (prev, provenance) = match mode {
        ViewMode::Composite => {
            let mask = segmentation_mask(cfg, state);
            let (view, j) = make_preserving_view(obs, &mask, bank, rng);
            (view, ViewProvenance { snapshot_index: Some(j), viewpoint_deg: None })
        }
        ViewMode::Viewpoint => {
            let current = state.camera_angle.to_degrees().round() as u32;
            let candidates: Vec<u32> = cfg
                .splits
                .camera_train_deg
                .iter()
                .copied()
                .filter(|&a| a != current)
                .collect();
            let pick = if candidates.is_empty() {
                current
            } else {
                candidates[rng.random_range(0..candidates.len())]
            };
            let view = make_preserving_view_viewpoint(cfg, state, pick)?;
            (view, ViewProvenance { snapshot_index: None, viewpoint_deg: Some(pick) })
        }
    };
    let alt = make_altering_view(cfg, state, noise, rng);
    Ok(PairedViews { prev, alt, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_splits, reset, ScenarioSpec, CH_OCCUPANCY, CH_RECEPTACLE, CH_TEXTURE0};
    use crate::rng::stream;

    fn cfg() -> EnvConfig {
        EnvConfig::new(build_splits(7))
    }

    fn sample(cfg: &EnvConfig, n_distractors: usize, idx: u64) -> SceneState {
        let sc = ScenarioSpec::train(&cfg.splits, n_distractors);
        let mut rng = stream(7, "views-test", idx);
        reset(cfg, &sc, &mut rng).unwrap()
    }

    fn bank(cfg: &EnvConfig, k: usize, idx: u64) -> SnapshotBank {
        let mut rng = stream(7, "views-bank", idx);
        build_snapshot_bank(cfg, &cfg.splits.texture_train, k, &mut rng).unwrap()
    }

    #[test]
    fn bank_rejects_eval_textures_empty_pools_and_zero_size() {
        let cfg = cfg();
        let mut rng = stream(7, "views-bank", 100);
        assert!(matches!(
            build_snapshot_bank(&cfg, &[], 4, &mut rng),
            Err(EnvError::Scenario(_))
        ));
        assert!(matches!(
            build_snapshot_bank(&cfg, &cfg.splits.texture_train, 0, &mut rng),
            Err(EnvError::Scenario(_))
        ));
        let with_eval = vec![0, cfg.splits.texture_eval[0]];
        assert!(matches!(
            build_snapshot_bank(&cfg, &with_eval, 4, &mut rng),
            Err(EnvError::Scenario(_))
        ));
        // Oversized banks cycle through the shuffled pool.
        let b = build_snapshot_bank(&cfg, &[3, 5], 5, &mut rng).unwrap();
        assert_eq!(b.len(), 5);
        assert!(b.snapshots.iter().all(|s| s.texture_id == 3 || s.texture_id == 5));
        let hw = cfg.grid * cfg.grid;
        for s in &b.snapshots {
            assert!(s.grid[..CH_TEXTURE0 * hw].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn full_mask_returns_the_observation_and_empty_mask_the_snapshot() {
        let cfg = cfg();
        let s = sample(&cfg, 2, 0);
        let obs = render(&cfg, &s);
        let b = bank(&cfg, 3, 0);
        let hw = cfg.grid * cfg.grid;

        let ones = vec![1.0; hw];
        let mut rng = stream(7, "views-test", 50);
        let (v, _) = make_preserving_view(&obs, &ones, &b, &mut rng);
        for (a, o) in v.grid.iter().zip(&obs.grid) {
            assert_eq!(a.to_bits(), o.to_bits());
        }

        let zeros = vec![0.0; hw];
        let (v, j) = make_preserving_view(&obs, &zeros, &b, &mut rng);
        for (a, o) in v.grid.iter().zip(&b.snapshots[j].grid) {
            assert_eq!(a.to_bits(), o.to_bits());
        }
        assert_eq!(v.proprio, obs.proprio);
        assert_eq!(v.instruction, obs.instruction);
    }

    #[test]
    fn composite_matches_a_per_pixel_select_oracle() {
        let cfg = cfg();
        let s = sample(&cfg, 2, 1);
        let obs = render(&cfg, &s);
        let mask = segmentation_mask(&cfg, &s);
        let b = bank(&cfg, 4, 1);
        let mut rng_a = stream(7, "views-test", 51);
        let mut rng_b = stream(7, "views-test", 51);
        let (v, j) = make_preserving_view(&obs, &mask, &b, &mut rng_a);
        assert_eq!(j, rng_b.random_range(0..b.len()));
        let hw = cfg.grid * cfg.grid;
        for ch in 0..CHANNELS {
            for idx in 0..hw {
                let want = if mask[idx] == 1.0 {
                    obs.grid[ch * hw + idx]
                } else {
                    b.snapshots[j].grid[ch * hw + idx]
                };
                assert_eq!(v.grid[ch * hw + idx].to_bits(), want.to_bits());
            }
        }
    }

    /// With the real mask, distractor evidence cannot survive compositing:
    /// outside the mask the view shows only the snapshot (entity channels
    /// exactly zero), and when distractors are clear of the task footprints
    /// the entity channels equal a distractor-free render of the scene.
    #[test]
    fn preserving_view_erases_distractors() {
        let cfg = cfg();
        let mut s = sample(&cfg, 2, 2);
        s.lighting = LightingConfig::TRAIN;
        // Push distractors well away from gripper, target, and receptacle.
        s.distractors[0].x = 0.9;
        s.distractors[0].y = 0.9;
        s.distractors[1].x = 0.9;
        s.distractors[1].y = -0.9;
        let obs = render(&cfg, &s);
        let mask = segmentation_mask(&cfg, &s);
        let b = bank(&cfg, 2, 2);
        let mut rng = stream(7, "views-test", 52);
        let (v, _) = make_preserving_view(&obs, &mask, &b, &mut rng);

        let hw = cfg.grid * cfg.grid;
        for idx in 0..hw {
            if mask[idx] == 0.0 {
                for ch in 0..CH_TEXTURE0 {
                    assert_eq!(v.grid[ch * hw + idx], 0.0);
                }
            }
        }
        let mut bare = s.clone();
        bare.distractors.clear();
        let clean = render(&cfg, &bare);
        for ch in 0..CH_TEXTURE0 {
            for idx in 0..hw {
                assert_eq!(
                    v.grid[ch * hw + idx].to_bits(),
                    clean.grid[ch * hw + idx].to_bits(),
                    "entity channel {ch} differs from the distractor-free scene"
                );
            }
        }
        // The observation itself does show the distractors.
        assert_ne!(obs.grid[CH_OCCUPANCY * hw..(CH_OCCUPANCY + 1) * hw], clean.grid[CH_OCCUPANCY * hw..(CH_OCCUPANCY + 1) * hw]);
    }

    #[test]
    fn viewpoint_view_requires_a_training_angle() {
        let cfg = cfg();
        let s = sample(&cfg, 1, 3);
        assert!(make_preserving_view_viewpoint(&cfg, &s, 8).is_ok());
        assert!(matches!(
            make_preserving_view_viewpoint(&cfg, &s, 24),
            Err(EnvError::Contract(_))
        ));
        assert!(matches!(
            make_preserving_view_viewpoint(&cfg, &s, 7),
            Err(EnvError::Contract(_))
        ));
        // The view is the same scene: instruction and proprio are unchanged,
        // and a zero-degree request reproduces the base render bitwise when
        // the state already sits at zero degrees.
        let mut s0 = s.clone();
        s0.camera_angle = 0.0;
        let base = render(&cfg, &s0);
        let v = make_preserving_view_viewpoint(&cfg, &s0, 0).unwrap();
        assert_eq!(v.grid, base.grid);
    }

    #[test]
    fn zero_noise_leaves_the_render_unchanged() {
        let cfg = cfg();
        let s = sample(&cfg, 1, 4);
        let obs = render(&cfg, &s);
        let noise = PoseNoise { translation_std: 0.0, resample_orientation: false };
        let mut rng = stream(7, "views-test", 53);
        let frozen = perturb_pose(&cfg, &s, &noise, &mut rng);
        assert_eq!(frozen, s);
        let noise = PoseNoise { translation_std: 0.0, resample_orientation: true };
        let v = make_altering_view(&cfg, &s, &noise, &mut rng);
        // Orientation may move, but it is not rendered.
        for (a, o) in v.grid.iter().zip(&obs.grid) {
            assert_eq!(a.to_bits(), o.to_bits());
        }
        assert_eq!(v.proprio, obs.proprio);
    }

    #[test]
    fn perturbed_poses_stay_on_the_table_and_orientations_in_the_set() {
        let cfg = cfg();
        let s = sample(&cfg, 1, 5);
        let noise = PoseNoise { translation_std: 0.8, resample_orientation: true };
        let mut rng = stream(7, "views-test", 54);
        for _ in 0..100_000 {
            let p = perturb_pose(&cfg, &s, &noise, &mut rng);
            assert!(p.target.x >= -1.0 && p.target.x <= 1.0);
            assert!(p.target.y >= -1.0 && p.target.y <= 1.0);
            assert!(ORIENTATIONS.contains(&p.target.orientation));
        }
    }

    #[test]
    fn altering_view_touches_only_task_object_channels() {
        let cfg = cfg();
        let mut s = sample(&cfg, 2, 6);
        s.gripper.grasped = None;
        let obs = render(&cfg, &s);
        let noise = PoseNoise { translation_std: 0.3, resample_orientation: true };
        let mut rng = stream(7, "views-test", 55);
        let v = make_altering_view(&cfg, &s, &noise, &mut rng);
        let hw = cfg.grid * cfg.grid;
        // Texture, receptacle, and gripper channels are untouched when the
        // object is not held; instruction and proprio are copies.
        assert_eq!(v.grid[CH_TEXTURE0 * hw..], obs.grid[CH_TEXTURE0 * hw..]);
        assert_eq!(
            v.grid[CH_RECEPTACLE * hw..(CH_RECEPTACLE + 1) * hw],
            obs.grid[CH_RECEPTACLE * hw..(CH_RECEPTACLE + 1) * hw]
        );
        assert_eq!(v.grid[..hw], obs.grid[..hw]);
        assert_eq!(v.proprio, obs.proprio);
        assert_eq!(v.instruction, obs.instruction);
    }

    #[test]
    fn grasped_object_moves_rigidly_with_the_gripper() {
        let cfg = cfg();
        let mut s = sample(&cfg, 0, 7);
        s.gripper.x = s.target.x;
        s.gripper.y = s.target.y;
        s.gripper.closed = true;
        s.gripper.grasped = Some(TARGET_ID);
        let noise = PoseNoise { translation_std: 0.2, resample_orientation: false };
        let mut rng = stream(7, "views-test", 56);
        let p = perturb_pose(&cfg, &s, &noise, &mut rng);
        assert_eq!(p.target.x, p.gripper.x);
        assert_eq!(p.target.y, p.gripper.y);
        assert_ne!((p.gripper.x, p.gripper.y), (s.gripper.x, s.gripper.y));
        // The rendered proprio follows the perturbed gripper.
        let v = render(&cfg, &p);
        assert_eq!(v.proprio[0], p.gripper.x);
        assert_eq!(v.proprio[1], p.gripper.y);
    }

    #[test]
    fn paired_views_are_deterministic_given_the_stream() {
        let cfg = cfg();
        let s = sample(&cfg, 1, 8);
        let obs = render(&cfg, &s);
        let b = bank(&cfg, 4, 8);
        let noise = PoseNoise::default();
        let run = |idx: u64| {
            let mut rng = stream(7, "views-test", idx);
            build_paired_views(&cfg, &s, &obs, ViewMode::Composite, &b, &noise, &mut rng).unwrap()
        };
        let a = run(57);
        let bb = run(57);
        assert_eq!(a.prev.grid, bb.prev.grid);
        assert_eq!(a.alt.grid, bb.alt.grid);
        assert_eq!(a.provenance, bb.provenance);
        assert!(a.provenance.snapshot_index.is_some());

        let mut rng = stream(7, "views-test", 58);
        let vp =
            build_paired_views(&cfg, &s, &obs, ViewMode::Viewpoint, &b, &noise, &mut rng).unwrap();
        let deg = vp.provenance.viewpoint_deg.unwrap();
        assert!(cfg.splits.camera_train_deg.contains(&deg));
        let current = s.camera_angle.to_degrees().round() as u32;
        assert_ne!(deg, current);
    }
}
