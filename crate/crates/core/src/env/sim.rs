//! Scene state and the (pure) reset/step dynamics.
//!
//! `step` is a function of (state, action) with no hidden mutable state, so a
//! logged episode replays bit-exactly. Randomness only enters through
//! `reset`, which consumes draws from the caller's stream in a fixed order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::scenario::{ScenarioKind, ScenarioSpec};
use super::splits::{LightingConfig, N_CATEGORIES_TRAIN};
use crate::rng::fold_digest;

/// Target orientations are drawn from this fixed set. Orientation is part of
/// the state (and of pose perturbations) but is not rendered: footprints are
/// isotropic.
pub const ORIENTATIONS: [f64; 4] = [
    0.0,
    std::f64::consts::FRAC_PI_4,
    std::f64::consts::FRAC_PI_2,
    std::f64::consts::PI,
];

/// Entity ids: 0 is the target, i >= 1 is distractor i - 1.
pub const TARGET_ID: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub x: f64,
    pub y: f64,
    pub orientation: f64,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub x: f64,
    pub y: f64,
    pub closed: bool,
    pub grasped: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub gripper: Gripper,
    pub target: Entity,
    pub distractors: Vec<Entity>,
    pub receptacle: (f64, f64),
    pub texture_id: usize,
    pub lighting: LightingConfig,
    /// Camera rotation about the table center, radians.
    pub camera_angle: f64,
    pub step_count: usize,
    pub grasp_streak: u32,
    pub grasp_reward_given: bool,
    pub streak_reward_given: bool,
    pub succeeded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionCmd {
    Continuous { dx: f64, dy: f64, grip_logit: f64 },
    /// Index into {+x, -x, +y, -y, grasp, release}; moves use a fixed 0.1
    /// step and leave the grip unchanged.
    Discrete(usize),
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("contract error: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    pub grasped_event: Option<usize>,
    pub released_event: Option<usize>,
}

impl SceneState {
    pub fn entity(&self, id: usize) -> &Entity {
        if id == TARGET_ID {
            &self.target
        } else {
            &self.distractors[id - 1]
        }
    }

    fn entity_mut(&mut self, id: usize) -> &mut Entity {
        if id == TARGET_ID {
            &mut self.target
        } else {
            &mut self.distractors[id - 1]
        }
    }

    pub fn n_entities(&self) -> usize {
        1 + self.distractors.len()
    }

    pub fn is_terminal(&self, cfg: &EnvConfig) -> bool {
        self.succeeded || self.step_count >= cfg.horizon
    }

    /// Order-stable digest of every state field, for episode logs.
    pub fn digest(&self) -> u64 {
        let mut words: Vec<u64> = vec![
            self.gripper.x.to_bits(),
            self.gripper.y.to_bits(),
            self.gripper.closed as u64,
            self.gripper.grasped.map_or(u64::MAX, |i| i as u64),
        ];
        for e in std::iter::once(&self.target).chain(&self.distractors) {
            words.extend([
                e.x.to_bits(),
                e.y.to_bits(),
                e.orientation.to_bits(),
                e.category as u64,
            ]);
        }
        words.extend([
            self.receptacle.0.to_bits(),
            self.receptacle.1.to_bits(),
            self.texture_id as u64,
            self.lighting.gain.to_bits(),
            self.lighting.bias.to_bits(),
            self.camera_angle.to_bits(),
            self.step_count as u64,
            self.grasp_streak as u64,
            self.grasp_reward_given as u64,
            self.streak_reward_given as u64,
            self.succeeded as u64,
        ]);
        fold_digest(words)
    }
}

fn choose<'a, T>(rng: &mut impl Rng, pool: &'a [T]) -> &'a T {
    &pool[rng.random_range(0..pool.len())]
}

/// k distinct indices in 0..n, order-stable given the rng stream.
fn sample_distinct(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

/// Sample an initial scene. Draw order (fixed contract, so logged seeds stay
/// replayable): texture, lighting, camera angle, target category, distractor
/// categories, entity positions, receptacle position, orientations.
pub fn reset(
    cfg: &EnvConfig,
    scenario: &ScenarioSpec,
    rng: &mut impl Rng,
) -> Result<SceneState, EnvError> {
    let inner = cfg.inner_points();
    let entity_points = match scenario.pose_region {
        super::splits::PoseRegion::Inner => inner.clone(),
        super::splits::PoseRegion::Border => cfg.border_points(),
    };
    let n_entities = 1 + scenario.n_distractors;
    let entities_on_inner = scenario.pose_region == super::splits::PoseRegion::Inner;
    let needed_inner = if entities_on_inner { n_entities + 1 } else { 1 };
    if entities_on_inner && needed_inner > inner.len() {
        return Err(EnvError::Scenario(format!(
            "{} placements requested, {} inner grid cells",
            needed_inner,
            inner.len()
        )));
    }
    if !entities_on_inner && n_entities > entity_points.len() {
        return Err(EnvError::Scenario(format!(
            "{} entities requested, {} border points",
            n_entities,
            entity_points.len()
        )));
    }

    let texture_id = *choose(rng, &scenario.texture_pool);
    let lighting = *choose(rng, &scenario.lighting_pool);
    let camera_deg = *choose(rng, &scenario.camera_angle_deg);

    let train_cats: Vec<usize> = scenario
        .category_pool
        .iter()
        .copied()
        .filter(|&c| c < N_CATEGORIES_TRAIN)
        .collect();
    if train_cats.is_empty() {
        return Err(EnvError::Scenario("no train-split target categories in pool".into()));
    }
    let target_category = *choose(rng, &train_cats);

    let distractor_categories = if scenario.scenario_kind == ScenarioKind::ClutterOod {
        // Half the distractors carry held-out categories.
        let eval_cats: Vec<usize> = scenario
            .category_pool
            .iter()
            .copied()
            .filter(|&c| c >= N_CATEGORIES_TRAIN)
            .collect();
        let n_eval = scenario.n_distractors / 2;
        let n_train = scenario.n_distractors - n_eval;
        let train_rest: Vec<usize> =
            train_cats.iter().copied().filter(|&c| c != target_category).collect();
        if eval_cats.len() < n_eval || train_rest.len() < n_train {
            return Err(EnvError::Scenario("category pool too small for clutter split".into()));
        }
        let mut cats: Vec<usize> = sample_distinct(rng, eval_cats.len(), n_eval)
            .into_iter()
            .map(|i| eval_cats[i])
            .collect();
        cats.extend(
            sample_distinct(rng, train_rest.len(), n_train).into_iter().map(|i| train_rest[i]),
        );
        cats
    } else {
        let rest: Vec<usize> = scenario
            .category_pool
            .iter()
            .copied()
            .filter(|&c| c != target_category)
            .collect();
        if rest.len() < scenario.n_distractors {
            return Err(EnvError::Scenario("category pool too small for distractor count".into()));
        }
        sample_distinct(rng, rest.len(), scenario.n_distractors)
            .into_iter()
            .map(|i| rest[i])
            .collect()
    };

    // Positions: entities on their region; the receptacle always on the
    // inner grid, on a cell no entity occupies.
    let (entity_cells, receptacle) = if entities_on_inner {
        let picks = sample_distinct(rng, inner.len(), n_entities + 1);
        let cells: Vec<(f64, f64)> = picks[..n_entities].iter().map(|&i| inner[i]).collect();
        (cells, inner[picks[n_entities]])
    } else {
        let picks = sample_distinct(rng, entity_points.len(), n_entities);
        let cells: Vec<(f64, f64)> = picks.iter().map(|&i| entity_points[i]).collect();
        let r = inner[rng.random_range(0..inner.len())];
        (cells, r)
    };

    let mut orientation = || ORIENTATIONS[rng.random_range(0..ORIENTATIONS.len())];
    let target = Entity {
        x: entity_cells[0].0,
        y: entity_cells[0].1,
        orientation: orientation(),
        category: target_category,
    };
    let distractors: Vec<Entity> = distractor_categories
        .iter()
        .enumerate()
        .map(|(i, &category)| Entity {
            x: entity_cells[1 + i].0,
            y: entity_cells[1 + i].1,
            orientation: orientation(),
            category,
        })
        .collect();

    let home = cfg.gripper_home();
    Ok(SceneState {
        gripper: Gripper { x: home.0, y: home.1, closed: false, grasped: None },
        target,
        distractors,
        receptacle,
        texture_id,
        lighting,
        camera_angle: f64::from(camera_deg).to_radians(),
        step_count: 0,
        grasp_streak: 0,
        grasp_reward_given: false,
        streak_reward_given: false,
        succeeded: false,
    })
}

/// Advance one step. Movement first, then grip transitions, then streak
/// accounting. Rewards: +0.1 on the first target grasp, +0.1 once the target
/// has been held `streak_k` consecutive steps, +1.0 on releasing the target
/// within the place radius of the receptacle (terminal).
pub fn step(
    cfg: &EnvConfig,
    state: &SceneState,
    action: &ActionCmd,
) -> Result<(SceneState, f64, bool, StepInfo), EnvError> {
    if state.is_terminal(cfg) {
        return Err(EnvError::Contract("step on terminal state".into()));
    }
    let (dx, dy, want_closed) = match *action {
        ActionCmd::Continuous { dx, dy, grip_logit } => {
            if !dx.is_finite() || !dy.is_finite() || !grip_logit.is_finite() {
                return Err(EnvError::Contract("non-finite action".into()));
            }
            (dx.clamp(-0.1, 0.1), dy.clamp(-0.1, 0.1), grip_logit > 0.0)
        }
        ActionCmd::Discrete(i) => match i {
            0 => (0.1, 0.0, state.gripper.closed),
            1 => (-0.1, 0.0, state.gripper.closed),
            2 => (0.0, 0.1, state.gripper.closed),
            3 => (0.0, -0.1, state.gripper.closed),
            4 => (0.0, 0.0, true),
            5 => (0.0, 0.0, false),
            other => {
                return Err(EnvError::Contract(format!("discrete action index {other} out of range")))
            }
        },
    };

    let mut s = state.clone();
    let mut reward = 0.0;
    let mut info = StepInfo::default();
    s.step_count += 1;

    s.gripper.x = (s.gripper.x + dx).clamp(-1.0, 1.0);
    s.gripper.y = (s.gripper.y + dy).clamp(-1.0, 1.0);
    if let Some(id) = s.gripper.grasped {
        let (gx, gy) = (s.gripper.x, s.gripper.y);
        let e = s.entity_mut(id);
        e.x = gx;
        e.y = gy;
    }

    if want_closed && s.gripper.grasped.is_none() {
        // Nearest entity within reach; ties to the lowest id (the target).
        let mut best: Option<(usize, f64)> = None;
        for id in 0..s.n_entities() {
            let e = s.entity(id);
            let d2 = (e.x - s.gripper.x).powi(2) + (e.y - s.gripper.y).powi(2);
            if d2 <= cfg.grasp_radius * cfg.grasp_radius && best.is_none_or(|(_, bd)| d2 < bd) {
                best = Some((id, d2));
            }
        }
        if let Some((id, _)) = best {
            s.gripper.grasped = Some(id);
            info.grasped_event = Some(id);
            if id == TARGET_ID && !s.grasp_reward_given {
                reward += 0.1;
                s.grasp_reward_given = true;
            }
        }
    } else if !want_closed {
        if let Some(id) = s.gripper.grasped.take() {
            info.released_event = Some(id);
            if id == TARGET_ID {
                let d2 = (s.target.x - s.receptacle.0).powi(2)
                    + (s.target.y - s.receptacle.1).powi(2);
                if d2 <= cfg.place_radius * cfg.place_radius {
                    reward += 1.0;
                    s.succeeded = true;
                }
            }
        }
    }
    s.gripper.closed = want_closed;

    if s.gripper.grasped == Some(TARGET_ID) {
        s.grasp_streak += 1;
    } else {
        s.grasp_streak = 0;
    }
    if s.grasp_streak >= cfg.streak_k && !s.streak_reward_given {
        reward += 0.1;
        s.streak_reward_given = true;
    }

    let done = s.is_terminal(cfg);
    Ok((s, reward, done, info))
}
