//! Scenario specifications: which factor pools an episode draws from. The
//! scenario kind decides which pools come from eval tables; everything else
//! stays in-distribution so each evaluation axis isolates one factor.

use serde::{Deserialize, Serialize};

use super::splits::{LightingConfig, PoseRegion, SplitTables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Train,
    TextureOod,
    LightingOod,
    PoseOod,
    ClutterOod,
    Camera,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Train => "train",
            ScenarioKind::TextureOod => "texture_ood",
            ScenarioKind::LightingOod => "lighting_ood",
            ScenarioKind::PoseOod => "pose_ood",
            ScenarioKind::ClutterOod => "clutter_ood",
            ScenarioKind::Camera => "camera",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(ScenarioKind::Train),
            "texture_ood" => Ok(ScenarioKind::TextureOod),
            "lighting_ood" => Ok(ScenarioKind::LightingOod),
            "pose_ood" => Ok(ScenarioKind::PoseOod),
            "clutter_ood" => Ok(ScenarioKind::ClutterOod),
            "camera" => Ok(ScenarioKind::Camera),
            other => Err(format!("unknown scenario kind: {other}")),
        }
    }
}

/// Factor pools for one episode family. The target category is always drawn
/// from the train-split part of `category_pool`; in clutter scenarios half
/// the distractor categories come from the eval-split part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_kind: ScenarioKind,
    pub n_distractors: usize,
    pub texture_pool: Vec<usize>,
    pub category_pool: Vec<usize>,
    pub lighting_pool: Vec<LightingConfig>,
    pub pose_region: PoseRegion,
    pub camera_angle_deg: Vec<u32>,
}

impl ScenarioSpec {
    pub fn train(splits: &SplitTables, n_distractors: usize) -> Self {
        ScenarioSpec {
            scenario_kind: ScenarioKind::Train,
            n_distractors,
            texture_pool: splits.texture_train.clone(),
            category_pool: splits.category_train.clone(),
            lighting_pool: splits.lighting_train.clone(),
            pose_region: splits.pose_train,
            camera_angle_deg: splits.camera_train_deg.clone(),
        }
    }

    pub fn texture_ood(splits: &SplitTables, n_distractors: usize) -> Self {
        ScenarioSpec {
            scenario_kind: ScenarioKind::TextureOod,
            texture_pool: splits.texture_eval.clone(),
            ..ScenarioSpec::train(splits, n_distractors)
        }
    }

    pub fn lighting_ood(splits: &SplitTables, n_distractors: usize) -> Self {
        ScenarioSpec {
            scenario_kind: ScenarioKind::LightingOod,
            lighting_pool: splits.lighting_eval.clone(),
            ..ScenarioSpec::train(splits, n_distractors)
        }
    }

    pub fn pose_ood(splits: &SplitTables, n_distractors: usize) -> Self {
        ScenarioSpec {
            scenario_kind: ScenarioKind::PoseOod,
            pose_region: splits.pose_eval,
            ..ScenarioSpec::train(splits, n_distractors)
        }
    }

    /// Clutter axis: N distractors, half of whose categories are held out.
    /// The pool carries both splits; reset picks N/2 from each side.
    pub fn clutter_ood(splits: &SplitTables, n_distractors: usize) -> Self {
        let mut pool = splits.category_train.clone();
        pool.extend_from_slice(&splits.category_eval);
        ScenarioSpec {
            scenario_kind: ScenarioKind::ClutterOod,
            category_pool: pool,
            ..ScenarioSpec::train(splits, n_distractors)
        }
    }

    /// Held-out camera rotation axis.
    pub fn camera(splits: &SplitTables, n_distractors: usize) -> Self {
        ScenarioSpec {
            scenario_kind: ScenarioKind::Camera,
            camera_angle_deg: splits.camera_eval_deg.clone(),
            ..ScenarioSpec::train(splits, n_distractors)
        }
    }

    /// Camera axis pinned to specific angles (viewpoint extrapolation sweeps
    /// evaluate one angle at a time).
    pub fn camera_at(splits: &SplitTables, n_distractors: usize, angles_deg: Vec<u32>) -> Self {
        ScenarioSpec {
            scenario_kind: ScenarioKind::Camera,
            camera_angle_deg: angles_deg,
            ..ScenarioSpec::train(splits, n_distractors)
        }
    }

    /// Split-discipline check: every eval scenario draws at least one factor
    /// from an eval-only pool, train scenarios draw only from train pools,
    /// and no pool mixes splits except the clutter category pool.
    pub fn validate(&self, splits: &SplitTables) -> Result<(), String> {
        let sub = |xs: &[usize], pool: &[usize]| xs.iter().all(|x| pool.contains(x));
        let tex_train = sub(&self.texture_pool, &splits.texture_train);
        let tex_eval = sub(&self.texture_pool, &splits.texture_eval);
        let cat_train = sub(&self.category_pool, &splits.category_train);
        let light_train = self.lighting_pool.iter().all(|l| splits.lighting_train.contains(l));
        let light_eval = self.lighting_pool.iter().all(|l| splits.lighting_eval.contains(l));
        let cam_train = self.camera_angle_deg.iter().all(|a| splits.camera_train_deg.contains(a));
        let cam_eval = self.camera_angle_deg.iter().all(|a| splits.camera_eval_deg.contains(a));
        if self.texture_pool.is_empty()
            || self.category_pool.is_empty()
            || self.lighting_pool.is_empty()
            || self.camera_angle_deg.is_empty()
        {
            return Err("empty factor pool".into());
        }
        let ok = match self.scenario_kind {
            ScenarioKind::Train => {
                tex_train
                    && cat_train
                    && light_train
                    && cam_train
                    && self.pose_region == splits.pose_train
            }
            ScenarioKind::TextureOod => {
                tex_eval
                    && cat_train
                    && light_train
                    && cam_train
                    && self.pose_region == splits.pose_train
            }
            ScenarioKind::LightingOod => {
                tex_train
                    && cat_train
                    && light_eval
                    && cam_train
                    && self.pose_region == splits.pose_train
            }
            ScenarioKind::PoseOod => {
                tex_train
                    && cat_train
                    && light_train
                    && cam_train
                    && self.pose_region == splits.pose_eval
            }
            ScenarioKind::ClutterOod => {
                let cat_mixed = self.category_pool.iter().any(|c| splits.category_eval.contains(c))
                    && self.category_pool.iter().any(|c| splits.category_train.contains(c))
                    && sub(
                        &self.category_pool,
                        &[splits.category_train.as_slice(), splits.category_eval.as_slice()]
                            .concat(),
                    );
                tex_train
                    && cat_mixed
                    && light_train
                    && cam_train
                    && self.pose_region == splits.pose_train
                    && matches!(self.n_distractors, 2 | 4 | 6 | 8)
            }
            ScenarioKind::Camera => {
                tex_train
                    && cat_train
                    && light_train
                    && cam_eval
                    && self.pose_region == splits.pose_train
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("{} scenario draws from the wrong pools", self.scenario_kind.as_str()))
        }
    }
}
