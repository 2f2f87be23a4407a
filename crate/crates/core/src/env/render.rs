//! Rasterization of scene state into the 10-channel observation grid.
//!
//! Every channel value at a pixel is a pure function of that pixel's
//! world-frame coordinate (the pixel center mapped through the inverse
//! camera rotation). Quarter-turn camera angles use exact component swaps
//! instead of cos/sin, so a 90-degree camera change permutes pixels
//! bit-exactly; tests rely on that.

use super::config::EnvConfig;
use super::sim::SceneState;
use super::splits::{LightingConfig, N_CATEGORIES};
use crate::rng::hash01;

pub const CHANNELS: usize = 10;
pub const CH_GRIPPER: usize = 0;
pub const CH_OCCUPANCY: usize = 1;
pub const CH_CATEGORY0: usize = 2;
pub const N_CATEGORY_CH: usize = 4;
pub const CH_RECEPTACLE: usize = 6;
pub const CH_TEXTURE0: usize = 7;
pub const N_TEXTURE_CH: usize = 3;
pub const N_PROPRIO: usize = 3;

const TEX_SALT: u64 = 0x9e3779b97f4a7c15;
const EMB_SALT: u64 = 0xd1b54a32d192ed03;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Channel-major grid: `grid[ch * n * n + r * n + c]`.
    pub grid: Vec<f64>,
    /// Gripper x, y (world frame) and closed flag as 0/1.
    pub proprio: [f64; N_PROPRIO],
    /// One-hot target category over all categories.
    pub instruction: Vec<f64>,
    pub n: usize,
}

/// Pooled grid resolution fed to the policy. Each channel is average-pooled
/// from the raw grid down to `POOLED * POOLED` cells.
pub const POOLED: usize = 4;

impl Observation {
    pub fn input_dim(_n: usize) -> usize {
        CHANNELS * POOLED * POOLED + N_PROPRIO + N_CATEGORIES
    }

    pub fn at(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.grid[(ch * self.n + r) * self.n + c]
    }

    /// Policy input: a fixed average-pooling stem over the grid, then proprio
    /// and the instruction. Pooling keeps every nuisance factor spatially
    /// resolved (textures fill whole pooled cells, distractors add mass where
    /// they sit, camera rotation moves content between cells) while shrinking
    /// the input enough to train a small trunk at desk scale. The raw grid is
    /// untouched; views and masks keep operating at full resolution.
    pub fn to_input(&self) -> Vec<f64> {
        let n = self.n;
        let block = n / POOLED;
        let norm = 1.0 / (block * block) as f64;
        let mut v = Vec::with_capacity(Self::input_dim(n));
        for ch in 0..CHANNELS {
            for pr in 0..POOLED {
                for pc in 0..POOLED {
                    let mut sum = 0.0;
                    for r in pr * block..(pr + 1) * block {
                        for c in pc * block..(pc + 1) * block {
                            sum += self.at(ch, r, c);
                        }
                    }
                    v.push(sum * norm);
                }
            }
        }
        v.extend_from_slice(&self.proprio);
        v.extend_from_slice(&self.instruction);
        v
    }
}

/// (cos, sin) with quarter turns special-cased to exact 0/1 so the rotation
/// is a pure coordinate permutation at those angles.
fn rot_cs(theta: f64) -> (f64, f64) {
    use std::f64::consts::{FRAC_PI_2, PI};
    if theta == 0.0 {
        (1.0, 0.0)
    } else if theta == FRAC_PI_2 {
        (0.0, 1.0)
    } else if theta == -FRAC_PI_2 {
        (0.0, -1.0)
    } else if theta == PI || theta == -PI {
        (-1.0, 0.0)
    } else {
        (theta.cos(), theta.sin())
    }
}

fn rotate(p: (f64, f64), cs: (f64, f64)) -> (f64, f64) {
    (cs.0 * p.0 - cs.1 * p.1, cs.1 * p.0 + cs.0 * p.1)
}

fn pixel_center(cell: f64, r: usize, c: usize) -> (f64, f64) {
    (-1.0 + (c as f64 + 0.5) * cell, 1.0 - (r as f64 + 0.5) * cell)
}

/// Grid cell indices of a world point, clamped to the table.
fn world_cell(cell: f64, n: usize, w: (f64, f64)) -> (usize, usize) {
    let col = (((w.0 + 1.0) / cell).floor() as i64).clamp(0, n as i64 - 1) as usize;
    let row = (((1.0 - w.1) / cell).floor() as i64).clamp(0, n as i64 - 1) as usize;
    (row, col)
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn texture_value(texture_id: usize, row: usize, col: usize, k: usize) -> f64 {
    hash01(&[TEX_SALT, texture_id as u64, row as u64, col as u64, k as u64])
}

/// Deterministic non-negative unit 4-vector per category.
pub fn category_embedding(category: usize) -> [f64; N_CATEGORY_CH] {
    let mut v = [0.0; N_CATEGORY_CH];
    for (k, slot) in v.iter_mut().enumerate() {
        *slot = hash01(&[EMB_SALT, category as u64, k as u64]);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for slot in &mut v {
        *slot /= norm;
    }
    v
}

fn apply_lighting(grid: &mut [f64], light: LightingConfig, channels: std::ops::Range<usize>, hw: usize) {
    for ch in channels {
        for v in &mut grid[ch * hw..(ch + 1) * hw] {
            *v = (light.gain * *v + light.bias).max(0.0);
        }
    }
}

pub fn render(cfg: &EnvConfig, state: &SceneState) -> Observation {
    let n = cfg.grid;
    let hw = n * n;
    let mut grid = vec![0.0; CHANNELS * hw];
    let cs = rot_cs(-state.camera_angle);
    let cell = cfg.cell();
    let rad2 = cfg.blob_radius() * cfg.blob_radius();
    for r in 0..n {
        for c in 0..n {
            let w = rotate(pixel_center(cell, r, c), cs);
            let idx = r * n + c;
            if dist2(w, (state.gripper.x, state.gripper.y)) <= rad2 {
                grid[CH_GRIPPER * hw + idx] = 1.0;
            }
            let mut occ = 0.0f64;
            let mut cat = [0.0f64; N_CATEGORY_CH];
            for id in 0..state.n_entities() {
                let e = state.entity(id);
                if dist2(w, (e.x, e.y)) <= rad2 {
                    occ += 1.0;
                    let emb = category_embedding(e.category);
                    for k in 0..N_CATEGORY_CH {
                        cat[k] += emb[k];
                    }
                }
            }
            grid[CH_OCCUPANCY * hw + idx] = occ.min(1.0);
            for k in 0..N_CATEGORY_CH {
                grid[(CH_CATEGORY0 + k) * hw + idx] = cat[k].min(1.0);
            }
            if dist2(w, state.receptacle) <= rad2 {
                grid[CH_RECEPTACLE * hw + idx] = 1.0;
            }
            let (tr, tc) = world_cell(cell, n, w);
            for k in 0..N_TEXTURE_CH {
                grid[(CH_TEXTURE0 + k) * hw + idx] = texture_value(state.texture_id, tr, tc, k);
            }
        }
    }
    apply_lighting(&mut grid, state.lighting, 0..CHANNELS, hw);
    let mut instruction = vec![0.0; N_CATEGORIES];
    instruction[state.target.category] = 1.0;
    Observation {
        grid,
        proprio: [
            state.gripper.x,
            state.gripper.y,
            if state.gripper.closed { 1.0 } else { 0.0 },
        ],
        instruction,
        n,
    }
}

/// Task-relevant pixels: union of the gripper, target, and receptacle
/// footprints. Distractors and free background are 0.
pub fn segmentation_mask(cfg: &EnvConfig, state: &SceneState) -> Vec<f64> {
    let n = cfg.grid;
    let mut mask = vec![0.0; n * n];
    let cs = rot_cs(-state.camera_angle);
    let cell = cfg.cell();
    let rad2 = cfg.blob_radius() * cfg.blob_radius();
    for r in 0..n {
        for c in 0..n {
            let w = rotate(pixel_center(cell, r, c), cs);
            let hit = dist2(w, (state.gripper.x, state.gripper.y)) <= rad2
                || dist2(w, (state.target.x, state.target.y)) <= rad2
                || dist2(w, state.receptacle) <= rad2;
            if hit {
                mask[r * n + c] = 1.0;
            }
        }
    }
    mask
}

/// Empty-table grid: entity channels are exactly zero (lighting is not
/// applied to them), texture channels match `render` bit for bit.
pub fn render_background(
    cfg: &EnvConfig,
    texture_id: usize,
    lighting: LightingConfig,
    camera_angle: f64,
) -> Vec<f64> {
    let n = cfg.grid;
    let hw = n * n;
    let mut grid = vec![0.0; CHANNELS * hw];
    let cs = rot_cs(-camera_angle);
    let cell = cfg.cell();
    for r in 0..n {
        for c in 0..n {
            let w = rotate(pixel_center(cell, r, c), cs);
            let (tr, tc) = world_cell(cell, n, w);
            let idx = r * n + c;
            for k in 0..N_TEXTURE_CH {
                grid[(CH_TEXTURE0 + k) * hw + idx] = texture_value(texture_id, tr, tc, k);
            }
        }
    }
    apply_lighting(&mut grid, lighting, CH_TEXTURE0..CHANNELS, hw);
    grid
}
