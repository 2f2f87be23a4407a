//! Environment configuration: geometry, radii, reward thresholds, and the
//! factor split tables used to validate scenarios.

use serde::{Deserialize, Serialize};

use super::splits::SplitTables;

/// Table coordinates live in [-1, 1]^2 (1 unit = 50 cm). Objects spawn on a
/// 6x6 grid inside a square of half-edge 0.15 centered at (-0.32, 0); pose
/// extrapolation uses the 28-point border ring of the enlarged 8x8 grid with
/// half-edge 0.21. Both grids share the 0.06 spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Observation grid resolution (H = W).
    pub grid: usize,
    /// Episode horizon T.
    pub horizon: usize,
    pub grasp_radius: f64,
    pub place_radius: f64,
    /// Consecutive target-holding steps required for the streak bonus.
    pub streak_k: u32,
    pub inner_center: (f64, f64),
    pub inner_half_edge: f64,
    pub inner_n: usize,
    pub border_half_edge: f64,
    pub border_n: usize,
    pub splits: SplitTables,
}

impl EnvConfig {
    pub fn new(splits: SplitTables) -> Self {
        EnvConfig {
            grid: 16,
            horizon: 80,
            grasp_radius: 0.15,
            place_radius: 0.15,
            streak_k: 3,
            inner_center: (-0.32, 0.0),
            inner_half_edge: 0.15,
            inner_n: 6,
            border_half_edge: 0.21,
            border_n: 8,
            splits,
        }
    }

    /// Gripper reset pose (the spawn-square center).
    pub fn gripper_home(&self) -> (f64, f64) {
        self.inner_center
    }

    /// Observation cell edge length in table units.
    pub fn cell(&self) -> f64 {
        2.0 / self.grid as f64
    }

    /// Entity footprint radius: 1.5 cells.
    pub fn blob_radius(&self) -> f64 {
        1.5 * self.cell()
    }

    /// The 6x6 spawn lattice (row-major, 36 points).
    pub fn inner_points(&self) -> Vec<(f64, f64)> {
        lattice(self.inner_center, self.inner_half_edge, self.inner_n, false)
    }

    /// The border ring of the enlarged 8x8 lattice (28 points).
    pub fn border_points(&self) -> Vec<(f64, f64)> {
        lattice(self.inner_center, self.border_half_edge, self.border_n, true)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 {
            return Err("horizon must be positive".into());
        }
        if self.grasp_radius <= 0.0 || self.place_radius <= 0.0 {
            return Err("radii must be positive".into());
        }
        if self.grid < 2 || self.inner_n < 2 || self.border_n < 2 {
            return Err("grids need at least two points per side".into());
        }
        Ok(())
    }
}

fn lattice(center: (f64, f64), half_edge: f64, n: usize, border_only: bool) -> Vec<(f64, f64)> {
    let spacing = 2.0 * half_edge / (n - 1) as f64;
    let mut pts = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if border_only && i != 0 && i != n - 1 && j != 0 && j != n - 1 {
                continue;
            }
            let x = center.0 - half_edge + j as f64 * spacing;
            let y = center.1 - half_edge + i as f64 * spacing;
            pts.push((x, y));
        }
    }
    pts
}
