//! Robot-centered 2.5D elevation grid and traversability thresholding.
//!
//! Cells are aligned to a world lattice of pitch `resolution`; the window is
//! centered on the lattice cell nearest to the robot so that shifting the
//! world by whole cells shifts the grid by whole cells.

use serde::{Deserialize, Serialize};

use crate::error::LocalMapError;
use crate::geometry::{Point3, RobotState, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Side length of the square local window (m).
    pub size: f64,
    /// Cell size (m).
    pub resolution: f64,
    /// Elevation assumed for cells without returns.
    pub ground_elevation: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 10.0,
            resolution: 0.1,
            ground_elevation: 0.0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), LocalMapError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(LocalMapError::InvalidConfig(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if !(self.size >= 3.0 * self.resolution && self.size.is_finite()) {
            return Err(LocalMapError::InvalidConfig(format!(
                "window size {} must span at least 3 cells",
                self.size
            )));
        }
        Ok(())
    }

    pub fn cells_per_side(&self) -> usize {
        (self.size / self.resolution).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraversabilityThresholds {
    /// Sobel gradient magnitude limit.
    pub s_max: f64,
    /// Laplacian magnitude limit.
    pub l_max: f64,
    /// Step-height limit (m).
    pub h_max: f64,
}

impl Default for TraversabilityThresholds {
    fn default() -> Self {
        Self {
            s_max: 1.2,
            l_max: 1.2,
            h_max: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElevationGrid {
    /// World position of the window center (a lattice corner).
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major per-cell maximum height; `None` where no return fell.
    pub elevation: Vec<Option<f64>>,
    pub obstacle_mask: Vec<bool>,
    pub ground_elevation: f64,
}

impl ElevationGrid {
    /// All-unknown grid centered at the lattice cell nearest to `center`.
    pub fn empty(center: Vec2, config: &GridConfig) -> Result<Self, LocalMapError> {
        config.validate()?;
        let n = config.cells_per_side();
        let ox = (center.x / config.resolution).round() as i64;
        let oy = (center.y / config.resolution).round() as i64;
        Ok(Self {
            origin: Vec2::new(ox as f64 * config.resolution, oy as f64 * config.resolution),
            resolution: config.resolution,
            width: n,
            height: n,
            elevation: vec![None; n * n],
            obstacle_mask: vec![false; n * n],
            ground_elevation: config.ground_elevation,
        })
    }

    fn origin_cell(&self) -> (i64, i64) {
        (
            (self.origin.x / self.resolution).round() as i64,
            (self.origin.y / self.resolution).round() as i64,
        )
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    /// Cell containing world point `p`, if inside the window.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let gx = (p.x / self.resolution).floor() as i64;
        let gy = (p.y / self.resolution).floor() as i64;
        let (ox, oy) = self.origin_cell();
        let col = gx - ox + (self.width / 2) as i64;
        let row = gy - oy + (self.height / 2) as i64;
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            return None;
        }
        Some((col as usize, row as usize))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Vec2 {
        let (ox, oy) = self.origin_cell();
        let gx = col as i64 - (self.width / 2) as i64 + ox;
        let gy = row as i64 - (self.height / 2) as i64 + oy;
        Vec2::new((gx as f64 + 0.5) * self.resolution, (gy as f64 + 0.5) * self.resolution)
    }

    pub fn elevation_at(&self, col: usize, row: usize) -> Option<f64> {
        self.elevation[self.index(col, row)]
    }

    /// Elevation with unknown cells imputed to the ground plane.
    pub fn filled_elevation(&self, col: usize, row: usize) -> f64 {
        self.elevation_at(col, row).unwrap_or(self.ground_elevation)
    }

    pub fn is_obstacle(&self, col: usize, row: usize) -> bool {
        self.obstacle_mask[self.index(col, row)]
    }

    pub fn known_cells(&self) -> usize {
        self.elevation.iter().filter(|e| e.is_some()).count()
    }

    /// World-frame centers of all masked cells, in row-major order.
    pub fn obstacle_cells(&self) -> Vec<Vec2> {
        let mut out = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if self.is_obstacle(col, row) {
                    out.push(self.cell_center(col, row));
                }
            }
        }
        out
    }

    /// Whether the world point lies inside the window.
    pub fn contains(&self, p: Vec2) -> bool {
        self.cell_of(p).is_some()
    }

    fn has_neighborhood(&self, col: usize, row: usize) -> bool {
        col >= 1 && row >= 1 && col + 1 < self.width && row + 1 < self.height
    }

    fn neighborhood(&self, col: usize, row: usize) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (dr, m_row) in m.iter_mut().enumerate() {
            for (dc, v) in m_row.iter_mut().enumerate() {
                *v = self.filled_elevation(col + dc - 1, row + dr - 1);
            }
        }
        m
    }
}

/// Crops `points` to the window around `robot` and keeps the max height per cell.
pub fn build_grid(points: &[Point3], robot: &RobotState, config: &GridConfig) -> Result<ElevationGrid, LocalMapError> {
    let mut grid = ElevationGrid::empty(robot.position(), config)?;
    for p in points.iter().filter(|p| p.is_finite()) {
        if let Some((col, row)) = grid.cell_of(p.xy()) {
            let i = grid.index(col, row);
            grid.elevation[i] = Some(grid.elevation[i].map_or(p.z, |z| z.max(p.z)));
        }
    }
    Ok(grid)
}

/// Sobel gradient magnitude and absolute Laplacian at an interior cell.
///
/// The Laplacian uses the 8-connected kernel `[[1,1,1],[1,-8,1],[1,1,1]]`.
pub fn sobel_laplace(grid: &ElevationGrid, col: usize, row: usize) -> Result<(f64, f64), LocalMapError> {
    if !grid.has_neighborhood(col, row) {
        return Err(LocalMapError::NoNeighborhood { col, row });
    }
    let m = grid.neighborhood(col, row);
    Ok(sobel_laplace_kernel(&m))
}

fn sobel_laplace_kernel(m: &[[f64; 3]; 3]) -> (f64, f64) {
    let gx = (m[0][2] + 2.0 * m[1][2] + m[2][2]) - (m[0][0] + 2.0 * m[1][0] + m[2][0]);
    let gy = (m[2][0] + 2.0 * m[2][1] + m[2][2]) - (m[0][0] + 2.0 * m[0][1] + m[0][2]);
    let sum: f64 = m.iter().flatten().sum();
    let lap = sum - 9.0 * m[1][1];
    (gx.hypot(gy), lap.abs())
}

/// Largest absolute elevation difference to the 8 adjacent cells.
pub fn step_height(grid: &ElevationGrid, col: usize, row: usize) -> Result<f64, LocalMapError> {
    if !grid.has_neighborhood(col, row) {
        return Err(LocalMapError::NoNeighborhood { col, row });
    }
    let m = grid.neighborhood(col, row);
    Ok(step_height_kernel(&m))
}

fn step_height_kernel(m: &[[f64; 3]; 3]) -> f64 {
    m.iter().flatten().map(|v| (v - m[1][1]).abs()).fold(0.0, f64::max)
}

/// Marks interior cells exceeding any traversability limit; border cells stay free.
pub fn obstacle_mask(grid: &ElevationGrid, th: &TraversabilityThresholds) -> ElevationGrid {
    let mut out = grid.clone();
    out.obstacle_mask.iter_mut().for_each(|m| *m = false);
    for row in 1..grid.height.saturating_sub(1) {
        for col in 1..grid.width.saturating_sub(1) {
            let m = grid.neighborhood(col, row);
            let (gs, gl) = sobel_laplace_kernel(&m);
            let hs = step_height_kernel(&m);
            if gs > th.s_max || gl > th.l_max || hs > th.h_max {
                let i = out.index(col, row);
                out.obstacle_mask[i] = true;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg() -> GridConfig {
        GridConfig::default()
    }

    fn grid_from_fn(f: impl Fn(usize, usize) -> f64) -> ElevationGrid {
        let mut g = ElevationGrid::empty(Vec2::ZERO, &cfg()).unwrap();
        for row in 0..g.height {
            for col in 0..g.width {
                let i = g.index(col, row);
                g.elevation[i] = Some(f(col, row));
            }
        }
        g
    }

    #[test]
    fn default_window_is_100_cells() {
        let g = ElevationGrid::empty(Vec2::ZERO, &cfg()).unwrap();
        assert_eq!((g.width, g.height), (100, 100));
        assert_eq!(g.known_cells(), 0);
    }

    #[test]
    fn single_point_lands_in_one_cell() {
        let g = build_grid(&[Point3::new(0.05, 0.05, 1.0)], &RobotState::default(), &cfg()).unwrap();
        assert_eq!(g.known_cells(), 1);
        let (c, r) = g.cell_of(Vec2::new(0.05, 0.05)).unwrap();
        assert_eq!(g.elevation_at(c, r), Some(1.0));
        assert_abs_diff_eq!(g.cell_center(c, r).x, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn max_rule_and_crop() {
        let pts = [
            Point3::new(1.01, 1.02, 0.3),
            Point3::new(1.03, 1.04, 0.8),
            Point3::new(20.0, 0.0, 1.0),
        ];
        let g = build_grid(&pts, &RobotState::default(), &cfg()).unwrap();
        assert_eq!(g.known_cells(), 1);
        let (c, r) = g.cell_of(Vec2::new(1.02, 1.02)).unwrap();
        assert_eq!(g.elevation_at(c, r), Some(0.8));
    }

    #[test]
    fn empty_cloud_is_all_unknown() {
        let g = build_grid(&[], &RobotState::new(3.0, -2.0, 1.0), &cfg()).unwrap();
        assert_eq!(g.known_cells(), 0);
        assert!(obstacle_mask(&g, &TraversabilityThresholds::default())
            .obstacle_cells()
            .is_empty());
    }

    #[test]
    fn invalid_resolution_rejected() {
        let bad = GridConfig {
            resolution: 0.0,
            ..cfg()
        };
        assert!(build_grid(&[], &RobotState::default(), &bad).is_err());
    }

    #[test]
    fn flat_field_has_zero_derivatives() {
        let g = grid_from_fn(|_, _| 0.7);
        let (gs, gl) = sobel_laplace(&g, 10, 10).unwrap();
        assert_eq!(gs, 0.0);
        assert!(gl.abs() < 1e-12);
    }

    #[test]
    fn ramp_and_spike_oracles() {
        // ramp e = c * col: Sobel-x sums weights (1,2,1) times 2c
        let c = 0.05;
        let g = grid_from_fn(|col, _| c * col as f64);
        let (gs, gl) = sobel_laplace(&g, 40, 40).unwrap();
        assert_abs_diff_eq!(gs, 8.0 * c, epsilon = 1e-12);
        assert_abs_diff_eq!(gl, 0.0, epsilon = 1e-12);

        let h = 0.9;
        let g = grid_from_fn(|col, row| if (col, row) == (30, 30) { h } else { 0.0 });
        let (gs, gl) = sobel_laplace(&g, 30, 30).unwrap();
        assert_abs_diff_eq!(gs, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gl, 8.0 * h, epsilon = 1e-12);
    }

    #[test]
    fn border_cell_has_no_neighborhood() {
        let g = grid_from_fn(|_, _| 0.0);
        assert_eq!(
            sobel_laplace(&g, 0, 5),
            Err(LocalMapError::NoNeighborhood { col: 0, row: 5 })
        );
        assert!(step_height(&g, 99, 99).is_err());
    }

    /// Direct per-cell evaluation of the three tests.
    fn mask_oracle(g: &ElevationGrid, th: &TraversabilityThresholds) -> Vec<bool> {
        let mut out = vec![false; g.width * g.height];
        for row in 1..g.height - 1 {
            for col in 1..g.width - 1 {
                let (gs, gl) = sobel_laplace(g, col, row).unwrap();
                let hs = step_height(g, col, row).unwrap();
                out[g.index(col, row)] = gs > th.s_max || gl > th.l_max || hs > th.h_max;
            }
        }
        out
    }

    #[test]
    fn box_boundary_is_masked() {
        let g = grid_from_fn(|col, row| {
            if (40..50).contains(&col) && (40..50).contains(&row) {
                1.0
            } else {
                0.0
            }
        });
        let th = TraversabilityThresholds {
            h_max: 0.2,
            ..Default::default()
        };
        let m = obstacle_mask(&g, &th);
        assert_eq!(m.obstacle_mask, mask_oracle(&g, &th));
        // boundary ring inside and outside the box is masked, interior is not
        assert!(m.is_obstacle(40, 45) && m.is_obstacle(39, 45) && m.is_obstacle(49, 49));
        assert!(!m.is_obstacle(45, 45) && !m.is_obstacle(37, 45));
    }

    #[test]
    fn gentle_ramp_is_traversable() {
        let c = 0.01;
        let g = grid_from_fn(|col, _| c * col as f64);
        let th = TraversabilityThresholds::default();
        assert!(8.0 * c < th.s_max && c < th.h_max);
        let m = obstacle_mask(&g, &th);
        assert_eq!(m.obstacle_mask, mask_oracle(&g, &th));
        assert!(m.obstacle_cells().is_empty());
    }

    #[test]
    fn translation_shifts_mask_with_grid() {
        let cloud: Vec<Point3> = (0..8)
            .flat_map(|i| (0..5).map(move |j| Point3::new(1.05 + 0.1 * i as f64, -0.45 + 0.1 * j as f64, 0.8)))
            .collect();
        let th = TraversabilityThresholds::default();
        let base = obstacle_mask(&build_grid(&cloud, &RobotState::default(), &cfg()).unwrap(), &th);
        let shift = Vec2::new(2.0, -1.0);
        let moved: Vec<Point3> = cloud
            .iter()
            .map(|p| Point3::new(p.x + shift.x, p.y + shift.y, p.z))
            .collect();
        let other = obstacle_mask(
            &build_grid(&moved, &RobotState::new(shift.x, shift.y, 0.4), &cfg()).unwrap(),
            &th,
        );
        assert_eq!(base.obstacle_mask, other.obstacle_mask);
        for (a, b) in base.obstacle_cells().iter().zip(other.obstacle_cells()) {
            assert_abs_diff_eq!(a.x + shift.x, b.x, epsilon = 1e-9);
            assert_abs_diff_eq!(a.y + shift.y, b.y, epsilon = 1e-9);
        }
        assert!(!base.obstacle_cells().is_empty());
    }

    proptest! {
        #[test]
        fn mask_monotone_in_thresholds(
            bumps in proptest::collection::vec((5usize..95, 5usize..95, 0.0..1.5f64), 1..20),
            s in 0.1..3.0f64, l in 0.1..3.0f64, h in 0.05..1.0f64,
            ds in 0.0..1.0f64, dl in 0.0..1.0f64, dh in 0.0..0.5f64,
        ) {
            let mut g = ElevationGrid::empty(Vec2::ZERO, &cfg()).unwrap();
            for (c, r, z) in bumps {
                let i = g.index(c, r);
                g.elevation[i] = Some(z);
            }
            let lo = obstacle_mask(&g, &TraversabilityThresholds { s_max: s, l_max: l, h_max: h });
            let hi = obstacle_mask(&g, &TraversabilityThresholds { s_max: s + ds, l_max: l + dl, h_max: h + dh });
            for (a, b) in lo.obstacle_mask.iter().zip(&hi.obstacle_mask) {
                prop_assert!(!b || *a);
            }
        }
    }
}
