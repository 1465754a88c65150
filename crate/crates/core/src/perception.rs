//! Obstacle clustering, minimum bounding ellipses and frame-to-frame association.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{Ellipse, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<Vec2>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DbscanResult {
    pub clusters: Vec<Cluster>,
    /// Indices of input points classified as noise.
    pub noise: Vec<usize>,
    /// Per-point cluster id, `None` for noise.
    pub assignment: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        // 3 cells at the default 0.1 m grid resolution
        Self { eps: 0.3, min_pts: 3 }
    }
}

/// Density-based clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters are numbered in order of
/// their first core point in the input.
pub fn dbscan(points: &[Vec2], eps: f64, min_pts: usize) -> DbscanResult {
    let n = points.len();
    let eps2 = eps * eps;
    let index = SpatialHash::new(points, eps);
    let neighbors = |i: usize| index.within(points, points[i], eps2);

    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut clusters: Vec<Cluster> = Vec::new();

    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = neighbors(i);
        if seeds.len() < min_pts {
            continue;
        }
        let id = clusters.len();
        clusters.push(Cluster { members: Vec::new() });
        assignment[i] = Some(id);
        let mut queue = seeds;
        let mut head = 0;
        while head < queue.len() {
            let j = queue[head];
            head += 1;
            if assignment[j].is_none() {
                assignment[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&k| !visited[k] || assignment[k].is_none()));
            }
        }
    }

    for (i, a) in assignment.iter().enumerate() {
        if let Some(id) = a {
            clusters[*id].members.push(points[i]);
        }
    }
    let noise = (0..n).filter(|&i| assignment[i].is_none()).collect();
    DbscanResult {
        clusters,
        noise,
        assignment,
    }
}

/// Uniform bucket grid with cell size `eps` for radius queries.
struct SpatialHash {
    cell: f64,
    buckets: std::collections::HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialHash {
    fn new(points: &[Vec2], cell: f64) -> Self {
        let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(cell, *p)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(cell: f64, p: Vec2) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Sorted indices of points within squared distance `r2` of `p`.
    fn within(&self, points: &[Vec2], p: Vec2, r2: f64) -> Vec<usize> {
        let (kx, ky) = Self::key(self.cell, p);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                    out.extend(b.iter().copied().filter(|&j| (points[j] - p).norm_sq() <= r2));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MbeParams {
    /// Convergence tolerance on the Khachiyan optimality gap.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Axis floor used for degenerate (single point, collinear) clusters.
    pub b_min: f64,
}

impl Default for MbeParams {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_iterations: 1000,
            b_min: 0.1,
        }
    }
}

/// Minimum-area ellipse enclosing `points`.
///
/// Khachiyan's barycentric coordinate ascent with Todd–Yıldırım away steps;
/// the result is rescaled afterwards so every point lies inside. Degenerate
/// inputs get a minor axis of `params.b_min`.
///
/// # Panics
/// If `points` is empty.
pub fn min_bounding_ellipse(points: &[Vec2], params: &MbeParams) -> Ellipse {
    assert!(!points.is_empty(), "min_bounding_ellipse needs at least one point");
    let b_min = params.b_min;
    let n = points.len();
    let mean = points.iter().fold(Vec2::ZERO, |acc, p| acc + *p).scale(1.0 / n as f64);

    let mut cov = Matrix2::zeros();
    for p in points {
        let d = Vector2::new(p.x - mean.x, p.y - mean.y);
        cov += d * d.transpose();
    }
    let extent = points.iter().map(|p| (*p - mean).norm()).fold(0.0, f64::max);
    if extent == 0.0 {
        return Ellipse::new(mean.x, mean.y, b_min, b_min, 0.0).expect("b_min must be positive");
    }
    let eig = SymmetricEigen::new(cov / n as f64);
    let (major_idx, minor_idx) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let minor_dir = Vec2::new(eig.eigenvectors[(0, minor_idx)], eig.eigenvectors[(1, minor_idx)]);
    let minor_spread = points
        .iter()
        .map(|p| (*p - mean).dot(minor_dir).abs())
        .fold(0.0, f64::max);
    if n == 2 || minor_spread <= 1e-9 * extent {
        let major_dir = Vec2::new(eig.eigenvectors[(0, major_idx)], eig.eigenvectors[(1, major_idx)]);
        return collinear_ellipse(points, mean, major_dir, b_min);
    }

    // Khachiyan on centered, scaled coordinates.
    let scale = 1.0 / extent;
    let q: Vec<Vector3<f64>> = points
        .iter()
        .map(|p| Vector3::new((p.x - mean.x) * scale, (p.y - mean.y) * scale, 1.0))
        .collect();
    let u = khachiyan_weights(&q, params.tolerance, params.max_iterations);

    let mut c = Vector2::zeros();
    for (ui, qi) in u.iter().zip(&q) {
        c += *ui * qi.xy();
    }
    let mut second = Matrix2::zeros();
    for (ui, qi) in u.iter().zip(&q) {
        let d = qi.xy() - c;
        second += *ui * d * d.transpose();
    }
    let Some(inv) = (second * 2.0).try_inverse() else {
        let major_dir = Vec2::new(eig.eigenvectors[(0, major_idx)], eig.eigenvectors[(1, major_idx)]);
        return collinear_ellipse(points, mean, major_dir, b_min);
    };
    let mut shape = inv;
    let worst = q
        .iter()
        .map(|qi| {
            let d = qi.xy() - c;
            (d.transpose() * shape * d)[(0, 0)]
        })
        .fold(0.0, f64::max);
    if worst > 0.0 {
        shape /= worst;
    }
    ellipse_from_shape(&shape, c, mean, scale, b_min)
}

fn khachiyan_weights(q: &[Vector3<f64>], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = q.len();
    let dim1 = 3.0;
    let mut u = vec![1.0 / n as f64; n];
    let mut m = vec![0.0; n];
    for _ in 0..max_iter {
        let mut x = Matrix3::zeros();
        for (ui, qi) in u.iter().zip(q) {
            x += *ui * qi * qi.transpose();
        }
        let Some(xinv) = x.try_inverse() else { break };
        for (mi, qi) in m.iter_mut().zip(q) {
            *mi = (qi.transpose() * xinv * qi)[(0, 0)];
        }
        let (j, mj) = m
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let (k, mk) = m
            .iter()
            .copied()
            .enumerate()
            .filter(|&(i, _)| u[i] > 0.0)
            .fold((0, f64::MAX), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        let eps_plus = mj / dim1 - 1.0;
        let eps_minus = 1.0 - mk / dim1;
        if eps_plus.max(eps_minus) <= tol {
            break;
        }
        if eps_plus >= eps_minus {
            let beta = (mj - dim1) / (dim1 * (mj - 1.0));
            u.iter_mut().for_each(|v| *v *= 1.0 - beta);
            u[j] += beta;
        } else {
            // away step, limited so the weight stays non-negative
            let beta = ((mk - dim1) / (dim1 * (mk - 1.0))).max(-u[k] / (1.0 - u[k]));
            u.iter_mut().for_each(|v| *v *= 1.0 - beta);
            u[k] += beta;
            if u[k] < 1e-300 {
                u[k] = 0.0;
            }
        }
    }
    u
}

fn ellipse_from_shape(shape: &Matrix2<f64>, c: Vector2<f64>, mean: Vec2, scale: f64, b_min: f64) -> Ellipse {
    let eig = SymmetricEigen::new(*shape);
    let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let a = 1.0 / (eig.eigenvalues[lo].sqrt() * scale);
    let b = 1.0 / (eig.eigenvalues[hi].sqrt() * scale);
    let theta = eig.eigenvectors[(1, lo)].atan2(eig.eigenvectors[(0, lo)]);
    let center = Vec2::new(mean.x + c.x / scale, mean.y + c.y / scale);
    Ellipse::new(center.x, center.y, a.max(b_min), b.max(b_min), theta).expect("finite positive axes")
}

fn collinear_ellipse(points: &[Vec2], mean: Vec2, dir: Vec2, b_min: f64) -> Ellipse {
    let (lo, hi) = points.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
        let t = (*p - mean).dot(dir);
        (lo.min(t), hi.max(t))
    });
    let center = mean + dir.scale(0.5 * (lo + hi));
    let a = (0.5 * (hi - lo)).max(b_min);
    Ellipse::new(center.x, center.y, a, b_min, dir.angle()).expect("b_min must be positive")
}

/// Minimum-cost assignment for a rectangular cost matrix (Kuhn–Munkres with
/// potentials, O(n²m)). Returns, per row, the assigned column; when there
/// are more rows than columns some rows stay unassigned.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        let col_to_row = hungarian(&transposed);
        let mut out = vec![None; rows];
        for (j, r) in col_to_row.into_iter().enumerate() {
            if let Some(i) = r {
                out[i] = Some(j);
            }
        }
        return out;
    }

    // 1-based potentials formulation; p[j] is the row matched to column j.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledEllipse {
    pub ellipse: Ellipse,
    pub label: u64,
    pub frame_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationParams {
    /// Gating distance between matched centers (m).
    pub d_max: f64,
    /// Consecutive unmatched frames after which a label is retired.
    pub max_misses: u32,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            d_max: 1.0,
            max_misses: 3,
        }
    }
}

/// Result of matching one frame against the previous one.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(prev index, cur index, center distance)`
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_prev: Vec<usize>,
    pub unmatched_cur: Vec<usize>,
}

/// Center-distance assignment with gating. Distances above `d_max` are
/// capped before solving so that gated pairs never displace admissible ones.
pub fn match_frames(prev: &[Ellipse], cur: &[Ellipse], d_max: f64) -> Matching {
    let cap = 10.0 * d_max.max(1e-9);
    let cost: Vec<Vec<f64>> = prev
        .iter()
        .map(|p| cur.iter().map(|c| p.center().dist(c.center()).min(cap)).collect())
        .collect();
    let assign = hungarian(&cost);
    let mut pairs = Vec::new();
    let mut cur_used = vec![false; cur.len()];
    let mut unmatched_prev = Vec::new();
    for (i, a) in assign.iter().enumerate() {
        match a {
            Some(j) => {
                let d = prev[i].center().dist(cur[*j].center());
                if d <= d_max {
                    pairs.push((i, *j, d));
                    cur_used[*j] = true;
                } else {
                    unmatched_prev.push(i);
                }
            }
            None => unmatched_prev.push(i),
        }
    }
    let unmatched_cur = (0..cur.len()).filter(|&j| !cur_used[j]).collect();
    Matching {
        pairs,
        unmatched_prev,
        unmatched_cur,
    }
}

/// Labels `cur` from `prev`: matched ellipses inherit the previous label,
/// the rest draw fresh labels from `next_label`.
pub fn associate(
    prev: &[LabeledEllipse],
    cur: &[Ellipse],
    params: &AssociationParams,
    frame_time: f64,
    next_label: &mut u64,
) -> Vec<LabeledEllipse> {
    let prev_e: Vec<Ellipse> = prev.iter().map(|l| l.ellipse).collect();
    let m = match_frames(&prev_e, cur, params.d_max);
    let mut labels = vec![None; cur.len()];
    for (i, j, _) in &m.pairs {
        labels[*j] = Some(prev[*i].label);
    }
    cur.iter()
        .zip(labels)
        .map(|(e, l)| {
            let label = l.unwrap_or_else(|| {
                let fresh = *next_label;
                *next_label += 1;
                fresh
            });
            LabeledEllipse {
                ellipse: *e,
                label,
                frame_time,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    last: LabeledEllipse,
    misses: u32,
}

/// Frame-to-frame label bookkeeping with retirement of stale labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelManager {
    params: AssociationParams,
    slots: Vec<Slot>,
    next_label: u64,
}

/// Outcome of one [`LabelManager::update`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub current: Vec<LabeledEllipse>,
    /// Labels seen for the first time this frame.
    pub born: Vec<u64>,
    /// Labels dropped this frame.
    pub retired: Vec<u64>,
}

impl LabelManager {
    pub fn new(params: AssociationParams) -> Self {
        Self {
            params,
            slots: Vec::new(),
            next_label: 0,
        }
    }

    pub fn update(&mut self, cur: &[Ellipse], frame_time: f64) -> FrameLabels {
        let prev: Vec<LabeledEllipse> = self.slots.iter().map(|s| s.last).collect();
        let before = self.next_label;
        let current = associate(&prev, cur, &self.params, frame_time, &mut self.next_label);
        let born: Vec<u64> = (before..self.next_label).collect();

        let mut retired = Vec::new();
        let mut slots = Vec::with_capacity(self.slots.len() + born.len());
        for slot in self.slots.drain(..) {
            if let Some(hit) = current.iter().find(|c| c.label == slot.last.label) {
                slots.push(Slot { last: *hit, misses: 0 });
            } else if slot.misses + 1 >= self.params.max_misses {
                retired.push(slot.last.label);
            } else {
                slots.push(Slot {
                    misses: slot.misses + 1,
                    ..slot
                });
            }
        }
        for c in current.iter().filter(|c| born.contains(&c.label)) {
            slots.push(Slot { last: *c, misses: 0 });
        }
        self.slots = slots;
        FrameLabels { current, born, retired }
    }

    /// Labels currently alive, including those missed for fewer than `max_misses` frames.
    pub fn live_labels(&self) -> Vec<u64> {
        self.slots.iter().map(|s| s.last.label).collect()
    }
}
