//! Simplified pencil-beam dose model.
//!
//! Beams rotate about the z axis. Gantry angle 0 places the source on the
//! +y side, looking toward -y. Each beam's fluence plane sits at the
//! isocenter, perpendicular to the central axis, with rows along z and
//! columns along the lateral axis. A bixel's ray runs from the source through
//! the bixel center (divergent geometry).
//!
//! For voxel `v` and bixel `j` the influence is
//! `exp(-mu * depth(v)) * exp(-r² / (2 sigma²))`, where `depth` is the
//! in-body path length from the voxel back toward the source and `r` is the
//! perpendicular distance from the voxel center to the bixel ray. Entries
//! below `relative_cutoff` times the bixel's largest entry are dropped.

use serde::{Deserialize, Serialize};

use super::matrix::DoseInfluenceMatrix;
use crate::error::{FmoError, Result};
use crate::phantom::{Phantom, Vec3, VoxelGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub n_beams: usize,
    /// Degrees. Evenly spaced over 360° starting at 0 when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gantry_angles: Option<Vec<f64>>,
    pub isocenter: Vec3,
    /// (rows, cols) of the fluence grid of each beam.
    pub bixel_grid: [usize; 2],
    /// (row pitch along z, column pitch laterally) in mm at the isocenter.
    pub bixel_size: [f64; 2],
    /// Source-to-isocenter distance in mm.
    pub source_distance: f64,
}

impl BeamConfig {
    pub const DEFAULT_BEAMS: usize = 9;
    pub const DEFAULT_PITCH_MM: f64 = 5.0;
    pub const DEFAULT_SOURCE_DISTANCE_MM: f64 = 1000.0;

    pub fn angles(&self) -> Vec<f64> {
        match &self.gantry_angles {
            Some(a) => a.clone(),
            None => (0..self.n_beams)
                .map(|i| 360.0 * i as f64 / self.n_beams as f64)
                .collect(),
        }
    }

    pub fn bixels_per_beam(&self) -> usize {
        self.bixel_grid[0] * self.bixel_grid[1]
    }

    pub fn n_bixels(&self) -> usize {
        self.n_beams * self.bixels_per_beam()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_beams == 0 {
            return Err(FmoError::config("beam list is empty"));
        }
        if let Some(a) = &self.gantry_angles {
            if a.len() != self.n_beams {
                return Err(FmoError::config(format!(
                    "n_beams is {} but {} gantry angles given",
                    self.n_beams,
                    a.len()
                )));
            }
        }
        let mut norm: Vec<f64> = self.angles().iter().map(|a| a.rem_euclid(360.0)).collect();
        if norm.iter().any(|a| !a.is_finite()) {
            return Err(FmoError::config("gantry angles must be finite"));
        }
        norm.sort_by(f64::total_cmp);
        let wrap = norm.len() > 1 && norm[0] + 360.0 - norm[norm.len() - 1] < 1e-9;
        if wrap || norm.windows(2).any(|w| w[1] - w[0] < 1e-9) {
            return Err(FmoError::config("gantry angles must be distinct modulo 360"));
        }
        if self.bixel_grid.iter().any(|&n| n == 0) {
            return Err(FmoError::config("bixel grid must have at least one row and column"));
        }
        if self.bixel_size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(FmoError::config("bixel size must be positive"));
        }
        if !(self.source_distance > 0.0 && self.source_distance.is_finite()) {
            return Err(FmoError::config("source distance must be positive"));
        }
        if self.isocenter.iter().any(|x| !x.is_finite()) {
            return Err(FmoError::config("isocenter must be finite"));
        }
        Ok(())
    }

    /// Evenly spaced beams with a square-pitch fluence grid sized to cover the
    /// projection of every target voxel from every beam, plus `margin_mm`.
    /// The isocenter is the center of the targets' bounding box.
    pub fn covering_targets(
        phantom: &Phantom,
        n_beams: usize,
        pitch_mm: f64,
        margin_mm: f64,
    ) -> Result<BeamConfig> {
        let targets = phantom.target_voxels();
        if targets.is_empty() {
            return Err(FmoError::config(format!(
                "case `{}` has no PTV structure to aim beams at",
                phantom.case_name
            )));
        }
        let grid = &phantom.grid;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &v in &targets {
            let p = grid.center(v);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let isocenter = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
        let mut cfg = BeamConfig {
            n_beams,
            gantry_angles: None,
            isocenter,
            bixel_grid: [1, 1],
            bixel_size: [pitch_mm; 2],
            source_distance: Self::DEFAULT_SOURCE_DISTANCE_MM,
        };
        let half_voxel = 0.5 * grid.spacing.iter().cloned().fold(0.0, f64::max);
        let (mut max_u, mut max_w) = (0.0f64, 0.0f64);
        for geom in cfg.geometries() {
            for &v in &targets {
                if let Some((pu, pw)) = geom.project(grid.center(v)) {
                    max_u = max_u.max(pu.abs());
                    max_w = max_w.max(pw.abs());
                }
            }
        }
        let count = |half: f64| ((2.0 * (half + half_voxel + margin_mm)) / pitch_mm).ceil() as usize;
        cfg.bixel_grid = [count(max_w).max(1), count(max_u).max(1)];
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_for(phantom: &Phantom) -> Result<BeamConfig> {
        Self::covering_targets(phantom, Self::DEFAULT_BEAMS, Self::DEFAULT_PITCH_MM, Self::DEFAULT_PITCH_MM)
    }

    pub fn geometries(&self) -> Vec<BeamGeometry> {
        self.angles()
            .into_iter()
            .map(|deg| BeamGeometry::new(deg, self.isocenter, self.source_distance))
            .collect()
    }

    /// Iso-plane offsets (lateral, axial) of bixel `(row, col)`'s center.
    pub fn bixel_offset(&self, row: usize, col: usize) -> (f64, f64) {
        let [rows, cols] = self.bixel_grid;
        let [row_pitch, col_pitch] = self.bixel_size;
        (
            (col as f64 - (cols as f64 - 1.0) / 2.0) * col_pitch,
            (row as f64 - (rows as f64 - 1.0) / 2.0) * row_pitch,
        )
    }

    /// Global bixel index of `(beam, row, col)`.
    pub fn bixel_index(&self, beam: usize, row: usize, col: usize) -> usize {
        beam * self.bixels_per_beam() + row * self.bixel_grid[1] + col
    }

    /// 4-neighbor pairs `(i, j)`, `i < j`, within each beam's fluence grid.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize)> {
        let [rows, cols] = self.bixel_grid;
        let mut pairs = Vec::new();
        for beam in 0..self.n_beams {
            for r in 0..rows {
                for c in 0..cols {
                    let here = self.bixel_index(beam, r, c);
                    if c + 1 < cols {
                        pairs.push((here, self.bixel_index(beam, r, c + 1)));
                    }
                    if r + 1 < rows {
                        pairs.push((here, self.bixel_index(beam, r + 1, c)));
                    }
                }
            }
        }
        pairs
    }
}

/// Source position and orthonormal frame of one beam.
#[derive(Debug, Clone, Copy)]
pub struct BeamGeometry {
    pub source: Vec3,
    /// Central axis, source toward isocenter.
    pub axis: Vec3,
    /// Lateral direction of fluence columns.
    pub lateral: Vec3,
    /// Direction of fluence rows (the rotation axis).
    pub axial: Vec3,
    pub source_distance: f64,
    pub isocenter: Vec3,
}

impl BeamGeometry {
    pub fn new(gantry_deg: f64, isocenter: Vec3, source_distance: f64) -> Self {
        let (s, c) = gantry_deg.to_radians().sin_cos();
        BeamGeometry {
            source: [
                isocenter[0] + source_distance * s,
                isocenter[1] + source_distance * c,
                isocenter[2],
            ],
            axis: [-s, -c, 0.0],
            lateral: [c, -s, 0.0],
            axial: [0.0, 0.0, 1.0],
            source_distance,
            isocenter,
        }
    }

    /// Projection of `p` through the source onto the iso plane, as
    /// (lateral, axial) offsets. `None` if `p` is not in front of the source.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let rel = sub(p, self.source);
        let t = dot(rel, self.axis);
        if t <= 0.0 {
            return None;
        }
        let m = self.source_distance / t;
        Some((dot(rel, self.lateral) * m, dot(rel, self.axial) * m))
    }

    /// Unit direction of the ray from the source through iso-plane offset (u, w).
    pub fn ray(&self, u: f64, w: f64) -> Vec3 {
        let q = [0, 1, 2].map(|a| self.isocenter[a] + u * self.lateral[a] + w * self.axial[a]);
        normalize(sub(q, self.source))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PencilBeamParams {
    /// Linear attenuation coefficient, 1/mm.
    pub attenuation_per_mm: f64,
    /// Lateral Gaussian spread, mm.
    pub lateral_sigma_mm: f64,
    /// Entries below this fraction of their bixel's maximum are dropped.
    pub relative_cutoff: f64,
}

impl Default for PencilBeamParams {
    fn default() -> Self {
        PencilBeamParams {
            attenuation_per_mm: 0.005,
            lateral_sigma_mm: 4.0,
            relative_cutoff: 1e-4,
        }
    }
}

impl PencilBeamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.attenuation_per_mm >= 0.0 && self.attenuation_per_mm.is_finite()) {
            return Err(FmoError::config("attenuation must be non-negative"));
        }
        if !(self.lateral_sigma_mm > 0.0 && self.lateral_sigma_mm.is_finite()) {
            return Err(FmoError::config("lateral sigma must be positive"));
        }
        if !(0.0..1.0).contains(&self.relative_cutoff) {
            return Err(FmoError::config("relative cutoff must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    a.map(|x| x / n)
}

/// Squared perpendicular distance from `rel` (relative to the source) to the
/// line through the source with unit direction `ray`.
#[inline]
pub(crate) fn perp_dist2(rel: Vec3, ray: Vec3) -> f64 {
    let t = dot(rel, ray);
    let d = [rel[0] - t * ray[0], rel[1] - t * ray[1], rel[2] - t * ray[2]];
    dot(d, d)
}

/// In-body path length from `p` back toward `source`. Samples sit at
/// `(k + 1/2) * step` from `p`; marching stops at the grid boundary.
pub(crate) fn body_depth(grid: &VoxelGrid, body: &[bool], p: Vec3, source: Vec3, step: f64) -> f64 {
    let rel = sub(source, p);
    let len = dot(rel, rel).sqrt();
    let dir = rel.map(|x| x / len);
    let mut inside = 0usize;
    let mut k = 0usize;
    loop {
        let s = (k as f64 + 0.5) * step;
        if s >= len {
            break;
        }
        let q = [p[0] + s * dir[0], p[1] + s * dir[1], p[2] + s * dir[2]];
        match grid.locate(q) {
            Some(v) => {
                if body[v] {
                    inside += 1;
                }
            }
            None => break,
        }
        k += 1;
    }
    inside as f64 * step
}

/// Ray-march step: half the smallest voxel spacing.
pub(crate) fn march_step(grid: &VoxelGrid) -> f64 {
    0.5 * grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Builds the voxel-by-bixel influence matrix for `phantom` under `beams`.
pub fn compute_influence_matrix(
    phantom: &Phantom,
    beams: &BeamConfig,
    params: &PencilBeamParams,
) -> Result<DoseInfluenceMatrix> {
    beams.validate()?;
    params.validate()?;
    if phantom.body.is_empty() {
        return Err(FmoError::config(format!(
            "case `{}` has an empty body mask",
            phantom.case_name
        )));
    }
    let grid = &phantom.grid;
    let n_vox = grid.voxel_count();
    let n_bixels = beams.n_bixels();
    if n_bixels > u32::MAX as usize {
        return Err(FmoError::config("too many bixels"));
    }
    let mut body = vec![false; n_vox];
    for &v in phantom.body.voxels() {
        body[v] = true;
    }

    let step = march_step(grid);
    let sigma = params.lateral_sigma_mm;
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    // Gaussian factor beyond this radius is below 1e-7.
    let prune = sigma * (2.0 * 1e7f64.ln()).sqrt();
    let prune2 = prune * prune;
    let [rows, cols] = beams.bixel_grid;
    let [row_pitch, col_pitch] = beams.bixel_size;

    let mut matrix_rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_vox];
    let mut col_max = vec![0.0f64; n_bixels];

    for (beam, geom) in beams.geometries().iter().enumerate() {
        let rays: Vec<Vec3> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| {
                let (u, w) = beams.bixel_offset(r, c);
                geom.ray(u, w)
            })
            .collect();
        let base = beam * rows * cols;
        for &v in phantom.body.voxels() {
            let p = grid.center(v);
            let Some((pu, pw)) = geom.project(p) else {
                continue;
            };
            let rel = sub(p, geom.source);
            let t = dot(rel, geom.axis);
            let window = 1.5 * prune * geom.source_distance / t;
            let Some((c0, c1)) = index_window(pu, window + 0.5 * col_pitch, cols, col_pitch) else {
                continue;
            };
            let Some((r0, r1)) = index_window(pw, window + 0.5 * row_pitch, rows, row_pitch) else {
                continue;
            };
            let mut atten = None;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let local = r * cols + c;
                    let d2 = perp_dist2(rel, rays[local]);
                    if d2 > prune2 {
                        continue;
                    }
                    let a = *atten.get_or_insert_with(|| {
                        (-params.attenuation_per_mm * body_depth(grid, &body, p, geom.source, step)).exp()
                    });
                    let value = a * (-d2 * inv_two_sigma2).exp();
                    if value > 0.0 {
                        let j = base + local;
                        matrix_rows[v].push((j as u32, value));
                        col_max[j] = col_max[j].max(value);
                    }
                }
            }
        }

        // Bixels whose pruned maximum is too small for the pruning bound to be
        // exact are recomputed against every body voxel.
        let weak: Vec<usize> = (0..rows * cols).filter(|&l| col_max[base + l] < 1e-3).collect();
        if !weak.is_empty() {
            let lo = (base + weak[0]) as u32;
            let hi = (base + weak[weak.len() - 1]) as u32;
            for &v in phantom.body.voxels() {
                let p = grid.center(v);
                let rel = sub(p, geom.source);
                let row = &mut matrix_rows[v];
                row.retain(|&(j, _)| j < lo || j > hi || !weak.contains(&((j as usize) - base)));
                let mut atten = None;
                for &l in &weak {
                    let d2 = perp_dist2(rel, rays[l]);
                    let a = *atten.get_or_insert_with(|| {
                        (-params.attenuation_per_mm * body_depth(grid, &body, p, geom.source, step)).exp()
                    });
                    let value = a * (-d2 * inv_two_sigma2).exp();
                    if value > 0.0 {
                        row.push(((base + l) as u32, value));
                        col_max[base + l] = col_max[base + l].max(value);
                    }
                }
                row.sort_unstable_by_key(|e| e.0);
            }
        }
    }

    let cutoff = params.relative_cutoff;
    for row in &mut matrix_rows {
        row.retain(|&(j, value)| value >= cutoff * col_max[j as usize]);
        row.shrink_to_fit();
    }
    Ok(DoseInfluenceMatrix::from_rows(n_bixels, matrix_rows))
}

/// Indices `k` in `0..n` whose centers `(k - (n-1)/2) * pitch` lie within
/// `half` of `x`.
fn index_window(x: f64, half: f64, n: usize, pitch: f64) -> Option<(usize, usize)> {
    let mid = (n as f64 - 1.0) / 2.0;
    let lo = ((x - half) / pitch + mid).ceil().max(0.0);
    let hi = ((x + half) / pitch + mid).floor().min(n as f64 - 1.0);
    (lo <= hi).then(|| (lo as usize, hi as usize))
}
