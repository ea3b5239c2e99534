//! Cumulative dose-volume histograms and dose-volume goal checks.
//!
//! A curve stores, at each bin edge, the fraction of a structure's voxels
//! receiving at least that dose.

use serde::{Deserialize, Serialize};

use crate::error::{FmoError, Result};
use crate::objective::{DoseGoal, GoalKind};
use crate::phantom::{Phantom, StructureMask};

/// Gy.
pub const DEFAULT_BIN_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvhCurve {
    pub structure: String,
    /// Gy, `k * bin_width` for `k = 0, 1, ...`.
    pub bin_edges: Vec<f64>,
    /// Fraction of the structure receiving at least each edge's dose.
    pub volume_fractions: Vec<f64>,
}

impl DvhCurve {
    /// Fraction receiving at least `dose`, interpolated linearly between
    /// edges. Zero past the last edge.
    pub fn fraction_at(&self, dose: f64) -> f64 {
        let edges = &self.bin_edges;
        let fr = &self.volume_fractions;
        if dose <= edges[0] {
            return fr[0];
        }
        let last = edges.len() - 1;
        if dose >= edges[last] {
            return fr[last];
        }
        let k = edges.partition_point(|&e| e <= dose) - 1;
        let t = (dose - edges[k]) / (edges[k + 1] - edges[k]);
        fr[k] + t * (fr[k + 1] - fr[k])
    }

    /// `(dose_gy, volume_fraction)` pairs.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.bin_edges.iter().copied().zip(self.volume_fractions.iter().copied())
    }
}

/// Cumulative DVH of `dose` over `mask`, with edges from 0 Gy up to one bin
/// past the structure's maximum dose.
pub fn compute_dvh(dose: &[f64], mask: &StructureMask, bin_width: f64) -> Result<DvhCurve> {
    if mask.is_empty() {
        return Err(FmoError::config(format!("cannot build a DVH for empty structure `{}`", mask.name)));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(FmoError::config("DVH bin_width must be > 0"));
    }
    let mut values = Vec::with_capacity(mask.len());
    for &v in mask.voxels() {
        let d = *dose.get(v).ok_or_else(|| {
            FmoError::config(format!(
                "structure `{}` has voxel {v} but the dose vector has {} entries",
                mask.name,
                dose.len()
            ))
        })?;
        if !d.is_finite() {
            return Err(FmoError::config(format!("non-finite dose at voxel {v}")));
        }
        values.push(d);
    }
    values.sort_by(f64::total_cmp);
    let max = values[values.len() - 1].max(0.0);
    let mut bins = (max / bin_width).floor() as usize + 1;
    while bins as f64 * bin_width <= max {
        bins += 1;
    }
    let n = values.len() as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|k| k as f64 * bin_width).collect();
    let volume_fractions = bin_edges
        .iter()
        .map(|&e| (values.len() - values.partition_point(|&d| d < e)) as f64 / n)
        .collect();
    Ok(DvhCurve {
        structure: mask.name.clone(),
        bin_edges,
        volume_fractions,
    })
}

/// DVHs of the body and of every structure of `phantom`.
pub fn compute_case_dvhs(dose: &[f64], phantom: &Phantom, bin_width: f64) -> Result<Vec<DvhCurve>> {
    std::iter::once(&phantom.body)
        .chain(&phantom.structures)
        .map(|m| compute_dvh(dose, m, bin_width))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalCheck {
    pub goal: DoseGoal,
    /// Fraction of the structure receiving at least the goal dose.
    pub achieved_fraction: f64,
    pub passed: bool,
}

/// Checks each goal against the DVH of its structure.
pub fn evaluate_goals(curves: &[DvhCurve], goals: &[DoseGoal]) -> Result<Vec<GoalCheck>> {
    goals
        .iter()
        .map(|goal| {
            let curve = curves
                .iter()
                .find(|c| c.structure == goal.structure)
                .ok_or_else(|| FmoError::config(format!("no DVH for goal structure `{}`", goal.structure)))?;
            let achieved_fraction = curve.fraction_at(goal.dose);
            let passed = match goal.kind {
                GoalKind::MaxDose => achieved_fraction <= goal.volume_fraction,
                GoalKind::MinDose => achieved_fraction >= goal.volume_fraction,
            };
            Ok(GoalCheck {
                goal: goal.clone(),
                achieved_fraction,
                passed,
            })
        })
        .collect()
}
