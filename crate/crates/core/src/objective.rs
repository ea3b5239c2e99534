//! Dose-volume objective over fluence.
//!
//! With dose `d = L|b|`, the cost is
//!
//! ```text
//! f(b) = Σ_goals w · Σ_{v ∈ structure} penalty(d_v) + λ · Σ_{(i,j) neighbors} (|b_i| - |b_j|)²
//! ```
//!
//! where `penalty(d) = (d - dose)₊²` for a maximum-dose goal and
//! `(dose - d)₊²` for a minimum-dose goal. The volume fraction of a goal is
//! not part of the penalty; it is only used when checking goals on a DVH.
//!
//! [`FluenceObjective`] precompiles a problem: it keeps only the matrix rows
//! of voxels some goal looks at, so evaluation cost scales with the goal
//! structures rather than the whole body.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dose::{BeamConfig, DoseInfluenceMatrix};
use crate::error::{check_len, FmoError, Result};
use crate::optim::{LinearOperator, Objective};
use crate::phantom::{CaseName, Phantom};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalKind {
    MaxDose,
    MinDose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseGoal {
    pub structure: String,
    pub kind: GoalKind,
    /// Gy.
    pub dose: f64,
    pub volume_fraction: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl DoseGoal {
    pub fn max_dose(structure: &str, dose: f64, volume_fraction: f64) -> Self {
        DoseGoal {
            structure: structure.to_string(),
            kind: GoalKind::MaxDose,
            dose,
            volume_fraction,
            weight: 1.0,
        }
    }

    pub fn min_dose(structure: &str, dose: f64, volume_fraction: f64) -> Self {
        DoseGoal {
            kind: GoalKind::MinDose,
            ..Self::max_dose(structure, dose, volume_fraction)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dose >= 0.0 && self.dose.is_finite()) {
            return Err(FmoError::config(format!("goal on `{}`: dose must be >= 0", self.structure)));
        }
        if !(0.0..=1.0).contains(&self.volume_fraction) {
            return Err(FmoError::config(format!(
                "goal on `{}`: volume_fraction must lie in [0, 1]",
                self.structure
            )));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(FmoError::config(format!("goal on `{}`: weight must be >= 0", self.structure)));
        }
        Ok(())
    }

    /// Penalty and its first and second derivatives at dose `d`.
    #[inline]
    fn penalty(&self, d: f64) -> (f64, f64, f64) {
        let excess = match self.kind {
            GoalKind::MaxDose => d - self.dose,
            GoalKind::MinDose => self.dose - d,
        };
        if excess > 0.0 {
            let slope = match self.kind {
                GoalKind::MaxDose => 2.0 * excess,
                GoalKind::MinDose => -2.0 * excess,
            };
            (excess * excess, slope, 2.0)
        } else {
            (0.0, 0.0, 0.0)
        }
    }
}

impl fmt::Display for DoseGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (word, cmp) = match self.kind {
            GoalKind::MaxDose => ("max", "<="),
            GoalKind::MinDose => ("min", ">="),
        };
        write!(
            f,
            "{} {word}: {:.0}% {cmp} {} Gy",
            self.structure,
            self.volume_fraction * 100.0,
            self.dose
        )
    }
}

/// Shipped goal set for a built-in case. Every weight is 1.
pub fn default_goals(case: CaseName) -> Vec<DoseGoal> {
    match case {
        CaseName::MultiPtv => vec![
            DoseGoal::min_dose("PTV_center", 50.0, 0.99),
            DoseGoal::max_dose("PTV_center", 53.0, 0.10),
            DoseGoal::min_dose("PTV_superior", 25.0, 0.99),
            DoseGoal::max_dose("PTV_superior", 35.0, 0.10),
            DoseGoal::min_dose("PTV_inferior", 12.5, 0.99),
            DoseGoal::max_dose("PTV_inferior", 25.0, 0.10),
        ],
        CaseName::HeadNeck => vec![
            DoseGoal::min_dose("PTV", 50.0, 0.90),
            DoseGoal::max_dose("PTV", 55.0, 0.20),
            DoseGoal::max_dose("cord", 40.0, 0.0),
        ],
        CaseName::Prostate | CaseName::IcmProstate => vec![
            DoseGoal::min_dose("PTV", 70.0, 0.95),
            DoseGoal::max_dose("PTV", 78.0, 0.05),
            DoseGoal::max_dose("rectum", 30.0, 0.20),
            DoseGoal::max_dose("bladder", 40.0, 0.30),
        ],
    }
}

pub fn default_goals_by_name(case: &str) -> Result<Vec<DoseGoal>> {
    Ok(default_goals(case.parse()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub goals: Vec<DoseGoal>,
    pub smoothness_weight: f64,
    /// Unordered neighbor pairs `(i, j)` with `i < j`.
    pub neighbor_pairs: Vec<(usize, usize)>,
}

impl ObjectiveSpec {
    pub const DEFAULT_SMOOTHNESS: f64 = 0.01;

    pub fn new(goals: Vec<DoseGoal>, beams: &BeamConfig) -> Self {
        ObjectiveSpec {
            goals,
            smoothness_weight: Self::DEFAULT_SMOOTHNESS,
            neighbor_pairs: beams.neighbor_pairs(),
        }
    }

    pub fn validate(&self, phantom: &Phantom, n_bixels: usize) -> Result<()> {
        for g in &self.goals {
            g.validate()?;
            match phantom.structure(&g.structure) {
                None => {
                    return Err(FmoError::config(format!(
                        "goal references structure `{}` which case `{}` does not have",
                        g.structure, phantom.case_name
                    )))
                }
                Some(m) if m.is_empty() => {
                    return Err(FmoError::config(format!("goal structure `{}` is empty", g.structure)))
                }
                Some(_) => {}
            }
        }
        if !(self.smoothness_weight >= 0.0 && self.smoothness_weight.is_finite()) {
            return Err(FmoError::config("smoothness_weight must be >= 0"));
        }
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &self.neighbor_pairs {
            if i >= n_bixels || j >= n_bixels || i == j {
                return Err(FmoError::config(format!("invalid neighbor pair ({i}, {j})")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(FmoError::config(format!("neighbor pair ({i}, {j}) listed twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoalCost {
    pub goal: DoseGoal,
    /// Unweighted penalty sum.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub total_cost: f64,
    pub per_goal_costs: Vec<GoalCost>,
    /// Unweighted smoothness penalty.
    pub smoothness_cost: f64,
    pub smoothness_weight: f64,
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<40} {:>8} {:>16}", "goal", "weight", "cost")?;
        for gc in &self.per_goal_costs {
            writeln!(
                f,
                "{:<40} {:>8.3} {:>16.6e}",
                gc.goal.to_string(),
                gc.goal.weight,
                gc.cost
            )?;
        }
        writeln!(
            f,
            "{:<40} {:>8.3} {:>16.6e}",
            "smoothness", self.smoothness_weight, self.smoothness_cost
        )?;
        write!(f, "{:<40} {:>8} {:>16.6e}", "total", "", self.total_cost)
    }
}

struct CompiledGoal {
    goal: DoseGoal,
    /// Local row indices into the restricted matrix.
    rows: Vec<usize>,
}

/// The objective compiled against one matrix and phantom.
pub struct FluenceObjective {
    matrix: DoseInfluenceMatrix,
    /// Global voxel index of each local row.
    voxels: Vec<usize>,
    goals: Vec<CompiledGoal>,
    smoothness_weight: f64,
    pairs: Vec<(usize, usize)>,
    n_voxels: usize,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl FluenceObjective {
    pub fn new(l: &DoseInfluenceMatrix, spec: &ObjectiveSpec, phantom: &Phantom) -> Result<Self> {
        check_len("phantom voxels", l.n_voxels(), phantom.grid.voxel_count())?;
        spec.validate(phantom, l.n_bixels())?;
        let mut voxels: Vec<usize> = spec
            .goals
            .iter()
            .flat_map(|g| phantom.structure(&g.structure).unwrap().voxels().iter().copied())
            .collect();
        voxels.sort_unstable();
        voxels.dedup();
        let goals = spec
            .goals
            .iter()
            .map(|g| {
                let mask = phantom.structure(&g.structure).unwrap();
                let rows = mask
                    .voxels()
                    .iter()
                    .map(|v| voxels.binary_search(v).unwrap())
                    .collect();
                CompiledGoal { goal: g.clone(), rows }
            })
            .collect();
        Ok(FluenceObjective {
            matrix: l.select_rows(&voxels),
            voxels,
            goals,
            smoothness_weight: spec.smoothness_weight,
            pairs: spec.neighbor_pairs.clone(),
            n_voxels: l.n_voxels(),
        })
    }

    pub fn n_bixels(&self) -> usize {
        self.matrix.n_bixels()
    }

    /// Number of voxels the goals look at.
    pub fn n_goal_voxels(&self) -> usize {
        self.voxels.len()
    }

    pub fn goal_nnz(&self) -> usize {
        self.matrix.nnz()
    }

    fn local_dose(&self, b: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.matrix.n_voxels()];
        for (r, out) in d.iter_mut().enumerate() {
            let (cols, vals) = self.matrix.row(r);
            *out = cols
                .iter()
                .zip(vals)
                .map(|(&c, &v)| v * b[c as usize].abs())
                .sum();
        }
        d
    }

    fn smoothness(&self, b: &[f64]) -> f64 {
        self.pairs
            .iter()
            .map(|&(i, j)| (b[i].abs() - b[j].abs()).powi(2))
            .sum()
    }

    /// Full cost breakdown at `b`.
    pub fn evaluate(&self, b: &[f64]) -> Result<EvalResult> {
        check_len("fluence vector", self.n_bixels(), b.len())?;
        let d = self.local_dose(b);
        let per_goal_costs: Vec<GoalCost> = self
            .goals
            .iter()
            .map(|g| GoalCost {
                goal: g.goal.clone(),
                cost: g.rows.iter().map(|&r| g.goal.penalty(d[r]).0).sum(),
            })
            .collect();
        let smoothness_cost = self.smoothness(b);
        let total_cost = per_goal_costs
            .iter()
            .map(|gc| gc.goal.weight * gc.cost)
            .sum::<f64>()
            + self.smoothness_weight * smoothness_cost;
        Ok(EvalResult {
            total_cost,
            per_goal_costs,
            smoothness_cost,
            smoothness_weight: self.smoothness_weight,
        })
    }

    /// Cost and gradient; `grad` is overwritten.
    pub fn value_and_gradient(&self, b: &[f64], grad: &mut [f64]) -> f64 {
        self.value_and_gradient_with(b, grad, sign)
    }

    fn value_and_gradient_with(&self, b: &[f64], grad: &mut [f64], sign: fn(f64) -> f64) -> f64 {
        let d = self.local_dose(b);
        let mut slope = vec![0.0; d.len()];
        let mut cost = 0.0;
        for g in &self.goals {
            let w = g.goal.weight;
            let mut c = 0.0;
            for &r in &g.rows {
                let (p, dp, _) = g.goal.penalty(d[r]);
                c += p;
                slope[r] += w * dp;
            }
            cost += w * c;
        }
        grad.iter_mut().for_each(|x| *x = 0.0);
        for (r, &s) in slope.iter().enumerate() {
            if s != 0.0 {
                self.matrix.scatter_row(r, s, grad);
            }
        }
        for (gi, &bi) in grad.iter_mut().zip(b) {
            *gi *= sign(bi);
        }
        let lambda = self.smoothness_weight;
        if lambda != 0.0 {
            let mut smooth = 0.0;
            for &(i, j) in &self.pairs {
                let diff = b[i].abs() - b[j].abs();
                smooth += diff * diff;
                grad[i] += lambda * 2.0 * diff * sign(b[i]);
                grad[j] -= lambda * 2.0 * diff * sign(b[j]);
            }
            cost += lambda * smooth;
        }
        cost
    }

    /// Hessian at `b` as an operator; the voxel curvature and signs are
    /// computed once and reused for every product.
    pub fn hessian_at(&self, b: &[f64]) -> FluenceHessian<'_> {
        self.hessian_with(b, sign)
    }

    fn hessian_with(&self, b: &[f64], sign: fn(f64) -> f64) -> FluenceHessian<'_> {
        let d = self.local_dose(b);
        let mut curvature = vec![0.0; d.len()];
        for g in &self.goals {
            for &r in &g.rows {
                curvature[r] += g.goal.weight * g.goal.penalty(d[r]).2;
            }
        }
        let active = curvature
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0.0)
            .map(|(r, &c)| (r, c))
            .collect();
        FluenceHessian {
            objective: self,
            signs: b.iter().map(|&x| sign(x)).collect(),
            active,
        }
    }

    /// Goal part of the cost as a function of a full voxel dose vector.
    pub fn dose_cost(&self, dose: &[f64]) -> Result<f64> {
        check_len("dose vector", self.n_voxels, dose.len())?;
        Ok(self
            .goals
            .iter()
            .map(|g| {
                g.goal.weight
                    * g.rows
                        .iter()
                        .map(|&r| g.goal.penalty(dose[self.voxels[r]]).0)
                        .sum::<f64>()
            })
            .sum())
    }
}

pub struct FluenceHessian<'a> {
    objective: &'a FluenceObjective,
    signs: Vec<f64>,
    /// (local row, second derivative) for rows with a violated goal.
    active: Vec<(usize, f64)>,
}

impl LinearOperator for FluenceHessian<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let obj = self.objective;
        let sv: Vec<f64> = v.iter().zip(&self.signs).map(|(a, s)| a * s).collect();
        out.iter_mut().for_each(|x| *x = 0.0);
        for &(r, c) in &self.active {
            let t = c * obj.matrix.row_dot(r, &sv);
            if t != 0.0 {
                obj.matrix.scatter_row(r, t, out);
            }
        }
        for (o, s) in out.iter_mut().zip(&self.signs) {
            *o *= s;
        }
        let lambda = obj.smoothness_weight;
        if lambda != 0.0 {
            for &(i, j) in &obj.pairs {
                let t = lambda * 2.0 * (sv[i] - sv[j]);
                out[i] += self.signs[i] * t;
                out[j] -= self.signs[j] * t;
            }
        }
    }
}

impl Objective for FluenceObjective {
    fn dim(&self) -> usize {
        self.n_bixels()
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        FluenceObjective::value_and_gradient(self, x, grad)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = self.local_dose(x);
        let goals: f64 = self
            .goals
            .iter()
            .map(|g| g.goal.weight * g.rows.iter().map(|&r| g.goal.penalty(d[r]).0).sum::<f64>())
            .sum();
        goals + self.smoothness_weight * self.smoothness(x)
    }

    fn hessian(&self, x: &[f64]) -> Option<Box<dyn LinearOperator + '_>> {
        Some(Box::new(self.hessian_at(x)))
    }

    fn magnitude_form(&self) -> Option<Box<dyn Objective + '_>> {
        Some(Box::new(MagnitudeForm(self)))
    }
}

#[inline]
fn unit_sign(_: f64) -> f64 {
    1.0
}

/// The cost as a function of `x = |b|`, smooth on the nonnegative orthant.
/// Its derivatives at `x_i = 0` are the one-sided ones from above.
struct MagnitudeForm<'a>(&'a FluenceObjective);

impl Objective for MagnitudeForm<'_> {
    fn dim(&self) -> usize {
        self.0.n_bixels()
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.0.value_and_gradient_with(x, grad, unit_sign)
    }

    fn value(&self, x: &[f64]) -> f64 {
        Objective::value(self.0, x)
    }

    fn hessian(&self, x: &[f64]) -> Option<Box<dyn LinearOperator + '_>> {
        Some(Box::new(self.0.hessian_with(x, unit_sign)))
    }
}

/// Cost breakdown at `b`.
pub fn eval_cost(
    b: &[f64],
    l: &DoseInfluenceMatrix,
    spec: &ObjectiveSpec,
    phantom: &Phantom,
) -> Result<EvalResult> {
    FluenceObjective::new(l, spec, phantom)?.evaluate(b)
}

/// Gradient of the cost with respect to `b`; `sign(0)` is taken as 0.
pub fn eval_grad(
    b: &[f64],
    l: &DoseInfluenceMatrix,
    spec: &ObjectiveSpec,
    phantom: &Phantom,
) -> Result<Vec<f64>> {
    let obj = FluenceObjective::new(l, spec, phantom)?;
    check_len("fluence vector", obj.n_bixels(), b.len())?;
    let mut g = vec![0.0; b.len()];
    obj.value_and_gradient(b, &mut g);
    Ok(g)
}

/// Hessian-vector product at `b`, ignoring the curvature of `|.|` at zero.
pub fn hessian_vec_product(
    b: &[f64],
    v: &[f64],
    l: &DoseInfluenceMatrix,
    spec: &ObjectiveSpec,
    phantom: &Phantom,
) -> Result<Vec<f64>> {
    let obj = FluenceObjective::new(l, spec, phantom)?;
    check_len("fluence vector", obj.n_bixels(), b.len())?;
    check_len("direction vector", obj.n_bixels(), v.len())?;
    let mut out = vec![0.0; b.len()];
    obj.hessian_at(b).apply(v, &mut out);
    Ok(out)
}

/// Uniform fluence whose mean dose over the union of targets equals the
/// largest minimum-dose goal.
pub fn standard_initialization(
    l: &DoseInfluenceMatrix,
    goals: &[DoseGoal],
    phantom: &Phantom,
) -> Result<Vec<f64>> {
    let prescription = goals
        .iter()
        .filter(|g| g.kind == GoalKind::MinDose)
        .map(|g| g.dose)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(prescription > 0.0) {
        return Err(FmoError::config("initialization needs a positive minimum-dose goal"));
    }
    let targets = phantom.target_voxels();
    if targets.is_empty() {
        return Err(FmoError::config("initialization needs at least one PTV"));
    }
    let ones = vec![1.0; l.n_bixels()];
    let mean = targets.iter().map(|&v| l.row_dot(v, &ones)).sum::<f64>() / targets.len() as f64;
    if !(mean > 0.0) {
        return Err(FmoError::config("targets receive no dose from any bixel"));
    }
    Ok(vec![prescription / mean; l.n_bixels()])
}
