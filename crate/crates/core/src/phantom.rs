//! Voxelized synthetic patient cases.
//!
//! A case is described by a [`CaseSpec`]: a voxel grid plus a list of named
//! structures, each the union of simple geometric primitives (optionally with
//! other structures carved out of it). [`build_case`] rasterizes a spec into a
//! [`Phantom`]. Membership is decided at voxel centers; there is no partial
//! volume.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FmoError, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// Voxel size in mm.
    pub spacing: Vec3,
    /// Center of voxel (0, 0, 0) in mm.
    pub origin: Vec3,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3) -> Result<Self> {
        let grid = VoxelGrid {
            dims,
            spacing,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid whose voxel centers are symmetric about the coordinate origin.
    pub fn centered(dims: [usize; 3], spacing: Vec3) -> Result<Self> {
        let origin = [0, 1, 2].map(|a| -((dims[a] as f64 - 1.0) / 2.0) * spacing[a]);
        Self::new(dims, spacing, origin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n == 0) {
            return Err(FmoError::config(format!(
                "grid dims must all be >= 1, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(FmoError::config(format!(
                "grid spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(FmoError::config("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn center(&self, index: usize) -> Vec3 {
        let c = self.coords(index);
        [0, 1, 2].map(|a| self.origin[a] + c[a] as f64 * self.spacing[a])
    }

    /// Index of the voxel whose cell contains `p`, if any.
    #[inline]
    pub fn locate(&self, p: Vec3) -> Option<usize> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let t = ((p[a] - self.origin[a]) / self.spacing[a]).round();
            if !(t >= 0.0 && t < self.dims[a] as f64) {
                return None;
            }
            c[a] = t as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }

    /// Outer faces of the grid as (min corner, max corner).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let lo = [0, 1, 2].map(|a| self.origin[a] - 0.5 * self.spacing[a]);
        let hi = [0, 1, 2].map(|a| lo[a] + self.dims[a] as f64 * self.spacing[a]);
        (lo, hi)
    }

    /// Inclusive range of voxel indices along `axis` whose centers fall in `[lo, hi]`.
    fn index_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let n = self.dims[axis] as f64;
        let a = ((lo - self.origin[axis]) / self.spacing[axis]).ceil().max(0.0);
        let b = ((hi - self.origin[axis]) / self.spacing[axis])
            .floor()
            .min(n - 1.0);
        if a > b || !a.is_finite() || !b.is_finite() {
            None
        } else {
            Some((a as usize, b as usize))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Solid shapes structures are built from. All lengths in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Ellipsoid {
        center: Vec3,
        semi_axes: Vec3,
    },
    Cylinder {
        center: Vec3,
        radius: f64,
        length: f64,
        axis: Axis,
    },
    /// Cylindrical annulus. With `half_toward` set, only the half on the side
    /// of that direction (perpendicular to the axis) is kept, giving a C shape.
    Shell {
        center: Vec3,
        inner_radius: f64,
        outer_radius: f64,
        length: f64,
        axis: Axis,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        half_toward: Option<Vec3>,
    },
}

impl Primitive {
    pub fn kind(&self) -> &'static str {
        match self {
            Primitive::Sphere { .. } => "sphere",
            Primitive::Ellipsoid { .. } => "ellipsoid",
            Primitive::Cylinder { .. } => "cylinder",
            Primitive::Shell { .. } => "shell",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FmoError::config(format!(
                    "{} {what} must be positive, got {v}",
                    self.kind()
                )))
            }
        };
        match self {
            Primitive::Sphere { radius, .. } => positive("radius", *radius),
            Primitive::Ellipsoid { semi_axes, .. } => {
                semi_axes.iter().try_for_each(|&s| positive("semi-axis", s))
            }
            Primitive::Cylinder { radius, length, .. } => {
                positive("radius", *radius)?;
                positive("length", *length)
            }
            Primitive::Shell {
                inner_radius,
                outer_radius,
                length,
                ..
            } => {
                positive("outer radius", *outer_radius)?;
                positive("length", *length)?;
                if !(*inner_radius >= 0.0 && inner_radius < outer_radius) {
                    return Err(FmoError::config(format!(
                        "shell inner radius {inner_radius} must lie in [0, outer radius)"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        match self {
            Primitive::Sphere { center, radius } => dist2(p, *center) < radius * radius,
            Primitive::Ellipsoid { center, semi_axes } => {
                let s: f64 = (0..3)
                    .map(|a| ((p[a] - center[a]) / semi_axes[a]).powi(2))
                    .sum();
                s < 1.0
            }
            Primitive::Cylinder {
                center,
                radius,
                length,
                axis,
            } => {
                let (axial, radial2) = split_axis(p, *center, *axis);
                axial.abs() < 0.5 * length && radial2 < radius * radius
            }
            Primitive::Shell {
                center,
                inner_radius,
                outer_radius,
                length,
                axis,
                half_toward,
            } => {
                let (axial, radial2) = split_axis(p, *center, *axis);
                if !(axial.abs() < 0.5 * length
                    && radial2 < outer_radius * outer_radius
                    && radial2 >= inner_radius * inner_radius)
                {
                    return false;
                }
                match half_toward {
                    None => true,
                    Some(dir) => {
                        let ax = axis.index();
                        (0..3)
                            .filter(|&a| a != ax)
                            .map(|a| (p[a] - center[a]) * dir[a])
                            .sum::<f64>()
                            >= 0.0
                    }
                }
            }
        }
    }

    /// Axis-aligned box enclosing the primitive.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let (center, half) = match self {
            Primitive::Sphere { center, radius } => (*center, [*radius; 3]),
            Primitive::Ellipsoid { center, semi_axes } => (*center, *semi_axes),
            Primitive::Cylinder {
                center,
                radius,
                length,
                axis,
            } => (*center, axis_box(*radius, *length, *axis)),
            Primitive::Shell {
                center,
                outer_radius,
                length,
                axis,
                ..
            } => (*center, axis_box(*outer_radius, *length, *axis)),
        };
        (
            [0, 1, 2].map(|a| center[a] - half[a]),
            [0, 1, 2].map(|a| center[a] + half[a]),
        )
    }

    /// Uniformly scales the primitive about the coordinate origin.
    pub fn scaled(&self, f: f64) -> Primitive {
        let sc = |c: &Vec3| c.map(|x| x * f);
        match self {
            Primitive::Sphere { center, radius } => Primitive::Sphere {
                center: sc(center),
                radius: radius * f,
            },
            Primitive::Ellipsoid { center, semi_axes } => Primitive::Ellipsoid {
                center: sc(center),
                semi_axes: sc(semi_axes),
            },
            Primitive::Cylinder {
                center,
                radius,
                length,
                axis,
            } => Primitive::Cylinder {
                center: sc(center),
                radius: radius * f,
                length: length * f,
                axis: *axis,
            },
            Primitive::Shell {
                center,
                inner_radius,
                outer_radius,
                length,
                axis,
                half_toward,
            } => Primitive::Shell {
                center: sc(center),
                inner_radius: inner_radius * f,
                outer_radius: outer_radius * f,
                length: length * f,
                axis: *axis,
                half_toward: *half_toward,
            },
        }
    }
}

fn dist2(a: Vec3, b: Vec3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn split_axis(p: Vec3, center: Vec3, axis: Axis) -> (f64, f64) {
    let ax = axis.index();
    let axial = p[ax] - center[ax];
    let radial2 = (0..3)
        .filter(|&a| a != ax)
        .map(|a| (p[a] - center[a]).powi(2))
        .sum();
    (axial, radial2)
}

fn axis_box(radius: f64, length: f64, axis: Axis) -> Vec3 {
    let mut h = [radius; 3];
    h[axis.index()] = 0.5 * length;
    h
}

/// A named set of voxel indices, kept sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureMask {
    pub name: String,
    voxels: Vec<usize>,
}

impl StructureMask {
    pub fn new(name: impl Into<String>, mut voxels: Vec<usize>) -> Self {
        voxels.sort_unstable();
        voxels.dedup();
        StructureMask {
            name: name.into(),
            voxels,
        }
    }

    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn contains(&self, voxel: usize) -> bool {
        self.voxels.binary_search(&voxel).is_ok()
    }

    pub fn union(&self, other: &StructureMask) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.voxels, &other.voxels);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        out
    }

    fn subtract(&mut self, other: &StructureMask) {
        self.voxels.retain(|v| !other.contains(*v));
    }
}

/// Voxels whose centers lie strictly inside `primitive`. The mask is named
/// after the primitive kind.
pub fn rasterize_primitive(primitive: &Primitive, grid: &VoxelGrid) -> StructureMask {
    StructureMask::new(primitive.kind(), rasterize(primitive, grid))
}

fn rasterize(primitive: &Primitive, grid: &VoxelGrid) -> Vec<usize> {
    let (lo, hi) = primitive.bounding_box();
    let ranges: Option<Vec<(usize, usize)>> =
        (0..3).map(|a| grid.index_range(a, lo[a], hi[a])).collect();
    let Some(r) = ranges else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for k in r[2].0..=r[2].1 {
        for j in r[1].0..=r[1].1 {
            for i in r[0].0..=r[0].1 {
                let idx = grid.index(i, j, k);
                if primitive.contains(grid.center(idx)) {
                    out.push(idx);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseName {
    MultiPtv,
    HeadNeck,
    Prostate,
    IcmProstate,
}

impl CaseName {
    pub const ALL: [CaseName; 4] = [
        CaseName::MultiPtv,
        CaseName::HeadNeck,
        CaseName::Prostate,
        CaseName::IcmProstate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseName::MultiPtv => "multi_ptv",
            CaseName::HeadNeck => "head_neck",
            CaseName::Prostate => "prostate",
            CaseName::IcmProstate => "icm_prostate",
        }
    }
}

impl fmt::Display for CaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseName {
    type Err = FmoError;

    fn from_str(s: &str) -> Result<Self> {
        CaseName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                FmoError::config(format!(
                    "unknown case `{s}` (expected one of multi_ptv, head_neck, prostate, icm_prostate)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub name: String,
    pub primitives: Vec<Primitive>,
    /// Names of structures whose voxels are removed from this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subtract: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub case_name: CaseName,
    pub grid: GridSpec,
    /// Outline of the patient; the body mask is this plus every structure.
    pub body: Primitive,
    pub structures: Vec<StructureSpec>,
}

impl CaseSpec {
    pub fn validate(&self) -> Result<()> {
        VoxelGrid::centered(self.grid.dims, self.grid.spacing)?;
        self.body.validate()?;
        let mut names = BTreeSet::new();
        for s in &self.structures {
            if s.name.is_empty() {
                return Err(FmoError::config("structure name must not be empty"));
            }
            if !names.insert(s.name.as_str()) {
                return Err(FmoError::config(format!(
                    "duplicate structure name `{}`",
                    s.name
                )));
            }
            if s.primitives.is_empty() {
                return Err(FmoError::config(format!(
                    "structure `{}` has no primitives",
                    s.name
                )));
            }
            s.primitives.iter().try_for_each(Primitive::validate)?;
        }
        for s in &self.structures {
            if let Some(missing) = s.subtract.iter().find(|n| !names.contains(n.as_str())) {
                return Err(FmoError::config(format!(
                    "structure `{}` subtracts unknown structure `{missing}`",
                    s.name
                )));
            }
        }
        Ok(())
    }

    /// Shipped geometry for the named case.
    pub fn builtin(name: CaseName) -> CaseSpec {
        match name {
            CaseName::MultiPtv => multi_ptv_spec(),
            CaseName::HeadNeck => head_neck_spec(),
            CaseName::Prostate => prostate_spec([48, 48, 48], 1.0),
            CaseName::IcmProstate => {
                let mut spec = prostate_spec([64, 64, 64], 1.5);
                spec.case_name = CaseName::IcmProstate;
                spec
            }
        }
    }
}

const DESK_GRID: GridSpec = GridSpec {
    dims: [48, 48, 48],
    spacing: [3.0, 3.0, 3.0],
};

fn structure(name: &str, primitives: Vec<Primitive>, subtract: &[&str]) -> StructureSpec {
    StructureSpec {
        name: name.to_string(),
        primitives,
        subtract: subtract.iter().map(|s| s.to_string()).collect(),
    }
}

fn z_cylinder(center: Vec3, diameter: f64, length: f64) -> Primitive {
    Primitive::Cylinder {
        center,
        radius: diameter / 2.0,
        length,
        axis: Axis::Z,
    }
}

fn multi_ptv_spec() -> CaseSpec {
    CaseSpec {
        case_name: CaseName::MultiPtv,
        grid: DESK_GRID,
        body: Primitive::Ellipsoid {
            center: [0.0; 3],
            semi_axes: [65.0, 55.0, 70.0],
        },
        structures: vec![
            structure("PTV_center", vec![z_cylinder([0.0; 3], 40.0, 40.0)], &[]),
            structure(
                "PTV_superior",
                vec![z_cylinder([0.0, 0.0, 40.0], 20.0, 20.0)],
                &[],
            ),
            structure(
                "PTV_inferior",
                vec![z_cylinder([0.0, 0.0, -40.0], 20.0, 20.0)],
                &[],
            ),
        ],
    }
}

fn head_neck_spec() -> CaseSpec {
    CaseSpec {
        case_name: CaseName::HeadNeck,
        grid: DESK_GRID,
        body: Primitive::Ellipsoid {
            center: [0.0; 3],
            semi_axes: [60.0, 50.0, 70.0],
        },
        structures: vec![
            structure(
                "PTV",
                vec![Primitive::Shell {
                    center: [0.0; 3],
                    inner_radius: 15.0,
                    outer_radius: 35.0,
                    length: 60.0,
                    axis: Axis::Z,
                    half_toward: Some([0.0, 1.0, 0.0]),
                }],
                &[],
            ),
            structure("cord", vec![z_cylinder([0.0; 3], 20.0, 120.0)], &[]),
        ],
    }
}

fn prostate_spec(dims: [usize; 3], scale: f64) -> CaseSpec {
    let structures = vec![
        structure(
            "PTV",
            vec![Primitive::Ellipsoid {
                center: [0.0, -10.0, 0.0],
                semi_axes: [20.0, 15.0, 15.0],
            }],
            &["rectum", "bladder"],
        ),
        structure(
            "rectum",
            vec![Primitive::Ellipsoid {
                center: [0.0, -32.5, 0.0],
                semi_axes: [7.5, 7.5, 15.0],
            }],
            &[],
        ),
        structure(
            "bladder",
            vec![Primitive::Sphere {
                center: [0.0, 30.0, 0.0],
                radius: 30.0,
            }],
            &[],
        ),
    ];
    let body = Primitive::Ellipsoid {
        center: [0.0; 3],
        semi_axes: [68.0, 62.0, 65.0],
    };
    CaseSpec {
        case_name: CaseName::Prostate,
        grid: GridSpec {
            dims,
            spacing: [3.0; 3],
        },
        body: body.scaled(scale),
        structures: structures
            .into_iter()
            .map(|s| StructureSpec {
                primitives: s.primitives.iter().map(|p| p.scaled(scale)).collect(),
                ..s
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub case_name: String,
    pub grid: VoxelGrid,
    pub body: StructureMask,
    pub structures: Vec<StructureMask>,
}

impl Phantom {
    pub fn structure(&self, name: &str) -> Option<&StructureMask> {
        self.structures.iter().find(|s| s.name == name)
    }

    /// Structures treated as targets (name starts with `PTV`).
    pub fn targets(&self) -> impl Iterator<Item = &StructureMask> {
        self.structures.iter().filter(|s| s.name.starts_with("PTV"))
    }

    /// Sorted union of every target's voxels.
    pub fn target_voxels(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .targets()
            .flat_map(|s| s.voxels().iter().copied())
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

/// Rasterizes every structure of `spec` and assembles the phantom.
pub fn build_case(spec: &CaseSpec) -> Result<Phantom> {
    spec.validate()?;
    let grid = VoxelGrid::centered(spec.grid.dims, spec.grid.spacing)?;

    let raw: Vec<StructureMask> = spec
        .structures
        .iter()
        .map(|s| {
            let voxels = s
                .primitives
                .iter()
                .flat_map(|p| rasterize(p, &grid))
                .collect();
            StructureMask::new(s.name.clone(), voxels)
        })
        .collect();

    let mut structures = raw.clone();
    for (mask, s) in structures.iter_mut().zip(&spec.structures) {
        for other in &s.subtract {
            let carve = raw
                .iter()
                .find(|m| &m.name == other)
                .expect("validated above");
            mask.subtract(carve);
        }
    }

    let mut body = StructureMask::new("body", rasterize(&spec.body, &grid));
    for s in &structures {
        body = StructureMask::new("body", body.union(s));
    }

    Ok(Phantom {
        case_name: spec.case_name.to_string(),
        grid,
        body,
        structures,
    })
}

pub fn build_builtin(name: CaseName) -> Result<Phantom> {
    build_case(&CaseSpec::builtin(name))
}
