//! Building a case: phantom, beams, dose-influence matrix and start point.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use fmo_core::dose::{compute_influence_matrix, BeamConfig, DoseInfluenceMatrix, PencilBeamParams};
use fmo_core::objective::{standard_initialization, FluenceObjective, ObjectiveSpec};
use fmo_core::phantom::{build_case, CaseSpec, Phantom};
use serde::{Deserialize, Serialize};

use crate::config::CaseEntry;
use crate::error::{BenchError, Result};

pub struct PreparedCase {
    pub entry: CaseEntry,
    pub phantom: Phantom,
    pub beams: BeamConfig,
    pub matrix: DoseInfluenceMatrix,
    pub objective: FluenceObjective,
    pub initial_fluence: Vec<f64>,
}

/// What a cached matrix was built from.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct CacheKey {
    spec: CaseSpec,
    beams: BeamConfig,
    params: PencilBeamParams,
}

impl PreparedCase {
    pub fn name(&self) -> &'static str {
        self.entry.name()
    }

    /// Problem size used to rank cases: body voxels.
    pub fn size(&self) -> usize {
        self.phantom.body.len()
    }
}

/// Builds `entry`, reading the matrix from `cache_dir` when a cached copy
/// was built from the same inputs and writing it there otherwise.
pub fn prepare_case(entry: &CaseEntry, cache_dir: Option<&Path>) -> Result<PreparedCase> {
    let phantom = build_case(&entry.spec)?;
    let beams = BeamConfig::default_for(&phantom)?;
    let params = PencilBeamParams::default();
    let key = CacheKey {
        spec: entry.spec.clone(),
        beams: beams.clone(),
        params,
    };
    let matrix = match cache_dir {
        Some(dir) => cached_matrix(dir, entry.name(), &key, &phantom)?,
        None => compute_influence_matrix(&phantom, &beams, &params)?,
    };
    let spec = objective_spec(entry, &beams);
    let objective = FluenceObjective::new(&matrix, &spec, &phantom)?;
    let initial_fluence = standard_initialization(&matrix, &spec.goals, &phantom)?;
    Ok(PreparedCase {
        entry: entry.clone(),
        phantom,
        beams,
        matrix,
        objective,
        initial_fluence,
    })
}

pub fn objective_spec(entry: &CaseEntry, beams: &BeamConfig) -> ObjectiveSpec {
    ObjectiveSpec {
        goals: entry.goals.clone(),
        smoothness_weight: entry.smoothness_weight,
        neighbor_pairs: beams.neighbor_pairs(),
    }
}

/// Builds only the phantom, beams and matrix of `entry`.
pub fn build_matrix(entry: &CaseEntry) -> Result<(Phantom, DoseInfluenceMatrix)> {
    let phantom = build_case(&entry.spec)?;
    let beams = BeamConfig::default_for(&phantom)?;
    let matrix = compute_influence_matrix(&phantom, &beams, &PencilBeamParams::default())?;
    Ok((phantom, matrix))
}

fn cached_matrix(dir: &Path, name: &str, key: &CacheKey, phantom: &Phantom) -> Result<DoseInfluenceMatrix> {
    let bin = dir.join(format!("{name}.bin"));
    let meta = dir.join(format!("{name}.json"));
    if let Some(m) = read_cached(&bin, &meta, key, phantom)? {
        return Ok(m);
    }
    let matrix = compute_influence_matrix(phantom, &key.beams, &key.params)?;
    std::fs::create_dir_all(dir).map_err(BenchError::io(dir))?;
    let file = File::create(&bin).map_err(BenchError::io(&bin))?;
    matrix.write_triplets(BufWriter::new(file))?;
    let text = serde_json::to_string_pretty(key).map_err(BenchError::json(&meta))?;
    std::fs::write(&meta, text).map_err(BenchError::io(&meta))?;
    Ok(matrix)
}

fn read_cached(bin: &Path, meta: &Path, key: &CacheKey, phantom: &Phantom) -> Result<Option<DoseInfluenceMatrix>> {
    let Ok(text) = std::fs::read_to_string(meta) else {
        return Ok(None);
    };
    match serde_json::from_str::<CacheKey>(&text) {
        Ok(stored) if stored == *key => {}
        _ => return Ok(None),
    }
    let Ok(file) = File::open(bin) else {
        return Ok(None);
    };
    let matrix = DoseInfluenceMatrix::read_triplets(BufReader::new(file))?;
    if matrix.n_voxels() != phantom.grid.voxel_count() || matrix.n_bixels() != key.beams.n_bixels() {
        return Ok(None);
    }
    Ok(Some(matrix))
}
