//! Sequential plan execution over a named ROI environment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{roi_path, CaseError, CaseManifest};
use crate::geometry::{self, GeometryError};
use crate::nrrd::{self, NrrdError};
use crate::plan::{is_valid_roi_name, CallArgs, Plan, StructureCatalog, Tool, ToolCall};
use crate::volume::{BinaryMask, Grid};

/// Post-processing steps, applied in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostStep {
    FillHoles,
    Smooth,
}

pub const POSTPROCESS_ORDER: [PostStep; 2] = [PostStep::FillHoles, PostStep::Smooth];

/// Hole filling then smoothing.
pub fn postprocess(mask: &BinaryMask) -> BinaryMask {
    POSTPROCESS_ORDER.iter().fold(mask.clone(), |m, step| match step {
        PostStep::FillHoles => geometry::fill_holes(&m),
        PostStep::Smooth => geometry::smooth(&m),
    })
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("structure `{structure}` not available: {} does not exist", path.display())]
    Missing { structure: String, path: PathBuf },
    #[error("{}: grid {found} does not match case grid {expected}", path.display())]
    GridMismatch { path: PathBuf, expected: Grid, found: Grid },
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: NrrdError,
    },
    #[error("structure `{0}` is not supported by this provider")]
    Unsupported(String),
}

/// Source of OAR masks for one case. Must be deterministic per structure.
pub trait SegmentationProvider: Send + Sync {
    fn case_grid(&self) -> Grid;
    fn catalog(&self) -> StructureCatalog;
    fn segment(&self, structure: &str) -> Result<BinaryMask, ProviderError>;
}

/// Serves precomputed `<structure>.nrrd` files from a case directory.
#[derive(Debug, Clone)]
pub struct FileProvider {
    case_dir: PathBuf,
    manifest: CaseManifest,
}

impl FileProvider {
    pub fn open(case_dir: &Path) -> Result<Self, CaseError> {
        Ok(FileProvider {
            case_dir: case_dir.to_path_buf(),
            manifest: CaseManifest::load(case_dir)?,
        })
    }

    pub fn manifest(&self) -> &CaseManifest {
        &self.manifest
    }
}

/// Read `<structure>.nrrd` from `case_dir` and require it to sit on `grid`.
pub fn file_provider_segment(case_dir: &Path, grid: &Grid, structure: &str) -> Result<BinaryMask, ProviderError> {
    let path = roi_path(case_dir, structure);
    if !path.is_file() {
        return Err(ProviderError::Missing {
            structure: structure.to_string(),
            path,
        });
    }
    let mask = nrrd::read_mask(&path).map_err(|source| ProviderError::Read {
        path: path.clone(),
        source,
    })?;
    if mask.grid() != grid {
        return Err(ProviderError::GridMismatch {
            path,
            expected: *grid,
            found: *mask.grid(),
        });
    }
    Ok(mask)
}

impl SegmentationProvider for FileProvider {
    fn case_grid(&self) -> Grid {
        self.manifest.grid
    }

    /// Every `<name>.nrrd` in the case directory other than the initial
    /// ROIs and `*_gt` ground-truth files.
    fn catalog(&self) -> StructureCatalog {
        let mut names: Vec<String> = fs::read_dir(&self.case_dir)
            .into_iter()
            .flatten()
            .filter_map(Result::ok)
            .filter_map(|e| {
                let p = e.path();
                (p.extension()? == "nrrd").then(|| p.file_stem()?.to_str().map(str::to_string))?
            })
            .filter(|n| !n.ends_with("_gt") && !self.manifest.context.initial_rois.contains(n))
            .collect();
        names.sort();
        StructureCatalog::new(names).expect("file stems are unique and non-empty")
    }

    fn segment(&self, structure: &str) -> Result<BinaryMask, ProviderError> {
        file_provider_segment(&self.case_dir, &self.manifest.grid, structure)
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("ROI `{0}` is not a valid name")]
    BadName(String),
    #[error("ROI `{name}`: {source}")]
    Grid {
        name: String,
        #[source]
        source: crate::volume::VolumeError,
    },
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("initial ROI `{name}`: {source}")]
    Provider {
        name: String,
        #[source]
        source: ProviderError,
    },
}

/// Named masks on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiEnvironment {
    grid: Grid,
    bindings: BTreeMap<String, BinaryMask>,
}

impl RoiEnvironment {
    pub fn new(grid: Grid) -> Self {
        RoiEnvironment {
            grid,
            bindings: BTreeMap::new(),
        }
    }

    /// Case manifest plus its initial ROIs (e.g. `GTV.nrrd`).
    pub fn load_case(case_dir: &Path) -> Result<(CaseManifest, Self), EnvError> {
        let manifest = CaseManifest::load(case_dir)?;
        let mut env = RoiEnvironment::new(manifest.grid);
        for name in &manifest.context.initial_rois {
            let mask = file_provider_segment(case_dir, &manifest.grid, name).map_err(|source| EnvError::Provider {
                name: name.clone(),
                source,
            })?;
            env.bind(name, mask)?;
        }
        Ok((manifest, env))
    }

    pub fn bind(&mut self, name: &str, mask: BinaryMask) -> Result<(), EnvError> {
        if !is_valid_roi_name(name) {
            return Err(EnvError::BadName(name.to_string()));
        }
        self.grid.ensure_same(mask.grid()).map_err(|source| EnvError::Grid {
            name: name.to_string(),
            source,
        })?;
        self.bindings.insert(name.to_string(), mask);
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn get(&self, name: &str) -> Option<&BinaryMask> {
        self.bindings.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.bindings.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.bindings.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BinaryMask)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputCount {
    pub roi: String,
    pub voxel_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call_id: u32,
    pub tool: String,
    pub duration_ms: f64,
    pub outputs: Vec<OutputCount>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessRecord {
    pub roi: String,
    pub voxels_before: usize,
    pub voxels_after: usize,
    pub warnings: Vec<String>,
}

/// What ran, in plan order, and what post-processing did.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub calls: Vec<CallRecord>,
    pub postprocess: Vec<PostprocessRecord>,
}

impl ExecutionTrace {
    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.calls
            .iter()
            .flat_map(|c| c.warnings.iter())
            .chain(self.postprocess.iter().flat_map(|p| p.warnings.iter()))
            .map(String::as_str)
    }

    /// Same trace with all durations zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut t = self.clone();
        t.calls.iter_mut().for_each(|c| c.duration_ms = 0.0);
        t
    }
}

#[derive(Debug, Error)]
pub enum ExecutionError {
    #[error("call {call_id}: segmentation of `{structure}` failed: {source}")]
    Provider {
        call_id: u32,
        structure: String,
        #[source]
        source: ProviderError,
    },
    /// A problem the validator should have rejected before execution.
    #[error("call {call_id}: internal dataflow error: {message}")]
    Dataflow { call_id: u32, message: String },
    #[error("call {call_id}: {source}")]
    Geometry {
        call_id: u32,
        #[source]
        source: GeometryError,
    },
    #[error("post-processing target `{0}` is not bound after execution")]
    UnknownTarget(String),
}

impl ExecutionError {
    pub fn call_id(&self) -> Option<u32> {
        match self {
            ExecutionError::Provider { call_id, .. }
            | ExecutionError::Dataflow { call_id, .. }
            | ExecutionError::Geometry { call_id, .. } => Some(*call_id),
            ExecutionError::UnknownTarget(_) => None,
        }
    }
}

fn lookup<'e>(env: &'e RoiEnvironment, call_id: u32, name: &str) -> Result<&'e BinaryMask, ExecutionError> {
    env.get(name).ok_or_else(|| ExecutionError::Dataflow {
        call_id,
        message: format!("ROI `{name}` is not bound"),
    })
}

fn run_call(
    call: &ToolCall,
    env: &RoiEnvironment,
    provider: &dyn SegmentationProvider,
) -> Result<(Vec<(String, BinaryMask)>, Vec<String>), ExecutionError> {
    let id = call.id;
    let geo = |source| ExecutionError::Geometry { call_id: id, source };
    let single = |m: BinaryMask| vec![(call.outputs[0].clone(), m)];
    let mut warnings = Vec::new();
    if call.tool() != Tool::Segment && call.outputs.len() != 1 {
        return Err(ExecutionError::Dataflow {
            call_id: id,
            message: format!("{} must bind exactly one output", call.tool()),
        });
    }
    let outputs = match &call.args {
        CallArgs::Segment { structures } => {
            if structures.len() != call.outputs.len() {
                return Err(ExecutionError::Dataflow {
                    call_id: id,
                    message: "segment outputs do not match structures".into(),
                });
            }
            let mut outs = Vec::with_capacity(structures.len());
            for (structure, out) in structures.iter().zip(&call.outputs) {
                let mask = provider.segment(structure).map_err(|source| ExecutionError::Provider {
                    call_id: id,
                    structure: structure.clone(),
                    source,
                })?;
                if mask.grid() != env.grid() {
                    return Err(ExecutionError::Provider {
                        call_id: id,
                        structure: structure.clone(),
                        source: ProviderError::GridMismatch {
                            path: PathBuf::from(structure),
                            expected: *env.grid(),
                            found: *mask.grid(),
                        },
                    });
                }
                outs.push((out.clone(), mask));
            }
            outs
        }
        CallArgs::Dilate { input, margin } => {
            let margin = margin.to_vector().map_err(|e| ExecutionError::Dataflow {
                call_id: id,
                message: e.to_string(),
            })?;
            let out = geometry::dilate(lookup(env, id, input)?, &margin);
            if !margin.is_zero() && out.touches_boundary() {
                warnings.push(format!(
                    "dilated `{}` touches the grid boundary; the expansion may be truncated",
                    call.outputs[0]
                ));
            }
            single(out)
        }
        CallArgs::Union { inputs } => {
            let masks = inputs.iter().map(|n| lookup(env, id, n)).collect::<Result<Vec<_>, _>>()?;
            single(geometry::union(&masks).map_err(geo)?)
        }
        CallArgs::Subtract { input, subtract } => {
            let base = lookup(env, id, input)?;
            let subs = subtract.iter().map(|n| lookup(env, id, n)).collect::<Result<Vec<_>, _>>()?;
            let exclusion = geometry::union(&subs).map_err(geo)?;
            single(geometry::subtract(base, &exclusion).map_err(geo)?)
        }
        CallArgs::Intersect { inputs } => {
            let [a, b] = inputs.as_slice() else {
                return Err(ExecutionError::Dataflow {
                    call_id: id,
                    message: "intersect takes exactly two inputs".into(),
                });
            };
            single(geometry::intersect(lookup(env, id, a)?, lookup(env, id, b)?).map_err(geo)?)
        }
    };
    Ok((outputs, warnings))
}

/// Execute `plan` call by call, then post-process the named targets.
///
/// `postprocess_targets` of `None` selects the plan's terminal outputs; an
/// empty slice disables post-processing. A post-processed `subtract` output
/// that again overlaps its subtrahends is kept and reported as a warning.
pub fn execute_plan(
    plan: &Plan,
    mut env: RoiEnvironment,
    provider: &dyn SegmentationProvider,
    postprocess_targets: Option<&[String]>,
) -> Result<(RoiEnvironment, ExecutionTrace), ExecutionError> {
    let mut trace = ExecutionTrace::default();
    for call in &plan.calls {
        let started = Instant::now();
        let (outputs, warnings) = run_call(call, &env, provider)?;
        let mut counts = Vec::with_capacity(outputs.len());
        for (name, mask) in outputs {
            if env.contains(&name) {
                return Err(ExecutionError::Dataflow {
                    call_id: call.id,
                    message: format!("output `{name}` is already bound"),
                });
            }
            counts.push(OutputCount {
                roi: name.clone(),
                voxel_count: mask.voxel_count(),
            });
            env.bind(&name, mask).map_err(|e| ExecutionError::Dataflow {
                call_id: call.id,
                message: e.to_string(),
            })?;
        }
        trace.calls.push(CallRecord {
            call_id: call.id,
            tool: call.tool().as_str().to_string(),
            duration_ms: started.elapsed().as_secs_f64() * 1e3,
            outputs: counts,
            warnings,
        });
    }

    let targets = match postprocess_targets {
        Some(t) => t.to_vec(),
        None => plan.terminal_outputs(),
    };
    for name in &targets {
        let before = env.get(name).ok_or_else(|| ExecutionError::UnknownTarget(name.clone()))?;
        let after = postprocess(before);
        let mut warnings = Vec::new();
        let producer = plan.calls.iter().find(|c| c.outputs.contains(name));
        if let Some(CallArgs::Subtract { subtract, .. }) = producer.map(|c| &c.args) {
            let subs: Vec<&BinaryMask> = subtract.iter().filter_map(|s| env.get(s)).collect();
            if let Ok(exclusion) = geometry::union(&subs) {
                let overlap = geometry::intersect(&after, &exclusion).map(|m| m.voxel_count()).unwrap_or(0);
                if overlap > 0 {
                    warnings.push(format!(
                        "post-processing re-introduced {overlap} voxel(s) of `{name}` overlapping [{}]",
                        subtract.join(", ")
                    ));
                }
            }
        }
        trace.postprocess.push(PostprocessRecord {
            roi: name.clone(),
            voxels_before: before.voxel_count(),
            voxels_after: after.voxel_count(),
            warnings,
        });
        env.bindings.insert(name.clone(), after);
    }
    Ok((env, trace))
}
