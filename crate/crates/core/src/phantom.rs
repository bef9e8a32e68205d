//! Synthetic esophageal-like cases with analytically known targets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{roi_path, CaseError, CaseManifest, PatientContext, GTV};
use crate::nrrd::{self, NrrdError};
use crate::plan::is_valid_roi_name;
use crate::volume::{BinaryMask, Grid, MarginSpec, MarginVector, VolumeError};

pub const CTV_GT: &str = "CTV_gt";
pub const PTV_GT: &str = "PTV_gt";

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("{name} does not keep {needed_mm} mm clearance from the grid boundary along axis {axis}")]
    Clearance { name: String, axis: usize, needed_mm: f64 },
    #[error("GTV overlaps {0}")]
    Overlap(String),
    #[error("{0} contains no voxel center")]
    EmptyShape(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nrrd(#[from] NrrdError),
}

/// Shapes in physical (mm) coordinates. Cylinders run along z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Ellipsoid { center: [f64; 3], semi_axes: [f64; 3] },
    Cylinder { center: [f64; 3], radius: f64, half_length: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Shape {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Shape::Ellipsoid { center, semi_axes } => {
                (0..3).map(|a| ((p[a] - center[a]) / semi_axes[a]).powi(2)).sum::<f64>() <= 1.0
            }
            Shape::Cylinder {
                center,
                radius,
                half_length,
            } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                dx * dx + dy * dy <= radius * radius && (p[2] - center[2]).abs() <= *half_length
            }
            Shape::Box { min, max } => (0..3).all(|a| min[a] <= p[a] && p[a] <= max[a]),
        }
    }

    /// Axis-aligned physical extent.
    pub fn extent(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Ellipsoid { center, semi_axes } => (
                std::array::from_fn(|a| center[a] - semi_axes[a]),
                std::array::from_fn(|a| center[a] + semi_axes[a]),
            ),
            Shape::Cylinder {
                center,
                radius,
                half_length,
            } => (
                [center[0] - radius, center[1] - radius, center[2] - half_length],
                [center[0] + radius, center[1] + radius, center[2] + half_length],
            ),
            Shape::Box { min, max } => (*min, *max),
        }
    }

    fn check(&self) -> Result<(), String> {
        let ok = match self {
            Shape::Ellipsoid { center, semi_axes } => {
                center.iter().all(|c| c.is_finite()) && semi_axes.iter().all(|s| s.is_finite() && *s > 0.0)
            }
            Shape::Cylinder {
                center,
                radius,
                half_length,
            } => center.iter().all(|c| c.is_finite()) && *radius > 0.0 && *half_length > 0.0,
            Shape::Box { min, max } => (0..3).all(|a| min[a].is_finite() && max[a].is_finite() && min[a] <= max[a]),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("degenerate shape {self:?}"))
        }
    }

    /// Voxel-center inclusion.
    pub fn voxelize(&self, grid: &Grid) -> BinaryMask {
        BinaryMask::from_fn(*grid, |p| self.contains(grid.voxel_center(p)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OarSpec {
    pub name: String,
    #[serde(flatten)]
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtvSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub half_length: f64,
}

impl GtvSpec {
    pub fn shape(&self) -> Shape {
        Shape::Cylinder {
            center: self.center,
            radius: self.radius,
            half_length: self.half_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub case_id: String,
    pub seed: u64,
    pub grid: Grid,
    pub gtv: GtvSpec,
    pub oars: Vec<OarSpec>,
    pub m_ctv: MarginSpec,
    pub m_ptv: MarginSpec,
}

/// Phantom masks before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomMasks {
    pub gtv: BinaryMask,
    pub oars: Vec<(String, BinaryMask)>,
}

impl PhantomSpec {
    /// Nominal geometry for seed 0; other seeds shift the GTV by up to 2 mm
    /// per axis and draw its radius from [6, 9] mm.
    pub fn default_esophageal(seed: u64) -> Self {
        let grid = Grid::new([96, 96, 64], [1.5, 1.5, 3.0], [0.0; 3]).expect("static grid");
        let mut gtv = GtvSpec {
            center: [72.0, 78.0, 96.0],
            radius: 8.0,
            half_length: 25.0,
        };
        if seed != 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for c in &mut gtv.center {
                *c += rng.gen_range(-2.0..=2.0);
            }
            gtv.radius = rng.gen_range(6.0..=9.0);
        }
        let oar = |name: &str, shape| OarSpec {
            name: name.into(),
            shape,
        };
        PhantomSpec {
            case_id: format!("phantom-{seed:03}"),
            seed,
            grid,
            gtv,
            oars: vec![
                oar(
                    "Lung_R",
                    Shape::Ellipsoid {
                        center: [40.0, 72.0, 96.0],
                        semi_axes: [20.0, 40.0, 70.0],
                    },
                ),
                oar(
                    "Lung_L",
                    Shape::Ellipsoid {
                        center: [104.0, 72.0, 96.0],
                        semi_axes: [20.0, 40.0, 70.0],
                    },
                ),
                oar(
                    "Heart",
                    Shape::Ellipsoid {
                        center: [80.0, 48.0, 70.0],
                        semi_axes: [18.0; 3],
                    },
                ),
                oar(
                    "VB_whole",
                    Shape::Cylinder {
                        center: [72.0, 100.0, 96.0],
                        radius: 10.0,
                        half_length: 80.0,
                    },
                ),
            ],
            m_ctv: MarginSpec {
                x_neg: 7.5,
                x_pos: 7.5,
                y_neg: 7.5,
                y_pos: 7.5,
                z_neg: 30.0,
                z_pos: 30.0,
            },
            m_ptv: MarginSpec::uniform(5.0),
        }
    }

    pub fn margins(&self) -> Result<(MarginVector, MarginVector), PhantomError> {
        Ok((self.m_ctv.to_vector()?, self.m_ptv.to_vector()?))
    }

    /// Check every invariant and voxelize. Shapes must lie inside the grid;
    /// the GTV must additionally keep the combined CTV+PTV margin from the
    /// boundary on every side and must not share a voxel with any OAR.
    pub fn build(&self) -> Result<PhantomMasks, PhantomError> {
        if self.case_id.trim().is_empty() {
            return Err(PhantomError::InvalidSpec("case_id is empty".into()));
        }
        let (m_ctv, m_ptv) = self.margins()?;
        let mut seen = vec![GTV.to_string()];
        for o in &self.oars {
            if !is_valid_roi_name(&o.name) || o.name.ends_with("_gt") {
                return Err(PhantomError::InvalidSpec(format!("bad OAR name `{}`", o.name)));
            }
            if seen.contains(&o.name) {
                return Err(PhantomError::InvalidSpec(format!("duplicate structure `{}`", o.name)));
            }
            seen.push(o.name.clone());
        }

        let grid = &self.grid;
        let lo = grid.origin();
        let hi: [f64; 3] = std::array::from_fn(|a| lo[a] + (grid.dims()[a] - 1) as f64 * grid.spacing()[a]);
        let fits = |name: &str, shape: &Shape, pad_neg: [f64; 3], pad_pos: [f64; 3]| {
            shape.check().map_err(PhantomError::InvalidSpec)?;
            let (min, max) = shape.extent();
            for a in 0..3 {
                if min[a] - pad_neg[a] < lo[a] || max[a] + pad_pos[a] > hi[a] {
                    return Err(PhantomError::Clearance {
                        name: name.to_string(),
                        axis: a,
                        needed_mm: pad_neg[a].max(pad_pos[a]),
                    });
                }
            }
            Ok(())
        };
        let pad = |positive: bool| -> [f64; 3] {
            std::array::from_fn(|a| m_ctv.along(a, positive) + m_ptv.along(a, positive))
        };
        let gtv_shape = self.gtv.shape();
        fits(GTV, &gtv_shape, pad(false), pad(true))?;
        for o in &self.oars {
            fits(&o.name, &o.shape, [0.0; 3], [0.0; 3])?;
        }

        let gtv = gtv_shape.voxelize(grid);
        if gtv.is_empty() {
            return Err(PhantomError::EmptyShape(GTV.into()));
        }
        let mut oars = Vec::with_capacity(self.oars.len());
        for o in &self.oars {
            let m = o.shape.voxelize(grid);
            if m.is_empty() {
                return Err(PhantomError::EmptyShape(o.name.clone()));
            }
            if gtv.voxels().any(|p| m.get(p)) {
                return Err(PhantomError::Overlap(o.name.clone()));
            }
            oars.push((o.name.clone(), m));
        }
        Ok(PhantomMasks { gtv, oars })
    }

    pub fn context(&self) -> PatientContext {
        let mut ctx = PatientContext::new(self.case_id.clone(), [GTV]);
        ctx.tumor_site = Some("mid-thoracic esophagus".into());
        ctx
    }
}

fn create_dir(dir: &Path) -> Result<(), PhantomError> {
    fs::create_dir_all(dir).map_err(|source| PhantomError::Io {
        path: dir.display().to_string(),
        source,
    })
}

/// Write `case.json`, `GTV.nrrd` and one NRRD per OAR into `out_dir`.
/// Nothing is written when the spec is invalid.
pub fn generate_phantom(spec: &PhantomSpec, out_dir: &Path) -> Result<CaseManifest, PhantomError> {
    let masks = spec.build()?;
    create_dir(out_dir)?;
    let mut voxel_counts = BTreeMap::new();
    nrrd::write_mask(&roi_path(out_dir, GTV), &masks.gtv)?;
    voxel_counts.insert(GTV.to_string(), masks.gtv.voxel_count());
    for (name, m) in &masks.oars {
        nrrd::write_mask(&roi_path(out_dir, name), m)?;
        voxel_counts.insert(name.clone(), m.voxel_count());
    }
    let manifest = CaseManifest {
        case_id: spec.case_id.clone(),
        grid: spec.grid,
        context: spec.context(),
        voxel_counts,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Write oracle `CTV_gt.nrrd` and `PTV_gt.nrrd` for `spec` into `out_dir`.
pub fn write_ground_truth(spec: &PhantomSpec, out_dir: &Path) -> Result<(BinaryMask, BinaryMask), PhantomError> {
    let masks = spec.build()?;
    let (m_ctv, m_ptv) = spec.margins()?;
    let oars: Vec<&BinaryMask> = masks.oars.iter().map(|(_, m)| m).collect();
    let (ctv, ptv) = oracle_targets(&masks.gtv, &oars, &m_ctv, &m_ptv)?;
    create_dir(out_dir)?;
    nrrd::write_mask(&roi_path(out_dir, CTV_GT), &ctv)?;
    nrrd::write_mask(&roi_path(out_dir, PTV_GT), &ptv)?;
    Ok((ctv, ptv))
}

/// Is displacement `d` (voxels) inside the margin ellipsoid? Each axis
/// contributes `(d * spacing / margin)^2` with the margin of the side `d`
/// points to; a zero margin admits only zero displacement.
fn admits(d: [i64; 3], spacing: [f64; 3], m: &MarginVector) -> bool {
    let mut acc = 0.0;
    for a in 0..3 {
        if d[a] != 0 {
            let side = if d[a] < 0 { m.along(a, false) } else { m.along(a, true) };
            if side <= 0.0 {
                return false;
            }
            let r = d[a] as f64 * spacing[a] / side;
            acc += r * r;
        }
    }
    acc <= 1.0
}

/// Scatter every foreground voxel over every admitted displacement.
fn brute_dilate(src: &BinaryMask, m: &MarginVector) -> BinaryMask {
    let grid = *src.grid();
    let dims = grid.dims().map(|d| d as i64);
    let s = grid.spacing();
    let reach: [i64; 3] = std::array::from_fn(|a| (m.along(a, false).max(m.along(a, true)) / s[a]).ceil() as i64);
    let mut out = vec![0u8; grid.len()];
    let src_bytes = src.to_bytes();
    for (l, _) in src_bytes.iter().enumerate().filter(|(_, b)| **b != 0) {
        let p = grid.voxel_index(l).map(|c| c as i64);
        for dz in -reach[2]..=reach[2] {
            for dy in -reach[1]..=reach[1] {
                for dx in -reach[0]..=reach[0] {
                    let q = [p[0] + dx, p[1] + dy, p[2] + dz];
                    if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a]) {
                        continue;
                    }
                    if admits([dx, dy, dz], s, m) {
                        out[(q[0] + dims[0] * (q[1] + dims[1] * q[2])) as usize] = 1;
                    }
                }
            }
        }
    }
    BinaryMask::from_bytes(grid, &out).expect("length matches grid")
}

/// `CTV = (GTV ⊕ m_ctv) \ ∪OARs`, `PTV = CTV ⊕ m_ptv`, by direct
/// enumeration.
pub fn oracle_targets(
    gtv: &BinaryMask,
    oars: &[&BinaryMask],
    m_ctv: &MarginVector,
    m_ptv: &MarginVector,
) -> Result<(BinaryMask, BinaryMask), PhantomError> {
    let grid = *gtv.grid();
    for o in oars {
        grid.ensure_same(o.grid())?;
    }
    let base = brute_dilate(gtv, m_ctv).to_bytes();
    let oar_bytes: Vec<Vec<u8>> = oars.iter().map(|o| o.to_bytes()).collect();
    let ctv_bytes: Vec<u8> = (0..grid.len())
        .map(|l| u8::from(base[l] != 0 && oar_bytes.iter().all(|o| o[l] == 0)))
        .collect();
    let ctv = BinaryMask::from_bytes(grid, &ctv_bytes)?;
    let ptv = brute_dilate(&ctv, m_ptv);
    Ok((ctv, ptv))
}
