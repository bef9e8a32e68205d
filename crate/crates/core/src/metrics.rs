//! Overlap and surface-distance metrics, and plan-level Tool Call F1.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::surface_voxels;
use crate::plan::{canonical_keys, CanonicalError, Plan};
use crate::volume::{BinaryMask, Grid, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{0} mask is empty; the metric is undefined")]
    EmptyMask(&'static str),
    #[error("{which} plan: {source}")]
    Canonical {
        which: &'static str,
        #[source]
        source: CanonicalError,
    },
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> Result<usize, MetricsError> {
    a.grid().ensure_same(b.grid())?;
    Ok(a.words().iter().zip(b.words()).map(|(x, y)| (x & y).count_ones() as usize).sum())
}

/// Dice coefficient; 1.0 when both masks are empty.
pub fn dsc(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    let both = overlap(a, b)?;
    let total = a.voxel_count() + b.voxel_count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}

/// Fraction of `gt` covered by `pred`.
pub fn sensitivity(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    let both = overlap(pred, gt)?;
    if gt.is_empty() {
        return Err(MetricsError::EmptyMask("ground-truth"));
    }
    Ok(both as f64 / gt.voxel_count() as f64)
}

/// Fraction of `pred` inside `gt`.
pub fn precision(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    let both = overlap(pred, gt)?;
    if pred.is_empty() {
        return Err(MetricsError::EmptyMask("predicted"));
    }
    Ok(both as f64 / pred.voxel_count() as f64)
}

/// Exact 1-D squared distance transform of `f` with sample spacing `s`
/// (lower envelope of parabolas). `f` holds squared distances or infinity.
fn edt_1d(f: &mut [f64], s: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    out.clear();
    let pos = |q: usize| q as f64 * s;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let x = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if x <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(x);
                break;
            }
        }
    }
    if v.is_empty() {
        return;
    }
    let mut k = 0;
    for q in 0..n {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let p = v[k];
        let d = (q as f64 - p as f64) * s;
        out.push(d * d + f[p]);
    }
    f.copy_from_slice(out);
}

/// Squared Euclidean distance (mm²) from every voxel center to the nearest
/// foreground voxel center. Infinity everywhere when `mask` is empty.
pub fn squared_distance_map(mask: &BinaryMask) -> Vec<f64> {
    let grid = mask.grid();
    let [nx, ny, nz] = grid.dims();
    let [sx, sy, sz] = grid.spacing();
    let mut d: Vec<f64> = mask
        .to_bytes()
        .into_iter()
        .map(|b| if b != 0 { 0.0 } else { f64::INFINITY })
        .collect();

    let scratch = || (Vec::new(), Vec::new(), Vec::new());
    // x lines are contiguous
    d.par_chunks_mut(nx).for_each_init(scratch, |(v, z, o), line| edt_1d(line, sx, v, z, o));
    // y lines live inside one z plane
    d.par_chunks_mut(nx * ny).for_each_init(
        || (scratch(), vec![0.0; ny]),
        |((v, z, o), line), plane| {
            for i in 0..nx {
                for j in 0..ny {
                    line[j] = plane[i + nx * j];
                }
                edt_1d(line, sy, v, z, o);
                for j in 0..ny {
                    plane[i + nx * j] = line[j];
                }
            }
        },
    );
    // z lines: compute per (i, j) column, then scatter
    let plane = nx * ny;
    let columns: Vec<Vec<f64>> = (0..plane)
        .into_par_iter()
        .map_init(scratch, |(v, z, o), c| {
            let mut line: Vec<f64> = (0..nz).map(|k| d[c + plane * k]).collect();
            edt_1d(&mut line, sz, v, z, o);
            line
        })
        .collect();
    for (c, line) in columns.into_iter().enumerate() {
        for (k, val) in line.into_iter().enumerate() {
            d[c + plane * k] = val;
        }
    }
    d
}

fn directed_mean(from: &BinaryMask, to_dist: &[f64], grid: &Grid) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in from.voxels() {
        sum += to_dist[grid.linear_index(p)].sqrt();
        n += 1;
    }
    sum / n as f64
}

/// Symmetric mean surface distance in mm: the mean of the two directed
/// means over 6-connected surface voxels.
pub fn msd(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    a.grid().ensure_same(b.grid())?;
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyMask(if a.is_empty() { "first" } else { "second" }));
    }
    let (sa, sb) = (surface_voxels(a), surface_voxels(b));
    let (da, db) = rayon::join(|| squared_distance_map(&sa), || squared_distance_map(&sb));
    let grid = a.grid();
    Ok(0.5 * (directed_mean(&sa, &db, grid) + directed_mean(&sb, &da, grid)))
}

/// F1 between the canonical call multisets of two plans; 0 when they share
/// no call.
pub fn tool_call_f1(generated: &Plan, reference: &Plan, initial_rois: &[String]) -> Result<f64, MetricsError> {
    let keys = |plan: &Plan, which| {
        canonical_keys(plan, initial_rois).map_err(|source| MetricsError::Canonical { which, source })
    };
    let g = keys(generated, "generated")?;
    let r = keys(reference, "reference")?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for k in &r {
        *counts.entry(k).or_default() += 1;
    }
    let mut hits = 0usize;
    for k in &g {
        if let Some(c) = counts.get_mut(k.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            hits += 1;
        }
    }
    if hits == 0 {
        return Ok(0.0);
    }
    let p = hits as f64 / g.len() as f64;
    let r = hits as f64 / r.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Metrics of one predicted target against its ground truth. Fields that
/// are undefined for empty masks are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub target: String,
    pub dsc: f64,
    pub msd_mm: Option<f64>,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
}

pub fn evaluate_target(target: &str, pred: &BinaryMask, gt: &BinaryMask) -> Result<TargetMetrics, MetricsError> {
    let undefined_if_empty = |r: Result<f64, MetricsError>| match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::EmptyMask(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(TargetMetrics {
        target: target.to_string(),
        dsc: dsc(pred, gt)?,
        msd_mm: undefined_if_empty(msd(pred, gt))?,
        sensitivity: undefined_if_empty(sensitivity(pred, gt))?,
        precision: undefined_if_empty(precision(pred, gt))?,
    })
}
