//! Geometric toolbox dispatched by the plan executor: anisotropic dilation,
//! voxelwise Boolean algebra, and the post-processing morphology.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::volume::{tail_mask, BinaryMask, Grid, MarginVector, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("operation needs at least one input mask")]
    EmptyInput,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Whether displacement `d` (voxels) lies in the structuring element of `margin`.
///
/// The element is the octant-wise ellipsoid: each signed axis direction uses
/// its own semi-axis, and a zero margin admits no displacement on that side.
pub fn within_margin(d: [i64; 3], margin: &MarginVector, spacing: [f64; 3]) -> bool {
    let mut sum = 0.0;
    for axis in 0..3 {
        if d[axis] == 0 {
            continue;
        }
        let m = margin.along(axis, d[axis] > 0);
        if m == 0.0 {
            return false;
        }
        let t = d[axis] as f64 * spacing[axis] / m;
        sum += t * t;
    }
    sum <= 1.0
}

/// Discrete voxel displacements of a structuring element. Always contains the origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringOffsets {
    offsets: Vec<[i64; 3]>,
}

impl StructuringOffsets {
    /// Element from an explicit displacement list; the origin is added if missing.
    pub fn from_offsets(offsets: impl IntoIterator<Item = [i64; 3]>) -> Self {
        let mut v: Vec<[i64; 3]> = offsets.into_iter().collect();
        v.push([0, 0, 0]);
        v.sort_by_key(|d| (d[2], d[1], d[0]));
        v.dedup();
        StructuringOffsets { offsets: v }
    }

    /// Center plus the six face neighbours.
    pub fn cross6() -> Self {
        StructuringOffsets::from_offsets([
            [1, 0, 0],
            [-1, 0, 0],
            [0, 1, 0],
            [0, -1, 0],
            [0, 0, 1],
            [0, 0, -1],
        ])
    }

    pub fn offsets(&self) -> &[[i64; 3]] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn contains(&self, d: [i64; 3]) -> bool {
        self.offsets.binary_search_by_key(&(d[2], d[1], d[0]), |o| (o[2], o[1], o[0])).is_ok()
    }

    /// Group into `(dj, dk, lo, hi)`: maximal contiguous runs of `di` per row.
    fn row_runs(&self) -> Vec<(i64, i64, i64, i64)> {
        let mut rows: BTreeMap<(i64, i64), Vec<i64>> = BTreeMap::new();
        for d in &self.offsets {
            rows.entry((d[1], d[2])).or_default().push(d[0]);
        }
        let mut runs = Vec::new();
        for ((dj, dk), mut dis) in rows {
            dis.sort_unstable();
            let mut lo = dis[0];
            let mut hi = dis[0];
            for &di in &dis[1..] {
                if di == hi + 1 {
                    hi = di;
                } else {
                    runs.push((dj, dk, lo, hi));
                    lo = di;
                    hi = di;
                }
            }
            runs.push((dj, dk, lo, hi));
        }
        runs
    }
}

/// Offsets whose scaled displacement satisfies [`within_margin`], searched
/// over the box `[-ceil(neg/s), ceil(pos/s)]` per axis.
pub fn build_structuring_offsets(margin: &MarginVector, spacing: [f64; 3]) -> StructuringOffsets {
    let reach = |axis: usize, positive: bool| (margin.along(axis, positive) / spacing[axis]).ceil() as i64;
    let mut offsets = Vec::new();
    for dk in -reach(2, false)..=reach(2, true) {
        for dj in -reach(1, false)..=reach(1, true) {
            for di in -reach(0, false)..=reach(0, true) {
                if within_margin([di, dj, dk], margin, spacing) {
                    offsets.push([di, dj, dk]);
                }
            }
        }
    }
    StructuringOffsets::from_offsets(offsets)
}

/// Minkowski sum of `mask` with the margin's structuring element, clipped to the grid.
pub fn dilate(mask: &BinaryMask, margin: &MarginVector) -> BinaryMask {
    if margin.is_zero() {
        return mask.clone();
    }
    let se = build_structuring_offsets(margin, mask.grid().spacing());
    dilate_offsets(mask, &se)
}

/// Minkowski sum with an arbitrary structuring element, clipped to the grid.
///
/// Each row of the element is a run of x-displacements; the input is first
/// dilated along x once per distinct run, then those row-dilated volumes are
/// OR-ed into each output row at the run's (y, z) displacement. Output planes
/// are assembled in parallel.
pub fn dilate_offsets(mask: &BinaryMask, se: &StructuringOffsets) -> BinaryMask {
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims();
    let wpr = mask.words_per_row();

    let runs = se.row_runs();
    let mut interval_ids: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut row_ops = Vec::with_capacity(runs.len());
    for &(dj, dk, lo, hi) in &runs {
        let next = interval_ids.len();
        let id = *interval_ids.entry((lo, hi)).or_insert(next);
        row_ops.push((dj, dk, id));
    }
    let mut intervals = vec![(0, 0); interval_ids.len()];
    for (&iv, &id) in &interval_ids {
        intervals[id] = iv;
    }

    let tail = tail_mask(nx);
    let xdilated: Vec<Vec<u64>> = intervals
        .par_iter()
        .map(|&(lo, hi)| {
            let mut out = vec![0u64; mask.words().len()];
            out.par_chunks_mut(wpr).zip(mask.words().par_chunks(wpr)).for_each_init(
                || vec![0u64; wpr],
                |scratch, (dst, src)| {
                    dilate_row_interval(src, lo, hi, dst, scratch);
                    dst[wpr - 1] &= tail;
                },
            );
            out
        })
        .collect();

    let plane = wpr * ny;
    let mut out = vec![0u64; mask.words().len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(k, dst_plane)| {
        for &(dj, dk, id) in &row_ops {
            let sk = k as i64 - dk;
            if sk < 0 || sk >= nz as i64 {
                continue;
            }
            let src_plane = &xdilated[id][sk as usize * plane..(sk as usize + 1) * plane];
            let j_lo = dj.max(0) as usize;
            let j_hi = (ny as i64 + dj.min(0)).max(0) as usize;
            for j in j_lo..j_hi.min(ny) {
                let sj = (j as i64 - dj) as usize;
                let dst = &mut dst_plane[j * wpr..(j + 1) * wpr];
                let src = &src_plane[sj * wpr..(sj + 1) * wpr];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d |= s;
                }
            }
        }
    });
    BinaryMask::from_words(grid, out)
}

/// `dst[x] |= src[x - amount]` within one packed row; bits leaving the row are dropped.
fn shifted_or(dst: &mut [u64], src: &[u64], amount: i64) {
    let n = src.len();
    let a = amount.unsigned_abs() as usize;
    let (ws, bs) = (a / 64, a % 64);
    if ws >= n {
        return;
    }
    if amount >= 0 {
        for i in ws..n {
            let mut v = src[i - ws] << bs;
            if bs > 0 && i > ws {
                v |= src[i - ws - 1] >> (64 - bs);
            }
            dst[i] |= v;
        }
    } else {
        for i in 0..n - ws {
            let mut v = src[i + ws] >> bs;
            if bs > 0 && i + ws + 1 < n {
                v |= src[i + ws + 1] << (64 - bs);
            }
            dst[i] |= v;
        }
    }
}

/// `dst[x] = OR_{d in lo..=hi} src[x - d]`, split at zero so bits dropped at
/// one row end are never needed again.
fn dilate_row_interval(src: &[u64], lo: i64, hi: i64, dst: &mut [u64], scratch: &mut [u64]) {
    dst.iter_mut().for_each(|w| *w = 0);
    if hi >= 0 {
        let start = lo.max(0);
        spread(src, start, hi - start + 1, 1, dst, scratch);
    }
    if lo < 0 {
        let start = hi.min(-1);
        spread(src, start, start - lo + 1, -1, dst, scratch);
    }
}

/// OR into `dst` the shifts `start, start+dir, …` (`width` of them) of `src`,
/// by doubling.
fn spread(src: &[u64], start: i64, width: i64, dir: i64, dst: &mut [u64], scratch: &mut [u64]) {
    let mut acc = vec![0u64; src.len()];
    shifted_or(&mut acc, src, start);
    let mut covered = 1;
    while covered < width {
        let step = covered.min(width - covered);
        scratch.copy_from_slice(&acc);
        shifted_or(&mut acc, scratch, dir * step);
        covered += step;
    }
    for (d, a) in dst.iter_mut().zip(&acc) {
        *d |= a;
    }
}

fn check_grids(masks: &[&BinaryMask]) -> Result<Grid, GeometryError> {
    let first = masks.first().ok_or(GeometryError::EmptyInput)?;
    for m in &masks[1..] {
        first.grid().ensure_same(m.grid())?;
    }
    Ok(*first.grid())
}

fn zip_words(a: &BinaryMask, b: &BinaryMask, f: impl Fn(u64, u64) -> u64) -> Result<BinaryMask, GeometryError> {
    a.grid().ensure_same(b.grid())?;
    let words = a.words().iter().zip(b.words()).map(|(&x, &y)| f(x, y)).collect();
    Ok(BinaryMask::from_words(*a.grid(), words))
}

/// Voxelwise OR of a non-empty list of masks on one grid.
pub fn union(masks: &[&BinaryMask]) -> Result<BinaryMask, GeometryError> {
    let grid = check_grids(masks)?;
    let mut words = masks[0].words().to_vec();
    for m in &masks[1..] {
        for (w, x) in words.iter_mut().zip(m.words()) {
            *w |= x;
        }
    }
    Ok(BinaryMask::from_words(grid, words))
}

/// Voxelwise `a AND NOT b`.
pub fn subtract(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, GeometryError> {
    zip_words(a, b, |x, y| x & !y)
}

/// Voxelwise AND.
pub fn intersect(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, GeometryError> {
    zip_words(a, b, |x, y| x & y)
}

pub(crate) fn complement(mask: &BinaryMask) -> BinaryMask {
    BinaryMask::from_words(*mask.grid(), mask.words().iter().map(|w| !w).collect())
}

/// Sets every background voxel not 6-connected to the grid boundary.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims();
    let n = grid.len();
    let fg = mask.to_bytes();
    let mut outside = vec![false; n];
    let mut stack = Vec::new();

    let seed = |i: usize, j: usize, k: usize, outside: &mut Vec<bool>, stack: &mut Vec<usize>| {
        let l = i + nx * (j + ny * k);
        if fg[l] == 0 && !outside[l] {
            outside[l] = true;
            stack.push(l);
        }
    };
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1 {
                    seed(i, j, k, &mut outside, &mut stack);
                }
            }
        }
    }
    while let Some(l) = stack.pop() {
        let [i, j, k] = grid.voxel_index(l);
        let mut visit = |m: usize| {
            if fg[m] == 0 && !outside[m] {
                outside[m] = true;
                stack.push(m);
            }
        };
        if i > 0 {
            visit(l - 1);
        }
        if i + 1 < nx {
            visit(l + 1);
        }
        if j > 0 {
            visit(l - nx);
        }
        if j + 1 < ny {
            visit(l + nx);
        }
        if k > 0 {
            visit(l - nx * ny);
        }
        if k + 1 < nz {
            visit(l + nx * ny);
        }
    }
    let bytes: Vec<u8> = outside.iter().map(|&o| u8::from(!o)).collect();
    BinaryMask::from_bytes(grid, &bytes).expect("length matches grid")
}

/// Erosion by the 6-neighbourhood; out-of-grid neighbours count as `border`.
pub(crate) fn erode_cross(mask: &BinaryMask, border: bool) -> BinaryMask {
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims();
    let wpr = mask.words_per_row();
    let tail = tail_mask(nx);
    let fill = if border { u64::MAX } else { 0 };
    let edge = vec![fill; wpr];
    let plane = wpr * ny;
    let mut out = vec![0u64; mask.words().len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(k, dst_plane)| {
        let mut left = vec![0u64; wpr];
        let mut right = vec![0u64; wpr];
        for j in 0..ny {
            let row = mask.row(j, k);
            let dst = &mut dst_plane[j * wpr..(j + 1) * wpr];
            left.iter_mut().for_each(|w| *w = 0);
            right.iter_mut().for_each(|w| *w = 0);
            // left[x] = row[x-1], right[x] = row[x+1]
            shifted_or(&mut left, row, 1);
            shifted_or(&mut right, row, -1);
            if border {
                left[0] |= 1;
                right[(nx - 1) / 64] |= 1 << ((nx - 1) % 64);
            }
            let ym = if j > 0 { mask.row(j - 1, k) } else { &edge };
            let yp = if j + 1 < ny { mask.row(j + 1, k) } else { &edge };
            let zm = if k > 0 { mask.row(j, k - 1) } else { &edge };
            let zp = if k + 1 < nz { mask.row(j, k + 1) } else { &edge };
            for w in 0..wpr {
                dst[w] = row[w] & left[w] & right[w] & ym[w] & yp[w] & zm[w] & zp[w];
            }
            dst[wpr - 1] &= tail;
        }
    });
    BinaryMask::from_words(grid, out)
}

/// Dilation by the 6-neighbourhood, clipped to the grid.
pub(crate) fn dilate_cross(mask: &BinaryMask) -> BinaryMask {
    // The clipped dilation is the dual of the erosion that treats the outside as foreground.
    complement(&erode_cross(&complement(mask), true))
}

/// Morphological closing followed by opening, both with the 6-neighbourhood.
pub fn smooth(mask: &BinaryMask) -> BinaryMask {
    let closed = erode_cross(&dilate_cross(mask), true);
    dilate_cross(&erode_cross(&closed, true))
}

/// Foreground voxels with at least one face neighbour that is background or outside the grid.
pub fn surface_voxels(mask: &BinaryMask) -> BinaryMask {
    let interior = erode_cross(mask, false);
    subtract(mask, &interior).expect("same grid")
}
