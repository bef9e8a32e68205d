//! Physically calibrated voxel grids and bit-packed binary masks.
//!
//! Grids are axis-aligned in the LPS patient frame: +x points to the
//! patient's left, +y posterior, +z superior. Voxel `(i, j, k)` has its
//! center at `origin + (i·sx, j·sy, k·sz)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label of the only axis convention a [`Grid`] can carry.
pub const AXIS_CONVENTION: &str = "LPS-axis-aligned";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("voxel index ({}, {}, {}) outside grid dims {}x{}x{}", .index[0], .index[1], .index[2], .dims[0], .dims[1], .dims[2])]
    IndexOutOfRange { index: [usize; 3], dims: [usize; 3] },
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: Grid, right: Grid },
    #[error("occupancy length {found} does not match grid size {expected}")]
    DataLength { expected: usize, found: usize },
    #[error("invalid margin: {0}")]
    InvalidMargin(String),
}

/// Voxel lattice: dimensions, spacing (mm) and origin (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

/// Serialized form of a [`Grid`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl TryFrom<GridSpec> for Grid {
    type Error = VolumeError;
    fn try_from(spec: GridSpec) -> Result<Self, Self::Error> {
        Grid::new(spec.dims, spec.spacing, spec.origin)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec {
            dims: g.dims,
            spacing: g.spacing,
            origin: g.origin,
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[dims {}x{}x{}, spacing ({}, {}, {}) mm, origin ({}, {}, {}) mm]",
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.spacing[0],
            self.spacing[1],
            self.spacing[2],
            self.origin[0],
            self.origin[1],
            self.origin[2]
        )
    }
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidGrid(format!("dims must be positive, got {dims:?}")));
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
            return Err(VolumeError::InvalidGrid(format!("dims {dims:?} overflow")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::InvalidGrid(format!(
                "spacing must be finite and positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::InvalidGrid(format!("origin must be finite, got {origin:?}")));
        }
        Ok(Grid { dims, spacing, origin })
    }

    /// Isotropic unit-spacing grid at the origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self, VolumeError> {
        Grid::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn axis_convention(&self) -> &'static str {
        AXIS_CONVENTION
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn contains(&self, index: [usize; 3]) -> bool {
        index[0] < self.dims[0] && index[1] < self.dims[1] && index[2] < self.dims[2]
    }

    /// Linear index in x-fastest, z-slowest order.
    pub fn linear_index(&self, index: [usize; 3]) -> usize {
        index[0] + self.dims[0] * (index[1] + self.dims[1] * index[2])
    }

    pub fn voxel_index(&self, linear: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [linear % nx, (linear / nx) % ny, linear / (nx * ny)]
    }

    /// Physical position (mm) of a voxel center.
    pub fn voxel_center(&self, index: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + index[0] as f64 * self.spacing[0],
            self.origin[1] + index[1] as f64 * self.spacing[1],
            self.origin[2] + index[2] as f64 * self.spacing[2],
        ]
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<(), VolumeError> {
        if self == other {
            Ok(())
        } else {
            Err(VolumeError::GridMismatch {
                left: *self,
                right: *other,
            })
        }
    }
}

/// Six non-negative directional expansions in millimetres.
///
/// `x_neg` expands towards −x (patient right), `x_pos` towards +x (left),
/// `y_neg` anterior, `y_pos` posterior, `z_neg` inferior, `z_pos` superior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarginSpec", into = "MarginSpec")]
pub struct MarginVector {
    x_neg: f64,
    x_pos: f64,
    y_neg: f64,
    y_pos: f64,
    z_neg: f64,
    z_pos: f64,
}

/// Unchecked margin record, as written in plan documents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginSpec {
    pub x_neg: f64,
    pub x_pos: f64,
    pub y_neg: f64,
    pub y_pos: f64,
    pub z_neg: f64,
    pub z_pos: f64,
}

impl MarginSpec {
    pub fn uniform(mm: f64) -> Self {
        MarginSpec {
            x_neg: mm,
            x_pos: mm,
            y_neg: mm,
            y_pos: mm,
            z_neg: mm,
            z_pos: mm,
        }
    }

    pub fn components(&self) -> [f64; 6] {
        [self.x_neg, self.x_pos, self.y_neg, self.y_pos, self.z_neg, self.z_pos]
    }

    pub fn to_vector(&self) -> Result<MarginVector, VolumeError> {
        MarginVector::try_from(*self)
    }
}

impl TryFrom<MarginSpec> for MarginVector {
    type Error = VolumeError;
    fn try_from(s: MarginSpec) -> Result<Self, Self::Error> {
        MarginVector::new(s.x_neg, s.x_pos, s.y_neg, s.y_pos, s.z_neg, s.z_pos)
    }
}

impl From<MarginVector> for MarginSpec {
    fn from(m: MarginVector) -> Self {
        MarginSpec {
            x_neg: m.x_neg,
            x_pos: m.x_pos,
            y_neg: m.y_neg,
            y_pos: m.y_pos,
            z_neg: m.z_neg,
            z_pos: m.z_pos,
        }
    }
}

impl MarginVector {
    pub fn new(x_neg: f64, x_pos: f64, y_neg: f64, y_pos: f64, z_neg: f64, z_pos: f64) -> Result<Self, VolumeError> {
        let m = MarginVector {
            x_neg,
            x_pos,
            y_neg,
            y_pos,
            z_neg,
            z_pos,
        };
        if let Some(bad) = m.components().iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(VolumeError::InvalidMargin(format!(
                "components must be finite and >= 0, got {bad}"
            )));
        }
        Ok(m)
    }

    pub fn zero() -> Self {
        MarginVector {
            x_neg: 0.0,
            x_pos: 0.0,
            y_neg: 0.0,
            y_pos: 0.0,
            z_neg: 0.0,
            z_pos: 0.0,
        }
    }

    pub fn uniform(mm: f64) -> Result<Self, VolumeError> {
        MarginVector::new(mm, mm, mm, mm, mm, mm)
    }

    /// `[x_neg, x_pos, y_neg, y_pos, z_neg, z_pos]`
    pub fn components(&self) -> [f64; 6] {
        [self.x_neg, self.x_pos, self.y_neg, self.y_pos, self.z_neg, self.z_pos]
    }

    /// Margin along `axis` on the side given by the sign of a displacement.
    pub fn along(&self, axis: usize, positive: bool) -> f64 {
        self.components()[2 * axis + usize::from(positive)]
    }

    pub fn is_zero(&self) -> bool {
        self.components().iter().all(|&c| c == 0.0)
    }

    pub fn max_component(&self) -> f64 {
        self.components().into_iter().fold(0.0, f64::max)
    }
}

/// A 3D binary mask, one bit per voxel.
///
/// Each x-row is packed into `ceil(nx / 64)` words; padding bits past `nx`
/// are always zero. Rows follow in y-then-z order, so the bit sequence read
/// row by row is the x-fastest linear voxel order.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    grid: Grid,
    words: Vec<u64>,
}

impl Eq for Grid {}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("grid", &self.grid)
            .field("voxel_count", &self.voxel_count())
            .finish()
    }
}

pub(crate) fn words_per_row(nx: usize) -> usize {
    nx.div_ceil(64)
}

/// Mask of the valid bits in the last word of a row.
pub(crate) fn tail_mask(nx: usize) -> u64 {
    match nx % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BinaryMask {
    pub fn empty(grid: Grid) -> Self {
        let n = words_per_row(grid.dims[0]) * grid.dims[1] * grid.dims[2];
        BinaryMask {
            grid,
            words: vec![0; n],
        }
    }

    pub fn full(grid: Grid) -> Self {
        let mut m = BinaryMask::empty(grid);
        m.words.iter_mut().for_each(|w| *w = u64::MAX);
        m.clear_padding();
        m
    }

    /// Mask with exactly the listed voxels set. Duplicates collapse.
    pub fn from_voxels<I>(grid: Grid, voxels: I) -> Result<Self, VolumeError>
    where
        I: IntoIterator<Item = [usize; 3]>,
    {
        let mut m = BinaryMask::empty(grid);
        for v in voxels {
            if !grid.contains(v) {
                return Err(VolumeError::IndexOutOfRange { index: v, dims: grid.dims });
            }
            m.set(v, true);
        }
        Ok(m)
    }

    /// Mask whose voxel `(i, j, k)` is set iff `f([i, j, k])`.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let mut m = BinaryMask::empty(grid);
        let [nx, ny, nz] = grid.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if f([i, j, k]) {
                        m.set([i, j, k], true);
                    }
                }
            }
        }
        m
    }

    /// Decode one byte per voxel in linear order; any non-zero byte is foreground.
    pub fn from_bytes(grid: Grid, bytes: &[u8]) -> Result<Self, VolumeError> {
        if bytes.len() != grid.len() {
            return Err(VolumeError::DataLength {
                expected: grid.len(),
                found: bytes.len(),
            });
        }
        let nx = grid.dims[0];
        let wpr = words_per_row(nx);
        let mut m = BinaryMask::empty(grid);
        for (row, chunk) in bytes.chunks_exact(nx).enumerate() {
            let dst = &mut m.words[row * wpr..(row + 1) * wpr];
            for (i, &b) in chunk.iter().enumerate() {
                if b != 0 {
                    dst[i / 64] |= 1 << (i % 64);
                }
            }
        }
        Ok(m)
    }

    /// One byte (0 or 1) per voxel in linear order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nx = self.grid.dims[0];
        let mut out = Vec::with_capacity(self.grid.len());
        for row in self.rows() {
            out.extend((0..nx).map(|i| ((row[i / 64] >> (i % 64)) & 1) as u8));
        }
        out
    }

    pub(crate) fn from_words(grid: Grid, words: Vec<u64>) -> Self {
        debug_assert_eq!(words.len(), words_per_row(grid.dims[0]) * grid.dims[1] * grid.dims[2]);
        let mut m = BinaryMask { grid, words };
        m.clear_padding();
        m
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn get(&self, index: [usize; 3]) -> bool {
        assert!(self.grid.contains(index), "voxel {index:?} outside {}", self.grid);
        let wpr = self.words_per_row();
        let row = index[1] + self.grid.dims[1] * index[2];
        (self.words[row * wpr + index[0] / 64] >> (index[0] % 64)) & 1 == 1
    }

    /// `get` that treats out-of-grid indices as background.
    pub fn get_signed(&self, index: [i64; 3]) -> bool {
        let d = self.grid.dims;
        if (0..3).any(|a| index[a] < 0 || index[a] as usize >= d[a]) {
            return false;
        }
        self.get([index[0] as usize, index[1] as usize, index[2] as usize])
    }

    pub(crate) fn set(&mut self, index: [usize; 3], value: bool) {
        let wpr = self.words_per_row();
        let row = index[1] + self.grid.dims[1] * index[2];
        let w = &mut self.words[row * wpr + index[0] / 64];
        let bit = 1u64 << (index[0] % 64);
        if value {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    /// Copy of this mask with one voxel flipped.
    pub fn toggled(&self, index: [usize; 3]) -> Result<Self, VolumeError> {
        if !self.grid.contains(index) {
            return Err(VolumeError::IndexOutOfRange {
                index,
                dims: self.grid.dims,
            });
        }
        let mut m = self.clone();
        let cur = m.get(index);
        m.set(index, !cur);
        Ok(m)
    }

    pub fn voxel_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn physical_volume_mm3(&self) -> f64 {
        self.voxel_count() as f64 * self.grid.voxel_volume_mm3()
    }

    /// Set voxels in linear order.
    pub fn voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, _] = self.grid.dims;
        let wpr = self.words_per_row();
        self.words.iter().enumerate().flat_map(move |(wi, &w)| {
            let row = wi / wpr;
            let base = (wi % wpr) * 64;
            BitIter(w).map(move |b| [base + b, row % ny, row / ny])
        })
        .filter(move |v| v[0] < nx)
    }

    /// Inclusive voxel-index bounding box of the foreground, `None` if empty.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut it = self.voxels();
        let first = it.next()?;
        let (mut lo, mut hi) = (first, first);
        for v in it {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        Some((lo, hi))
    }

    /// True if any set voxel lies on a face of the grid.
    pub fn touches_boundary(&self) -> bool {
        match self.bounding_box() {
            None => false,
            Some((lo, hi)) => (0..3).any(|a| lo[a] == 0 || hi[a] + 1 == self.grid.dims[a]),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool, VolumeError> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0))
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    pub(crate) fn words_per_row(&self) -> usize {
        words_per_row(self.grid.dims[0])
    }

    pub(crate) fn rows(&self) -> std::slice::ChunksExact<'_, u64> {
        self.words.chunks_exact(self.words_per_row())
    }

    pub(crate) fn row(&self, j: usize, k: usize) -> &[u64] {
        let wpr = self.words_per_row();
        let r = j + self.grid.dims[1] * k;
        &self.words[r * wpr..(r + 1) * wpr]
    }

    fn clear_padding(&mut self) {
        let nx = self.grid.dims[0];
        let wpr = words_per_row(nx);
        let tail = tail_mask(nx);
        for row in self.words.chunks_exact_mut(wpr) {
            row[wpr - 1] &= tail;
        }
    }
}

/// True iff the two masks have identical occupancy. Errors if the grids differ.
pub fn masks_equal(a: &BinaryMask, b: &BinaryMask) -> Result<bool, VolumeError> {
    a.grid.ensure_same(&b.grid)?;
    Ok(a.words == b.words)
}

struct BitIter(u64);

impl Iterator for BitIter {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(b)
    }
}
