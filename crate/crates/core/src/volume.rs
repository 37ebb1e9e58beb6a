//! Dense 3D voxel grids.
//!
//! Every grid in this crate is indexed `(z, y, x)` with `x` varying fastest,
//! which is also the on-disk NIfTI order. `z` is the axial axis and index 0
//! is the most superior slice.

use crate::error::{Error, Result};

/// Voxel counts `(nz, ny, nx)`.
pub type Shape = [usize; 3];

/// Millimeters per voxel `(sz, sy, sx)`.
pub type Spacing = [f64; 3];

pub fn voxel_count(shape: Shape) -> usize {
    shape[0] * shape[1] * shape[2]
}

#[inline]
pub fn linear_index(shape: Shape, z: usize, y: usize, x: usize) -> usize {
    (z * shape[1] + y) * shape[2] + x
}

#[inline]
pub fn unravel(shape: Shape, idx: usize) -> [usize; 3] {
    let x = idx % shape[2];
    let y = (idx / shape[2]) % shape[1];
    let z = idx / (shape[1] * shape[2]);
    [z, y, x]
}

fn check_geometry(shape: Shape, spacing: Spacing) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::InvalidVolume(format!("shape {shape:?} has a zero extent")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidVolume(format!(
            "spacing {spacing:?} must be finite and positive"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    U8,
    I16,
    U16,
    F32,
}

impl ValueKind {
    pub fn nifti_code(self) -> i16 {
        match self {
            ValueKind::U8 => 2,
            ValueKind::I16 => 4,
            ValueKind::U16 => 512,
            ValueKind::F32 => 16,
        }
    }

    pub fn from_nifti_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(ValueKind::U8),
            4 => Some(ValueKind::I16),
            512 => Some(ValueKind::U16),
            16 => Some(ValueKind::F32),
            _ => None,
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            ValueKind::U8 => 1,
            ValueKind::I16 | ValueKind::U16 => 2,
            ValueKind::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn kind(&self) -> ValueKind {
        match self {
            VoxelData::U8(_) => ValueKind::U8,
            VoxelData::I16(_) => ValueKind::I16,
            VoxelData::U16(_) => ValueKind::U16,
            VoxelData::F32(_) => ValueKind::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::U16(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        match self {
            VoxelData::U8(v) => v[idx] as f64,
            VoxelData::I16(v) => v[idx] as f64,
            VoxelData::U16(v) => v[idx] as f64,
            VoxelData::F32(v) => v[idx] as f64,
        }
    }
}

/// A scalar voxel grid with physical spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: Shape,
    spacing: Spacing,
    data: VoxelData,
}

impl Volume {
    pub fn new(shape: Shape, spacing: Spacing, data: VoxelData) -> Result<Self> {
        check_geometry(shape, spacing)?;
        if data.len() != voxel_count(shape) {
            return Err(Error::InvalidVolume(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Volume {
            shape,
            spacing,
            data,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &VoxelData {
        &self.data
    }

    pub fn kind(&self) -> ValueKind {
        self.data.kind()
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data.get(linear_index(self.shape, z, y, x))
    }
}

/// Background label.
pub const BACKGROUND: u8 = 0;

/// A semantic segmentation: every voxel is 0 (background) or a category id
/// 1 = bleeding, 2 = ventricle system, 3 = midline.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    shape: Shape,
    spacing: Spacing,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(shape: Shape, spacing: Spacing, labels: Vec<u8>) -> Result<Self> {
        check_geometry(shape, spacing)?;
        if labels.len() != voxel_count(shape) {
            return Err(Error::InvalidVolume(format!(
                "{} labels for shape {shape:?}",
                labels.len()
            )));
        }
        if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| v > 3) {
            return Err(Error::InvalidLabel {
                index,
                value: value as f64,
            });
        }
        Ok(LabelMap {
            shape,
            spacing,
            labels,
        })
    }

    pub fn zeros(shape: Shape, spacing: Spacing) -> Result<Self> {
        Self::new(shape, spacing, vec![BACKGROUND; voxel_count(shape)])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        self.labels[linear_index(self.shape, z, y, x)]
    }

    /// Physical volume of one voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn count(&self, category: u8) -> usize {
        self.labels.iter().filter(|&&v| v == category).count()
    }

    pub fn binary_mask(&self, category: u8) -> Vec<bool> {
        self.labels.iter().map(|&v| v == category).collect()
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            shape: self.shape,
            spacing: self.spacing,
            data: VoxelData::U8(self.labels.clone()),
        }
    }
}

impl TryFrom<&Volume> for LabelMap {
    type Error = Error;

    fn try_from(volume: &Volume) -> Result<Self> {
        let n = volume.data().len();
        let mut labels = Vec::with_capacity(n);
        for index in 0..n {
            let value = volume.data().get(index);
            if value.fract() != 0.0 || !(0.0..=3.0).contains(&value) {
                return Err(Error::InvalidLabel { index, value });
            }
            labels.push(value as u8);
        }
        LabelMap::new(volume.shape(), volume.spacing(), labels)
    }
}

/// Per-category probability maps (background plus the three categories),
/// an alternative to hard labels as segmentation output.
#[derive(Clone, Debug)]
pub struct ProbabilityMaps {
    shape: Shape,
    spacing: Spacing,
    /// `channels[c][i]` is the probability of category `c` at voxel `i`.
    channels: [Vec<f32>; 4],
}

impl ProbabilityMaps {
    pub fn new(shape: Shape, spacing: Spacing, channels: [Vec<f32>; 4]) -> Result<Self> {
        check_geometry(shape, spacing)?;
        let n = voxel_count(shape);
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::ShapeMismatch(format!(
                "probability channels must all hold {n} values"
            )));
        }
        Ok(ProbabilityMaps {
            shape,
            spacing,
            channels,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channel(&self, category: u8) -> &[f32] {
        &self.channels[category as usize]
    }

    /// Hard labels by per-voxel argmax; ties resolve to the lowest id.
    pub fn argmax(&self) -> LabelMap {
        let n = voxel_count(self.shape);
        let labels = (0..n)
            .map(|i| {
                let mut best = 0u8;
                for c in 1..4u8 {
                    if self.channels[c as usize][i] > self.channels[best as usize][i] {
                        best = c;
                    }
                }
                best
            })
            .collect();
        LabelMap {
            shape: self.shape,
            spacing: self.spacing,
            labels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let shape = [3, 4, 5];
        for idx in 0..voxel_count(shape) {
            let [z, y, x] = unravel(shape, idx);
            assert_eq!(linear_index(shape, z, y, x), idx);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::new([0, 1, 1], [1.0; 3], VoxelData::U8(vec![])).is_err());
        assert!(Volume::new([1, 1, 1], [1.0, 0.0, 1.0], VoxelData::U8(vec![0])).is_err());
        assert!(Volume::new([2, 1, 1], [1.0; 3], VoxelData::U8(vec![0])).is_err());
    }

    #[test]
    fn label_map_rejects_unknown_ids() {
        let err = LabelMap::new([1, 1, 2], [1.0; 3], vec![0, 4]).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel { index: 1, .. }));
        let vol = Volume::new([1, 1, 1], [1.0; 3], VoxelData::F32(vec![1.5])).unwrap();
        assert!(LabelMap::try_from(&vol).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        let p = ProbabilityMaps::new(
            [1, 1, 2],
            [1.0; 3],
            [vec![0.5, 0.1], vec![0.5, 0.2], vec![0.0, 0.7], vec![0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(p.argmax().labels(), &[0, 2]);
    }
}
