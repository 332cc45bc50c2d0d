//! Overlap and boundary metrics on binary 3D masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major boolean voxel grid, x fastest: index = x + nx * (y + ny * z).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    dims: [usize; 3],
    voxels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], voxels: Vec<bool>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!("mask dims {dims:?} must be positive")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if voxels.len() != n {
            return Err(Error::InvalidGeometry(format!(
                "{} voxels for dims {dims:?} ({n} expected)",
                voxels.len()
            )));
        }
        Ok(Self { dims, voxels })
    }

    pub fn empty(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, vec![false; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.voxels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.voxels[i] = v;
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            dims: self.dims,
            voxels: self.voxels.iter().map(|v| !v).collect(),
        }
    }

    /// Foreground voxels with at least one background face-neighbour, or
    /// lying on the volume edge.
    pub fn boundary(&self) -> Vec<[usize; 3]> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if !self.get(x, y, z) {
                        continue;
                    }
                    let on_edge = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                    if on_edge
                        || !self.get(x - 1, y, z)
                        || !self.get(x + 1, y, z)
                        || !self.get(x, y - 1, z)
                        || !self.get(x, y + 1, z)
                        || !self.get(x, y, z - 1)
                        || !self.get(x, y, z + 1)
                    {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    }
}

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::DimsMismatch(a.dims, b.dims));
    }
    Ok(())
}

/// `(|X ∩ Y|, |X|, |Y|)`.
fn overlap_counts(x: &BinaryMask, y: &BinaryMask) -> (usize, usize, usize) {
    x.voxels
        .iter()
        .zip(&y.voxels)
        .fold((0, 0, 0), |(i, a, b), (&p, &q)| {
            (i + (p && q) as usize, a + p as usize, b + q as usize)
        })
}

/// Dice similarity `2|X ∩ Y| / (|X| + |Y|)`. Two empty masks are an error.
pub fn dice(x: &BinaryMask, y: &BinaryMask) -> Result<f64> {
    check_dims(x, y)?;
    let (inter, a, b) = overlap_counts(x, y);
    if a + b == 0 {
        return Err(Error::BothEmpty);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Intersection over union `|X ∩ Y| / |X ∪ Y|`.
pub fn miou(x: &BinaryMask, y: &BinaryMask) -> Result<f64> {
    check_dims(x, y)?;
    let (inter, a, b) = overlap_counts(x, y);
    let union = a + b - inter;
    if union == 0 {
        return Err(Error::BothEmpty);
    }
    Ok(inter as f64 / union as f64)
}

/// Fraction of voxels on which the masks agree.
pub fn voxel_accuracy(x: &BinaryMask, y: &BinaryMask) -> Result<f64> {
    check_dims(x, y)?;
    let agree = x.voxels.iter().zip(&y.voxels).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / x.len() as f64)
}

fn directed(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    let mut worst = 0.0f64;
    for a in from {
        let mut best = f64::INFINITY;
        for b in to {
            let mut d2 = 0.0;
            for ax in 0..3 {
                let d = (a[ax] as f64 - b[ax] as f64) * spacing[ax];
                d2 += d * d;
            }
            if d2 < best {
                best = d2;
                if best == 0.0 {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    worst.sqrt()
}

/// Symmetric Hausdorff distance between the boundary voxel centres of two
/// masks, in physical units given by `spacing`.
pub fn hausdorff(x: &BinaryMask, y: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    check_dims(x, y)?;
    let bx = x.boundary();
    let by = y.boundary();
    if bx.is_empty() || by.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(directed(&bx, &by, spacing).max(directed(&by, &bx, spacing)))
}

/// One row of a metric report; undefined metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub case_id: String,
    pub dice: Option<f64>,
    pub miou: Option<f64>,
    pub hd: Option<f64>,
    pub accuracy: f64,
}

impl MetricReport {
    pub fn compute(case_id: &str, pred: &BinaryMask, truth: &BinaryMask, spacing: [f64; 3]) -> Result<Self> {
        let accuracy = voxel_accuracy(pred, truth)?;
        Ok(Self {
            case_id: case_id.to_string(),
            dice: dice(pred, truth).ok(),
            miou: miou(pred, truth).ok(),
            hd: hausdorff(pred, truth, spacing).ok(),
            accuracy,
        })
    }
}
