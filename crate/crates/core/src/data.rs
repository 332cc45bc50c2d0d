//! Synthetic lesion volumes, patch features, k-fold splits and the binary
//! volume/mask file formats.
//!
//! File layout (little-endian), shared by volumes and masks:
//!
//! ```text
//! magic [4]  "PKVL" (volume) | "PKMS" (mask)
//! version    u32
//! nx, ny, nz u32 x 3
//! spacing    f64 x 3
//! payload    volume: nx*ny*nz f32, x fastest
//!            mask:   nx*ny*nz bits packed LSB-first, padded to a byte
//! ```

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::stream_seed;
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::network::ProKanNetwork;
use crate::training::Sample;

pub const VOLUME_MAGIC: &[u8; 4] = b"PKVL";
pub const MASK_MAGIC: &[u8; 4] = b"PKMS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    intensities: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], intensities: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!("volume dims {dims:?} must be positive")));
        }
        if spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGeometry(format!("spacing {spacing:?} must be positive")));
        }
        if intensities.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidGeometry(format!(
                "{} intensities for dims {dims:?}",
                intensities.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            intensities,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.intensities[x + self.dims[0] * (y + self.dims[1] * z)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.intensities
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Axis-aligned ellipsoidal lesion, in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3)
            .map(|a| {
                let d = (p[a] as f64 - self.center[a]) / self.radii[a];
                d * d
            })
            .sum::<f64>()
            <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    pub case_id: String,
    pub volume: Volume,
    pub mask: BinaryMask,
    pub lesions: Vec<Ellipsoid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_cases: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub blob_count_range: (usize, usize),
    pub radius_range: (f64, f64),
    pub noise_sigma: f64,
    pub contrast: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_cases: 20,
            dims: [16, 16, 16],
            spacing: [1.0; 3],
            blob_count_range: (1, 3),
            radius_range: (2.0, 4.0),
            noise_sigma: 0.1,
            contrast: 1.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        if self.dims.iter().any(|&d| d < 8) {
            return bad(format!("dims {:?} must each be at least 8", self.dims));
        }
        let (cmin, cmax) = self.blob_count_range;
        if cmin < 1 || cmin > cmax {
            return bad(format!("blob count range {cmin}..={cmax} invalid"));
        }
        let (rmin, rmax) = self.radius_range;
        if !(rmin > 0.0 && rmin <= rmax && rmax.is_finite()) {
            return bad(format!("radius range {rmin}..={rmax} invalid"));
        }
        let smallest = *self.dims.iter().min().expect("three dims") as f64;
        if 2.0 * rmax > smallest - 1.0 {
            return bad(format!("radius {rmax} does not fit in dims {:?}", self.dims));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !self.contrast.is_finite() {
            return bad("contrast must be finite".into());
        }
        if self.spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("spacing must be positive".into());
        }
        Ok(())
    }
}

pub fn case_id(i: usize) -> String {
    format!("case_{i:03}")
}

/// Background 0, lesions at `contrast`, additive Gaussian noise. Case `i`
/// draws from its own seeded stream, so adding cases leaves earlier ones
/// unchanged.
pub fn generate_synthetic_cases(seed: u64, params: &SynthParams) -> Result<Vec<LabeledCase>> {
    params.validate()?;
    (0..params.n_cases)
        .map(|i| generate_case(stream_seed(seed, 1000 + i as u64), case_id(i), params))
        .collect()
}

fn generate_case(seed: u64, case_id: String, p: &SynthParams) -> Result<LabeledCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cmin, cmax) = p.blob_count_range;
    let (rmin, rmax) = p.radius_range;
    let count = rng.random_range(cmin..=cmax);
    let lesions: Vec<Ellipsoid> = (0..count)
        .map(|_| {
            let mut radii = [0.0; 3];
            let mut center = [0.0; 3];
            for a in 0..3 {
                radii[a] = if rmin == rmax { rmin } else { rng.random_range(rmin..=rmax) };
                let hi = p.dims[a] as f64 - 1.0 - radii[a];
                center[a] = if hi > radii[a] { rng.random_range(radii[a]..=hi) } else { radii[a] };
            }
            Ellipsoid { center, radii }
        })
        .collect();

    let mut mask = BinaryMask::empty(p.dims)?;
    let [nx, ny, nz] = p.dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if lesions.iter().any(|e| e.contains([x, y, z])) {
                    mask.set(x, y, z, true);
                }
            }
        }
    }
    let noise = Normal::new(0.0, p.noise_sigma).map_err(|e| Error::InvalidGeometry(e.to_string()))?;
    let intensities = mask
        .voxels()
        .iter()
        .map(|&fg| {
            let base = if fg { p.contrast } else { 0.0 };
            let n = if p.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (base + n) as f32
        })
        .collect();
    Ok(LabeledCase {
        case_id,
        volume: Volume::new(p.dims, p.spacing, intensities)?,
        mask,
        lesions,
    })
}

/// Patch extraction with per-volume intensity rescaling into `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct FeatureExtractor<'a> {
    volume: &'a Volume,
    radius: usize,
    lo: f64,
    scale: f64,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(volume: &'a Volume, radius: usize) -> Self {
        let (lo, hi) = volume.min_max();
        let (lo, hi) = (lo as f64, hi as f64);
        let scale = if hi > lo { 2.0 / (hi - lo) } else { 0.0 };
        Self {
            volume,
            radius,
            lo,
            scale,
        }
    }

    pub fn feature_len(&self) -> usize {
        (2 * self.radius + 1).pow(3)
    }

    /// Flattened `(2r+1)^3` patch around `center`, x fastest, with edge
    /// replication at the borders.
    pub fn extract_into(&self, center: [usize; 3], out: &mut Vec<f64>) {
        out.clear();
        let r = self.radius as isize;
        let d = self.volume.dims;
        let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        for dz in -r..=r {
            let z = clampi(center[2] as isize + dz, d[2]);
            for dy in -r..=r {
                let y = clampi(center[1] as isize + dy, d[1]);
                for dx in -r..=r {
                    let x = clampi(center[0] as isize + dx, d[0]);
                    out.push(self.rescale(self.volume.get(x, y, z)));
                }
            }
        }
    }

    pub fn extract(&self, center: [usize; 3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_len());
        self.extract_into(center, &mut out);
        out
    }

    fn rescale(&self, v: f32) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            ((v as f64 - self.lo) * self.scale - 1.0).clamp(-1.0, 1.0)
        }
    }
}

pub fn extract_patch_features(volume: &Volume, center: [usize; 3], radius: usize) -> Vec<f64> {
    FeatureExtractor::new(volume, radius).extract(center)
}

/// Radius `r` whose patch has `len` features, if any.
pub fn radius_for_feature_len(len: usize) -> Option<usize> {
    (0..64).find(|r| (2 * r + 1usize).pow(3) == len)
}

/// Seeded case-level k-fold split. Returns `(train, val)` index lists per
/// fold, both sorted ascending.
pub fn kfold_split(n_cases: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || n_cases < k {
        return Err(Error::TooFewCases { n_cases, k });
    }
    let mut perm: Vec<usize> = (0..n_cases).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n_cases / k;
    let extra = n_cases % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let mut val = perm[start..start + size].to_vec();
        let mut train: Vec<usize> = perm[..start].iter().chain(&perm[start + size..]).copied().collect();
        val.sort_unstable();
        train.sort_unstable();
        folds.push((train, val));
        start += size;
    }
    Ok(folds)
}

/// Equal numbers of foreground and background voxel coordinates, at most
/// `per_class` of each.
pub fn balanced_voxels<R: Rng + ?Sized>(mask: &BinaryMask, per_class: usize, rng: &mut R) -> Vec<[usize; 3]> {
    let (fg, bg): (Vec<usize>, Vec<usize>) = (0..mask.len()).partition(|&i| mask.voxels()[i]);
    let n = per_class.min(fg.len()).min(bg.len());
    let mut out = Vec::with_capacity(2 * n);
    for pool in [&fg, &bg] {
        for j in index::sample(rng, pool.len(), n).into_iter() {
            out.push(mask.coords(pool[j]));
        }
    }
    out
}

/// A case prepared for dense per-voxel inference.
#[derive(Debug, Clone)]
pub struct DenseCase {
    pub case_id: String,
    pub spacing: [f64; 3],
    pub mask: BinaryMask,
    feature_len: usize,
    features: Vec<f64>,
}

impl DenseCase {
    pub fn new(case: &LabeledCase, radius: usize) -> Self {
        let fx = FeatureExtractor::new(&case.volume, radius);
        let d = fx.feature_len();
        let mut features = Vec::with_capacity(d * case.mask.len());
        let mut buf = Vec::with_capacity(d);
        for i in 0..case.mask.len() {
            fx.extract_into(case.mask.coords(i), &mut buf);
            features.extend_from_slice(&buf);
        }
        Self {
            case_id: case.case_id.clone(),
            spacing: case.volume.spacing(),
            mask: case.mask.clone(),
            feature_len: d,
            features,
        }
    }

    /// Foreground where the logistic output exceeds 0.5.
    pub fn predict(&self, net: &ProKanNetwork) -> Result<BinaryMask> {
        let voxels = self
            .features
            .chunks(self.feature_len)
            .map(|f| net.predict(f).map(|z| crate::training::sigmoid(z) > 0.5))
            .collect::<Result<Vec<bool>>>()?;
        BinaryMask::new(self.mask.dims(), voxels)
    }
}

/// Everything the progressive trainer consumes.
#[derive(Debug, Clone)]
pub struct TrainValData {
    pub train_samples: Vec<Sample>,
    pub val_samples: Vec<Sample>,
    pub val_cases: Vec<DenseCase>,
}

pub fn sample_case<R: Rng + ?Sized>(case: &LabeledCase, radius: usize, per_class: usize, rng: &mut R) -> Vec<Sample> {
    let fx = FeatureExtractor::new(&case.volume, radius);
    balanced_voxels(&case.mask, per_class, rng)
        .into_iter()
        .map(|c| Sample {
            features: fx.extract(c),
            target: if case.mask.get(c[0], c[1], c[2]) { 1.0 } else { 0.0 },
        })
        .collect()
}

impl TrainValData {
    pub fn build(train: &[&LabeledCase], val: &[&LabeledCase], radius: usize, per_class: usize, seed: u64) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 3));
        let train_samples: Vec<Sample> = train
            .iter()
            .flat_map(|c| sample_case(c, radius, per_class, &mut rng))
            .collect();
        let val_samples: Vec<Sample> = val
            .iter()
            .flat_map(|c| sample_case(c, radius, per_class, &mut rng))
            .collect();
        if train_samples.is_empty() || val_samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            train_samples,
            val_samples,
            val_cases: val.iter().map(|c| DenseCase::new(c, radius)).collect(),
        })
    }
}

fn write_header(buf: &mut Vec<u8>, magic: &[u8; 4], dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidGeometry(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for s in spacing {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    Ok(())
}

struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: usize,
}

fn read_header(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile(path.to_path_buf()));
    }
    if &bytes[..4] != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile(path.to_path_buf()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    let spacing = [f64_at(20), f64_at(28), f64_at(36)];
    let voxels = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidGeometry(format!("dims {dims:?} overflow")))?;
    Ok(Header { dims, spacing, voxels })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_payload(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    match bytes.len().cmp(&(HEADER_LEN + expected)) {
        std::cmp::Ordering::Less => Err(Error::TruncatedFile(path.to_path_buf())),
        std::cmp::Ordering::Greater => Err(Error::InvalidGeometry(format!(
            "{} has trailing bytes after the payload",
            path.display()
        ))),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn encode_volume(volume: &Volume) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * volume.intensities.len());
    write_header(&mut buf, VOLUME_MAGIC, volume.dims, volume.spacing)?;
    for v in &volume.intensities {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_volume(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_volume(volume)?).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let h = read_header(&bytes, VOLUME_MAGIC, path)?;
    check_payload(&bytes, 4 * h.voxels, path)?;
    let intensities = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Volume::new(h.dims, h.spacing, intensities)
}

pub fn encode_mask(mask: &BinaryMask, spacing: [f64; 3]) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(HEADER_LEN + mask.len().div_ceil(8));
    write_header(&mut buf, MASK_MAGIC, mask.dims(), spacing)?;
    for chunk in mask.voxels().chunks(8) {
        let byte = chunk
            .iter()
            .enumerate()
            .fold(0u8, |b, (i, &v)| b | (u8::from(v) << i));
        buf.push(byte);
    }
    Ok(buf)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask, spacing: [f64; 3]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask(mask, spacing)?).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<(BinaryMask, [f64; 3])> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let h = read_header(&bytes, MASK_MAGIC, path)?;
    check_payload(&bytes, h.voxels.div_ceil(8), path)?;
    let payload = &bytes[HEADER_LEN..];
    let voxels = (0..h.voxels).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok((BinaryMask::new(h.dims, voxels)?, h.spacing))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> SynthParams {
        SynthParams {
            n_cases: 3,
            ..SynthParams::default()
        }
    }

    #[test]
    fn noiseless_threshold_recovers_mask() {
        let p = SynthParams {
            noise_sigma: 0.0,
            contrast: 1.0,
            ..small_params()
        };
        for case in generate_synthetic_cases(7, &p).unwrap() {
            let thresh: Vec<bool> = case.volume.intensities().iter().map(|&v| v > 0.5).collect();
            assert_eq!(thresh, case.mask.voxels());
            assert!(case.mask.count() > 0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_cases(5, &small_params()).unwrap();
        let b = generate_synthetic_cases(5, &small_params()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_cases(6, &small_params()).unwrap();
        assert_ne!(a[0].volume, c[0].volume);
    }

    #[test]
    fn single_sphere_matches_enumeration() {
        let p = SynthParams {
            n_cases: 4,
            blob_count_range: (1, 1),
            radius_range: (3.0, 3.0),
            noise_sigma: 0.0,
            ..SynthParams::default()
        };
        for case in generate_synthetic_cases(9, &p).unwrap() {
            assert_eq!(case.lesions.len(), 1);
            let e = case.lesions[0];
            // Independent lattice count around the centre.
            let mut count = 0;
            for z in 0..16i64 {
                for y in 0..16i64 {
                    for x in 0..16i64 {
                        let d2 = (x as f64 - e.center[0]).powi(2)
                            + (y as f64 - e.center[1]).powi(2)
                            + (z as f64 - e.center[2]).powi(2);
                        if d2 <= 9.0 {
                            count += 1;
                        }
                    }
                }
            }
            assert_eq!(case.mask.count(), count);
            let ideal = 4.0 / 3.0 * std::f64::consts::PI * 27.0;
            assert!((count as f64 - ideal).abs() / ideal < 0.25, "{count} vs {ideal}");
        }
    }

    #[test]
    fn invalid_geometry_rejected() {
        let p = SynthParams {
            dims: [8, 8, 4],
            ..small_params()
        };
        assert!(matches!(generate_synthetic_cases(0, &p), Err(Error::InvalidGeometry(_))));
        let p = SynthParams {
            radius_range: (2.0, 9.0),
            ..small_params()
        };
        assert!(generate_synthetic_cases(0, &p).is_err());
        let p = SynthParams {
            noise_sigma: -1.0,
            ..small_params()
        };
        assert!(generate_synthetic_cases(0, &p).is_err());
    }

    fn ramp_volume() -> Volume {
        let dims = [4, 3, 2];
        let vals = (0..24).map(|i| i as f32).collect();
        Volume::new(dims, [1.0; 3], vals).unwrap()
    }

    #[test]
    fn patch_radius_zero_and_constant_volume() {
        let v = ramp_volume();
        // index of (1, 2, 1) = 1 + 4 * (2 + 3 * 1) = 21; rescaled 2*21/23 - 1.
        let f = extract_patch_features(&v, [1, 2, 1], 0);
        assert_eq!(f.len(), 1);
        assert!((f[0] - (2.0 * 21.0 / 23.0 - 1.0)).abs() < 1e-12);
        let flat = Volume::new([3, 3, 3], [1.0; 3], vec![4.5; 27]).unwrap();
        assert!(extract_patch_features(&flat, [1, 1, 1], 1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn corner_patch_replicates_edges() {
        let v = ramp_volume();
        let f = extract_patch_features(&v, [0, 0, 0], 1);
        assert_eq!(f.len(), 27);
        let mut expected = Vec::new();
        for z in [0usize, 0, 1] {
            for y in [0usize, 0, 1] {
                for x in [0usize, 0, 1] {
                    let raw = (x + 4 * (y + 3 * z)) as f64;
                    expected.push(2.0 * raw / 23.0 - 1.0);
                }
            }
        }
        for (a, b) in f.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(radius_for_feature_len(27), Some(1));
        assert_eq!(radius_for_feature_len(26), None);
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold_split(10, 10, 1).unwrap();
        assert!(folds.iter().all(|(t, v)| v.len() == 1 && t.len() == 9));
        let folds = kfold_split(25, 10, 3).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 2, 3, 3, 3, 3, 3]);
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, v)| v.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
        assert!(matches!(kfold_split(3, 4, 0), Err(Error::TooFewCases { .. })));
        assert!(kfold_split(5, 1, 0).is_err());
    }

    #[test]
    fn balanced_sampling_is_balanced() {
        let case = &generate_synthetic_cases(2, &small_params()).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples = sample_case(case, 1, 40, &mut rng);
        let fg = samples.iter().filter(|s| s.target == 1.0).count();
        assert_eq!(fg * 2, samples.len());
        assert!(samples.iter().all(|s| s.features.iter().all(|f| (-1.0..=1.0).contains(f))));
    }

    #[test]
    fn io_round_trip_and_faults() {
        let dir = tempfile::tempdir().unwrap();
        let case = &generate_synthetic_cases(4, &small_params()).unwrap()[1];
        let vp = dir.path().join("a.pkvl");
        let mp = dir.path().join("a.pkms");
        write_volume(&vp, &case.volume).unwrap();
        write_mask(&mp, &case.mask, case.volume.spacing()).unwrap();
        assert_eq!(read_volume(&vp).unwrap(), case.volume);
        assert_eq!(read_mask(&mp).unwrap(), (case.mask.clone(), case.volume.spacing()));

        assert!(matches!(read_volume(&mp), Err(Error::BadMagic { .. })));
        let mut bytes = fs::read(&vp).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&vp, &bytes).unwrap();
        assert!(matches!(read_volume(&vp), Err(Error::TruncatedFile(_))));
        bytes[4] = 9;
        fs::write(&vp, &bytes).unwrap();
        assert!(matches!(read_volume(&vp), Err(Error::VersionMismatch { found: 9, .. })));
        assert!(matches!(read_volume(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
