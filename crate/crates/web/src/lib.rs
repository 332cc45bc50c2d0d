//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function returns a JSON string; the plain Rust functions
//! behind them are what the tests exercise.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use prokan::data::{generate_synthetic_cases, SynthParams};
use prokan::metrics::MetricReport;
use prokan::{next_hyperparameters, BinaryMask, HyperParams, KnotVector, Result, StackingPolicy};

#[derive(Debug, Serialize)]
pub struct BasisCurves {
    pub knots: Vec<f64>,
    pub xs: Vec<f64>,
    /// One row per basis function, sampled at `xs`.
    pub curves: Vec<Vec<f64>>,
    pub sum: Vec<f64>,
}

/// Samples every basis function of a clamped uniform knot vector on [-1, 1].
pub fn basis_curves(grid_size: usize, degree: usize, samples: usize) -> Result<BasisCurves> {
    let kv = KnotVector::uniform(-1.0, 1.0, grid_size, degree)?;
    let samples = samples.clamp(2, 2000);
    let xs: Vec<f64> = (0..samples)
        .map(|i| -1.0 + 2.0 * i as f64 / (samples - 1) as f64)
        .collect();
    let curves: Vec<Vec<f64>> = (0..kv.num_basis())
        .map(|i| xs.iter().map(|&x| kv.basis(i, x)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let sum = (0..xs.len()).map(|j| curves.iter().map(|c| c[j]).sum()).collect();
    Ok(BasisCurves {
        knots: kv.knots().to_vec(),
        xs,
        curves,
        sum,
    })
}

/// Hyperparameters for blocks `0..blocks` under the given schedule constants.
#[allow(clippy::too_many_arguments)]
pub fn growth_schedule(
    grid_size: usize,
    degree: usize,
    learning_rate: f64,
    l2_lambda: f64,
    delta_grid: usize,
    delta_degree: usize,
    delta_lambda: f64,
    alpha: f64,
    blocks: usize,
) -> Result<Vec<HyperParams>> {
    let policy = StackingPolicy {
        grid_size,
        degree,
        learning_rate,
        l2_lambda,
        delta_grid,
        delta_degree,
        delta_lambda,
        alpha,
        max_blocks: blocks.max(1),
        ..StackingPolicy::default()
    };
    policy.validate()?;
    let mut rows = vec![HyperParams::initial(&policy)];
    while rows.len() < policy.max_blocks {
        let next = next_hyperparameters(rows.last().expect("non-empty"), &policy);
        rows.push(next);
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
pub struct SliceView {
    pub dims: [usize; 3],
    pub z: usize,
    /// Intensities of slice `z`, x fastest.
    pub intensity: Vec<f32>,
    pub truth: Vec<bool>,
    pub prediction: Vec<bool>,
    /// Whole-volume metrics of the thresholded prediction.
    pub metrics: MetricReport,
}

/// Generates one synthetic 16³ case, segments it by intensity threshold and
/// scores the result against the ground truth.
pub fn threshold_segmentation(seed: u64, noise_sigma: f64, contrast: f64, threshold: f64, z: usize) -> Result<SliceView> {
    let params = SynthParams {
        n_cases: 1,
        noise_sigma,
        contrast,
        ..SynthParams::default()
    };
    let case = generate_synthetic_cases(seed, &params)?.remove(0);
    let dims = case.volume.dims();
    let pred = BinaryMask::new(
        dims,
        case.volume.intensities().iter().map(|&v| f64::from(v) > threshold).collect(),
    )?;
    let metrics = MetricReport::compute(&case.case_id, &pred, &case.mask, case.volume.spacing())?;
    let z = z.min(dims[2] - 1);
    let plane = dims[0] * dims[1];
    let range = z * plane..(z + 1) * plane;
    Ok(SliceView {
        dims,
        z,
        intensity: case.volume.intensities()[range.clone()].to_vec(),
        truth: case.mask.voxels()[range.clone()].to_vec(),
        prediction: pred.voxels()[range].to_vec(),
        metrics,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = basisCurves)]
pub fn basis_curves_js(grid_size: usize, degree: usize, samples: usize) -> std::result::Result<String, JsError> {
    to_js(basis_curves(grid_size, degree, samples))
}

#[wasm_bindgen(js_name = growthSchedule)]
#[allow(clippy::too_many_arguments)]
pub fn growth_schedule_js(
    grid_size: usize,
    degree: usize,
    learning_rate: f64,
    l2_lambda: f64,
    delta_grid: usize,
    delta_degree: usize,
    delta_lambda: f64,
    alpha: f64,
    blocks: usize,
) -> std::result::Result<String, JsError> {
    to_js(growth_schedule(
        grid_size,
        degree,
        learning_rate,
        l2_lambda,
        delta_grid,
        delta_degree,
        delta_lambda,
        alpha,
        blocks,
    ))
}

#[wasm_bindgen(js_name = thresholdSegmentation)]
pub fn threshold_segmentation_js(
    seed: u32,
    noise_sigma: f64,
    contrast: f64,
    threshold: f64,
    z: usize,
) -> std::result::Result<String, JsError> {
    to_js(threshold_segmentation(u64::from(seed), noise_sigma, contrast, threshold, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_curves_partition_unity() {
        let b = basis_curves(5, 3, 101).unwrap();
        assert_eq!(b.curves.len(), 8);
        assert_eq!(b.knots.len(), 12);
        assert!(b.sum.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!(basis_curves(0, 3, 10).is_err());
    }

    #[test]
    fn schedule_rows() {
        let rows = growth_schedule(5, 3, 0.01, 1e-4, 3, 0, 1e-4, 0.5, 4).unwrap();
        let grids: Vec<usize> = rows.iter().map(|r| r.grid_size).collect();
        assert_eq!(grids, [5, 8, 11, 14]);
        assert_eq!(rows[1].learning_rate, 1.0 / 150.0);
        assert!(growth_schedule(5, 3, 0.01, 1e-4, 3, 1, 1e-4, 0.5, 4).is_err());
    }

    #[test]
    fn noiseless_threshold_is_perfect() {
        let v = threshold_segmentation(1, 0.0, 1.0, 0.5, 8).unwrap();
        assert_eq!(v.intensity.len(), 256);
        assert_eq!(v.truth, v.prediction);
        assert_eq!(v.metrics.accuracy, 1.0);
        let noisy = threshold_segmentation(1, 0.4, 1.0, 0.5, 8).unwrap();
        assert!(noisy.metrics.accuracy < 1.0);
        assert_eq!(threshold_segmentation(1, 0.0, 1.0, 0.5, 99).unwrap().z, 15);
    }
}
