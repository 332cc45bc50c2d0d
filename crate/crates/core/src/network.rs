//! KAN layers, residual blocks and the progressively grown network.
//!
//! A layer computes `y_q = sum_p f_{p,q}(x_p)` where every edge `f_{p,q}` is a
//! spline over the layer's shared knot vector. Coefficients are stored flat,
//! edge-major: the `num_basis` coefficients of edge `(p, q)` start at
//! `(p * out_dim + q) * num_basis`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::HyperParams;
use crate::error::{Error, Result};
use crate::spline::{KnotVector, SplineFunction, MAX_DEGREE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    in_dim: usize,
    out_dim: usize,
    knots: KnotVector,
    coefficients: Vec<f64>,
}

impl KanLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, knots: KnotVector) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidNetwork("layer dimensions must be positive".into()));
        }
        let n = in_dim * out_dim * knots.num_basis();
        Ok(Self {
            in_dim,
            out_dim,
            knots,
            coefficients: vec![0.0; n],
        })
    }

    /// Coefficients drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        knots: KnotVector,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(in_dim, out_dim, knots)?;
        if scale > 0.0 {
            for c in &mut layer.coefficients {
                *c = rng.random_range(-scale..=scale);
            }
        }
        Ok(layer)
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, knots: KnotVector, coefficients: Vec<f64>) -> Result<Self> {
        let layer = Self::zeros(in_dim, out_dim, knots)?;
        if coefficients.len() != layer.coefficients.len() {
            return Err(Error::ShapeMismatch(format!(
                "layer {in_dim}x{out_dim} expects {} coefficients, got {}",
                layer.coefficients.len(),
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSpline("non-finite coefficient".into()));
        }
        Ok(Self { coefficients, ..layer })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn grid_size(&self) -> usize {
        self.knots.grid_size()
    }

    pub fn degree(&self) -> usize {
        self.knots.degree()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn num_parameters(&self) -> usize {
        self.coefficients.len()
    }

    fn edge_offset(&self, p: usize, q: usize) -> usize {
        (p * self.out_dim + q) * self.knots.num_basis()
    }

    /// The spline on the edge from input `p` to output `q`.
    pub fn edge(&self, p: usize, q: usize) -> SplineFunction {
        let nb = self.knots.num_basis();
        let off = self.edge_offset(p, q);
        SplineFunction::new(self.knots.clone(), self.coefficients[off..off + nb].to_vec())
            .expect("layer coefficients are always finite and sized")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let nb = self.knots.num_basis();
        let k = self.knots.degree();
        let mut row = [0.0; MAX_DEGREE + 1];
        out.fill(0.0);
        for (p, &xp) in x.iter().enumerate() {
            let first = self.knots.basis_row(xp, &mut row);
            let base = p * self.out_dim * nb + first;
            for (q, o) in out.iter_mut().enumerate() {
                let c = &self.coefficients[base + q * nb..base + q * nb + k + 1];
                let mut s = 0.0;
                for m in 0..=k {
                    s += row[m] * c[m];
                }
                *o += s;
            }
        }
    }

    /// Chain rule through [`forward`](Self::forward). Returns the gradient with
    /// respect to the input and the flat per-coefficient gradient.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        if upstream.len() != self.out_dim {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim,
                got: upstream.len(),
            });
        }
        let mut input_grad = vec![0.0; self.in_dim];
        let mut coeff_grad = vec![0.0; self.coefficients.len()];
        self.backward_accumulate(x, upstream, &mut input_grad, &mut coeff_grad);
        Ok((input_grad, coeff_grad))
    }

    /// Writes the input gradient into `input_grad` and adds coefficient
    /// gradients into `coeff_grad`.
    fn backward_accumulate(&self, x: &[f64], upstream: &[f64], input_grad: &mut [f64], coeff_grad: &mut [f64]) {
        let nb = self.knots.num_basis();
        let k = self.knots.degree();
        let mut row = [0.0; MAX_DEGREE + 1];
        let mut deriv = [0.0; MAX_DEGREE + 1];
        for (p, &xp) in x.iter().enumerate() {
            let first = self.knots.basis_row_with_derivatives(xp, &mut row, &mut deriv);
            let base = p * self.out_dim * nb + first;
            let mut gp = 0.0;
            for (q, &g) in upstream.iter().enumerate() {
                let off = base + q * nb;
                let c = &self.coefficients[off..off + k + 1];
                let mut d = 0.0;
                for m in 0..=k {
                    d += deriv[m] * c[m];
                }
                gp += g * d;
                let cg = &mut coeff_grad[off..off + k + 1];
                for m in 0..=k {
                    cg[m] += g * row[m];
                }
            }
            input_grad[p] = gp;
        }
    }
}

pub fn layer_forward(layer: &KanLayer, x: &[f64]) -> Result<Vec<f64>> {
    layer.forward(x)
}

pub fn layer_backward(layer: &KanLayer, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    layer.backward(x, upstream)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanBlock {
    layers: Vec<KanLayer>,
    residual: bool,
}

impl KanBlock {
    pub fn new(layers: Vec<KanLayer>, residual: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("block needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::InvalidNetwork(format!(
                    "layer chain broken: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        if residual && layers[0].in_dim != layers[layers.len() - 1].out_dim {
            return Err(Error::InvalidNetwork(
                "residual block must preserve its width".into(),
            ));
        }
        Ok(Self { layers, residual })
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn is_residual(&self) -> bool {
        self.residual
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(KanLayer::num_parameters).sum()
    }
}

/// Per-layer inputs recorded by [`ProKanNetwork::forward`], in layer order.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_inputs: Vec<Vec<f64>>,
    logit: f64,
}

impl ForwardCache {
    pub fn logit(&self) -> f64 {
        self.logit
    }

    pub fn layer_inputs(&self) -> &[Vec<f64>] {
        &self.layer_inputs
    }
}

/// Coefficient gradients for every layer, aligned with
/// [`ProKanNetwork::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &ProKanNetwork) -> Self {
        Self {
            layers: net.layers().map(|l| vec![0.0; l.num_parameters()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.layers.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-voxel classifier: a non-residual input block, any number of residual
/// blocks at `hidden_width`, and a single-logit head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProKanNetwork {
    input_dim: usize,
    hidden_width: usize,
    blocks: Vec<KanBlock>,
    output_head: KanLayer,
}

impl ProKanNetwork {
    pub fn from_parts(input_dim: usize, hidden_width: usize, blocks: Vec<KanBlock>, output_head: KanLayer) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidNetwork("network needs at least one block".into()));
        }
        if blocks[0].in_dim() != input_dim {
            return Err(Error::InvalidNetwork(format!(
                "first block takes {} inputs, network declares {input_dim}",
                blocks[0].in_dim()
            )));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.out_dim() != hidden_width {
                return Err(Error::InvalidNetwork(format!(
                    "block {i} outputs {} values, hidden width is {hidden_width}",
                    b.out_dim()
                )));
            }
            if i > 0 && b.in_dim() != hidden_width {
                return Err(Error::InvalidNetwork(format!("block {i} input width mismatch")));
            }
        }
        if output_head.in_dim != hidden_width || output_head.out_dim != 1 {
            return Err(Error::InvalidNetwork(format!(
                "output head must map {hidden_width} -> 1, got {} -> {}",
                output_head.in_dim, output_head.out_dim
            )));
        }
        Ok(Self {
            input_dim,
            hidden_width,
            blocks,
            output_head,
        })
    }

    /// Initial single-block network. Block-0 layers (`input_dim -> width ->
    /// width`) and the head are drawn uniformly from `[-init_scale, init_scale]`.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_width: usize,
        knots: &KnotVector,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let first = KanLayer::random(input_dim, hidden_width, knots.clone(), init_scale, rng)?;
        let second = KanLayer::random(hidden_width, hidden_width, knots.clone(), init_scale, rng)?;
        let head = KanLayer::random(hidden_width, 1, knots.clone(), init_scale, rng)?;
        Self::from_parts(
            input_dim,
            hidden_width,
            vec![KanBlock::new(vec![first, second], false)?],
            head,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn blocks(&self) -> &[KanBlock] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn output_head(&self) -> &KanLayer {
        &self.output_head
    }

    /// All layers in declared order: block layers first, head last.
    pub fn layers(&self) -> impl Iterator<Item = &KanLayer> {
        self.blocks
            .iter()
            .flat_map(|b| b.layers.iter())
            .chain(std::iter::once(&self.output_head))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut KanLayer> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.layers.iter_mut())
            .chain(std::iter::once(&mut self.output_head))
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.iter().map(|b| b.layers.len()).sum::<usize>() + 1
    }

    pub fn count_parameters(&self) -> usize {
        self.layers().map(KanLayer::num_parameters).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Logit only, without recording a cache.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        let mut buf = Vec::new();
        for block in &self.blocks {
            let block_in = h.clone();
            for layer in &block.layers {
                buf.resize(layer.out_dim, 0.0);
                layer.forward_into(&h, &mut buf);
                std::mem::swap(&mut h, &mut buf);
            }
            if block.residual {
                for (a, b) in h.iter_mut().zip(&block_in) {
                    *a += b;
                }
            }
        }
        let mut out = [0.0];
        self.output_head.forward_into(&h, &mut out);
        Ok(out[0])
    }

    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardCache)> {
        self.check_input(x)?;
        let mut layer_inputs = Vec::with_capacity(self.num_layers());
        let mut h = x.to_vec();
        for block in &self.blocks {
            let block_in = h.clone();
            for layer in &block.layers {
                let mut out = vec![0.0; layer.out_dim];
                layer.forward_into(&h, &mut out);
                layer_inputs.push(std::mem::replace(&mut h, out));
            }
            if block.residual {
                for (a, b) in h.iter_mut().zip(&block_in) {
                    *a += b;
                }
            }
        }
        let mut out = [0.0];
        self.output_head.forward_into(&h, &mut out);
        layer_inputs.push(h);
        let logit = out[0];
        Ok((logit, ForwardCache { layer_inputs, logit }))
    }

    /// Gradients of a loss with respect to every coefficient, given
    /// `loss_grad = dL/dlogit` and the cache of the matching forward call.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: f64) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        self.backward_accumulate(cache, loss_grad, &mut grads)?;
        Ok(grads)
    }

    /// Adds this sample's gradients into `grads`; returns `dL/dx`.
    pub fn backward_accumulate(&self, cache: &ForwardCache, loss_grad: f64, grads: &mut GradientSet) -> Result<Vec<f64>> {
        let n_layers = self.num_layers();
        if cache.layer_inputs.len() != n_layers || grads.layers.len() != n_layers {
            return Err(Error::StaleCache(format!(
                "network has {n_layers} layers, cache has {}",
                cache.layer_inputs.len()
            )));
        }
        for (layer, input) in self.layers().zip(&cache.layer_inputs) {
            if input.len() != layer.in_dim {
                return Err(Error::StaleCache(format!(
                    "cached input of width {} for a layer taking {}",
                    input.len(),
                    layer.in_dim
                )));
            }
        }
        for (layer, g) in self.layers().zip(&grads.layers) {
            if g.len() != layer.num_parameters() {
                return Err(Error::ShapeMismatch("gradient set does not match network".into()));
            }
        }

        let mut li = n_layers - 1;
        let mut upstream = vec![0.0; self.hidden_width];
        self.output_head.backward_accumulate(
            &cache.layer_inputs[li],
            &[loss_grad],
            &mut upstream,
            &mut grads.layers[li],
        );
        for block in self.blocks.iter().rev() {
            let block_out_grad = upstream.clone();
            for layer in block.layers.iter().rev() {
                li -= 1;
                let mut below = vec![0.0; layer.in_dim];
                layer.backward_accumulate(&cache.layer_inputs[li], &upstream, &mut below, &mut grads.layers[li]);
                upstream = below;
            }
            if block.residual {
                for (a, b) in upstream.iter_mut().zip(&block_out_grad) {
                    *a += b;
                }
            }
        }
        Ok(upstream)
    }

    /// Appends a zero-initialised residual block at `hidden_width` using the
    /// grid size and degree of `hp`. The network's output is unchanged.
    pub fn insert_block(&mut self, hp: &HyperParams, max_blocks: usize) -> Result<()> {
        if self.blocks.len() >= max_blocks {
            return Err(Error::MaxBlocksExceeded(self.blocks.len()));
        }
        let (lo, hi) = self.output_head.knots.domain();
        let knots = KnotVector::uniform(lo, hi, hp.grid_size, hp.degree)?;
        let w = self.hidden_width;
        let layers = vec![
            KanLayer::zeros(w, w, knots.clone())?,
            KanLayer::zeros(w, w, knots)?,
        ];
        self.blocks.push(KanBlock::new(layers, true)?);
        Ok(())
    }
}

pub fn network_forward(net: &ProKanNetwork, x: &[f64]) -> Result<(f64, ForwardCache)> {
    net.forward(x)
}

pub fn network_backward(net: &ProKanNetwork, cache: &ForwardCache, loss_grad: f64) -> Result<GradientSet> {
    net.backward(cache, loss_grad)
}

pub fn insert_block(net: &ProKanNetwork, hp: &HyperParams, max_blocks: usize) -> Result<ProKanNetwork> {
    let mut grown = net.clone();
    grown.insert_block(hp, max_blocks)?;
    Ok(grown)
}

pub fn count_parameters(net: &ProKanNetwork) -> usize {
    net.count_parameters()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn knots(g: usize, k: usize) -> KnotVector {
        KnotVector::uniform(-1.0, 1.0, g, k).unwrap()
    }

    fn hp(g: usize, k: usize) -> HyperParams {
        HyperParams {
            block_index: 1,
            grid_size: g,
            degree: k,
            learning_rate: 0.01,
            l2_lambda: 0.0,
        }
    }

    /// Relative error with an absolute floor, as used by every gradient test.
    fn rel_err(a: f64, b: f64) -> f64 {
        let diff = (a - b).abs();
        if diff <= 1e-8 {
            0.0
        } else {
            diff / a.abs().max(b.abs())
        }
    }

    #[test]
    fn zero_layer_outputs_zero() {
        let l = KanLayer::zeros(3, 2, knots(5, 3)).unwrap();
        assert_eq!(l.forward(&[0.1, -0.4, 0.9]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn constant_edges_add_up() {
        let kv = knots(5, 3);
        let nb = kv.num_basis();
        let mut coeffs = vec![1.5; nb];
        coeffs.extend(vec![2.5; nb]);
        let l = KanLayer::from_parts(2, 1, kv, coeffs).unwrap();
        let y = l.forward(&[0.3, -0.7]).unwrap();
        assert!((y[0] - 4.0).abs() < 1e-12);
        let (gin, _) = l.backward(&[0.3, -0.7], &[1.0]).unwrap();
        assert!(gin.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn greville_edge_is_identity() {
        let kv = knots(4, 1);
        let l = KanLayer::from_parts(1, 1, kv.clone(), kv.greville()).unwrap();
        for x in [-0.9, -0.25, 0.0, 0.6] {
            assert!((l.forward(&[x]).unwrap()[0] - x).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let l = KanLayer::zeros(3, 2, knots(3, 1)).unwrap();
        assert!(matches!(l.forward(&[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(l.backward(&[0.0; 3], &[1.0]).is_err());
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layer = KanLayer::random(3, 2, knots(5, 3), 0.8, &mut rng).unwrap();
        let x = [0.31, -0.52, 0.77];
        let up = [0.7, -1.3];
        let (gin, gc) = layer.backward(&x, &up).unwrap();
        let obj = |l: &KanLayer, x: &[f64]| -> f64 {
            l.forward(x).unwrap().iter().zip(&up).map(|(y, u)| y * u).sum()
        };
        let h = 1e-5;
        for p in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[p] += h;
            xm[p] -= h;
            let fd = (obj(&layer, &xp) - obj(&layer, &xm)) / (2.0 * h);
            assert!(rel_err(gin[p], fd) < 1e-4, "input {p}: {} vs {fd}", gin[p]);
        }
        for i in 0..layer.num_parameters() {
            let mut lp = layer.clone();
            let mut lm = layer.clone();
            lp.coefficients[i] += h;
            lm.coefficients[i] -= h;
            let fd = (obj(&lp, &x) - obj(&lm, &x)) / (2.0 * h);
            assert!(rel_err(gc[i], fd) < 1e-4, "coeff {i}");
        }
        let (z_in, z_c) = layer.backward(&x, &[0.0, 0.0]).unwrap();
        assert!(z_in.iter().chain(&z_c).all(|&g| g == 0.0));
    }

    #[test]
    fn edge_view_matches_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = KanLayer::random(2, 3, knots(4, 2), 1.0, &mut rng).unwrap();
        let x = [0.2, -0.6];
        let y = l.forward(&x).unwrap();
        for q in 0..3 {
            let manual: f64 = (0..2).map(|p| l.edge(p, q).eval(x[p])).sum();
            assert!((manual - y[q]).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_counts() {
        let l = KanLayer::zeros(1, 1, knots(5, 3)).unwrap();
        assert_eq!(l.num_parameters(), 8);
        let l2 = KanLayer::zeros(1, 2, knots(5, 3)).unwrap();
        assert_eq!(l2.num_parameters(), 16);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = ProKanNetwork::new(4, 8, &knots(5, 3), 0.1, &mut rng).unwrap();
        let before = net.count_parameters();
        net.insert_block(&hp(5, 3), 4).unwrap();
        assert_eq!(net.count_parameters() - before, 2 * 512);
    }

    #[test]
    fn insert_respects_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = ProKanNetwork::new(4, 4, &knots(5, 3), 0.1, &mut rng).unwrap();
        for _ in 0..3 {
            net.insert_block(&hp(5, 3), 4).unwrap();
        }
        assert!(matches!(net.insert_block(&hp(5, 3), 4), Err(Error::MaxBlocksExceeded(4))));
    }

    #[test]
    fn zero_residual_block_passes_gradient_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = ProKanNetwork::new(3, 3, &knots(3, 2), 0.3, &mut rng).unwrap();
        let x = [0.1, 0.2, -0.3];
        let (_, c0) = net.forward(&x).unwrap();
        let mut g0 = GradientSet::zeros_like(&net);
        let dx0 = net.backward_accumulate(&c0, 1.0, &mut g0).unwrap();
        net.insert_block(&hp(4, 2), 3).unwrap();
        let (_, c1) = net.forward(&x).unwrap();
        let mut g1 = GradientSet::zeros_like(&net);
        let dx1 = net.backward_accumulate(&c1, 1.0, &mut g1).unwrap();
        assert_eq!(dx0, dx1);
        // Same gradients for the shared layers; the head sits last in both.
        assert_eq!(g0.layers[0], g1.layers[0]);
        assert_eq!(g0.layers[1], g1.layers[1]);
        assert_eq!(g0.layers[2], g1.layers[4]);
    }

    #[test]
    fn stale_cache_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = ProKanNetwork::new(3, 3, &knots(3, 2), 0.3, &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.0, 0.0, 0.0]).unwrap();
        net.insert_block(&hp(3, 2), 3).unwrap();
        assert!(matches!(net.backward(&cache, 1.0), Err(Error::StaleCache(_))));
    }

    #[test]
    fn composition_matches_manual_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = ProKanNetwork::new(4, 3, &knots(5, 3), 0.4, &mut rng).unwrap();
        net.insert_block(&hp(8, 3), 4).unwrap();
        for l in net.layers_mut() {
            for c in l.coefficients_mut() {
                *c = rng.random_range(-0.3..0.3);
            }
        }
        let x = [0.2, -0.1, 0.5, -0.9];
        let b = net.blocks();
        let h = b[0].layers()[1].forward(&b[0].layers()[0].forward(&x).unwrap()).unwrap();
        let body = b[1].layers()[1].forward(&b[1].layers()[0].forward(&h).unwrap()).unwrap();
        let h2: Vec<f64> = body.iter().zip(&h).map(|(a, b)| a + b).collect();
        let manual = net.output_head().forward(&h2).unwrap()[0];
        let (logit, _) = net.forward(&x).unwrap();
        assert_eq!(logit, manual);
        assert_eq!(net.predict(&x).unwrap(), logit);
    }

    #[test]
    fn constant_edge_network_logit() {
        // 1 -> 1 block with constant edges, head reading the hidden value
        // through a Greville (identity) spline.
        let kv = knots(3, 1);
        let c = 0.4;
        let l0 = KanLayer::from_parts(1, 1, kv.clone(), vec![c; kv.num_basis()]).unwrap();
        let l1 = KanLayer::from_parts(1, 1, kv.clone(), kv.greville()).unwrap();
        let head = KanLayer::from_parts(1, 1, kv.clone(), kv.greville()).unwrap();
        let net = ProKanNetwork::from_parts(1, 1, vec![KanBlock::new(vec![l0, l1], false).unwrap()], head).unwrap();
        for x in [-0.7, 0.0, 0.9] {
            assert!((net.predict(&[x]).unwrap() - c).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_topology() {
        let kv = knots(3, 1);
        let a = KanLayer::zeros(2, 3, kv.clone()).unwrap();
        let b = KanLayer::zeros(2, 3, kv.clone()).unwrap();
        assert!(KanBlock::new(vec![a.clone(), b], false).is_err());
        assert!(KanBlock::new(vec![a.clone()], true).is_err());
        let head = KanLayer::zeros(3, 2, kv).unwrap();
        let block = KanBlock::new(vec![a], false).unwrap();
        assert!(ProKanNetwork::from_parts(2, 3, vec![block], head).is_err());
    }
}
