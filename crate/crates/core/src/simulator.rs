//! Deterministic toy pre-norm residual network.
//!
//! Each layer computes `X⁽ℓ⁺¹⁾ = X⁽ℓ⁾ + f⁽ℓ⁾(X⁽ℓ⁾)` with
//! `f(x) = tanh(RMSNorm(x) · W_in) · W_out` and a hidden width of `2C`.
//! Rows are tokens and are processed independently, so any batching of the
//! same tokens gives the same result.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ActivationMatrix, Matrix};
use crate::recovery::{apply_operator, Operator};

const RMS_EPS: f64 = 1e-6;
/// Weight scale numerator; entries are `N(0, 1) · WEIGHT_GAIN / √C_ff`.
const WEIGHT_GAIN: f64 = 0.5;
const AUDIT_TOKENS: usize = 256;

const STREAM_HEAD: u64 = 1 << 32;
const STREAM_BASIS: u64 = (1 << 32) + 1;
const STREAM_FIXTURE: u64 = (1 << 32) + 2;

/// Persisted model description; the weights are a pure function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    /// Weight of the low-rank component mixed into sampled inputs.
    pub structure_mix: f64,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 12,
            hidden_dim: 64,
            seed: 7,
            structure_mix: 0.5,
            vocab_size: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::config("model.num_layers", "must be at least 2"));
        }
        if self.hidden_dim < 2 {
            return Err(Error::config("model.hidden_dim", "must be at least 2"));
        }
        if !(self.structure_mix >= 0.0 && self.structure_mix.is_finite()) {
            return Err(Error::config(
                "model.structure_mix",
                "must be finite and >= 0",
            ));
        }
        if self.vocab_size == 0 {
            return Err(Error::config("model.vocab_size", "must be positive"));
        }
        Ok(())
    }
}

/// A pruned block `{start, …, start + count − 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundarySpec {
    start: usize,
    count: usize,
}

impl BoundarySpec {
    pub fn new(start: usize, count: usize, num_layers: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Domain(
                "a pruned block needs at least one layer".into(),
            ));
        }
        if start + count > num_layers {
            return Err(Error::Domain(format!(
                "block [{start}, {}) exceeds {num_layers} layers",
                start + count
            )));
        }
        Ok(BoundarySpec { start, count })
    }

    /// Index `ℓ*` of the first pruned layer.
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Index `ℓ* + n` of the first surviving layer.
    pub fn post(&self) -> usize {
        self.start + self.count
    }

    pub fn layers(&self) -> Range<usize> {
        self.start..self.post()
    }
}

/// Boundary activations `X_pre`, `X_post` and their gap `Δ = X_post − X_pre`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationPair {
    pre: ActivationMatrix,
    post: ActivationMatrix,
    gap: ActivationMatrix,
}

impl ActivationPair {
    pub fn new(pre: ActivationMatrix, post: ActivationMatrix) -> Result<Self> {
        let gap = post.sub(&pre)?;
        Ok(ActivationPair { pre, post, gap })
    }

    pub fn pre(&self) -> &ActivationMatrix {
        &self.pre
    }

    pub fn post(&self) -> &ActivationMatrix {
        &self.post
    }

    pub fn gap(&self) -> &ActivationMatrix {
        &self.gap
    }

    pub fn token_count(&self) -> usize {
        self.pre.rows()
    }

    pub fn dim(&self) -> usize {
        self.pre.cols()
    }

    pub fn into_parts(self) -> (ActivationMatrix, ActivationMatrix) {
        (self.pre, self.post)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams {
    /// `tanh(RMSNorm(x) · w_in) · w_out`.
    Mlp {
        norm_gain: Vec<f64>,
        w_in: Matrix,
        w_out: Matrix,
    },
    /// `x · map`; used for exact-recovery fixtures.
    Linear { map: Matrix },
}

/// Sampler for calibration and evaluation tokens: i.i.d. unit normal rows
/// plus `mix` times a rank-`C/8` component with a fixed per-model basis.
#[derive(Clone, Debug, PartialEq)]
pub struct InputDistribution {
    mix: f64,
    basis: Matrix,
}

impl InputDistribution {
    pub fn rank(&self) -> usize {
        self.basis.rows()
    }

    pub fn sample(&self, tokens: usize, seed: u64) -> Matrix {
        let c = self.basis.cols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = gaussian(&mut rng, tokens, c, 1.0);
        if self.mix == 0.0 {
            return noise;
        }
        let coeff = gaussian(&mut rng, tokens, self.rank(), self.mix);
        let structured = coeff.matmul(&self.basis).expect("rank matches");
        noise.add(&structured).expect("same shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    layers: Vec<LayerParams>,
    output_head: Matrix,
    inputs: InputDistribution,
}

/// Builds the toy model with the default structure mix and vocabulary.
pub fn build_toy_model(num_layers: usize, hidden_dim: usize, seed: u64) -> Result<ToyModel> {
    ToyModel::from_config(&ModelConfig {
        num_layers,
        hidden_dim,
        seed,
        ..ModelConfig::default()
    })
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ToyModel {
    pub fn from_config(config: &ModelConfig) -> Result<ToyModel> {
        config.validate()?;
        let c = config.hidden_dim;
        let ff = 2 * c;
        let scale = WEIGHT_GAIN / (ff as f64).sqrt();
        let layers = (0..config.num_layers)
            .map(|l| {
                let mut rng = stream_rng(config.seed, l as u64);
                let norm_gain = (0..c)
                    .map(|_| 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                LayerParams::Mlp {
                    norm_gain,
                    w_in: gaussian(&mut rng, c, ff, scale),
                    w_out: gaussian(&mut rng, ff, c, scale),
                }
            })
            .collect();
        let mut rng = stream_rng(config.seed, STREAM_HEAD);
        let output_head = gaussian(&mut rng, c, config.vocab_size, 1.0 / (c as f64).sqrt());
        let rank = (c / 8).max(1);
        let mut rng = stream_rng(config.seed, STREAM_BASIS);
        let inputs = InputDistribution {
            mix: config.structure_mix,
            basis: gaussian(&mut rng, rank, c, 1.0),
        };
        let mut model = ToyModel {
            config: config.clone(),
            layers,
            output_head,
            inputs,
        };
        model.enforce_contraction();
        Ok(model)
    }

    /// Audits `‖f(x)‖/‖x‖` on unit-normal tokens and shrinks any layer whose
    /// worst token exceeds 1.
    fn enforce_contraction(&mut self) {
        let probe = {
            let mut rng = stream_rng(self.config.seed, STREAM_FIXTURE + 1);
            gaussian(&mut rng, AUDIT_TOKENS, self.hidden_dim(), 1.0)
        };
        for l in 0..self.layers.len() {
            let ratio = self.max_update_ratio(l, &probe);
            if ratio > 1.0 {
                if let LayerParams::Mlp { w_out, .. } = &mut self.layers[l] {
                    *w_out = w_out.scale(0.9 / ratio);
                }
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn output_head(&self) -> &Matrix {
        &self.output_head
    }

    pub fn input_distribution(&self) -> &InputDistribution {
        &self.inputs
    }

    /// `tokens` rows drawn from the model's input distribution.
    pub fn sample_inputs(&self, tokens: usize, seed: u64) -> Matrix {
        self.inputs.sample(tokens, seed)
    }

    pub fn boundary(&self, start: usize, count: usize) -> Result<BoundarySpec> {
        BoundarySpec::new(start, count, self.num_layers())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.hidden_dim() {
            return Err(Error::shape(
                "forward",
                format!(
                    "input has {} channels, model has {}",
                    x.cols(),
                    self.hidden_dim()
                ),
            ));
        }
        Ok(())
    }

    /// The residual update `f⁽ℓ⁾(x)` alone.
    pub fn layer_update(&self, layer: usize, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        match &self.layers[layer] {
            LayerParams::Mlp {
                norm_gain,
                w_in,
                w_out,
            } => {
                let c = x.cols() as f64;
                let mut normed = x.clone();
                for i in 0..x.rows() {
                    let row = normed.row_mut(i);
                    let ms = row.iter().map(|v| v * v).sum::<f64>() / c;
                    let inv = 1.0 / (ms + RMS_EPS).sqrt();
                    for (v, g) in row.iter_mut().zip(norm_gain) {
                        *v *= inv * g;
                    }
                }
                let hidden = normed.matmul(w_in)?.map(f64::tanh);
                hidden.matmul(w_out)
            }
            LayerParams::Linear { map } => x.matmul(map),
        }
    }

    /// `x + f⁽ℓ⁾(x)`.
    pub fn apply_layer(&self, layer: usize, x: &Matrix) -> Result<Matrix> {
        let mut out = self.layer_update(layer, x)?;
        out.add_assign(x)?;
        Ok(out)
    }

    /// Runs the layers in `range` in order.
    pub fn run_layers(&self, x: &Matrix, range: Range<usize>) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in range {
            h = self.apply_layer(l, &h)?;
        }
        Ok(h)
    }

    /// All `L + 1` hidden states `X⁽⁰⁾ … X⁽ᴸ⁾` of the dense model.
    pub fn layer_states(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let mut states = Vec::with_capacity(self.num_layers() + 1);
        states.push(x.clone());
        for l in 0..self.num_layers() {
            let next = self.apply_layer(l, &states[l])?;
            states.push(next);
        }
        Ok(states)
    }

    pub fn dense_forward(&self, x: &Matrix) -> Result<Matrix> {
        self.run_layers(x, 0..self.num_layers())
    }

    /// Inputs to layers `ℓ*` and `ℓ* + n` of the unpruned model.
    pub fn forward_capture(&self, x: &Matrix, spec: &BoundarySpec) -> Result<ActivationPair> {
        self.check_spec(spec)?;
        let pre = self.run_layers(x, 0..spec.start())?;
        let post = self.run_layers(&pre, spec.layers())?;
        ActivationPair::new(pre, post)
    }

    /// Final hidden state with `spec` removed and `op` (identity if `None`)
    /// applied to the state entering the first surviving layer.
    pub fn forward_pruned(
        &self,
        x: &Matrix,
        spec: &BoundarySpec,
        op: Option<&Operator>,
    ) -> Result<Matrix> {
        self.forward_pruned_regions(x, &[PrunedRegion { spec: *spec, op }])
    }

    /// Like [`forward_pruned`](Self::forward_pruned) with several disjoint
    /// blocks removed, each with its own operator.
    pub fn forward_pruned_regions(
        &self,
        x: &Matrix,
        regions: &[PrunedRegion<'_>],
    ) -> Result<Matrix> {
        self.check_input(x)?;
        let mut sorted: Vec<&PrunedRegion<'_>> = regions.iter().collect();
        sorted.sort_by_key(|r| r.spec.start());
        let mut h = x.clone();
        let mut next = 0;
        for region in sorted {
            self.check_spec(&region.spec)?;
            if region.spec.start() < next {
                return Err(Error::Domain("pruned regions overlap".into()));
            }
            h = self.run_layers(&h, next..region.spec.start())?;
            if let Some(op) = region.op {
                h = apply_operator(&h, op)?;
            }
            next = region.spec.post();
        }
        self.run_layers(&h, next..self.num_layers())
    }

    /// Toy-vocabulary logits `hidden · output_head`.
    pub fn logits(&self, hidden: &Matrix) -> Result<Matrix> {
        hidden.matmul(&self.output_head)
    }

    fn check_spec(&self, spec: &BoundarySpec) -> Result<()> {
        if spec.post() > self.num_layers() {
            return Err(Error::Domain(format!(
                "block [{}, {}) exceeds {} layers",
                spec.start(),
                spec.post(),
                self.num_layers()
            )));
        }
        Ok(())
    }

    /// Worst per-token `‖f⁽ℓ⁾(x_t)‖ / ‖x_t‖` over the rows of `x`.
    pub fn max_update_ratio(&self, layer: usize, x: &Matrix) -> f64 {
        let f = self
            .layer_update(layer, x)
            .expect("probe matches hidden_dim");
        (0..x.rows())
            .map(|t| {
                let num = f.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
                let den = x.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
                if den == 0.0 {
                    0.0
                } else {
                    num / den
                }
            })
            .fold(0.0, f64::max)
    }

    /// Copy of the model with every layer in `range` replaced by `f ≡ 0`.
    pub fn with_zero_layers(&self, range: Range<usize>) -> ToyModel {
        let mut out = self.clone();
        let c = self.hidden_dim();
        for l in range {
            out.layers[l] = LayerParams::Mlp {
                norm_gain: vec![1.0; c],
                w_in: Matrix::zeros(c, 2 * c),
                w_out: Matrix::zeros(2 * c, c),
            };
        }
        out
    }

    /// Copy of the model whose block `spec` is replaced by random linear
    /// layers `x ↦ x + x·Aₖ`, with `Aₖ` entries of size `scale/√C`.
    ///
    /// The gap across the block is then exactly `X_pre · (Π(I + Aₖ) − I)`;
    /// see [`block_linear_map`](Self::block_linear_map).
    pub fn with_linear_block(
        &self,
        spec: &BoundarySpec,
        seed: u64,
        scale: f64,
    ) -> Result<ToyModel> {
        self.check_spec(spec)?;
        let c = self.hidden_dim();
        let mut rng = stream_rng(seed, STREAM_FIXTURE);
        let mut out = self.clone();
        for l in spec.layers() {
            out.layers[l] = LayerParams::Linear {
                map: gaussian(&mut rng, c, c, scale / (c as f64).sqrt()),
            };
        }
        Ok(out)
    }

    /// `Π (I + Aₖ)` over the block when every layer in it is linear.
    pub fn block_linear_map(&self, spec: &BoundarySpec) -> Option<Matrix> {
        let c = self.hidden_dim();
        let mut acc = Matrix::identity(c);
        for l in spec.layers() {
            let LayerParams::Linear { map } = self.layers.get(l)? else {
                return None;
            };
            let step = Matrix::identity(c).add(map).ok()?;
            acc = acc.matmul(&step).ok()?;
        }
        Some(acc)
    }
}

/// One removed block and the operator inserted in its place.
#[derive(Clone, Copy, Debug)]
pub struct PrunedRegion<'a> {
    pub spec: BoundarySpec,
    pub op: Option<&'a Operator>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let a = build_toy_model(12, 64, 7).unwrap();
        let b = build_toy_model(12, 64, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_toy_model(12, 64, 8).unwrap());
    }

    #[test]
    fn tiny_model_zero_input_is_finite() {
        let m = build_toy_model(2, 2, 0).unwrap();
        let out = m.dense_forward(&Matrix::zeros(3, 2)).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn update_norms_are_contractive() {
        let m = build_toy_model(12, 64, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = gaussian(&mut rng, 1000, 64, 1.0);
        for l in 0..12 {
            let r = m.max_update_ratio(l, &x);
            assert!(r > 0.0 && r <= 1.0, "layer {l}: {r}");
        }
    }

    #[test]
    fn boundary_spec_validation() {
        assert!(BoundarySpec::new(0, 0, 4).is_err());
        assert!(BoundarySpec::new(2, 3, 4).is_err());
        let s = BoundarySpec::new(1, 3, 4).unwrap();
        assert_eq!((s.start(), s.count(), s.post()), (1, 3, 4));
    }

    #[test]
    fn capture_at_layer_zero_sees_raw_input() {
        let m = build_toy_model(4, 8, 1).unwrap();
        let x = m.sample_inputs(10, 3);
        let pair = m.forward_capture(&x, &m.boundary(0, 2).unwrap()).unwrap();
        assert_eq!(pair.pre(), &x);
        assert_eq!(pair.gap(), &pair.post().sub(pair.pre()).unwrap());
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let m = build_toy_model(4, 8, 1).unwrap();
        let spec = m.boundary(1, 1).unwrap();
        assert!(matches!(
            m.forward_capture(&Matrix::zeros(3, 7), &spec),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn overlapping_regions_rejected() {
        let m = build_toy_model(6, 4, 1).unwrap();
        let x = m.sample_inputs(4, 0);
        let r = [
            PrunedRegion {
                spec: m.boundary(1, 2).unwrap(),
                op: None,
            },
            PrunedRegion {
                spec: m.boundary(2, 2).unwrap(),
                op: None,
            },
        ];
        assert!(m.forward_pruned_regions(&x, &r).is_err());
    }
}
