//! Trainable tensors stored as one flat buffer.
//!
//! All parameters live in a single `Vec<F>` laid out in a fixed declared
//! order (embeddings, per-layer attention/feed-forward/layer-norm blocks,
//! classifier). Optimizers treat the buffer as a plain vector; the encoder
//! reads shaped views at computed offsets; checkpoints dump tensors in
//! layout order.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::ModelConfig;
use crate::real::Real;
use crate::rng::seeded_rng;

/// Gaussian init width for weight matrices and embeddings.
const INIT_STD: f64 = 0.02;

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TensorKind {
    /// Seeded Gaussian, std 0.02.
    Weight,
    /// Zeros.
    Bias,
    /// Ones (layer-norm gains).
    Gain,
}

/// Shape and position of one tensor in the flat buffer.
#[derive(Debug, Clone)]
pub(crate) struct TensorSpec {
    pub name: String,
    pub rows: usize,
    /// 1 for vectors.
    pub cols: usize,
    pub kind: TensorKind,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Byte offsets of the per-layer block, relative to the layer base.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerRanges {
    pub wq: (usize, usize),
    pub bq: (usize, usize),
    pub wk: (usize, usize),
    pub bk: (usize, usize),
    pub wv: (usize, usize),
    pub bv: (usize, usize),
    pub wo: (usize, usize),
    pub bo: (usize, usize),
    pub ln1_g: (usize, usize),
    pub ln1_b: (usize, usize),
    pub w1: (usize, usize),
    pub b1: (usize, usize),
    pub w2: (usize, usize),
    pub b2: (usize, usize),
    pub ln2_g: (usize, usize),
    pub ln2_b: (usize, usize),
}

impl ModelConfig {
    fn emb_off(&self) -> usize {
        0
    }

    fn pos_off(&self) -> usize {
        self.vocab_size * self.hidden
    }

    fn layers_off(&self) -> usize {
        self.pos_off() + self.max_len * self.hidden
    }

    fn per_layer_len(&self) -> usize {
        let d = self.hidden;
        let f = self.ff_dim();
        4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d
    }

    fn classifier_off(&self) -> usize {
        self.layers_off() + self.layers * self.per_layer_len()
    }

    /// Total trainable values; a pure function of the architecture.
    pub fn param_count(&self) -> usize {
        self.classifier_off() + self.hidden * crate::tags::Tag::COUNT + crate::tags::Tag::COUNT
    }

    pub(crate) fn tok_emb_range(&self) -> Range<usize> {
        self.emb_off()..self.emb_off() + self.vocab_size * self.hidden
    }

    pub(crate) fn pos_emb_range(&self) -> Range<usize> {
        self.pos_off()..self.pos_off() + self.max_len * self.hidden
    }

    pub(crate) fn layer_ranges(&self, layer: usize) -> LayerRanges {
        let d = self.hidden;
        let f = self.ff_dim();
        let mut cursor = self.layers_off() + layer * self.per_layer_len();
        let mut take = |len: usize| {
            let start = cursor;
            cursor += len;
            (start, cursor)
        };
        LayerRanges {
            wq: take(d * d),
            bq: take(d),
            wk: take(d * d),
            bk: take(d),
            wv: take(d * d),
            bv: take(d),
            wo: take(d * d),
            bo: take(d),
            ln1_g: take(d),
            ln1_b: take(d),
            w1: take(d * f),
            b1: take(f),
            w2: take(f * d),
            b2: take(d),
            ln2_g: take(d),
            ln2_b: take(d),
        }
    }

    pub(crate) fn cls_w_range(&self) -> Range<usize> {
        let start = self.classifier_off();
        start..start + self.hidden * crate::tags::Tag::COUNT
    }

    pub(crate) fn cls_b_range(&self) -> Range<usize> {
        let start = self.classifier_off() + self.hidden * crate::tags::Tag::COUNT;
        start..start + crate::tags::Tag::COUNT
    }

    /// Every tensor in declared order, for init and serialization.
    pub(crate) fn tensor_specs(&self) -> Vec<TensorSpec> {
        use TensorKind::*;
        let d = self.hidden;
        let f = self.ff_dim();
        let n_tags = crate::tags::Tag::COUNT;
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, kind: TensorKind| {
            specs.push(TensorSpec {
                name,
                rows,
                cols,
                kind,
                offset,
            });
            offset += rows * cols;
        };
        push("tok_emb".into(), self.vocab_size, d, Weight);
        push("pos_emb".into(), self.max_len, d, Weight);
        for l in 0..self.layers {
            for (field, rows, cols, kind) in [
                ("wq", d, d, Weight),
                ("bq", d, 1, Bias),
                ("wk", d, d, Weight),
                ("bk", d, 1, Bias),
                ("wv", d, d, Weight),
                ("bv", d, 1, Bias),
                ("wo", d, d, Weight),
                ("bo", d, 1, Bias),
                ("ln1_g", d, 1, Gain),
                ("ln1_b", d, 1, Bias),
                ("w1", d, f, Weight),
                ("b1", f, 1, Bias),
                ("w2", f, d, Weight),
                ("b2", d, 1, Bias),
                ("ln2_g", d, 1, Gain),
                ("ln2_b", d, 1, Bias),
            ] {
                push(format!("layer{l}.{field}"), rows, cols, kind);
            }
        }
        push("cls_w".into(), d, n_tags, Weight);
        push("cls_b".into(), n_tags, 1, Bias);
        specs
    }
}

/// All trainable tensors of the encoder and shared classifier.
///
/// Gradients use the same representation ("params-shaped").
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Real> {
    config: ModelConfig,
    data: Vec<F>,
}

impl<F: Real> ModelParams<F> {
    /// Seeded initialization: Gaussian(0, 0.02) weights, zero biases and
    /// layer-norm offsets, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, "init");
        let mut data = vec![F::zero(); config.param_count()];
        for spec in config.tensor_specs() {
            match spec.kind {
                TensorKind::Weight => {
                    for v in &mut data[spec.range()] {
                        let g: f64 = rng.sample(StandardNormal);
                        *v = F::cast(g * INIT_STD);
                    }
                }
                TensorKind::Bias => {}
                TensorKind::Gain => data[spec.range()].fill(F::one()),
            }
        }
        Self { config, data }
    }

    /// All-zero buffer with the same layout (gradient accumulator).
    pub fn zeros(config: ModelConfig) -> Self {
        let data = vec![F::zero(); config.param_count()];
        Self { config, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone())
    }

    pub fn from_data(config: ModelConfig, data: Vec<F>) -> crate::error::Result<Self> {
        if data.len() != config.param_count() {
            return Err(crate::error::Error::CheckpointMismatch(format!(
                "parameter buffer has {} values, architecture needs {}",
                data.len(),
                config.param_count()
            )));
        }
        Ok(Self { config, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn values(&self) -> &[F] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<F> {
        self.data
    }

    /// Tensors in declared order as `(name, rows, cols, values)`.
    pub fn named_tensors(&self) -> Vec<(String, usize, usize, &[F])> {
        self.config
            .tensor_specs()
            .into_iter()
            .map(|spec| {
                let range = spec.range();
                (spec.name, spec.rows, spec.cols, &self.data[range])
            })
            .collect()
    }

    pub(crate) fn mat(&self, range: Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, F> {
        ArrayView2::from_shape((rows, cols), &self.data[range]).expect("layout shape")
    }

    pub(crate) fn vec1(&self, range: Range<usize>) -> ArrayView1<'_, F> {
        ArrayView1::from(&self.data[range])
    }

    pub(crate) fn tok_emb(&self) -> ArrayView2<'_, F> {
        self.mat(
            self.config.tok_emb_range(),
            self.config.vocab_size,
            self.config.hidden,
        )
    }

    pub(crate) fn pos_emb(&self) -> ArrayView2<'_, F> {
        self.mat(
            self.config.pos_emb_range(),
            self.config.max_len,
            self.config.hidden,
        )
    }

    /// Adds a matrix contribution into the flat buffer at `range`.
    pub(crate) fn add_mat(&mut self, range: Range<usize>, m: &Array2<F>) {
        let dst = &mut self.data[range];
        debug_assert_eq!(dst.len(), m.len());
        for (d, &s) in dst.iter_mut().zip(m.iter()) {
            *d = *d + s;
        }
    }

    pub(crate) fn add_vec(&mut self, range: Range<usize>, v: &Array1<F>) {
        let dst = &mut self.data[range];
        debug_assert_eq!(dst.len(), v.len());
        for (d, &s) in dst.iter_mut().zip(v.iter()) {
            *d = *d + s;
        }
    }

    /// Adds `row` into embedding row `index` of the tensor at `base`.
    pub(crate) fn add_row(&mut self, base: usize, index: usize, row: ArrayView1<'_, F>) {
        let d = self.config.hidden;
        let dst = &mut self.data[base + index * d..base + (index + 1) * d];
        for (d, &s) in dst.iter_mut().zip(row.iter()) {
            *d = *d + s;
        }
    }

    pub(crate) fn tok_emb_base(&self) -> usize {
        self.config.tok_emb_range().start
    }

    pub(crate) fn pos_emb_base(&self) -> usize {
        self.config.pos_emb_range().start
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::new(11, 16, 2, 2, 8).unwrap()
    }

    #[test]
    fn layout_is_contiguous_and_complete() {
        let config = cfg();
        let specs = config.tensor_specs();
        let mut expected = 0;
        for spec in &specs {
            assert_eq!(spec.offset, expected, "{}", spec.name);
            expected += spec.len();
        }
        assert_eq!(expected, config.param_count());
        assert_eq!(specs.last().unwrap().name, "cls_b");
    }

    #[test]
    fn param_count_is_pure_function_of_dims() {
        let c = cfg();
        let d = 8usize;
        let per_layer = 4 * (d * d + d) + 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d) + 2 * d;
        let expect = 11 * d + 16 * d + 2 * per_layer + d * 4 + 4;
        assert_eq!(c.param_count(), expect);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelParams::<f64>::init(cfg(), 9);
        let b = ModelParams::<f64>::init(cfg(), 9);
        assert_eq!(a.values(), b.values());
        let c = ModelParams::<f64>::init(cfg(), 10);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn init_kinds_respected() {
        let p = ModelParams::<f64>::init(cfg(), 1);
        let config = cfg();
        for spec in config.tensor_specs() {
            let vals = &p.values()[spec.range()];
            match spec.kind {
                TensorKind::Bias => assert!(vals.iter().all(|&v| v == 0.0), "{}", spec.name),
                TensorKind::Gain => assert!(vals.iter().all(|&v| v == 1.0), "{}", spec.name),
                TensorKind::Weight => {
                    assert!(vals.iter().any(|&v| v != 0.0), "{}", spec.name);
                    assert!(vals.iter().all(|&v| v.abs() < 0.5), "{}", spec.name);
                }
            }
        }
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(ModelConfig::new(10, 16, 1, 3, 8).is_err());
        assert!(ModelConfig::new(10, 3, 1, 2, 8).is_err());
    }
}
