//! Encoder forward/backward pass, cross-entropy loss and prediction.
//!
//! The forward pass caches every activation needed for exact
//! backpropagation; gradients are accumulated analytically, no autograd.
//! Loss and predictions cover text positions only — the special tokens
//! steer the encoder but contribute nothing to the objective.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::LayerRanges;
use super::{AugmentedInput, ModelParams};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tags::Tag;

const LN_EPS: f64 = 1e-12;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// How per-position losses are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossReduction {
    /// Plain sum over all text positions.
    Sum,
    /// Mean over all text positions; keeps learning rates scale-stable
    /// across batch sizes.
    Mean,
}

impl LossReduction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!(
                "loss_reduction must be sum or mean, got {other:?}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sum => "sum",
            Self::Mean => "mean",
        }
    }
}

/// Training-time dropout: active only when a rate and seeded generator are
/// supplied; evaluation runs without it.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn reborrow(&mut self) -> Dropout<'_> {
        Dropout {
            rate: self.rate,
            rng: self.rng,
        }
    }
}

struct LnTrace<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

struct LayerTrace<F> {
    x_in: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Per-head attention weights, each `T×T` with softmax rows.
    attn: Vec<Array2<F>>,
    /// Concatenated head outputs before the output projection.
    heads: Array2<F>,
    attn_mask: Option<Array2<F>>,
    ln1: LnTrace<F>,
    x_mid: Array2<F>,
    ff_pre: Array2<F>,
    ff_act: Array2<F>,
    ff_mask: Option<Array2<F>>,
    ln2: LnTrace<F>,
}

/// Cached activations of one forward pass plus the per-position label
/// distributions.
pub struct ForwardTrace<F: Real> {
    layers: Vec<LayerTrace<F>>,
    hidden: Array2<F>,
    pub logits: Array2<F>,
    /// Softmax rows, one distribution over `{B,M,E,S}` per position.
    pub probs: Array2<F>,
    pub log_probs: Array2<F>,
}

fn gelu<F: Real>(x: F) -> F {
    let c = F::cast(SQRT_2_OVER_PI);
    let k = F::cast(GELU_C);
    let half = F::cast(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::cast(SQRT_2_OVER_PI);
    let k = F::cast(GELU_C);
    let half = F::cast(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + F::cast(3.0) * k * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

/// Row-wise softmax with max subtraction.
fn softmax_rows<F: Real>(x: &Array2<F>) -> Array2<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.iter().copied().sum::<F>();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise `(softmax, log softmax)` sharing one stabilized pass.
fn softmax_log_rows<F: Real>(x: &Array2<F>) -> (Array2<F>, Array2<F>) {
    let mut probs = x.clone();
    let mut logs = x.clone();
    for (mut prow, mut lrow) in probs.rows_mut().into_iter().zip(logs.rows_mut()) {
        let max = prow.iter().copied().fold(F::neg_infinity(), F::max);
        prow.mapv_inplace(|v| (v - max).exp());
        let sum = prow.iter().copied().sum::<F>();
        prow.mapv_inplace(|v| v / sum);
        let lse = max + sum.ln();
        lrow.mapv_inplace(|v| v - lse);
    }
    (probs, logs)
}

/// `dS` for `A = softmax(S)` given `dA`, row-wise.
fn softmax_backward_rows<F: Real>(attn: &Array2<F>, d_attn: &Array2<F>) -> Array2<F> {
    let mut out = Array2::zeros(attn.raw_dim());
    for ((a_row, da_row), mut out_row) in attn
        .rows()
        .into_iter()
        .zip(d_attn.rows())
        .zip(out.rows_mut())
    {
        let dot = a_row
            .iter()
            .zip(da_row.iter())
            .map(|(&a, &da)| a * da)
            .sum::<F>();
        for ((&a, &da), o) in a_row.iter().zip(da_row.iter()).zip(out_row.iter_mut()) {
            *o = a * (da - dot);
        }
    }
    out
}

fn layer_norm<F: Real>(
    x: &Array2<F>,
    gain: ndarray::ArrayView1<'_, F>,
    bias: ndarray::ArrayView1<'_, F>,
) -> (Array2<F>, LnTrace<F>) {
    let (t, d) = x.dim();
    let dim = F::cast(d as f64);
    let eps = F::cast(LN_EPS);
    let mut xhat = Array2::zeros((t, d));
    let mut inv_std = Array1::zeros(t);
    let mut out = Array2::zeros((t, d));
    for i in 0..t {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<F>() / dim;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<F>()
            / dim;
        let istd = F::one() / (var + eps).sqrt();
        inv_std[i] = istd;
        for j in 0..d {
            let xh = (row[j] - mean) * istd;
            xhat[[i, j]] = xh;
            out[[i, j]] = xh * gain[j] + bias[j];
        }
    }
    (out, LnTrace { xhat, inv_std })
}

/// Returns `(dx, d_gain, d_bias)` for the layer-norm trace.
fn layer_norm_backward<F: Real>(
    dy: &Array2<F>,
    trace: &LnTrace<F>,
    gain: ndarray::ArrayView1<'_, F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let (t, d) = dy.dim();
    let dim = F::cast(d as f64);
    let mut dx = Array2::zeros((t, d));
    let mut d_gain = Array1::zeros(d);
    let mut d_bias = Array1::zeros(d);
    for i in 0..t {
        let mut m1 = F::zero();
        let mut m2 = F::zero();
        for j in 0..d {
            let dyv = dy[[i, j]];
            let xh = trace.xhat[[i, j]];
            d_gain[j] = d_gain[j] + dyv * xh;
            d_bias[j] = d_bias[j] + dyv;
            let dxhat = dyv * gain[j];
            m1 = m1 + dxhat;
            m2 = m2 + dxhat * xh;
        }
        m1 = m1 / dim;
        m2 = m2 / dim;
        let istd = trace.inv_std[i];
        for j in 0..d {
            let dxhat = dy[[i, j]] * gain[j];
            dx[[i, j]] = istd * (dxhat - m1 - trace.xhat[[i, j]] * m2);
        }
    }
    (dx, d_gain, d_bias)
}

/// Samples an inverted-dropout mask and applies it in place.
fn apply_dropout<F: Real>(x: &mut Array2<F>, ctx: &mut Option<Dropout<'_>>) -> Option<Array2<F>> {
    let ctx = ctx.as_mut()?;
    if ctx.rate <= 0.0 {
        return None;
    }
    let keep_scale = F::cast(1.0 / (1.0 - ctx.rate));
    let mut mask = Array2::zeros(x.raw_dim());
    for m in mask.iter_mut() {
        let u: f64 = ctx.rng.random();
        *m = if u < ctx.rate { F::zero() } else { keep_scale };
    }
    *x *= &mask;
    Some(mask)
}

fn r(range: (usize, usize)) -> std::ops::Range<usize> {
    range.0..range.1
}

/// Runs the encoder and classifier over one augmented input.
///
/// Deterministic given parameters and input; dropout is active only when a
/// context is supplied.
pub fn forward<F: Real>(
    params: &ModelParams<F>,
    input: &AugmentedInput,
    mut dropout: Option<Dropout<'_>>,
) -> Result<ForwardTrace<F>> {
    let config = params.config().clone();
    let t = input.token_ids.len();
    let d = config.hidden;
    if t > config.max_len {
        return Err(Error::Config(format!(
            "input length {t} exceeds max_len {}",
            config.max_len
        )));
    }
    for &id in &input.token_ids {
        if id >= config.vocab_size {
            return Err(Error::TokenRange {
                id,
                vocab: config.vocab_size,
            });
        }
    }

    let tok_emb = params.tok_emb();
    let pos_emb = params.pos_emb();
    let mut x = Array2::zeros((t, d));
    for (pos, &id) in input.token_ids.iter().enumerate() {
        for j in 0..d {
            x[[pos, j]] = tok_emb[[id, j]] + pos_emb[[pos, j]];
        }
    }

    let dh = config.head_dim();
    let scale = F::cast(1.0 / (dh as f64).sqrt());
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let lr: LayerRanges = config.layer_ranges(l);
        let wq = params.mat(r(lr.wq), d, d);
        let wk = params.mat(r(lr.wk), d, d);
        let wv = params.mat(r(lr.wv), d, d);
        let wo = params.mat(r(lr.wo), d, d);

        let x_in = x;
        let q = x_in.dot(&wq) + &params.vec1(r(lr.bq));
        let k = x_in.dot(&wk) + &params.vec1(r(lr.bk));
        let v = x_in.dot(&wv) + &params.vec1(r(lr.bv));

        let mut heads = Array2::zeros((t, d));
        let mut attn = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![.., cols.clone()]);
            let kh = k.slice(s![.., cols.clone()]);
            let vh = v.slice(s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|s| s * scale);
            let a = softmax_rows(&scores);
            heads.slice_mut(s![.., cols]).assign(&a.dot(&vh));
            attn.push(a);
        }

        let mut attn_out = heads.dot(&wo) + &params.vec1(r(lr.bo));
        let attn_mask = apply_dropout(&mut attn_out, &mut dropout);
        let sum1 = &x_in + &attn_out;
        let (x_mid, ln1) = layer_norm(&sum1, params.vec1(r(lr.ln1_g)), params.vec1(r(lr.ln1_b)));

        let w1 = params.mat(r(lr.w1), d, config.ff_dim());
        let w2 = params.mat(r(lr.w2), config.ff_dim(), d);
        let ff_pre = x_mid.dot(&w1) + &params.vec1(r(lr.b1));
        let ff_act = ff_pre.mapv(gelu);
        let mut ff_out = ff_act.dot(&w2) + &params.vec1(r(lr.b2));
        let ff_mask = apply_dropout(&mut ff_out, &mut dropout);
        let sum2 = &x_mid + &ff_out;
        let (x_out, ln2) = layer_norm(&sum2, params.vec1(r(lr.ln2_g)), params.vec1(r(lr.ln2_b)));

        x = x_out;
        layers.push(LayerTrace {
            x_in,
            q,
            k,
            v,
            attn,
            heads,
            attn_mask,
            ln1,
            x_mid,
            ff_pre,
            ff_act,
            ff_mask,
            ln2,
        });
    }

    let cls_w = params.mat(params.config().cls_w_range(), d, Tag::COUNT);
    let cls_b = params.vec1(params.config().cls_b_range());
    let logits = x.dot(&cls_w) + &cls_b;
    let (probs, log_probs) = softmax_log_rows(&logits);

    Ok(ForwardTrace {
        layers,
        hidden: x,
        logits,
        probs,
        log_probs,
    })
}

/// Accumulates gradients for one sequence given `d_logits`.
fn backward<F: Real>(
    params: &ModelParams<F>,
    trace: &ForwardTrace<F>,
    input: &AugmentedInput,
    d_logits: &Array2<F>,
    grads: &mut ModelParams<F>,
) {
    let config = params.config().clone();
    let d = config.hidden;
    let t = input.token_ids.len();
    let dh = config.head_dim();
    let scale = F::cast(1.0 / (dh as f64).sqrt());

    grads.add_mat(config.cls_w_range(), &trace.hidden.t().dot(d_logits));
    grads.add_vec(config.cls_b_range(), &d_logits.sum_axis(Axis(0)));
    let cls_w = params.mat(config.cls_w_range(), d, Tag::COUNT);
    let mut dx = d_logits.dot(&cls_w.t());

    for l in (0..config.layers).rev() {
        let lt = &trace.layers[l];
        let lr = config.layer_ranges(l);

        let (dsum2, dg2, db2) = layer_norm_backward(&dx, &lt.ln2, params.vec1(r(lr.ln2_g)));
        grads.add_vec(r(lr.ln2_g), &dg2);
        grads.add_vec(r(lr.ln2_b), &db2);

        let mut d_ff_out = dsum2.clone();
        if let Some(mask) = &lt.ff_mask {
            d_ff_out *= mask;
        }
        let w2 = params.mat(r(lr.w2), config.ff_dim(), d);
        grads.add_mat(r(lr.w2), &lt.ff_act.t().dot(&d_ff_out));
        grads.add_vec(r(lr.b2), &d_ff_out.sum_axis(Axis(0)));
        let d_ff_act = d_ff_out.dot(&w2.t());
        let d_ff_pre = &d_ff_act * &lt.ff_pre.mapv(gelu_grad);
        let w1 = params.mat(r(lr.w1), d, config.ff_dim());
        grads.add_mat(r(lr.w1), &lt.x_mid.t().dot(&d_ff_pre));
        grads.add_vec(r(lr.b1), &d_ff_pre.sum_axis(Axis(0)));

        let mut dx_mid = dsum2;
        dx_mid += &d_ff_pre.dot(&w1.t());

        let (dsum1, dg1, db1) = layer_norm_backward(&dx_mid, &lt.ln1, params.vec1(r(lr.ln1_g)));
        grads.add_vec(r(lr.ln1_g), &dg1);
        grads.add_vec(r(lr.ln1_b), &db1);

        let mut d_attn_out = dsum1.clone();
        if let Some(mask) = &lt.attn_mask {
            d_attn_out *= mask;
        }
        let wo = params.mat(r(lr.wo), d, d);
        grads.add_mat(r(lr.wo), &lt.heads.t().dot(&d_attn_out));
        grads.add_vec(r(lr.bo), &d_attn_out.sum_axis(Axis(0)));
        let d_heads = d_attn_out.dot(&wo.t());

        let mut dq = Array2::zeros((t, d));
        let mut dk = Array2::zeros((t, d));
        let mut dv = Array2::zeros((t, d));
        for h in 0..config.heads {
            let cols = h * dh..(h + 1) * dh;
            let d_oh = d_heads.slice(s![.., cols.clone()]);
            let a = &lt.attn[h];
            let vh = lt.v.slice(s![.., cols.clone()]);
            let qh = lt.q.slice(s![.., cols.clone()]);
            let kh = lt.k.slice(s![.., cols.clone()]);

            dv.slice_mut(s![.., cols.clone()])
                .assign(&a.t().dot(&d_oh));
            let d_attn = d_oh.dot(&vh.t());
            let mut d_scores = softmax_backward_rows(a, &d_attn);
            d_scores.mapv_inplace(|v| v * scale);
            dq.slice_mut(s![.., cols.clone()]).assign(&d_scores.dot(&kh));
            dk.slice_mut(s![.., cols]).assign(&d_scores.t().dot(&qh));
        }

        let wq = params.mat(r(lr.wq), d, d);
        let wk = params.mat(r(lr.wk), d, d);
        let wv = params.mat(r(lr.wv), d, d);
        grads.add_mat(r(lr.wq), &lt.x_in.t().dot(&dq));
        grads.add_vec(r(lr.bq), &dq.sum_axis(Axis(0)));
        grads.add_mat(r(lr.wk), &lt.x_in.t().dot(&dk));
        grads.add_vec(r(lr.bk), &dk.sum_axis(Axis(0)));
        grads.add_mat(r(lr.wv), &lt.x_in.t().dot(&dv));
        grads.add_vec(r(lr.bv), &dv.sum_axis(Axis(0)));

        let mut dx_in = dsum1;
        dx_in += &dq.dot(&wq.t());
        dx_in += &dk.dot(&wk.t());
        dx_in += &dv.dot(&wv.t());
        dx = dx_in;
    }

    let tok_base = grads.tok_emb_base();
    let pos_base = grads.pos_emb_base();
    for (pos, &id) in input.token_ids.iter().enumerate() {
        grads.add_row(tok_base, id, dx.row(pos));
        grads.add_row(pos_base, pos, dx.row(pos));
    }
}

/// Cross-entropy loss over text positions with exact gradients.
///
/// `loss = −Σ log P(yₜ|X)` summed over every text position of every
/// sentence, divided by the total text-position count under
/// [`LossReduction::Mean`]. Special-token positions contribute zero.
pub fn loss_and_grad<F: Real>(
    params: &ModelParams<F>,
    batch: &[(AugmentedInput, Vec<Tag>)],
    reduction: LossReduction,
    mut dropout: Option<Dropout<'_>>,
) -> Result<(F, ModelParams<F>)> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus("loss over an empty batch"));
    }
    let mut total_text = 0usize;
    for (input, tags) in batch {
        let text = input.text_len();
        if text != tags.len() {
            return Err(Error::Alignment {
                labels: tags.len(),
                chars: text,
                context: Some("batch item".into()),
            });
        }
        total_text += text;
    }
    let weight = match reduction {
        LossReduction::Sum => F::one(),
        LossReduction::Mean => F::cast(1.0 / total_text as f64),
    };

    let mut grads = params.zeros_like();
    let mut loss = F::zero();
    for (input, tags) in batch {
        let trace = forward(params, input, dropout.as_mut().map(|d| d.reborrow()))?;
        let t = input.token_ids.len();
        let mut d_logits = Array2::zeros((t, Tag::COUNT));
        let mut text_idx = 0;
        for pos in 0..t {
            if !input.text_mask[pos] {
                continue;
            }
            let gold = tags[text_idx].index();
            text_idx += 1;
            loss = loss - trace.log_probs[[pos, gold]] * weight;
            for c in 0..Tag::COUNT {
                let y = if c == gold { F::one() } else { F::zero() };
                d_logits[[pos, c]] = (trace.probs[[pos, c]] - y) * weight;
            }
        }
        backward(params, &trace, input, &d_logits, &mut grads);
    }
    Ok((loss, grads))
}

/// Most likely tag per text position; ties break toward the lower label
/// index in the fixed order `B < M < E < S`.
pub fn predict<F: Real>(params: &ModelParams<F>, input: &AugmentedInput) -> Result<Vec<Tag>> {
    let trace = forward(params, input, None)?;
    let mut tags = Vec::with_capacity(input.text_len());
    for (pos, &is_text) in input.text_mask.iter().enumerate() {
        if !is_text {
            continue;
        }
        let row = trace.probs.row(pos);
        let mut best = 0;
        for c in 1..Tag::COUNT {
            if row[c] > row[best] {
                best = c;
            }
        }
        tags.push(Tag::from_index(best).expect("label index in range"));
    }
    Ok(tags)
}
