//! Post-LayerNorm transformer encoder covering the BERT, ELECTRA and ALBERT
//! layouts, with a hand-written backward pass.
//!
//! Sequences are processed one at a time, so no padding or attention mask is
//! needed. The summary vector is the pooler output (`tanh` of a dense layer
//! on the `[CLS]` state) for BERT and ALBERT and the raw `[CLS]` state for
//! ELECTRA, which ships without a pooler.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};
use serde::Deserialize;

use super::tokenizer::Tokenizer;
use super::{check_grad, EncoderError, EncoderKind, EncoderPass, TensorRef, TextEncoder};
use crate::nn::{dropout_mask, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Bert,
    Electra,
    Albert,
}

impl Family {
    fn model_type(self) -> &'static str {
        match self {
            Family::Bert => "bert",
            Family::Electra => "electra",
            Family::Albert => "albert",
        }
    }

    fn kind(self) -> EncoderKind {
        match self {
            Family::Bert => EncoderKind::PretrainedSmallBert,
            Family::Electra => EncoderKind::PretrainedSmallElectra,
            Family::Albert => EncoderKind::PretrainedBaseAlbert,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Exact, via erf.
    Gelu,
    /// Tanh approximation.
    GeluNew,
    Relu,
}

impl Activation {
    fn parse(name: &str) -> Result<Self, EncoderError> {
        match name {
            "gelu" => Ok(Activation::Gelu),
            "gelu_new" | "gelu_pytorch_tanh" | "gelu_fast" => Ok(Activation::GeluNew),
            "relu" => Ok(Activation::Relu),
            other => Err(EncoderError::Format { artifact: "config.json".into(), reason: format!("unsupported hidden_act {other}") }),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            Activation::GeluNew => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
            Activation::Relu => x.max(0.0),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
            Activation::GeluNew => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let t = (c * (x + 0.044715 * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn default_act() -> String {
    "gelu".into()
}
fn default_types() -> usize {
    2
}
fn default_eps() -> f64 {
    1e-12
}
fn default_dropout() -> f64 {
    0.1
}
fn one() -> usize {
    1
}

/// The subset of `config.json` the encoder reads.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TransformerConfig {
    #[serde(default)]
    pub model_type: Option<String>,
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    #[serde(default = "default_act")]
    pub hidden_act: String,
    pub max_position_embeddings: usize,
    #[serde(default = "default_types")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_dropout")]
    pub hidden_dropout_prob: f64,
    #[serde(default = "default_dropout")]
    pub attention_probs_dropout_prob: f64,
    #[serde(default)]
    pub embedding_size: Option<usize>,
    #[serde(default = "one")]
    pub num_hidden_groups: usize,
    #[serde(default = "one")]
    pub inner_group_num: usize,
}

impl TransformerConfig {
    fn embedding_size(&self) -> usize {
        self.embedding_size.unwrap_or(self.hidden_size)
    }

    fn validate(&self, family: Family) -> Result<(), EncoderError> {
        let bad = |reason: String| EncoderError::Format { artifact: "config.json".into(), reason };
        if let Some(mt) = &self.model_type {
            if mt != family.model_type() {
                return Err(bad(format!("model_type {mt:?} does not match {}", family.kind())));
            }
        }
        if self.num_attention_heads == 0 || self.hidden_size % self.num_attention_heads != 0 {
            return Err(bad("hidden_size must be a multiple of num_attention_heads".into()));
        }
        if family == Family::Albert && (self.num_hidden_groups != 1 || self.inner_group_num != 1) {
            return Err(bad("only single-group ALBERT models are supported".into()));
        }
        Activation::parse(&self.hidden_act)?;
        Ok(())
    }
}

/// Parameter indices of one transformer block.
#[derive(Debug, Clone, Copy)]
struct Block {
    q_w: usize,
    q_b: usize,
    k_w: usize,
    k_b: usize,
    v_w: usize,
    v_b: usize,
    o_w: usize,
    o_b: usize,
    ln1_g: usize,
    ln1_b: usize,
    i_w: usize,
    i_b: usize,
    out_w: usize,
    out_b: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    word: usize,
    position: usize,
    token_type: usize,
    emb_ln_g: usize,
    emb_ln_b: usize,
    projection: Option<(usize, usize)>,
    pooler: Option<(usize, usize)>,
}

/// Tensor names and shapes in storage order. Linear weights are stored
/// `(in, out)`; the source files hold them `(out, in)`.
fn tensor_specs(family: Family, c: &TransformerConfig, with_pooler: bool) -> (Vec<(String, (usize, usize), bool)>, Layout, Vec<Block>) {
    let e = c.embedding_size();
    let h = c.hidden_size;
    let mut specs: Vec<(String, (usize, usize), bool)> = Vec::new();
    let mut add = |name: String, shape: (usize, usize), linear: bool| {
        specs.push((name, shape, linear));
        specs.len() - 1
    };
    let word = add("embeddings.word_embeddings.weight".into(), (c.vocab_size, e), false);
    let position = add("embeddings.position_embeddings.weight".into(), (c.max_position_embeddings, e), false);
    let token_type = add("embeddings.token_type_embeddings.weight".into(), (c.type_vocab_size, e), false);
    let emb_ln_g = add("embeddings.LayerNorm.weight".into(), (1, e), false);
    let emb_ln_b = add("embeddings.LayerNorm.bias".into(), (1, e), false);
    let projection = match family {
        Family::Albert => Some((
            add("encoder.embedding_hidden_mapping_in.weight".into(), (e, h), true),
            add("encoder.embedding_hidden_mapping_in.bias".into(), (1, h), false),
        )),
        Family::Electra if e != h => Some((
            add("embeddings_project.weight".into(), (e, h), true),
            add("embeddings_project.bias".into(), (1, h), false),
        )),
        _ => None,
    };

    let n_blocks = if family == Family::Albert { 1 } else { c.num_hidden_layers };
    let mut blocks = Vec::with_capacity(n_blocks);
    for l in 0..n_blocks {
        let (attn, names): (String, [&str; 8]) = match family {
            Family::Albert => (
                "encoder.albert_layer_groups.0.albert_layers.0.".into(),
                [
                    "attention.query",
                    "attention.key",
                    "attention.value",
                    "attention.dense",
                    "attention.LayerNorm",
                    "ffn",
                    "ffn_output",
                    "full_layer_layer_norm",
                ],
            ),
            _ => (
                format!("encoder.layer.{l}."),
                [
                    "attention.self.query",
                    "attention.self.key",
                    "attention.self.value",
                    "attention.output.dense",
                    "attention.output.LayerNorm",
                    "intermediate.dense",
                    "output.dense",
                    "output.LayerNorm",
                ],
            ),
        };
        let mut lin = |i: usize, shape: (usize, usize)| {
            (add(format!("{attn}{}.weight", names[i]), shape, true), add(format!("{attn}{}.bias", names[i]), (1, shape.1), false))
        };
        let (q_w, q_b) = lin(0, (h, h));
        let (k_w, k_b) = lin(1, (h, h));
        let (v_w, v_b) = lin(2, (h, h));
        let (o_w, o_b) = lin(3, (h, h));
        let ln1_g = add(format!("{attn}{}.weight", names[4]), (1, h), false);
        let ln1_b = add(format!("{attn}{}.bias", names[4]), (1, h), false);
        let (i_w, i_b) = (
            add(format!("{attn}{}.weight", names[5]), (h, c.intermediate_size), true),
            add(format!("{attn}{}.bias", names[5]), (1, c.intermediate_size), false),
        );
        let (out_w, out_b) = (
            add(format!("{attn}{}.weight", names[6]), (c.intermediate_size, h), true),
            add(format!("{attn}{}.bias", names[6]), (1, h), false),
        );
        let ln2_g = add(format!("{attn}{}.weight", names[7]), (1, h), false);
        let ln2_b = add(format!("{attn}{}.bias", names[7]), (1, h), false);
        blocks.push(Block { q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, ln1_g, ln1_b, i_w, i_b, out_w, out_b, ln2_g, ln2_b });
    }
    let pooler = match (family, with_pooler) {
        (Family::Electra, _) | (_, false) => None,
        (Family::Bert, true) => Some((add("pooler.dense.weight".into(), (h, h), true), add("pooler.dense.bias".into(), (1, h), false))),
        (Family::Albert, true) => Some((add("pooler.weight".into(), (h, h), true), add("pooler.bias".into(), (1, h), false))),
    };
    (specs, Layout { word, position, token_type, emb_ln_g, emb_ln_b, projection, pooler }, blocks)
}

/// Strips model-class prefixes and maps legacy LayerNorm names.
fn canonical_name(name: &str) -> String {
    let mut n = name;
    for prefix in ["bert.", "electra.", "albert.", "discriminator."] {
        if let Some(rest) = n.strip_prefix(prefix) {
            n = rest;
        }
    }
    n.replace("LayerNorm.gamma", "LayerNorm.weight").replace("LayerNorm.beta", "LayerNorm.bias")
}

fn to_f64(view: &safetensors::tensor::TensorView<'_>) -> Result<Vec<f64>, String> {
    use safetensors::Dtype;
    let b = view.data();
    Ok(match view.dtype() {
        Dtype::F32 => b.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect(),
        Dtype::F64 => b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
        Dtype::F16 => b.chunks_exact(2).map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f64()).collect(),
        Dtype::BF16 => b.chunks_exact(2).map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f64()).collect(),
        other => return Err(format!("unsupported dtype {other:?}")),
    })
}

#[derive(Debug, Clone)]
pub struct Transformer {
    family: Family,
    config: TransformerConfig,
    activation: Activation,
    tokenizer: Tokenizer,
    max_len: usize,
    names: Vec<String>,
    params: Vec<Array2<f64>>,
    layout: Layout,
    blocks: Vec<Block>,
}

/// LayerNorm normalized values and inverse standard deviations.
struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn_drop: Vec<Option<Array2<f64>>>,
    ctx: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln1: LnCache,
    x1: Array2<f64>,
    inter_pre: Array2<f64>,
    inter_act: Array2<f64>,
    drop2: Option<Array2<f64>>,
    ln2: LnCache,
}

struct SeqCache {
    ids: Vec<u32>,
    emb_ln: LnCache,
    emb_drop: Option<Array2<f64>>,
    emb_out: Array2<f64>,
    layers: Vec<LayerCache>,
    cls: Array1<f64>,
    pooled: Option<Array1<f64>>,
}

fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>, eps: f64) -> (Array2<f64>, LnCache) {
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty rows");
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &g.row(0) + &b.row(0);
    (y, LnCache { xhat, inv_std })
}

/// Returns the input gradient and accumulates the affine gradients.
fn layer_norm_backward(dy: &Array2<f64>, cache: &LnCache, g: &Array2<f64>, gg: &mut Array2<f64>, gb: &mut Array2<f64>) -> Array2<f64> {
    gg.row_mut(0).scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
    gb.row_mut(0).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    let dxhat = dy * &g.row(0);
    let n = dy.ncols() as f64;
    let mean_d = dxhat.sum_axis(Axis(1)) / n;
    let mean_dx = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / n;
    let mut dx = dxhat - &mean_d.insert_axis(Axis(1)) - &cache.xhat * &mean_dx.insert_axis(Axis(1));
    dx *= &cache.inv_std.view().insert_axis(Axis(1));
    dx
}

fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(w) + &b.row(0)
}

fn linear_backward(x: &Array2<f64>, w: &Array2<f64>, dy: &Array2<f64>, gw: &mut Array2<f64>, gb: &mut Array2<f64>) -> Array2<f64> {
    *gw += &x.t().dot(dy);
    gb.row_mut(0).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&w.t())
}

fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

impl Transformer {
    /// Loads `config.json`, `model.safetensors` and the tokenizer from `dir`.
    pub fn from_dir(dir: &Path, family: Family, max_sequence_length: usize) -> Result<Self, EncoderError> {
        let config_path = dir.join("config.json");
        if !config_path.exists() {
            return Err(EncoderError::MissingArtifact { artifact: "config.json", path: config_path });
        }
        let src = std::fs::read_to_string(&config_path).map_err(|source| EncoderError::Io { path: config_path.clone(), source })?;
        let config: TransformerConfig = serde_json::from_str(&src)
            .map_err(|e| EncoderError::Format { artifact: config_path.display().to_string(), reason: e.to_string() })?;
        config.validate(family)?;

        let weights_path = dir.join("model.safetensors");
        if !weights_path.exists() {
            return Err(EncoderError::MissingArtifact { artifact: "model.safetensors", path: weights_path });
        }
        let bytes = std::fs::read(&weights_path).map_err(|source| EncoderError::Io { path: weights_path.clone(), source })?;
        let fmt = |reason: String| EncoderError::Format { artifact: weights_path.display().to_string(), reason };
        let st = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| fmt(e.to_string()))?;
        let available: HashMap<String, String> = st.names().into_iter().map(|n| (canonical_name(n), n.to_string())).collect();

        let pooler_name = match family {
            Family::Albert => "pooler.weight",
            _ => "pooler.dense.weight",
        };
        let with_pooler = available.contains_key(pooler_name);
        let (specs, layout, blocks) = tensor_specs(family, &config, with_pooler);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, (rows, cols), linear) in specs {
            let source = available.get(&name).ok_or_else(|| fmt(format!("tensor {name} not found")))?;
            let view = st.tensor(source).map_err(|e| fmt(e.to_string()))?;
            let data = to_f64(&view).map_err(|e| fmt(format!("{name}: {e}")))?;
            let expected = if linear { vec![cols, rows] } else if rows == 1 { vec![cols] } else { vec![rows, cols] };
            if view.shape() != expected.as_slice() {
                return Err(fmt(format!("{name} has shape {:?}, expected {expected:?}", view.shape())));
            }
            let arr = if linear {
                Array2::from_shape_vec((cols, rows), data).expect("checked shape").reversed_axes().as_standard_layout().into_owned()
            } else {
                Array2::from_shape_vec((rows, cols), data).expect("checked shape")
            };
            names.push(name);
            params.push(arr);
        }
        let tokenizer = Tokenizer::from_dir(dir)?;
        Self::assemble(family, config, tokenizer, max_sequence_length, names, params, layout, blocks)
    }

    /// Randomly initialized model, for tests and experiments without weights.
    pub fn random(
        family: Family,
        config: TransformerConfig,
        tokenizer: Tokenizer,
        max_sequence_length: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self, EncoderError> {
        config.validate(family)?;
        let (specs, layout, blocks) = tensor_specs(family, &config, family != Family::Electra);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, _) in specs {
            let base = if name.contains("LayerNorm") && name.ends_with("weight") || name.contains("layer_norm.weight") { 1.0 } else { 0.0 };
            params.push(Array2::from_shape_fn(shape, |_| base + rng.gen_range(-0.3..0.3)));
            names.push(name);
        }
        Self::assemble(family, config, tokenizer, max_sequence_length, names, params, layout, blocks)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        family: Family,
        config: TransformerConfig,
        tokenizer: Tokenizer,
        max_sequence_length: usize,
        names: Vec<String>,
        params: Vec<Array2<f64>>,
        layout: Layout,
        blocks: Vec<Block>,
    ) -> Result<Self, EncoderError> {
        if tokenizer.vocab_size() > config.vocab_size {
            return Err(EncoderError::Format {
                artifact: "tokenizer".into(),
                reason: format!("{} token ids exceed vocab_size {}", tokenizer.vocab_size(), config.vocab_size),
            });
        }
        Ok(Transformer {
            family,
            activation: Activation::parse(&config.hidden_act)?,
            max_len: max_sequence_length.min(config.max_position_embeddings),
            config,
            tokenizer,
            names,
            params,
            layout,
            blocks,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn token_ids(&self, text: &str) -> Vec<u32> {
        self.tokenizer.encode(text, self.max_len)
    }

    fn block_for_layer(&self, layer: usize) -> Block {
        self.blocks[if self.family == Family::Albert { 0 } else { layer }]
    }

    fn p(&self, i: usize) -> &Array2<f64> {
        &self.params[i]
    }

    fn maybe_dropout(&self, shape: (usize, usize), rate: f64, mode: Mode, rng: &mut dyn RngCore) -> Option<Array2<f64>> {
        (mode == Mode::Train && rate > 0.0).then(|| dropout_mask(shape, rate, rng))
    }

    fn forward_seq(&self, ids: Vec<u32>, mode: Mode, rng: &mut dyn RngCore) -> SeqCache {
        let c = &self.config;
        let lay = self.layout;
        let len = ids.len();
        let e = c.embedding_size();
        let mut emb = Array2::zeros((len, e));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = emb.row_mut(i);
            row.assign(&self.p(lay.word).row(id as usize));
            row += &self.p(lay.position).row(i);
            row += &self.p(lay.token_type).row(0);
        }
        let (mut emb_out, emb_ln) = layer_norm(&emb, self.p(lay.emb_ln_g), self.p(lay.emb_ln_b), c.layer_norm_eps);
        let emb_drop = self.maybe_dropout(emb_out.dim(), c.hidden_dropout_prob, mode, rng);
        if let Some(m) = &emb_drop {
            emb_out *= m;
        }
        let mut x = match lay.projection {
            Some((w, b)) => linear(&emb_out, self.p(w), self.p(b)),
            None => emb_out.clone(),
        };

        let heads = c.num_attention_heads;
        let d = c.hidden_size / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut layers = Vec::with_capacity(c.num_hidden_layers);
        for l in 0..c.num_hidden_layers {
            let bl = self.block_for_layer(l);
            let q = linear(&x, self.p(bl.q_w), self.p(bl.q_b));
            let k = linear(&x, self.p(bl.k_w), self.p(bl.k_b));
            let v = linear(&x, self.p(bl.v_w), self.p(bl.v_b));
            let mut ctx = Array2::zeros((len, c.hidden_size));
            let mut probs = Vec::with_capacity(heads);
            let mut attn_drop = Vec::with_capacity(heads);
            for hd in 0..heads {
                let cols = s![.., hd * d..(hd + 1) * d];
                let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut a);
                let m = self.maybe_dropout(a.dim(), c.attention_probs_dropout_prob, mode, rng);
                let used = match &m {
                    Some(m) => &a * m,
                    None => a.clone(),
                };
                ctx.slice_mut(cols).assign(&used.dot(&v.slice(cols)));
                probs.push(a);
                attn_drop.push(m);
            }
            let mut ao = linear(&ctx, self.p(bl.o_w), self.p(bl.o_b));
            let drop1 = self.maybe_dropout(ao.dim(), c.hidden_dropout_prob, mode, rng);
            if let Some(m) = &drop1 {
                ao *= m;
            }
            let (x1, ln1) = layer_norm(&(ao + &x), self.p(bl.ln1_g), self.p(bl.ln1_b), c.layer_norm_eps);
            let inter_pre = linear(&x1, self.p(bl.i_w), self.p(bl.i_b));
            let inter_act = inter_pre.mapv(|v| self.activation.apply(v));
            let mut o = linear(&inter_act, self.p(bl.out_w), self.p(bl.out_b));
            let drop2 = self.maybe_dropout(o.dim(), c.hidden_dropout_prob, mode, rng);
            if let Some(m) = &drop2 {
                o *= m;
            }
            let (x2, ln2) = layer_norm(&(o + &x1), self.p(bl.ln2_g), self.p(bl.ln2_b), c.layer_norm_eps);
            layers.push(LayerCache {
                input: std::mem::replace(&mut x, x2),
                q,
                k,
                v,
                probs,
                attn_drop,
                ctx,
                drop1,
                ln1,
                x1,
                inter_pre,
                inter_act,
                drop2,
                ln2,
            });
        }
        let cls = x.row(0).to_owned();
        let pooled = lay.pooler.map(|(w, b)| (cls.dot(self.p(w)) + &self.p(b).row(0)).mapv(f64::tanh));
        SeqCache { ids, emb_ln, emb_drop, emb_out, layers, cls, pooled }
    }

    fn backward_seq(&self, cache: &SeqCache, g_summary: Array1<f64>, grads: &mut [Array2<f64>]) {
        let c = &self.config;
        let lay = self.layout;
        let len = cache.ids.len();
        let g_cls = match (lay.pooler, &cache.pooled) {
            (Some((w, b)), Some(pooled)) => {
                let g_pre = &g_summary * &pooled.mapv(|p| 1.0 - p * p);
                let outer = cache.cls.view().insert_axis(Axis(1)).dot(&g_pre.view().insert_axis(Axis(0)));
                grads[w] += &outer;
                grads[b].row_mut(0).scaled_add(1.0, &g_pre);
                self.p(w).dot(&g_pre)
            }
            _ => g_summary,
        };
        let mut gx = Array2::zeros((len, c.hidden_size));
        gx.row_mut(0).assign(&g_cls);

        let heads = c.num_attention_heads;
        let d = c.hidden_size / heads;
        let scale = 1.0 / (d as f64).sqrt();
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            let bl = self.block_for_layer(l);
            let (gg, gb) = two_mut(grads, bl.ln2_g, bl.ln2_b);
            let g_sum2 = layer_norm_backward(&gx, &lc.ln2, self.p(bl.ln2_g), gg, gb);
            let mut g_o = g_sum2.clone();
            if let Some(m) = &lc.drop2 {
                g_o *= m;
            }
            let (gw, gb) = two_mut(grads, bl.out_w, bl.out_b);
            let g_act = linear_backward(&lc.inter_act, self.p(bl.out_w), &g_o, gw, gb);
            let mut g_pre = g_act;
            Zip::from(&mut g_pre).and(&lc.inter_pre).for_each(|g, &x| *g *= self.activation.derivative(x));
            let (gw, gb) = two_mut(grads, bl.i_w, bl.i_b);
            let g_x1 = g_sum2 + linear_backward(&lc.x1, self.p(bl.i_w), &g_pre, gw, gb);

            let (gg, gb) = two_mut(grads, bl.ln1_g, bl.ln1_b);
            let g_sum1 = layer_norm_backward(&g_x1, &lc.ln1, self.p(bl.ln1_g), gg, gb);
            let mut g_ao = g_sum1.clone();
            if let Some(m) = &lc.drop1 {
                g_ao *= m;
            }
            let (gw, gb) = two_mut(grads, bl.o_w, bl.o_b);
            let g_ctx = linear_backward(&lc.ctx, self.p(bl.o_w), &g_ao, gw, gb);

            let mut g_q = Array2::zeros((len, c.hidden_size));
            let mut g_k = Array2::zeros((len, c.hidden_size));
            let mut g_v = Array2::zeros((len, c.hidden_size));
            for hd in 0..heads {
                let cols = s![.., hd * d..(hd + 1) * d];
                let a = &lc.probs[hd];
                let used = match &lc.attn_drop[hd] {
                    Some(m) => a * m,
                    None => a.clone(),
                };
                let gc = g_ctx.slice(cols);
                let mut g_a = gc.dot(&lc.v.slice(cols).t());
                g_v.slice_mut(cols).assign(&used.t().dot(&gc));
                if let Some(m) = &lc.attn_drop[hd] {
                    g_a *= m;
                }
                let row_dot = (&g_a * a).sum_axis(Axis(1));
                let g_scores = (g_a - &row_dot.insert_axis(Axis(1))) * a * scale;
                g_q.slice_mut(cols).assign(&g_scores.dot(&lc.k.slice(cols)));
                g_k.slice_mut(cols).assign(&g_scores.t().dot(&lc.q.slice(cols)));
            }
            let mut g_in = g_sum1;
            for (g, w, b) in [(&g_q, bl.q_w, bl.q_b), (&g_k, bl.k_w, bl.k_b), (&g_v, bl.v_w, bl.v_b)] {
                let (gw, gb) = two_mut(grads, w, b);
                g_in += &linear_backward(&lc.input, self.p(w), g, gw, gb);
            }
            gx = g_in;
        }

        let mut g_emb_out = match lay.projection {
            Some((w, b)) => {
                let (gw, gb) = two_mut(grads, w, b);
                linear_backward(&cache.emb_out, self.p(w), &gx, gw, gb)
            }
            None => gx,
        };
        if let Some(m) = &cache.emb_drop {
            g_emb_out *= m;
        }
        let (gg, gb) = two_mut(grads, lay.emb_ln_g, lay.emb_ln_b);
        let g_emb = layer_norm_backward(&g_emb_out, &cache.emb_ln, self.p(lay.emb_ln_g), gg, gb);
        for (i, &id) in cache.ids.iter().enumerate() {
            let g = g_emb.row(i);
            grads[lay.word].row_mut(id as usize).scaled_add(1.0, &g);
            grads[lay.position].row_mut(i).scaled_add(1.0, &g);
            grads[lay.token_type].row_mut(0).scaled_add(1.0, &g);
        }
    }
}

fn two_mut(v: &mut [Array2<f64>], a: usize, b: usize) -> (&mut Array2<f64>, &mut Array2<f64>) {
    assert!(a < b, "weight index precedes bias index");
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

impl TextEncoder for Transformer {
    fn kind(&self) -> EncoderKind {
        self.family.kind()
    }

    fn embedding_dim(&self) -> usize {
        self.config.hidden_size
    }

    fn forward(&self, texts: &[&str], mode: Mode, rng: &mut dyn RngCore) -> Result<EncoderPass, EncoderError> {
        if texts.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        let mut output = Array2::zeros((texts.len(), self.embedding_dim()));
        let mut caches = Vec::with_capacity(texts.len());
        for (j, t) in texts.iter().enumerate() {
            let cache = self.forward_seq(self.token_ids(t), mode, rng);
            output.row_mut(j).assign(cache.pooled.as_ref().unwrap_or(&cache.cls));
            caches.push(cache);
        }
        Ok(EncoderPass { output, cache: Box::new(caches) })
    }

    fn backward(&self, pass: &EncoderPass, grad: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>, EncoderError> {
        check_grad(pass, grad)?;
        let caches = pass.cache.downcast_ref::<Vec<SeqCache>>().expect("transformer cache");
        let mut grads: Vec<Array2<f64>> = self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        for (cache, g) in caches.iter().zip(grad.axis_iter(Axis(0))) {
            self.backward_seq(cache, g.to_owned(), &mut grads);
        }
        Ok(grads.into_iter().map(|g| g.into_raw_vec_and_offset().0).collect())
    }

    fn parameters(&self) -> Vec<TensorRef<'_>> {
        self.names
            .iter()
            .zip(&self.params)
            .map(|(n, p)| TensorRef { name: n, shape: p.dim(), data: p.as_slice().expect("standard layout") })
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.params.iter_mut().map(|p| p.as_slice_mut().expect("standard layout")).collect()
    }
}
