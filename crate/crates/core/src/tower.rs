//! The query/keyword encoder tower: token embedding, input projection,
//! depthwise-separable convolution blocks with residuals, masked single-head
//! self-attention, and a final fully-connected projection, L2-normalized.
//!
//! Query and keyword towers are architecturally identical with separate
//! parameters. Ablation flags drop the convolution stack, the attention
//! layer, or the final projection (replaced by masked mean pooling).

use serde::{Deserialize, Serialize};

use crate::encoder::{tokenize, TokenizedText, Vocabulary};
use crate::error::{Error, Result};
use crate::nn;
use crate::rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_cnn: bool,
    pub use_attention: bool,
    pub use_mlp: bool,
}

impl AblationFlags {
    pub fn new(use_cnn: bool, use_attention: bool, use_mlp: bool) -> Result<Self> {
        let flags = AblationFlags {
            use_cnn,
            use_attention,
            use_mlp,
        };
        flags.validate()?;
        Ok(flags)
    }

    pub fn full() -> Self {
        AblationFlags {
            use_cnn: true,
            use_attention: true,
            use_mlp: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_cnn && !self.use_attention && !self.use_mlp {
            return Err(Error::config(
                "ablation",
                "at least one of use_cnn/use_attention/use_mlp must be true",
            ));
        }
        Ok(())
    }

    /// Short label used in reports and file names.
    pub fn label(&self) -> &'static str {
        match (self.use_cnn, self.use_attention, self.use_mlp) {
            (true, true, true) => "full",
            (false, true, true) => "no_cnn",
            (true, false, true) => "no_attention",
            (true, true, false) => "no_mlp",
            _ => "custom",
        }
    }
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_w: usize,
    pub d_c: usize,
    pub d_h: usize,
    pub d_out: usize,
    pub t_max: usize,
    pub c_max: usize,
    pub n_blocks: usize,
    pub flags: AblationFlags,
    /// Temperature applied to cosines inside the training loss and NLL.
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_w: 32,
            d_c: 16,
            d_h: 64,
            d_out: 64,
            t_max: 10,
            c_max: 12,
            n_blocks: 2,
            flags: AblationFlags::full(),
            gamma: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn d_in(&self) -> usize {
        self.d_w + self.d_c
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_w", self.d_w),
            ("d_c", self.d_c),
            ("d_h", self.d_h),
            ("d_out", self.d_out),
            ("t_max", self.t_max),
            ("c_max", self.c_max),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        self.flags.validate()?;
        if self.flags.use_cnn && self.n_blocks == 0 {
            return Err(Error::config("n_blocks", "must be >= 1 when use_cnn"));
        }
        if !self.flags.use_mlp && self.d_out != self.d_h {
            return Err(Error::config(
                "d_out",
                format!(
                    "must equal d_h={} when use_mlp=false (mean pooling emits d_h)",
                    self.d_h
                ),
            ));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::config("gamma", "must be > 0"));
        }
        Ok(())
    }
}

/// Whether a tensor is an embedding table (row 0 = PAD is pinned to zero and
/// excluded from updates) or an ordinary dense parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Embedding,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams<S: Scalar> {
    pub depthwise: Tensor<S>,
    pub pointwise: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<S: Scalar> {
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
    pub wv: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcParams<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams<S: Scalar> {
    pub word_embed: Tensor<S>,
    pub char_embed: Tensor<S>,
    pub input_proj: Tensor<S>,
    pub conv: Vec<ConvBlockParams<S>>,
    pub attention: Option<AttentionParams<S>>,
    pub fc: Option<FcParams<S>>,
}

fn glorot_init<S: Scalar>(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor<S> {
    use rand::RngExt;
    let fan_out = *shape.last().unwrap();
    let fan_in: usize = shape[..shape.len() - 1].iter().product::<usize>().max(1);
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = S::from_f64(rng.random::<f64>() * 2.0 * r - r);
    }
    t
}

impl<S: Scalar> TowerParams<S> {
    /// Seeded uniform(-r, r) init with r = sqrt(6 / (fan_in + fan_out));
    /// PAD embedding rows are zeroed afterwards.
    pub fn init(
        cfg: &ModelConfig,
        n_words: usize,
        n_chars: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        let mut word_embed = glorot_init(&[n_words, cfg.d_w], rng);
        let mut char_embed = glorot_init(&[n_chars, cfg.d_c], rng);
        for v in word_embed.row_mut(0) {
            *v = S::ZERO;
        }
        for v in char_embed.row_mut(0) {
            *v = S::ZERO;
        }
        let input_proj = glorot_init(&[cfg.d_in(), cfg.d_h], rng);
        let conv = if cfg.flags.use_cnn {
            (0..cfg.n_blocks)
                .map(|_| ConvBlockParams {
                    depthwise: glorot_init(&[3, cfg.d_h], rng),
                    pointwise: glorot_init(&[cfg.d_h, cfg.d_h], rng),
                    bias: glorot_init(&[cfg.d_h], rng),
                })
                .collect()
        } else {
            Vec::new()
        };
        let attention = cfg.flags.use_attention.then(|| AttentionParams {
            wq: glorot_init(&[cfg.d_h, cfg.d_h], rng),
            wk: glorot_init(&[cfg.d_h, cfg.d_h], rng),
            wv: glorot_init(&[cfg.d_h, cfg.d_h], rng),
        });
        let fc = cfg.flags.use_mlp.then(|| FcParams {
            weight: glorot_init(&[cfg.t_max * cfg.d_h, cfg.d_out], rng),
            bias: glorot_init(&[cfg.d_out], rng),
        });
        TowerParams {
            word_embed,
            char_embed,
            input_proj,
            conv,
            attention,
            fc,
        }
    }

    /// Tensors in a fixed order: (name suffix, tensor, role).
    pub fn visit(&self) -> Vec<(String, &Tensor<S>, TensorRole)> {
        let mut out: Vec<(String, &Tensor<S>, TensorRole)> = vec![
            ("word_embed".into(), &self.word_embed, TensorRole::Embedding),
            ("char_embed".into(), &self.char_embed, TensorRole::Embedding),
            ("input_proj".into(), &self.input_proj, TensorRole::Dense),
        ];
        for (i, block) in self.conv.iter().enumerate() {
            out.push((format!("conv.{i}.depthwise"), &block.depthwise, TensorRole::Dense));
            out.push((format!("conv.{i}.pointwise"), &block.pointwise, TensorRole::Dense));
            out.push((format!("conv.{i}.bias"), &block.bias, TensorRole::Dense));
        }
        if let Some(attn) = &self.attention {
            out.push(("attention.wq".into(), &attn.wq, TensorRole::Dense));
            out.push(("attention.wk".into(), &attn.wk, TensorRole::Dense));
            out.push(("attention.wv".into(), &attn.wv, TensorRole::Dense));
        }
        if let Some(fc) = &self.fc {
            out.push(("fc.weight".into(), &fc.weight, TensorRole::Dense));
            out.push(("fc.bias".into(), &fc.bias, TensorRole::Dense));
        }
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor<S>, TensorRole)> {
        let mut out: Vec<(String, &mut Tensor<S>, TensorRole)> = vec![
            ("word_embed".into(), &mut self.word_embed, TensorRole::Embedding),
            ("char_embed".into(), &mut self.char_embed, TensorRole::Embedding),
            ("input_proj".into(), &mut self.input_proj, TensorRole::Dense),
        ];
        for (i, block) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv.{i}.depthwise"), &mut block.depthwise, TensorRole::Dense));
            out.push((format!("conv.{i}.pointwise"), &mut block.pointwise, TensorRole::Dense));
            out.push((format!("conv.{i}.bias"), &mut block.bias, TensorRole::Dense));
        }
        if let Some(attn) = &mut self.attention {
            out.push(("attention.wq".into(), &mut attn.wq, TensorRole::Dense));
            out.push(("attention.wk".into(), &mut attn.wk, TensorRole::Dense));
            out.push(("attention.wv".into(), &mut attn.wv, TensorRole::Dense));
        }
        if let Some(fc) = &mut self.fc {
            out.push(("fc.weight".into(), &mut fc.weight, TensorRole::Dense));
            out.push(("fc.bias".into(), &mut fc.bias, TensorRole::Dense));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.visit().iter().map(|(_, t, _)| t.len()).sum()
    }

    pub fn to_f64(&self) -> TowerParams<f64> {
        TowerParams {
            word_embed: self.word_embed.to_f64(),
            char_embed: self.char_embed.to_f64(),
            input_proj: self.input_proj.to_f64(),
            conv: self
                .conv
                .iter()
                .map(|b| ConvBlockParams {
                    depthwise: b.depthwise.to_f64(),
                    pointwise: b.pointwise.to_f64(),
                    bias: b.bias.to_f64(),
                })
                .collect(),
            attention: self.attention.as_ref().map(|a| AttentionParams {
                wq: a.wq.to_f64(),
                wk: a.wk.to_f64(),
                wv: a.wv.to_f64(),
            }),
            fc: self.fc.as_ref().map(|f| FcParams {
                weight: f.weight.to_f64(),
                bias: f.bias.to_f64(),
            }),
        }
    }
}

/// Node handles for one tower's parameters registered on a tape.
pub struct TowerNodes {
    pub word_embed: NodeId,
    pub char_embed: NodeId,
    pub input_proj: NodeId,
    pub conv: Vec<(NodeId, NodeId, NodeId)>,
    pub attention: Option<(NodeId, NodeId, NodeId)>,
    pub fc: Option<(NodeId, NodeId)>,
}

/// Register every tower tensor as a leaf on the tape.
pub fn register_tower<S: Scalar>(tape: &mut Tape<S>, params: &TowerParams<S>) -> TowerNodes {
    TowerNodes {
        word_embed: tape.leaf(params.word_embed.clone()),
        char_embed: tape.leaf(params.char_embed.clone()),
        input_proj: tape.leaf(params.input_proj.clone()),
        conv: params
            .conv
            .iter()
            .map(|b| {
                (
                    tape.leaf(b.depthwise.clone()),
                    tape.leaf(b.pointwise.clone()),
                    tape.leaf(b.bias.clone()),
                )
            })
            .collect(),
        attention: params
            .attention
            .as_ref()
            .map(|a| (tape.leaf(a.wq.clone()), tape.leaf(a.wk.clone()), tape.leaf(a.wv.clone()))),
        fc: params
            .fc
            .as_ref()
            .map(|f| (tape.leaf(f.weight.clone()), tape.leaf(f.bias.clone()))),
    }
}

/// Leaf node ids of a registered tower in the same order as
/// [`TowerParams::visit`].
pub fn tower_node_list(nodes: &TowerNodes) -> Vec<NodeId> {
    let mut out = vec![nodes.word_embed, nodes.char_embed, nodes.input_proj];
    for (k, p, b) in &nodes.conv {
        out.extend([*k, *p, *b]);
    }
    if let Some((wq, wk, wv)) = &nodes.attention {
        out.extend([*wq, *wk, *wv]);
    }
    if let Some((w, b)) = &nodes.fc {
        out.extend([*w, *b]);
    }
    out
}

/// Build the full encode graph for one tokenized text; returns the node
/// holding the unit-norm output vector.
pub fn encode_node<S: Scalar>(
    tape: &mut Tape<S>,
    nodes: &TowerNodes,
    cfg: &ModelConfig,
    tok: &TokenizedText,
) -> Result<NodeId> {
    if tok.is_empty() {
        return Err(Error::EmptyInput("encode of empty tokenization".into()));
    }
    if tok.t_max() != cfg.t_max {
        return Err(Error::Internal(format!(
            "tokenization width {} does not match t_max {}",
            tok.t_max(),
            cfg.t_max
        )));
    }
    let m = tape.token_embed(nodes.word_embed, nodes.char_embed, tok)?;
    let mut h = tape.matmul(m, nodes.input_proj);
    if cfg.flags.use_cnn {
        for (kernel, pointwise, bias) in &nodes.conv {
            let d = tape.depthwise_conv3(h, *kernel);
            let p = tape.matmul(d, *pointwise);
            let b = tape.add_row_broadcast(p, *bias);
            let r = tape.relu(b);
            let s = tape.add(r, h);
            h = tape.zero_masked_rows(s, &tok.mask);
        }
    }
    if cfg.flags.use_attention {
        let (wq, wk, wv) = nodes.attention.as_ref().expect("attention params");
        let q = tape.matmul(h, *wq);
        let k = tape.matmul(h, *wk);
        let v = tape.matmul(h, *wv);
        let scores = tape.matmul_nt(q, k);
        let scaled = tape.scale(scores, S::from_f64(1.0 / (cfg.d_h as f64).sqrt()));
        let weights = tape.masked_softmax_rows(scaled, &tok.mask);
        let mixed = tape.matmul(weights, v);
        h = tape.zero_masked_rows(mixed, &tok.mask);
    }
    let out = if cfg.flags.use_mlp {
        let (w, b) = nodes.fc.as_ref().expect("fc params");
        let flat = tape.flatten(h);
        let y = tape.vec_mat(flat, *w);
        tape.add_vec(y, *b)
    } else {
        tape.mean_masked_rows(h, &tok.mask)
    };
    tape.l2_normalize(out)
}

/// Forward-only encode on a throwaway tape.
pub fn encode<S: Scalar>(
    params: &TowerParams<S>,
    cfg: &ModelConfig,
    tok: &TokenizedText,
) -> Result<Vec<S>> {
    let mut tape = Tape::new();
    let nodes = register_tower(&mut tape, params);
    let out = encode_node(&mut tape, &nodes, cfg, tok)?;
    Ok(tape.value(out).data().to_vec())
}

/// One convolution block outside the tape: depthwise conv (width 3, same
/// padding) -> pointwise mix -> bias -> ReLU -> residual, padded rows re-zeroed.
pub fn conv_block_forward<S: Scalar>(
    h: &Tensor<S>,
    block: &ConvBlockParams<S>,
    mask: &[bool],
) -> Tensor<S> {
    let d = nn::depthwise_conv3(h, &block.depthwise);
    let p = crate::tensor::matmul(&d, &block.pointwise);
    let b = nn::add_row_broadcast(&p, &block.bias);
    let r = nn::relu(&b);
    let s = nn::add(&r, h);
    nn::zero_masked_rows(&s, mask)
}

/// Attention weight matrix (rows = query positions, columns = key positions)
/// as used inside the tower; masked keys receive weight exactly 0.
pub fn attention_weights<S: Scalar>(
    h: &Tensor<S>,
    attn: &AttentionParams<S>,
    mask: &[bool],
) -> Result<Tensor<S>> {
    if !mask.iter().any(|m| *m) {
        return Err(Error::EmptyInput("attention over all-masked input".into()));
    }
    let q = crate::tensor::matmul(h, &attn.wq);
    let k = crate::tensor::matmul(h, &attn.wk);
    let mut scores = crate::tensor::matmul_nt(&q, &k);
    let scale = S::from_f64(1.0 / (h.cols() as f64).sqrt());
    for v in scores.data_mut() {
        *v = *v * scale;
    }
    Ok(nn::masked_softmax_rows(&scores, mask))
}

/// Both towers, shared vocabulary, and the model hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub query_tower: TowerParams<S>,
    pub keyword_tower: TowerParams<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TowerSide {
    Query,
    Keyword,
}

impl<S: Scalar> ModelParams<S> {
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::rng_from(seed, "model-init");
        let query_tower = TowerParams::init(&config, vocab.n_words(), vocab.n_chars(), &mut rng);
        let keyword_tower = TowerParams::init(&config, vocab.n_words(), vocab.n_chars(), &mut rng);
        Ok(ModelParams {
            config,
            vocab,
            query_tower,
            keyword_tower,
        })
    }

    pub fn tower(&self, side: TowerSide) -> &TowerParams<S> {
        match side {
            TowerSide::Query => &self.query_tower,
            TowerSide::Keyword => &self.keyword_tower,
        }
    }

    /// All tensors as ("query.*" / "keyword.*", tensor, role) in fixed order.
    pub fn visit(&self) -> Vec<(String, &Tensor<S>, TensorRole)> {
        let mut out = Vec::new();
        for (name, t, role) in self.query_tower.visit() {
            out.push((format!("query.{name}"), t, role));
        }
        for (name, t, role) in self.keyword_tower.visit() {
            out.push((format!("keyword.{name}"), t, role));
        }
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor<S>, TensorRole)> {
        let mut out = Vec::new();
        for (name, t, role) in self.query_tower.visit_mut() {
            out.push((format!("query.{name}"), t, role));
        }
        for (name, t, role) in self.keyword_tower.visit_mut() {
            out.push((format!("keyword.{name}"), t, role));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.query_tower.n_params() + self.keyword_tower.n_params()
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenizedText> {
        tokenize(text, &self.vocab, self.config.t_max, self.config.c_max)
    }

    pub fn encode_text(&self, side: TowerSide, text: &str) -> Result<Vec<S>> {
        let tok = self.tokenize(text)?;
        encode(self.tower(side), &self.config, &tok)
    }

    pub fn to_f64(&self) -> ModelParams<f64> {
        ModelParams {
            config: self.config,
            vocab: self.vocab.clone(),
            query_tower: self.query_tower.to_f64(),
            keyword_tower: self.keyword_tower.to_f64(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::tokenize;

    fn test_vocab() -> Vocabulary {
        Vocabulary::from_words(["red", "dress", "shoe", "long", "blue"])
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_w: 6,
            d_c: 4,
            d_h: 8,
            d_out: 8,
            t_max: 4,
            c_max: 5,
            n_blocks: 2,
            flags: AblationFlags::full(),
            gamma: 10.0,
        }
    }

    fn random_tower(cfg: &ModelConfig, seed: u64) -> TowerParams<f64> {
        let vocab = test_vocab();
        let mut rng = rng::rng_from(seed, "tower-test");
        TowerParams::init(cfg, vocab.n_words(), vocab.n_chars(), &mut rng)
    }

    #[test]
    fn zero_params_conv_block_is_identity() {
        let cfg = small_cfg();
        let block = ConvBlockParams {
            depthwise: Tensor::<f64>::zeros(&[3, cfg.d_h]),
            pointwise: Tensor::zeros(&[cfg.d_h, cfg.d_h]),
            bias: Tensor::zeros(&[cfg.d_h]),
        };
        let mut h = Tensor::zeros(&[3, cfg.d_h]);
        for (i, v) in h.data_mut().iter_mut().enumerate() {
            *v = (i as f64) * 0.1 - 0.7;
        }
        let mask = [true, true, true];
        let h = nn::zero_masked_rows(&h, &mask);
        let out = conv_block_forward(&h, &block, &mask);
        assert_eq!(out, h);
    }

    #[test]
    fn conv_block_preserves_length() {
        let cfg = small_cfg();
        let params = random_tower(&cfg, 0);
        let h = Tensor::from_vec(
            &[10, cfg.d_h],
            (0..10 * cfg.d_h).map(|i| (i as f64).sin()).collect(),
        );
        let out = conv_block_forward(&h, &params.conv[0], &[true; 10]);
        assert_eq!(out.shape(), &[10, cfg.d_h]);
    }

    #[test]
    fn single_real_token_ignores_pad_neighbors() {
        let cfg = small_cfg();
        let params = random_tower(&cfg, 1);
        let block = &params.conv[0];
        let row: Vec<f64> = (0..cfg.d_h).map(|i| 0.3 * (i as f64) - 1.0).collect();

        let mut h3 = Tensor::zeros(&[3, cfg.d_h]);
        h3.row_mut(0).copy_from_slice(&row);
        let out3 = conv_block_forward(&h3, block, &[true, false, false]);

        let h1 = Tensor::from_vec(&[1, cfg.d_h], row);
        let out1 = conv_block_forward(&h1, block, &[true]);
        assert_eq!(out3.row(0), out1.row(0));
        assert!(out3.row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn attention_single_token_weight_is_one() {
        let cfg = small_cfg();
        let params = random_tower(&cfg, 2);
        let mut h = Tensor::zeros(&[3, cfg.d_h]);
        for v in h.row_mut(0) {
            *v = 0.5;
        }
        let w = attention_weights(&h, params.attention.as_ref().unwrap(), &[true, false, false])
            .unwrap();
        assert_eq!(w.row(0)[0], 1.0);
        assert_eq!(w.row(0)[1], 0.0);
    }

    #[test]
    fn attention_identical_rows_uniform_weights() {
        let cfg = small_cfg();
        let params = random_tower(&cfg, 3);
        let mut h = Tensor::zeros(&[2, cfg.d_h]);
        for t in 0..2 {
            for (i, v) in h.row_mut(t).iter_mut().enumerate() {
                *v = 0.1 * (i as f64) - 0.3;
            }
        }
        let w = attention_weights(&h, params.attention.as_ref().unwrap(), &[true, true]).unwrap();
        for t in 0..2 {
            assert!((w.row(t)[0] - 0.5).abs() < 1e-12);
            assert!((w.row(t)[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = small_cfg();
        let params = random_tower(&cfg, 4);
        let h = Tensor::from_vec(
            &[4, cfg.d_h],
            (0..4 * cfg.d_h).map(|i| ((i * 7) % 13) as f64 * 0.1).collect(),
        );
        let w = attention_weights(
            &h,
            params.attention.as_ref().unwrap(),
            &[true, true, true, false],
        )
        .unwrap();
        for t in 0..4 {
            let sum: f64 = w.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {t} sums to {sum}");
        }
    }

    #[test]
    fn encode_output_is_unit_norm_and_deterministic() {
        let cfg = small_cfg();
        let vocab = test_vocab();
        let params = random_tower(&cfg, 5);
        let tok = tokenize("red dress", &vocab, cfg.t_max, cfg.c_max).unwrap();
        let v1 = encode(&params, &cfg, &tok).unwrap();
        let v2 = encode(&params, &cfg, &tok).unwrap();
        assert_eq!(v1, v2);
        let norm: f64 = v1.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(v1.len(), cfg.d_out);
    }

    #[test]
    fn encode_empty_is_error() {
        let cfg = small_cfg();
        let vocab = test_vocab();
        let params = random_tower(&cfg, 6);
        let tok = tokenize("", &vocab, cfg.t_max, cfg.c_max).unwrap();
        assert!(matches!(
            encode(&params, &cfg, &tok),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn all_false_flags_rejected() {
        assert!(AblationFlags::new(false, false, false).is_err());
        assert!(AblationFlags::new(true, false, false).is_ok());
    }

    #[test]
    fn mean_pool_requires_d_out_eq_d_h() {
        let mut cfg = small_cfg();
        cfg.flags = AblationFlags::new(true, true, false).unwrap();
        cfg.d_out = cfg.d_h + 1;
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        cfg.d_out = cfg.d_h;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn ablation_parameter_counts_are_exact() {
        let cfg = small_cfg();
        let full = random_tower(&cfg, 7).n_params();

        let mut no_cnn_cfg = cfg;
        no_cnn_cfg.flags = AblationFlags::new(false, true, true).unwrap();
        let no_cnn = random_tower(&no_cnn_cfg, 7).n_params();
        assert_eq!(
            full - no_cnn,
            cfg.n_blocks * (3 * cfg.d_h + cfg.d_h * cfg.d_h + cfg.d_h)
        );

        let mut no_attn_cfg = cfg;
        no_attn_cfg.flags = AblationFlags::new(true, false, true).unwrap();
        let no_attn = random_tower(&no_attn_cfg, 7).n_params();
        assert_eq!(full - no_attn, 3 * cfg.d_h * cfg.d_h);

        let mut no_mlp_cfg = cfg;
        no_mlp_cfg.flags = AblationFlags::new(true, true, false).unwrap();
        let no_mlp = random_tower(&no_mlp_cfg, 7).n_params();
        assert_eq!(full - no_mlp, cfg.t_max * cfg.d_h * cfg.d_out + cfg.d_out);
    }

    #[test]
    fn pad_rows_zero_after_init() {
        let cfg = small_cfg();
        let params = random_tower(&cfg, 8);
        assert!(params.word_embed.row(0).iter().all(|v| *v == 0.0));
        assert!(params.char_embed.row(0).iter().all(|v| *v == 0.0));
        assert!(params.word_embed.row(1).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn tape_conv_matches_standalone_forward() {
        let cfg = small_cfg();
        let params = random_tower(&cfg, 9);
        let vocab = test_vocab();
        let tok = tokenize("red dress shoe", &vocab, cfg.t_max, cfg.c_max).unwrap();

        let mut tape = Tape::<f64>::new();
        let nodes = register_tower(&mut tape, &params);
        let m = tape
            .token_embed(nodes.word_embed, nodes.char_embed, &tok)
            .unwrap();
        let h = tape.matmul(m, nodes.input_proj);
        let (k, p, b) = nodes.conv[0];
        let d = tape.depthwise_conv3(h, k);
        let pw = tape.matmul(d, p);
        let bb = tape.add_row_broadcast(pw, b);
        let r = tape.relu(bb);
        let s = tape.add(r, h);
        let z = tape.zero_masked_rows(s, &tok.mask);

        let m2 = crate::encoder::embed_tokens(&tok, &params.word_embed, &params.char_embed).unwrap();
        let h2 = crate::tensor::matmul(&m2, &params.input_proj);
        let expect = conv_block_forward(&h2, &params.conv[0], &tok.mask);
        assert_eq!(tape.value(z), &expect);
    }

    #[test]
    fn encode_padded_positions_do_not_leak() {
        // With random params, every intermediate padded row must stay zero,
        // so two texts with the same real tokens always encode identically.
        let cfg = small_cfg();
        let vocab = test_vocab();
        let params = random_tower(&cfg, 10);
        let tok = tokenize("blue shoe", &vocab, cfg.t_max, cfg.c_max).unwrap();

        let mut tape = Tape::<f64>::new();
        let nodes = register_tower(&mut tape, &params);
        let m = tape
            .token_embed(nodes.word_embed, nodes.char_embed, &tok)
            .unwrap();
        let h = tape.matmul(m, nodes.input_proj);
        for t in 2..cfg.t_max {
            assert!(tape.value(h).row(t).iter().all(|v| *v == 0.0));
        }
        let (k, p, b) = nodes.conv[0];
        let d = tape.depthwise_conv3(h, k);
        let pw = tape.matmul(d, p);
        let bb = tape.add_row_broadcast(pw, b);
        let r = tape.relu(bb);
        let s = tape.add(r, h);
        let z = tape.zero_masked_rows(s, &tok.mask);
        for t in 2..cfg.t_max {
            assert!(tape.value(z).row(t).iter().all(|v| *v == 0.0));
        }
    }
}
