//! Attention fusion heads, the classifier, and the early/late fusion
//! baselines, assembled into trainable [`FusionModel`]s.
//!
//! All three attention heads consume two token sequences in the same
//! embedding space, one from the intensity volume and one from the
//! log-Jacobian map:
//!
//! * **self**: multi-head self-attention over the concatenated `2N` tokens;
//!   the two halves are average-pooled and the means summed.
//! * **bottleneck**: each modality attends over `[tokens ‖ bottleneck]` with
//!   its own parameters; the two updated bottlenecks are averaged, and the
//!   output is the sum of both modality means and the bottleneck mean.
//! * **cross**: Jacobian tokens are the queries, intensity tokens supply keys
//!   and values; the attended tokens are average-pooled.

use std::fmt;
use std::str::FromStr;

use crate::encoder::{tokenize_and_project, Encoder, EncoderConfig, TokenSequence};
use crate::error::{dim_err, Error, Result};
use crate::nn::{seeded_rng, xavier_uniform, Binding, Linear, ParamId, ParamStore, Rng};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionKind {
    Cross,
    SelfAttention,
    Bottleneck,
    Ilf,
    IlfSa,
    Flf,
    FlfSa,
    Sc,
    ScSa,
    SingleSmri,
    SingleJsm,
}

impl FusionKind {
    pub const ALL: [FusionKind; 11] = [
        FusionKind::Cross,
        FusionKind::SelfAttention,
        FusionKind::Bottleneck,
        FusionKind::Ilf,
        FusionKind::IlfSa,
        FusionKind::Flf,
        FusionKind::FlfSa,
        FusionKind::Sc,
        FusionKind::ScSa,
        FusionKind::SingleSmri,
        FusionKind::SingleJsm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Cross => "cross",
            FusionKind::SelfAttention => "self",
            FusionKind::Bottleneck => "bottleneck",
            FusionKind::Ilf => "ilf",
            FusionKind::IlfSa => "ilf-sa",
            FusionKind::Flf => "flf",
            FusionKind::FlfSa => "flf-sa",
            FusionKind::Sc => "sc",
            FusionKind::ScSa => "sc-sa",
            FusionKind::SingleSmri => "single-smri",
            FusionKind::SingleJsm => "single-jsm",
        }
    }

    /// Whether the kind consumes the log-Jacobian map.
    pub fn uses_jsm(self) -> bool {
        self != FusionKind::SingleSmri
    }

    pub fn uses_smri(self) -> bool {
        self != FusionKind::SingleJsm
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            let all: Vec<_> = FusionKind::ALL.iter().map(|k| k.as_str()).collect();
            Error::Validation(format!("unknown fusion kind {s:?}; expected one of {}", all.join("|")))
        })
    }
}

// ---------------------------------------------------------------- attention

/// Multi-head scaled dot-product attention with `W_Q, W_K, W_V, W_O`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Attention output plus the per-head weight matrices `[N_q × N_k]`.
pub struct AttentionTrace {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return dim_err(format!("embedding dim {dim} is not divisible by {heads} heads"));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn num_params(&self) -> usize {
        4 * self.q.num_params()
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, queries: Var, context: Var) -> Result<Var> {
        Ok(self.trace(g, p, queries, context)?.output)
    }

    /// `softmax(Q_h K_hᵀ / √d_head) V_h` per head, concatenated, then `W_O`.
    pub fn trace(&self, g: &mut Graph, p: &Binding, queries: Var, context: Var) -> Result<AttentionTrace> {
        for (what, v) in [("queries", queries), ("keys/values", context)] {
            match g.value(v).shape() {
                [_, d] if *d == self.dim => {}
                s => return dim_err(format!("attention {what} must be N×{}, got {s:?}", self.dim)),
            }
        }
        let q = self.q.forward(g, p, queries)?;
        let k = self.k.forward(g, p, context)?;
        let v = self.v.forward(g, p, context)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let w = g.softmax_lastdim(scores)?;
            outs.push(g.matmul(w, vh)?);
            weights.push(w);
        }
        let z = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let output = self.o.forward(g, p, z)?;
        Ok(AttentionTrace { output, weights })
    }
}

/// Learnable shared tokens plus one attention block per modality.
#[derive(Clone, Debug)]
pub struct BottleneckState {
    pub tokens: ParamId,
    pub count: usize,
    pub attn_smri: MultiHeadAttention,
    pub attn_jsm: MultiHeadAttention,
}

impl BottleneckState {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        count: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::Validation("bottleneck needs at least one token".into()));
        }
        let tokens = store.add(format!("{name}.tokens"), xavier_uniform(&[count, dim], count, dim, rng));
        Ok(Self {
            tokens,
            count,
            attn_smri: MultiHeadAttention::new(store, &format!("{name}.attn_smri"), dim, heads, rng)?,
            attn_jsm: MultiHeadAttention::new(store, &format!("{name}.attn_jsm"), dim, heads, rng)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.count * self.attn_smri.dim + self.attn_smri.num_params() + self.attn_jsm.num_params()
    }
}

/// Pooled vector handed to the classifier.
#[derive(Clone, Copy, Debug)]
pub struct FusedRepresentation {
    pub vector: Var,
    pub kind: FusionKind,
}

fn check_pair(a: &TokenSequence, b: &TokenSequence, need_equal_n: bool) -> Result<()> {
    if a.d != b.d {
        return dim_err(format!("token widths differ: {} vs {}", a.d, b.d));
    }
    if need_equal_n && a.n != b.n {
        return dim_err(format!("token counts differ: {} vs {}", a.n, b.n));
    }
    Ok(())
}

pub fn self_attention_fuse(
    g: &mut Graph,
    p: &Binding,
    f_smri: &TokenSequence,
    f_jsm: &TokenSequence,
    attn: &MultiHeadAttention,
) -> Result<FusedRepresentation> {
    check_pair(f_smri, f_jsm, true)?;
    let joint = g.concat_rows(&[f_smri.tokens, f_jsm.tokens])?;
    let z = attn.forward(g, p, joint, joint)?;
    let z_smri = g.slice_rows(z, 0, f_smri.n)?;
    let z_jsm = g.slice_rows(z, f_smri.n, f_jsm.n)?;
    let m_smri = g.mean_rows(z_smri)?;
    let m_jsm = g.mean_rows(z_jsm)?;
    Ok(FusedRepresentation {
        vector: g.add(m_smri, m_jsm)?,
        kind: FusionKind::SelfAttention,
    })
}

pub fn bottleneck_fuse(
    g: &mut Graph,
    p: &Binding,
    f_smri: &TokenSequence,
    f_jsm: &TokenSequence,
    s: &BottleneckState,
) -> Result<FusedRepresentation> {
    check_pair(f_smri, f_jsm, true)?;
    let fsn = p.var(s.tokens);
    let mut pooled = Vec::with_capacity(2);
    let mut updated_fsn = Vec::with_capacity(2);
    for (f, attn) in [(f_smri, &s.attn_smri), (f_jsm, &s.attn_jsm)] {
        let x = g.concat_rows(&[f.tokens, fsn])?;
        let y = attn.forward(g, p, x, x)?;
        let own = g.slice_rows(y, 0, f.n)?;
        pooled.push(g.mean_rows(own)?);
        updated_fsn.push(g.slice_rows(y, f.n, s.count)?);
    }
    let fsn_sum = g.add(updated_fsn[0], updated_fsn[1])?;
    let fsn_shared = g.scale(fsn_sum, 0.5);
    let fsn_mean = g.mean_rows(fsn_shared)?;
    let modal = g.add(pooled[0], pooled[1])?;
    Ok(FusedRepresentation {
        vector: g.add(modal, fsn_mean)?,
        kind: FusionKind::Bottleneck,
    })
}

/// Jacobian tokens query the intensity tokens.
pub fn cross_attention_fuse(
    g: &mut Graph,
    p: &Binding,
    f_smri: &TokenSequence,
    f_jsm: &TokenSequence,
    attn: &MultiHeadAttention,
) -> Result<FusedRepresentation> {
    check_pair(f_smri, f_jsm, false)?;
    let z = attn.forward(g, p, f_jsm.tokens, f_smri.tokens)?;
    Ok(FusedRepresentation {
        vector: g.mean_rows(z)?,
        kind: FusionKind::Cross,
    })
}

// ---------------------------------------------------------------- classifier

/// `in → in/2 (ReLU) → 2`, or a single linear layer when `hidden` is off.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub hidden: Option<Linear>,
    pub out: Linear,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: bool, rng: &mut Rng) -> Self {
        if hidden {
            let h = (in_dim / 2).max(1);
            Self {
                hidden: Some(Linear::new(store, &format!("{name}.hidden"), in_dim, h, rng)),
                out: Linear::new(store, &format!("{name}.out"), h, 2, rng),
            }
        } else {
            Self {
                hidden: None,
                out: Linear::new(store, &format!("{name}.out"), in_dim, 2, rng),
            }
        }
    }

    /// Returns logits of shape `[1×2]`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, f: Var) -> Result<Var> {
        let mut h = f;
        if let Some(hidden) = &self.hidden {
            h = hidden.forward(g, p, h)?;
            h = g.relu(h);
        }
        self.out.forward(g, p, h)
    }

    pub fn num_params(&self) -> usize {
        self.hidden.as_ref().map_or(0, Linear::num_params) + self.out.num_params()
    }
}

// ---------------------------------------------------------------- models

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: FusionKind,
    /// Encoder template; `in_channels` is set per branch.
    pub encoder: EncoderConfig,
    pub embed: usize,
    pub heads: usize,
    pub bottleneck_tokens: usize,
    /// Hidden layer in the classifier (off only for diagnostics).
    pub classifier_hidden: bool,
}

impl ModelConfig {
    pub fn new(kind: FusionKind) -> Self {
        Self {
            kind,
            encoder: EncoderConfig::default(),
            embed: 128,
            heads: 4,
            bottleneck_tokens: 4,
            classifier_hidden: true,
        }
    }
}

/// One modality path: encoder → tokens → projection → optional
/// intra-modal self-attention → mean over tokens.
#[derive(Clone, Debug)]
pub struct Branch {
    pub encoder: Encoder,
    pub proj: Linear,
    pub self_attn: Option<MultiHeadAttention>,
}

impl Branch {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        in_channels: usize,
        sa: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let enc_cfg = cfg.encoder.clone().with_in_channels(in_channels);
        let encoder = Encoder::new(store, &format!("{name}.enc"), enc_cfg, rng)?;
        let proj = Linear::new(
            store,
            &format!("{name}.proj"),
            encoder.cfg.output_channels(),
            cfg.embed,
            rng,
        );
        let self_attn = if sa {
            Some(MultiHeadAttention::new(
                store,
                &format!("{name}.sa"),
                cfg.embed,
                cfg.heads,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            encoder,
            proj,
            self_attn,
        })
    }

    pub fn tokens(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<TokenSequence> {
        let fm = self.encoder.forward(g, p, x)?;
        tokenize_and_project(g, p, fm, &self.proj)
    }

    fn pooled(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let t = self.tokens(g, p, x)?;
        let t = match &self.self_attn {
            Some(sa) => sa.forward(g, p, t.tokens, t.tokens)?,
            None => t.tokens,
        };
        g.mean_rows(t)
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.proj.num_params() + self.self_attn.as_ref().map_or(0, |a| a.num_params())
    }
}

// One instance per model, so the size gap between variants is irrelevant.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
enum Arch {
    Attention {
        smri: Branch,
        jsm: Branch,
        head: AttentionHead,
        classifier: ClassifierHead,
    },
    InputLevel {
        branch: Branch,
        classifier: ClassifierHead,
    },
    FeatureLevel {
        smri: Branch,
        jsm: Branch,
        classifier: ClassifierHead,
    },
    ScoreLevel {
        smri: (Branch, ClassifierHead),
        jsm: (Branch, ClassifierHead),
    },
    Single {
        branch: Branch,
        classifier: ClassifierHead,
    },
}

#[derive(Clone, Debug)]
enum AttentionHead {
    Cross(MultiHeadAttention),
    SelfAttn(MultiHeadAttention),
    Bottleneck(BottleneckState),
}

/// The volumes a model consumes for one subject, each `1×S×S×S`.
#[derive(Clone, Debug)]
pub struct SubjectInputs {
    pub smri: Tensor,
    pub jsm: Tensor,
}

impl SubjectInputs {
    /// Channel-stacked `[2×S×S×S]` input (intensity first) for input-level
    /// fusion.
    pub fn two_channel(&self) -> Result<Tensor> {
        if self.smri.shape() != self.jsm.shape() || self.smri.shape().first() != Some(&1) {
            return dim_err(format!(
                "cannot stack {:?} and {:?} as channels",
                self.smri.shape(),
                self.jsm.shape()
            ));
        }
        let mut shape = self.smri.shape().to_vec();
        shape[0] = 2;
        Tensor::new(shape, [self.smri.data(), self.jsm.data()].concat())
    }
}

/// Kind-specific model input.
#[derive(Clone, Copy, Debug)]
pub enum ModelInput<'a> {
    Paired { smri: &'a Tensor, jsm: &'a Tensor },
    TwoChannel(&'a Tensor),
    Single(&'a Tensor),
}

#[derive(Clone, Debug)]
pub struct FusionModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    arch: Arch,
}

impl FusionModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let c = &cfg;
        let d = c.embed;
        let hid = c.classifier_hidden;
        let arch = match c.kind {
            FusionKind::Cross | FusionKind::SelfAttention | FusionKind::Bottleneck => {
                let smri = Branch::new(&mut store, "smri", c, 1, false, &mut rng)?;
                let jsm = Branch::new(&mut store, "jsm", c, 1, false, &mut rng)?;
                let head = match c.kind {
                    FusionKind::Cross => {
                        AttentionHead::Cross(MultiHeadAttention::new(&mut store, "cross", d, c.heads, &mut rng)?)
                    }
                    FusionKind::SelfAttention => {
                        AttentionHead::SelfAttn(MultiHeadAttention::new(&mut store, "self", d, c.heads, &mut rng)?)
                    }
                    _ => AttentionHead::Bottleneck(BottleneckState::new(
                        &mut store,
                        "bottleneck",
                        d,
                        c.heads,
                        c.bottleneck_tokens,
                        &mut rng,
                    )?),
                };
                let classifier = ClassifierHead::new(&mut store, "classifier", d, hid, &mut rng);
                Arch::Attention {
                    smri,
                    jsm,
                    head,
                    classifier,
                }
            }
            FusionKind::Ilf | FusionKind::IlfSa => {
                let branch = Branch::new(&mut store, "ilf", c, 2, c.kind == FusionKind::IlfSa, &mut rng)?;
                let classifier = ClassifierHead::new(&mut store, "classifier", d, hid, &mut rng);
                Arch::InputLevel { branch, classifier }
            }
            FusionKind::Flf | FusionKind::FlfSa => {
                let sa = c.kind == FusionKind::FlfSa;
                let smri = Branch::new(&mut store, "smri", c, 1, sa, &mut rng)?;
                let jsm = Branch::new(&mut store, "jsm", c, 1, sa, &mut rng)?;
                let classifier = ClassifierHead::new(&mut store, "classifier", 2 * d, hid, &mut rng);
                Arch::FeatureLevel { smri, jsm, classifier }
            }
            FusionKind::Sc | FusionKind::ScSa => {
                let sa = c.kind == FusionKind::ScSa;
                let smri = Branch::new(&mut store, "smri", c, 1, sa, &mut rng)?;
                let smri_head = ClassifierHead::new(&mut store, "smri.classifier", d, hid, &mut rng);
                let jsm = Branch::new(&mut store, "jsm", c, 1, sa, &mut rng)?;
                let jsm_head = ClassifierHead::new(&mut store, "jsm.classifier", d, hid, &mut rng);
                Arch::ScoreLevel {
                    smri: (smri, smri_head),
                    jsm: (jsm, jsm_head),
                }
            }
            FusionKind::SingleSmri | FusionKind::SingleJsm => {
                let name = if c.kind == FusionKind::SingleSmri {
                    "smri"
                } else {
                    "jsm"
                };
                let branch = Branch::new(&mut store, name, c, 1, false, &mut rng)?;
                let classifier = ClassifierHead::new(&mut store, "classifier", d, hid, &mut rng);
                Arch::Single { branch, classifier }
            }
        };
        Ok(Self {
            cfg,
            params: store,
            arch,
        })
    }

    pub fn kind(&self) -> FusionKind {
        self.cfg.kind
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Scalar parameters inside encoders only.
    pub fn encoder_params(&self) -> usize {
        match &self.arch {
            Arch::Attention { smri, jsm, .. } | Arch::FeatureLevel { smri, jsm, .. } => {
                smri.encoder.num_params() + jsm.encoder.num_params()
            }
            Arch::ScoreLevel { smri, jsm } => smri.0.encoder.num_params() + jsm.0.encoder.num_params(),
            Arch::InputLevel { branch, .. } | Arch::Single { branch, .. } => branch.encoder.num_params(),
        }
    }

    /// Token sequences of the two modalities (attention kinds only).
    pub fn encode_pair(
        &self,
        g: &mut Graph,
        p: &Binding,
        smri: Var,
        jsm: Var,
    ) -> Result<(TokenSequence, TokenSequence)> {
        match &self.arch {
            Arch::Attention { smri: bs, jsm: bj, .. } | Arch::FeatureLevel { smri: bs, jsm: bj, .. } => {
                Ok((bs.tokens(g, p, smri)?, bj.tokens(g, p, jsm)?))
            }
            _ => Err(Error::Validation(format!(
                "{} has no paired token encoders",
                self.kind()
            ))),
        }
    }

    /// Per-head cross-attention weights `[N_jsm×N_smri]` for one subject,
    /// with parameters frozen. Only cross-attention models have them.
    pub fn cross_attention_weights(&self, s: &SubjectInputs) -> Result<Vec<Tensor>> {
        let Arch::Attention {
            smri,
            jsm,
            head: AttentionHead::Cross(a),
            ..
        } = &self.arch
        else {
            return Err(Error::Validation(format!(
                "{} has no cross-attention head",
                self.kind()
            )));
        };
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let (xs, xj) = (g.constant(s.smri.clone()), g.constant(s.jsm.clone()));
        let ts = smri.tokens(&mut g, &p, xs)?;
        let tj = jsm.tokens(&mut g, &p, xj)?;
        let t = a.trace(&mut g, &p, tj.tokens, ts.tokens)?;
        Ok(t.weights.iter().map(|&w| g.value(w).clone()).collect())
    }

    /// Logits `[1×2]` for one subject.
    pub fn forward(&self, g: &mut Graph, p: &Binding, input: ModelInput<'_>) -> Result<Var> {
        let mismatch = |want: &str| {
            Err(Error::Validation(format!(
                "{} expects {want} input, got {}",
                self.kind(),
                match input {
                    ModelInput::Paired { .. } => "paired",
                    ModelInput::TwoChannel(_) => "two-channel",
                    ModelInput::Single(_) => "single-volume",
                }
            )))
        };
        match (&self.arch, input) {
            (
                Arch::Attention {
                    smri,
                    jsm,
                    head,
                    classifier,
                },
                ModelInput::Paired { smri: xs, jsm: xj },
            ) => {
                let (xs, xj) = (g.constant(xs.clone()), g.constant(xj.clone()));
                let ts = smri.tokens(g, p, xs)?;
                let tj = jsm.tokens(g, p, xj)?;
                let fused = match head {
                    AttentionHead::Cross(a) => cross_attention_fuse(g, p, &ts, &tj, a)?,
                    AttentionHead::SelfAttn(a) => self_attention_fuse(g, p, &ts, &tj, a)?,
                    AttentionHead::Bottleneck(s) => bottleneck_fuse(g, p, &ts, &tj, s)?,
                };
                classifier.forward(g, p, fused.vector)
            }
            (Arch::Attention { .. }, _) => mismatch("paired"),
            (Arch::InputLevel { branch, classifier }, ModelInput::TwoChannel(x)) => {
                let x = g.constant(x.clone());
                let f = branch.pooled(g, p, x)?;
                classifier.forward(g, p, f)
            }
            (Arch::InputLevel { .. }, _) => mismatch("two-channel"),
            (Arch::FeatureLevel { smri, jsm, classifier }, ModelInput::Paired { smri: xs, jsm: xj }) => {
                let (xs, xj) = (g.constant(xs.clone()), g.constant(xj.clone()));
                let fs = smri.pooled(g, p, xs)?;
                let fj = jsm.pooled(g, p, xj)?;
                let rs = g.reshape(fs, vec![1, self.cfg.embed])?;
                let rj = g.reshape(fj, vec![1, self.cfg.embed])?;
                let cat = g.concat_cols(&[rs, rj])?;
                classifier.forward(g, p, cat)
            }
            (Arch::FeatureLevel { .. }, _) => mismatch("paired"),
            (Arch::ScoreLevel { smri, jsm }, ModelInput::Paired { smri: xs, jsm: xj }) => {
                let (xs, xj) = (g.constant(xs.clone()), g.constant(xj.clone()));
                let fs = smri.0.pooled(g, p, xs)?;
                let ls = smri.1.forward(g, p, fs)?;
                let fj = jsm.0.pooled(g, p, xj)?;
                let lj = jsm.1.forward(g, p, fj)?;
                let sum = g.add(ls, lj)?;
                Ok(g.scale(sum, 0.5))
            }
            (Arch::ScoreLevel { .. }, _) => mismatch("paired"),
            (Arch::Single { branch, classifier }, ModelInput::Single(x)) => {
                let x = g.constant(x.clone());
                let f = branch.pooled(g, p, x)?;
                classifier.forward(g, p, f)
            }
            (Arch::Single { .. }, _) => mismatch("single-volume"),
        }
    }

    /// Builds the kind-appropriate input from a subject's volumes.
    pub fn forward_subject(&self, g: &mut Graph, p: &Binding, s: &SubjectInputs) -> Result<Var> {
        match self.kind() {
            FusionKind::Ilf | FusionKind::IlfSa => {
                let x = s.two_channel()?;
                self.forward(g, p, ModelInput::TwoChannel(&x))
            }
            FusionKind::SingleSmri => self.forward(g, p, ModelInput::Single(&s.smri)),
            FusionKind::SingleJsm => self.forward(g, p, ModelInput::Single(&s.jsm)),
            _ => self.forward(
                g,
                p,
                ModelInput::Paired {
                    smri: &s.smri,
                    jsm: &s.jsm,
                },
            ),
        }
    }

    /// Class-1 probability for one subject (no gradient recorded for params).
    pub fn predict_proba(&self, s: &SubjectInputs) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let logits = self.forward_subject(&mut g, &p, s)?;
        let l = g.value(logits).data();
        let m = l[0].max(l[1]);
        let (e0, e1) = ((l[0] - m).exp(), (l[1] - m).exp());
        Ok(e1 / (e0 + e1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_strings_round_trip() {
        for k in FusionKind::ALL {
            assert_eq!(k.as_str().parse::<FusionKind>().unwrap(), k);
        }
        assert!("early".parse::<FusionKind>().is_err());
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut store = ParamStore::new();
        assert!(MultiHeadAttention::new(&mut store, "a", 10, 4, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn input_mismatch_is_validation_error() {
        let mut cfg = ModelConfig::new(FusionKind::Ilf);
        cfg.encoder.input_size = 8;
        cfg.encoder.stage_channels = vec![2];
        cfg.embed = 4;
        cfg.heads = 1;
        let m = FusionModel::new(cfg, 0).unwrap();
        let x = Tensor::zeros(&[1, 8, 8, 8]);
        let mut g = Graph::new();
        let p = m.params.bind(&mut g);
        assert!(matches!(
            m.forward(&mut g, &p, ModelInput::Single(&x)),
            Err(Error::Validation(_))
        ));
    }
}
