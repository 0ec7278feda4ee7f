//! Layers and the four model architectures built from them.

pub mod checkpoint;
pub mod dense;
pub mod dropout;
pub mod lstm;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{softmax, Activation, Tensor};
use crate::seeding;

use dense::{dense_backward, dense_forward, DenseCache, DenseParams};
use dropout::{check_rate, dropout_backward, dropout_forward, DropoutMask};
use lstm::{
    backward_tm, bi_backward_tm, bi_forward_tm, bi_last, bi_outputs, forward_tm, reverse_blocks, to_time_major,
    BiLstmParams, BiSeqCache, LstmParams, SeqCache,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Mlp,
    LstmFwd,
    LstmBwd,
    BiLstm,
}

impl ModelKind {
    /// Reporting order.
    pub const ALL: [ModelKind; 4] = [ModelKind::Mlp, ModelKind::LstmFwd, ModelKind::LstmBwd, ModelKind::BiLstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::LstmFwd => "lstm_fwd",
            ModelKind::LstmBwd => "lstm_bwd",
            ModelKind::BiLstm => "bilstm",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_recurrent(self) -> bool {
        self != ModelKind::Mlp
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Hidden widths; for recurrent models these are per direction.
    pub layer_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub n_classes: usize,
    /// Candidate and cell-output activation of recurrent layers.
    pub cell_activation: Activation,
}

impl ModelSpec {
    /// Two hidden layers of 64 and 32 units, 50% dropout, four classes,
    /// ReLU inside the recurrent cells.
    pub fn standard(kind: ModelKind) -> Self {
        Self {
            kind,
            layer_widths: vec![64, 32],
            dropout_rate: 0.5,
            n_classes: 4,
            cell_activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(Error::Config(format!("layer widths must be positive, got {:?}", self.layer_widths)));
        }
        check_rate(self.dropout_rate)?;
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        Ok(())
    }
}

/// Shape of one input window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputShape {
    pub steps: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn flat(self) -> usize {
        self.steps * self.channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Dense(Vec<DenseParams>),
    Lstm(Vec<LstmParams>),
    BiLstm(Vec<BiLstmParams>),
}

/// Trainable parameters of one model instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub input: InputShape,
    pub body: Body,
    /// Linear output layer producing logits.
    pub head: DenseParams,
}

/// Builds a model with freshly initialized weights drawn from a stream
/// derived from `seed`.
pub fn build_model(spec: &ModelSpec, input: InputShape, seed: u64) -> Result<ModelState> {
    spec.validate()?;
    if input.steps == 0 || input.channels == 0 {
        return Err(Error::Config(format!("invalid input shape {input:?}")));
    }
    let mut rng = seeding::stream(seed, &[seeding::TAG_INIT]);
    let act = spec.cell_activation;
    let widths = &spec.layer_widths;
    let (body, feat) = match spec.kind {
        ModelKind::Mlp => {
            let mut layers = Vec::new();
            let mut prev = input.flat();
            for &w in widths {
                layers.push(DenseParams::init(prev, w, Activation::Relu, &mut rng));
                prev = w;
            }
            (Body::Dense(layers), prev)
        }
        ModelKind::LstmFwd | ModelKind::LstmBwd => {
            let mut layers = Vec::new();
            let mut prev = input.channels;
            for &w in widths {
                layers.push(LstmParams::init(prev, w, act, &mut rng));
                prev = w;
            }
            (Body::Lstm(layers), prev)
        }
        ModelKind::BiLstm => {
            let mut layers = Vec::new();
            let mut prev = input.channels;
            for &w in widths {
                let f = LstmParams::init(prev, w, act, &mut rng);
                let b = LstmParams::init(prev, w, act, &mut rng);
                layers.push(BiLstmParams::new(f, b)?);
                prev = 2 * w;
            }
            (Body::BiLstm(layers), prev)
        }
    };
    let head = DenseParams::init(feat, spec.n_classes, Activation::Linear, &mut rng);
    Ok(ModelState {
        spec: spec.clone(),
        input,
        body,
        head,
    })
}

impl ModelState {
    /// Named parameter tensors in a fixed order shared by gradients,
    /// optimizer state and checkpoints.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match &self.body {
            Body::Dense(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    out.push((format!("dense{i}.weight"), &l.weight));
                    out.push((format!("dense{i}.bias"), &l.bias));
                }
            }
            Body::Lstm(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    out.push((format!("lstm{i}.weight"), &l.weight));
                    out.push((format!("lstm{i}.bias"), &l.bias));
                }
            }
            Body::BiLstm(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    out.push((format!("bilstm{i}.fwd.weight"), &l.forward.weight));
                    out.push((format!("bilstm{i}.fwd.bias"), &l.forward.bias));
                    out.push((format!("bilstm{i}.bwd.weight"), &l.backward.weight));
                    out.push((format!("bilstm{i}.bwd.bias"), &l.backward.bias));
                }
            }
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        match &mut self.body {
            Body::Dense(ls) => {
                for l in ls {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
            }
            Body::Lstm(ls) => {
                for l in ls {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
            }
            Body::BiLstm(ls) => {
                for l in ls {
                    out.push(&mut l.forward.weight);
                    out.push(&mut l.forward.bias);
                    out.push(&mut l.backward.weight);
                    out.push(&mut l.backward.bias);
                }
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Width of the representation fed to dropout and the output layer.
    pub fn feature_width(&self) -> usize {
        self.head.input_width()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let want = [self.input.steps, self.input.channels];
        match batch.shape() {
            [b, s, c] if [*s, *c] == want => Ok(*b),
            other => Err(Error::ShapeMismatch {
                op: "model input",
                left: other.to_vec(),
                right: want.to_vec(),
            }),
        }
    }
}

/// Parameter gradients in the order of [`ModelState::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Debug)]
enum BodyCache {
    Dense(Vec<DenseCache>),
    Lstm(Vec<SeqCache>),
    BiLstm(Vec<BiSeqCache>),
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    body: BodyCache,
    mask: Option<DropoutMask>,
    head: DenseCache,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn body_forward(m: &ModelState, batch: &Tensor) -> Result<(Tensor, BodyCache)> {
    let b = m.check_batch(batch)?;
    let (steps, ch) = (m.input.steps, m.input.channels);
    match &m.body {
        Body::Dense(layers) => {
            let mut x = Tensor::new(vec![b, steps * ch], batch.data().to_vec())?;
            let mut caches = Vec::with_capacity(layers.len());
            for p in layers {
                let (y, c) = dense_forward(&x, p)?;
                caches.push(c);
                x = y;
            }
            Ok((x, BodyCache::Dense(caches)))
        }
        Body::Lstm(layers) => {
            let mut x = to_time_major(batch.data(), b, steps, ch);
            if m.spec.kind == ModelKind::LstmBwd {
                x = reverse_blocks(&x, steps);
            }
            let mut caches: Vec<SeqCache> = Vec::with_capacity(layers.len());
            for p in layers {
                if let Some(prev) = caches.last() {
                    x = prev.outputs().to_vec();
                }
                caches.push(forward_tm(p, std::mem::take(&mut x), b, steps, None, None));
            }
            let last = caches.last().expect("at least one layer");
            let feat = Tensor::new(vec![b, last_width(layers)], last.last().to_vec())?;
            Ok((feat, BodyCache::Lstm(caches)))
        }
        Body::BiLstm(layers) => {
            let mut x = to_time_major(batch.data(), b, steps, ch);
            let mut caches: Vec<BiSeqCache> = Vec::with_capacity(layers.len());
            for p in layers {
                if let Some(prev) = caches.last() {
                    x = bi_outputs(prev);
                }
                caches.push(bi_forward_tm(p, std::mem::take(&mut x), b, steps));
            }
            let last = caches.last().expect("at least one layer");
            let width = layers.last().expect("at least one layer").output_width();
            Ok((Tensor::new(vec![b, width], bi_last(last))?, BodyCache::BiLstm(caches)))
        }
    }
}

fn last_width(layers: &[LstmParams]) -> usize {
    layers.last().expect("at least one layer").hidden()
}

/// Body output for a `B × T × C` batch (the representation before dropout).
pub fn features(m: &ModelState, batch: &Tensor) -> Result<Tensor> {
    Ok(body_forward(m, batch)?.0)
}

/// Logits for a `B × T × C` batch. Dropout is active only when `training`.
pub fn model_forward<R: Rng>(m: &ModelState, batch: &Tensor, training: bool, rng: &mut R) -> Result<(Tensor, ForwardCache)> {
    let (feat, body) = body_forward(m, batch)?;
    let b = feat.rows();
    let (dropped, mask) = dropout_forward(&feat, m.spec.dropout_rate, training, rng)?;
    let (logits, head) = dense_forward(&dropped, &m.head)?;
    Ok((
        logits,
        ForwardCache {
            batch: b,
            body,
            mask,
            head,
        },
    ))
}

/// Exact gradients of every parameter given the gradient on the logits.
pub fn model_backward(m: &ModelState, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
    if grad_logits.shape() != [cache.batch, m.spec.n_classes] {
        return Err(Error::ShapeMismatch {
            op: "model_backward",
            left: grad_logits.shape().to_vec(),
            right: vec![cache.batch, m.spec.n_classes],
        });
    }
    let head = dense_backward(&m.head, &cache.head, grad_logits)?;
    let d_feat = dropout_backward(&head.d_input, cache.mask.as_ref())?;
    let mut tensors = Vec::new();
    match (&m.body, &cache.body) {
        (Body::Dense(layers), BodyCache::Dense(caches)) => {
            let mut d = d_feat;
            let mut rev = Vec::new();
            for (p, c) in layers.iter().zip(caches).rev() {
                let g = dense_backward(p, c, &d)?;
                rev.push((g.d_weight, g.d_bias));
                d = g.d_input;
            }
            for (w, b) in rev.into_iter().rev() {
                tensors.push(w);
                tensors.push(b);
            }
        }
        (Body::Lstm(layers), BodyCache::Lstm(caches)) => {
            let mut rev = Vec::new();
            let mut d_seq: Option<Vec<f64>> = None;
            for (p, c) in layers.iter().zip(caches).rev() {
                let (d_x, g) = match d_seq.take() {
                    None => backward_tm(p, c, None, Some(d_feat.data())),
                    Some(d) => backward_tm(p, c, Some(&d), None),
                };
                rev.push(g);
                d_seq = Some(d_x);
            }
            for g in rev.into_iter().rev() {
                tensors.push(g.d_weight);
                tensors.push(g.d_bias);
            }
        }
        (Body::BiLstm(layers), BodyCache::BiLstm(caches)) => {
            let mut rev = Vec::new();
            let mut d_seq: Option<Vec<f64>> = None;
            for (p, c) in layers.iter().zip(caches).rev() {
                let (d_x, gf, gb) = match d_seq.take() {
                    None => bi_backward_tm(p, c, None, Some(d_feat.data())),
                    Some(d) => bi_backward_tm(p, c, Some(&d), None),
                };
                rev.push((gf, gb));
                d_seq = Some(d_x);
            }
            for (gf, gb) in rev.into_iter().rev() {
                tensors.push(gf.d_weight);
                tensors.push(gf.d_bias);
                tensors.push(gb.d_weight);
                tensors.push(gb.d_bias);
            }
        }
        _ => {
            return Err(Error::ShapeMismatch {
                op: "model_backward cache kind",
                left: vec![],
                right: vec![],
            })
        }
    }
    tensors.push(head.d_weight);
    tensors.push(head.d_bias);
    Ok(Gradients { tensors })
}

/// Inference-mode logits; dropout is inactive so no randomness is drawn.
pub fn logits(m: &ModelState, batch: &Tensor) -> Result<Tensor> {
    let (feat, _) = body_forward(m, batch)?;
    Ok(dense_forward(&feat, &m.head)?.0)
}

pub fn predict_proba(m: &ModelState, batch: &Tensor) -> Result<Tensor> {
    softmax(&logits(m, batch)?)
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn predict(m: &ModelState, batch: &Tensor) -> Result<Vec<usize>> {
    Ok(argmax_rows(&logits(m, batch)?))
}

/// Stacks `T × C` windows into a `B × T × C` batch.
pub fn stack_windows<'a>(windows: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    let mut n = 0;
    for w in windows {
        match &shape {
            None => shape = Some(w.shape().to_vec()),
            Some(s) if s.as_slice() != w.shape() => {
                return Err(Error::ShapeMismatch {
                    op: "stack_windows",
                    left: s.clone(),
                    right: w.shape().to_vec(),
                })
            }
            _ => {}
        }
        data.extend_from_slice(w.data());
        n += 1;
    }
    let shape = shape.ok_or(Error::Empty("window batch"))?;
    let mut full = vec![n];
    full.extend(shape);
    Tensor::new(full, data)
}
