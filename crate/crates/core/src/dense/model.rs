use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::inputs::{Inputs, Item};
use crate::numerics::{axpy, dot, Gradients, Matrix, Parameterized, RandomStream};

/// Maps an item to its raw (pre-projection) embedding of `channels · dim` values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Encoder {
    /// Free embedding table, one row per item.
    Table(Matrix),
    /// Linear map from features; row `j` produces output coordinate `j`.
    Linear(Matrix),
}

impl Encoder {
    fn init(inputs: &Inputs, out_dim: usize, init_scale: f64, stream: &RandomStream) -> Self {
        match inputs {
            Inputs::Indexed(n) => Encoder::Table(stream.gaussian_matrix(*n, out_dim, init_scale)),
            Inputs::Features(f) => {
                let fan_in = f.cols().max(1) as f64;
                Encoder::Linear(stream.gaussian_matrix(
                    out_dim,
                    f.cols(),
                    init_scale / fan_in.sqrt(),
                ))
            }
        }
    }

    fn matrix(&self) -> &Matrix {
        match self {
            Encoder::Table(m) | Encoder::Linear(m) => m,
        }
    }

    fn matrix_mut(&mut self) -> &mut Matrix {
        match self {
            Encoder::Table(m) | Encoder::Linear(m) => m,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Table(m) => m.cols(),
            Encoder::Linear(m) => m.rows(),
        }
    }

    fn embed(&self, item: Item<'_>) -> Result<Vec<f64>> {
        match (self, item) {
            (Encoder::Table(t), Item::Index(i)) => {
                if i >= t.rows() {
                    return Err(LabError::domain(format!(
                        "index {i} out of range for table of {}",
                        t.rows()
                    )));
                }
                Ok(t.row(i).to_vec())
            }
            (Encoder::Linear(w), Item::Features(x)) => {
                if x.len() != w.cols() {
                    return Err(LabError::domain(format!(
                        "feature dimension {} does not match encoder input {}",
                        x.len(),
                        w.cols()
                    )));
                }
                Ok((0..w.rows()).map(|j| dot(w.row(j), x)).collect())
            }
            (Encoder::Table(_), Item::Features(_)) => Err(LabError::domain(
                "tabular encoder expects an index, got features",
            )),
            (Encoder::Linear(_), Item::Index(_)) => Err(LabError::domain(
                "linear encoder expects features, got an index",
            )),
        }
    }

    fn backward(&self, item: Item<'_>, grad_out: &[f64], block: usize, grads: &mut Gradients) {
        match (self, item) {
            (Encoder::Table(_), Item::Index(i)) => grads.push(block, i, grad_out.to_vec()),
            (Encoder::Linear(_), Item::Features(x)) => {
                for (j, &g) in grad_out.iter().enumerate() {
                    if g != 0.0 {
                        grads.push(block, j, x.iter().map(|v| g * v).collect());
                    }
                }
            }
            _ => unreachable!("backward after a successful forward"),
        }
    }
}

/// Two-layer rectifier map `r → r'`: `W₂ · relu(W₁ x + b₁) + b₂`, hidden width `2r'`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionHead {
    w1: Matrix,
    b1: Matrix,
    w2: Matrix,
    b2: Matrix,
}

/// How a freshly appended projection head is initialized.
#[derive(Debug, Clone, Copy)]
pub enum ProjectionInit {
    /// He-style Gaussian weights, zero biases.
    Random(RandomStream),
    /// Exact identity via `relu(x) − relu(−x) = x`; needs `r' = r`.
    Identity,
}

impl ProjectionHead {
    fn new(in_dim: usize, out_dim: usize, init: ProjectionInit) -> Result<Self> {
        let hidden = 2 * out_dim;
        match init {
            ProjectionInit::Identity => {
                if in_dim != out_dim {
                    return Err(LabError::domain(format!(
                        "identity projection needs r' = r, got {in_dim} -> {out_dim}"
                    )));
                }
                let w1 = Matrix::from_fn(hidden, in_dim, |h, i| {
                    if h == i {
                        1.0
                    } else if h == i + out_dim {
                        -1.0
                    } else {
                        0.0
                    }
                });
                let w2 = Matrix::from_fn(out_dim, hidden, |o, h| {
                    if h == o {
                        1.0
                    } else if h == o + out_dim {
                        -1.0
                    } else {
                        0.0
                    }
                });
                Ok(Self {
                    w1,
                    b1: Matrix::zeros(1, hidden),
                    w2,
                    b2: Matrix::zeros(1, out_dim),
                })
            }
            ProjectionInit::Random(stream) => Ok(Self {
                w1: stream
                    .derive(1)
                    .gaussian_matrix(hidden, in_dim, (2.0 / in_dim as f64).sqrt()),
                b1: Matrix::zeros(1, hidden),
                w2: stream
                    .derive(2)
                    .gaussian_matrix(out_dim, hidden, (1.0 / hidden as f64).sqrt()),
                b2: Matrix::zeros(1, out_dim),
            }),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.rows()
    }

    /// Returns `(output, hidden pre-activations)`.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pre: Vec<f64> = (0..self.w1.rows())
            .map(|h| dot(self.w1.row(h), x) + self.b1[(0, h)])
            .collect();
        let act: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
        let out = (0..self.w2.rows())
            .map(|o| dot(self.w2.row(o), &act) + self.b2[(0, o)])
            .collect();
        (out, pre)
    }

    /// Pushes parameter gradients (blocks `base..base+4`) and returns `∂L/∂x`.
    fn backward(
        &self,
        x: &[f64],
        pre: &[f64],
        dout: &[f64],
        base: usize,
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let act: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
        for (o, &g) in dout.iter().enumerate() {
            grads.push(base + 2, o, act.iter().map(|a| g * a).collect());
        }
        grads.push(base + 3, 0, dout.to_vec());
        let mut da = vec![0.0; pre.len()];
        for (o, &g) in dout.iter().enumerate() {
            axpy(g, self.w2.row(o), &mut da);
        }
        for (d, &p) in da.iter_mut().zip(pre) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dx = vec![0.0; x.len()];
        for (h, &g) in da.iter().enumerate() {
            if g != 0.0 {
                grads.push(base, h, x.iter().map(|v| g * v).collect());
                axpy(g, self.w1.row(h), &mut dx);
            }
        }
        grads.push(base + 1, 0, da);
        dx
    }

    fn blocks(&self) -> [&Matrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn blocks_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Which tower of the dual encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Doc,
}

/// Architecture knobs for a dense retriever.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DrConfig {
    /// Per-channel embedding dimension `r`.
    pub dim: usize,
    /// Interaction channels `c`; 1 is the standard bi-encoder.
    pub channels: usize,
    pub temperature: f64,
    pub init_scale: f64,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            channels: 1,
            temperature: 1.0,
            init_scale: 0.1,
        }
    }
}

/// Dual encoder with bilinear (or multi-channel bilinear) scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrModel {
    query_encoder: Encoder,
    doc_encoder: Encoder,
    channels: usize,
    dim: usize,
    temperature: f64,
    query_head: Option<ProjectionHead>,
    doc_head: Option<ProjectionHead>,
}

/// Forward intermediate values needed for backprop through one tower.
pub(crate) struct TowerTrace {
    /// Encoder output; left empty when the tower has no head.
    raw: Vec<f64>,
    pre: Vec<Vec<f64>>,
    pub(crate) out: Vec<f64>,
}

impl DrModel {
    pub fn new(
        config: &DrConfig,
        queries: &Inputs,
        docs: &Inputs,
        stream: &RandomStream,
    ) -> Result<Self> {
        if config.dim == 0 || config.channels == 0 {
            return Err(LabError::domain("dim and channels must be at least 1"));
        }
        if !(config.temperature > 0.0) || !config.temperature.is_finite() {
            return Err(LabError::domain("temperature must be positive"));
        }
        let out = config.dim * config.channels;
        Ok(Self {
            query_encoder: Encoder::init(queries, out, config.init_scale, &stream.derive(1)),
            doc_encoder: Encoder::init(docs, out, config.init_scale, &stream.derive(2)),
            channels: config.channels,
            dim: config.dim,
            temperature: config.temperature,
            query_head: None,
            doc_head: None,
        })
    }

    /// Model from explicit encoders; both must emit `channels · dim` values.
    pub fn from_parts(
        query_encoder: Encoder,
        doc_encoder: Encoder,
        channels: usize,
        temperature: f64,
    ) -> Result<Self> {
        let out = query_encoder.output_dim();
        if channels == 0 || !out.is_multiple_of(channels) || doc_encoder.output_dim() != out {
            return Err(LabError::domain(
                "encoder outputs must match and divide into channels",
            ));
        }
        if !(temperature > 0.0) {
            return Err(LabError::domain("temperature must be positive"));
        }
        Ok(Self {
            query_encoder,
            doc_encoder,
            channels,
            dim: out / channels,
            temperature,
            query_head: None,
            doc_head: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, temperature: f64) -> Result<()> {
        if !(temperature > 0.0) {
            return Err(LabError::domain("temperature must be positive"));
        }
        self.temperature = temperature;
        Ok(())
    }

    /// Per-channel dimension of the final (post-projection) embedding.
    pub fn output_dim(&self) -> usize {
        self.query_head
            .as_ref()
            .map_or(self.dim, ProjectionHead::out_dim)
    }

    pub fn encoder(&self, side: Side) -> &Encoder {
        match side {
            Side::Query => &self.query_encoder,
            Side::Doc => &self.doc_encoder,
        }
    }

    pub fn has_projection(&self) -> bool {
        self.query_head.is_some()
    }

    fn head(&self, side: Side) -> Option<&ProjectionHead> {
        match side {
            Side::Query => self.query_head.as_ref(),
            Side::Doc => self.doc_head.as_ref(),
        }
    }

    fn encoder_block(side: Side) -> usize {
        match side {
            Side::Query => 0,
            Side::Doc => 1,
        }
    }

    fn head_block(side: Side) -> usize {
        match side {
            Side::Query => 2,
            Side::Doc => 6,
        }
    }

    pub(crate) fn trace(&self, side: Side, item: Item<'_>) -> Result<TowerTrace> {
        let raw = self.encoder(side).embed(item)?;
        match self.head(side) {
            None => Ok(TowerTrace {
                out: raw,
                raw: Vec::new(),
                pre: Vec::new(),
            }),
            Some(head) => {
                let mut out = Vec::with_capacity(self.channels * head.out_dim());
                let mut pre = Vec::with_capacity(self.channels);
                for chunk in raw.chunks(self.dim) {
                    let (o, p) = head.forward(chunk);
                    out.extend(o);
                    pre.push(p);
                }
                Ok(TowerTrace { raw, pre, out })
            }
        }
    }

    pub(crate) fn backward(
        &self,
        side: Side,
        item: Item<'_>,
        trace: &TowerTrace,
        dout: &[f64],
        grads: &mut Gradients,
    ) {
        let encoder = self.encoder(side);
        let block = Self::encoder_block(side);
        match self.head(side) {
            None => encoder.backward(item, dout, block, grads),
            Some(head) => {
                let r_out = head.out_dim();
                let mut draw = Vec::with_capacity(trace.raw.len());
                for (c, chunk) in trace.raw.chunks(self.dim).enumerate() {
                    let d = &dout[c * r_out..(c + 1) * r_out];
                    draw.extend(head.backward(
                        chunk,
                        &trace.pre[c],
                        d,
                        Self::head_block(side),
                        grads,
                    ));
                }
                encoder.backward(item, &draw, block, grads);
            }
        }
    }

    /// Final embedding (`channels · output_dim` values).
    pub fn embed(&self, side: Side, item: Item<'_>) -> Result<Vec<f64>> {
        Ok(self.trace(side, item)?.out)
    }

    /// All final embeddings of `inputs`, one row per item.
    pub fn embed_all(&self, side: Side, inputs: &Inputs) -> Result<Matrix> {
        let width = self.channels * self.output_dim();
        let mut out = Matrix::zeros(inputs.len(), width);
        for i in 0..inputs.len() {
            let e = self.embed(side, inputs.item(i))?;
            out.row_mut(i).copy_from_slice(&e);
        }
        Ok(out)
    }

    /// Raw score matrix `S = Q Dᵀ` (before temperature), rows are queries.
    pub fn score_matrix(&self, queries: &Inputs, docs: &Inputs) -> Result<Matrix> {
        let q = self.embed_all(Side::Query, queries)?;
        let d = self.embed_all(Side::Doc, docs)?;
        q.matmul_transpose(&d)
    }

    /// Appends a two-layer rectifier projection to both towers.
    pub fn project_embeddings(&self, target_dim: usize, init: ProjectionInit) -> Result<DrModel> {
        if target_dim == 0 {
            return Err(LabError::domain("projection dimension must be at least 1"));
        }
        if self.has_projection() {
            return Err(LabError::domain("model already carries a projection head"));
        }
        let (qi, di) = match init {
            ProjectionInit::Identity => (ProjectionInit::Identity, ProjectionInit::Identity),
            ProjectionInit::Random(s) => (
                ProjectionInit::Random(s.derive(1)),
                ProjectionInit::Random(s.derive(2)),
            ),
        };
        let mut out = self.clone();
        out.query_head = Some(ProjectionHead::new(self.dim, target_dim, qi)?);
        out.doc_head = Some(ProjectionHead::new(self.dim, target_dim, di)?);
        Ok(out)
    }
}

impl Parameterized for DrModel {
    fn num_blocks(&self) -> usize {
        if self.has_projection() {
            10
        } else {
            2
        }
    }

    fn block(&self, index: usize) -> &Matrix {
        match index {
            0 => self.query_encoder.matrix(),
            1 => self.doc_encoder.matrix(),
            2..=5 => self.query_head.as_ref().expect("projection block").blocks()[index - 2],
            6..=9 => self.doc_head.as_ref().expect("projection block").blocks()[index - 6],
            _ => panic!("block {index} out of range"),
        }
    }

    fn block_mut(&mut self, index: usize) -> &mut Matrix {
        match index {
            0 => self.query_encoder.matrix_mut(),
            1 => self.doc_encoder.matrix_mut(),
            2..=5 => {
                let [a, b, c, d] = self
                    .query_head
                    .as_mut()
                    .expect("projection block")
                    .blocks_mut();
                [a, b, c, d].into_iter().nth(index - 2).unwrap()
            }
            6..=9 => {
                let [a, b, c, d] = self
                    .doc_head
                    .as_mut()
                    .expect("projection block")
                    .blocks_mut();
                [a, b, c, d].into_iter().nth(index - 6).unwrap()
            }
            _ => panic!("block {index} out of range"),
        }
    }
}

/// `e_qᵀ e_d` for a single-channel model.
pub fn score_bilinear(model: &DrModel, query: Item<'_>, doc: Item<'_>) -> Result<f64> {
    if model.channels != 1 {
        return Err(LabError::domain(format!(
            "score_bilinear needs a single-channel model, got c = {}",
            model.channels
        )));
    }
    score_multichannel(model, query, doc)
}

/// `Σ_c ⟨e_q^c, e_d^c⟩` over interaction channels.
pub fn score_multichannel(model: &DrModel, query: Item<'_>, doc: Item<'_>) -> Result<f64> {
    let q = model.embed(Side::Query, query)?;
    let d = model.embed(Side::Doc, doc)?;
    if q.len() != d.len() {
        return Err(LabError::domain(
            "query and document embeddings differ in length",
        ));
    }
    let width = model.output_dim();
    Ok(q.chunks(width)
        .zip(d.chunks(width))
        .map(|(a, b)| dot(a, b))
        .sum())
}
