//! Parameters, forward passes and hand-written backward passes.
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] names the slices.
//! Matrices are row-major with the output index fastest where that keeps the
//! inner loops contiguous.

use std::ops::Range;

use rand::Rng;

use super::encoder::{SparseVec, TextEncoder};
use super::{cosine_sim, dot, EncoderConfig, MemoryReadout, ModelError};
use crate::data::PatientRecord;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    /// `[3][C][C]`, indexed `[offset][in][out]`
    pub conv_w: Range<usize>,
    pub conv_b: Range<usize>,
    /// `[C][C]`, indexed `[in][out]`
    pub gate_w: Range<usize>,
    pub gate_b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub e: usize,
    pub c: usize,
    /// `[3][E][C]`, indexed `[offset][in][out]`
    pub conv_in_w: Range<usize>,
    pub conv_in_b: Range<usize>,
    pub layers: Vec<LayerLayout>,
    /// `[E][C]`
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub pool_q: Range<usize>,
    /// `[E][4E]`
    pub head_w1: Range<usize>,
    pub head_b1: Range<usize>,
    /// `[3][E]`
    pub head_w2: Range<usize>,
    pub head_b2: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(e: usize, c: usize, n_layers: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let conv_in_w = take(3 * e * c);
        let conv_in_b = take(c);
        let layers = (0..n_layers)
            .map(|_| LayerLayout {
                conv_w: take(3 * c * c),
                conv_b: take(c),
                gate_w: take(c * c),
                gate_b: take(c),
            })
            .collect();
        let proj_w = take(e * c);
        let proj_b = take(e);
        let pool_q = take(e);
        let head_w1 = take(e * 4 * e);
        let head_b1 = take(e);
        let head_w2 = take(3 * e);
        let head_b2 = take(3);
        Self {
            e,
            c,
            conv_in_w,
            conv_in_b,
            layers,
            proj_w,
            proj_b,
            pool_q,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
            total: at,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

#[derive(Debug, Clone)]
struct LayerCache {
    a: Vec<f64>,
    t: Vec<f64>,
    y: Vec<f64>,
}

/// Intermediate values of one criterion forward pass.
#[derive(Debug, Clone)]
pub struct CriterionCache {
    tokens: Vec<SparseVec>,
    h0: Vec<f64>,
    layers: Vec<LayerCache>,
    argmax: Vec<usize>,
    pooled: Vec<f64>,
}

impl CriterionCache {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReadoutCache {
    /// Attention weights; empty for mean pooling.
    weights: Vec<f64>,
    mode: MemoryReadout,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    z: Vec<f64>,
    hid: Vec<f64>,
    pub probs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEmbedding {
    pub x_p: Vec<f64>,
    pub x_c: Vec<f64>,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchModel {
    pub config: EncoderConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

impl MatchModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        let layout = Self::layout_for(&config)?;
        let mut params = vec![0.0; layout.total];
        let mut rng = rng_for(seed, "init");
        let mut fill = |r: &Range<usize>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut params[r.clone()] {
                *x = rng.random_range(-a..a);
            }
        };
        let (e, c) = (layout.e, layout.c);
        fill(&layout.conv_in_w, 3 * e, c);
        for l in &layout.layers {
            fill(&l.conv_w, 3 * c, c);
            fill(&l.gate_w, c, c);
        }
        fill(&layout.proj_w, c, e);
        fill(&layout.head_w1, 4 * e, e);
        fill(&layout.head_w2, e, 3);
        for l in &layout.layers {
            params[l.gate_b.clone()].iter_mut().for_each(|b| *b = -1.0);
        }
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        let layout = Self::layout_for(&config)?;
        if params.len() != layout.total {
            return Err(ModelError::DimMismatch {
                expected: layout.total,
                found: params.len(),
                context: "parameter vector".into(),
            });
        }
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    fn layout_for(config: &EncoderConfig) -> Result<Layout, ModelError> {
        for (name, v) in [
            ("embedding_dim", config.embedding_dim),
            ("highway_channels", config.highway_channels),
            ("highway_layers", config.highway_layers),
        ] {
            if v == 0 {
                return Err(ModelError::DimMismatch {
                    expected: 1,
                    found: 0,
                    context: format!("{name} must be positive"),
                });
            }
        }
        Ok(Layout::new(
            config.embedding_dim,
            config.highway_channels,
            config.highway_layers,
        ))
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    // ---- criterion path ----

    pub fn criterion_forward(&self, tokens: Vec<SparseVec>) -> (Vec<f64>, CriterionCache) {
        let lay = &self.layout;
        let (e, c) = (lay.e, lay.c);
        let n = tokens.len();
        let p = &self.params;

        let w_in = &p[lay.conv_in_w.clone()];
        let b_in = &p[lay.conv_in_b.clone()];
        let mut h0 = vec![0.0; n * c];
        for l in 0..n {
            let row = &mut h0[l * c..(l + 1) * c];
            row.copy_from_slice(b_in);
            for d in 0..3 {
                let Some(src) = (l + d).checked_sub(1).filter(|s| *s < n) else {
                    continue;
                };
                for &(i, v) in &tokens[src] {
                    let w = &w_in[(d * e + i) * c..(d * e + i + 1) * c];
                    for (r, wv) in row.iter_mut().zip(w) {
                        *r += wv * v;
                    }
                }
            }
        }

        let mut layers: Vec<LayerCache> = Vec::with_capacity(lay.layers.len());
        for ll in &lay.layers {
            let h = layers.last().map_or(&h0, |lc| &lc.y);
            let lc = self.highway_forward(ll, h, n);
            layers.push(lc);
        }
        let y = layers.last().map_or(&h0, |lc| &lc.y);

        let mut argmax = vec![0usize; c];
        let mut pooled = vec![f64::NEG_INFINITY; c];
        for l in 0..n {
            for o in 0..c {
                if y[l * c + o] > pooled[o] {
                    pooled[o] = y[l * c + o];
                    argmax[o] = l;
                }
            }
        }

        let wp = &p[lay.proj_w.clone()];
        let mut x = p[lay.proj_b.clone()].to_vec();
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += dot(&wp[j * c..(j + 1) * c], &pooled);
        }
        (
            x,
            CriterionCache {
                tokens,
                h0,
                layers,
                argmax,
                pooled,
            },
        )
    }

    fn highway_forward(&self, ll: &LayerLayout, h: &[f64], n: usize) -> LayerCache {
        let c = self.layout.c;
        let p = &self.params;
        let w = &p[ll.conv_w.clone()];
        let wg = &p[ll.gate_w.clone()];
        let mut a = vec![0.0; n * c];
        let mut g = vec![0.0; n * c];
        for l in 0..n {
            a[l * c..(l + 1) * c].copy_from_slice(&p[ll.conv_b.clone()]);
            g[l * c..(l + 1) * c].copy_from_slice(&p[ll.gate_b.clone()]);
            for d in 0..3 {
                let Some(src) = (l + d).checked_sub(1).filter(|s| *s < n) else {
                    continue;
                };
                for i in 0..c {
                    let x = h[src * c + i];
                    if x == 0.0 {
                        continue;
                    }
                    let wr = &w[(d * c + i) * c..(d * c + i + 1) * c];
                    for (ao, wv) in a[l * c..(l + 1) * c].iter_mut().zip(wr) {
                        *ao += wv * x;
                    }
                }
            }
            for i in 0..c {
                let x = h[l * c + i];
                if x == 0.0 {
                    continue;
                }
                let wr = &wg[i * c..(i + 1) * c];
                for (go, wv) in g[l * c..(l + 1) * c].iter_mut().zip(wr) {
                    *go += wv * x;
                }
            }
        }
        let t: Vec<f64> = g.iter().map(|&x| sigmoid(x)).collect();
        let y: Vec<f64> = if self.config.literal_highway_formula {
            (0..n * c)
                .map(|k| t[k] * a[k] + a[k] * (1.0 - sigmoid(a[k])))
                .collect()
        } else {
            (0..n * c)
                .map(|k| t[k] * a[k].max(0.0) + (1.0 - t[k]) * h[k])
                .collect()
        };
        LayerCache { a, t, y }
    }

    /// Backward through one highway layer; returns d/dh.
    fn highway_backward(
        &self,
        ll: &LayerLayout,
        h: &[f64],
        lc: &LayerCache,
        dy: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let c = self.layout.c;
        let n = h.len() / c;
        let literal = self.config.literal_highway_formula;
        let mut dh = vec![0.0; n * c];
        let mut da = vec![0.0; n * c];
        let mut dg = vec![0.0; n * c];
        for k in 0..n * c {
            let (a, t) = (lc.a[k], lc.t[k]);
            let dt = if literal {
                let s = sigmoid(a);
                da[k] = dy[k] * (t + (1.0 - s) - a * s * (1.0 - s));
                dy[k] * a
            } else {
                let hh = a.max(0.0);
                if a > 0.0 {
                    da[k] = dy[k] * t;
                }
                dh[k] = dy[k] * (1.0 - t);
                dy[k] * (hh - h[k])
            };
            dg[k] = dt * t * (1.0 - t);
        }
        let p = &self.params;
        let w = &p[ll.conv_w.clone()];
        let wg = &p[ll.gate_w.clone()];
        for l in 0..n {
            let dgl = &dg[l * c..(l + 1) * c];
            let dal = &da[l * c..(l + 1) * c];
            for (o, v) in dgl.iter().enumerate() {
                grad[ll.gate_b.start + o] += v;
            }
            for (o, v) in dal.iter().enumerate() {
                grad[ll.conv_b.start + o] += v;
            }
            for i in 0..c {
                let x = h[l * c + i];
                let wr = &wg[i * c..(i + 1) * c];
                dh[l * c + i] += dot(wr, dgl);
                if x != 0.0 {
                    let gr = &mut grad[ll.gate_w.start + i * c..ll.gate_w.start + (i + 1) * c];
                    for (gv, d) in gr.iter_mut().zip(dgl) {
                        *gv += x * d;
                    }
                }
            }
            for d in 0..3 {
                let Some(src) = (l + d).checked_sub(1).filter(|s| *s < n) else {
                    continue;
                };
                for i in 0..c {
                    let off = (d * c + i) * c;
                    dh[src * c + i] += dot(&w[off..off + c], dal);
                    let x = h[src * c + i];
                    if x != 0.0 {
                        let gr = &mut grad[ll.conv_w.start + off..ll.conv_w.start + off + c];
                        for (gv, dv) in gr.iter_mut().zip(dal) {
                            *gv += x * dv;
                        }
                    }
                }
            }
        }
        dh
    }

    pub fn criterion_backward(&self, cache: &CriterionCache, dx: &[f64], grad: &mut [f64]) {
        let lay = &self.layout;
        let (e, c) = (lay.e, lay.c);
        let n = cache.tokens.len();
        let wp = &self.params[lay.proj_w.clone()];
        let mut dm = vec![0.0; c];
        for j in 0..e {
            let dxj = dx[j];
            if dxj == 0.0 {
                continue;
            }
            grad[lay.proj_b.start + j] += dxj;
            let gr = &mut grad[lay.proj_w.start + j * c..lay.proj_w.start + (j + 1) * c];
            for ((gv, m), (dmo, w)) in gr
                .iter_mut()
                .zip(&cache.pooled)
                .zip(dm.iter_mut().zip(&wp[j * c..(j + 1) * c]))
            {
                *gv += dxj * m;
                *dmo += dxj * w;
            }
        }
        let mut dy = vec![0.0; n * c];
        for o in 0..c {
            dy[cache.argmax[o] * c + o] += dm[o];
        }
        for (idx, ll) in lay.layers.iter().enumerate().rev() {
            let h = if idx == 0 {
                &cache.h0
            } else {
                &cache.layers[idx - 1].y
            };
            dy = self.highway_backward(ll, h, &cache.layers[idx], &dy, grad);
        }
        let dh0 = dy;
        for l in 0..n {
            let row = &dh0[l * c..(l + 1) * c];
            for (o, v) in row.iter().enumerate() {
                grad[lay.conv_in_b.start + o] += v;
            }
            for d in 0..3 {
                let Some(src) = (l + d).checked_sub(1).filter(|s| *s < n) else {
                    continue;
                };
                for &(i, v) in &cache.tokens[src] {
                    let off = lay.conv_in_w.start + (d * e + i) * c;
                    for (gv, r) in grad[off..off + c].iter_mut().zip(row) {
                        *gv += v * r;
                    }
                }
            }
        }
    }

    /// Apply highway layer `layer` to an `n x C` feature map.
    pub fn highway_transform(&self, layer: usize, h: &[f64]) -> Result<Vec<f64>, ModelError> {
        let c = self.layout.c;
        let ll = self
            .layout
            .layers
            .get(layer)
            .ok_or(ModelError::DimMismatch {
                expected: self.layout.layers.len(),
                found: layer + 1,
                context: "highway layer index".into(),
            })?;
        if h.is_empty() || h.len() % c != 0 {
            return Err(ModelError::DimMismatch {
                expected: c,
                found: h.len(),
                context: "highway input width".into(),
            });
        }
        Ok(self.highway_forward(ll, h, h.len() / c).y)
    }

    // ---- patient path ----

    /// Memory readout over `n` slots stored row-major in `slots`.
    pub fn readout(&self, slots: &[f64], query: Option<&[f64]>) -> (Vec<f64>, ReadoutCache) {
        let e = self.layout.e;
        let n = slots.len() / e;
        let q: Option<&[f64]> = match self.config.memory_readout {
            MemoryReadout::QueryAttention => query,
            MemoryReadout::SelfAttentionPool => Some(&self.params[self.layout.pool_q.clone()]),
            MemoryReadout::MeanPool => None,
        };
        let mode = match q {
            Some(_) => self.config.memory_readout,
            None => MemoryReadout::MeanPool,
        };
        let weights: Vec<f64> = match q {
            Some(q) => {
                let mut w: Vec<f64> = (0..n).map(|j| dot(q, &slots[j * e..(j + 1) * e])).collect();
                softmax_in_place(&mut w);
                w
            }
            None => Vec::new(),
        };
        let mut out = vec![0.0; e];
        for j in 0..n {
            let wj = if weights.is_empty() {
                1.0 / n as f64
            } else {
                weights[j]
            };
            for (o, s) in out.iter_mut().zip(&slots[j * e..(j + 1) * e]) {
                *o += wj * s;
            }
        }
        (out, ReadoutCache { weights, mode })
    }

    /// Backward through the readout. Query-attention gradients go to
    /// `dquery`; the learned pool query accumulates into `grad`.
    pub fn readout_backward(
        &self,
        slots: &[f64],
        cache: &ReadoutCache,
        dp: &[f64],
        dquery: &mut [f64],
        grad: &mut [f64],
    ) {
        if cache.mode == MemoryReadout::MeanPool {
            return;
        }
        let e = self.layout.e;
        let n = cache.weights.len();
        let dw: Vec<f64> = (0..n)
            .map(|j| dot(dp, &slots[j * e..(j + 1) * e]))
            .collect();
        let mean = dot(&dw, &cache.weights);
        let target: &mut [f64] = match cache.mode {
            MemoryReadout::QueryAttention => dquery,
            _ => &mut grad[self.layout.pool_q.clone()],
        };
        for j in 0..n {
            let dl = cache.weights[j] * (dw[j] - mean);
            for (t, s) in target.iter_mut().zip(&slots[j * e..(j + 1) * e]) {
                *t += dl * s;
            }
        }
    }

    // ---- head ----

    pub fn head_forward(&self, x_p: &[f64], x_c: &[f64]) -> HeadCache {
        let e = self.layout.e;
        let mut z = Vec::with_capacity(4 * e);
        z.extend_from_slice(x_p);
        z.extend_from_slice(x_c);
        z.extend(x_p.iter().zip(x_c).map(|(a, b)| a * b));
        z.extend(x_p.iter().zip(x_c).map(|(a, b)| (a - b).abs()));
        let w1 = &self.params[self.layout.head_w1.clone()];
        let b1 = &self.params[self.layout.head_b1.clone()];
        let hid: Vec<f64> = (0..e)
            .map(|j| (b1[j] + dot(&w1[j * 4 * e..(j + 1) * 4 * e], &z)).tanh())
            .collect();
        let w2 = &self.params[self.layout.head_w2.clone()];
        let b2 = &self.params[self.layout.head_b2.clone()];
        let mut logits = [0.0; 3];
        for k in 0..3 {
            logits[k] = b2[k] + dot(&w2[k * e..(k + 1) * e], &hid);
        }
        softmax_in_place(&mut logits);
        HeadCache {
            z,
            hid,
            probs: logits,
        }
    }

    /// Backward from d/dprobs into the head parameters and both embeddings.
    pub fn head_backward(
        &self,
        cache: &HeadCache,
        x_p: &[f64],
        x_c: &[f64],
        dprobs: [f64; 3],
        dp: &mut [f64],
        dc: &mut [f64],
        grad: &mut [f64],
    ) {
        let e = self.layout.e;
        let lay = &self.layout;
        let pr = cache.probs;
        let inner: f64 = (0..3).map(|k| pr[k] * dprobs[k]).sum();
        let dlogit: Vec<f64> = (0..3).map(|k| pr[k] * (dprobs[k] - inner)).collect();
        let w2 = &self.params[lay.head_w2.clone()];
        let mut dhid = vec![0.0; e];
        for k in 0..3 {
            grad[lay.head_b2.start + k] += dlogit[k];
            for j in 0..e {
                grad[lay.head_w2.start + k * e + j] += dlogit[k] * cache.hid[j];
                dhid[j] += w2[k * e + j] * dlogit[k];
            }
        }
        let w1 = &self.params[lay.head_w1.clone()];
        let mut dz = vec![0.0; 4 * e];
        for j in 0..e {
            let dpre = dhid[j] * (1.0 - cache.hid[j] * cache.hid[j]);
            if dpre == 0.0 {
                continue;
            }
            grad[lay.head_b1.start + j] += dpre;
            let off = lay.head_w1.start + j * 4 * e;
            for (gv, zv) in grad[off..off + 4 * e].iter_mut().zip(&cache.z) {
                *gv += dpre * zv;
            }
            for (d, w) in dz.iter_mut().zip(&w1[j * 4 * e..(j + 1) * 4 * e]) {
                *d += dpre * w;
            }
        }
        for i in 0..e {
            let diff = x_p[i] - x_c[i];
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            dp[i] += dz[i] + dz[2 * e + i] * x_c[i] + dz[3 * e + i] * sign;
            dc[i] += dz[e + i] + dz[2 * e + i] * x_p[i] - dz[3 * e + i] * sign;
        }
    }

    // ---- inference ----

    pub fn encode_criterion(
        &self,
        encoder: &dyn TextEncoder,
        text: &str,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_encoder(encoder)?;
        Ok(self.criterion_forward(encoder.token_vectors(text)?).0)
    }

    /// Memory slots for a record, in entry order.
    pub fn patient_slots(
        &self,
        encoder: &dyn TextEncoder,
        record: &PatientRecord,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_encoder(encoder)?;
        if record.n_entries() == 0 {
            return Err(ModelError::EmptyPatient(record.patient_id.clone()));
        }
        let mut slots = Vec::with_capacity(record.n_entries() * self.layout.e);
        for entry in record.entries() {
            slots.extend(encoder.encode_text(entry)?);
        }
        Ok(slots)
    }

    pub fn encode_patient(
        &self,
        encoder: &dyn TextEncoder,
        record: &PatientRecord,
        query: Option<&[f64]>,
    ) -> Result<Vec<f64>, ModelError> {
        let slots = self.patient_slots(encoder, record)?;
        Ok(self.readout(&slots, query).0)
    }

    pub fn predict_pair(&self, x_p: &[f64], x_c: &[f64]) -> Result<[f64; 3], ModelError> {
        let e = self.layout.e;
        for v in [x_p, x_c] {
            if v.len() != e {
                return Err(ModelError::DimMismatch {
                    expected: e,
                    found: v.len(),
                    context: "head input".into(),
                });
            }
        }
        Ok(self.head_forward(x_p, x_c).probs)
    }

    pub fn embed_pair(
        &self,
        encoder: &dyn TextEncoder,
        record: &PatientRecord,
        criterion_text: &str,
    ) -> Result<PairEmbedding, ModelError> {
        let x_c = self.encode_criterion(encoder, criterion_text)?;
        let x_p = self.encode_patient(encoder, record, Some(&x_c))?;
        let similarity = cosine_sim(&x_p, &x_c)?;
        Ok(PairEmbedding {
            x_p,
            x_c,
            similarity,
        })
    }

    fn check_encoder(&self, encoder: &dyn TextEncoder) -> Result<(), ModelError> {
        if encoder.dim() != self.layout.e {
            return Err(ModelError::DimMismatch {
                expected: self.layout.e,
                found: encoder.dim(),
                context: format!("text encoder {}", encoder.backend_id()),
            });
        }
        Ok(())
    }
}
