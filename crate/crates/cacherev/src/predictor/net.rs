//! Attention encoder with hand-written backpropagation.
//!
//! The network maps the last `input_len` request rows (one row per mini-slot,
//! one column per file) to `horizon` per-mini-slot probability rows:
//! embedding plus learned positions, `num_layers` pre-norm blocks of
//! multi-head self-attention and a GELU feed-forward, a final layer norm,
//! mean pooling, and one softmax head per output mini-slot. Gradients are
//! computed manually and validated against central finite differences.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// A named dense tensor. `data` is row-major over `dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor { name: name.to_string(), dims, data: vec![0.0; len] }
    }
}

/// Flat set of named tensors; ordering is fixed by the network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.name, t.dims.clone()))
                .collect(),
        }
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        debug_assert_eq!(self.tensors.len(), other.tensors.len());
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            for (a, b) in t.data.iter_mut().zip(&o.data) {
                *a += alpha * b;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= alpha;
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Name of the first tensor containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Row-major matrix used by the forward/backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            debug_assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// `a (r x k) * b (k x c)`.
fn matmul(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.cols, b.rows);
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let ar = a.row(i);
        let or = out.row_mut(i);
        for (kk, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = b.row(kk);
            for (o, &bv) in or.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a^T (k x r)^T * b (k x c)` accumulated into `out (r x c)`.
fn matmul_tn_acc(a: &Mat, b: &Mat, out: &mut [f64], cols: usize) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(cols, b.cols);
    for kk in 0..a.rows {
        let ar = a.row(kk);
        let br = b.row(kk);
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let dst = &mut out[i * cols..(i + 1) * cols];
            for (o, &bv) in dst.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
}

/// `a (r x k) * b^T (c x k)^T`.
fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.cols, b.cols);
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        let or = out.row_mut(i);
        for (j, o) in or.iter_mut().enumerate() {
            let br = b.row(j);
            *o = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Gradient through a row softmax: `ds = p .* (dp - sum(dp .* p))`.
fn softmax_backward_row(p: &[f64], dp: &[f64], ds: &mut [f64]) {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    for ((s, &pv), &dv) in ds.iter_mut().zip(p).zip(dp) {
        *s = pv * (dv - inner);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

const LN_EPS: f64 = 1e-5;

struct LnCache {
    xhat: Mat,
    inv_std: Vec<f64>,
    out: Mat,
}

fn layernorm(x: &Mat, gain: &[f64], bias: &[f64]) -> LnCache {
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut out = Mat::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    let n = x.cols as f64;
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(i);
        let o = out.row_mut(i);
        for j in 0..x.cols {
            xh[j] = (row[j] - mean) * is;
            o[j] = gain[j] * xh[j] + bias[j];
        }
    }
    LnCache { xhat, inv_std, out }
}

/// Backward through layer norm; accumulates into `dgain`/`dbias`, returns dx.
fn layernorm_backward(
    cache: &LnCache,
    dy: &Mat,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Mat {
    let n = dy.cols as f64;
    let mut dx = Mat::zeros(dy.rows, dy.cols);
    for i in 0..dy.rows {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let is = cache.inv_std[i];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..dy.cols {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            let dxh = dyr[j] * gain[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        let dxr = dx.row_mut(i);
        for j in 0..dy.cols {
            let dxh = dyr[j] * gain[j];
            dxr[j] = is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Architecture of the demand network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub num_files: usize,
    /// Input window length in mini-slots.
    pub input_len: usize,
    /// Output mini-slots (one softmax head each).
    pub horizon: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_files == 0
            || self.input_len == 0
            || self.horizon == 0
            || self.embed_dim == 0
            || self.num_layers == 0
            || self.num_heads == 0
            || self.ff_dim == 0
        {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "embed_dim ({}) must be divisible by num_heads ({})",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    // Tensor layout: [embed.w, pos.w] ++ 12 per layer ++
    // [final_ln.gain, final_ln.bias, heads.w, heads.b].
    fn layer_base(&self, layer: usize) -> usize {
        2 + layer * 12
    }

    fn idx_final(&self) -> usize {
        2 + self.num_layers * 12
    }
}

const LAYER_TENSORS: [&str; 12] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln2.gain", "ln2.bias",
    "ff.w1", "ff.b1", "ff.w2", "ff.b2",
];

struct LayerCache {
    ln1: LnCache,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Row-softmax attention matrix per head.
    attn: Vec<Mat>,
    ctx: Mat,
    ln2: LnCache,
    ff_pre: Mat,
    ff_act: Mat,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    pooled: Vec<f64>,
    /// horizon x num_files output probabilities.
    probs: Mat,
}

/// The demand network (stateless; parameters travel separately).
#[derive(Debug, Clone)]
pub struct DemandNet {
    pub config: NetConfig,
}

impl DemandNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Seeded Gaussian initialization (std 0.02); layer-norm gains start at 1.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let c = &self.config;
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let mut fill = |name: &str, dims: Vec<usize>| -> Tensor {
            let mut t = Tensor::zeros(name, dims);
            for v in &mut t.data {
                *v = normal.sample(&mut rng);
            }
            t
        };
        let mut tensors = Vec::new();
        tensors.push(fill("embed.w", vec![c.num_files, c.embed_dim]));
        tensors.push(fill("pos.w", vec![c.input_len, c.embed_dim]));
        for l in 0..c.num_layers {
            for short in LAYER_TENSORS {
                let name = format!("layer{l}.{short}");
                let t = match short {
                    "ln1.gain" | "ln2.gain" => {
                        let mut t = Tensor::zeros(&name, vec![c.embed_dim]);
                        t.data.fill(1.0);
                        t
                    }
                    "ln1.bias" | "ln2.bias" => Tensor::zeros(&name, vec![c.embed_dim]),
                    "attn.wq" | "attn.wk" | "attn.wv" | "attn.wo" => {
                        fill(&name, vec![c.embed_dim, c.embed_dim])
                    }
                    "ff.w1" => fill(&name, vec![c.embed_dim, c.ff_dim]),
                    "ff.b1" => Tensor::zeros(&name, vec![c.ff_dim]),
                    "ff.w2" => fill(&name, vec![c.ff_dim, c.embed_dim]),
                    "ff.b2" => Tensor::zeros(&name, vec![c.embed_dim]),
                    _ => unreachable!(),
                };
                tensors.push(t);
            }
        }
        let mut final_gain = Tensor::zeros("final_ln.gain", vec![c.embed_dim]);
        final_gain.data.fill(1.0);
        tensors.push(final_gain);
        tensors.push(Tensor::zeros("final_ln.bias", vec![c.embed_dim]));
        tensors.push(fill("heads.w", vec![c.horizon, c.embed_dim, c.num_files]));
        tensors.push(Tensor::zeros("heads.b", vec![c.horizon, c.num_files]));
        ModelParams { tensors }
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        let expected = self.config.idx_final() + 4;
        if params.tensors.len() != expected {
            return Err(Error::Shape(format!(
                "model has {} tensors, expected {expected}",
                params.tensors.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, params: &ModelParams, input: &Mat) -> Result<ForwardCache> {
        let c = &self.config;
        self.check_params(params)?;
        if input.rows != c.input_len || input.cols != c.num_files {
            return Err(Error::Shape(format!(
                "input is {}x{}, expected {}x{}",
                input.rows, input.cols, c.input_len, c.num_files
            )));
        }
        let p = &params.tensors;
        let embed = &p[0];
        let pos = &p[1];

        let embed_mat =
            Mat { rows: c.num_files, cols: c.embed_dim, data: embed.data.clone() };
        let mut h0 = matmul(input, &embed_mat);
        for (hv, pv) in h0.data.iter_mut().zip(&pos.data) {
            *hv += pv;
        }

        let mut h = vec![h0];
        let mut layers = Vec::with_capacity(c.num_layers);
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        for l in 0..c.num_layers {
            let base = c.layer_base(l);
            let h_in = h.last().unwrap().clone();
            let ln1 = layernorm(&h_in, &p[base].data, &p[base + 1].data);

            let wq = Mat { rows: c.embed_dim, cols: c.embed_dim, data: p[base + 2].data.clone() };
            let wk = Mat { rows: c.embed_dim, cols: c.embed_dim, data: p[base + 3].data.clone() };
            let wv = Mat { rows: c.embed_dim, cols: c.embed_dim, data: p[base + 4].data.clone() };
            let q = matmul(&ln1.out, &wq);
            let k = matmul(&ln1.out, &wk);
            let v = matmul(&ln1.out, &wv);

            let n = c.input_len;
            let mut attn = Vec::with_capacity(c.num_heads);
            let mut ctx = Mat::zeros(n, c.embed_dim);
            for head in 0..c.num_heads {
                let cols = head * dh..(head + 1) * dh;
                let mut scores = Mat::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let mut s = 0.0;
                        for d in cols.clone() {
                            s += q.at(i, d) * k.at(j, d);
                        }
                        scores.row_mut(i)[j] = s * scale;
                    }
                    softmax_in_place(scores.row_mut(i));
                }
                for i in 0..n {
                    for j in 0..n {
                        let w = scores.at(i, j);
                        if w == 0.0 {
                            continue;
                        }
                        for d in cols.clone() {
                            ctx.row_mut(i)[d] += w * v.at(j, d);
                        }
                    }
                }
                attn.push(scores);
            }

            let wo = Mat { rows: c.embed_dim, cols: c.embed_dim, data: p[base + 5].data.clone() };
            let attn_out = matmul(&ctx, &wo);
            let mut h_mid = h_in.clone();
            for (a, b) in h_mid.data.iter_mut().zip(&attn_out.data) {
                *a += b;
            }

            let ln2 = layernorm(&h_mid, &p[base + 6].data, &p[base + 7].data);
            let w1 = Mat { rows: c.embed_dim, cols: c.ff_dim, data: p[base + 8].data.clone() };
            let mut ff_pre = matmul(&ln2.out, &w1);
            for i in 0..ff_pre.rows {
                for (vv, b) in ff_pre.row_mut(i).iter_mut().zip(&p[base + 9].data) {
                    *vv += b;
                }
            }
            let mut ff_act = ff_pre.clone();
            for v in &mut ff_act.data {
                *v = gelu(*v);
            }
            let w2 = Mat { rows: c.ff_dim, cols: c.embed_dim, data: p[base + 10].data.clone() };
            let mut ff_out = matmul(&ff_act, &w2);
            for i in 0..ff_out.rows {
                for (vv, b) in ff_out.row_mut(i).iter_mut().zip(&p[base + 11].data) {
                    *vv += b;
                }
            }
            let mut h_out = h_mid.clone();
            for (a, b) in h_out.data.iter_mut().zip(&ff_out.data) {
                *a += b;
            }

            layers.push(LayerCache { ln1, q, k, v, attn, ctx, ln2, ff_pre, ff_act });
            h.push(h_out);
        }

        let fi = c.idx_final();
        let final_ln = layernorm(h.last().unwrap(), &p[fi].data, &p[fi + 1].data);
        let mut pooled = vec![0.0; c.embed_dim];
        for i in 0..c.input_len {
            for (pools, &v) in pooled.iter_mut().zip(final_ln.out.row(i)) {
                *pools += v;
            }
        }
        for v in &mut pooled {
            *v /= c.input_len as f64;
        }

        let heads_w = &p[fi + 2];
        let heads_b = &p[fi + 3];
        let mut probs = Mat::zeros(c.horizon, c.num_files);
        for hd in 0..c.horizon {
            let w = &heads_w.data[hd * c.embed_dim * c.num_files..(hd + 1) * c.embed_dim * c.num_files];
            let b = &heads_b.data[hd * c.num_files..(hd + 1) * c.num_files];
            let row = probs.row_mut(hd);
            row.copy_from_slice(b);
            for (e, &pv) in pooled.iter().enumerate() {
                if pv == 0.0 {
                    continue;
                }
                let wrow = &w[e * c.num_files..(e + 1) * c.num_files];
                for (o, &wv) in row.iter_mut().zip(wrow) {
                    *o += pv * wv;
                }
            }
            softmax_in_place(row);
        }

        Ok(ForwardCache { layers, final_ln, pooled, probs })
    }

    /// Probability rows for one input window (each row sums to 1).
    pub fn predict(&self, params: &ModelParams, input_rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let input = Mat::from_rows(input_rows);
        let cache = self.forward(params, &input)?;
        Ok((0..self.config.horizon).map(|h| cache.probs.row(h).to_vec()).collect())
    }

    /// Mean cross-entropy over the horizon for one (input, label) pair.
    fn sample_loss(&self, probs: &Mat, label: &[u32]) -> f64 {
        let mut loss = 0.0;
        for (h, &f) in label.iter().enumerate() {
            loss -= probs.at(h, f as usize).max(1e-300).ln();
        }
        loss / self.config.horizon as f64
    }

    /// Loss and parameter gradients averaged over a batch of
    /// (input ids, label ids) windows.
    pub fn batch_loss_and_grad(
        &self,
        params: &ModelParams,
        batch: &[(&[u32], &[u32])],
    ) -> Result<(f64, ModelParams)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("loss over an empty batch"));
        }
        let c = &self.config;
        let mut grads = params.zeros_like();
        let mut total_loss = 0.0;
        for &(input_ids, label) in batch {
            if input_ids.len() != c.input_len || label.len() != c.horizon {
                return Err(Error::Shape(format!(
                    "window is {}x{}, expected {}x{}",
                    input_ids.len(),
                    label.len(),
                    c.input_len,
                    c.horizon
                )));
            }
            let input = one_hot_rows(input_ids, c.num_files);
            let cache = self.forward(params, &input)?;
            total_loss += self.sample_loss(&cache.probs, label);
            self.backward(params, &input, &cache, label, &mut grads);
        }
        let inv = 1.0 / batch.len() as f64;
        grads.scale(inv);
        Ok((total_loss * inv, grads))
    }

    fn backward(
        &self,
        params: &ModelParams,
        input: &Mat,
        cache: &ForwardCache,
        label: &[u32],
        grads: &mut ModelParams,
    ) {
        let c = &self.config;
        let p = &params.tensors;
        let fi = c.idx_final();
        let n = c.input_len;
        let e = c.embed_dim;
        let f = c.num_files;
        let inv_h = 1.0 / c.horizon as f64;

        // Heads and pooling.
        let mut d_pooled = vec![0.0; e];
        {
            let heads_w = &p[fi + 2].data;
            let (gw_part, gb_part) = grads.tensors.split_at_mut(fi + 3);
            let gw = &mut gw_part[fi + 2].data;
            let gb = &mut gb_part[0].data;
            for hd in 0..c.horizon {
                let probs = cache.probs.row(hd);
                let target = label[hd] as usize;
                // d logits = (probs - onehot) / horizon
                for j in 0..f {
                    let dl = (probs[j] - f64::from(j == target)) * inv_h;
                    if dl == 0.0 {
                        continue;
                    }
                    gb[hd * f + j] += dl;
                    for (ei, &pv) in cache.pooled.iter().enumerate() {
                        gw[(hd * e + ei) * f + j] += dl * pv;
                        d_pooled[ei] += dl * heads_w[(hd * e + ei) * f + j];
                    }
                }
            }
        }

        // Mean pool spreads the gradient evenly over positions.
        let mut d_final = Mat::zeros(n, e);
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            for (dst, &dp) in d_final.row_mut(i).iter_mut().zip(&d_pooled) {
                *dst = dp * inv_n;
            }
        }

        let mut dh = {
            let (gg, gb) = {
                let (a, b) = grads.tensors.split_at_mut(fi + 1);
                (&mut a[fi], &mut b[0])
            };
            layernorm_backward(&cache.final_ln, &d_final, &p[fi].data, &mut gg.data, &mut gb.data)
        };

        let dhd = c.head_dim();
        let scale = 1.0 / (dhd as f64).sqrt();
        for l in (0..c.num_layers).rev() {
            let base = c.layer_base(l);
            let lc = &cache.layers[l];

            // Feed-forward branch: h_out = h_mid + ff(ln2(h_mid)).
            let d_ff_out = dh.clone();
            let mut d_ff_act = matmul_nt(
                &d_ff_out,
                &Mat { rows: c.ff_dim, cols: e, data: p[base + 10].data.clone() },
            );
            matmul_tn_acc(&lc.ff_act, &d_ff_out, &mut grads.tensors[base + 10].data, e);
            for i in 0..n {
                for (gbv, &dv) in grads.tensors[base + 11].data.iter_mut().zip(d_ff_out.row(i)) {
                    *gbv += dv;
                }
            }
            for (dv, &pre) in d_ff_act.data.iter_mut().zip(&lc.ff_pre.data) {
                *dv *= gelu_prime(pre);
            }
            let d_ff_pre = d_ff_act;
            matmul_tn_acc(&lc.ln2.out, &d_ff_pre, &mut grads.tensors[base + 8].data, c.ff_dim);
            for i in 0..n {
                for (gbv, &dv) in grads.tensors[base + 9].data.iter_mut().zip(d_ff_pre.row(i)) {
                    *gbv += dv;
                }
            }
            let d_ln2_out = matmul_nt(
                &d_ff_pre,
                &Mat { rows: e, cols: c.ff_dim, data: p[base + 8].data.clone() },
            );
            let d_from_ln2 = {
                let (a, b) = grads.tensors.split_at_mut(base + 7);
                layernorm_backward(
                    &lc.ln2,
                    &d_ln2_out,
                    &p[base + 6].data,
                    &mut a[base + 6].data,
                    &mut b[0].data,
                )
            };
            let mut d_h_mid = dh; // residual path
            for (a, b) in d_h_mid.data.iter_mut().zip(&d_from_ln2.data) {
                *a += b;
            }

            // Attention branch: h_mid = h_in + ctx * Wo.
            let d_attn_out = d_h_mid.clone();
            let d_ctx = matmul_nt(
                &d_attn_out,
                &Mat { rows: e, cols: e, data: p[base + 5].data.clone() },
            );
            matmul_tn_acc(&lc.ctx, &d_attn_out, &mut grads.tensors[base + 5].data, e);

            let mut dq = Mat::zeros(n, e);
            let mut dk = Mat::zeros(n, e);
            let mut dv = Mat::zeros(n, e);
            for head in 0..c.num_heads {
                let cols = head * dhd..(head + 1) * dhd;
                let pm = &lc.attn[head];
                for i in 0..n {
                    // dp[j] = sum_d d_ctx[i, d] * v[j, d]
                    let mut dp = vec![0.0; n];
                    for (j, dpj) in dp.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for d in cols.clone() {
                            s += d_ctx.at(i, d) * lc.v.at(j, d);
                        }
                        *dpj = s;
                    }
                    // dv[j, d] += p[i, j] * d_ctx[i, d]
                    for j in 0..n {
                        let w = pm.at(i, j);
                        if w != 0.0 {
                            for d in cols.clone() {
                                dv.row_mut(j)[d] += w * d_ctx.at(i, d);
                            }
                        }
                    }
                    let mut ds = vec![0.0; n];
                    softmax_backward_row(pm.row(i), &dp, &mut ds);
                    for (j, &dsj) in ds.iter().enumerate() {
                        if dsj == 0.0 {
                            continue;
                        }
                        let coeff = dsj * scale;
                        for d in cols.clone() {
                            dq.row_mut(i)[d] += coeff * lc.k.at(j, d);
                            dk.row_mut(j)[d] += coeff * lc.q.at(i, d);
                        }
                    }
                }
            }

            let mut d_ln1_out = matmul_nt(
                &dq,
                &Mat { rows: e, cols: e, data: p[base + 2].data.clone() },
            );
            let dk_term =
                matmul_nt(&dk, &Mat { rows: e, cols: e, data: p[base + 3].data.clone() });
            let dv_term =
                matmul_nt(&dv, &Mat { rows: e, cols: e, data: p[base + 4].data.clone() });
            for ((a, b), cc) in d_ln1_out.data.iter_mut().zip(&dk_term.data).zip(&dv_term.data) {
                *a += b + cc;
            }
            matmul_tn_acc(&lc.ln1.out, &dq, &mut grads.tensors[base + 2].data, e);
            matmul_tn_acc(&lc.ln1.out, &dk, &mut grads.tensors[base + 3].data, e);
            matmul_tn_acc(&lc.ln1.out, &dv, &mut grads.tensors[base + 4].data, e);
            let d_from_ln1 = {
                let (a, b) = grads.tensors.split_at_mut(base + 1);
                layernorm_backward(
                    &lc.ln1,
                    &d_ln1_out,
                    &p[base].data,
                    &mut a[base].data,
                    &mut b[0].data,
                )
            };
            let mut d_h_in = d_h_mid; // residual into the block input
            for (a, b) in d_h_in.data.iter_mut().zip(&d_from_ln1.data) {
                *a += b;
            }
            dh = d_h_in;
        }

        // Embedding and positions.
        matmul_tn_acc(input, &dh, &mut grads.tensors[0].data, e);
        for (g, &d) in grads.tensors[1].data.iter_mut().zip(&dh.data) {
            *g += d;
        }
    }
}

/// Expands request ids into one-hot rows.
pub fn one_hot_rows(ids: &[u32], num_files: usize) -> Mat {
    let mut m = Mat::zeros(ids.len(), num_files);
    for (i, &f) in ids.iter().enumerate() {
        m.row_mut(i)[f as usize] = 1.0;
    }
    m
}

/// Worst relative error of one tensor's analytic gradient against central
/// finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub max_rel_err: f64,
}

/// Central-difference gradient check over every tensor entry.
///
/// Perturbation is `1e-5 * (1 + |theta|)`; the relative error divisor floors
/// at 1e-6 so finite-difference noise on near-zero gradients is not
/// amplified.
pub fn gradient_check(
    net: &DemandNet,
    params: &ModelParams,
    batch: &[(&[u32], &[u32])],
) -> Result<Vec<GradCheckEntry>> {
    let (_, analytic) = net.batch_loss_and_grad(params, batch)?;
    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.tensors.len());
    for ti in 0..params.tensors.len() {
        let mut max_rel = 0.0f64;
        for vi in 0..params.tensors[ti].data.len() {
            let orig = params.tensors[ti].data[vi];
            let h = 1e-5 * (1.0 + orig.abs());
            work.tensors[ti].data[vi] = orig + h;
            let (loss_plus, _) = net.batch_loss_and_grad(&work, batch)?;
            work.tensors[ti].data[vi] = orig - h;
            let (loss_minus, _) = net.batch_loss_and_grad(&work, batch)?;
            work.tensors[ti].data[vi] = orig;
            let fd = (loss_plus - loss_minus) / (2.0 * h);
            let an = analytic.tensors[ti].data[vi];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        report.push(GradCheckEntry {
            tensor: params.tensors[ti].name.clone(),
            max_rel_err: max_rel,
        });
    }
    Ok(report)
}

/// Uniformly random (input, label) windows for tests and gradient checks.
pub fn random_windows(
    num: usize,
    num_files: usize,
    input_len: usize,
    horizon: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<(Vec<u32>, Vec<u32>)> {
    (0..num)
        .map(|_| {
            let input =
                (0..input_len).map(|_| rng.random_range(0..num_files as u32)).collect();
            let label =
                (0..horizon).map(|_| rng.random_range(0..num_files as u32)).collect();
            (input, label)
        })
        .collect()
}
