//! Encoder (1-D residual CNN) and pair-classifier head with hand-written
//! backpropagation. Parameters live in flat `f64` vectors so optimizers and
//! finite-difference checks can treat them uniformly.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INPUT_DIM: usize = 97;
pub const HIDDEN: usize = 64;
pub const BLOCKS: usize = 4;
pub const KERNEL: usize = 3;
pub const HEAD_HIDDEN: usize = 32;

/// Scale applied to the second convolution of each residual block at
/// initialization, so an untrained block starts close to the identity.
const RESIDUAL_INIT_SCALE: f64 = 0.1;

fn xavier(rng: &mut ChaCha8Rng, out: &mut [f64], fan_in: usize, fan_out: usize, scale: f64) {
    let bound = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.gen_range(-bound..bound);
    }
}

fn view<'a>(params: &'a [f64], offset: usize, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), &params[offset..offset + rows * cols]).expect("layout")
}

fn view1(params: &[f64], offset: usize, len: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&params[offset..offset + len])
}

fn add_into(grad: &mut [f64], offset: usize, values: &Array2<f64>) {
    for (g, v) in grad[offset..offset + values.len()]
        .iter_mut()
        .zip(values.iter())
    {
        *g += v;
    }
}

fn add_row_sums(grad: &mut [f64], offset: usize, values: &Array2<f64>) {
    for (g, v) in grad[offset..]
        .iter_mut()
        .zip(values.sum_axis(Axis(0)).iter())
    {
        *g += v;
    }
}

/// Offsets of one residual block's tensors.
#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Conv stack: 1x1 projection to `hidden`, then pre-activation residual
/// blocks `h + conv(relu(conv(relu(h))))` with kernel 3 and replicate
/// padding, then a time average.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet {
    pub input_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub params: Vec<f64>,
}

/// Row ranges of each sequence inside a concatenated batch.
pub type Spans = Vec<(usize, usize)>;

pub struct EncoderCache {
    spans: Spans,
    x: Array2<f64>,
    blocks: Vec<BlockCache>,
}

impl EncoderCache {
    /// Whether each ReLU input is positive, block by block. Two parameter
    /// settings with equal patterns lie on the same linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.blocks
            .iter()
            .flat_map(|b| b.h_in.iter().chain(b.c1.iter()).map(|&v| v > 0.0))
            .collect()
    }
}

struct BlockCache {
    h_in: Array2<f64>,
    col1: Array2<f64>,
    c1: Array2<f64>,
    col2: Array2<f64>,
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

/// Stacks rows `t-1, t, t+1` (clamped within each span) side by side.
fn im2col(h: &Array2<f64>, spans: &Spans) -> Array2<f64> {
    let width = h.ncols();
    let mut col = Array2::<f64>::zeros((h.nrows(), KERNEL * width));
    for &(start, len) in spans {
        for t in 0..len {
            let row = start + t;
            let taps = [
                start + t.saturating_sub(1),
                row,
                start + (t + 1).min(len - 1),
            ];
            for (k, &src) in taps.iter().enumerate() {
                col.slice_mut(s![row, k * width..(k + 1) * width])
                    .assign(&h.row(src));
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im(dcol: &Array2<f64>, spans: &Spans, width: usize) -> Array2<f64> {
    let mut dh = Array2::<f64>::zeros((dcol.nrows(), width));
    for &(start, len) in spans {
        for t in 0..len {
            let row = start + t;
            let taps = [
                start + t.saturating_sub(1),
                row,
                start + (t + 1).min(len - 1),
            ];
            for (k, &dst) in taps.iter().enumerate() {
                let src = dcol.slice(s![row, k * width..(k + 1) * width]);
                let mut target = dh.row_mut(dst);
                target += &src;
            }
        }
    }
    dh
}

impl EncoderNet {
    pub fn new(input_dim: usize, hidden: usize, blocks: usize, seed: u64) -> Self {
        let mut net = EncoderNet {
            input_dim,
            hidden,
            blocks,
            params: vec![0.0; Self::param_count(input_dim, hidden, blocks)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = input_dim * hidden;
        xavier(&mut rng, &mut net.params[..w], input_dim, hidden, 1.0);
        for b in 0..blocks {
            let l = net.block(b);
            let n = KERNEL * hidden * hidden;
            xavier(
                &mut rng,
                &mut net.params[l.w1..l.w1 + n],
                KERNEL * hidden,
                hidden,
                1.0,
            );
            xavier(
                &mut rng,
                &mut net.params[l.w2..l.w2 + n],
                KERNEL * hidden,
                hidden,
                RESIDUAL_INIT_SCALE,
            );
        }
        net
    }

    pub fn default_shape(seed: u64) -> Self {
        Self::new(INPUT_DIM, HIDDEN, BLOCKS, seed)
    }

    pub fn param_count(input_dim: usize, hidden: usize, blocks: usize) -> usize {
        input_dim * hidden + hidden + blocks * 2 * (KERNEL * hidden * hidden + hidden)
    }

    pub fn output_dim(&self) -> usize {
        self.hidden
    }

    fn b_in(&self) -> usize {
        self.input_dim * self.hidden
    }

    fn block(&self, b: usize) -> BlockLayout {
        let conv = KERNEL * self.hidden * self.hidden + self.hidden;
        let base = self.b_in() + self.hidden + b * 2 * conv;
        BlockLayout {
            w1: base,
            b1: base + conv - self.hidden,
            w2: base + conv,
            b2: base + 2 * conv - self.hidden,
        }
    }

    /// Named tensors in storage order, for checkpoints.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            (
                "encoder.input.weight".to_string(),
                vec![self.input_dim, self.hidden],
            ),
            ("encoder.input.bias".to_string(), vec![self.hidden]),
        ];
        for b in 0..self.blocks {
            for conv in 1..=2 {
                out.push((
                    format!("encoder.block{b}.conv{conv}.weight"),
                    vec![KERNEL * self.hidden, self.hidden],
                ));
                out.push((
                    format!("encoder.block{b}.conv{conv}.bias"),
                    vec![self.hidden],
                ));
            }
        }
        out
    }

    /// Embeds each sequence of a batch; rows of the result follow `seqs`.
    pub fn forward(&self, seqs: &[ArrayView2<f32>]) -> (Array2<f64>, EncoderCache) {
        let rows: usize = seqs.iter().map(|s| s.nrows()).sum();
        let mut x = Array2::<f64>::zeros((rows, self.input_dim));
        let mut spans = Vec::with_capacity(seqs.len());
        let mut start = 0;
        for seq in seqs {
            assert_eq!(seq.ncols(), self.input_dim, "input dimension");
            assert!(seq.nrows() > 0, "empty sequence");
            x.slice_mut(s![start..start + seq.nrows(), ..])
                .assign(&seq.mapv(|v| v as f64));
            spans.push((start, seq.nrows()));
            start += seq.nrows();
        }
        let p = &self.params;
        let hd = self.hidden;
        let mut h = x.dot(&view(p, 0, self.input_dim, hd)) + view1(p, self.b_in(), hd);
        let mut caches = Vec::with_capacity(self.blocks);
        for b in 0..self.blocks {
            let l = self.block(b);
            let col1 = im2col(&relu(&h), &spans);
            let c1 = col1.dot(&view(p, l.w1, KERNEL * hd, hd)) + view1(p, l.b1, hd);
            let col2 = im2col(&relu(&c1), &spans);
            let c2 = col2.dot(&view(p, l.w2, KERNEL * hd, hd)) + view1(p, l.b2, hd);
            let h_next = &h + &c2;
            caches.push(BlockCache {
                h_in: h,
                col1,
                c1,
                col2,
            });
            h = h_next;
        }
        let mut emb = Array2::<f64>::zeros((seqs.len(), hd));
        for (i, &(start, len)) in spans.iter().enumerate() {
            let mean = h.slice(s![start..start + len, ..]).sum_axis(Axis(0)) / len as f64;
            emb.row_mut(i).assign(&mean);
        }
        (
            emb,
            EncoderCache {
                spans,
                x,
                blocks: caches,
            },
        )
    }

    /// Gradient of the parameters given the gradient of the embeddings.
    pub fn backward(&self, cache: &EncoderCache, d_emb: &Array2<f64>) -> Vec<f64> {
        let p = &self.params;
        let hd = self.hidden;
        let mut grad = vec![0.0; p.len()];
        let mut dh = Array2::<f64>::zeros((cache.x.nrows(), hd));
        for (i, &(start, len)) in cache.spans.iter().enumerate() {
            let row = d_emb.row(i).mapv(|v| v / len as f64);
            for t in start..start + len {
                dh.row_mut(t).assign(&row);
            }
        }
        for b in (0..self.blocks).rev() {
            let l = self.block(b);
            let bc = &cache.blocks[b];
            let dc2 = &dh;
            add_into(&mut grad, l.w2, &bc.col2.t().dot(dc2));
            add_row_sums(&mut grad, l.b2, dc2);
            let dcol2 = dc2.dot(&view(p, l.w2, KERNEL * hd, hd).t());
            let mut dc1 = col2im(&dcol2, &cache.spans, hd);
            dc1.zip_mut_with(&bc.c1, |d, &c| {
                if c <= 0.0 {
                    *d = 0.0
                }
            });
            add_into(&mut grad, l.w1, &bc.col1.t().dot(&dc1));
            add_row_sums(&mut grad, l.b1, &dc1);
            let dcol1 = dc1.dot(&view(p, l.w1, KERNEL * hd, hd).t());
            let mut da = col2im(&dcol1, &cache.spans, hd);
            da.zip_mut_with(&bc.h_in, |d, &h| {
                if h <= 0.0 {
                    *d = 0.0
                }
            });
            dh = &dh + &da;
        }
        add_into(&mut grad, 0, &cache.x.t().dot(&dh));
        add_row_sums(&mut grad, self.b_in(), &dh);
        grad
    }

    pub fn embed_one(&self, seq: ArrayView2<f32>) -> Array1<f64> {
        self.forward(&[seq]).0.row(0).to_owned()
    }
}

/// Dense `dim -> hidden -> 1` network with ReLU and a sigmoid output,
/// applied to `|xa - xb|`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairClassifierHead {
    pub input_dim: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

pub struct HeadCache {
    input: Array2<f64>,
    z1: Array2<f64>,
}

impl HeadCache {
    /// Whether each hidden ReLU input is positive.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.z1.iter().map(|&v| v > 0.0).collect()
    }
}

impl PairClassifierHead {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut head = PairClassifierHead {
            input_dim,
            hidden,
            params: vec![0.0; input_dim * hidden + hidden + hidden + 1],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = input_dim * hidden;
        xavier(&mut rng, &mut head.params[..w1], input_dim, hidden, 1.0);
        let w2 = w1 + hidden;
        xavier(&mut rng, &mut head.params[w2..w2 + hidden], hidden, 1, 1.0);
        head
    }

    pub fn default_shape(seed: u64) -> Self {
        Self::new(HIDDEN, HEAD_HIDDEN, seed)
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = self.input_dim * self.hidden;
        let w2 = b1 + self.hidden;
        (w1, b1, w2, w2 + self.hidden)
    }

    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            (
                "head.dense1.weight".to_string(),
                vec![self.input_dim, self.hidden],
            ),
            ("head.dense1.bias".to_string(), vec![self.hidden]),
            ("head.dense2.weight".to_string(), vec![self.hidden, 1]),
            ("head.dense2.bias".to_string(), vec![1]),
        ]
    }

    /// Logits for each row of `input` (already `|xa - xb|`).
    pub fn forward(&self, input: &Array2<f64>) -> (Array1<f64>, HeadCache) {
        let (w1, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let z1 = input.dot(&view(p, w1, self.input_dim, self.hidden)) + view1(p, b1, self.hidden);
        let logits = relu(&z1).dot(&view1(p, w2, self.hidden)) + p[b2];
        (
            logits,
            HeadCache {
                input: input.clone(),
                z1,
            },
        )
    }

    /// Returns (parameter gradient, gradient w.r.t. the input rows).
    pub fn backward(&self, cache: &HeadCache, d_logits: &Array1<f64>) -> (Vec<f64>, Array2<f64>) {
        let (w1, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];
        let a1 = relu(&cache.z1);
        let gw2 = a1.t().dot(d_logits);
        for (g, v) in grad[w2..w2 + self.hidden].iter_mut().zip(gw2.iter()) {
            *g += v;
        }
        grad[b2] += d_logits.sum();
        let w2v = view1(p, w2, self.hidden);
        let mut dz1 = Array2::<f64>::zeros(cache.z1.raw_dim());
        for (i, mut row) in dz1.axis_iter_mut(Axis(0)).enumerate() {
            row.assign(&w2v.mapv(|w| w * d_logits[i]));
        }
        dz1.zip_mut_with(&cache.z1, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        add_into(&mut grad, w1, &cache.input.t().dot(&dz1));
        add_row_sums(&mut grad, b1, &dz1);
        let d_input = dz1.dot(&view(p, w1, self.input_dim, self.hidden).t());
        (grad, d_input)
    }

    pub fn score(&self, xa: ArrayView1<f64>, xb: ArrayView1<f64>) -> f64 {
        let diff = (&xa - &xb).mapv(f64::abs).insert_axis(Axis(0));
        sigmoid(self.forward(&diff).0[0])
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
