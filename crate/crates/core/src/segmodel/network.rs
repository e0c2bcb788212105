//! Layer graph over a flat parameter vector.
//!
//! Encoder: 7x7/2 stem, 3x3/2 max pool, four stages of two basic residual
//! blocks (widths w, 2w, 4w, 8w). The stride-32 features go through a pyramid
//! pooling module (bins 1, 2, 3, 6); the decoder then upsamples five times,
//! each time concatenating the matching encoder feature map (the stem output
//! at 1/2 and the raw input at full resolution), and a 1x1 head emits two
//! class logits per pixel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, PYRAMID_BINS};
use super::ops::{self, BnCache, ConvShape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are collected.
    Train,
    /// Running statistics; every sample is processed independently.
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    off: usize,
    len: usize,
}

impl Slot {
    fn of<'a>(&self, v: &'a [f64]) -> &'a [f64] {
        &v[self.off..self.off + self.len]
    }
}

#[derive(Debug, Clone)]
struct Conv {
    shape: ConvShape,
    /// Weights; the bias, when present, follows directly.
    w: Slot,
    bias: bool,
}

#[derive(Debug, Clone)]
struct Bn {
    /// Gamma then beta.
    affine: Slot,
    /// Running mean then running variance, in the buffer vector.
    stats: Slot,
}

#[derive(Debug, Clone)]
struct Unit {
    conv: Conv,
    bn: Option<Bn>,
    relu: bool,
}

struct UnitCache {
    x: Tensor,
    bn: Option<BnCache>,
    out: Tensor,
}

#[derive(Debug, Clone)]
struct Block {
    c1: Unit,
    c2: Unit,
    down: Option<Unit>,
}

struct BlockCache {
    c1: UnitCache,
    c2: UnitCache,
    down: Option<UnitCache>,
    out: Tensor,
}

struct PpmCache {
    unit: UnitCache,
    bins: usize,
}

/// Intermediate state of one forward pass, consumed by [`Network::backward`].
pub struct Tape {
    mode: Mode,
    stem: UnitCache,
    pool_arg: Vec<u32>,
    blocks: Vec<BlockCache>,
    ppm: Vec<PpmCache>,
    bottleneck: UnitCache,
    /// Channel count of the upsampled path entering each decoder stage.
    decoder_up: Vec<(usize, usize, usize)>,
    decoder: Vec<UnitCache>,
    head: UnitCache,
}

struct Builder {
    n_params: usize,
    n_buffers: usize,
}

impl Builder {
    fn alloc(&mut self, len: usize) -> Slot {
        let s = Slot { off: self.n_params, len };
        self.n_params += len;
        s
    }

    fn conv(&mut self, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Conv {
        let shape = ConvShape {
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
        };
        let w = self.alloc(shape.weight_len());
        if bias {
            self.alloc(cout);
        }
        Conv { shape, w, bias }
    }

    fn unit(&mut self, cin: usize, cout: usize, k: usize, stride: usize, bn: bool, relu: bool) -> Unit {
        let conv = self.conv(cin, cout, k, stride, !bn);
        let bn = bn.then(|| {
            let affine = self.alloc(2 * cout);
            let stats = Slot {
                off: self.n_buffers,
                len: 2 * cout,
            };
            self.n_buffers += 2 * cout;
            Bn { affine, stats }
        });
        Unit { conv, bn, relu }
    }

    fn block(&mut self, cin: usize, cout: usize, stride: usize) -> Block {
        let c1 = self.unit(cin, cout, 3, stride, true, true);
        let c2 = self.unit(cout, cout, 3, 1, true, false);
        let down = (stride != 1 || cin != cout).then(|| self.unit(cin, cout, 1, stride, true, false));
        Block { c1, c2, down }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    stem: Unit,
    blocks: Vec<Block>,
    ppm: Vec<(usize, Unit)>,
    bottleneck: Unit,
    decoder: Vec<Unit>,
    head: Unit,
    n_params: usize,
    n_buffers: usize,
}

impl Unit {
    fn forward(&self, params: &[f64], buffers: &[f64], x: &Tensor, mode: Mode) -> (Tensor, UnitCache) {
        let c = &self.conv;
        let w = c.w.of(params);
        let bias = c.bias.then(|| &params[c.w.off + c.w.len..c.w.off + c.w.len + c.shape.cout]);
        let mut y = ops::conv_forward(x, &c.shape, w, bias);
        let mut bn_cache = None;
        if let Some(bn) = &self.bn {
            let cout = c.shape.cout;
            let (gamma, beta) = bn.affine.of(params).split_at(cout);
            y = match mode {
                Mode::Train => {
                    let (out, cache) = ops::bn_forward_train(&y, gamma, beta);
                    bn_cache = Some(cache);
                    out
                }
                Mode::Eval => {
                    let (mean, var) = bn.stats.of(buffers).split_at(cout);
                    ops::bn_forward_eval(&y, gamma, beta, mean, var)
                }
            };
        }
        if self.relu {
            ops::relu_inplace(&mut y);
        }
        let cache = UnitCache {
            x: x.clone(),
            bn: bn_cache,
            out: y.clone(),
        };
        (y, cache)
    }

    fn backward(&self, params: &[f64], grads: &mut [f64], cache: &UnitCache, mut dy: Tensor, need_dx: bool) -> Option<Tensor> {
        if self.relu {
            ops::relu_backward(&mut dy, &cache.out);
        }
        let c = &self.conv;
        if let Some(bn) = &self.bn {
            let cout = c.shape.cout;
            let gamma = &bn.affine.of(params)[..cout];
            let (dg, db) = grads[bn.affine.off..bn.affine.off + bn.affine.len].split_at_mut(cout);
            let bc = cache.bn.as_ref().expect("backward requires a training-mode forward pass");
            dy = ops::bn_backward(&dy, bc, gamma, dg, db);
        }
        let w = c.w.of(params);
        let end = c.w.off + c.w.len + if c.bias { c.shape.cout } else { 0 };
        let (dw, db) = grads[c.w.off..end].split_at_mut(c.w.len);
        let db = c.bias.then_some(db);
        ops::conv_backward(&cache.x, &dy, &c.shape, w, dw, db, need_dx)
    }

    fn init(&self, params: &mut [f64], buffers: &mut [f64], rng: &mut ChaCha8Rng) {
        let s = &self.conv.shape;
        let std = (2.0 / (s.cout * s.k * s.k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        for v in &mut params[self.conv.w.off..self.conv.w.off + self.conv.w.len] {
            *v = normal.sample(rng);
        }
        if self.conv.bias {
            let off = self.conv.w.off + self.conv.w.len;
            params[off..off + s.cout].fill(0.0);
        }
        if let Some(bn) = &self.bn {
            let a = &mut params[bn.affine.off..bn.affine.off + bn.affine.len];
            a[..s.cout].fill(1.0);
            a[s.cout..].fill(0.0);
            let st = &mut buffers[bn.stats.off..bn.stats.off + bn.stats.len];
            st[..s.cout].fill(0.0);
            st[s.cout..].fill(1.0);
        }
    }

    fn update_stats(&self, buffers: &mut [f64], cache: &UnitCache, momentum: f64) {
        if let (Some(bn), Some(bc)) = (&self.bn, &cache.bn) {
            let cout = self.conv.shape.cout;
            let st = &mut buffers[bn.stats.off..bn.stats.off + bn.stats.len];
            for c in 0..cout {
                st[c] = (1.0 - momentum) * st[c] + momentum * bc.batch_mean[c];
                st[cout + c] = (1.0 - momentum) * st[cout + c] + momentum * bc.batch_var[c];
            }
        }
    }
}

impl Block {
    fn forward(&self, params: &[f64], buffers: &[f64], x: &Tensor, mode: Mode) -> (Tensor, BlockCache) {
        let (a, c1) = self.c1.forward(params, buffers, x, mode);
        let (mut b, c2) = self.c2.forward(params, buffers, &a, mode);
        let down = match &self.down {
            Some(d) => {
                let (s, dc) = d.forward(params, buffers, x, mode);
                ops::add_assign(&mut b, &s);
                Some(dc)
            }
            None => {
                ops::add_assign(&mut b, x);
                None
            }
        };
        ops::relu_inplace(&mut b);
        let cache = BlockCache {
            c1,
            c2,
            down,
            out: b.clone(),
        };
        (b, cache)
    }

    fn backward(&self, params: &[f64], grads: &mut [f64], cache: &BlockCache, mut dy: Tensor) -> Tensor {
        ops::relu_backward(&mut dy, &cache.out);
        let mut dx = match (&self.down, &cache.down) {
            (Some(d), Some(dc)) => d.backward(params, grads, dc, dy.clone(), true).expect("dx requested"),
            _ => dy.clone(),
        };
        let da = self.c2.backward(params, grads, &cache.c2, dy, true).expect("dx requested");
        let dx1 = self.c1.backward(params, grads, &cache.c1, da, true).expect("dx requested");
        ops::add_assign(&mut dx, &dx1);
        dx
    }

    fn units(&self) -> impl Iterator<Item = &Unit> {
        [&self.c1, &self.c2].into_iter().chain(self.down.as_ref())
    }
}

/// Indices (into `blocks`) whose outputs are the stride-4/8/16/32 features.
const STAGE_ENDS: [usize; 4] = [1, 3, 5, 7];

impl Network {
    pub fn new(config: &ModelConfig) -> Self {
        let mut b = Builder { n_params: 0, n_buffers: 0 };
        let w = config.encoder_width;
        let stem = b.unit(config.in_channels, w, 7, 2, true, true);
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let mut blocks = Vec::new();
        let mut cin = w;
        for (stage, &cout) in widths.iter().enumerate() {
            let stride = if stage == 0 { 1 } else { 2 };
            blocks.push(b.block(cin, cout, stride));
            blocks.push(b.block(cout, cout, 1));
            cin = cout;
        }
        let pc = config.pyramid_channels;
        let ppm = PYRAMID_BINS.iter().map(|&bins| (bins, b.unit(8 * w, pc, 1, 1, false, true))).collect();
        let dec = config.decoder_channels;
        let bottleneck = b.unit(8 * w + PYRAMID_BINS.len() * pc, dec[0], 3, 1, true, true);
        let skips = [4 * w, 2 * w, w, w, config.in_channels];
        let decoder = (0..5).map(|i| b.unit(dec[i] + skips[i], dec[i + 1], 3, 1, true, true)).collect();
        let head = b.unit(dec[5], config.classes, 1, 1, false, false);
        Self {
            stem,
            blocks,
            ppm,
            bottleneck,
            decoder,
            head,
            n_params: b.n_params,
            n_buffers: b.n_buffers,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_buffers(&self) -> usize {
        self.n_buffers
    }

    fn units(&self) -> impl Iterator<Item = &Unit> {
        std::iter::once(&self.stem)
            .chain(self.blocks.iter().flat_map(Block::units))
            .chain(self.ppm.iter().map(|(_, u)| u))
            .chain(std::iter::once(&self.bottleneck))
            .chain(self.decoder.iter())
            .chain(std::iter::once(&self.head))
    }

    /// Number of convolutions in the encoder's main path, excluding 1x1 shortcuts.
    pub fn encoder_depth(&self) -> usize {
        1 + self.blocks.len() * 2
    }

    /// Kaiming-normal (fan-out) convolutions, unit batch-norm scale, zero biases.
    pub fn init(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.n_params];
        let mut buffers = vec![0.0; self.n_buffers];
        for u in self.units() {
            u.init(&mut params, &mut buffers, &mut rng);
        }
        (params, buffers)
    }

    /// Logits `(2, N, H, W)` for an input `(3, N, H, W)` with H, W multiples of 32.
    pub fn forward(&self, params: &[f64], buffers: &[f64], x: &Tensor, mode: Mode) -> (Tensor, Tape) {
        let (f1, stem) = self.stem.forward(params, buffers, x, mode);
        let (mut h, pool_arg) = ops::maxpool_forward(&f1);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut feats = vec![f1];
        for (i, blk) in self.blocks.iter().enumerate() {
            let (out, cache) = blk.forward(params, buffers, &h, mode);
            blocks.push(cache);
            if STAGE_ENDS.contains(&i) {
                feats.push(out.clone());
            }
            h = out;
        }
        // feats: [f1 (1/2), f2 (1/4), f3 (1/8), f4 (1/16), f5 (1/32)]
        let f5 = &feats[4];
        let mut ppm = Vec::with_capacity(self.ppm.len());
        let mut branches = Vec::with_capacity(self.ppm.len());
        for (bins, unit) in &self.ppm {
            let pooled = ops::adaptive_avg_pool(f5, *bins);
            let (y, cache) = unit.forward(params, buffers, &pooled, mode);
            branches.push(ops::resize_bilinear(&y, f5.h, f5.w));
            ppm.push(PpmCache { unit: cache, bins: *bins });
        }
        let mut parts = vec![f5];
        parts.extend(branches.iter());
        let (mut d, bottleneck) = self.bottleneck.forward(params, buffers, &ops::concat(&parts), mode);
        let skips = [&feats[3], &feats[2], &feats[1], &feats[0], x];
        let mut decoder = Vec::with_capacity(5);
        let mut decoder_up = Vec::with_capacity(5);
        for (unit, skip) in self.decoder.iter().zip(skips) {
            decoder_up.push((d.c, d.h, d.w));
            let up = ops::resize_bilinear(&d, skip.h, skip.w);
            let (y, cache) = unit.forward(params, buffers, &ops::concat(&[&up, skip]), mode);
            decoder.push(cache);
            d = y;
        }
        let (logits, head) = self.head.forward(params, buffers, &d, mode);
        let tape = Tape {
            mode,
            stem,
            pool_arg,
            blocks,
            ppm,
            bottleneck,
            decoder_up,
            decoder,
            head,
        };
        (logits, tape)
    }

    /// Accumulates parameter gradients of the loss given `dlogits`.
    pub fn backward(&self, params: &[f64], tape: &Tape, dlogits: Tensor, grads: &mut [f64]) {
        assert_eq!(tape.mode, Mode::Train, "backward requires a training-mode tape");
        let mut d = self.head.backward(params, grads, &tape.head, dlogits, true).expect("dx requested");
        // Gradients flowing into f4, f3, f2, f1 through the skip connections.
        let mut skip_grads: Vec<Tensor> = Vec::with_capacity(4);
        for i in (0..5).rev() {
            let unit = &self.decoder[i];
            let dcat = unit.backward(params, grads, &tape.decoder[i], d, true).expect("dx requested");
            let (c, h, w) = tape.decoder_up[i];
            let skip_c = dcat.c - c;
            let mut parts = ops::split(&dcat, &[c, skip_c]);
            let dskip = parts.pop().expect("two parts");
            let dup = parts.pop().expect("two parts");
            if i < 4 {
                skip_grads.push(dskip);
            }
            d = ops::resize_bilinear_backward(&dup, h, w);
        }
        // skip_grads now holds [f1, f2, f3, f4].
        let dcat = self.bottleneck.backward(params, grads, &tape.bottleneck, d, true).expect("dx requested");
        let f5_c = dcat.c - self.ppm.len() * self.ppm[0].1.conv.shape.cout;
        let mut sizes = vec![f5_c];
        sizes.extend(self.ppm.iter().map(|(_, u)| u.conv.shape.cout));
        let mut parts = ops::split(&dcat, &sizes).into_iter();
        let mut dh = parts.next().expect("f5 part");
        let (f5_h, f5_w) = (dh.h, dh.w);
        for ((unit_pair, cache), dbranch) in self.ppm.iter().zip(&tape.ppm).zip(parts) {
            let dy = ops::resize_bilinear_backward(&dbranch, cache.bins, cache.bins);
            let dpooled = unit_pair.1.backward(params, grads, &cache.unit, dy, true).expect("dx requested");
            ops::add_assign(&mut dh, &ops::adaptive_avg_pool_backward(&dpooled, f5_h, f5_w));
        }
        for i in (0..self.blocks.len()).rev() {
            dh = self.blocks[i].backward(params, grads, &tape.blocks[i], dh);
            // Entering the output of the previous stage (f4, f3, f2).
            if i > 0 && STAGE_ENDS.contains(&(i - 1)) {
                let stage = STAGE_ENDS.iter().position(|&e| e == i - 1).expect("stage end");
                ops::add_assign(&mut dh, &skip_grads[stage + 1]);
            }
        }
        let f1 = &tape.stem.out;
        let mut df1 = ops::maxpool_backward(&dh, &tape.pool_arg, f1.h, f1.w);
        ops::add_assign(&mut df1, &skip_grads[0]);
        self.stem.backward(params, grads, &tape.stem, df1, false);
    }

    /// Folds the batch statistics of a training-mode tape into the running estimates.
    pub fn update_running_stats(&self, buffers: &mut [f64], tape: &Tape, momentum: f64) {
        self.stem.update_stats(buffers, &tape.stem, momentum);
        for (blk, cache) in self.blocks.iter().zip(&tape.blocks) {
            blk.c1.update_stats(buffers, &cache.c1, momentum);
            blk.c2.update_stats(buffers, &cache.c2, momentum);
            if let (Some(d), Some(dc)) = (&blk.down, &cache.down) {
                d.update_stats(buffers, dc, momentum);
            }
        }
        for ((_, u), c) in self.ppm.iter().zip(&tape.ppm) {
            u.update_stats(buffers, &c.unit, momentum);
        }
        self.bottleneck.update_stats(buffers, &tape.bottleneck, momentum);
        for (u, c) in self.decoder.iter().zip(&tape.decoder) {
            u.update_stats(buffers, c, momentum);
        }
        self.head.update_stats(buffers, &tape.head, momentum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_has_eighteen_layer_topology() {
        let net = Network::new(&ModelConfig::tiny());
        // 17 convolutions in the main path; the classifier layer of the
        // original topology is replaced by the decoder.
        assert_eq!(net.encoder_depth(), 17);
        assert_eq!(net.blocks.iter().filter(|b| b.down.is_some()).count(), 3);
    }

    #[test]
    fn logits_shape() {
        let cfg = ModelConfig::tiny();
        let net = Network::new(&cfg);
        let (p, b) = net.init(1);
        let x = Tensor::zeros(3, 2, 128, 128);
        let (y, _) = net.forward(&p, &b, &x, Mode::Eval);
        assert_eq!((y.c, y.n, y.h, y.w), (2, 2, 128, 128));
        assert!(y.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn parameter_count_full_encoder() {
        let net = Network::new(&ModelConfig::full());
        // ResNet-18 convolution + batch-norm parameters without the classifier.
        let encoder: usize = std::iter::once(&net.stem)
            .chain(net.blocks.iter().flat_map(Block::units))
            .map(|u| u.conv.w.len + u.bn.as_ref().map_or(0, |b| b.affine.len))
            .sum();
        assert_eq!(encoder, 11_176_512);
    }
}
