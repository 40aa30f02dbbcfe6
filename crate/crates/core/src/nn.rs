//! Minimal single-image CNN layers with hand-written reverse mode.
//!
//! Every layer exposes `forward`, returning its output plus whatever it needs
//! to cache, and `backward`, which consumes the cache and the upstream
//! gradient, accumulates parameter gradients and returns the input gradient.
//! Tensors are `C × H × W`, row-major, double precision.

use crate::model::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.hw();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, o: &Tensor) -> bool {
        self.c == o.c && self.h == o.h && self.w == o.w
    }

    pub fn add_assign(&mut self, o: &Tensor) {
        assert!(self.same_shape(o));
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `C = op(A)·op(B) + beta·C` for row-major operands; `op(A)` is `m × k`,
/// `op(B)` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches for the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &Tensor, k: usize, col: &mut [f64]) {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let pad = (k / 2) as isize;
    for ci in 0..x.c {
        let src = x.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    dst[..x0.min(w)].fill(0.0);
                    if x1 > x0 {
                        let s0 = (x0 as isize + dx) as usize;
                        dst[x0..x1].copy_from_slice(&srow[s0..s0 + (x1 - x0)]);
                    }
                    dst[x1.max(x0).min(w)..].fill(0.0);
                }
            }
        }
    }
}

fn col2im(col: &[f64], k: usize, dx: &mut Tensor) {
    let (h, w) = (dx.h, dx.w);
    let hw = h * w;
    let pad = (k / 2) as isize;
    for ci in 0..dx.c {
        let dst = &mut dx.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let oy = ky as isize - pad;
                let ox = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-ox).max(0) as usize;
                    let x1 = (w as isize - ox).min(w as isize).max(0) as usize;
                    if x1 <= x0 {
                        continue;
                    }
                    let s0 = (x0 as isize + ox) as usize;
                    let drow = &mut dst[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (d, g) in drow.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// Same-padded, stride-1 convolution with an odd square kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

pub struct ConvCache {
    /// im2col matrix; empty for 1×1 kernels where the input itself is used.
    col: Vec<f64>,
    input: Option<Tensor>,
    h: usize,
    w: usize,
}

impl Conv2d {
    pub fn register(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let fan_in = cin * k * k;
        let weight = store.add_uniform(&format!("{name}.weight"), vec![cout, cin, k, k], fan_in);
        let bias = store.add_uniform(&format!("{name}.bias"), vec![cout], fan_in);
        Self {
            cin,
            cout,
            k,
            weight,
            bias,
        }
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.c, self.cin, "conv input channels");
        let hw = x.hw();
        let kk = self.cin * self.k * self.k;
        let mut y = Tensor::zeros(self.cout, x.h, x.w);
        let bias = params.get(self.bias);
        for (co, b) in bias.iter().enumerate() {
            y.data[co * hw..(co + 1) * hw].fill(*b);
        }
        let w = params.get(self.weight);
        if self.k == 1 {
            gemm(self.cout, kk, hw, w, false, &x.data, false, 1.0, &mut y.data);
            let cache = ConvCache {
                col: Vec::new(),
                input: Some(x.clone()),
                h: x.h,
                w: x.w,
            };
            (y, cache)
        } else {
            let mut col = vec![0.0; kk * hw];
            im2col(x, self.k, &mut col);
            gemm(self.cout, kk, hw, w, false, &col, false, 1.0, &mut y.data);
            let cache = ConvCache {
                col,
                input: None,
                h: x.h,
                w: x.w,
            };
            (y, cache)
        }
    }

    pub fn backward(
        &self,
        params: &ParamStore,
        cache: ConvCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Tensor {
        let hw = cache.h * cache.w;
        let kk = self.cin * self.k * self.k;
        {
            let db = grads.get_mut(self.bias);
            for (co, d) in db.iter_mut().enumerate() {
                *d += dy.data[co * hw..(co + 1) * hw].iter().sum::<f64>();
            }
        }
        let cols: &[f64] = match &cache.input {
            Some(x) => &x.data,
            None => &cache.col,
        };
        gemm(self.cout, hw, kk, &dy.data, false, cols, true, 1.0, grads.get_mut(self.weight));
        let w = params.get(self.weight);
        if self.k == 1 {
            let mut dx = Tensor::zeros(self.cin, cache.h, cache.w);
            gemm(kk, self.cout, hw, w, true, &dy.data, false, 0.0, &mut dx.data);
            dx
        } else {
            let mut dcol = vec![0.0; kk * hw];
            gemm(kk, self.cout, hw, w, true, &dy.data, false, 0.0, &mut dcol);
            let mut dx = Tensor::zeros(self.cin, cache.h, cache.w);
            col2im(&dcol, self.k, &mut dx);
            dx
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization across channels at every pixel, with a per-channel
/// affine scale and offset.
#[derive(Debug, Clone)]
pub struct LayerNorm2d {
    pub c: usize,
    pub scale: ParamId,
    pub offset: ParamId,
}

pub struct NormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm2d {
    pub fn register(store: &mut ParamStore, name: &str, c: usize) -> Self {
        let scale = store.add_const(&format!("{name}.scale"), vec![c], 1.0);
        let offset = store.add_const(&format!("{name}.offset"), vec![c], 0.0);
        Self { c, scale, offset }
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor) -> (Tensor, NormCache) {
        assert_eq!(x.c, self.c, "norm channels");
        let hw = x.hw();
        let c = self.c as f64;
        let mut mean = vec![0.0; hw];
        for ch in 0..self.c {
            for (m, v) in mean.iter_mut().zip(x.channel(ch)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= c);
        let mut var = vec![0.0; hw];
        for ch in 0..self.c {
            for ((s, v), m) in var.iter_mut().zip(x.channel(ch)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s / c + LAYER_NORM_EPS).sqrt()).collect();
        let g = params.get(self.scale);
        let b = params.get(self.offset);
        let mut xhat = Tensor::zeros(self.c, x.h, x.w);
        let mut y = Tensor::zeros(self.c, x.h, x.w);
        for ch in 0..self.c {
            let src = x.channel(ch);
            for p in 0..hw {
                let xh = (src[p] - mean[p]) * inv_std[p];
                xhat.data[ch * hw + p] = xh;
                y.data[ch * hw + p] = g[ch] * xh + b[ch];
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        params: &ParamStore,
        cache: NormCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Tensor {
        let hw = dy.hw();
        let g = params.get(self.scale);
        let xhat = &cache.xhat;
        {
            let dg = grads.get_mut(self.scale);
            for ch in 0..self.c {
                dg[ch] += dy.channel(ch).iter().zip(xhat.channel(ch)).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        {
            let db = grads.get_mut(self.offset);
            for ch in 0..self.c {
                db[ch] += dy.channel(ch).iter().sum::<f64>();
            }
        }
        let mut sum_d = vec![0.0; hw];
        let mut sum_dx = vec![0.0; hw];
        for ch in 0..self.c {
            let gd = dy.channel(ch);
            let xh = xhat.channel(ch);
            for p in 0..hw {
                let d = gd[p] * g[ch];
                sum_d[p] += d;
                sum_dx[p] += d * xh[p];
            }
        }
        let c = self.c as f64;
        let mut dx = Tensor::zeros(self.c, dy.h, dy.w);
        for ch in 0..self.c {
            let gd = dy.channel(ch);
            let xh = xhat.channel(ch);
            for p in 0..hw {
                let d = gd[p] * g[ch];
                dx.data[ch * hw + p] = cache.inv_std[p] / c * (c * d - sum_d[p] - xh[p] * sum_dx[p]);
            }
        }
        dx
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let data = x.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
    Tensor::from_vec(x.c, x.h, x.w, data)
}

/// Backward of [`leaky_relu`] given the activation's input.
pub fn leaky_relu_backward(input: &Tensor, dy: &Tensor, slope: f64) -> Tensor {
    let data = input
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    Tensor::from_vec(dy.c, dy.h, dy.w, data)
}

/// 2×2 max pooling with stride 2. Ties go to the first element in row-major
/// window order.
pub fn max_pool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "max pool needs even dimensions");
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.c, oh, ow);
    let mut arg = vec![0u32; x.c * oh * ow];
    for ch in 0..x.c {
        let src = x.channel(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * x.w + 2 * ox;
                let cand = [base, base + 1, base + x.w, base + x.w + 1];
                let mut best = cand[0];
                for &i in &cand[1..] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                y.data[o] = src[best];
                arg[o] = best as u32;
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward(arg: &[u32], dy: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dy.c, in_h, in_w);
    let ohw = dy.hw();
    for ch in 0..dy.c {
        for o in 0..ohw {
            dx.data[ch * in_h * in_w + arg[ch * ohw + o] as usize] += dy.data[ch * ohw + o];
        }
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Bicubic,
}

const CUBIC_A: f64 = -0.75;

fn cubic_weights(t: f64) -> [f64; 4] {
    let a = CUBIC_A;
    let near = |x: f64| ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    let far = |x: f64| ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    [far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)]
}

/// 1D resampling taps for every output index (half-pixel aligned, borders
/// clamped).
fn interp_taps(n_in: usize, n_out: usize, mode: Interp) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    let last = n_in as isize - 1;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(4);
            let mut push = |i: isize, wgt: f64| {
                let i = i.clamp(0, last) as usize;
                if let Some(t) = taps.iter_mut().find(|t| t.0 == i) {
                    t.1 += wgt;
                } else {
                    taps.push((i, wgt));
                }
            };
            match mode {
                Interp::Bilinear => {
                    let src = src.max(0.0);
                    let i0 = src.floor() as isize;
                    let l = src - i0 as f64;
                    push(i0, 1.0 - l);
                    push(i0 + 1, l);
                }
                Interp::Bicubic => {
                    let i0 = src.floor() as isize;
                    let wts = cubic_weights(src - i0 as f64);
                    for (d, wgt) in wts.iter().enumerate() {
                        push(i0 - 1 + d as isize, *wgt);
                    }
                }
            }
            taps
        })
        .collect()
}

/// Separable interpolating upsampler; a fixed linear operator.
#[derive(Debug, Clone)]
pub struct Upsample {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub mode: Interp,
    taps_h: Vec<Vec<(usize, f64)>>,
    taps_w: Vec<Vec<(usize, f64)>>,
}

impl Upsample {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize, mode: Interp) -> Self {
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            mode,
            taps_h: interp_taps(in_h, out_h, mode),
            taps_w: interp_taps(in_w, out_w, mode),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert!(x.h == self.in_h && x.w == self.in_w, "upsample input shape");
        let mut y = Tensor::zeros(x.c, self.out_h, self.out_w);
        let mut rows = vec![0.0; self.in_h * self.out_w];
        for ch in 0..x.c {
            let src = x.channel(ch);
            for r in 0..self.in_h {
                for (o, taps) in self.taps_w.iter().enumerate() {
                    rows[r * self.out_w + o] = taps.iter().map(|&(i, wt)| wt * src[r * self.in_w + i]).sum();
                }
            }
            let dst = &mut y.data[ch * self.out_h * self.out_w..(ch + 1) * self.out_h * self.out_w];
            for (o, taps) in self.taps_h.iter().enumerate() {
                let drow = &mut dst[o * self.out_w..(o + 1) * self.out_w];
                for &(i, wt) in taps {
                    for (d, s) in drow.iter_mut().zip(&rows[i * self.out_w..(i + 1) * self.out_w]) {
                        *d += wt * s;
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(dy.c, self.in_h, self.in_w);
        let mut rows = vec![0.0; self.in_h * self.out_w];
        for ch in 0..dy.c {
            rows.fill(0.0);
            let g = dy.channel(ch);
            for (o, taps) in self.taps_h.iter().enumerate() {
                for &(i, wt) in taps {
                    let grow = &g[o * self.out_w..(o + 1) * self.out_w];
                    for (r, s) in rows[i * self.out_w..(i + 1) * self.out_w].iter_mut().zip(grow) {
                        *r += wt * s;
                    }
                }
            }
            let dst = &mut dx.data[ch * self.in_h * self.in_w..(ch + 1) * self.in_h * self.in_w];
            for r in 0..self.in_h {
                for (o, taps) in self.taps_w.iter().enumerate() {
                    let gv = rows[r * self.out_w + o];
                    for &(i, wt) in taps {
                        dst[r * self.in_w + i] += wt * gv;
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn naive_conv(x: &Tensor, w: &[f64], b: &[f64], cout: usize, k: usize) -> Tensor {
        let p = (k / 2) as isize;
        let mut y = Tensor::zeros(cout, x.h, x.w);
        for co in 0..cout {
            for yy in 0..x.h as isize {
                for xx in 0..x.w as isize {
                    let mut s = b[co];
                    for ci in 0..x.c {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (yy + ky - p, xx + kx - p);
                                if sy >= 0 && sx >= 0 && sy < x.h as isize && sx < x.w as isize {
                                    let wi = ((co * x.c + ci) * k + ky as usize) * k + kx as usize;
                                    s += w[wi] * x.data[ci * x.hw() + sy as usize * x.w + sx as usize];
                                }
                            }
                        }
                    }
                    y.data[co * x.hw() + yy as usize * x.w + xx as usize] = s;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        for &(cin, cout, k, h, w) in &[(3, 4, 3, 5, 7), (2, 3, 1, 4, 4), (1, 2, 5, 6, 3)] {
            let mut store = ParamStore::new(1);
            let conv = Conv2d::register(&mut store, "c", cin, cout, k);
            let x = random_tensor(cin, h, w, 2);
            let (y, _) = conv.forward(&store, &x);
            let expect = naive_conv(&x, store.get(conv.weight), store.get(conv.bias), cout, k);
            for (a, b) in y.data.iter().zip(&expect.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Sum of `probe ⊙ f(x)` as a scalar objective for finite differences.
    fn probe_dot(t: &Tensor, probe: &Tensor) -> f64 {
        t.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_and_norm_gradients_match_finite_differences() {
        let mut store = ParamStore::new(5);
        let conv = Conv2d::register(&mut store, "c", 3, 4, 3);
        let norm = LayerNorm2d::register(&mut store, "n", 4);
        // Non-trivial affine parameters.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in store.get_mut(norm.scale) {
            *v = rng.random_range(0.5..1.5);
        }
        for v in store.get_mut(norm.offset) {
            *v = rng.random_range(-0.5..0.5);
        }
        let x = random_tensor(3, 5, 6, 3);
        let probe = random_tensor(4, 5, 6, 4);
        let objective = |store: &ParamStore, x: &Tensor| {
            let (y, _) = conv.forward(store, x);
            let (z, _) = norm.forward(store, &y);
            probe_dot(&z, &probe)
        };
        let mut grads = Gradients::zeros_like(&store);
        let (y, cc) = conv.forward(&store, &x);
        let (_, nc) = norm.forward(&store, &y);
        let dz = norm.backward(&store, nc, &probe, &mut grads);
        let dx = conv.backward(&store, cc, &dz, &mut grads);

        let eps = 1e-5;
        for id in 0..store.len() {
            for i in 0..store.tensors[id].data.len() {
                let mut sp = store.clone();
                sp.tensors[id].data[i] += eps;
                let mut sm = store.clone();
                sm.tensors[id].data[i] -= eps;
                let fd = (objective(&sp, &x) - objective(&sm, &x)) / (2.0 * eps);
                let an = grads.tensors[id][i];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {id}[{i}]: {fd} vs {an}");
            }
        }
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (objective(&store, &xp) - objective(&store, &xm)) / (2.0 * eps);
            assert!((fd - dx.data[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn upsample_adjoint_identity() {
        for mode in [Interp::Bilinear, Interp::Bicubic] {
            let up = Upsample::new(4, 5, 8, 10, mode);
            let x = random_tensor(2, 4, 5, 1);
            let g = random_tensor(2, 8, 10, 2);
            let lhs = probe_dot(&up.forward(&x), &g);
            let rhs = probe_dot(&x, &up.backward(&g));
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_preserves_constants() {
        for mode in [Interp::Bilinear, Interp::Bicubic] {
            let up = Upsample::new(3, 3, 6, 6, mode);
            let x = Tensor::from_vec(1, 3, 3, vec![2.5; 9]);
            for v in up.forward(&x).data {
                assert!((v - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_matches_half_pixel_reference() {
        // 1D [0, 1] upsampled ×2 with half-pixel centers: [0, 0.25, 0.75, 1].
        let up = Upsample::new(1, 2, 1, 4, Interp::Bilinear);
        let y = up.forward(&Tensor::from_vec(1, 1, 2, vec![0.0, 1.0]));
        assert_eq!(y.data, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bicubic_weights_sum_to_one() {
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let s: f64 = cubic_weights(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec(1, 2, 4, vec![1.0, 3.0, 5.0, 5.0, 2.0, 0.0, 4.0, 1.0]);
        let (y, arg) = max_pool2(&x);
        assert_eq!(y.data, vec![3.0, 5.0]);
        let dx = max_pool2_backward(&arg, &Tensor::from_vec(1, 1, 2, vec![1.0, 2.0]), 2, 4);
        assert_eq!(dx.data, vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
