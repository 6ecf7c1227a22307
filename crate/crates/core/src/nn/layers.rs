use rand::Rng;

use super::{strides, ParamId, ParamStore, Scalar, Tensor};

fn uniform<S: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, bound: f32) -> Vec<S> {
    (0..len)
        .map(|_| S::from_single(if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 }))
        .collect()
}

/// Same-padded square convolution, stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv2d {
    /// Weights and bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// or all zeros when `zero` is set.
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        assert!(k % 2 == 1, "odd kernel sizes only");
        let bound = if zero { 0.0 } else { 1.0 / ((cin * k * k) as f32).sqrt() };
        let weight = store.push(
            format!("{name}.weight"),
            vec![cout, cin, k, k],
            uniform(rng, cout * cin * k * k, bound),
        );
        let bias = store.push(format!("{name}.bias"), vec![cout], uniform(rng, cout, bound));
        Self {
            weight,
            bias,
            cin,
            cout,
            k,
        }
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col<S: Scalar>(&self, x: &[S], h: usize, w: usize, cols: &mut [S]) {
        let k = self.k;
        let pad = (k / 2) as isize;
        let hw = h * w;
        for ci in 0..self.cin {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        let out = &mut dst[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            out.fill(S::zero());
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        out[..x_lo].fill(S::zero());
                        out[x_hi..].fill(S::zero());
                        let sx_lo = (x_lo as isize + dx) as usize;
                        out[x_lo..x_hi].copy_from_slice(&src[sx_lo..sx_lo + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }

    fn col2im<S: Scalar>(&self, cols: &[S], h: usize, w: usize, dx_item: &mut [S]) {
        let k = self.k;
        let pad = (k / 2) as isize;
        let hw = h * w;
        for ci in 0..self.cin {
            let plane = &mut dx_item[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        let sx_lo = (x_lo as isize + dx) as usize;
                        for (d, &s) in dst[sx_lo..sx_lo + (x_hi - x_lo)]
                            .iter_mut()
                            .zip(&src[y * w + x_lo..y * w + x_hi])
                        {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>) -> Tensor<S> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let hw = x.hw();
        let weight = p.get(self.weight);
        let bias = p.get(self.bias);
        let mut y = Tensor::zeros(x.n, self.cout, x.h, x.w);
        let mut cols = if self.k == 1 {
            Vec::new()
        } else {
            vec![S::zero(); self.patch_len() * hw]
        };
        for i in 0..x.n {
            let src: &[S] = if self.k == 1 {
                x.item(i)
            } else {
                self.im2col(x.item(i), x.h, x.w, &mut cols);
                &cols
            };
            let out = y.item_mut(i);
            S::gemm(
                self.cout,
                self.patch_len(),
                hw,
                weight,
                strides(self.patch_len(), false),
                src,
                strides(hw, false),
                S::zero(),
                out,
                strides(hw, false),
            );
            for (co, row) in out.chunks_exact_mut(hw).enumerate() {
                let b = bias[co];
                row.iter_mut().for_each(|v| *v += b);
            }
        }
        y
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient
    /// when `need_dx` is set.
    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        g: &mut ParamStore<S>,
        x: &Tensor<S>,
        dy: &Tensor<S>,
        need_dx: bool,
    ) -> Option<Tensor<S>> {
        let hw = x.hw();
        let pl = self.patch_len();
        let weight = p.get(self.weight);
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        let mut cols = if self.k == 1 { Vec::new() } else { vec![S::zero(); pl * hw] };
        let mut dcols = if self.k == 1 || !need_dx {
            Vec::new()
        } else {
            vec![S::zero(); pl * hw]
        };
        for i in 0..x.n {
            let dy_i = dy.item(i);
            {
                let src: &[S] = if self.k == 1 {
                    x.item(i)
                } else {
                    self.im2col(x.item(i), x.h, x.w, &mut cols);
                    &cols
                };
                S::gemm(
                    self.cout,
                    hw,
                    pl,
                    dy_i,
                    strides(hw, false),
                    src,
                    strides(hw, true),
                    S::one(),
                    g.get_mut(self.weight),
                    strides(pl, false),
                );
            }
            let db = g.get_mut(self.bias);
            for (co, row) in dy_i.chunks_exact(hw).enumerate() {
                db[co] += row.iter().fold(S::zero(), |a, &v| a + v);
            }
            if let Some(dx) = dx.as_mut() {
                let target: &mut [S] = if self.k == 1 { dx.item_mut(i) } else { &mut dcols };
                S::gemm(
                    pl,
                    self.cout,
                    hw,
                    weight,
                    strides(pl, true),
                    dy_i,
                    strides(hw, false),
                    S::zero(),
                    target,
                    strides(hw, false),
                );
                if self.k != 1 {
                    self.col2im(&dcols, x.h, x.w, dx.item_mut(i));
                }
            }
        }
        dx
    }
}

/// Group normalization with per-channel affine scale and offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupNorm {
    pub scale: ParamId,
    pub offset: ParamId,
    pub channels: usize,
    pub groups: usize,
}

#[derive(Debug, Clone)]
pub struct GroupNormCtx<S> {
    xhat: Vec<S>,
    rstd: Vec<S>,
}

const GN_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize, groups: usize) -> Self {
        assert!(
            groups > 0 && channels.is_multiple_of(groups),
            "{name}: {channels} channels in {groups} groups"
        );
        let scale = store.push(format!("{name}.scale"), vec![channels], vec![S::one(); channels]);
        let offset = store.push(format!("{name}.offset"), vec![channels], vec![S::zero(); channels]);
        Self {
            scale,
            offset,
            channels,
            groups,
        }
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>, keep: bool) -> (Tensor<S>, Option<GroupNormCtx<S>>) {
        assert_eq!(x.c, self.channels, "group norm channels");
        let hw = x.hw();
        let cpg = self.channels / self.groups;
        let m = cpg * hw;
        let inv_m = S::one() / S::of(m as f64);
        let eps = S::of(GN_EPS);
        let scale = p.get(self.scale);
        let offset = p.get(self.offset);
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut xhat = if keep { vec![S::zero(); x.data.len()] } else { Vec::new() };
        let mut rstds = Vec::with_capacity(if keep { x.n * self.groups } else { 0 });
        for i in 0..x.n {
            let xi = x.item(i);
            for gi in 0..self.groups {
                let span = gi * m..(gi + 1) * m;
                let seg = &xi[span.clone()];
                let mean = seg.iter().fold(S::zero(), |a, &v| a + v) * inv_m;
                let var = seg.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_m;
                let rstd = S::one() / (var + eps).sqrt();
                let base = i * x.item_len() + gi * m;
                for (j, &v) in seg.iter().enumerate() {
                    let c = gi * cpg + j / hw;
                    let xh = (v - mean) * rstd;
                    y.data[base + j] = xh * scale[c] + offset[c];
                    if keep {
                        xhat[base + j] = xh;
                    }
                }
                if keep {
                    rstds.push(rstd);
                }
            }
        }
        let ctx = keep.then_some(GroupNormCtx { xhat, rstd: rstds });
        (y, ctx)
    }

    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        g: &mut ParamStore<S>,
        ctx: &GroupNormCtx<S>,
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let hw = dy.hw();
        let cpg = self.channels / self.groups;
        let m = cpg * hw;
        let inv_m = S::one() / S::of(m as f64);
        let scale = p.get(self.scale);
        let mut dscale = vec![S::zero(); self.channels];
        let mut doffset = vec![S::zero(); self.channels];
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        let mut dxhat = vec![S::zero(); m];
        for i in 0..dy.n {
            for gi in 0..self.groups {
                let base = i * dy.item_len() + gi * m;
                let mut sum1 = S::zero();
                let mut sum2 = S::zero();
                for j in 0..m {
                    let c = gi * cpg + j / hw;
                    let d = dy.data[base + j];
                    let xh = ctx.xhat[base + j];
                    dscale[c] += d * xh;
                    doffset[c] += d;
                    let dh = d * scale[c];
                    dxhat[j] = dh;
                    sum1 += dh;
                    sum2 += dh * xh;
                }
                let rstd = ctx.rstd[i * self.groups + gi];
                let mean1 = sum1 * inv_m;
                let mean2 = sum2 * inv_m;
                for j in 0..m {
                    dx.data[base + j] = rstd * (dxhat[j] - mean1 - ctx.xhat[base + j] * mean2);
                }
            }
        }
        for (a, b) in g.get_mut(self.scale).iter_mut().zip(dscale) {
            *a += b;
        }
        for (a, b) in g.get_mut(self.offset).iter_mut().zip(doffset) {
            *a += b;
        }
        dx
    }
}

/// Fully connected layer on `[n, in, 1, 1]` tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let weight = store.push(
            format!("{name}.weight"),
            vec![fan_out, fan_in],
            uniform(rng, fan_in * fan_out, bound),
        );
        let bias = store.push(format!("{name}.bias"), vec![fan_out], uniform(rng, fan_out, bound));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>) -> Tensor<S> {
        assert_eq!(x.item_len(), self.fan_in, "linear input width");
        let mut y = Tensor::zeros(x.n, self.fan_out, 1, 1);
        S::gemm(
            x.n,
            self.fan_in,
            self.fan_out,
            &x.data,
            strides(self.fan_in, false),
            p.get(self.weight),
            strides(self.fan_in, true),
            S::zero(),
            &mut y.data,
            strides(self.fan_out, false),
        );
        let bias = p.get(self.bias);
        for row in y.data.chunks_exact_mut(self.fan_out) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        y
    }

    pub fn backward<S: Scalar>(&self, p: &ParamStore<S>, g: &mut ParamStore<S>, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        S::gemm(
            self.fan_out,
            x.n,
            self.fan_in,
            &dy.data,
            strides(self.fan_out, true),
            &x.data,
            strides(self.fan_in, false),
            S::one(),
            g.get_mut(self.weight),
            strides(self.fan_in, false),
        );
        let db = g.get_mut(self.bias);
        for row in dy.data.chunks_exact(self.fan_out) {
            for (a, &d) in db.iter_mut().zip(row) {
                *a += d;
            }
        }
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        S::gemm(
            x.n,
            self.fan_out,
            self.fan_in,
            &dy.data,
            strides(self.fan_out, false),
            p.get(self.weight),
            strides(self.fan_in, false),
            S::zero(),
            &mut dx.data,
            strides(self.fan_in, false),
        );
        dx
    }
}

/// Lookup table of `rows` vectors of width `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.push(name.to_string(), vec![rows, dim], uniform(rng, rows * dim, 1.0));
        Self { table, rows, dim }
    }

    pub fn row<'a, S: Scalar>(&self, p: &'a ParamStore<S>, id: usize) -> &'a [S] {
        &p.get(self.table)[id * self.dim..(id + 1) * self.dim]
    }

    pub fn backward<S: Scalar>(&self, g: &mut ParamStore<S>, ids: &[usize], dy: &Tensor<S>) {
        let table = g.get_mut(self.table);
        for (&id, row) in ids.iter().zip(dy.data.chunks_exact(self.dim)) {
            for (a, &d) in table[id * self.dim..(id + 1) * self.dim].iter_mut().zip(row) {
                *a += d;
            }
        }
    }
}

fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

/// `x · sigmoid(x)`.
pub fn silu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.with_data(x.data.iter().map(|&v| v * sigmoid(v)).collect())
}

pub fn silu_backward<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    x.with_data(
        x.data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &d)| {
                let s = sigmoid(v);
                d * s * (S::one() + v * (S::one() - s))
            })
            .collect(),
    )
}

pub fn avg_pool2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    assert!(x.h.is_multiple_of(2) && x.w.is_multiple_of(2), "pooling needs even sides");
    let (oh, ow) = (x.h / 2, x.w / 2);
    let quarter = S::of(0.25);
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * x.hw()..(plane + 1) * x.hw()];
        let dst = &mut y.data[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (2 * oy, 2 * ox);
                dst[oy * ow + ox] =
                    (src[y0 * x.w + x0] + src[y0 * x.w + x0 + 1] + src[(y0 + 1) * x.w + x0] + src[(y0 + 1) * x.w + x0 + 1])
                        * quarter;
            }
        }
    }
    y
}

pub fn avg_pool2_backward<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let quarter = S::of(0.25);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for plane in 0..dy.n * dy.c {
        let src = &dy.data[plane * dy.hw()..(plane + 1) * dy.hw()];
        let dst = &mut dx.data[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * dy.w + x / 2] * quarter;
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut y = Tensor::zeros(x.n, x.c, h, w);
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * x.hw()..(plane + 1) * x.hw()];
        let dst = &mut y.data[plane * h * w..(plane + 1) * h * w];
        for yy in 0..h {
            for xx in 0..w {
                dst[yy * w + xx] = src[(yy / 2) * x.w + xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let (oh, ow) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, oh, ow);
    for plane in 0..dy.n * dy.c {
        let src = &dy.data[plane * dy.hw()..(plane + 1) * dy.hw()];
        let dst = &mut dx.data[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..dy.h {
            for x in 0..dy.w {
                dst[(y / 2) * ow + x / 2] += src[y * dy.w + x];
            }
        }
    }
    dx
}

pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert!(a.n == b.n && a.h == b.h && a.w == b.w, "concat shapes");
    let mut out = Vec::with_capacity(a.data.len() + b.data.len());
    for i in 0..a.n {
        out.extend_from_slice(a.item(i));
        out.extend_from_slice(b.item(i));
    }
    Tensor::from_vec(a.n, a.c + b.c, a.h, a.w, out)
}

/// Inverse of [`concat_channels`]: the first `ca` channels, then the rest.
pub fn split_channels<S: Scalar>(x: &Tensor<S>, ca: usize) -> (Tensor<S>, Tensor<S>) {
    let hw = x.hw();
    let cb = x.c - ca;
    let mut a = Vec::with_capacity(x.n * ca * hw);
    let mut b = Vec::with_capacity(x.n * cb * hw);
    for i in 0..x.n {
        let item = x.item(i);
        a.extend_from_slice(&item[..ca * hw]);
        b.extend_from_slice(&item[ca * hw..]);
    }
    (Tensor::from_vec(x.n, ca, x.h, x.w, a), Tensor::from_vec(x.n, cb, x.h, x.w, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(1)
    }

    fn rand_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| r.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::register(&mut store, "c", 2, 3, 3, false, &mut rng());
        let x = rand_tensor(2, 2, 5, 4, 9);
        let y = conv.forward(&store, &x);
        let w = store.get(conv.weight);
        let b = store.get(conv.bias);
        for n in 0..2 {
            for co in 0..3 {
                for yy in 0..5 {
                    for xx in 0..4 {
                        let mut acc = b[co];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = yy as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if (0..5).contains(&sy) && (0..4).contains(&sx) {
                                        acc += w[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                            * x.data[((n * 2 + ci) * 5 + sy as usize) * 4 + sx as usize];
                                    }
                                }
                            }
                        }
                        let got = y.data[((n * 3 + co) * 5 + yy) * 4 + xx];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    /// Checks `backward` against central differences of `sum(out * probe)`.
    fn check_layer(
        x: &Tensor<f64>,
        forward: &dyn Fn(&Tensor<f64>) -> Tensor<f64>,
        backward: &dyn Fn(&Tensor<f64>) -> Tensor<f64>,
    ) {
        let probe = rand_tensor(1, 1, 1, forward(x).data.len(), 77);
        let objective = |x: &Tensor<f64>| -> f64 { forward(x).data.iter().zip(&probe.data).map(|(a, b)| a * b).sum() };
        let mut dy = forward(x);
        dy.data.copy_from_slice(&probe.data);
        let dx = backward(&dy);
        let h = 1e-5;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let num = (objective(&xp) - objective(&xm)) / (2.0 * h);
            assert!((num - dx.data[i]).abs() < 1e-7, "index {i}: {num} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let conv3 = Conv2d::register(&mut store, "c3", 2, 3, 3, false, &mut rng());
        let conv1 = Conv2d::register(&mut store, "c1", 2, 3, 1, false, &mut rng());
        let gn = GroupNorm::register(&mut store, "gn", 4, 2);
        let lin = Linear::register(&mut store, "lin", 6, 5, &mut rng());
        let x = rand_tensor(2, 2, 4, 6, 3);

        check_layer(&x, &|x| conv3.forward(&store, x), &|dy| {
            conv3.backward(&store, &mut store.zeros_like(), &x, dy, true).unwrap()
        });
        check_layer(&x, &|x| conv1.forward(&store, x), &|dy| {
            conv1.backward(&store, &mut store.zeros_like(), &x, dy, true).unwrap()
        });
        let x4 = rand_tensor(2, 4, 3, 2, 4);
        let (_, ctx) = gn.forward(&store, &x4, true);
        let ctx = ctx.unwrap();
        check_layer(&x4, &|x| gn.forward(&store, x, false).0, &|dy| {
            gn.backward(&store, &mut store.zeros_like(), &ctx, dy)
        });
        let xv = rand_tensor(3, 6, 1, 1, 5);
        check_layer(&xv, &|x| lin.forward(&store, x), &|dy| {
            lin.backward(&store, &mut store.zeros_like(), &xv, dy)
        });
        check_layer(&x, &silu, &|dy| silu_backward(&x, dy));
        check_layer(&x, &avg_pool2, &avg_pool2_backward);
        check_layer(&x, &upsample2, &upsample2_backward);
    }

    #[test]
    fn concat_split_inverse() {
        let a = rand_tensor(2, 3, 2, 2, 1);
        let b = rand_tensor(2, 1, 2, 2, 2);
        let (a2, b2) = split_channels(&concat_channels(&a, &b), 3);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
