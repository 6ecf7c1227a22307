//! U-Net layout with explicit forward and backward passes.

use rand::Rng;

use super::config::DenoiserConfig;
use crate::corpus::ConditionLabel;
use crate::nn::{
    avg_pool2, avg_pool2_backward, concat_channels, silu, silu_backward, split_channels, upsample2, upsample2_backward, Conv2d,
    Embedding, GroupNorm, GroupNormCtx, Linear, ParamStore, Scalar, Tensor,
};

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    emb_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

struct ResCtx<S> {
    x: Tensor<S>,
    n1: GroupNormCtx<S>,
    h0: Tensor<S>,
    a0: Tensor<S>,
    n2: GroupNormCtx<S>,
    h1: Tensor<S>,
    a1: Tensor<S>,
}

fn add_channel_bias<S: Scalar>(x: &mut Tensor<S>, bias: &Tensor<S>) {
    let hw = x.hw();
    for i in 0..x.n {
        let b = bias.item(i);
        for (c, plane) in x.item_mut(i).chunks_exact_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v += b[c]);
        }
    }
}

fn sum_spatial<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let hw = x.hw();
    let data = x
        .data
        .chunks_exact(hw)
        .map(|plane| plane.iter().fold(S::zero(), |a, &v| a + v))
        .collect();
    Tensor::from_vec(x.n, x.c, 1, 1, data)
}

impl ResBlock {
    fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        emb_dim: usize,
        groups: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: GroupNorm::register(store, &format!("{name}.norm1"), cin, groups),
            conv1: Conv2d::register(store, &format!("{name}.conv1"), cin, cout, 3, false, rng),
            emb_proj: Linear::register(store, &format!("{name}.emb_proj"), emb_dim, cout, rng),
            norm2: GroupNorm::register(store, &format!("{name}.norm2"), cout, groups),
            conv2: Conv2d::register(store, &format!("{name}.conv2"), cout, cout, 3, false, rng),
            skip: (cin != cout).then(|| Conv2d::register(store, &format!("{name}.skip"), cin, cout, 1, false, rng)),
        }
    }

    fn forward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        x: &Tensor<S>,
        emb_act: &Tensor<S>,
        keep: bool,
    ) -> (Tensor<S>, Option<ResCtx<S>>) {
        let (h0, n1) = self.norm1.forward(p, x, keep);
        let a0 = silu(&h0);
        let mut c1 = self.conv1.forward(p, &a0);
        add_channel_bias(&mut c1, &self.emb_proj.forward(p, emb_act));
        let (h1, n2) = self.norm2.forward(p, &c1, keep);
        let a1 = silu(&h1);
        let mut out = self.conv2.forward(p, &a1);
        match &self.skip {
            Some(skip) => out.add_assign(&skip.forward(p, x)),
            None => out.add_assign(x),
        }
        let ctx = keep.then(|| ResCtx {
            x: x.clone(),
            n1: n1.expect("kept"),
            h0,
            a0,
            n2: n2.expect("kept"),
            h1,
            a1,
        });
        (out, ctx)
    }

    fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        g: &mut ParamStore<S>,
        ctx: &ResCtx<S>,
        emb_act: &Tensor<S>,
        dout: &Tensor<S>,
        d_emb_act: &mut Tensor<S>,
    ) -> Tensor<S> {
        let da1 = self.conv2.backward(p, g, &ctx.a1, dout, true).expect("dx");
        let dh1 = silu_backward(&ctx.h1, &da1);
        let dc1 = self.norm2.backward(p, g, &ctx.n2, &dh1);
        d_emb_act.add_assign(&self.emb_proj.backward(p, g, emb_act, &sum_spatial(&dc1)));
        let da0 = self.conv1.backward(p, g, &ctx.a0, &dc1, true).expect("dx");
        let dh0 = silu_backward(&ctx.h0, &da0);
        let mut dx = self.norm1.backward(p, g, &ctx.n1, &dh0);
        match &self.skip {
            Some(skip) => dx.add_assign(&skip.backward(p, g, &ctx.x, dout, true).expect("dx")),
            None => dx.add_assign(dout),
        }
        dx
    }
}

/// Parameter-free description of the network; the weights live in a
/// [`ParamStore`] built alongside it.
#[derive(Debug, Clone)]
pub struct UNet {
    config: DenoiserConfig,
    conv_in: Conv2d,
    time1: Linear,
    time2: Linear,
    emb_character: Embedding,
    emb_script: Embedding,
    emb_style: Embedding,
    down: Vec<ResBlock>,
    mid: ResBlock,
    up: Vec<ResBlock>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

pub struct UNetCtx<S> {
    x: Tensor<S>,
    conds: Vec<ConditionLabel>,
    h_in: Tensor<S>,
    l1: Tensor<S>,
    a_l1: Tensor<S>,
    emb: Tensor<S>,
    emb_act: Tensor<S>,
    down: Vec<ResCtx<S>>,
    mid: ResCtx<S>,
    /// Indexed by level, like `UNet::up`.
    up: Vec<Option<ResCtx<S>>>,
    /// Channels of the non-skip half of each up block's input.
    up_h_channels: Vec<usize>,
    n_out: GroupNormCtx<S>,
    h_out: Tensor<S>,
    a_out: Tensor<S>,
}

/// Sinusoidal embedding of `t`: `[sin(t·f_0..), cos(t·f_0..)]` with
/// `f_i = 10000^(-i / (dim/2))`.
pub fn timestep_embedding<S: Scalar>(ts: &[usize], dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| t as f64 * f).collect();
        data.extend(args.iter().map(|a| S::of(a.sin())));
        data.extend(args.iter().map(|a| S::of(a.cos())));
    }
    Tensor::from_vec(ts.len(), dim, 1, 1, data)
}

impl UNet {
    /// Registers every parameter into `store`, drawing weights from `rng`.
    /// The output convolution starts at zero.
    pub fn build<S: Scalar, R: Rng + ?Sized>(config: &DenoiserConfig, store: &mut ParamStore<S>, rng: &mut R) -> Self {
        let c0 = config.base_channels;
        let d = config.time_embed_dim;
        let g = config.groups;
        let levels = config.levels();
        let conv_in = Conv2d::register(store, "conv_in", 1, c0, 3, false, rng);
        let time1 = Linear::register(store, "time.lin1", d, d, rng);
        let time2 = Linear::register(store, "time.lin2", d, d, rng);
        let emb_character = Embedding::register(store, "embed.character", config.n_characters, d, rng);
        let emb_script = Embedding::register(store, "embed.script", config.n_scripts, d, rng);
        let emb_style = Embedding::register(store, "embed.style", config.n_styles, d, rng);
        let mut down = Vec::with_capacity(levels);
        let mut prev = c0;
        for l in 0..levels {
            let ch = config.level_channels(l);
            down.push(ResBlock::register(store, &format!("down.{l}"), prev, ch, d, g, rng));
            prev = ch;
        }
        let deepest = config.level_channels(levels - 1);
        let mid = ResBlock::register(store, "mid", deepest, deepest, d, g, rng);
        let mut up: Vec<Option<ResBlock>> = (0..levels).map(|_| None).collect();
        let mut incoming = deepest;
        for l in (0..levels).rev() {
            let ch = config.level_channels(l);
            up[l] = Some(ResBlock::register(store, &format!("up.{l}"), incoming + ch, ch, d, g, rng));
            incoming = ch;
        }
        let norm_out = GroupNorm::register(store, "out.norm", config.level_channels(0), g);
        let conv_out = Conv2d::register(store, "out.conv", config.level_channels(0), 1, 3, true, rng);
        Self {
            config: config.clone(),
            conv_in,
            time1,
            time2,
            emb_character,
            emb_script,
            emb_style,
            down,
            mid,
            up: up.into_iter().map(|b| b.expect("every level registered")).collect(),
            norm_out,
            conv_out,
        }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// `e_char[c] + e_script[s] + e_style[y]`.
    pub fn condition_embedding<S: Scalar>(&self, p: &ParamStore<S>, cond: &ConditionLabel) -> Vec<S> {
        let a = self.emb_character.row(p, cond.character);
        let b = self.emb_script.row(p, cond.script);
        let c = self.emb_style.row(p, cond.style);
        a.iter().zip(b).zip(c).map(|((&a, &b), &c)| a + b + c).collect()
    }

    /// ε̂ for a batch `x` of shape `[n, 1, H, W]`, one timestep and condition
    /// per item. With `keep`, also returns what [`UNet::backward`] needs.
    pub fn forward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        x: &Tensor<S>,
        ts: &[usize],
        conds: &[ConditionLabel],
        keep: bool,
    ) -> (Tensor<S>, Option<UNetCtx<S>>) {
        assert_eq!(x.c, 1);
        assert!(ts.len() == x.n && conds.len() == x.n, "one timestep and condition per item");
        let d = self.config.time_embed_dim;
        let mut h_in = timestep_embedding::<S>(ts, d);
        for (i, cond) in conds.iter().enumerate() {
            for (v, e) in h_in.item_mut(i).iter_mut().zip(self.condition_embedding(p, cond)) {
                *v += e;
            }
        }
        let l1 = self.time1.forward(p, &h_in);
        let a_l1 = silu(&l1);
        let emb = self.time2.forward(p, &a_l1);
        let emb_act = silu(&emb);

        let levels = self.config.levels();
        let mut h = self.conv_in.forward(p, x);
        let mut skips = Vec::with_capacity(levels);
        let mut down_ctx = Vec::new();
        for (l, block) in self.down.iter().enumerate() {
            let (out, ctx) = block.forward(p, &h, &emb_act, keep);
            down_ctx.extend(ctx);
            h = if l + 1 < levels { avg_pool2(&out) } else { out.clone() };
            skips.push(out);
        }
        let (out, mid_ctx) = self.mid.forward(p, &h, &emb_act, keep);
        h = out;
        let mut up_ctx: Vec<Option<ResCtx<S>>> = (0..levels).map(|_| None).collect();
        let mut up_h_channels = vec![0; levels];
        for l in (0..levels).rev() {
            up_h_channels[l] = h.c;
            let cat = concat_channels(&h, &skips[l]);
            let (out, ctx) = self.up[l].forward(p, &cat, &emb_act, keep);
            up_ctx[l] = ctx;
            h = if l > 0 { upsample2(&out) } else { out };
        }
        let (h_out, n_out) = self.norm_out.forward(p, &h, keep);
        let a_out = silu(&h_out);
        let eps = self.conv_out.forward(p, &a_out);
        let ctx = keep.then(|| UNetCtx {
            x: x.clone(),
            conds: conds.to_vec(),
            h_in,
            l1,
            a_l1,
            emb,
            emb_act,
            down: down_ctx,
            mid: mid_ctx.expect("kept"),
            up: up_ctx,
            up_h_channels,
            n_out: n_out.expect("kept"),
            h_out,
            a_out,
        });
        (eps, ctx)
    }

    /// Accumulates `∂L/∂θ` into `g` given `dout = ∂L/∂ε̂`.
    pub fn backward<S: Scalar>(&self, p: &ParamStore<S>, g: &mut ParamStore<S>, ctx: &UNetCtx<S>, dout: &Tensor<S>) {
        let levels = self.config.levels();
        let da = self.conv_out.backward(p, g, &ctx.a_out, dout, true).expect("dx");
        let dh_out = silu_backward(&ctx.h_out, &da);
        let mut dh = self.norm_out.backward(p, g, &ctx.n_out, &dh_out);
        let mut d_emb_act = Tensor::zeros(ctx.emb_act.n, ctx.emb_act.c, 1, 1);

        let mut d_skips: Vec<Option<Tensor<S>>> = (0..levels).map(|_| None).collect();
        for l in 0..levels {
            if l > 0 {
                dh = upsample2_backward(&dh);
            }
            let up_ctx = ctx.up[l].as_ref().expect("kept");
            let dcat = self.up[l].backward(p, g, up_ctx, &ctx.emb_act, &dh, &mut d_emb_act);
            let (d_h, d_skip) = split_channels(&dcat, ctx.up_h_channels[l]);
            dh = d_h;
            d_skips[l] = Some(d_skip);
        }
        dh = self.mid.backward(p, g, &ctx.mid, &ctx.emb_act, &dh, &mut d_emb_act);
        for l in (0..levels).rev() {
            let mut d_level = if l + 1 < levels { avg_pool2_backward(&dh) } else { dh };
            d_level.add_assign(d_skips[l].as_ref().expect("set above"));
            dh = self.down[l].backward(p, g, &ctx.down[l], &ctx.emb_act, &d_level, &mut d_emb_act);
        }
        self.conv_in.backward(p, g, &ctx.x, &dh, false);

        let d_emb = silu_backward(&ctx.emb, &d_emb_act);
        let d_al1 = self.time2.backward(p, g, &ctx.a_l1, &d_emb);
        let d_l1 = silu_backward(&ctx.l1, &d_al1);
        let d_hin = self.time1.backward(p, g, &ctx.h_in, &d_l1);
        let chars: Vec<usize> = ctx.conds.iter().map(|c| c.character).collect();
        let scripts: Vec<usize> = ctx.conds.iter().map(|c| c.script).collect();
        let styles: Vec<usize> = ctx.conds.iter().map(|c| c.style).collect();
        self.emb_character.backward(g, &chars, &d_hin);
        self.emb_script.backward(g, &scripts, &d_hin);
        self.emb_style.backward(g, &styles, &d_hin);
    }
}
