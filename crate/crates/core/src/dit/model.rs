use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::ops::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, modulate, modulate_backward, silu,
    silu_grad, softmax,
};
use super::{
    patchify, positional_table, preconditioning, timestep_features, unpatchify, BlockIdx, DitConfig, LinearIdx,
    ParamLayout,
};
use crate::channel::{GeometryCondition, CONDITION_DIM};
use crate::diffusion::Denoiser;
use crate::math::sqrt;
use crate::rng::{standard_normal, stream_rng, INIT_STREAM};
use crate::{Error, Result};

/// Architecture: config, parameter directory and the fixed positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct DitModel {
    config: DitConfig,
    layout: ParamLayout,
    pos: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    mods: Vec<f64>,
    n1: Vec<f64>,
    rstd1: Vec<f64>,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    attn: Vec<f64>,
    x_mid: Vec<f64>,
    n2: Vec<f64>,
    rstd2: Vec<f64>,
    h2: Vec<f64>,
    f1: Vec<f64>,
    g1: Vec<f64>,
    m: Vec<f64>,
}

/// Intermediates recorded by [`DitModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    c_out: f64,
    patches: Vec<f64>,
    t_feat: Vec<f64>,
    t_pre: Vec<f64>,
    t_hid: Vec<f64>,
    cond: [f64; CONDITION_DIM],
    c_pre: Vec<f64>,
    c_hid: Vec<f64>,
    c: Vec<f64>,
    sc: Vec<f64>,
    blocks: Vec<BlockCache>,
    nf: Vec<f64>,
    rstd_f: Vec<f64>,
    mod_f: Vec<f64>,
    hf: Vec<f64>,
}

fn w<'a>(params: &'a [f64], l: &LinearIdx) -> (&'a [f64], &'a [f64]) {
    (&params[l.w.clone()], &params[l.b.clone()])
}

fn apply(params: &[f64], l: &LinearIdx, x: &[f64], n: usize) -> Vec<f64> {
    let (wm, b) = w(params, l);
    linear(x, n, wm, b, l.din, l.dout)
}

fn back(params: &[f64], grads: &mut [f64], l: &LinearIdx, x: &[f64], dy: &[f64], n: usize, want_dx: bool) -> Option<Vec<f64>> {
    // weights and bias are adjacent, weight first
    let (gw, gb) = grads[l.w.start..l.b.end].split_at_mut(l.w.len());
    linear_backward(x, dy, n, &params[l.w.clone()], l.din, l.dout, gw, gb, want_dx)
}

fn check(v: &[f64], layer: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("activations of layer `{layer}`")));
    }
    Ok(())
}

impl DitModel {
    pub fn new(config: DitConfig) -> Result<Self> {
        let layout = ParamLayout::new(&config)?;
        let pos = positional_table(config.grid(), config.embed_dim)?;
        Ok(DitModel { config, layout, pos })
    }

    pub fn config(&self) -> &DitConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn positional(&self) -> &[f64] {
        &self.pos
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    /// Fresh parameters: Xavier-uniform token-path weights, `N(0, 0.02^2)`
    /// embedding MLPs, zero biases, and zero adaLN maps and output head
    /// (adaLN-Zero), so every block starts as the identity.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, INIT_STREAM);
        let mut p = vec![0.0; self.layout.total_len()];
        let mut xavier = |l: &LinearIdx, p: &mut [f64]| {
            let bound = sqrt(6.0 / (l.din + l.dout) as f64);
            for v in &mut p[l.w.clone()] {
                *v = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        };
        let l = &self.layout;
        xavier(&l.patch, &mut p);
        for b in &l.blocks {
            for lin in [&b.qkv, &b.proj, &b.fc1, &b.fc2] {
                xavier(lin, &mut p);
            }
        }
        for lin in [&l.t_fc1, &l.t_fc2, &l.c_fc1, &l.c_fc2] {
            for v in &mut p[lin.w.clone()] {
                *v = 0.02 * standard_normal(&mut rng);
            }
        }
        p
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.total_len() {
            return Err(Error::dims("DiT parameter vector", self.layout.total_len(), params.len()));
        }
        Ok(())
    }

    fn mlp(&self, params: &[f64], fc1: &LinearIdx, fc2: &LinearIdx, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let pre = apply(params, fc1, x, 1);
        let hid: Vec<f64> = pre.iter().map(|v| silu(*v)).collect();
        let out = apply(params, fc2, &hid, 1);
        (pre, hid, out)
    }

    /// `e_t`: sinusoidal features of the noise level through a SiLU MLP.
    pub fn embed_timestep(&self, params: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("timestep embedding needs sigma > 0, got {sigma}")));
        }
        let f = timestep_features(sigma, self.config.embed_dim);
        Ok(self.mlp(params, &self.layout.t_fc1, &self.layout.t_fc2, &f).2)
    }

    /// `e_p`: the 8-d geometry condition through a SiLU MLP.
    pub fn embed_condition(&self, params: &[f64], condition: &GeometryCondition) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if !condition.is_finite() {
            return Err(Error::NonFinite("condition vector".into()));
        }
        Ok(self.mlp(params, &self.layout.c_fc1, &self.layout.c_fc2, condition.as_array()).2)
    }

    /// Multi-head self-attention on `n x D` tokens. Returns
    /// `(qkv, probs[h][i][j], concatenated head outputs, projected output)`.
    fn attention(&self, params: &[f64], b: &BlockIdx, x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.config.embed_dim;
        let hd = self.config.head_dim();
        let heads = self.config.n_heads;
        let scale = 1.0 / sqrt(hd as f64);
        let qkv = apply(params, &b.qkv, x, n);
        let mut probs = vec![0.0; heads * n * n];
        let mut o = vec![0.0; n * d];
        for h in 0..heads {
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            for i in 0..n {
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let q = &qkv[i * 3 * d + qo..i * 3 * d + qo + hd];
                for (j, s) in row.iter_mut().enumerate() {
                    let k = &qkv[j * 3 * d + ko..j * 3 * d + ko + hd];
                    *s = scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax(row);
                let out = &mut o[i * d + h * hd..i * d + (h + 1) * hd];
                for (j, &a) in row.iter().enumerate() {
                    let v = &qkv[j * 3 * d + vo..j * 3 * d + vo + hd];
                    for (oe, ve) in out.iter_mut().zip(v) {
                        *oe += a * ve;
                    }
                }
            }
        }
        let out = apply(params, &b.proj, &o, n);
        (qkv, probs, o, out)
    }

    /// Row-stochastic attention weights of block `block` for tokens `x`,
    /// laid out `[head][query][key]`.
    pub fn attention_weights(&self, params: &[f64], block: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let b = self.block_idx(block)?;
        let n = self.token_rows(x)?;
        Ok(self.attention(params, b, x, n).1)
    }

    fn block_idx(&self, block: usize) -> Result<&BlockIdx> {
        self.layout.blocks.get(block).ok_or(Error::IndexOutOfRange {
            what: "block",
            index: block,
            count: self.layout.blocks.len(),
        })
    }

    fn token_rows(&self, x: &[f64]) -> Result<usize> {
        let d = self.config.embed_dim;
        if x.is_empty() || x.len() % d != 0 {
            return Err(Error::dims("token matrix", format!("n x {d}"), x.len()));
        }
        Ok(x.len() / d)
    }

    fn block_forward(&self, params: &[f64], b: &BlockIdx, x: Vec<f64>, sc: &[f64], n: usize) -> BlockCache {
        let d = self.config.embed_dim;
        let mods = apply(params, &b.adaln, sc, 1);
        let m = |k: usize| &mods[k * d..(k + 1) * d];
        let (n1, rstd1) = layer_norm(&x, n, d);
        let h1 = modulate(&n1, m(0), m(1), d);
        let (qkv, probs, o, attn) = self.attention(params, b, &h1, n);
        let mut x_mid = x;
        for (row, arow) in x_mid.chunks_mut(d).zip(attn.chunks(d)) {
            for ((v, a), g) in row.iter_mut().zip(arow).zip(m(2)) {
                *v += g * a;
            }
        }
        let (n2, rstd2) = layer_norm(&x_mid, n, d);
        let h2 = modulate(&n2, m(3), m(4), d);
        let f1 = apply(params, &b.fc1, &h2, n);
        let g1: Vec<f64> = f1.iter().map(|v| gelu(*v)).collect();
        let mo = apply(params, &b.fc2, &g1, n);
        BlockCache {
            mods,
            n1,
            rstd1,
            h1,
            qkv,
            probs,
            o,
            attn,
            x_mid,
            n2,
            rstd2,
            h2,
            f1,
            g1,
            m: mo,
        }
    }

    fn block_output(&self, cache: &BlockCache) -> Vec<f64> {
        let d = self.config.embed_dim;
        let gate = &cache.mods[5 * d..6 * d];
        let mut x = cache.x_mid.clone();
        for (row, mrow) in x.chunks_mut(d).zip(cache.m.chunks(d)) {
            for ((v, mv), g) in row.iter_mut().zip(mrow).zip(gate) {
                *v += g * mv;
            }
        }
        x
    }

    /// One adaLN-Zero transformer block on tokens `x` (`n x D`) with
    /// conditioning vector `c` (before the SiLU).
    pub fn apply_block(&self, params: &[f64], block: usize, x: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let b = self.block_idx(block)?;
        let n = self.token_rows(x)?;
        if c.len() != self.config.embed_dim {
            return Err(Error::dims("conditioning vector", self.config.embed_dim, c.len()));
        }
        let sc: Vec<f64> = c.iter().map(|v| silu(*v)).collect();
        let cache = self.block_forward(params, b, x.to_vec(), &sc, n);
        Ok(self.block_output(&cache))
    }

    /// Preconditioned denoiser output `D(H, sigma, p)` and the cache for
    /// [`DitModel::backward`].
    pub fn forward(
        &self,
        params: &[f64],
        noisy: &[f64],
        sigma: f64,
        condition: &GeometryCondition,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_params(params)?;
        let cfg = &self.config;
        if noisy.len() != cfg.tensor_len() {
            return Err(Error::dims("DiT input tensor", cfg.tensor_len(), noisy.len()));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("DiT needs finite sigma > 0, got {sigma}")));
        }
        if !condition.is_finite() {
            return Err(Error::NonFinite("condition vector".into()));
        }
        let (n, d) = (cfg.n_tokens(), cfg.embed_dim);
        let (c_skip, c_out, c_in) = preconditioning(sigma);
        let scaled: Vec<f64> = noisy.iter().map(|v| c_in * v).collect();
        let patches = patchify(&scaled, cfg)?;
        let mut x = apply(params, &self.layout.patch, &patches, n);
        for (v, p) in x.iter_mut().zip(&self.pos) {
            *v += p;
        }
        check(&x, "patch_embed")?;

        let t_feat = timestep_features(sigma, d);
        let (t_pre, t_hid, e_t) = self.mlp(params, &self.layout.t_fc1, &self.layout.t_fc2, &t_feat);
        check(&e_t, "t_embed")?;
        let cond = *condition.as_array();
        let (c_pre, c_hid, e_p) = self.mlp(params, &self.layout.c_fc1, &self.layout.c_fc2, &cond);
        check(&e_p, "c_embed")?;
        let c: Vec<f64> = e_t.iter().zip(&e_p).map(|(a, b)| a + b).collect();
        let sc: Vec<f64> = c.iter().map(|v| silu(*v)).collect();

        let mut blocks = Vec::with_capacity(cfg.depth);
        for (i, b) in self.layout.blocks.iter().enumerate() {
            let cache = self.block_forward(params, b, x, &sc, n);
            x = self.block_output(&cache);
            check(&x, &format!("blocks.{i}"))?;
            blocks.push(cache);
        }

        let mod_f = apply(params, &self.layout.final_adaln, &sc, 1);
        let (nf, rstd_f) = layer_norm(&x, n, d);
        let hf = modulate(&nf, &mod_f[..d], &mod_f[d..], d);
        let f = apply(params, &self.layout.head, &hf, n);
        check(&f, "final.linear")?;
        let f = unpatchify(&f, cfg)?;
        let out: Vec<f64> = noisy.iter().zip(&f).map(|(h, fv)| c_skip * h + c_out * fv).collect();
        check(&out, "output")?;
        Ok((
            out,
            ForwardCache {
                c_out,
                patches,
                t_feat,
                t_pre,
                t_hid,
                cond,
                c_pre,
                c_hid,
                c,
                sc,
                blocks,
                nf,
                rstd_f,
                mod_f,
                hf,
            },
        ))
    }

    /// Accumulates into `grads` the gradient of a scalar loss with respect
    /// to every trainable parameter, given `d_out = dL/dD` for the forward
    /// pass recorded in `cache`.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, d_out: &[f64], grads: &mut [f64]) -> Result<()> {
        self.check_params(params)?;
        let cfg = &self.config;
        if grads.len() != params.len() {
            return Err(Error::dims("gradient buffer", params.len(), grads.len()));
        }
        if d_out.len() != cfg.tensor_len() {
            return Err(Error::dims("output gradient", cfg.tensor_len(), d_out.len()));
        }
        if cache.blocks.len() != cfg.depth || cache.sc.len() != cfg.embed_dim {
            return Err(Error::invalid("forward cache does not belong to this model"));
        }
        let (n, d) = (cfg.n_tokens(), cfg.embed_dim);
        let l = &self.layout;

        let d_f: Vec<f64> = d_out.iter().map(|g| cache.c_out * g).collect();
        let d_head = patchify(&d_f, cfg)?;
        let mut dsc = vec![0.0; d];

        // final adaLN + head
        let dhf = back(params, grads, &l.head, &cache.hf, &d_head, n, true).expect("dx requested");
        let mut dmod_f = vec![0.0; 2 * d];
        let (dshift, dscale) = dmod_f.split_at_mut(d);
        let dnf = modulate_backward(&cache.nf, &dhf, &cache.mod_f[d..], d, dshift, dscale);
        add(&mut dsc, &back(params, grads, &l.final_adaln, &cache.sc, &dmod_f, 1, true).expect("dx requested"));
        let mut dx = layer_norm_backward(&cache.nf, &cache.rstd_f, &dnf, n, d);

        for (b, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
            dx = self.block_backward(params, grads, b, bc, dx, &cache.sc, &mut dsc, n);
        }

        // token embedding; the positional table is fixed and gets no gradient
        back(params, grads, &l.patch, &cache.patches, &dx, n, false);

        let dc: Vec<f64> = dsc.iter().zip(&cache.c).map(|(g, c)| g * silu_grad(*c)).collect();
        for (fc1, fc2, input, pre, hid) in [
            (&l.t_fc1, &l.t_fc2, &cache.t_feat[..], &cache.t_pre, &cache.t_hid),
            (&l.c_fc1, &l.c_fc2, &cache.cond[..], &cache.c_pre, &cache.c_hid),
        ] {
            let dhid = back(params, grads, fc2, hid, &dc, 1, true).expect("dx requested");
            let dpre: Vec<f64> = dhid.iter().zip(pre.iter()).map(|(g, p)| g * silu_grad(*p)).collect();
            back(params, grads, fc1, input, &dpre, 1, false);
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        b: &BlockIdx,
        bc: &BlockCache,
        dx_out: Vec<f64>,
        sc: &[f64],
        dsc: &mut [f64],
        n: usize,
    ) -> Vec<f64> {
        let d = self.config.embed_dim;
        let mut dmods = vec![0.0; 6 * d];
        let m = |k: usize| &bc.mods[k * d..(k + 1) * d];

        // x_out = x_mid + gate2 * mlp
        let mut dm = dx_out.clone();
        for (row, (mrow, dxrow)) in dm.chunks_mut(d).zip(bc.m.chunks(d).zip(dx_out.chunks(d))) {
            for j in 0..d {
                dmods[5 * d + j] += dxrow[j] * mrow[j];
                row[j] = dxrow[j] * m(5)[j];
            }
        }
        let dg1 = back(params, grads, &b.fc2, &bc.g1, &dm, n, true).expect("dx requested");
        let df1: Vec<f64> = dg1.iter().zip(&bc.f1).map(|(g, f)| g * gelu_grad(*f)).collect();
        let dh2 = back(params, grads, &b.fc1, &bc.h2, &df1, n, true).expect("dx requested");
        let (lo, hi) = dmods.split_at_mut(4 * d);
        let dn2 = modulate_backward(&bc.n2, &dh2, m(4), d, &mut lo[3 * d..], &mut hi[..d]);
        let mut dx_mid = dx_out;
        add(&mut dx_mid, &layer_norm_backward(&bc.n2, &bc.rstd2, &dn2, n, d));

        // x_mid = x_in + gate1 * attn
        let mut da = dx_mid.clone();
        for (row, (arow, dxrow)) in da.chunks_mut(d).zip(bc.attn.chunks(d).zip(dx_mid.chunks(d))) {
            for j in 0..d {
                dmods[2 * d + j] += dxrow[j] * arow[j];
                row[j] = dxrow[j] * m(2)[j];
            }
        }
        let dh1 = self.attention_backward(params, grads, b, bc, &da, n);
        let (lo, hi) = dmods.split_at_mut(d);
        let dn1 = modulate_backward(&bc.n1, &dh1, m(1), d, lo, &mut hi[..d]);
        let mut dx_in = dx_mid;
        add(&mut dx_in, &layer_norm_backward(&bc.n1, &bc.rstd1, &dn1, n, d));

        add(dsc, &back(params, grads, &b.adaln, sc, &dmods, 1, true).expect("dx requested"));
        dx_in
    }

    fn attention_backward(&self, params: &[f64], grads: &mut [f64], b: &BlockIdx, bc: &BlockCache, da: &[f64], n: usize) -> Vec<f64> {
        let d = self.config.embed_dim;
        let hd = self.config.head_dim();
        let scale = 1.0 / sqrt(hd as f64);
        let d_o = back(params, grads, &b.proj, &bc.o, da, n, true).expect("dx requested");
        let mut dqkv = vec![0.0; n * 3 * d];
        let mut dp = vec![0.0; n];
        for h in 0..self.config.n_heads {
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            for i in 0..n {
                let probs = &bc.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let doi = &d_o[i * d + h * hd..i * d + (h + 1) * hd];
                for j in 0..n {
                    let v = &bc.qkv[j * 3 * d + vo..j * 3 * d + vo + hd];
                    dp[j] = doi.iter().zip(v).map(|(a, b)| a * b).sum();
                    let dv = &mut dqkv[j * 3 * d + vo..j * 3 * d + vo + hd];
                    for (g, o) in dv.iter_mut().zip(doi) {
                        *g += probs[j] * o;
                    }
                }
                let dot: f64 = probs.iter().zip(&dp).map(|(p, g)| p * g).sum();
                for j in 0..n {
                    let ds = probs[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for e in 0..hd {
                        let kj = bc.qkv[j * 3 * d + ko + e];
                        let qi = bc.qkv[i * 3 * d + qo + e];
                        dqkv[i * 3 * d + qo + e] += ds * kj;
                        dqkv[j * 3 * d + ko + e] += ds * qi;
                    }
                }
            }
        }
        back(params, grads, &b.qkv, &bc.h1, &dqkv, n, true).expect("dx requested")
    }
}

fn add(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// A [`DitModel`] bound to a parameter vector (typically the EMA weights).
#[derive(Debug, Clone, Copy)]
pub struct DitDenoiser<'a> {
    pub model: &'a DitModel,
    pub params: &'a [f64],
}

impl Denoiser for DitDenoiser<'_> {
    fn tensor_len(&self) -> usize {
        self.model.config().tensor_len()
    }

    fn denoise(&self, noisy: &[f64], sigma: f64, condition: &GeometryCondition) -> Result<Vec<f64>> {
        Ok(self.model.forward(self.params, noisy, sigma, condition)?.0)
    }
}
