//! Conditional diffusion transformer denoiser.
//!
//! Pipeline: patchify the `2 x N_r x N_t` tensor into `P x P` patches, embed
//! linearly and add a fixed 2-D sin/cos table, run adaLN-Zero transformer
//! blocks conditioned on `c = e_t + e_p` (noise-level and geometry
//! embeddings), then a final adaLN + linear head and unpatchify. The network
//! output is wrapped in EDM-style preconditioning with `sigma_data = 1`.
//!
//! All trainable weights live in one flat `Vec<f64>` addressed through a
//! [`ParamLayout`], so optimizer moments, EMA shadows and gradients share the
//! same indexing and can be updated with plain slice loops.

mod model;
mod ops;
mod train;

pub use model::{DitDenoiser, DitModel, ForwardCache};
pub use train::{adam_step, evaluation_loss, train, AdamConfig, AdamState, EpochStats, TrainConfig, TrainState};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::channel::CONDITION_DIM;
use crate::{Error, Result};

/// Data standard deviation assumed by the preconditioning (unit-RMS data).
pub const SIGMA_DATA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DitConfig {
    pub n_rx: usize,
    pub n_tx: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
}

impl DitConfig {
    /// Desk-scale defaults for an `n_rx x n_tx` channel.
    pub fn toy(n_rx: usize, n_tx: usize) -> Self {
        DitConfig {
            n_rx,
            n_tx,
            patch_size: 4,
            embed_dim: 64,
            depth: 4,
            n_heads: 4,
            mlp_ratio: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 {
            return Err(Error::config("patch_size", "must be at least 1"));
        }
        if self.n_rx == 0 || self.n_rx % p != 0 {
            return Err(Error::config("n_rx", format!("{} is not a positive multiple of patch size {p}", self.n_rx)));
        }
        if self.n_tx == 0 || self.n_tx % p != 0 {
            return Err(Error::config("n_tx", format!("{} is not a positive multiple of patch size {p}", self.n_tx)));
        }
        if self.embed_dim == 0 || self.embed_dim % 4 != 0 {
            return Err(Error::config("embed_dim", format!("{} must be a positive multiple of 4", self.embed_dim)));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(Error::config(
                "n_heads",
                format!("{} heads do not divide embed_dim {}", self.n_heads, self.embed_dim),
            ));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("mlp_ratio", "must be at least 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.n_rx / self.patch_size, self.n_tx / self.patch_size)
    }

    pub fn n_tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn patch_dim(&self) -> usize {
        2 * self.patch_size * self.patch_size
    }

    pub fn tensor_len(&self) -> usize {
        2 * self.n_rx * self.n_tx
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }
}

/// Location of one named tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LinearIdx {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub din: usize,
    pub dout: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockIdx {
    pub adaln: LinearIdx,
    pub qkv: LinearIdx,
    pub proj: LinearIdx,
    pub fc1: LinearIdx,
    pub fc2: LinearIdx,
}

/// Named tensor directory plus typed indices for the forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    specs: Vec<TensorSpec>,
    total: usize,
    pub(crate) patch: LinearIdx,
    pub(crate) t_fc1: LinearIdx,
    pub(crate) t_fc2: LinearIdx,
    pub(crate) c_fc1: LinearIdx,
    pub(crate) c_fc2: LinearIdx,
    pub(crate) blocks: Vec<BlockIdx>,
    pub(crate) final_adaln: LinearIdx,
    pub(crate) head: LinearIdx,
}

struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl LayoutBuilder {
    fn tensor(&mut self, name: String, shape: Vec<usize>) -> Range<usize> {
        let spec = TensorSpec {
            name,
            shape,
            offset: self.total,
        };
        let r = spec.range();
        self.total = r.end;
        self.specs.push(spec);
        r
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> LinearIdx {
        LinearIdx {
            w: self.tensor(format!("{name}.weight"), vec![din, dout]),
            b: self.tensor(format!("{name}.bias"), vec![dout]),
            din,
            dout,
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &DitConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let mut b = LayoutBuilder {
            specs: Vec::new(),
            total: 0,
        };
        let patch = b.linear("patch_embed", cfg.patch_dim(), d);
        let t_fc1 = b.linear("t_embed.fc1", d, d);
        let t_fc2 = b.linear("t_embed.fc2", d, d);
        let c_fc1 = b.linear("c_embed.fc1", CONDITION_DIM, d);
        let c_fc2 = b.linear("c_embed.fc2", d, d);
        let blocks = (0..cfg.depth)
            .map(|i| BlockIdx {
                adaln: b.linear(&format!("blocks.{i}.adaln"), d, 6 * d),
                qkv: b.linear(&format!("blocks.{i}.attn.qkv"), d, 3 * d),
                proj: b.linear(&format!("blocks.{i}.attn.proj"), d, d),
                fc1: b.linear(&format!("blocks.{i}.mlp.fc1"), d, cfg.hidden_dim()),
                fc2: b.linear(&format!("blocks.{i}.mlp.fc2"), cfg.hidden_dim(), d),
            })
            .collect();
        let final_adaln = b.linear("final.adaln", d, 2 * d);
        let head = b.linear("final.linear", d, cfg.patch_dim());
        Ok(ParamLayout {
            specs: b.specs,
            total: b.total,
            patch,
            t_fc1,
            t_fc2,
            c_fc1,
            c_fc2,
            blocks,
            final_adaln,
            head,
        })
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

/// `N x 2P^2` patch matrix, patches in row-major grid order, each flattened
/// as (channel, row, col).
pub fn patchify(tensor: &[f64], cfg: &DitConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if tensor.len() != cfg.tensor_len() {
        return Err(Error::dims("patchify input", cfg.tensor_len(), tensor.len()));
    }
    let (p, nt) = (cfg.patch_size, cfg.n_tx);
    let plane = cfg.n_rx * nt;
    let (_, gw) = cfg.grid();
    let mut out = Vec::with_capacity(tensor.len());
    for tok in 0..cfg.n_tokens() {
        let (r0, c0) = ((tok / gw) * p, (tok % gw) * p);
        for ch in 0..2 {
            for r in 0..p {
                let start = ch * plane + (r0 + r) * nt + c0;
                out.extend_from_slice(&tensor[start..start + p]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &[f64], cfg: &DitConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if patches.len() != cfg.tensor_len() {
        return Err(Error::dims("unpatchify input", cfg.tensor_len(), patches.len()));
    }
    let (p, nt) = (cfg.patch_size, cfg.n_tx);
    let plane = cfg.n_rx * nt;
    let (_, gw) = cfg.grid();
    let mut out = vec![0.0; patches.len()];
    let mut src = patches.chunks(p);
    for tok in 0..cfg.n_tokens() {
        let (r0, c0) = ((tok / gw) * p, (tok % gw) * p);
        for ch in 0..2 {
            for r in 0..p {
                let start = ch * plane + (r0 + r) * nt + c0;
                out[start..start + p].copy_from_slice(src.next().expect("length checked"));
            }
        }
    }
    Ok(out)
}

/// Fixed 2-D sin/cos table, `N x D`: the first `D/2` features encode the
/// grid row, the rest the grid column, each as `[sin(w_k pos), cos(w_k pos)]`
/// with `w_k = 10000^(-k / (D/4))`.
pub fn positional_table(grid: (usize, usize), embed_dim: usize) -> Result<Vec<f64>> {
    if embed_dim == 0 || embed_dim % 4 != 0 {
        return Err(Error::config("embed_dim", format!("{embed_dim} must be a positive multiple of 4")));
    }
    let (gh, gw) = grid;
    let quarter = embed_dim / 4;
    let mut table = Vec::with_capacity(gh * gw * embed_dim);
    for r in 0..gh {
        for c in 0..gw {
            for pos in [r as f64, c as f64] {
                let freqs = (0..quarter).map(|k| libm::pow(10_000.0, -(k as f64) / quarter as f64));
                let args: Vec<f64> = freqs.map(|w| w * pos).collect();
                table.extend(args.iter().map(|a| libm::sin(*a)));
                table.extend(args.iter().map(|a| libm::cos(*a)));
            }
        }
    }
    Ok(table)
}

/// Noise-level feature fed to the timestep embedding, `ln(sigma) / 4`
/// rescaled by 1000 so that the sinusoid bank resolves it like a discrete
/// diffusion timestep.
pub fn noise_conditioning(sigma: f64) -> f64 {
    1000.0 * libm::log(sigma) / 4.0
}

/// `[cos(a w_k), sin(a w_k)]`, `w_k = 10000^(-k / (dim/2))`.
pub fn timestep_features(sigma: f64, dim: usize) -> Vec<f64> {
    let a = noise_conditioning(sigma);
    let half = dim / 2;
    let args: Vec<f64> = (0..half)
        .map(|k| a * libm::exp(-libm::log(10_000.0) * k as f64 / half as f64))
        .collect();
    let mut f: Vec<f64> = args.iter().map(|x| libm::cos(*x)).collect();
    f.extend(args.iter().map(|x| libm::sin(*x)));
    f.resize(dim, 0.0);
    f
}

/// Preconditioning coefficients `(c_skip, c_out, c_in)`.
pub fn preconditioning(sigma: f64) -> (f64, f64, f64) {
    let sd2 = SIGMA_DATA * SIGMA_DATA;
    let v = sigma * sigma + sd2;
    (sd2 / v, sigma * SIGMA_DATA / libm::sqrt(v), 1.0 / libm::sqrt(v))
}
