//! The full network: stem convolution and local temporal aggregation, a
//! stack of MGE blocks (the last one height-concatenating), temporal max
//! pooling, GeM pooling over width, per-strip fully connected embeddings,
//! and a batch-normalized per-strip classifier head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::ffe::{self, he_uniform, FfeParams, FfeVars, Fusion, MgeOptions};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    /// Stem width followed by the output width of every MGE block.
    pub stage_channels: Vec<usize>,
    pub num_mge_blocks: usize,
    /// Fusion mode per block; all `A` except the last, which is `B`.
    pub variants: Vec<Fusion>,
    pub clip_len: usize,
    pub num_parts: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub lta_kernel_t: usize,
    pub lta_stride_t: usize,
    pub gem_p_init: f64,
    pub gem_eps: f64,
    /// 2x2 spatial max pool right after the stem convolution.
    pub stem_pool: bool,
    /// 2x2 spatial max pool after the first MGE block.
    pub mge_pool: bool,
    pub use_mem: bool,
    pub use_ffe_local: bool,
    /// Negative slope of the leaky ReLU after stem, LTA and each MGE block.
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl NetworkConfig {
    /// Small widths and an early spatial pool, sized for single-core CPU runs.
    pub fn desk() -> Self {
        NetworkConfig {
            frame_height: 64,
            frame_width: 44,
            stage_channels: vec![4, 8, 16],
            num_mge_blocks: 2,
            variants: vec![Fusion::Add, Fusion::ConcatH],
            clip_len: 2,
            num_parts: 8,
            embed_dim: 32,
            num_classes: 8,
            lta_kernel_t: 3,
            lta_stride_t: 3,
            gem_p_init: 6.5,
            gem_eps: 1e-6,
            stem_pool: true,
            mge_pool: true,
            use_mem: true,
            use_ffe_local: true,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn full() -> Self {
        NetworkConfig {
            stage_channels: vec![32, 64, 128],
            embed_dim: 128,
            num_classes: 74,
            stem_pool: false,
            ..Self::desk()
        }
    }

    pub fn mge_options(&self) -> MgeOptions {
        MgeOptions {
            clip_len: self.clip_len,
            mem: self.use_mem,
            ffe_local: self.use_ffe_local,
        }
    }

    /// Checks every structural invariant and returns the resolved layout.
    pub fn layout(&self) -> Result<Layout> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.num_mge_blocks == 0 {
            return cfg("net.num_mge_blocks must be at least 1".into());
        }
        if self.stage_channels.len() != self.num_mge_blocks + 1 {
            return cfg(format!(
                "net.stage_channels needs {} entries (stem + one per MGE block), got {}",
                self.num_mge_blocks + 1,
                self.stage_channels.len()
            ));
        }
        if self.stage_channels.contains(&0) {
            return cfg("net.stage_channels entries must be positive".into());
        }
        if self.variants.len() != self.num_mge_blocks {
            return cfg(format!(
                "mge.variant lists {} blocks, net.num_mge_blocks is {}",
                self.variants.len(),
                self.num_mge_blocks
            ));
        }
        for (i, v) in self.variants.iter().enumerate() {
            let want = if i + 1 == self.num_mge_blocks {
                Fusion::ConcatH
            } else {
                Fusion::Add
            };
            if *v != want {
                return cfg(format!("MGE block {i} must be variant {want}, got {v}"));
            }
        }
        if self.clip_len == 0 {
            return cfg("mem.clip_len must be at least 1".into());
        }
        if self.num_parts == 0 || self.embed_dim == 0 || self.num_classes == 0 {
            return cfg("ffe.num_parts, net.embed_dim and net.num_classes must be positive".into());
        }
        if self.lta_kernel_t == 0 || self.lta_stride_t == 0 {
            return cfg("lta.kernel_t and lta.stride_t must be positive".into());
        }
        if !(self.gem_p_init > 0.0) {
            return cfg(format!("gem.p_init must be positive, got {}", self.gem_p_init));
        }

        let mut h = self.frame_height;
        let mut w = self.frame_width;
        if self.stem_pool {
            h /= 2;
            w /= 2;
        }
        let mut block_heights = Vec::with_capacity(self.num_mge_blocks);
        for i in 0..self.num_mge_blocks {
            if h == 0 || w == 0 {
                return cfg("feature map vanished before the last MGE block".into());
            }
            if h % self.num_parts != 0 {
                return cfg(format!(
                    "ffe.num_parts = {} does not divide height {h} at MGE block {i}",
                    self.num_parts
                ));
            }
            block_heights.push(h);
            if i == 0 && self.mge_pool && self.num_mge_blocks > 1 {
                h /= 2;
                w /= 2;
            }
        }
        let num_strips = 2 * h;
        Ok(Layout {
            block_heights,
            num_strips,
            final_width: w,
            final_channels: *self.stage_channels.last().unwrap(),
        })
    }
}

/// Extents derived from a [`NetworkConfig`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    /// Feature height at the input of every MGE block.
    pub block_heights: Vec<usize>,
    /// Height after the final concatenating block; one embedding per row.
    pub num_strips: usize,
    pub final_width: usize,
    pub final_channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-sample part descriptors, `(num_strips, embed_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartEmbeddings<T> {
    pub parts: Tensor<T>,
    /// True for the embeddings that feed the metric loss and retrieval.
    pub pre_bn: bool,
}

impl<T: Real> PartEmbeddings<T> {
    pub fn num_strips(&self) -> usize {
        self.parts.shape()[0]
    }

    /// Concatenation of all strip embeddings; the retrieval descriptor.
    pub fn descriptor(&self) -> Vec<T> {
        self.parts.data().to_vec()
    }
}

pub struct NetworkVars {
    pub stem: (Var, Var),
    pub lta: (Var, Var),
    pub blocks: Vec<FfeVars>,
    pub gem_p: Var,
    pub fc: Var,
    pub bn_gamma: Var,
    pub bn_beta: Var,
    pub classifier: Var,
    /// Every handle, in [`Network::named`] order.
    pub all: Vec<Var>,
}

pub struct ForwardOutput<T> {
    /// Pre-BN embeddings, `(batch, strips, d)`.
    pub embeddings: Var,
    /// Classifier logits, `(batch, strips, classes)`.
    pub logits: Var,
    /// Batch mean and biased variance of the BN input (training mode only).
    pub bn_stats: Option<(Vec<T>, Vec<T>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub layout: Layout,
    pub stem_kernel: Tensor<T>,
    pub stem_bias: Tensor<T>,
    pub lta_kernel: Tensor<T>,
    pub lta_bias: Tensor<T>,
    pub blocks: Vec<FfeParams<T>>,
    /// Learnable GeM exponent, shape `[1]`.
    pub gem_p: Tensor<T>,
    /// Per-strip embedding weights, `(strips, c_final, d)`.
    pub fc: Tensor<T>,
    pub bn_gamma: Tensor<T>,
    pub bn_beta: Tensor<T>,
    /// Per-strip classifier weights, `(strips, d, classes)`.
    pub classifier: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Real> Network<T> {
    /// Deterministic initialization from `seed`.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let layout = config.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = &config.stage_channels;
        let c1 = ch[0];
        let stem_kernel = he_uniform(&[c1, 1, 3, 3, 3], 27, &mut rng);
        let lta_kernel = he_uniform(&[c1, c1, config.lta_kernel_t, 1, 1], c1 * config.lta_kernel_t, &mut rng);
        let mut blocks = Vec::with_capacity(config.num_mge_blocks);
        for i in 0..config.num_mge_blocks {
            blocks.push(FfeParams::init(
                ch[i],
                ch[i + 1],
                config.num_parts,
                config.variants[i],
                config.use_ffe_local,
                &mut rng,
            )?);
        }
        let s = layout.num_strips;
        let (c, d, k) = (layout.final_channels, config.embed_dim, config.num_classes);
        let fc = he_uniform(&[s, c, d], c, &mut rng);
        let classifier = he_uniform(&[s, d, k], d, &mut rng);
        Ok(Network {
            config: config.clone(),
            layout,
            stem_kernel,
            stem_bias: Tensor::zeros(&[c1]),
            lta_kernel,
            lta_bias: Tensor::zeros(&[c1]),
            blocks,
            gem_p: Tensor::full(&[1], T::from_f64(config.gem_p_init)),
            fc,
            bn_gamma: Tensor::ones(&[s * d]),
            bn_beta: Tensor::zeros(&[s * d]),
            classifier,
            running_mean: Tensor::zeros(&[s * d]),
            running_var: Tensor::ones(&[s * d]),
        })
    }

    /// Trainable tensors in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("stem.kernel".to_string(), &self.stem_kernel),
            ("stem.bias".to_string(), &self.stem_bias),
            ("lta.kernel".to_string(), &self.lta_kernel),
            ("lta.bias".to_string(), &self.lta_bias),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("mge{i}")));
        }
        out.push(("gem.p".into(), &self.gem_p));
        out.push(("fc.weight".into(), &self.fc));
        out.push(("bn.gamma".into(), &self.bn_gamma));
        out.push(("bn.beta".into(), &self.bn_beta));
        out.push(("classifier.weight".into(), &self.classifier));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("stem.kernel".to_string(), &mut self.stem_kernel),
            ("stem.bias".to_string(), &mut self.stem_bias),
            ("lta.kernel".to_string(), &mut self.lta_kernel),
            ("lta.bias".to_string(), &mut self.lta_bias),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.named_mut(&format!("mge{i}")));
        }
        out.push(("gem.p".into(), &mut self.gem_p));
        out.push(("fc.weight".into(), &mut self.fc));
        out.push(("bn.gamma".into(), &mut self.bn_gamma));
        out.push(("bn.beta".into(), &mut self.bn_beta));
        out.push(("classifier.weight".into(), &mut self.classifier));
        out
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("bn.running_mean".into(), &self.running_mean),
            ("bn.running_var".into(), &self.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("bn.running_mean".into(), &mut self.running_mean),
            ("bn.running_var".into(), &mut self.running_var),
        ]
    }

    /// Appends every parameter and buffer as an `f32` blob.
    pub fn store_checkpoint(&self, ckpt: &mut Checkpoint) {
        for (name, t) in self.named().into_iter().chain(self.buffers()) {
            ckpt.insert(name, t.cast());
        }
    }

    /// Overwrites parameters and buffers with the blobs of the same name.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (name, slot) in self.named_mut() {
            load_slot(ckpt, &name, slot)?;
        }
        for (name, slot) in self.buffers_mut() {
            load_slot(ckpt, &name, slot)?;
        }
        Ok(())
    }

    /// Builds a network for `config` from checkpointed weights.
    pub fn from_checkpoint(config: &NetworkConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut net = Self::init(config, 0)?;
        net.load_checkpoint(ckpt)?;
        Ok(net)
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> NetworkVars {
        let stem = (g.parameter(self.stem_kernel.clone()), g.parameter(self.stem_bias.clone()));
        let lta = (g.parameter(self.lta_kernel.clone()), g.parameter(self.lta_bias.clone()));
        let blocks: Vec<FfeVars> = self.blocks.iter().map(|b| b.bind(g)).collect();
        let gem_p = g.parameter(self.gem_p.clone());
        let fc = g.parameter(self.fc.clone());
        let bn_gamma = g.parameter(self.bn_gamma.clone());
        let bn_beta = g.parameter(self.bn_beta.clone());
        let classifier = g.parameter(self.classifier.clone());
        let mut all = vec![stem.0, stem.1, lta.0, lta.1];
        for b in &blocks {
            all.extend(b.all());
        }
        all.extend([gem_p, fc, bn_gamma, bn_beta, classifier]);
        NetworkVars {
            stem,
            lta,
            blocks,
            gem_p,
            fc,
            bn_gamma,
            bn_beta,
            classifier,
            all,
        }
    }

    /// Rebuilds the handle structure from a flat list in [`Network::named`]
    /// order, e.g. leaves created by a caller.
    pub fn vars_from(&self, all: &[Var]) -> Result<NetworkVars> {
        let want = self.named().len();
        if all.len() != want {
            return Err(Error::Contract(format!("expected {want} parameter handles, got {}", all.len())));
        }
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("length checked");
        let stem = (next(), next());
        let lta = (next(), next());
        let blocks = self
            .blocks
            .iter()
            .map(|b| FfeVars {
                global: (next(), next()),
                parts: (0..b.part_kernels.len()).map(|_| (next(), next())).collect(),
                fusion: b.fusion,
            })
            .collect();
        Ok(NetworkVars {
            stem,
            lta,
            blocks,
            gem_p: next(),
            fc: next(),
            bn_gamma: next(),
            bn_beta: next(),
            classifier: next(),
            all: all.to_vec(),
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        match *x.shape() {
            [1, s, h, w] if h == c.frame_height && w == c.frame_width => {
                if s < c.lta_kernel_t {
                    Err(Error::SequenceTooShort {
                        len: s,
                        need: c.lta_kernel_t,
                    })
                } else {
                    Ok(())
                }
            }
            _ => Err(Error::Ingestion(format!(
                "expected a (1, s, {}, {}) silhouette sequence, got {:?}",
                c.frame_height,
                c.frame_width,
                x.shape()
            ))),
        }
    }

    fn activate(&self, g: &mut Graph<T>, x: Var) -> Var {
        if self.config.leaky_slope == 1.0 {
            x
        } else {
            g.leaky_relu(x, T::from_f64(self.config.leaky_slope))
        }
    }

    /// One sequence through convolutions and pooling: `(c_final, strips)`.
    fn trunk(&self, g: &mut Graph<T>, vars: &NetworkVars, x: Var) -> Result<Var> {
        let c = &self.config;
        let mut h = g.conv3d(x, vars.stem.0, Some(vars.stem.1), [1; 3], [1; 3])?;
        h = self.activate(g, h);
        if c.stem_pool {
            h = g.max_pool_hw(h, 2)?;
        }
        h = g.conv3d(h, vars.lta.0, Some(vars.lta.1), [c.lta_stride_t, 1, 1], [0; 3])?;
        h = self.activate(g, h);
        let opts = c.mge_options();
        for (i, block) in vars.blocks.iter().enumerate() {
            h = ffe::mge_forward(g, h, opts, block)?;
            h = self.activate(g, h);
            if i == 0 && c.mge_pool && vars.blocks.len() > 1 {
                h = g.max_pool_hw(h, 2)?;
            }
        }
        let pooled = g.max(h, 1)?;
        g.gem_pool(pooled, vars.gem_p, T::from_f64(c.gem_eps))
    }

    /// Runs a batch of `(1, s, H, W)` sequences. Sequence lengths may differ.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &NetworkVars,
        batch: &[Tensor<T>],
        mode: Mode,
    ) -> Result<ForwardOutput<T>> {
        if batch.is_empty() {
            return Err(Error::Contract("forward needs a non-empty batch".into()));
        }
        let mut rows = Vec::with_capacity(batch.len());
        for seq in batch {
            self.check_input(seq)?;
            let x = g.constant(seq.clone());
            let feat = self.trunk(g, vars, x)?;
            rows.push(g.permute(feat, &[1, 0])?);
        }
        let n = batch.len();
        let s = self.layout.num_strips;
        let d = self.config.embed_dim;
        let stacked = g.stack(&rows)?;
        let embeddings = g.strip_matmul(stacked, vars.fc)?;
        let flat = g.reshape(embeddings, &[n, s * d])?;
        let (normed, bn_stats) = g.batchnorm(
            flat,
            vars.bn_gamma,
            vars.bn_beta,
            self.running_mean.data(),
            self.running_var.data(),
            T::from_f64(self.config.bn_eps),
            mode == Mode::Train,
        )?;
        let normed = g.reshape(normed, &[n, s, d])?;
        let logits = g.strip_matmul(normed, vars.classifier)?;
        Ok(ForwardOutput {
            embeddings,
            logits,
            bn_stats,
        })
    }

    /// Exponential moving update of the running statistics from one
    /// training batch of `n` samples (variance stored unbiased).
    pub fn update_running_stats(&mut self, mean: &[T], var: &[T], n: usize) {
        let m = T::from_f64(self.config.bn_momentum);
        let correction = if n > 1 {
            T::from_f64(n as f64 / (n as f64 - 1.0))
        } else {
            T::one()
        };
        let rm: Vec<T> = self
            .running_mean
            .data()
            .iter()
            .zip(mean)
            .map(|(&r, &b)| (T::one() - m) * r + m * b)
            .collect();
        let rv: Vec<T> = self
            .running_var
            .data()
            .iter()
            .zip(var)
            .map(|(&r, &b)| (T::one() - m) * r + m * b * correction)
            .collect();
        self.running_mean = Tensor::new(self.running_mean.shape(), rm).expect("shape");
        self.running_var = Tensor::new(self.running_var.shape(), rv).expect("shape");
    }

    /// Eval-mode embeddings of one sequence of any admissible length.
    pub fn embed(&self, seq: &Tensor<T>) -> Result<PartEmbeddings<T>> {
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        let out = self.forward(&mut g, &vars, std::slice::from_ref(seq), Mode::Eval)?;
        let e = g.value(out.embeddings);
        let (s, d) = (e.shape()[1], e.shape()[2]);
        Ok(PartEmbeddings {
            parts: e.reshape(&[s, d])?,
            pre_bn: true,
        })
    }

    /// Eval-mode logits for a batch, `(batch, strips, classes)`.
    pub fn eval_logits(&self, batch: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        let out = self.forward(&mut g, &vars, batch, Mode::Eval)?;
        Ok(g.value(out.logits).clone())
    }

    /// Binds parameters as constants: inference records no gradient state.
    fn bind_frozen(&self, g: &mut Graph<T>) -> NetworkVars {
        let mut c = |t: &Tensor<T>| g.constant(t.clone());
        let stem = (c(&self.stem_kernel), c(&self.stem_bias));
        let lta = (c(&self.lta_kernel), c(&self.lta_bias));
        let blocks: Vec<FfeVars> = self
            .blocks
            .iter()
            .map(|b| FfeVars {
                global: (c(&b.global_kernel), c(&b.global_bias)),
                parts: b
                    .part_kernels
                    .iter()
                    .zip(&b.part_biases)
                    .map(|(w, bb)| (c(w), c(bb)))
                    .collect(),
                fusion: b.fusion,
            })
            .collect();
        let gem_p = c(&self.gem_p);
        let fc = c(&self.fc);
        let bn_gamma = c(&self.bn_gamma);
        let bn_beta = c(&self.bn_beta);
        let classifier = c(&self.classifier);
        NetworkVars {
            stem,
            lta,
            blocks,
            gem_p,
            fc,
            bn_gamma,
            bn_beta,
            classifier,
            all: Vec::new(),
        }
    }
}

fn load_slot<T: Real>(ckpt: &Checkpoint, name: &str, slot: &mut Tensor<T>) -> Result<()> {
    let blob = ckpt.get(name)?;
    if blob.shape() != slot.shape() {
        return Err(Error::Ingestion(format!(
            "checkpoint tensor {name} has shape {:?}, the configured network needs {:?}",
            blob.shape(),
            slot.shape()
        )));
    }
    *slot = blob.cast();
    Ok(())
}

/// Temporal aggregation with kernel `(kernel_t, 1, 1)`, stride
/// `(stride_t, 1, 1)` and no padding.
pub fn lta<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    stride_t: usize,
) -> Result<Var> {
    let kt = g.shape(kernel).get(2).copied().unwrap_or(0);
    let s = g.shape(x).get(1).copied().unwrap_or(0);
    if s < kt {
        return Err(Error::SequenceTooShort { len: s, need: kt });
    }
    g.conv3d(x, kernel, bias, [stride_t, 1, 1], [0; 3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_layout() {
        let l = NetworkConfig::desk().layout().unwrap();
        assert_eq!(l.block_heights, vec![32, 16]);
        assert_eq!(l.num_strips, 32);
        assert_eq!(l.final_width, 11);
        let l = NetworkConfig::full().layout().unwrap();
        assert_eq!(l.block_heights, vec![64, 32]);
        assert_eq!(l.num_strips, 64);
    }

    #[test]
    fn layout_rejects_bad_configs() {
        let mut c = NetworkConfig::desk();
        c.num_parts = 3;
        assert!(matches!(c.layout(), Err(Error::Config(_))));
        let mut c = NetworkConfig::desk();
        c.variants = vec![Fusion::ConcatH, Fusion::ConcatH];
        assert!(matches!(c.layout(), Err(Error::Config(_))));
        let mut c = NetworkConfig::desk();
        c.stage_channels = vec![4, 8];
        assert!(matches!(c.layout(), Err(Error::Config(_))));
        let mut c = NetworkConfig::desk();
        c.gem_p_init = 0.0;
        assert!(matches!(c.layout(), Err(Error::Config(_))));
    }

    #[test]
    fn lta_shortens_time() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 30, 2, 2]));
        let k = g.constant(Tensor::zeros(&[2, 2, 3, 1, 1]));
        let y = lta(&mut g, x, k, None, 3).unwrap();
        assert_eq!(g.shape(y), &[2, 10, 2, 2]);
        let short = g.constant(Tensor::zeros(&[2, 2, 2, 2]));
        assert!(matches!(
            lta(&mut g, short, k, None, 3),
            Err(Error::SequenceTooShort { len: 2, need: 3 })
        ));
    }

    #[test]
    fn wrong_frame_size_is_an_ingestion_error() {
        let mut cfg = NetworkConfig::desk();
        cfg.stage_channels = vec![2, 2, 2];
        cfg.embed_dim = 4;
        let net = Network::<f32>::init(&cfg, 0).unwrap();
        let bad = Tensor::zeros(&[1, 10, 32, 44]);
        assert!(matches!(net.embed(&bad), Err(Error::Ingestion(_))));
        let short = Tensor::zeros(&[1, 2, 64, 44]);
        assert!(matches!(net.embed(&short), Err(Error::SequenceTooShort { .. })));
    }
}
