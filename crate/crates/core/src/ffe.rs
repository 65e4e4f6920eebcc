//! Fine feature extraction and the motion gait extraction (MGE) block.
//!
//! The global branch convolves the whole frame. The local branch splits the
//! frame into `n` horizontal parts and convolves each with its own kernel,
//! zero-padding every part on its own so nothing leaks across part
//! boundaries. Variant A adds the branches, variant B stacks global above
//! local along the height axis.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mem;
use crate::tensor::{Real, Tensor};

const SAME: [usize; 3] = [1, 1, 1];
const UNIT: [usize; 3] = [1, 1, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Elementwise sum (MGE_A). Height is preserved.
    Add,
    /// Height concatenation (MGE_B). Height doubles.
    ConcatH,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Add => "A",
            Fusion::ConcatH => "B",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Fusion::Add),
            "B" | "b" => Ok(Fusion::ConcatH),
            other => Err(Error::Config(format!("unknown MGE variant {other:?} (expected A or B)"))),
        }
    }
}

/// He-style centered uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
}

/// Kernels of one fine feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct FfeParams<T> {
    pub global_kernel: Tensor<T>,
    pub global_bias: Tensor<T>,
    /// One independent `(c_out, c_in, 3, 3, 3)` kernel per horizontal part.
    /// Empty when the local branch is disabled.
    pub part_kernels: Vec<Tensor<T>>,
    pub part_biases: Vec<Tensor<T>>,
    pub num_parts: usize,
    pub fusion: Fusion,
}

impl<T: Real> FfeParams<T> {
    pub fn init<R: Rng>(
        c_in: usize,
        c_out: usize,
        num_parts: usize,
        fusion: Fusion,
        with_local: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if num_parts == 0 {
            return Err(Error::Config("ffe.num_parts must be at least 1".into()));
        }
        let shape = [c_out, c_in, 3, 3, 3];
        let fan_in = c_in * 27;
        let global_kernel = he_uniform(&shape, fan_in, rng);
        let (part_kernels, part_biases) = if with_local {
            (0..num_parts)
                .map(|_| (he_uniform(&shape, fan_in, rng), Tensor::zeros(&[c_out])))
                .unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(FfeParams {
            global_kernel,
            global_bias: Tensor::zeros(&[c_out]),
            part_kernels,
            part_biases,
            num_parts,
            fusion,
        })
    }

    pub fn has_local(&self) -> bool {
        !self.part_kernels.is_empty()
    }

    pub fn c_out(&self) -> usize {
        self.global_kernel.shape()[0]
    }

    pub fn num_parameters(&self) -> usize {
        let per = self.global_kernel.len() + self.global_bias.len();
        per * (1 + self.part_kernels.len())
    }

    /// Named tensors in a fixed order.
    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            (format!("{prefix}.global.kernel"), &self.global_kernel),
            (format!("{prefix}.global.bias"), &self.global_bias),
        ];
        for (k, (w, b)) in self.part_kernels.iter().zip(&self.part_biases).enumerate() {
            out.push((format!("{prefix}.part{k}.kernel"), w));
            out.push((format!("{prefix}.part{k}.bias"), b));
        }
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            (format!("{prefix}.global.kernel"), &mut self.global_kernel),
            (format!("{prefix}.global.bias"), &mut self.global_bias),
        ];
        for (k, (w, b)) in self
            .part_kernels
            .iter_mut()
            .zip(self.part_biases.iter_mut())
            .enumerate()
        {
            out.push((format!("{prefix}.part{k}.kernel"), w));
            out.push((format!("{prefix}.part{k}.bias"), b));
        }
        out
    }

    /// Enrolls every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> FfeVars {
        let global = (
            g.parameter(self.global_kernel.clone()),
            g.parameter(self.global_bias.clone()),
        );
        let parts = self
            .part_kernels
            .iter()
            .zip(&self.part_biases)
            .map(|(w, b)| (g.parameter(w.clone()), g.parameter(b.clone())))
            .collect();
        FfeVars {
            global,
            parts,
            fusion: self.fusion,
        }
    }
}

/// Graph handles for one [`FfeParams`].
#[derive(Clone, Debug)]
pub struct FfeVars {
    pub global: (Var, Var),
    pub parts: Vec<(Var, Var)>,
    pub fusion: Fusion,
}

impl FfeVars {
    /// Handles in the same order as [`FfeParams::named`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.global.0, self.global.1];
        for &(w, b) in &self.parts {
            v.push(w);
            v.push(b);
        }
        v
    }
}

/// Same-padded, stride-1 3x3x3 convolution over the full frame.
pub fn ffe_global<T: Real>(g: &mut Graph<T>, x: Var, kernel: Var, bias: Var) -> Result<Var> {
    g.conv3d(x, kernel, Some(bias), UNIT, SAME)
}

/// Splits `x` into `parts.len()` horizontal strips, convolves strip `k`
/// with kernel `k` only, and stacks the results back in order.
pub fn ffe_local<T: Real>(g: &mut Graph<T>, x: Var, parts: &[(Var, Var)]) -> Result<Var> {
    if parts.is_empty() {
        return Err(Error::Config("local branch needs at least one part kernel".into()));
    }
    let strips = g.split_h(x, parts.len())?;
    let mut outs = Vec::with_capacity(parts.len());
    for (&strip, &(w, b)) in strips.iter().zip(parts) {
        outs.push(g.conv3d(strip, w, Some(b), UNIT, SAME)?);
    }
    g.concat_h(&outs)
}

pub fn fuse<T: Real>(g: &mut Graph<T>, global: Var, local: Var, fusion: Fusion) -> Result<Var> {
    if g.shape(global) != g.shape(local) {
        return Err(Error::dim(
            "fuse",
            "*",
            format!("global {:?} vs local {:?}", g.shape(global), g.shape(local)),
        ));
    }
    match fusion {
        Fusion::Add => g.add(global, local),
        Fusion::ConcatH => g.concat_h(&[global, local]),
    }
}

/// Switches for the ablation variants of an MGE block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MgeOptions {
    pub clip_len: usize,
    /// Run motion excitation before feature extraction.
    pub mem: bool,
    /// When false, the global features stand in for the local branch.
    pub ffe_local: bool,
}

impl Default for MgeOptions {
    fn default() -> Self {
        MgeOptions {
            clip_len: 2,
            mem: true,
            ffe_local: true,
        }
    }
}

/// Motion excitation followed by fine feature extraction.
pub fn mge_forward<T: Real>(g: &mut Graph<T>, x: Var, opts: MgeOptions, vars: &FfeVars) -> Result<Var> {
    let excited = if opts.mem {
        mem::mem_forward(g, x, opts.clip_len)?
    } else {
        x
    };
    let global = ffe_global(g, excited, vars.global.0, vars.global.1)?;
    let local = if opts.ffe_local {
        ffe_local(g, excited, &vars.parts)?
    } else {
        global
    };
    fuse(g, global, local, vars.fusion)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn delta_kernel(c: usize) -> Tensor<f64> {
        Tensor::from_fn(&[c, c, 3, 3, 3], |i| {
            let tap = i % 27;
            let ci = (i / 27) % c;
            let co = i / (27 * c);
            if co == ci && tap == 13 {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn init_gives_independent_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = FfeParams::<f32>::init(2, 4, 4, Fusion::Add, true, &mut rng).unwrap();
        assert_eq!(p.part_kernels.len(), 4);
        for a in 0..4 {
            for b in a + 1..4 {
                assert_ne!(p.part_kernels[a], p.part_kernels[b]);
            }
        }
        assert_eq!(p.num_parameters(), 5 * (4 * 2 * 27 + 4));
        let bound = (6.0f32 / 54.0).sqrt();
        assert!(p.global_kernel.data().iter().all(|v| v.abs() <= bound));
        assert!(p.global_bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernels_pass_input_through() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4, 5], |i| (i as f64 * 0.37).sin()));
        let k = g.constant(delta_kernel(2));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = ffe_global(&mut g, x, k, b).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(x)) < 1e-12);
    }

    #[test]
    fn fuse_modes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64));
        let z = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let s = fuse(&mut g, a, z, Fusion::Add).unwrap();
        assert_eq!(g.value(s), g.value(a));
        let c = fuse(&mut g, a, a, Fusion::ConcatH).unwrap();
        assert_eq!(g.shape(c), &[1, 2, 4, 2]);
        let other = g.constant(Tensor::zeros(&[1, 2, 3, 2]));
        assert!(fuse(&mut g, a, other, Fusion::Add).is_err());
    }

    #[test]
    fn local_rejects_indivisible_height() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 6, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = FfeParams::<f64>::init(1, 1, 4, Fusion::Add, true, &mut rng).unwrap();
        let v = p.bind(&mut g);
        assert!(matches!(ffe_local(&mut g, x, &v.parts), Err(Error::Config(_))));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("A".parse::<Fusion>().unwrap(), Fusion::Add);
        assert_eq!("b".parse::<Fusion>().unwrap(), Fusion::ConcatH);
        assert!("C".parse::<Fusion>().is_err());
    }
}
