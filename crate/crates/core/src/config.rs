//! Flat `key = value` run configuration.
//!
//! A profile (`desk` or `full`) supplies every default; a config file and
//! then command-line overrides replace individual keys. Unknown keys are
//! rejected. [`RunConfig::to_text`] renders the fully resolved configuration
//! in a form [`RunConfig::parse`] reads back unchanged.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::backbone::NetworkConfig;
use crate::data::{SplitConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::ffe::Fusion;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Full,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected desk or full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Block structure and variants are derived from `stage_channels` and
    /// `variants` when the network configuration is resolved.
    pub net: NetworkConfig,
    /// Explicit `mge.variant` list; `None` means A for every block but the last.
    pub variants: Option<Vec<Fusion>>,
    pub train: TrainConfig,
    pub train_subjects: usize,
    pub synth_subjects: usize,
    pub synth_frames: usize,
    pub data_root: Option<PathBuf>,
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "profile",
    "seed",
    "net.stage_channels",
    "mge.variant",
    "net.embed_dim",
    "net.num_classes",
    "net.stem_pool",
    "net.mge_pool",
    "net.leaky_slope",
    "mem.enabled",
    "mem.clip_len",
    "ffe.local",
    "ffe.num_parts",
    "lta.kernel_t",
    "lta.stride_t",
    "gem.p_init",
    "gem.eps",
    "bn.momentum",
    "bn.eps",
    "train.p",
    "train.k",
    "train.margin",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.iterations",
    "train.frames",
    "train.checkpoint_every",
    "data.root",
    "data.train_subjects",
    "synth.subjects",
    "synth.frames",
];

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .map(|v| parse_value(key, v))
        .collect()
}

fn join<V: fmt::Display>(vs: &[V]) -> String {
    vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Splits `key=value`, trimming both sides.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got {s:?}")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Config(format!("empty key in {s:?}")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Non-comment assignments of a config file, with 1-based line numbers.
fn file_assignments(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = parse_assignment(line).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
            other => other,
        })?;
        out.push((i + 1, k, v));
    }
    Ok(out)
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        let (net, train, synth_subjects) = match profile {
            Profile::Desk => (NetworkConfig::desk(), TrainConfig::desk(), 8),
            Profile::Full => (NetworkConfig::full(), TrainConfig::full(), 124),
        };
        RunConfig {
            profile,
            seed: 0,
            net: NetworkConfig { num_classes: 0, ..net },
            variants: None,
            train,
            train_subjects: SplitConfig::default().train_subjects,
            synth_subjects,
            synth_frames: 36,
            data_root: None,
        }
    }

    /// Profile from `profile` (else the file's `profile` key, else desk),
    /// then file assignments, then `overrides` in order.
    pub fn resolve(file: Option<&str>, profile: Option<Profile>, overrides: &[(String, String)]) -> Result<Self> {
        let assignments = match file {
            Some(text) => file_assignments(text)?,
            None => Vec::new(),
        };
        let file_profile = assignments
            .iter()
            .rev()
            .find(|(_, k, _)| k == "profile")
            .map(|(_, _, v)| v.parse::<Profile>())
            .transpose()?;
        let profile = profile.or(file_profile).unwrap_or(Profile::Desk);
        let mut cfg = RunConfig::defaults(profile);
        for (line, k, v) in &assignments {
            if k == "profile" {
                continue;
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {line}: {m}")),
                other => other,
            })?;
        }
        for (k, v) in overrides {
            if k == "profile" {
                return Err(Error::Config("select the profile with --profile, not --set".into()));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads back the output of [`RunConfig::to_text`].
    pub fn parse(text: &str) -> Result<Self> {
        Self::resolve(Some(text), None, &[])
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let n = &mut self.net;
        let t = &mut self.train;
        match key {
            "profile" => {
                let p: Profile = value.parse()?;
                if p != self.profile {
                    return Err(Error::Config("the profile cannot change after defaults are applied".into()));
                }
            }
            "seed" => self.seed = parse_value(key, value)?,
            "net.stage_channels" => n.stage_channels = parse_list(key, value)?,
            "mge.variant" => self.variants = Some(parse_list(key, value)?),
            "net.embed_dim" => n.embed_dim = parse_value(key, value)?,
            "net.num_classes" => n.num_classes = parse_value(key, value)?,
            "net.stem_pool" => n.stem_pool = parse_bool(key, value)?,
            "net.mge_pool" => n.mge_pool = parse_bool(key, value)?,
            "net.leaky_slope" => n.leaky_slope = parse_value(key, value)?,
            "mem.enabled" => n.use_mem = parse_bool(key, value)?,
            "mem.clip_len" => n.clip_len = parse_value(key, value)?,
            "ffe.local" => n.use_ffe_local = parse_bool(key, value)?,
            "ffe.num_parts" => n.num_parts = parse_value(key, value)?,
            "lta.kernel_t" => n.lta_kernel_t = parse_value(key, value)?,
            "lta.stride_t" => n.lta_stride_t = parse_value(key, value)?,
            "gem.p_init" => n.gem_p_init = parse_value(key, value)?,
            "gem.eps" => n.gem_eps = parse_value(key, value)?,
            "bn.momentum" => n.bn_momentum = parse_value(key, value)?,
            "bn.eps" => n.bn_eps = parse_value(key, value)?,
            "train.p" => t.p = parse_value(key, value)?,
            "train.k" => t.k = parse_value(key, value)?,
            "train.margin" => t.margin = parse_value(key, value)?,
            "train.lr" => t.lr = parse_value(key, value)?,
            "train.beta1" => t.beta1 = parse_value(key, value)?,
            "train.beta2" => t.beta2 = parse_value(key, value)?,
            "train.eps" => t.eps = parse_value(key, value)?,
            "train.iterations" => t.iterations = parse_value(key, value)?,
            "train.frames" => t.frames_per_sample = parse_value(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = parse_value(key, value)?,
            "data.root" => {
                self.data_root = (!value.trim().is_empty()).then(|| PathBuf::from(value.trim()));
            }
            "data.train_subjects" => self.train_subjects = parse_value(key, value)?,
            "synth.subjects" => self.synth_subjects = parse_value(key, value)?,
            "synth.frames" => self.synth_frames = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let n = &self.net;
        let t = &self.train;
        match key {
            "profile" => self.profile.to_string(),
            "seed" => self.seed.to_string(),
            "net.stage_channels" => join(&n.stage_channels),
            "mge.variant" => join(&self.resolved_variants()),
            "net.embed_dim" => n.embed_dim.to_string(),
            "net.num_classes" => n.num_classes.to_string(),
            "net.stem_pool" => n.stem_pool.to_string(),
            "net.mge_pool" => n.mge_pool.to_string(),
            "net.leaky_slope" => n.leaky_slope.to_string(),
            "mem.enabled" => n.use_mem.to_string(),
            "mem.clip_len" => n.clip_len.to_string(),
            "ffe.local" => n.use_ffe_local.to_string(),
            "ffe.num_parts" => n.num_parts.to_string(),
            "lta.kernel_t" => n.lta_kernel_t.to_string(),
            "lta.stride_t" => n.lta_stride_t.to_string(),
            "gem.p_init" => n.gem_p_init.to_string(),
            "gem.eps" => n.gem_eps.to_string(),
            "bn.momentum" => n.bn_momentum.to_string(),
            "bn.eps" => n.bn_eps.to_string(),
            "train.p" => t.p.to_string(),
            "train.k" => t.k.to_string(),
            "train.margin" => t.margin.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.beta1" => t.beta1.to_string(),
            "train.beta2" => t.beta2.to_string(),
            "train.eps" => t.eps.to_string(),
            "train.iterations" => t.iterations.to_string(),
            "train.frames" => t.frames_per_sample.to_string(),
            "train.checkpoint_every" => t.checkpoint_every.to_string(),
            "data.root" => self.data_root.as_ref().map_or(String::new(), |p| p.display().to_string()),
            "data.train_subjects" => self.train_subjects.to_string(),
            "synth.subjects" => self.synth_subjects.to_string(),
            "synth.frames" => self.synth_frames.to_string(),
            _ => unreachable!("KEYS and get() disagree on {key}"),
        }
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved motiongait configuration\n");
        for k in KEYS {
            s.push_str(&format!("{k} = {}\n", self.get(k)));
        }
        s
    }

    fn resolved_variants(&self) -> Vec<Fusion> {
        self.variants.clone().unwrap_or_else(|| {
            let blocks = self.net.stage_channels.len().saturating_sub(1);
            (0..blocks)
                .map(|i| if i + 1 == blocks { Fusion::ConcatH } else { Fusion::Add })
                .collect()
        })
    }

    /// Network structure with `num_classes` filled in when the config left it
    /// at 0.
    pub fn network(&self, num_classes: usize) -> Result<NetworkConfig> {
        let mut n = self.net.clone();
        n.num_mge_blocks = n.stage_channels.len().saturating_sub(1);
        n.variants = self.resolved_variants();
        if n.num_classes == 0 {
            n.num_classes = num_classes;
        }
        n.layout()?;
        Ok(n)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn split(&self) -> SplitConfig {
        SplitConfig {
            train_subjects: self.train_subjects,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            frames_per_seq: self.synth_frames,
            ..SynthConfig::new(self.synth_subjects, self.seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network(self.net.num_classes.max(1))?;
        self.train().validate()?;
        if self.synth_subjects == 0 || self.synth_frames == 0 {
            return Err(Error::Config("synth.subjects and synth.frames must be positive".into()));
        }
        Ok(())
    }
}
