//! The training loop: sample, forward, joint loss, backward, Adam.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::adam::{adam_step, AdamState};
use super::sampler::{iteration_rng, sample_window, BaSampler};
use super::{joint_loss, TrainConfig};
use crate::backbone::{Mode, Network, NetworkConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{DatasetIndex, SilhouetteSequence, Split};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// Losses of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub triplet: f64,
    pub ce: f64,
    pub joint: f64,
    pub wall_ms: f64,
}

pub trait LossSink {
    fn record(&mut self, r: &LossRecord) -> Result<()>;
}

impl LossSink for Vec<LossRecord> {
    fn record(&mut self, r: &LossRecord) -> Result<()> {
        self.push(r.clone());
        Ok(())
    }
}

/// Append-only CSV log: `iteration,triplet,ce,joint,wall_ms`.
pub struct CsvLossLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvLossLog {
    pub const HEADER: &'static str = "iteration,triplet,ce,joint,wall_ms";

    pub fn open(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut log = CsvLossLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        if fresh {
            writeln!(log.out, "{}", Self::HEADER).map_err(|e| Error::io(path, e))?;
        }
        Ok(log)
    }
}

impl LossSink for CsvLossLog {
    fn record(&mut self, r: &LossRecord) -> Result<()> {
        writeln!(
            self.out,
            "{},{:e},{:e},{:e},{:.3}",
            r.iteration, r.triplet, r.ce, r.joint, r.wall_ms
        )
        .and_then(|_| self.out.flush())
        .map_err(|e| Error::io(&self.path, e))
    }
}

/// Parses a log written by [`CsvLossLog`].
pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: &str| Error::Ingestion(format!("{}: malformed loss line {line:?}", path.display()));
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
        out.push(LossRecord {
            iteration: f[0].parse().map_err(|_| bad(line))?,
            triplet: num(f[1])?,
            ce: num(f[2])?,
            joint: num(f[3])?,
            wall_ms: num(f[4])?,
        });
    }
    Ok(out)
}

pub trait CheckpointSink {
    fn save(&mut self, ckpt: &Checkpoint) -> Result<()>;
}

impl CheckpointSink for Vec<Checkpoint> {
    fn save(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.push(ckpt.clone());
        Ok(())
    }
}

/// Writes `ckpt-<iteration>.mgck` and refreshes `latest.mgck`.
pub struct DirCheckpoints {
    pub dir: PathBuf,
}

impl DirCheckpoints {
    pub const LATEST: &'static str = "latest.mgck";
}

impl CheckpointSink for DirCheckpoints {
    fn save(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.save(&self.dir.join(format!("ckpt-{:06}.mgck", ckpt.iteration)))?;
        ckpt.save(&self.dir.join(Self::LATEST))
    }
}

/// Training sequences held in memory with their class ids.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub sequences: Vec<SilhouetteSequence>,
    pub classes: Vec<usize>,
    pub num_classes: usize,
}

impl TrainData {
    pub fn new(sequences: Vec<SilhouetteSequence>, classes: Vec<usize>, num_classes: usize) -> Result<Self> {
        if sequences.len() != classes.len() {
            return Err(Error::Contract("one class id per training sequence".into()));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Contract(format!("class id {c} >= {num_classes} classes")));
        }
        Ok(TrainData {
            sequences,
            classes,
            num_classes,
        })
    }

    /// Loads the training split of an index.
    pub fn load(index: &DatasetIndex) -> Result<Self> {
        let seqs = crate::data::load_sequences(&index.entries(Split::Train))?;
        let classes = seqs
            .iter()
            .map(|s| index.class_id(&s.label.subject).expect("training subject"))
            .collect();
        Self::new(seqs, classes, index.num_classes())
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.num_classes];
        for (i, &c) in self.classes.iter().enumerate() {
            g[c].push(i);
        }
        g
    }
}

#[derive(Serialize)]
struct BatchItem {
    sequence: String,
    class: usize,
    window_start: usize,
}

#[derive(Serialize)]
struct NumericDump {
    iteration: u64,
    triplet: f64,
    ce: f64,
    joint: f64,
    non_finite_parameters: Vec<String>,
    batch: Vec<BatchItem>,
}

/// Network, optimizer state and schedule.
pub struct Trainer {
    pub net: Network<f32>,
    pub adam: AdamState<f32>,
    pub cfg: TrainConfig,
    /// Resolved configuration echoed into every checkpoint.
    pub config_text: String,
    /// Where to write a diagnostic dump if the loss stops being finite.
    pub dump_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(net_cfg: &NetworkConfig, cfg: TrainConfig, config_text: String) -> Result<Self> {
        cfg.validate()?;
        let net = Network::init(net_cfg, cfg.seed)?;
        let shapes: Vec<Vec<usize>> = net.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        Ok(Trainer {
            adam: AdamState::new(&refs),
            net,
            cfg,
            config_text,
            dump_dir: None,
        })
    }

    /// Restores network, running statistics and optimizer moments.
    pub fn resume(ckpt: &Checkpoint, net_cfg: &NetworkConfig, cfg: TrainConfig, config_text: String) -> Result<Self> {
        let mut t = Self::new(net_cfg, cfg, config_text)?;
        t.net.load_checkpoint(ckpt)?;
        let names: Vec<String> = t.net.named().into_iter().map(|(n, _)| n).collect();
        for (i, name) in names.iter().enumerate() {
            for (slot, prefix) in [(&mut t.adam.m[i], "adam.m."), (&mut t.adam.v[i], "adam.v.")] {
                let blob = ckpt.get(&format!("{prefix}{name}"))?;
                if blob.shape() != slot.shape() {
                    return Err(Error::Ingestion(format!("{prefix}{name} has shape {:?}", blob.shape())));
                }
                *slot = blob.clone();
            }
        }
        t.adam.step = ckpt.iteration;
        Ok(t)
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> u64 {
        self.adam.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.config_text.clone(), self.iteration());
        self.net.store_checkpoint(&mut c);
        for (i, (name, _)) in self.net.named().into_iter().enumerate() {
            c.insert(format!("adam.m.{name}"), self.adam.m[i].clone());
            c.insert(format!("adam.v.{name}"), self.adam.v[i].clone());
        }
        c
    }

    /// Runs the next iteration. Its batch and windows depend only on the
    /// seed and the iteration number.
    pub fn step(&mut self, data: &TrainData, sampler: &BaSampler) -> Result<LossRecord> {
        let start = Instant::now();
        let it = self.iteration() + 1;
        let mut rng = iteration_rng(self.cfg.seed, it);
        let picks = sampler.sample(&mut rng);
        let mut batch = Vec::with_capacity(picks.len());
        let mut labels = Vec::with_capacity(picks.len());
        let mut starts = Vec::with_capacity(picks.len());
        for &(sid, class) in &picks {
            let seq = &data.sequences[sid];
            let w = sample_window(seq.num_frames(), self.cfg.frames_per_sample, &mut rng)?;
            starts.push(w[0]);
            batch.push(seq.to_tensor::<f32>(Some(&w)));
            labels.push(class);
        }

        let mut g = Graph::new();
        let vars = self.net.bind(&mut g);
        let out = self.net.forward(&mut g, &vars, &batch, Mode::Train)?;
        let loss = joint_loss(&mut g, out.embeddings, out.logits, &labels, self.cfg.margin as f32)?;
        let (tri, ce, joint) = (
            g.value(loss.triplet).item() as f64,
            g.value(loss.ce).item() as f64,
            g.value(loss.joint).item() as f64,
        );
        if !joint.is_finite() {
            let dump = NumericDump {
                iteration: it,
                triplet: tri,
                ce,
                joint,
                non_finite_parameters: self
                    .net
                    .named()
                    .into_iter()
                    .filter(|(_, t)| !t.all_finite())
                    .map(|(n, _)| n)
                    .collect(),
                batch: picks
                    .iter()
                    .zip(&starts)
                    .map(|(&(sid, class), &window_start)| BatchItem {
                        sequence: data.sequences[sid].label.to_string(),
                        class,
                        window_start,
                    })
                    .collect(),
            };
            let json = serde_json::to_string_pretty(&dump).expect("dump serializes");
            let mut msg = format!("non-finite loss at iteration {it} (triplet={tri}, ce={ce})");
            if let Some(dir) = &self.dump_dir {
                let path = dir.join("nan_dump.json");
                std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
                msg.push_str(&format!("; batch dumped to {}", path.display()));
            }
            return Err(Error::Numeric(msg));
        }
        g.backward(loss.joint)?;
        let grads: Vec<Tensor<f32>> = vars.all.iter().map(|&v| g.grad(v)).collect();
        drop(g);

        let adam_cfg = self.cfg.adam();
        let mut params: Vec<&mut Tensor<f32>> = self.net.named_mut().into_iter().map(|(_, t)| t).collect();
        adam_step(&mut params, &grads, &mut self.adam, &adam_cfg)?;
        if let Some((mean, var)) = out.bn_stats {
            self.net.update_running_stats(&mean, &var, batch.len());
        }
        Ok(LossRecord {
            iteration: it,
            triplet: tri,
            ce,
            joint,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Trains until `cfg.iterations` iterations are done, checkpointing every
/// `cfg.checkpoint_every` iterations and at the end. Returns the final
/// checkpoint.
pub fn train_loop(
    trainer: &mut Trainer,
    data: &TrainData,
    checkpoints: &mut dyn CheckpointSink,
    log: &mut dyn LossSink,
) -> Result<Checkpoint> {
    if data.num_classes != trainer.net.config.num_classes {
        return Err(Error::Config(format!(
            "net.num_classes is {} but the training split has {} subjects",
            trainer.net.config.num_classes, data.num_classes
        )));
    }
    let sampler = BaSampler::new(data.groups(), trainer.cfg.p, trainer.cfg.k)?;
    let total = trainer.cfg.iterations as u64;
    let every = trainer.cfg.checkpoint_every as u64;
    while trainer.iteration() < total {
        let rec = trainer.step(data, &sampler)?;
        log.record(&rec)?;
        if rec.iteration % 50 == 0 || rec.iteration == 1 {
            log::info!(
                "iter {:>6}  joint {:.4}  triplet {:.4}  ce {:.4}  ({:.0} ms)",
                rec.iteration,
                rec.joint,
                rec.triplet,
                rec.ce,
                rec.wall_ms
            );
        }
        if every > 0 && rec.iteration % every == 0 && rec.iteration < total {
            checkpoints.save(&trainer.checkpoint())?;
        }
    }
    let last = trainer.checkpoint();
    checkpoints.save(&last)?;
    Ok(last)
}
