//! Self-describing text container for training state.
//!
//! Floats are written as the 16 hex digits of their IEEE-754 bit pattern, so
//! a save/load round trip is bit-exact. Layout, one item per line:
//!
//! ```text
//! nbe-checkpoint 1
//! specs 3
//! affine:4:8
//! relu
//! affine:8:2
//! progress <iteration> <iterations_per_epoch> <batch_size>
//! optimizer <momentum> <base_lr> <decay_factor> <decay_period> <epoch>
//! stream <name> <seed> <stream_id> <word_pos> ...
//! tensor <name> <len> <hex> <hex> ...
//! end
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::embednet::{EmbeddingNet, Layer, LayerSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optimizer::{OptState, Schedule};
use crate::rng::StreamState;
use crate::sampler::SamplerState;

const MAGIC: &str = "nbe-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: EmbeddingNet,
    pub opt: OptState,
    pub sampler: SamplerState,
    /// Completed training iterations.
    pub iteration: u64,
    pub iterations_per_epoch: u64,
    pub batch_size: usize,
}

fn push_tensor(out: &mut String, name: &str, values: &[f64]) {
    let _ = write!(out, "tensor {name} {}", values.len());
    for v in values {
        let _ = write!(out, " {:016x}", v.to_bits());
    }
    out.push('\n');
}

fn push_stream(out: &mut String, name: &str, s: &StreamState) {
    let _ = writeln!(out, "stream {name} {} {} {}", s.seed, s.stream, s.word_pos);
}

fn hex_f64(tok: &str) -> Result<f64> {
    u64::from_str_radix(tok, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::format(format!("bad float bit pattern `{tok}`")))
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::format(format!("missing or malformed {what}")))
}

impl Checkpoint {
    pub fn encode(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let _ = writeln!(out, "specs {}", self.net.specs().len());
        for s in self.net.specs() {
            out.push_str(&s.encode());
            out.push('\n');
        }
        let _ = writeln!(out, "progress {} {} {}", self.iteration, self.iterations_per_epoch, self.batch_size);
        let sch = &self.opt.schedule;
        let _ = writeln!(
            out,
            "optimizer {:016x} {:016x} {:016x} {} {}",
            self.opt.momentum.to_bits(),
            sch.base_lr.to_bits(),
            sch.decay_factor.to_bits(),
            sch.decay_period,
            self.opt.epoch
        );
        push_stream(&mut out, "exemplars", &self.sampler.exemplars);
        push_stream(&mut out, "labeled", &self.sampler.labeled);
        push_stream(&mut out, "unlabeled", &self.sampler.unlabeled);
        let _ = writeln!(out, "sampler_iteration {}", self.sampler.iteration);
        for (i, layer) in self.net.layers().iter().enumerate() {
            match layer {
                Layer::Affine { weight, bias } => {
                    push_tensor(&mut out, &format!("{i}.weight"), weight.as_slice());
                    push_tensor(&mut out, &format!("{i}.bias"), bias);
                }
                Layer::BatchNorm { scale, offset, running_mean, running_var, .. } => {
                    push_tensor(&mut out, &format!("{i}.scale"), scale);
                    push_tensor(&mut out, &format!("{i}.offset"), offset);
                    push_tensor(&mut out, &format!("{i}.running_mean"), running_mean);
                    push_tensor(&mut out, &format!("{i}.running_var"), running_var);
                }
                Layer::Relu => {}
            }
        }
        for (k, v) in self.opt.velocity.iter().enumerate() {
            push_tensor(&mut out, &format!("velocity.{k}"), v);
        }
        out.push_str("end\n");
        out
    }

    pub fn decode(text: &str) -> Result<Checkpoint> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::format("not a checkpoint (bad header)"));
        }
        let mut head = lines.next().unwrap_or("").split_whitespace();
        if head.next() != Some("specs") {
            return Err(Error::format("expected `specs` line"));
        }
        let n_specs: usize = parse_num(head.next(), "spec count")?;
        let specs = (0..n_specs)
            .map(|_| LayerSpec::decode(lines.next().unwrap_or("")))
            .collect::<Result<Vec<_>>>()?;

        let mut progress = None;
        let mut optimizer = None;
        let mut streams: HashMap<String, StreamState> = HashMap::new();
        let mut sampler_iteration = None;
        let mut tensors: HashMap<String, Vec<f64>> = HashMap::new();
        let mut ended = false;
        for line in lines {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("progress") => {
                    progress = Some((
                        parse_num::<u64>(tok.next(), "iteration")?,
                        parse_num::<u64>(tok.next(), "iterations_per_epoch")?,
                        parse_num::<usize>(tok.next(), "batch_size")?,
                    ));
                }
                Some("optimizer") => {
                    let momentum = hex_f64(tok.next().unwrap_or(""))?;
                    let base_lr = hex_f64(tok.next().unwrap_or(""))?;
                    let decay_factor = hex_f64(tok.next().unwrap_or(""))?;
                    let decay_period = parse_num(tok.next(), "decay period")?;
                    let epoch = parse_num(tok.next(), "epoch")?;
                    optimizer = Some((momentum, Schedule { base_lr, decay_factor, decay_period }, epoch));
                }
                Some("stream") => {
                    let name = tok.next().ok_or_else(|| Error::format("stream without name"))?.to_string();
                    let state = StreamState {
                        seed: parse_num(tok.next(), "stream seed")?,
                        stream: parse_num(tok.next(), "stream id")?,
                        word_pos: parse_num(tok.next(), "stream position")?,
                    };
                    streams.insert(name, state);
                }
                Some("sampler_iteration") => sampler_iteration = Some(parse_num::<u64>(tok.next(), "sampler iteration")?),
                Some("tensor") => {
                    let name = tok.next().ok_or_else(|| Error::format("tensor without name"))?.to_string();
                    let len: usize = parse_num(tok.next(), "tensor length")?;
                    let values = tok.map(hex_f64).collect::<Result<Vec<_>>>()?;
                    if values.len() != len {
                        return Err(Error::format(format!("tensor {name}: declared {len} values, found {}", values.len())));
                    }
                    tensors.insert(name, values);
                }
                Some("end") => {
                    ended = true;
                    break;
                }
                Some(other) => return Err(Error::format(format!("unknown checkpoint record `{other}`"))),
                None => {}
            }
        }
        if !ended {
            return Err(Error::format("checkpoint is truncated (no `end` record)"));
        }

        let mut take = |name: String| tensors.remove(&name).ok_or_else(|| Error::format(format!("missing tensor {name}")));
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            layers.push(match *spec {
                LayerSpec::Affine { in_dim, out_dim } => Layer::Affine {
                    weight: Matrix::from_vec(out_dim, in_dim, take(format!("{i}.weight"))?)?,
                    bias: take(format!("{i}.bias"))?,
                },
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::BatchNorm { epsilon, .. } => Layer::BatchNorm {
                    scale: take(format!("{i}.scale"))?,
                    offset: take(format!("{i}.offset"))?,
                    running_mean: take(format!("{i}.running_mean"))?,
                    running_var: take(format!("{i}.running_var"))?,
                    epsilon,
                },
            });
        }
        let net = EmbeddingNet::from_layers(specs, layers)?;
        let n_tensors = net.trainable().len();
        let velocity = (0..n_tensors).map(|k| take(format!("velocity.{k}"))).collect::<Result<Vec<_>>>()?;
        for (k, (v, t)) in velocity.iter().zip(net.trainable()).enumerate() {
            if v.len() != t.len() {
                return Err(Error::consistency(format!("velocity.{k} does not match its parameter tensor")));
            }
        }

        let (iteration, iterations_per_epoch, batch_size) = progress.ok_or_else(|| Error::format("missing progress record"))?;
        let (momentum, schedule, epoch) = optimizer.ok_or_else(|| Error::format("missing optimizer record"))?;
        let mut stream = |name: &str| streams.remove(name).ok_or_else(|| Error::format(format!("missing stream {name}")));
        let sampler = SamplerState {
            exemplars: stream("exemplars")?,
            labeled: stream("labeled")?,
            unlabeled: stream("unlabeled")?,
            iteration: sampler_iteration.ok_or_else(|| Error::format("missing sampler iteration"))?,
        };
        Ok(Checkpoint {
            net,
            opt: OptState { velocity, momentum, schedule, epoch },
            sampler,
            iteration,
            iterations_per_epoch,
            batch_size,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::decode(&fs::read_to_string(path)?)
    }
}
