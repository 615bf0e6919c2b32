//! Trained-surrogate checkpoints: the binary envelope followed by named tensors.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use bsbi_core::flows::{ConditionalFlow, CouplingLayer, PriorMapTransform};
use bsbi_core::objectives::{Algorithm, FlowSurrogate, RatioSurrogate, TrainedSurrogate};
use bsbi_core::simulators::Task;
use bsbi_core::tensor::{Activation, Linear, Mlp, Tensor};

use crate::format::{read_f64s, read_str, read_u32, read_u64, replace_file, write_f64s, write_str, FormatError, Header, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub task: Task,
    pub algorithm: Algorithm,
    pub budget: usize,
    pub seed: u64,
    pub surrogate: TrainedSurrogate,
}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

fn scalar(v: f64) -> Tensor {
    Tensor::new(vec![1], vec![v]).expect("one element")
}

fn indices(v: &[usize]) -> Tensor {
    Tensor::new(vec![v.len()], v.iter().map(|&i| i as f64).collect()).expect("length matches")
}

fn activation_code(a: Activation) -> f64 {
    match a {
        Activation::Relu => 0.0,
        Activation::Tanh => 1.0,
    }
}

fn push_mlp(out: &mut Vec<(String, Tensor)>, prefix: &str, mlp: &Mlp) {
    out.push((format!("{prefix}.activation"), scalar(activation_code(mlp.activation()))));
    for (i, l) in mlp.layers().iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), l.weight.clone()));
        out.push((format!("{prefix}.{i}.bias"), l.bias.clone()));
    }
}

/// The ordered tensors that make up a checkpoint payload.
fn tensors(ck: &Checkpoint) -> Vec<(String, Tensor)> {
    let alg = Algorithm::ALL.iter().position(|&a| a == ck.algorithm).expect("listed") as f64;
    let mut out = vec![("meta.algorithm".to_string(), scalar(alg))];
    match &ck.surrogate {
        TrainedSurrogate::Ratio(r) => {
            out.push(("meta.kind".into(), scalar(0.0)));
            push_mlp(&mut out, "head", &r.head);
        }
        TrainedSurrogate::Flow(f) => {
            let flow = &f.flow;
            out.push(("meta.kind".into(), scalar(1.0)));
            out.push((
                "flow.spline".into(),
                Tensor::new(vec![2], vec![flow.bins() as f64, flow.bound()]).expect("two values"),
            ));
            if let Some(pm) = flow.prior_map() {
                let mut b = pm.lower().to_vec();
                b.extend_from_slice(pm.upper());
                out.push(("flow.prior_map".into(), Tensor::new(vec![2, pm.dim()], b).expect("2×D")));
            }
            for (l, layer) in flow.layers().iter().enumerate() {
                out.push((format!("flow.{l}.transformed"), indices(&layer.transformed)));
                out.push((format!("flow.{l}.conditioning"), indices(&layer.conditioning)));
                push_mlp(&mut out, &format!("flow.{l}.conditioner"), &layer.conditioner);
            }
        }
    }
    out
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let ts = tensors(ck);
    let mut out = Vec::new();
    Header {
        task: ck.task.name().to_string(),
        budget: ck.budget as u64,
        seed: ck.seed,
        theta_dim: ck.task.theta_dim() as u32,
        x_dim: ck.task.x_dim() as u32,
        count: ts.len() as u64,
    }
    .write(&mut out)?;
    for (name, t) in &ts {
        write_str(&mut out, name)?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        write_f64s(&mut out, t.data())?;
    }
    Ok(out)
}

struct Named(BTreeMap<String, Tensor>);

impl Named {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.0.remove(name).ok_or_else(|| malformed(format!("missing tensor `{name}`")))
    }

    fn scalar(&mut self, name: &str) -> Result<f64> {
        let t = self.take(name)?;
        match t.data() {
            [v] => Ok(*v),
            _ => Err(malformed(format!("`{name}` is not a scalar"))),
        }
    }

    fn indices(&mut self, name: &str) -> Result<Vec<usize>> {
        self.take(name)?
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(malformed(format!("`{name}` holds a non-index value")))
                }
            })
            .collect()
    }

    fn mlp(&mut self, prefix: &str) -> Result<Mlp> {
        let activation = match self.scalar(&format!("{prefix}.activation"))? {
            a if a == 0.0 => Activation::Relu,
            a if a == 1.0 => Activation::Tanh,
            a => return Err(malformed(format!("unknown activation code {a}"))),
        };
        let mut layers = Vec::new();
        while self.0.contains_key(&format!("{prefix}.{}.weight", layers.len())) {
            let i = layers.len();
            layers.push(Linear {
                weight: self.take(&format!("{prefix}.{i}.weight"))?,
                bias: self.take(&format!("{prefix}.{i}.bias"))?,
            });
        }
        Ok(Mlp::from_layers(layers, activation)?)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Cursor::new(bytes);
    let h = Header::read(&mut r)?;
    let task: Task = h.task.parse()?;
    if h.theta_dim as usize != task.theta_dim() || h.x_dim as usize != task.x_dim() {
        return Err(FormatError::HeaderMismatch(format!("dimensions do not fit task {task}")));
    }
    let mut named = BTreeMap::new();
    for _ in 0..h.count {
        let name = read_str(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(malformed(format!("tensor `{name}` has rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        if len > bytes.len() / 8 {
            return Err(malformed(format!("tensor `{name}` is larger than the file")));
        }
        let data = read_f64s(&mut r, len)?;
        named.insert(name, Tensor::new(shape, data)?);
    }
    let mut trailing = Vec::new();
    r.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(malformed("trailing bytes after the last tensor"));
    }
    let mut n = Named(named);
    let alg = n.scalar("meta.algorithm")?;
    let algorithm = *Algorithm::ALL
        .get(alg as usize)
        .filter(|_| alg >= 0.0 && alg.fract() == 0.0)
        .ok_or_else(|| malformed("unknown algorithm code"))?;
    let prior = task.prior();
    let surrogate = match n.scalar("meta.kind")? {
        k if k == 0.0 => TrainedSurrogate::Ratio(RatioSurrogate { head: n.mlp("head")?, prior }),
        k if k == 1.0 => {
            let spline = n.take("flow.spline")?;
            let (bins, bound) = match spline.data() {
                [b, bd] if *b >= 2.0 && b.fract() == 0.0 => (*b as usize, *bd),
                _ => return Err(malformed("bad spline settings")),
            };
            let prior_map = match n.0.remove("flow.prior_map") {
                Some(t) if t.shape().len() == 2 && t.shape()[0] == 2 => {
                    let d = t.shape()[1];
                    Some(PriorMapTransform::new(t.data()[..d].to_vec(), t.data()[d..].to_vec())?)
                }
                Some(_) => return Err(malformed("bad prior map bounds")),
                None => None,
            };
            let mut layers = Vec::new();
            while n.0.contains_key(&format!("flow.{}.transformed", layers.len())) {
                let l = layers.len();
                layers.push(CouplingLayer {
                    transformed: n.indices(&format!("flow.{l}.transformed"))?,
                    conditioning: n.indices(&format!("flow.{l}.conditioning"))?,
                    conditioner: n.mlp(&format!("flow.{l}.conditioner"))?,
                });
            }
            let flow = ConditionalFlow::from_parts(task.theta_dim(), task.x_dim(), bins, bound, layers, prior_map)?;
            TrainedSurrogate::Flow(FlowSurrogate { flow, prior })
        }
        k => return Err(malformed(format!("unknown surrogate kind {k}"))),
    };
    if let Some(extra) = n.0.keys().next() {
        return Err(malformed(format!("unexpected tensor `{extra}`")));
    }
    Ok(Checkpoint { task, algorithm, budget: h.budget as usize, seed: h.seed, surrogate })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    Ok(replace_file(path, &encode_checkpoint(ck)?)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
