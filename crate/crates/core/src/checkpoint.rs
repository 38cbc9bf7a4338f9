//! Binary checkpoints of named tensors.
//!
//! Layout: the magic bytes `MFQL1`, then for every tensor a little-endian `u32`
//! name length, the UTF-8 name, a `u32` rank, `rank` × `u64` dimensions and the
//! `f64` payload. Records continue until end of file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::meanflow::Variant;
use crate::mlp::{FinalInit, Layer, LayerNormParams, MlpParams, MlpSpec};
use crate::nets::{CriticEnsemble, PolicyNet, TargetCritic};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"MFQL1";

pub fn encode_tensors(tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Data(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Data("not a checkpoint file (bad magic)".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Data("checkpoint tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Data(format!("tensor {name} is too large")))?;
        let raw = r.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Data("overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    fs::write(path, encode_tensors(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes)
}

/// Policy, online critic and target critic as stored in one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentCheckpoint {
    pub step: u64,
    pub policy: PolicyNet,
    pub critic: Option<CriticEnsemble>,
    pub target: Option<TargetCritic>,
}

fn usize_tensor(xs: &[usize]) -> Tensor {
    Tensor::vector(xs.iter().map(|&x| x as f64).collect()).expect("finite")
}

fn spec_meta(spec: &MlpSpec) -> (Tensor, Tensor) {
    let flags = [
        spec.use_layer_norm as usize,
        match spec.final_init {
            FinalInit::Zero => 0,
            FinalInit::KaimingSmall => 1,
        },
    ];
    (usize_tensor(&spec.layer_sizes), usize_tensor(&flags))
}

fn push_mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, mlp: &'a MlpParams) {
    for (n, t) in mlp.named_tensors() {
        out.push((format!("{prefix}.{n}"), t));
    }
}

pub fn save_agent(path: &Path, ckpt: &AgentCheckpoint) -> Result<()> {
    let p = &ckpt.policy;
    let mut meta: Vec<(String, Tensor)> = vec![
        ("meta.step".into(), usize_tensor(&[ckpt.step as usize])),
        (
            "meta.policy_dims".into(),
            usize_tensor(&[
                p.state_dim(),
                p.action_dim(),
                p.time_embed_dim(),
                p.variant().id() as usize,
            ]),
        ),
    ];
    let (sizes, flags) = spec_meta(p.mlp().spec());
    meta.push(("meta.policy_sizes".into(), sizes));
    meta.push(("meta.policy_flags".into(), flags));
    let critics: Vec<(&str, &CriticEnsemble)> = ckpt
        .critic
        .iter()
        .map(|c| ("critic", c))
        .chain(ckpt.target.iter().map(|t| ("target", &t.critic)))
        .collect();
    for (name, c) in &critics {
        let (sizes, flags) = spec_meta(c.members()[0].spec());
        meta.push((
            format!("meta.{name}_dims"),
            usize_tensor(&[c.state_dim(), c.action_dim(), c.members().len()]),
        ));
        meta.push((format!("meta.{name}_sizes"), sizes));
        meta.push((format!("meta.{name}_flags"), flags));
    }
    if let Some(t) = &ckpt.target {
        meta.push(("meta.target_tau".into(), Tensor::vector(vec![t.tau])?));
    }

    let mut all: Vec<(String, &Tensor)> = meta.iter().map(|(n, t)| (n.clone(), t)).collect();
    push_mlp(&mut all, "policy", p.mlp());
    for (name, c) in &critics {
        for (m, member) in c.members().iter().enumerate() {
            push_mlp(&mut all, &format!("{name}.m{m}"), member);
        }
    }
    save_tensors(path, &all)
}

struct Named(Vec<(String, Tensor)>);

impl Named {
    fn get(&self, name: &str) -> Result<&Tensor> {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {name:?}")))
    }

    fn has(&self, name: &str) -> bool {
        self.0.iter().any(|(n, _)| n == name)
    }

    fn usizes(&self, name: &str) -> Result<Vec<usize>> {
        self.get(name)?
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(Error::Data(format!("{name} holds a non-integer {x}")))
                }
            })
            .collect()
    }

    fn spec(&self, prefix: &str) -> Result<MlpSpec> {
        let sizes = self.usizes(&format!("meta.{prefix}_sizes"))?;
        let flags = self.usizes(&format!("meta.{prefix}_flags"))?;
        if flags.len() != 2 {
            return Err(Error::Data(format!("meta.{prefix}_flags needs 2 entries")));
        }
        let final_init = if flags[1] == 0 {
            FinalInit::Zero
        } else {
            FinalInit::KaimingSmall
        };
        Ok(MlpSpec::new(sizes, flags[0] != 0, final_init))
    }

    fn mlp(&self, prefix: &str, spec: MlpSpec) -> Result<MlpParams> {
        let n_layers = spec.layer_sizes.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let base = format!("{prefix}.layer{i}");
                let norm = if self.has(&format!("{base}.norm_gain")) {
                    Some(LayerNormParams {
                        gain: self.get(&format!("{base}.norm_gain"))?.clone(),
                        shift: self.get(&format!("{base}.norm_shift"))?.clone(),
                    })
                } else {
                    None
                };
                Ok(Layer {
                    weight: self.get(&format!("{base}.weight"))?.clone(),
                    bias: self.get(&format!("{base}.bias"))?.clone(),
                    norm,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpParams::from_layers(spec, layers)
    }

    fn critic(&self, name: &str) -> Result<Option<CriticEnsemble>> {
        let dims_key = format!("meta.{name}_dims");
        if !self.has(&dims_key) {
            return Ok(None);
        }
        let dims = self.usizes(&dims_key)?;
        if dims.len() != 3 {
            return Err(Error::Data(format!("{dims_key} needs 3 entries")));
        }
        let spec = self.spec(name)?;
        let members = (0..dims[2])
            .map(|m| self.mlp(&format!("{name}.m{m}"), spec.clone()))
            .collect::<Result<Vec<_>>>()?;
        CriticEnsemble::from_members(members, dims[0], dims[1]).map(Some)
    }
}

pub fn load_agent(path: &Path) -> Result<AgentCheckpoint> {
    let named = Named(load_tensors(path)?);
    let step = named.usizes("meta.step")?.first().copied().unwrap_or(0) as u64;
    let dims = named.usizes("meta.policy_dims")?;
    if dims.len() != 4 {
        return Err(Error::Data("meta.policy_dims needs 4 entries".into()));
    }
    let variant = Variant::from_id(dims[3] as u8)?;
    let mlp = named.mlp("policy", named.spec("policy")?)?;
    let policy = PolicyNet::from_parts(mlp, dims[0], dims[1], dims[2], variant)?;
    let critic = named.critic("critic")?;
    let target = match named.critic("target")? {
        Some(c) => Some(TargetCritic {
            critic: c,
            tau: named.get("meta.target_tau")?.data()[0],
        }),
        None => None,
    };
    Ok(AgentCheckpoint {
        step,
        policy,
        critic,
        target,
    })
}
