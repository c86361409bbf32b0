//! Conversions between trained modules and [`Checkpoint`]s.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use crate::align::{AlignConfig, AlignSpace};
use crate::data::BodyPart;
use crate::diffusion::{DenoiserModel, DiffusionConfig};
use crate::error::{Error, Result};
use crate::math::{Network, Normalizer, Tensor};
use crate::rvq::{RvqConfig, RvqStack};

pub const RVQ_KIND: &str = "rvq";
pub const ALIGN_KIND: &str = "align";
pub const DIFFUSION_KIND: &str = "diffusion";

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::json("checkpoint config", e))
}

fn from_value<T: DeserializeOwned>(v: &serde_json::Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("config: {e}")))
}

fn push_net(out: &mut Vec<(String, Tensor)>, prefix: &str, net: &Network) {
    out.extend(net.named_params().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t.clone())));
}

fn push_norm(out: &mut Vec<(String, Tensor)>, prefix: &str, norm: &Normalizer) {
    out.push((format!("{prefix}.mean"), norm.mean.clone()));
    out.push((format!("{prefix}.std"), norm.std.clone()));
}

/// Tensors by name, consumed as modules are rebuilt so leftovers can be reported.
struct Store(BTreeMap<String, Tensor>);

impl Store {
    fn new(ck: &Checkpoint, kind: &str) -> Result<Self> {
        if ck.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", ck.kind)));
        }
        let mut map = BTreeMap::new();
        for (name, t) in &ck.tensors {
            if map.insert(name.clone(), t.clone()).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        Ok(Self(map))
    }

    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self.0.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t)
    }

    fn load_net(&mut self, prefix: &str, net: &mut Network) -> Result<()> {
        let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| format!("{prefix}.{n}")).collect();
        for (name, slot) in names.iter().zip(net.params_mut()) {
            *slot = self.take(name, slot.shape())?;
        }
        Ok(())
    }

    fn load_norm(&mut self, prefix: &str, channels: usize) -> Result<Normalizer> {
        Ok(Normalizer {
            mean: self.take(&format!("{prefix}.mean"), &[channels])?,
            std: self.take(&format!("{prefix}.std"), &[channels])?,
        })
    }

    fn finish(self) -> Result<()> {
        match self.0.keys().next() {
            Some(extra) => Err(Error::Checkpoint(format!("unexpected tensor {extra}"))),
            None => Ok(()),
        }
    }
}

/// Fixed generator for skeleton construction; every weight is then overwritten.
fn skeleton_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

pub fn rvq_checkpoint(stacks: &[RvqStack; 3]) -> Result<Checkpoint> {
    let config = &stacks[0].config;
    if stacks.iter().any(|s| &s.config != config) {
        return Err(Error::Structure("body-part codecs must share one configuration".into()));
    }
    let mut tensors = Vec::new();
    for s in stacks {
        let p = s.part.name();
        push_norm(&mut tensors, &format!("{p}.norm"), &s.normalizer);
        push_net(&mut tensors, &format!("{p}.encoder"), &s.encoder);
        push_net(&mut tensors, &format!("{p}.decoder"), &s.decoder);
        for (q, cb) in s.codebooks.iter().enumerate() {
            tensors.push((format!("{p}.codebook.{q}.entries"), cb.entries.clone()));
            tensors.push((format!("{p}.codebook.{q}.cluster_size"), Tensor::new(vec![cb.size()], cb.ema_cluster_size.clone())?));
            tensors.push((format!("{p}.codebook.{q}.embed_sum"), cb.ema_embed_sum.clone()));
        }
    }
    Ok(Checkpoint {
        kind: RVQ_KIND.into(),
        config: to_value(config)?,
        tensors,
    })
}

pub fn rvq_from_checkpoint(ck: &Checkpoint) -> Result<[RvqStack; 3]> {
    let mut store = Store::new(ck, RVQ_KIND)?;
    let config: RvqConfig = from_value(&ck.config)?;
    let mut out = Vec::with_capacity(3);
    for part in BodyPart::ALL {
        let p = part.name();
        let mut s = RvqStack::new(part, config.clone(), &mut skeleton_rng())?;
        s.normalizer = store.load_norm(&format!("{p}.norm"), part.width())?;
        store.load_net(&format!("{p}.encoder"), &mut s.encoder)?;
        store.load_net(&format!("{p}.decoder"), &mut s.decoder)?;
        let (k, d) = (config.codebook_size, config.code_dim);
        for (q, cb) in s.codebooks.iter_mut().enumerate() {
            cb.entries = store.take(&format!("{p}.codebook.{q}.entries"), &[k, d])?;
            cb.ema_cluster_size = store.take(&format!("{p}.codebook.{q}.cluster_size"), &[k])?.into_data();
            cb.ema_embed_sum = store.take(&format!("{p}.codebook.{q}.embed_sum"), &[k, d])?;
        }
        out.push(s);
    }
    store.finish()?;
    out.try_into().map_err(|_| Error::Structure("three body parts".into()))
}

pub fn align_checkpoint(space: &AlignSpace) -> Result<Checkpoint> {
    let mut tensors = Vec::new();
    push_norm(&mut tensors, "motion_norm", &space.motion_norm);
    push_net(&mut tensors, "text", &space.text_encoder);
    push_net(&mut tensors, "motion", &space.motion_encoder);
    push_net(&mut tensors, "decoder", &space.recon_decoder);
    Ok(Checkpoint {
        kind: ALIGN_KIND.into(),
        config: to_value(&space.config)?,
        tensors,
    })
}

pub fn align_from_checkpoint(ck: &Checkpoint) -> Result<AlignSpace> {
    let mut store = Store::new(ck, ALIGN_KIND)?;
    let config: AlignConfig = from_value(&ck.config)?;
    let mut space = AlignSpace::new(config, &mut skeleton_rng())?;
    space.motion_norm = store.load_norm("motion_norm", space.motion_norm.channels())?;
    store.load_net("text", &mut space.text_encoder)?;
    store.load_net("motion", &mut space.motion_encoder)?;
    store.load_net("decoder", &mut space.recon_decoder)?;
    store.finish()?;
    Ok(space)
}

pub fn diffusion_checkpoint(model: &DenoiserModel) -> Result<Checkpoint> {
    let mut tensors = Vec::new();
    push_norm(&mut tensors, "latent_norm", &model.latent_norm);
    push_net(&mut tensors, "trunk", &model.trunk);
    push_net(&mut tensors, "audio", &model.audio_net);
    Ok(Checkpoint {
        kind: DIFFUSION_KIND.into(),
        config: to_value(&model.config)?,
        tensors,
    })
}

pub fn diffusion_from_checkpoint(ck: &Checkpoint) -> Result<DenoiserModel> {
    let mut store = Store::new(ck, DIFFUSION_KIND)?;
    let config: DiffusionConfig = from_value(&ck.config)?;
    let mut model = DenoiserModel::new(config, &mut skeleton_rng())?;
    model.latent_norm = store.load_norm("latent_norm", model.config.latent_channels())?;
    store.load_net("trunk", &mut model.trunk)?;
    store.load_net("audio", &mut model.audio_net)?;
    store.finish()?;
    Ok(model)
}
