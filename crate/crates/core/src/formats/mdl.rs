//! `MDL1` model file: magic, u32 header length, JSON header, then f64
//! parameter blobs in declaration order. The header lists every blob's
//! name and shape under `"blobs"`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{checked_u32, Reader};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"MDL1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    /// Free-form description (architecture, hyperparameters, seed, ...).
    pub header: Value,
    pub blobs: Vec<(String, Tensor)>,
}

impl ModelFile {
    pub fn new(header: Value) -> Self {
        Self { header, blobs: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.blobs.push((name.into(), tensor));
    }

    /// Appends every parameter of `store` with `prefix` on its name.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.blobs.push((format!("{prefix}{name}"), t.clone()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::format("MDL1", format!("missing blob `{name}`")))
    }

    /// Overwrites `store` from blobs named `prefix + parameter name`.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(n, _)| format!("{prefix}{n}")).collect();
        for (name, slot) in names.iter().zip(store.tensors_mut()) {
            let blob = self.require(name)?;
            if blob.shape() != slot.shape() {
                return Err(Error::shape(
                    "load_model",
                    format!("`{name}`: file {:?} vs model {:?}", blob.shape(), slot.shape()),
                ));
            }
            *slot = blob.clone();
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let infos: Vec<BlobInfo> = self
            .blobs
            .iter()
            .map(|(n, t)| BlobInfo {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let header = serde_json::json!({ "meta": self.header, "blobs": infos });
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&checked_u32(json.len(), "header length", "MDL1")?.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.blobs {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "MDL1");
        r.magic(MAGIC)?;
        let len = r.u32()? as usize;
        let mut header: Value = serde_json::from_slice(r.take(len)?)?;
        let infos: Vec<BlobInfo> = serde_json::from_value(
            header
                .get_mut("blobs")
                .map(Value::take)
                .ok_or_else(|| Error::format("MDL1", "header lacks `blobs`"))?,
        )?;
        let meta = header.get_mut("meta").map(Value::take).unwrap_or(Value::Null);
        let mut blobs = Vec::with_capacity(infos.len());
        for info in infos {
            let n: usize = info.shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            blobs.push((info.name, Tensor::new(info.shape, data)?));
        }
        r.finish()?;
        Ok(Self { header: meta, blobs })
    }
}
