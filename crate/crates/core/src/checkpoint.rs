//! Binary checkpoint format.
//!
//! ```text
//! "EAXL" | version u16 | tag_len u8 | tag | config_len u32 | config JSON
//!        | n_tensors u32 | { name_len u16 | name | rank u8 | dims u32* | f32* }
//! ```
//!
//! All integers and floats are little-endian. Writes go to a sibling temp
//! file that is renamed over the target.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::classifier::{Classifier, ClassifierConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::model::{Chatbot, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Float, Tensor};
use crate::text::Vocabulary;

pub const MAGIC: [u8; 4] = *b"EAXL";
pub const VERSION: u16 = 1;
pub const CLASSIFIER_TAG: &str = "classifier";
pub const CHATBOT_TAG: &str = "chatbot";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub component: String,
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode(component: &str, config: &str, params: &ParamStore) -> Result<Vec<u8>, CheckpointError> {
    let too_long = |what: &str| CheckpointError::Corrupt(format!("{what} too long to encode"));
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(u8::try_from(component.len()).map_err(|_| too_long("component tag"))?);
    out.extend_from_slice(component.as_bytes());
    out.extend_from_slice(&u32::try_from(config.len()).map_err(|_| too_long("config"))?.to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&u16::try_from(name.len()).map_err(|_| too_long("tensor name"))?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            CheckpointError::Corrupt(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize, what: &str) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let n = r.u8("tag length")? as usize;
    let component = r.string(n, "component tag")?;
    let n = r.u32("config length")? as usize;
    let config = r.string(n, "config")?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u16("name length")? as usize;
        let name = r.string(n, "tensor name")?;
        if tensors.iter().any(|(seen, _)| *seen == name) {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor {name:?}")));
        }
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name:?} is too large")))?;
        let raw = r.take(len, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Float)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Tensor {
            name: name.clone(),
            message: e.to_string(),
        })?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        component,
        config,
        tensors,
    })
}

/// Writes a checkpoint atomically.
pub fn save_checkpoint(path: &Path, component: &str, config: &str, params: &ParamStore) -> Result<(), CheckpointError> {
    let bytes = encode(component, config, params)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| CheckpointError::Corrupt(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&fs::read(path)?)
}

impl Checkpoint {
    pub fn expect_component(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.component == expected {
            Ok(())
        } else {
            Err(CheckpointError::WrongComponent {
                expected: expected.to_string(),
                found: self.component.clone(),
            })
        }
    }

    pub fn params(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            store.add(name.clone(), t.clone());
        }
        store
    }

    fn embedded<C: DeserializeOwned>(&self) -> Result<Embedded<C>, CheckpointError> {
        serde_json::from_str(&self.config).map_err(|e| CheckpointError::Corrupt(format!("embedded config: {e}")))
    }
}

/// Config JSON stored in model checkpoints: the model config and the shared
/// vocabulary.
#[derive(Serialize, Deserialize)]
struct Embedded<C> {
    model: C,
    vocab: Vocabulary,
}

fn embed<C: Serialize>(model: &C, vocab: &Vocabulary) -> String {
    #[derive(Serialize)]
    struct Ref<'a, C> {
        model: &'a C,
        vocab: &'a Vocabulary,
    }
    serde_json::to_string(&Ref { model, vocab }).expect("config serializes")
}

pub fn save_classifier(path: &Path, model: &Classifier, vocab: &Vocabulary) -> Result<(), CheckpointError> {
    save_checkpoint(path, CLASSIFIER_TAG, &embed(model.config(), vocab), model.params())
}

pub fn save_chatbot(path: &Path, model: &Chatbot, vocab: &Vocabulary) -> Result<(), CheckpointError> {
    save_checkpoint(path, CHATBOT_TAG, &embed(model.config(), vocab), model.params())
}

fn rebuild_error(e: Error) -> Error {
    match e {
        Error::Checkpoint(_) => e,
        other => CheckpointError::Corrupt(other.to_string()).into(),
    }
}

pub fn load_classifier(path: &Path) -> Result<(Classifier, Vocabulary)> {
    let ckpt = load_checkpoint(path)?;
    ckpt.expect_component(CLASSIFIER_TAG)?;
    let emb: Embedded<ClassifierConfig> = ckpt.embedded()?;
    let model = Classifier::from_params(emb.model, &ckpt.params()).map_err(rebuild_error)?;
    Ok((model, emb.vocab))
}

pub fn load_chatbot(path: &Path) -> Result<(Chatbot, Vocabulary)> {
    let ckpt = load_checkpoint(path)?;
    ckpt.expect_component(CHATBOT_TAG)?;
    let emb: Embedded<ModelConfig> = ckpt.embedded()?;
    let model = Chatbot::from_params(emb.model, &ckpt.params()).map_err(rebuild_error)?;
    Ok((model, emb.vocab))
}
