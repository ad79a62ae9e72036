//! Self-describing binary checkpoints.
//!
//! Layout: 8 magic bytes, `u32` version, `u32` section count, then sections of
//! `u16` name length, name, `u64` payload length, payload. A SHA-256 digest of
//! everything before it closes the file. Integers are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, AwdLstm, DropoutConfig, Preset, TextClassifier};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};
use crate::textpipe::Vocabulary;
use crate::train::{AdamMoments, Optimizer, OptimizerKind};

pub const MAGIC: &[u8; 8] = b"ULMFITCK";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug)]
pub enum CheckpointModel<T> {
    Lm(AwdLstm<T>),
    Classifier(TextClassifier<T>),
}

impl<T: Scalar> CheckpointModel<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckpointModel::Lm(_) => "lm",
            CheckpointModel::Classifier(_) => "clf",
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        match self {
            CheckpointModel::Lm(m) => &m.arch,
            CheckpointModel::Classifier(m) => &m.arch,
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        match self {
            CheckpointModel::Lm(m) => m.store(),
            CheckpointModel::Classifier(m) => m.store(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: CheckpointModel<T>,
    pub vocab: Vocabulary,
    pub seed: u64,
    /// Phases that produced the parameters, oldest first.
    pub phases: Vec<String>,
    pub recorded_valid_loss: Option<f64>,
    /// Free-form configuration snapshot.
    pub config: Vec<(String, String)>,
    pub optimizer: Option<Optimizer<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn lm(&self) -> Result<&AwdLstm<T>> {
        match &self.model {
            CheckpointModel::Lm(m) => Ok(m),
            _ => Err(Error::CheckpointMismatch("expected a language-model checkpoint".into())),
        }
    }

    pub fn classifier(&self) -> Result<&TextClassifier<T>> {
        match &self.model {
            CheckpointModel::Classifier(m) => Ok(m),
            _ => Err(Error::CheckpointMismatch("expected a classifier checkpoint".into())),
        }
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Rejects checkpoints whose preset differs from `preset`.
    pub fn require_preset(&self, preset: Preset) -> Result<()> {
        let found = self.model.arch().preset;
        if found != preset {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint was built with the {} preset, configuration requires {}",
                found.name(),
                preset.name()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(&str, Vec<u8>)> = vec![
            ("meta", self.meta_text().into_bytes()),
            ("vocab", self.vocab.to_text().into_bytes()),
            ("config", kv_text(&self.config).into_bytes()),
            ("params", encode_params(self.model.store())),
        ];
        if let Some(opt) = &self.optimizer {
            sections.push(("optimizer", encode_optimizer(opt)));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (name, payload) in sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn meta_text(&self) -> String {
        let arch = self.model.arch();
        let d = match &self.model {
            CheckpointModel::Lm(m) => m.dropout,
            CheckpointModel::Classifier(m) => m.dropout,
        };
        let mut kv = vec![
            ("kind", self.model.kind().to_string()),
            ("width", T::WIDTH.to_string()),
            ("preset", arch.descriptor()),
            ("vocab_size", arch.vocab_size.to_string()),
            ("vocab_max_size", self.vocab.max_size().to_string()),
            ("vocab_min_freq", self.vocab.min_freq().to_string()),
            ("seed", self.seed.to_string()),
            ("phases", self.phases.join(";")),
            (
                "recorded_valid_loss",
                self.recorded_valid_loss.map(|v| format!("{:016x}", v.to_bits())).unwrap_or_default(),
            ),
            (
                "dropout",
                [d.embed, d.input, d.hidden, d.weight, d.output, d.head, d.multiplier]
                    .iter()
                    .map(|p| format!("{:016x}", p.to_bits()))
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
        ];
        if let CheckpointModel::Classifier(c) = &self.model {
            kv.push(("max_len", c.max_len.to_string()));
        }
        let owned: Vec<(String, String)> = kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        kv_text(&owned)
    }

    /// Parses and validates a checkpoint. Nothing is returned unless every
    /// section decodes and the parameters match the recorded architecture.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = MAGIC.len() + 8;
        if bytes.len() < header + DIGEST_LEN {
            return Err(bad("header", 0, format!("file is only {} bytes", bytes.len())));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("header", 0, "bad magic bytes"));
        }
        let body_len = bytes.len() - DIGEST_LEN;
        if Sha256::digest(&bytes[..body_len]).as_slice() != &bytes[body_len..] {
            return Err(bad("checksum", body_len as u64, "digest does not match contents"));
        }
        let mut cur = Cursor::new(&bytes[..body_len], "header");
        cur.pos = MAGIC.len();
        let version = cur.u32()?;
        if version != VERSION {
            return Err(bad("header", 8, format!("unsupported version {version}")));
        }
        let n_sections = cur.u32()?;
        let mut sections: Vec<(String, usize, &[u8])> = Vec::new();
        for _ in 0..n_sections {
            let name_len = cur.u16()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| bad("header", cur.pos as u64, "section name is not UTF-8"))?;
            let len = cur.u64()? as usize;
            cur.section = "header";
            let start = cur.pos;
            let payload = cur.take(len)?;
            sections.push((name, start, payload));
        }
        if cur.pos != body_len {
            return Err(bad("header", cur.pos as u64, "trailing bytes after last section"));
        }
        let find = |name: &str| {
            sections
                .iter()
                .find(|(n, _, _)| n == name)
                .map(|(_, off, p)| (*off, *p))
                .ok_or_else(|| bad(name, body_len as u64, "section missing"))
        };

        let (meta_off, meta_raw) = find("meta")?;
        let meta = parse_kv(meta_raw, "meta", meta_off)?;
        let get = |k: &str| {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| bad("meta", meta_off as u64, format!("missing key `{k}`")))
        };
        let width: usize = parse_num(get("width")?, "meta", meta_off)?;
        if width != T::WIDTH {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint stores {}-byte floats, loader expects {}",
                width,
                T::WIDTH
            )));
        }
        let vocab_size: usize = parse_num(get("vocab_size")?, "meta", meta_off)?;
        let arch = parse_descriptor(get("preset")?, vocab_size, meta_off)?;
        let seed: u64 = parse_num(get("seed")?, "meta", meta_off)?;
        let phases: Vec<String> = get("phases")?
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let rvl = get("recorded_valid_loss")?;
        let recorded_valid_loss = if rvl.is_empty() {
            None
        } else {
            Some(f64::from_bits(parse_hex(rvl, "meta", meta_off)?))
        };
        let dvals: Vec<f64> = get("dropout")?
            .split(';')
            .map(|h| parse_hex(h, "meta", meta_off).map(f64::from_bits))
            .collect::<Result<_>>()?;
        if dvals.len() != 7 {
            return Err(bad("meta", meta_off as u64, "dropout needs 7 values"));
        }
        let dropout = DropoutConfig {
            embed: dvals[0],
            input: dvals[1],
            hidden: dvals[2],
            weight: dvals[3],
            output: dvals[4],
            head: dvals[5],
            multiplier: dvals[6],
        };

        let (voff, vraw) = find("vocab")?;
        let vtext = std::str::from_utf8(vraw).map_err(|_| bad("vocab", voff as u64, "not UTF-8"))?;
        let vocab = Vocabulary::from_tokens(
            vtext.lines().map(str::to_string).collect(),
            parse_num(get("vocab_max_size")?, "meta", meta_off)?,
            parse_num(get("vocab_min_freq")?, "meta", meta_off)?,
        )
        .map_err(|e| bad("vocab", voff as u64, e.to_string()))?;
        if vocab.len() != vocab_size {
            return Err(bad(
                "vocab",
                voff as u64,
                format!("{} tokens but meta records {vocab_size}", vocab.len()),
            ));
        }

        let (coff, craw) = find("config")?;
        let config = parse_kv(craw, "config", coff)?;

        let (poff, praw) = find("params")?;
        let store = decode_params::<T>(praw, poff)?;
        let model = match get("kind")? {
            "lm" => CheckpointModel::Lm(AwdLstm::from_parts(arch, dropout, store)?),
            "clf" => {
                let max_len = parse_num(get("max_len")?, "meta", meta_off)?;
                CheckpointModel::Classifier(TextClassifier::from_parts(arch, dropout, max_len, store)?)
            }
            other => return Err(bad("meta", meta_off as u64, format!("unknown kind `{other}`"))),
        };
        let optimizer = match sections.iter().find(|(n, _, _)| n == "optimizer") {
            Some((_, off, raw)) => Some(decode_optimizer(raw, *off, model.store())?),
            None => None,
        };
        Ok(Self {
            model,
            vocab,
            seed,
            phases,
            recorded_valid_loss,
            config,
            optimizer,
        })
    }
}

fn bad(section: &str, offset: u64, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        section: section.to_string(),
        offset,
        reason: reason.into(),
    }
}

fn kv_text(kv: &[(String, String)]) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_kv(raw: &[u8], section: &str, offset: usize) -> Result<Vec<(String, String)>> {
    let text = std::str::from_utf8(raw).map_err(|_| bad(section, offset as u64, "not UTF-8"))?;
    text.lines()
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| bad(section, offset as u64, format!("malformed line `{l}`")))
        })
        .collect()
}

fn parse_num<N: std::str::FromStr>(s: &str, section: &str, offset: usize) -> Result<N> {
    s.parse()
        .map_err(|_| bad(section, offset as u64, format!("bad number `{s}`")))
}

fn parse_hex(s: &str, section: &str, offset: usize) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|_| bad(section, offset as u64, format!("bad hex `{s}`")))
}

fn parse_descriptor(s: &str, vocab_size: usize, offset: usize) -> Result<ArchConfig> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 5 {
        return Err(bad("meta", offset as u64, format!("bad preset descriptor `{s}`")));
    }
    let preset = Preset::parse(parts[0]).map_err(|e| bad("meta", offset as u64, e.to_string()))?;
    let n = |i: usize| parse_num::<usize>(parts[i], "meta", offset);
    let arch = ArchConfig {
        preset,
        vocab_size,
        emb_dim: n(1)?,
        hid_dim: n(2)?,
        n_layers: n(3)?,
        head_hidden: n(4)?,
    };
    arch.validate()?;
    Ok(arch)
}

fn encode_params<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.group as u32).to_le_bytes());
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.value.data() {
            x.write_le(&mut out);
        }
    }
    out
}

fn decode_params<T: Scalar>(raw: &[u8], offset: usize) -> Result<ParamStore<T>> {
    let mut cur = Cursor::new(raw, "params");
    cur.base = offset;
    let n = cur.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| cur.error("parameter name is not UTF-8"))?;
        let group = cur.u32()? as usize;
        let ndims = cur.take(1)?[0] as usize;
        let shape: Vec<usize> = (0..ndims).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        let data = cur.take(len.checked_mul(T::WIDTH).ok_or_else(|| cur.error("shape overflow"))?)?;
        let values: Vec<T> = data.chunks_exact(T::WIDTH).map(T::read_le).collect();
        store.add(name, Tensor::new(shape, values)?, group);
    }
    if cur.pos != raw.len() {
        return Err(cur.error("unexpected bytes after last parameter"));
    }
    Ok(store)
}

fn encode_optimizer<T: Scalar>(opt: &Optimizer<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(match opt.kind {
        OptimizerKind::Adam => 0,
        OptimizerKind::Sgd => 1,
    });
    out.extend_from_slice(&opt.beta2.to_le_bytes());
    out.extend_from_slice(&opt.eps.to_le_bytes());
    out.extend_from_slice(&(opt.state.len() as u32).to_le_bytes());
    for s in &opt.state {
        out.extend_from_slice(&s.step.to_le_bytes());
        out.extend_from_slice(&(s.m.len() as u64).to_le_bytes());
        for &x in s.m.iter().chain(&s.v) {
            x.write_le(&mut out);
        }
    }
    out
}

fn decode_optimizer<T: Scalar>(raw: &[u8], offset: usize, store: &ParamStore<T>) -> Result<Optimizer<T>> {
    let mut cur = Cursor::new(raw, "optimizer");
    cur.base = offset;
    let kind = match cur.take(1)?[0] {
        0 => OptimizerKind::Adam,
        1 => OptimizerKind::Sgd,
        k => return Err(cur.error(format!("unknown optimizer kind {k}"))),
    };
    let beta2 = f64::from_bits(cur.u64()?);
    let eps = f64::from_bits(cur.u64()?);
    let n = cur.u32()? as usize;
    if n != store.len() {
        return Err(cur.error(format!("{n} moment entries for {} parameters", store.len())));
    }
    let mut state = Vec::with_capacity(n);
    for (_, p) in store.iter() {
        let step = cur.u64()?;
        let len = cur.u64()? as usize;
        if len != p.value.len() {
            return Err(cur.error(format!("moments for `{}` have {len} entries", p.name)));
        }
        let read = |cur: &mut Cursor| -> Result<Vec<T>> {
            Ok(cur.take(len * T::WIDTH)?.chunks_exact(T::WIDTH).map(T::read_le).collect())
        };
        let m = read(&mut cur)?;
        let v = read(&mut cur)?;
        state.push(AdamMoments { m, v, step });
    }
    Ok(Optimizer { kind, beta2, eps, state })
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
    section: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], section: &'static str) -> Self {
        Self {
            data,
            pos: 0,
            base: 0,
            section,
        }
    }

    fn error(&self, reason: impl Into<String>) -> Error {
        bad(self.section, (self.base + self.pos) as u64, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(self.error(format!("needs {n} bytes, {} left", self.data.len() - self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
