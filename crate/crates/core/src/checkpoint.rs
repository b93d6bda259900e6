use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kvconfig;
use crate::model::{check_params, ModelConfig, ParamMap};
use crate::tensor::Tensor;
use crate::vocab::VocabSpec;

const MAGIC: &[u8; 8] = b"LCSCKPT\0";
const VERSION: u32 = 1;

/// A trained model: config, vocabulary, and named parameters. The parameter
/// set depends only on the config, so any checkpoint loads under any strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub cfg: ModelConfig,
    pub vocab: VocabSpec,
    pub params: ParamMap,
}

fn cfg_to_kv(cfg: &ModelConfig) -> String {
    let mut m = BTreeMap::new();
    m.insert("enc_layers".into(), cfg.enc_layers.to_string());
    m.insert("dec_layers".into(), cfg.dec_layers.to_string());
    m.insert("d_model".into(), cfg.d_model.to_string());
    m.insert("n_heads".into(), cfg.n_heads.to_string());
    m.insert("d_ff".into(), cfg.d_ff.to_string());
    m.insert("vocab_size".into(), cfg.vocab_size.to_string());
    m.insert("max_len".into(), cfg.max_len.to_string());
    m.insert("dropout".into(), cfg.dropout.to_string());
    m.insert("label_smoothing".into(), cfg.label_smoothing.to_string());
    m.insert("post_norm".into(), cfg.post_norm.to_string());
    kvconfig::render(&m)
}

fn cfg_from_kv(text: &str) -> Result<ModelConfig> {
    let m = kvconfig::parse(text)?;
    let cfg = ModelConfig {
        enc_layers: kvconfig::require(&m, "enc_layers")?,
        dec_layers: kvconfig::require(&m, "dec_layers")?,
        d_model: kvconfig::require(&m, "d_model")?,
        n_heads: kvconfig::require(&m, "n_heads")?,
        d_ff: kvconfig::require(&m, "d_ff")?,
        vocab_size: kvconfig::require(&m, "vocab_size")?,
        max_len: kvconfig::require(&m, "max_len")?,
        dropout: kvconfig::require(&m, "dropout")?,
        label_smoothing: kvconfig::require(&m, "label_smoothing")?,
        post_norm: kvconfig::require(&m, "post_norm")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_block(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    write_u64(w, bytes.len() as u64)?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_block(r: &mut impl Read, what: &str, cap: u64) -> Result<Vec<u8>> {
    let len = read_u64(r)?;
    if len > cap {
        return Err(Error::Checkpoint(format!("{what} block of {len} bytes exceeds cap {cap}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

impl Checkpoint {
    pub fn new(cfg: ModelConfig, vocab: VocabSpec, params: ParamMap) -> Result<Checkpoint> {
        cfg.validate()?;
        if vocab.vocab_size() > cfg.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary of {} does not fit model vocab of {}",
                vocab.vocab_size(),
                cfg.vocab_size
            )));
        }
        check_params(&params, &cfg)?;
        Ok(Checkpoint { cfg, vocab, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        check_params(&self.params, &self.cfg)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_block(&mut w, cfg_to_kv(&self.cfg).as_bytes())?;
        write_block(&mut w, serde_json::to_string(&self.vocab)?.as_bytes())?;
        write_u64(&mut w, self.params.len() as u64)?;
        for (name, t) in &self.params {
            write_block(&mut w, name.as_bytes())?;
            write_u64(&mut w, t.shape().len() as u64)?;
            for &d in t.shape() {
                write_u64(&mut w, d as u64)?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads {VERSION})"
            )));
        }
        let cfg_text = read_block(&mut r, "config", 1 << 20)?;
        let cfg = cfg_from_kv(
            std::str::from_utf8(&cfg_text)
                .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?,
        )?;
        let vocab_text = read_block(&mut r, "vocabulary", 1 << 30)?;
        let vocab: VocabSpec = serde_json::from_slice(&vocab_text)?;
        let n_params = read_u64(&mut r)?;
        let mut params = ParamMap::new();
        for _ in 0..n_params {
            let name_bytes = read_block(&mut r, "parameter name", 1 << 16)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let ndims = read_u64(&mut r)? as usize;
            if ndims == 0 || ndims > 8 {
                return Err(Error::Checkpoint(format!("parameter {name} has {ndims} dims")));
            }
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(read_u64(&mut r)? as usize);
            }
            let count: usize = shape.iter().product();
            if count > (1 << 30) {
                return Err(Error::Checkpoint(format!("parameter {name} too large: {count} elements")));
            }
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
            if params.insert(name.clone(), t.with_grad()).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Checkpoint::new(cfg, vocab, params)
    }
}

/// Elementwise mean of parameter maps with identical names and shapes.
/// Averaging a single map returns it unchanged.
pub fn average_params(maps: &[ParamMap]) -> Result<ParamMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Contract("averaging zero checkpoints".into()))?;
    for m in &maps[1..] {
        if m.len() != first.len() || !m.keys().eq(first.keys()) {
            return Err(Error::Checkpoint("checkpoint averaging: parameter sets differ".into()));
        }
    }
    let inv = 1.0 / maps.len() as f64;
    let mut out = ParamMap::new();
    for (name, t0) in first {
        for m in &maps[1..] {
            if m[name].shape() != t0.shape() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint averaging: {name} shapes differ"
                )));
            }
        }
        let mut acc = t0.data().to_vec();
        for m in &maps[1..] {
            for (a, &v) in acc.iter_mut().zip(m[name].data()) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a *= inv;
        }
        out.insert(name.clone(), Tensor::new(t0.shape().to_vec(), acc)?.with_grad());
    }
    Ok(out)
}
