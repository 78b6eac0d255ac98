//! Self-describing binary checkpoint: magic header, format version,
//! config snapshot, RNG seed, named parameter tensors, and optimizer
//! state. Parameters are written in lexicographic name order and values
//! as exact little-endian f64 bits, so identical runs produce identical
//! files. A version mismatch is refused with a diagnostic.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"MASKMTCH";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pos,
    Mm,
    Joint,
}

impl Stage {
    fn code(self) -> u8 {
        match self {
            Stage::Pos => 0,
            Stage::Mm => 1,
            Stage::Joint => 2,
        }
    }

    fn from_code(c: u8) -> Result<Stage> {
        match c {
            0 => Ok(Stage::Pos),
            1 => Ok(Stage::Mm),
            2 => Ok(Stage::Joint),
            other => Err(Error::Checkpoint(format!("unknown stage code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pos => "pos",
            Stage::Mm => "mm",
            Stage::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptRecord {
    pub step: u64,
    /// Per-parameter (first moment, second moment), unfrozen params only.
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: Stage,
    pub config_toml: String,
    pub seed: u64,
    pub params: BTreeMap<String, ParamRecord>,
    pub optimizer: Option<OptRecord>,
}

impl Checkpoint {
    pub fn from_store(stage: Stage, config_toml: String, seed: u64, store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|e| {
                (
                    e.name().to_string(),
                    ParamRecord { shape: e.shape().to_vec(), value: e.value().to_vec(), frozen: e.frozen() },
                )
            })
            .collect();
        Checkpoint { stage, config_toml, seed, params, optimizer: None }
    }

    pub fn config(&self) -> Result<crate::config::Config> {
        crate::config::Config::from_toml(&self.config_toml)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    if len > 1 << 30 {
        return Err(Error::Checkpoint("unreasonable string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
}

fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(data.len() as u64)?;
    for &v in data {
        w.write_u64::<LittleEndian>(v.to_bits())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    if len > 1 << 28 {
        return Err(Error::Checkpoint("unreasonable tensor length".into()));
    }
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    Ok(out)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(ckpt.stage.code())?;
    write_str(&mut w, &ckpt.config_toml)?;
    w.write_u64::<LittleEndian>(ckpt.seed)?;

    w.write_u64::<LittleEndian>(ckpt.params.len() as u64)?;
    for (name, p) in &ckpt.params {
        write_str(&mut w, name)?;
        w.write_u8(p.frozen as u8)?;
        w.write_u64::<LittleEndian>(p.shape.len() as u64)?;
        for &d in &p.shape {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        write_f64s(&mut w, &p.value)?;
    }

    match &ckpt.optimizer {
        None => w.write_u8(0)?,
        Some(opt) => {
            w.write_u8(1)?;
            w.write_u64::<LittleEndian>(opt.step)?;
            w.write_u64::<LittleEndian>(opt.moments.len() as u64)?;
            for (name, (m, v)) in &opt.moments {
                write_str(&mut w, name)?;
                write_f64s(&mut w, m)?;
                write_f64s(&mut w, v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version} is not supported (expected {VERSION})",
            path.display()
        )));
    }
    let stage = Stage::from_code(r.read_u8()?)?;
    let config_toml = read_str(&mut r)?;
    let seed = r.read_u64::<LittleEndian>()?;

    let n_params = r.read_u64::<LittleEndian>()? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..n_params {
        let name = read_str(&mut r)?;
        let frozen = r.read_u8()? != 0;
        let rank = r.read_u64::<LittleEndian>()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint("unreasonable tensor rank".into()));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let value = read_f64s(&mut r)?;
        if value.len() != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("{name}: data does not match shape")));
        }
        if params.insert(name.clone(), ParamRecord { shape, value, frozen }).is_some() {
            return Err(Error::Checkpoint(format!("{name}: duplicate parameter")));
        }
    }

    let optimizer = match r.read_u8()? {
        0 => None,
        1 => {
            let step = r.read_u64::<LittleEndian>()?;
            let count = r.read_u64::<LittleEndian>()? as usize;
            let mut moments = BTreeMap::new();
            for _ in 0..count {
                let name = read_str(&mut r)?;
                let m = read_f64s(&mut r)?;
                let v = read_f64s(&mut r)?;
                moments.insert(name, (m, v));
            }
            Some(OptRecord { step, moments })
        }
        other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
    };

    Ok(Checkpoint { stage, config_toml, seed, params, optimizer })
}

/// SHA-256 of a file, hex-encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex(&h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    fn sample() -> Checkpoint {
        let mut store = ParamStore::new();
        store.register("b.w", &[2, 2], vec![1.0, -2.0, 3.5, 0.0]);
        store.register("a.w", &[3], vec![0.1, 0.2, 0.3]);
        store.freeze_subtree("a.");
        let mut ckpt =
            Checkpoint::from_store(Stage::Pos, Config::default().to_toml(), 7, &store);
        let mut moments = BTreeMap::new();
        moments.insert("b.w".to_string(), (vec![0.0; 4], vec![1e-9; 4]));
        ckpt.optimizer = Some(OptRecord { step: 42, moments });
        ckpt
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        let ckpt = sample();
        save(&path, &ckpt).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.stage, Stage::Pos);
        assert_eq!(back.seed, 7);
        assert_eq!(back.config_toml, ckpt.config_toml);
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.optimizer, ckpt.optimizer);
        assert!(back.params["a.w"].frozen);
        assert!(!back.params["b.w"].frozen);
    }

    #[test]
    fn saving_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ckpt = sample();
        save(&p1, &ckpt).unwrap();
        save(&p2, &ckpt).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(file_hash(&p1).unwrap(), file_hash(&p2).unwrap());
    }

    #[test]
    fn version_mismatch_is_refused_with_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ckpt");
        save(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // bump the version field
        std::fs::write(&path, &bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn bad_magic_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load(Path::new("/nonexistent/x.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
        assert_eq!(err.exit_code(), 1);
    }
}
