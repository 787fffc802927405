//! Single-file checkpoint container.
//!
//! Layout: magic `SCGC`, u32 version, length-prefixed UTF-8 config echo,
//! then count-prefixed `(name, TSR v1 blob)` entries. Training state that
//! is not a tensor (epoch counter, optimizer step, RNG position) rides
//! along as reserved `meta.*` entries; parameters, batch-norm buffers and
//! optimizer moments use the `param.` / `buffer.` / `optim.` prefixes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ScgNet;
use crate::optim::Optimizer;
use crate::tensor::io::{read_tsr, write_tsr, Dtype};
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 4] = b"SCGC";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_text: String,
    pub epoch: u64,
    pub optimizer_step: u64,
    pub rng_word_pos: u128,
    /// Model parameters in visitor order.
    pub params: Vec<(String, Vec<f64>, Vec<usize>)>,
    /// Batch-norm running statistics in visitor order.
    pub buffers: Vec<(String, Vec<f64>)>,
    /// Optimizer moments, name-ordered.
    pub optim_state: Vec<(String, Vec<f64>)>,
}

fn u128_to_limbs(v: u128) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = ((v >> (32 * i)) & 0xFFFF_FFFF) as f64;
    }
    out
}

fn limbs_to_u128(limbs: &[f64]) -> u128 {
    let mut v = 0u128;
    for (i, &limb) in limbs.iter().take(4).enumerate() {
        v |= (limb as u128) << (32 * i);
    }
    v
}

impl Checkpoint {
    /// Snapshot of a model, its optimizer and the run position.
    pub fn capture(
        model: &mut ScgNet,
        optimizer: &Optimizer,
        config_text: String,
        epoch: u64,
        rng_word_pos: u128,
    ) -> Self {
        let mut params = Vec::new();
        model.for_each_param(&mut |name, t| {
            params.push((name, t.data().to_vec(), t.shape().to_vec()));
        });
        let mut buffers = Vec::new();
        model.for_each_buffer(&mut |name, cell| {
            buffers.push((name, cell.borrow().clone()));
        });
        Checkpoint {
            config_text,
            epoch,
            optimizer_step: optimizer.step_count(),
            rng_word_pos,
            params,
            buffers,
            optim_state: optimizer.state_entries(),
        }
    }

    /// Writes parameters and buffers back into a freshly built model.
    pub fn restore_model(&self, model: &mut ScgNet) -> Result<()> {
        let leaves: Vec<Tensor> = self
            .params
            .iter()
            .map(|(_, data, shape)| Tensor::parameter(data.clone(), shape))
            .collect::<Result<_>>()?;
        model.set_params(&leaves)?;
        let mut idx = 0usize;
        let mut bad = false;
        model.for_each_buffer(&mut |name, cell| {
            match self.buffers.get(idx) {
                Some((saved_name, values)) if *saved_name == name && values.len() == cell.borrow().len() => {
                    *cell.borrow_mut() = values.clone();
                }
                _ => bad = true,
            }
            idx += 1;
        });
        if bad || idx != self.buffers.len() {
            return Err(Error::CorruptFile("buffer set does not match the model".into()));
        }
        Ok(())
    }

    pub fn restore_optimizer(&self, optimizer: &mut Optimizer) {
        optimizer.restore_state(self.optimizer_step, &self.optim_state);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        let cfg = self.config_text.as_bytes();
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(cfg)?;

        let meta = [
            ("meta.epoch".to_string(), vec![self.epoch as f64], vec![1]),
            ("meta.optim_step".to_string(), vec![self.optimizer_step as f64], vec![1]),
            ("meta.rng_word_pos".to_string(), u128_to_limbs(self.rng_word_pos).to_vec(), vec![4]),
        ];
        let entry_count = meta.len()
            + self.params.len()
            + self.buffers.len()
            + self.optim_state.len();
        w.write_all(&(entry_count as u64).to_le_bytes())?;

        let write_entry = |w: &mut BufWriter<File>, name: &str, data: &[f64], shape: &[usize]| -> Result<()> {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u64).to_le_bytes())?;
            w.write_all(bytes)?;
            write_tsr(w, data, shape, Dtype::F64)
        };
        for (name, data, shape) in &meta {
            write_entry(&mut w, name, data, shape)?;
        }
        for (name, data, shape) in &self.params {
            write_entry(&mut w, &format!("param.{name}"), data, shape)?;
        }
        for (name, data) in &self.buffers {
            write_entry(&mut w, &format!("buffer.{name}"), data, &[data.len()])?;
        }
        for (name, data) in &self.optim_state {
            write_entry(&mut w, &format!("optim.{name}"), data, &[data.len()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::CorruptFile(format!("bad checkpoint magic {magic:?}")));
        }
        let mut v = [0u8; 4];
        read_exact(&mut r, &mut v)?;
        let version = u32::from_le_bytes(v);
        if version != CKPT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: CKPT_VERSION });
        }
        let cfg_len = read_u64(&mut r)? as usize;
        if cfg_len > 1 << 20 {
            return Err(Error::CorruptFile("config echo too large".into()));
        }
        let mut cfg = vec![0u8; cfg_len];
        read_exact(&mut r, &mut cfg)?;
        let config_text =
            String::from_utf8(cfg).map_err(|_| Error::CorruptFile("config echo not UTF-8".into()))?;

        let entry_count = read_u64(&mut r)? as usize;
        let mut epoch = None;
        let mut optimizer_step = None;
        let mut rng_word_pos = None;
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        let mut optim_state = Vec::new();
        for _ in 0..entry_count {
            let name_len = read_u64(&mut r)? as usize;
            if name_len > 4096 {
                return Err(Error::CorruptFile("entry name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name =
                String::from_utf8(name).map_err(|_| Error::CorruptFile("entry name not UTF-8".into()))?;
            let (data, shape, _) = read_tsr(&mut r)?;
            if let Some(rest) = name.strip_prefix("param.") {
                params.push((rest.to_string(), data, shape));
            } else if let Some(rest) = name.strip_prefix("buffer.") {
                buffers.push((rest.to_string(), data));
            } else if let Some(rest) = name.strip_prefix("optim.") {
                optim_state.push((rest.to_string(), data));
            } else {
                match name.as_str() {
                    "meta.epoch" => epoch = data.first().map(|&v| v as u64),
                    "meta.optim_step" => optimizer_step = data.first().map(|&v| v as u64),
                    "meta.rng_word_pos" => rng_word_pos = Some(limbs_to_u128(&data)),
                    other => {
                        return Err(Error::CorruptFile(format!("unknown entry '{other}'")));
                    }
                }
            }
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(Error::CorruptFile("trailing bytes after entries".into()));
        }
        Ok(Checkpoint {
            config_text,
            epoch: epoch.ok_or_else(|| Error::CorruptFile("missing meta.epoch".into()))?,
            optimizer_step: optimizer_step
                .ok_or_else(|| Error::CorruptFile("missing meta.optim_step".into()))?,
            rng_word_pos: rng_word_pos
                .ok_or_else(|| Error::CorruptFile("missing meta.rng_word_pos".into()))?,
            params,
            buffers,
            optim_state,
        })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CorruptFile("truncated checkpoint".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::optim::OptimizerKind;

    fn tiny_model() -> ScgNet {
        ScgNet::new(&ModelConfig {
            backbone_widths: vec![4, 4, 4],
            patch_size: 16,
            node_h: 2,
            node_w: 2,
            classes: 3,
            gcn_hidden: 4,
            seed: 3,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn capture_tiny() -> Checkpoint {
        let mut model = tiny_model();
        let opt = Optimizer::new(OptimizerKind::Adam, 1e-3, 0.9);
        Checkpoint::capture(&mut model, &opt, "seed = 3\n".into(), 2, 12345678901234567890u128)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.scgc");
        let p2 = dir.path().join("b.scgc");
        let ckpt = capture_tiny();
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded.epoch, 2);
        assert_eq!(loaded.rng_word_pos, 12345678901234567890u128);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn restore_gives_equal_parameters_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.scgc");
        let mut model = tiny_model();
        let opt = Optimizer::new(OptimizerKind::Adam, 1e-3, 0.9);
        let ckpt = Checkpoint::capture(&mut model, &opt, String::new(), 0, 0);
        ckpt.save(&path).unwrap();

        let mut other = tiny_model();
        // perturb, then restore
        let mut leaves = Vec::new();
        other.for_each_param(&mut |_, t| {
            leaves.push(Tensor::parameter(t.data().iter().map(|v| v + 1.0).collect(), t.shape()).unwrap())
        });
        other.set_params(&leaves).unwrap();
        Checkpoint::load(&path).unwrap().restore_model(&mut other).unwrap();

        let mut a = Vec::new();
        model.for_each_param(&mut |_, t| a.push(t.data().to_vec()));
        let mut b = Vec::new();
        other.for_each_param(&mut |_, t| b.push(t.data().to_vec()));
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_corrupt_without_partial_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.scgc");
        capture_tiny().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 17]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn wrong_version_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.scgc");
        capture_tiny().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn rng_word_pos_limbs_roundtrip() {
        for v in [0u128, 1, u64::MAX as u128 + 17, (1u128 << 100) + 12345] {
            assert_eq!(limbs_to_u128(&u128_to_limbs(v)), v);
        }
    }
}
