//! Versioned binary checkpoints for the two network models.
//!
//! Layout: the magic `QSTNN1`, one mode byte, a shape table (tensor count,
//! then rank and dimensions as little-endian u32), then every tensor's data
//! as little-endian f64 in declaration order. Round-trips are bit-exact.
//! MS-NN checkpoints append the four batch-norm running-statistic vectors
//! after the twelve parameter tensors.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::msnn::MsModel;
use crate::nn::rfb::RfbModel;
use crate::nn::tape::{BatchNormState, Tensor};

const MAGIC: &[u8; 6] = b"QSTNN1";

/// Which architecture a checkpoint belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Rfb,
    Msnn,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Rfb => 0,
            ModelKind::Msnn => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::Rfb),
            1 => Ok(ModelKind::Msnn),
            other => Err(Error::UnsupportedFormat(format!("unknown model tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rfb => "rfb",
            ModelKind::Msnn => "msnn",
        }
    }
}

/// A parsed checkpoint: model kind plus its tensors in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_rfb(model: &RfbModel) -> Self {
        Self { kind: ModelKind::Rfb, tensors: model.params().to_vec() }
    }

    pub fn from_msnn(model: &MsModel) -> Self {
        let mut tensors = model.params().to_vec();
        for state in model.bn_states() {
            tensors.push(Tensor::new(vec![state.running_mean.len()], state.running_mean.clone())
                .expect("running mean shape is consistent"));
            tensors.push(Tensor::new(vec![state.running_var.len()], state.running_var.clone())
                .expect("running variance shape is consistent"));
        }
        Self { kind: ModelKind::Msnn, tensors }
    }

    pub fn into_rfb(self) -> Result<RfbModel> {
        if self.kind != ModelKind::Rfb {
            return Err(Error::CheckpointMismatch {
                expected: ModelKind::Rfb.name().to_string(),
                found: self.kind.name().to_string(),
            });
        }
        RfbModel::from_params(self.tensors)
    }

    pub fn into_msnn(self) -> Result<MsModel> {
        if self.kind != ModelKind::Msnn {
            return Err(Error::CheckpointMismatch {
                expected: ModelKind::Msnn.name().to_string(),
                found: self.kind.name().to_string(),
            });
        }
        let mut tensors = self.tensors;
        if tensors.len() != 16 {
            return Err(Error::Corruption(format!(
                "msnn checkpoint holds {} tensors, expected 16",
                tensors.len()
            )));
        }
        let stats: Vec<Tensor> = tensors.split_off(12);
        let bn = [
            BatchNormState {
                running_mean: stats[0].data().to_vec(),
                running_var: stats[1].data().to_vec(),
            },
            BatchNormState {
                running_mean: stats[2].data().to_vec(),
                running_var: stats[3].data().to_vec(),
            },
        ];
        MsModel::from_parts(tensors, bn)
    }

    /// Serializes to the binary layout described in the module docs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for tensor in &self.tensors {
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for tensor in &self.tensors {
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(6)?;
        if magic != MAGIC {
            return Err(Error::UnsupportedFormat(format!(
                "bad magic {:?}, expected {:?}",
                &magic,
                MAGIC
            )));
        }
        let kind = ModelKind::from_tag(cursor.take(1)?[0])?;
        let count = cursor.u32()? as usize;
        if count > 4096 {
            return Err(Error::Corruption(format!("implausible tensor count {count}")));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = cursor.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::Corruption(format!("implausible tensor rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cursor.u32()? as usize);
            }
            shapes.push(shape);
        }
        let mut tensors = Vec::with_capacity(count);
        for shape in shapes {
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(cursor.take(8)?.try_into().expect("8 bytes")));
            }
            tensors.push(Tensor::new(shape, data)?);
        }
        if cursor.pos != bytes.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - cursor.pos
            )));
        }
        Ok(Self { kind, tensors })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corruption(format!(
                "truncated checkpoint: wanted {} bytes at offset {}, file holds {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
