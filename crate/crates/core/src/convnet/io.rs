//! `EHCN` model checkpoints.
//!
//! Layout (little-endian): magic `EHCN`, version `u32`, then height, width, the three conv
//! channel counts, hidden units, output classes and init seed as `u64`, then every
//! parameter tensor in declaration order as `f64`.

use std::fs;
use std::path::Path;

use super::{ConvNetArch, ConvNetModel, Params};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EHCN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &ConvNetModel) -> Vec<u8> {
    let a = &model.arch;
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    for v in [
        a.height,
        a.width,
        a.conv_channels[0],
        a.conv_channels[1],
        a.conv_channels[2],
    ] {
        w.usize(v);
    }
    w.usize(a.dense_hidden);
    w.usize(a.output_classes);
    w.u64(model.seed);
    for t in &model.params.tensors {
        w.f64s(t);
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ConvNetModel> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = r.count(0)?;
    }
    let seed = r.u64()?;
    let arch = ConvNetArch::new(
        dims[0],
        dims[1],
        [dims[2], dims[3], dims[4]],
        dims[5],
        dims[6],
    )
    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let tensors = arch
        .tensor_lens()
        .iter()
        .map(|&n| r.f64s(n))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let params = Params { tensors };
    if !params.all_finite() {
        return Err(Error::Numeric(format!(
            "{}: checkpoint holds non-finite parameters",
            path.display()
        )));
    }
    Ok(ConvNetModel { arch, params, seed })
}

pub fn save_checkpoint(path: &Path, model: &ConvNetModel) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ConvNetModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::init_model;

    #[test]
    fn roundtrip_is_bit_exact() {
        let arch = ConvNetArch::new(16, 8, [2, 3, 4], 5, 3).unwrap();
        let model = init_model(arch, 77);
        let bytes = encode_checkpoint(&model);
        assert_eq!(bytes.len(), 8 + 8 * 8 + 8 * arch.parameter_count());
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let model = init_model(ConvNetArch::new(8, 8, [1, 1, 1], 1, 2).unwrap(), 1);
        let mut bytes = encode_checkpoint(&model);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 8], Path::new("mem")),
            Err(Error::Io { .. })
        ));
        bytes.push(0);
        assert!(matches!(
            decode_checkpoint(&bytes, Path::new("mem")),
            Err(Error::Format(_))
        ));
        let mut bad = encode_checkpoint(&model);
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, Path::new("mem")).is_err());
    }
}
