//! Binary checkpoint format.
//!
//! ```text
//! "SPD1"
//! u32 config_len, config_len bytes of UTF-8 JSON (SpdConfig)
//! u32 tensor_count
//! per tensor, in lexicographic name order:
//!   u32 name_len, name bytes, u32 ndim, ndim × u32 dims, f32 data
//! ```
//!
//! All integers and floats are little-endian. Parameters are always stored
//! as 32-bit floats regardless of the in-memory precision.

use std::path::Path;

use crate::binio::{put_u32, Reader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

use super::{SpdConfig, SpdModel};

pub const MAGIC: &[u8; 4] = b"SPD1";

pub fn to_bytes<T: Scalar>(model: &SpdModel<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let json = serde_json::to_vec(model.config())?;
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, model.params().len())?;
    for (name, t) in model.params().iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for &x in t.data() {
            let v = x.to_f64_lossy() as f32;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<SpdModel<f32>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let len = r.u32()? as usize;
    let config: SpdConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    config.validate()?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new(0);
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("parameter `{name}`: {e}")))?;
        params.insert(name, t).map_err(|e| Error::Format(e.to_string()))?;
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    SpdModel::from_parts(config, params)
}

pub fn save<T: Scalar>(model: &SpdModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SpdModel<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn tiny(variant: Variant) -> SpdModel<f32> {
        let mut c = SpdConfig::desk(40, vec!["en".into(), "xa".into()]);
        c.dim = 8;
        c.heads = 2;
        c.ffn_dim = 16;
        c.prompt_len = 3;
        c.max_seq_len = 6;
        c.variant = variant;
        SpdModel::new(c, 11).unwrap()
    }

    #[test]
    fn round_trip_preserves_parameters() {
        for v in [Variant::Spd, Variant::Utspd, Variant::EncoderOnly] {
            let m = tiny(v);
            let bytes = to_bytes(&m).unwrap();
            assert_eq!(&bytes[..4], MAGIC);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back.config(), m.config());
            for ((n1, t1), (n2, t2)) in back.params().iter().zip(m.params().iter()) {
                assert_eq!(n1, n2);
                assert_eq!(t1.data(), t2.data());
            }
            assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = to_bytes(&tiny(Variant::Spd)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }
}
