//! Binary model checkpoints.
//!
//! Layout (all integers little-endian): magic `CRVM`, version `u32`, tensor
//! count `u32`, then per tensor: name length `u32` + UTF-8 bytes, rank `u32`,
//! dims as `u64` each, values as IEEE-754 `f64`. Values are copied verbatim,
//! so save/load round-trips bit-exactly.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::net::{ModelParams, Tensor};

const MAGIC: &[u8; 4] = b"CRVM";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.tensors.len() as u32).to_le_bytes())?;
    for t in &params.tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for &d in &t.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse { line: 0, message: "bad checkpoint magic".into() });
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Parse {
            line: 0,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Parse {
            line: 0,
            message: "tensor name is not UTF-8".into(),
        })?;
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            dims.push(u64::from_le_bytes(buf) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(Tensor { name, dims, data });
    }
    Ok(ModelParams { tensors })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{DemandNet, NetConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let net = DemandNet::new(NetConfig {
            num_files: 5,
            input_len: 3,
            horizon: 2,
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ff_dim: 16,
        })
        .unwrap();
        let params = net.init_params(13);
        let mut buf = Vec::new();
        write_checkpoint(&params, &mut buf).unwrap();
        let loaded = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(loaded, params);
        let mut buf2 = Vec::new();
        write_checkpoint(&loaded, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(read_checkpoint(&b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00"[..]).is_err());
    }
}
