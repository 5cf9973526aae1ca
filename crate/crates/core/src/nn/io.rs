//! Flat little-endian parameter files.
//!
//! Layout: `"OEWB"`, `version: u32`, `activation: u32`, `flags: u32`
//! (bit 0 = branch head present), `dim_count: u32`, `dims: [u32]`, then per
//! layer the row-major `f64` weight block followed by the bias block, then the
//! branch weights and bias when present.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, BranchHead, NetworkParams};

pub const MAGIC: &[u8; 4] = b"OEWB";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(params: &NetworkParams, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let act: u32 = match params.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    };
    w.write_all(&act.to_le_bytes())?;
    let flags: u32 = u32::from(params.branch.is_some());
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&(params.layer_dims.len() as u32).to_le_bytes())?;
    for &d in &params.layer_dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn params_to_bytes(params: &NetworkParams) -> Vec<u8> {
    let mut buf = Vec::new();
    write_params(params, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::data(self.name, None, "truncated parameter file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn params_from_bytes(buf: &[u8], name: &str) -> Result<NetworkParams> {
    let mut r = Reader { buf, pos: 0, name };
    if r.take(4)? != MAGIC {
        return Err(Error::data(name, None, "bad magic, not an OEWB parameter file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(name, None, format!("unsupported version {version}")));
    }
    let activation = match r.u32()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => return Err(Error::data(name, None, format!("unknown activation code {other}"))),
    };
    let flags = r.u32()?;
    let count = r.u32()? as usize;
    if !(2..=1024).contains(&count) {
        return Err(Error::data(name, None, format!("implausible layer count {count}")));
    }
    let dims = (0..count)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        let data = (0..w[0] * w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        weights.push(Matrix::from_vec(w[1], w[0], data)?);
        biases.push((0..w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    }
    let branch = if flags & 1 == 1 {
        let h = dims[dims.len() - 2];
        Some(BranchHead {
            weights: (0..h).map(|_| r.f64()).collect::<Result<Vec<_>>>()?,
            bias: r.f64()?,
        })
    } else {
        None
    };
    if r.pos != buf.len() {
        return Err(Error::data(name, None, "trailing bytes after parameters"));
    }
    let params = NetworkParams {
        layer_dims: dims,
        weights,
        biases,
        branch,
        activation,
    };
    params.validate().map_err(|e| Error::data(name, None, e.to_string()))?;
    Ok(params)
}

pub fn save_params(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&params_to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<NetworkParams> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    params_from_bytes(&buf, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    proptest! {
        #[test]
        fn round_trip(seed in 0u64..1000, hidden in 1usize..6, branch: bool, tanh: bool) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let act = if tanh { Activation::Tanh } else { Activation::Relu };
            let p = NetworkParams::init(&[3, hidden, 2], act, branch, &mut rng).unwrap();
            let bytes = params_to_bytes(&p);
            prop_assert_eq!(params_from_bytes(&bytes, "mem").unwrap(), p);
        }
    }

    #[test]
    fn header_layout() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let p = NetworkParams::init(&[2, 3], Activation::Tanh, false, &mut rng).unwrap();
        let b = params_to_bytes(&p);
        assert_eq!(&b[..4], b"OEWB");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(b.len(), 4 + 4 * 4 + 2 * 4 + 8 * (6 + 3));
        assert_eq!(f64::from_le_bytes(b[28..36].try_into().unwrap()), p.weights[0][(0, 0)]);
    }

    #[test]
    fn rejects_corruption() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let p = NetworkParams::init(&[2, 3], Activation::Relu, false, &mut rng).unwrap();
        let mut b = params_to_bytes(&p);
        assert!(params_from_bytes(&b[..b.len() - 1], "t").is_err());
        b[0] = b'X';
        assert!(params_from_bytes(&b, "t").is_err());
    }
}
