//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    4 bytes  "EVIM"
//! version  u32      currently 1
//! classes  u32
//! psi      u32 layer count, then (in, out) u32 pairs
//! theta    (embed, attention) u32 pair
//! phi      (in, out) u32 pair
//! pi       u32 layer count, then (in, out) u32 pairs
//! data     every parameter group in declaration order, each array
//!          row-major as f64 bit patterns
//! ```
//!
//! Round-trips are bit-exact: floats are moved via their bit patterns and
//! never reformatted.

use std::fs;
use std::path::Path;

use super::{Architecture, Dense, MilParams, ALL_GROUPS};
use crate::error::{Error, Result};
use crate::numcore::Array;

const MAGIC: &[u8; 4] = b"EVIM";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, a: &Array) {
        for &v in a.iter() {
            self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }

    fn layer_shapes(&mut self, layers: &[Dense]) {
        self.u32(layers.len() as u32);
        for d in layers {
            self.u32(d.in_dim() as u32);
            self.u32(d.out_dim() as u32);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, shape: &[usize]) -> Result<Array> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(Array::from_vec(shape, data))
    }

    fn layer_shapes(&mut self) -> Result<Vec<(usize, usize)>> {
        let n = self.u32()? as usize;
        if n == 0 || n > 64 {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| Ok((self.u32()? as usize, self.u32()? as usize))).collect()
    }

    fn dense(&mut self, (i, o): (usize, usize)) -> Result<Dense> {
        Ok(Dense { w: self.f64s(&[i, o])?, b: self.f64s(&[o])? })
    }
}

pub fn save(params: &MilParams, path: &Path) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(params.arch.num_classes as u32);
    w.layer_shapes(&params.psi);
    w.u32(params.theta_v.shape()[0] as u32);
    w.u32(params.theta_v.shape()[1] as u32);
    w.u32(params.phi.in_dim() as u32);
    w.u32(params.phi.out_dim() as u32);
    w.layer_shapes(&params.pi);
    for g in ALL_GROUPS {
        for a in params.group(g) {
            w.f64s(a);
        }
    }
    fs::write(path, w.buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MilParams> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let classes = r.u32()? as usize;
    let psi_shapes = r.layer_shapes()?;
    let theta = (r.u32()? as usize, r.u32()? as usize);
    let phi_shape = (r.u32()? as usize, r.u32()? as usize);
    let pi_shapes = r.layer_shapes()?;

    let psi: Vec<Dense> = psi_shapes.iter().map(|&s| r.dense(s)).collect::<Result<_>>()?;
    let theta_v = r.f64s(&[theta.0, theta.1])?;
    let theta_w = r.f64s(&[theta.1, 1])?;
    let phi = r.dense(phi_shape)?;
    let pi: Vec<Dense> = pi_shapes.iter().map(|&s| r.dense(s)).collect::<Result<_>>()?;
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }

    let arch = Architecture {
        input_dim: psi_shapes[0].0,
        encoder: psi_shapes.iter().map(|&(_, o)| o).collect(),
        attention_dim: theta.1,
        residual_hidden: pi_shapes[0].1,
        num_classes: classes,
    };
    if phi_shape != (arch.embed_dim(), classes) || theta.0 != arch.embed_dim() {
        return Err(Error::Format("inconsistent checkpoint shapes".into()));
    }
    Ok(MilParams { arch, psi, theta_v, theta_w, phi, pi })
}
