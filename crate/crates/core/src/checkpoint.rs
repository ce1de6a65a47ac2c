//! Binary dump of an [`MpsState`].
//!
//! Layout, all little-endian:
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | `b"MPSCKPT\0"`                         |
//! | version          | `u32` (currently 1)                    |
//! | n_sites          | `u64`                                  |
//! | system site      | `u64`, `u64::MAX` when untagged        |
//! | discarded weight | `f64`                                  |
//! | shape table      | `n_sites` x (`u64` left, phys, right)  |
//! | lambdas          | per internal bond, `right[k]` x `f64`  |
//! | gammas           | per site, row-major `(a, i, b)` as `f64` re, im |

use std::io::{self, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::mps::{MpsError, MpsState, Tensor3};

pub const MAGIC: &[u8; 8] = b"MPSCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Mps(#[from] MpsError),
}

pub fn write_checkpoint<W: Write>(state: &MpsState, mut w: W) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u64::<LE>(state.len() as u64)?;
    w.write_u64::<LE>(state.system_site_index().map_or(u64::MAX, |s| s as u64))?;
    w.write_f64::<LE>(state.discarded_weight())?;
    for g in state.gammas() {
        let (l, d, r) = g.shape();
        for x in [l, d, r] {
            w.write_u64::<LE>(x as u64)?;
        }
    }
    for lam in state.lambdas() {
        for &x in lam {
            w.write_f64::<LE>(x)?;
        }
    }
    for g in state.gammas() {
        for z in g.data() {
            w.write_f64::<LE>(z.re)?;
            w.write_f64::<LE>(z.im)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<MpsState, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let n = r.read_u64::<LE>()? as usize;
    if n == 0 {
        return Err(CheckpointError::Corrupt("zero sites".into()));
    }
    let sys = r.read_u64::<LE>()?;
    let system_site = (sys != u64::MAX).then_some(sys as usize);
    let discarded = r.read_f64::<LE>()?;
    let mut shapes = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let l = r.read_u64::<LE>()? as usize;
        let d = r.read_u64::<LE>()? as usize;
        let rr = r.read_u64::<LE>()? as usize;
        shapes.push((l, d, rr));
    }
    let mut lambdas = Vec::with_capacity(n - 1);
    for &(_, _, right) in &shapes[..n - 1] {
        let mut lam = Vec::with_capacity(right);
        for _ in 0..right {
            lam.push(r.read_f64::<LE>()?);
        }
        lambdas.push(lam);
    }
    let mut gammas = Vec::with_capacity(n);
    for &(l, d, rr) in &shapes {
        let len = l
            .checked_mul(d)
            .and_then(|x| x.checked_mul(rr))
            .ok_or_else(|| CheckpointError::Corrupt("tensor size overflow".into()))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let re = r.read_f64::<LE>()?;
            let im = r.read_f64::<LE>()?;
            data.push(C64::new(re, im));
        }
        gammas.push(Tensor3::from_vec(l, d, rr, data)?);
    }
    let mut state = MpsState::from_parts(gammas, lambdas, system_site)?;
    state.set_discarded_weight(discarded);
    Ok(state)
}
