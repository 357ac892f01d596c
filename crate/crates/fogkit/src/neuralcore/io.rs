//! `FOGM1` weight files: magic, version byte, serialized architecture,
//! named arrays as (name length, name, rank, little-endian u32 dims, f32
//! payload), and optionally the Adam state for resumable training.

use std::fs;
use std::path::Path;

use crate::error::{FogError, Result};

use super::arch::ArchSpec;
use super::params::{AdamState, ArrayId, ParamArrays, ParamSet};

const MAGIC: &[u8; 5] = b"FOGM1";
const VERSION: u8 = 1;

fn push_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn array_dims(arch: &ArchSpec, arrays: &ParamArrays, id: ArrayId) -> Vec<usize> {
    let len = arrays.get(id).len();
    match id {
        ArrayId::ConvW(i) => {
            let out_ch = arrays.conv[i].b.len();
            let in_ch = len / (out_ch * arch.kernel);
            vec![out_ch, in_ch, arch.kernel]
        }
        ArrayId::DenseW(i) => {
            let out = arrays.dense[i].b.len();
            vec![out, len / out]
        }
        ArrayId::OutW => vec![1, len],
        ArrayId::PretextW => {
            let out = arrays.pretext.b.len();
            vec![out, len / out]
        }
        ArrayId::ConvB(_) | ArrayId::DenseB(_) | ArrayId::OutB | ArrayId::PretextB => vec![len],
    }
}

fn write_arch(buf: &mut Vec<u8>, arch: &ArchSpec) {
    push_u32(buf, arch.input_len);
    push_u32(buf, arch.channels);
    push_u32(buf, arch.kernel);
    push_u32(buf, arch.pool);
    buf.push(arch.maxpool_after.is_some() as u8);
    push_u32(buf, arch.maxpool_after.unwrap_or(0));
    push_f64(buf, arch.dropout);
    push_u32(buf, arch.conv_filters.len());
    for &f in &arch.conv_filters {
        push_u32(buf, f);
    }
    push_u32(buf, arch.dense_units.len());
    for &u in &arch.dense_units {
        push_u32(buf, u);
    }
}

fn write_named_arrays(buf: &mut Vec<u8>, arch: &ArchSpec, arrays: &ParamArrays, prefix: &str) {
    for id in arrays.ids() {
        let name = format!("{prefix}{}", id.name());
        push_u32(buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        let dims = array_dims(arch, arrays, id);
        push_u32(buf, dims.len());
        for d in dims {
            push_u32(buf, d);
        }
        for &v in arrays.get(id) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

/// Serialize weights (f32 on disk). Pass `adam = Some(..)` to append
/// optimizer state for resumable training.
pub fn write_fogm1(
    path: impl AsRef<Path>,
    arch: &ArchSpec,
    arrays: &ParamArrays,
    adam: Option<&AdamState>,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    write_arch(&mut buf, arch);
    push_u32(&mut buf, arrays.ids().len());
    write_named_arrays(&mut buf, arch, arrays, "");
    match adam {
        Some(state) => {
            buf.push(1);
            buf.extend_from_slice(&state.step.to_le_bytes());
            write_named_arrays(&mut buf, arch, &state.m, "adam.m.");
            write_named_arrays(&mut buf, arch, &state.v, "adam.v.");
        }
        None => buf.push(0),
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(FogError::Format("FOGM1 file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn byte(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

fn read_arch(r: &mut Reader) -> Result<ArchSpec> {
    let input_len = r.u32()?;
    let channels = r.u32()?;
    let kernel = r.u32()?;
    let pool = r.u32()?;
    let has_pool = r.byte()? != 0;
    let maxpool_after = r.u32()?;
    let dropout = r.f64()?;
    let n_conv = r.u32()?;
    let conv_filters = (0..n_conv).map(|_| r.u32()).collect::<Result<_>>()?;
    let n_dense = r.u32()?;
    let dense_units = (0..n_dense).map(|_| r.u32()).collect::<Result<_>>()?;
    Ok(ArchSpec {
        input_len,
        channels,
        conv_filters,
        kernel,
        maxpool_after: has_pool.then_some(maxpool_after),
        pool,
        dense_units,
        dropout,
    })
}

fn read_named_arrays(
    r: &mut Reader,
    arch: &ArchSpec,
    prefix: &str,
    count: usize,
) -> Result<ParamArrays> {
    let mut arrays = ParamArrays::zeros(arch)?;
    let ids = arrays.ids();
    if count != ids.len() {
        return Err(FogError::Format(format!(
            "FOGM1 has {count} arrays, architecture expects {}",
            ids.len()
        )));
    }
    for id in ids {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| FogError::Format("non-UTF-8 array name".into()))?;
        let expected = format!("{prefix}{}", id.name());
        if name != expected {
            return Err(FogError::Format(format!(
                "unexpected array `{name}` (expected `{expected}`)"
            )));
        }
        let rank = r.u32()?;
        let mut total = 1usize;
        for _ in 0..rank {
            total *= r.u32()?;
        }
        let dst = arrays.get_mut(id);
        if total != dst.len() {
            return Err(FogError::Format(format!(
                "array `{name}` has {total} elements, architecture expects {}",
                dst.len()
            )));
        }
        let payload = r.take(total * 4)?;
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            dst[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    Ok(arrays)
}

/// Read a `FOGM1` file back into (architecture, arrays, optional Adam
/// state).
pub fn read_fogm1(path: impl AsRef<Path>) -> Result<(ArchSpec, ParamArrays, Option<AdamState>)> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(5)? != MAGIC {
        return Err(FogError::Format("not a FOGM1 weight file".into()));
    }
    let version = r.byte()?;
    if version != VERSION {
        return Err(FogError::Format(format!("unsupported FOGM1 version {version}")));
    }
    let arch = read_arch(&mut r)?;
    let n_arrays = r.u32()?;
    let arrays = read_named_arrays(&mut r, &arch, "", n_arrays)?;
    let adam = if r.byte()? == 1 {
        let step = r.u64()?;
        let n = arrays.ids().len();
        let m = read_named_arrays(&mut r, &arch, "adam.m.", n)?;
        let v = read_named_arrays(&mut r, &arch, "adam.v.", n)?;
        Some(AdamState { step, m, v })
    } else {
        None
    };
    Ok((arch, arrays, adam))
}

/// Convenience: read into a [`ParamSet`] (fresh zero moments when the file
/// has no Adam state).
pub fn read_fogm1_params(path: impl AsRef<Path>) -> Result<(ArchSpec, ParamSet)> {
    let (arch, arrays, adam) = read_fogm1(path)?;
    let dims = arch.dims()?;
    let adam = adam.unwrap_or_else(|| AdamState {
        step: 0,
        m: ParamArrays::zeros_from_dims(&arch, &dims),
        v: ParamArrays::zeros_from_dims(&arch, &dims),
    });
    Ok((arch, ParamSet { arrays, adam }))
}
