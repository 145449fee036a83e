//! Binary model files.
//!
//! Layout, all integers little-endian: magic `NGSI1`, grammar fingerprint
//! (u64), vocabulary fingerprint (u64), then one record per tensor until end
//! of file: name length (u32), name bytes, rank (u32), dims (u32 each),
//! row-major f32 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{GuiderModel, Params, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::grammar::Grammar;

pub const MODEL_MAGIC: &[u8; 5] = b"NGSI1";

pub fn write_model<W: Write>(m: &GuiderModel<f32>, mut w: W) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&m.grammar_fingerprint.to_le_bytes())?;
    w.write_all(&m.vocab_fingerprint.to_le_bytes())?;
    for (name, shape, data) in m.params.tensors() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for d in &shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for x in data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_model(m: &GuiderModel<f32>, path: &Path) -> Result<()> {
    write_model(m, BufWriter::new(File::create(path)?))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::ModelFormat("truncated file".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

/// Parses a model without checking it against a grammar.
pub fn read_model<R: Read>(mut r: R) -> Result<GuiderModel<f32>> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let grammar_fingerprint = read_u64(&mut r)?;
    let vocab_fingerprint = read_u64(&mut r)?;

    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    loop {
        let mut first = [0u8; 4];
        match r.read(&mut first[..1])? {
            0 => break,
            _ => r.read_exact(&mut first[1..]).map_err(truncated)?,
        }
        let name_len = u32::from_le_bytes(first) as usize;
        if name_len > 256 {
            return Err(Error::ModelFormat(format!("implausible tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::ModelFormat("tensor name is not utf-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::ModelFormat(format!("tensor {name} has rank {rank}")));
        }
        let dims = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        tensors.push((name, dims, data));
    }

    let mut take = |name: &str, rank: usize| -> Result<(Vec<usize>, Vec<f32>)> {
        let pos = tensors
            .iter()
            .position(|(n, _, _)| n == name)
            .ok_or_else(|| Error::ModelFormat(format!("missing tensor {name}")))?;
        let (_, dims, data) = tensors.swap_remove(pos);
        if dims.len() != rank {
            return Err(Error::ModelFormat(format!("tensor {name} has rank {}, expected {rank}", dims.len())));
        }
        Ok((dims, data))
    };
    let mat = |(d, v): (Vec<usize>, Vec<f32>)| Array2::from_shape_vec((d[0], d[1]), v).expect("size checked on read");
    let vec1 = |(_, v): (Vec<usize>, Vec<f32>)| Array1::from_vec(v);
    let params = Params {
        embedding: mat(take(TENSOR_NAMES[0], 2)?),
        w_z: mat(take("w_z", 2)?),
        w_r: mat(take("w_r", 2)?),
        w_h: mat(take("w_h", 2)?),
        u_z: mat(take("u_z", 2)?),
        u_r: mat(take("u_r", 2)?),
        u_h: mat(take("u_h", 2)?),
        b_z: vec1(take("b_z", 1)?),
        b_r: vec1(take("b_r", 1)?),
        b_h: vec1(take("b_h", 1)?),
        w_out: mat(take("w_out", 2)?),
        b_out: vec1(take("b_out", 1)?),
    };
    if let Some((name, _, _)) = tensors.first() {
        return Err(Error::ModelFormat(format!("unexpected tensor {name}")));
    }
    check_shapes(&params)?;
    Ok(GuiderModel { params, grammar_fingerprint, vocab_fingerprint })
}

fn check_shapes(p: &Params<f32>) -> Result<()> {
    let d = p.dims();
    let expect2 = [
        ("w_z", p.w_z.dim(), (d.embedding, d.hidden)),
        ("w_r", p.w_r.dim(), (d.embedding, d.hidden)),
        ("w_h", p.w_h.dim(), (d.embedding, d.hidden)),
        ("u_z", p.u_z.dim(), (d.hidden, d.hidden)),
        ("u_r", p.u_r.dim(), (d.hidden, d.hidden)),
        ("u_h", p.u_h.dim(), (d.hidden, d.hidden)),
        ("w_out", p.w_out.dim(), (d.hidden, d.rules)),
    ];
    for (name, got, want) in expect2 {
        if got != want {
            return Err(Error::ModelFormat(format!("tensor {name} is {got:?}, expected {want:?}")));
        }
    }
    for (name, got) in [("b_z", p.b_z.len()), ("b_r", p.b_r.len()), ("b_h", p.b_h.len())] {
        if got != d.hidden {
            return Err(Error::ModelFormat(format!("tensor {name} has {got} entries, expected {}", d.hidden)));
        }
    }
    if !p.all_finite() {
        return Err(Error::ModelFormat("non-finite parameter".into()));
    }
    Ok(())
}

/// Reads a model and verifies it was trained against `g`.
pub fn load_model(path: &Path, g: &Grammar) -> Result<GuiderModel<f32>> {
    let m = read_model(BufReader::new(File::open(path)?))?;
    m.check_grammar(g)?;
    Ok(m)
}
