//! Binary cache of assembled operator data, keyed by grid hash, kernel
//! version and weight parameters. The header records the measured spectral
//! constants.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;

use crate::operator::{OperatorSet, WeightSpec, KERNEL_VERSION};
use crate::scalar::Real;
use crate::velocity::VelocityGrid;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"KNOPC\0v1";

/// Cache file name for a grid/weight pair.
pub fn cache_file_name<T: Real>(grid: &VelocityGrid<T>, weight: &WeightSpec<T>) -> String {
    format!(
        "op_{:016x}_k{}_b{:.3}_s{:.3}.bin",
        grid.hash(),
        KERNEL_VERSION,
        weight.beta.f64(),
        weight.varsigma.f64()
    )
}

fn io_err(e: std::io::Error) -> Error {
    Error::CacheIo(e.to_string())
}

/// Writes the operator to `dir`, returning the file path.
pub fn save<T: Real>(
    dir: &Path,
    op: &OperatorSet<T>,
    weight: &WeightSpec<T>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let path = dir.join(cache_file_name(op.grid(), weight));
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(io_err)?);
        f.write_all(MAGIC).map_err(io_err)?;
        f.write_all(&KERNEL_VERSION.to_le_bytes()).map_err(io_err)?;
        let n = op.grid().len() as u32;
        f.write_all(&n.to_le_bytes()).map_err(io_err)?;
        f.write_all(&op.grid().hash().to_le_bytes()).map_err(io_err)?;
        f.write_all(&weight.beta.f64().to_le_bytes()).map_err(io_err)?;
        f.write_all(&weight.varsigma.f64().to_le_bytes()).map_err(io_err)?;
        for c in op.constants() {
            f.write_all(&c.f64().to_le_bytes()).map_err(io_err)?;
        }
        let write_slice = |f: &mut dyn Write, xs: &[T]| -> Result<()> {
            for &x in xs {
                f.write_all(&x.f64().to_le_bytes()).map_err(io_err)?;
            }
            Ok(())
        };
        write_slice(&mut f, op.nu())?;
        for row in op.kmat().rows() {
            write_slice(&mut f, row.as_slice().expect("contiguous"))?;
        }
        for k in 0..5 {
            let col: Vec<T> = op.phi().column(k).to_vec();
            write_slice(&mut f, &col)?;
        }
        write_slice(&mut f, op.inv_a31())?;
        write_slice(&mut f, op.inv_a32())?;
        write_slice(&mut f, op.inv_b3())?;
    }
    std::fs::rename(&tmp, &path).map_err(io_err)?;
    Ok(path)
}

/// Loads the operator for this grid/weight if a matching cache entry
/// exists; `Ok(None)` on any key mismatch.
pub fn load<T: Real>(
    dir: &Path,
    grid: Arc<VelocityGrid<T>>,
    weight: &WeightSpec<T>,
) -> Result<Option<OperatorSet<T>>> {
    let path = dir.join(cache_file_name(&grid, weight));
    let file = match std::fs::File::open(&path) {
        Ok(f) => f,
        Err(_) => return Ok(None),
    };
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 8];
    if r.read_exact(&mut magic).is_err() || &magic != MAGIC {
        return Ok(None);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io_err)?;
    if u32::from_le_bytes(b4) != KERNEL_VERSION {
        return Ok(None);
    }
    r.read_exact(&mut b4).map_err(io_err)?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io_err)?;
    if u64::from_le_bytes(b8) != grid.hash() || n != grid.len() {
        return Ok(None);
    }
    let read_f64 = |r: &mut dyn Read| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(io_err)?;
        Ok(f64::from_le_bytes(b))
    };
    let beta = read_f64(&mut r)?;
    let varsigma = read_f64(&mut r)?;
    if beta != weight.beta.f64() || varsigma != weight.varsigma.f64() {
        return Ok(None);
    }
    let mut constants = [T::zero(); 5];
    for c in constants.iter_mut() {
        *c = T::of(read_f64(&mut r)?);
    }
    let read_vec = |r: &mut dyn Read, len: usize| -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(len);
        let mut buf = vec![0u8; len * 8];
        r.read_exact(&mut buf).map_err(io_err)?;
        for chunk in buf.chunks_exact(8) {
            out.push(T::of(f64::from_le_bytes(chunk.try_into().unwrap())));
        }
        Ok(out)
    };
    let nu = read_vec(&mut r, n)?;
    let mut kmat = Array2::<T>::zeros((n, n));
    for i in 0..n {
        let row = read_vec(&mut r, n)?;
        for (j, x) in row.into_iter().enumerate() {
            kmat[(i, j)] = x;
        }
    }
    let mut phi = Array2::<T>::zeros((n, 5));
    for k in 0..5 {
        let col = read_vec(&mut r, n)?;
        for (i, x) in col.into_iter().enumerate() {
            phi[(i, k)] = x;
        }
    }
    let inv_a31 = read_vec(&mut r, n)?;
    let inv_a32 = read_vec(&mut r, n)?;
    let inv_b3 = read_vec(&mut r, n)?;

    Ok(Some(OperatorSet::from_parts(
        grid,
        nu,
        kmat,
        phi,
        constants,
        [inv_a31, inv_a32, inv_b3],
    )))
}
