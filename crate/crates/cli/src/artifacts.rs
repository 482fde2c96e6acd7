//! Run artifacts: macroscopic profiles CSV, flat binary field snapshots with
//! a 64-byte header, and the JSON report. All writers format deterministic
//! byte streams.

use anyhow::{bail, Context};
use std::io::{Read, Write};
use std::path::Path;

use knudsen_core::field::KineticField;
use knudsen_core::linear::{extract_macro, i_minus_p_nu_profile};
use knudsen_core::operator::{OperatorSet, WeightSpec};
use knudsen_core::report::RunReport;
use knudsen_core::transport::SlabGrid;
use knudsen_core::Scalar;

const FIELD_MAGIC: &[u8; 8] = b"KNFIELD1";

/// Profile CSV: fixed column schema, full-precision scientific notation.
pub fn write_profiles_csv(
    path: &Path,
    op: &OperatorSet<Scalar>,
    weight: &WeightSpec<Scalar>,
    slab: &SlabGrid<Scalar>,
    field: &KineticField<Scalar>,
) -> anyhow::Result<()> {
    let mac = extract_macro(op, field);
    let w = weight.values(op.grid());
    let sup = field.sup_w_profile(&w);
    let ip = i_minus_p_nu_profile(op, field);
    let mut out = String::new();
    out.push_str("x,a,b1,b2,b3,c,sup_wf,ip_nu_norm\n");
    for (i, &x) in slab.x_all().iter().enumerate() {
        out.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            x, mac.a[i], mac.b1[i], mac.b2[i], mac.b3[i], mac.c[i], sup[i], ip[i]
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Flat binary snapshot: 64-byte header (magic, version, grid hash, x-count,
/// v-count, slab length), then `x_count * v_count` doubles, x-major.
pub fn write_field_bin(
    path: &Path,
    grid_hash: u64,
    slab: &SlabGrid<Scalar>,
    field: &KineticField<Scalar>,
) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = Vec::with_capacity(64);
    header.extend_from_slice(FIELD_MAGIC);
    header.extend_from_slice(&1u32.to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    header.extend_from_slice(&grid_hash.to_le_bytes());
    header.extend_from_slice(&(field.n_x() as u32).to_le_bytes());
    header.extend_from_slice(&(field.n_v() as u32).to_le_bytes());
    header.extend_from_slice(&slab.d().to_le_bytes());
    header.resize(64, 0);
    f.write_all(&header)?;
    for i in 0..field.n_x() {
        for j in 0..field.n_v() {
            f.write_all(&field.data[(j, i)].to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a field snapshot, checking the header against the grid hash.
pub fn read_field_bin(path: &Path, expect_hash: u64) -> anyhow::Result<(usize, usize, f64, KineticField<Scalar>)> {
    let mut f = std::io::BufReader::new(
        std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    );
    let mut header = [0u8; 64];
    f.read_exact(&mut header)?;
    if &header[0..8] != FIELD_MAGIC {
        bail!("{} is not a field snapshot", path.display());
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != 1 {
        bail!("unsupported snapshot version {version}");
    }
    let hash = u64::from_le_bytes(header[16..24].try_into().unwrap());
    if hash != expect_hash {
        bail!("snapshot grid hash {hash:016x} does not match configured grid {expect_hash:016x}");
    }
    let n_x = u32::from_le_bytes(header[24..28].try_into().unwrap()) as usize;
    let n_v = u32::from_le_bytes(header[28..32].try_into().unwrap()) as usize;
    let d = f64::from_le_bytes(header[32..40].try_into().unwrap());
    let mut buf = vec![0u8; n_x * n_v * 8];
    f.read_exact(&mut buf)?;
    let mut field = KineticField::zeros(n_v, n_x);
    let mut idx = 0usize;
    for i in 0..n_x {
        for j in 0..n_v {
            field.data[(j, i)] = f64::from_le_bytes(buf[idx..idx + 8].try_into().unwrap());
            idx += 8;
        }
    }
    Ok((n_x, n_v, d, field))
}

pub fn write_report_json(path: &Path, report: &RunReport) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> anyhow::Result<RunReport> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
