//! Model persistence in the de-facto splat interchange layout: a binary
//! little-endian point cloud with 59 optimized attributes per Gaussian
//! (plus a 3-float normal placeholder), loadable by common splat viewers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{GaussianSet, OpacityMode, SH_REST_COEFFS, SH_REST_DIM};

/// Property names in file order.
fn property_names() -> Vec<String> {
    let mut names = vec!["x", "y", "z", "nx", "ny", "nz"]
        .into_iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    for i in 0..3 {
        names.push(format!("f_dc_{i}"));
    }
    for i in 0..SH_REST_DIM {
        names.push(format!("f_rest_{i}"));
    }
    names.push("opacity".to_string());
    for i in 0..3 {
        names.push(format!("scale_{i}"));
    }
    for i in 0..4 {
        names.push(format!("rot_{i}"));
    }
    names
}

/// Write the model as little-endian 32-bit floats. Raw (unactivated)
/// parameters are stored, matching the interchange convention.
pub fn save_model(path: &Path, set: &GaussianSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    write!(w, "ply\nformat binary_little_endian 1.0\n").map_err(io_err)?;
    write!(w, "element vertex {}\n", set.count).map_err(io_err)?;
    for name in property_names() {
        write!(w, "property float {name}\n").map_err(io_err)?;
    }
    write!(w, "end_header\n").map_err(io_err)?;

    for i in 0..set.count {
        for k in 0..3 {
            w.write_f32::<LittleEndian>(set.positions[3 * i + k] as f32)
                .map_err(io_err)?;
        }
        for _ in 0..3 {
            w.write_f32::<LittleEndian>(0.0).map_err(io_err)?; // normals placeholder
        }
        for k in 0..3 {
            w.write_f32::<LittleEndian>(set.sh_dc[3 * i + k] as f32)
                .map_err(io_err)?;
        }
        // Disk layout is channel-major; memory is coefficient-major.
        for ch in 0..3 {
            for c in 0..SH_REST_COEFFS {
                w.write_f32::<LittleEndian>(set.sh_rest[SH_REST_DIM * i + 3 * c + ch] as f32)
                    .map_err(io_err)?;
            }
        }
        w.write_f32::<LittleEndian>(set.raw_opacities[i] as f32)
            .map_err(io_err)?;
        for k in 0..3 {
            w.write_f32::<LittleEndian>(set.log_scales[3 * i + k] as f32)
                .map_err(io_err)?;
        }
        for k in 0..4 {
            w.write_f32::<LittleEndian>(set.rotations[4 * i + k] as f32)
                .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Read a model saved by [`save_model`] (or any splat file with the same
/// property set, in any property order).
pub fn load_model(path: &Path) -> Result<GaussianSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut line = String::new();
    let mut read_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        let n = r
            .read_line(&mut line)
            .map_err(|_| Error::data("malformed header"))?;
        if n == 0 {
            return Err(Error::data("malformed header: unexpected end of file"));
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(&mut r)? != "ply" {
        return Err(Error::data("malformed header: missing ply magic"));
    }
    if read_line(&mut r)? != "format binary_little_endian 1.0" {
        return Err(Error::data("unsupported ply format"));
    }
    let mut count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    loop {
        let l = read_line(&mut r)?;
        if l == "end_header" {
            break;
        }
        if let Some(rest) = l.strip_prefix("element vertex ") {
            count = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| Error::data("malformed vertex count"))?,
            );
        } else if let Some(rest) = l.strip_prefix("property float ") {
            properties.push(rest.trim().to_string());
        } else if l.starts_with("element ") || l.starts_with("comment ") {
            // Other elements unsupported; comments ignored.
            if l.starts_with("element ") {
                return Err(Error::data("unsupported extra ply element"));
            }
        } else {
            return Err(Error::data(format!("malformed header line: {l}")));
        }
    }
    let count = count.ok_or_else(|| Error::data("header lacks a vertex element"))?;

    let expected = property_names();
    let mut indices = Vec::with_capacity(expected.len());
    for name in &expected {
        let idx = properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::data(format!("missing property {name}")))?;
        indices.push(idx);
    }

    let stride = properties.len();
    let mut payload = vec![0u8; count * stride * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::data("truncated payload"))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::data("trailing bytes after payload"));
    }

    let value = |row: usize, prop: usize| -> f64 {
        let off = (row * stride + indices[prop]) * 4;
        f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()) as f64
    };

    let mut set = GaussianSet::with_count(count);
    set.opacity_mode = OpacityMode::Sigmoid;
    for i in 0..count {
        for k in 0..3 {
            set.positions[3 * i + k] = value(i, k);
        }
        for k in 0..3 {
            set.sh_dc[3 * i + k] = value(i, 6 + k);
        }
        for ch in 0..3 {
            for c in 0..SH_REST_COEFFS {
                set.sh_rest[SH_REST_DIM * i + 3 * c + ch] =
                    value(i, 9 + ch * SH_REST_COEFFS + c);
            }
        }
        set.raw_opacities[i] = value(i, 9 + SH_REST_DIM);
        for k in 0..3 {
            set.log_scales[3 * i + k] = value(i, 10 + SH_REST_DIM + k);
        }
        for k in 0..4 {
            set.rotations[4 * i + k] = value(i, 13 + SH_REST_DIM + k);
        }
    }
    Ok(set)
}
