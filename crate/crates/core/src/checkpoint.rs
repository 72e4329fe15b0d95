//! Flat binary checkpoint files.
//!
//! Layout: magic `NGPH`, version u32, parameter count u32, config length u32
//! followed by that many bytes of UTF-8 JSON (zero when absent), then per
//! parameter: name length u32 + UTF-8 name, rank u32, extents u32 each,
//! little-endian float64 values. Round-trips are bit-exact.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NGPH";
const VERSION: u32 = 1;

/// Named array: (name, extents, values).
pub type Entry = (String, Vec<usize>, Vec<f64>);

pub fn write(path: &Path, entries: &[Entry], config_json: Option<&str>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    let config = config_json.unwrap_or("");
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(config.as_bytes())?;
    for (name, shape, values) in entries {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dim(format!(
                "checkpoint entry {name}: shape {shape:?} vs {} values",
                values.len()
            )));
        }
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &dim in shape {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(Vec<Entry>, Option<String>)> {
    let mut r = BufReader::new(File::open(path)?);
    let parse_err = |detail: String, at: u64| Error::Parse {
        path: path.display().to_string(),
        location: format!("offset {at}"),
        detail,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(parse_err(format!("bad magic {magic:?}"), 0));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(parse_err(format!("unsupported version {version}"), 4));
    }
    let count = read_u32(&mut r)? as usize;
    let config_len = read_u32(&mut r)? as usize;
    let config = if config_len > 0 {
        let mut buf = vec![0u8; config_len];
        r.read_exact(&mut buf)?;
        Some(String::from_utf8(buf).map_err(|e| parse_err(format!("config not UTF-8: {e}"), 16))?)
    } else {
        None
    };
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| parse_err(format!("entry {i} name not UTF-8: {e}"), 0))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        entries.push((name, shape, values));
    }
    Ok((entries, config))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
