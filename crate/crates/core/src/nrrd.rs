//! NRRD reader/writer for binary masks.
//!
//! Only the subset needed for masks is supported: 3D, `uint8`, axis-aligned
//! `space directions` in the left-posterior-superior space, raw or gzip
//! encoding, attached data.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::volume::{BinaryMask, Grid, VolumeError};

pub const MAGIC: &str = "NRRD0004";

#[derive(Debug, Error)]
pub enum NrrdError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not an NRRD file (missing magic)")]
    BadMagic,
    #[error("missing header field `{0}`")]
    MissingField(&'static str),
    #[error("unsupported {field}: {value}")]
    Unsupported { field: &'static str, value: String },
    #[error("malformed {field}: {value}")]
    Malformed { field: &'static str, value: String },
    #[error("space directions must be axis-aligned and positive, got {0}")]
    NotAxisAligned(String),
    #[error("data block: {0}")]
    Data(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Serialize a mask to NRRD bytes (raw encoding, one byte per voxel).
pub fn encode(mask: &BinaryMask) -> Vec<u8> {
    let g = mask.grid();
    let [nx, ny, nz] = g.dims();
    let [sx, sy, sz] = g.spacing();
    let [ox, oy, oz] = g.origin();
    let header = format!(
        "{MAGIC}\n\
         type: uint8\n\
         dimension: 3\n\
         space: left-posterior-superior\n\
         sizes: {nx} {ny} {nz}\n\
         space directions: ({sx},0,0) (0,{sy},0) (0,0,{sz})\n\
         kinds: domain domain domain\n\
         endian: little\n\
         encoding: raw\n\
         space origin: ({ox},{oy},{oz})\n\n"
    );
    let mut out = header.into_bytes();
    out.extend(mask.to_bytes());
    out
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), NrrdError> {
    fs::write(path, encode(mask)).map_err(|source| NrrdError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_mask(path: &Path) -> Result<BinaryMask, NrrdError> {
    let bytes = fs::read(path).map_err(|source| NrrdError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Parse NRRD bytes into a mask.
pub fn decode(bytes: &[u8]) -> Result<BinaryMask, NrrdError> {
    let (fields, data) = split_header(bytes)?;
    let get = |k: &'static str| fields.get(k).map(String::as_str).ok_or(NrrdError::MissingField(k));

    match get("type")? {
        "uint8" | "uchar" | "unsigned char" | "uint8_t" => {}
        other => {
            return Err(NrrdError::Unsupported {
                field: "type",
                value: other.into(),
            })
        }
    }
    if get("dimension")? != "3" {
        return Err(NrrdError::Unsupported {
            field: "dimension",
            value: get("dimension")?.into(),
        });
    }
    if let Ok(space) = get("space") {
        if !matches!(space, "left-posterior-superior" | "LPS") {
            return Err(NrrdError::Unsupported {
                field: "space",
                value: space.into(),
            });
        }
    }
    if fields.contains_key("data file") || fields.contains_key("datafile") {
        return Err(NrrdError::Unsupported {
            field: "data file",
            value: "detached data".into(),
        });
    }

    let sizes: Vec<usize> = get("sizes")?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| malformed("sizes", s)))
        .collect::<Result<_, _>>()?;
    let dims: [usize; 3] = sizes.try_into().map_err(|_| malformed("sizes", get("sizes").unwrap_or("")))?;

    let spacing = parse_directions(get("space directions")?)?;
    let origin = match fields.get("space origin") {
        Some(o) => {
            let v = parse_vector(o).ok_or_else(|| malformed("space origin", o))?;
            <[f64; 3]>::try_from(v).map_err(|_| malformed("space origin", o))?
        }
        None => [0.0; 3],
    };
    let grid = Grid::new(dims, spacing, origin)?;

    let raw = match get("encoding")? {
        "raw" => data.to_vec(),
        "gzip" | "gz" => {
            let mut out = Vec::with_capacity(grid.len());
            GzDecoder::new(data)
                .read_to_end(&mut out)
                .map_err(|e| NrrdError::Data(format!("gzip: {e}")))?;
            out
        }
        other => {
            return Err(NrrdError::Unsupported {
                field: "encoding",
                value: other.into(),
            })
        }
    };
    if raw.len() != grid.len() {
        return Err(NrrdError::Data(format!("expected {} voxels, found {} bytes", grid.len(), raw.len())));
    }
    Ok(BinaryMask::from_bytes(grid, &raw)?)
}

fn malformed(field: &'static str, value: &str) -> NrrdError {
    NrrdError::Malformed {
        field,
        value: value.into(),
    }
}

fn split_header(bytes: &[u8]) -> Result<(HashMap<String, String>, &[u8]), NrrdError> {
    if !bytes.starts_with(b"NRRD000") {
        return Err(NrrdError::BadMagic);
    }
    let mut fields = HashMap::new();
    let mut pos = 0;
    let mut first = true;
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| NrrdError::Data("header not terminated by a blank line".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| NrrdError::Data("non-UTF-8 header".into()))?
            .trim_end_matches('\r');
        pos += nl + 1;
        if first {
            first = false;
            continue;
        }
        if line.is_empty() {
            break;
        }
        if line.starts_with('#') || line.contains(":=") {
            continue;
        }
        if let Some((k, v)) = line.split_once(": ") {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok((fields, &bytes[pos..]))
}

fn parse_vector(s: &str) -> Option<Vec<f64>> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    inner.split(',').map(|c| c.trim().parse().ok()).collect()
}

fn parse_directions(s: &str) -> Result<[f64; 3], NrrdError> {
    let vecs: Vec<Vec<f64>> = s
        .split_whitespace()
        .map(|v| parse_vector(v).filter(|x| x.len() == 3).ok_or_else(|| malformed("space directions", s)))
        .collect::<Result<_, _>>()?;
    if vecs.len() != 3 {
        return Err(malformed("space directions", s));
    }
    let mut spacing = [0.0; 3];
    for (axis, v) in vecs.iter().enumerate() {
        for (c, &x) in v.iter().enumerate() {
            let ok = if c == axis { x > 0.0 } else { x == 0.0 };
            if !ok {
                return Err(NrrdError::NotAxisAligned(s.into()));
            }
        }
        spacing[axis] = v[axis];
    }
    Ok(spacing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn sample() -> BinaryMask {
        let grid = Grid::new([5, 4, 3], [1.5, 0.75, 3.0], [-12.25, 7.0, 0.1]).unwrap();
        BinaryMask::from_voxels(grid, [[0, 0, 0], [4, 3, 2], [2, 1, 1]]).unwrap()
    }

    #[test]
    fn round_trip_preserves_grid_exactly() {
        let m = sample();
        let bytes = encode(&m);
        assert!(bytes.starts_with(b"NRRD0004\n"));
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.grid(), m.grid());
    }

    #[test]
    fn reads_gzip() {
        let m = sample();
        let text = String::from_utf8_lossy(&encode(&m)).to_string();
        let header_end = text.find("\n\n").unwrap() + 2;
        let header = text[..header_end].replace("encoding: raw", "encoding: gzip");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&m.to_bytes()).unwrap();
        let mut bytes = header.into_bytes();
        bytes.extend(enc.finish().unwrap());
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_rotated_directions_and_other_encodings() {
        let bytes = encode(&sample());
        let s = String::from_utf8_lossy(&bytes).into_owned();
        let rotated = s.replace("(1.5,0,0) (0,0.75,0)", "(0,1.5,0) (0.75,0,0)");
        assert!(matches!(decode(rotated.as_bytes()), Err(NrrdError::NotAxisAligned(_))));
        let ascii = s.replace("encoding: raw", "encoding: ascii");
        assert!(matches!(decode(ascii.as_bytes()), Err(NrrdError::Unsupported { field: "encoding", .. })));
        let flipped = s.replace("(0,0,3)", "(0,0,-3)");
        assert!(matches!(decode(flipped.as_bytes()), Err(NrrdError::NotAxisAligned(_))));
        assert!(matches!(decode(b"P6\n"), Err(NrrdError::BadMagic)));
    }

    #[test]
    fn rejects_short_data() {
        let mut bytes = encode(&sample());
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(NrrdError::Data(_))));
    }
}
