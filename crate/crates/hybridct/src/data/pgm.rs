//! Portable graymap (PGM) reader/writer restricted to P2/P5 with maxval 255
//! or 65535, plus the optional whitespace-separated `slope intercept`
//! sidecar in `<image>.meta`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, RawSlice};

/// Sidecar metadata path for an image: the image path with `.meta` appended.
pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut os = image.as_os_str().to_os_string();
    os.push(".meta");
    PathBuf::from(os)
}

/// Reads a P2 or P5 graymap. Rescale slope/intercept come from the sidecar
/// when present and default to (1.0, 0.0) otherwise.
pub fn load_image(path: &Path) -> Result<RawSlice, DataError> {
    let bytes = fs::read(path)?;
    let (slope, intercept) = read_sidecar(path)?;
    parse_pgm(&bytes, slope, intercept)
        .map_err(|msg| DataError::Format(format!("{}: {}", path.display(), msg)))
}

fn read_sidecar(image: &Path) -> Result<(f64, f64), DataError> {
    let meta = sidecar_path(image);
    if !meta.is_file() {
        return Ok((1.0, 0.0));
    }
    let text = fs::read_to_string(&meta)?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let parsed = match tokens.as_slice() {
        [s, i] => s.parse::<f64>().ok().zip(i.parse::<f64>().ok()),
        _ => None,
    };
    parsed.ok_or_else(|| {
        DataError::Format(format!("{}: sidecar must hold two ASCII floats", meta.display()))
    })
}

/// Writes a binary (P5) graymap; 16-bit samples are most-significant byte
/// first per the Netpbm convention.
pub fn write_pgm(path: &Path, slice: &RawSlice) -> Result<(), DataError> {
    let maxval: u32 = if slice.bit_depth == 8 { 255 } else { 65535 };
    let mut out = format!("P5\n{} {}\n{}\n", slice.width, slice.height, maxval).into_bytes();
    if slice.bit_depth == 8 {
        out.extend(slice.pixels.iter().map(|&p| p as u8));
    } else {
        for &p in &slice.pixels {
            out.push((p >> 8) as u8);
            out.push((p & 0xff) as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c)
}

/// Next header token, skipping whitespace and `#` comments. Leaves `pos` on
/// the byte just after the token.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && is_space(bytes[*pos]) {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !is_space(bytes[*pos]) && bytes[*pos] != b'#' {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn next_uint(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, String> {
    let tok = next_token(bytes, pos).ok_or_else(|| format!("missing {what}"))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| format!("invalid {what}"))
}

fn parse_pgm(bytes: &[u8], slope: f64, intercept: f64) -> Result<RawSlice, String> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or("empty file")?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => return Err("bad magic (expected P2 or P5)".into()),
    };
    let width = next_uint(bytes, &mut pos, "width")? as usize;
    let height = next_uint(bytes, &mut pos, "height")? as usize;
    let maxval = next_uint(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval != 255 && maxval != 65535 {
        return Err(format!("unsupported maxval {maxval} (expected 255 or 65535)"));
    }
    let bit_depth: u8 = if maxval == 255 { 8 } else { 16 };
    let count = width.checked_mul(height).ok_or("image dimensions overflow")?;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates the header from the payload.
        if pos >= bytes.len() || !is_space(bytes[pos]) {
            return Err("missing separator before pixel data".into());
        }
        pos += 1;
        let bytes_per = if bit_depth == 8 { 1 } else { 2 };
        let need = count * bytes_per;
        let data = &bytes[pos..];
        if data.len() < need {
            return Err(format!("truncated pixel data: have {} bytes, need {need}", data.len()));
        }
        if bit_depth == 8 {
            pixels.extend(data[..need].iter().map(|&b| b as u32));
        } else {
            for chunk in data[..need].chunks_exact(2) {
                pixels.push(((chunk[0] as u32) << 8) | chunk[1] as u32);
            }
        }
    } else {
        for i in 0..count {
            let v = next_uint(bytes, &mut pos, "pixel sample")
                .map_err(|_| format!("truncated pixel data: {i} of {count} samples"))?;
            if v > maxval {
                return Err(format!("sample {v} exceeds maxval {maxval}"));
            }
            pixels.push(v);
        }
    }
    RawSlice::new(width, height, bit_depth, pixels, slope, intercept).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn reads_p5_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend([7u8; 16]);
        fs::write(&path, bytes).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width, img.height, img.bit_depth), (4, 4, 8));
        assert!(img.pixels.iter().all(|&p| p == 7));
        assert_eq!((img.rescale_slope, img.rescale_intercept), (1.0, 0.0));
    }

    #[test]
    fn reads_p2_16bit_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.pgm");
        fs::write(&path, "P2\n# comment\n2 2\n65535\n0 1024\n2048 65535\n").unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.bit_depth, 16);
        assert_eq!(img.pixels, vec![0, 1024, 2048, 65535]);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend([0u8; 10]);
        fs::write(&path, bytes).unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(err.to_string().starts_with("FormatError"), "{err}");
    }

    #[test]
    fn odd_maxval_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        fs::write(&path, "P2\n1 1\n1023\n5\n").unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(err.to_string().contains("maxval"));
    }

    #[test]
    fn sidecar_supplies_rescale() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.pgm");
        fs::write(&path, "P2\n1 1\n255\n24\n").unwrap();
        fs::write(sidecar_path(&path), "1 -1024\n").unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.rescale_slope, img.rescale_intercept), (1.0, -1024.0));
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let slice = RawSlice::new(3, 2, 16, vec![0, 1, 256, 65535, 40, 1064], 1.0, 0.0).unwrap();
        write_pgm(&path, &slice).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, slice);
    }
}
