//! Plain-text image formats and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A plain PBM (P1) bitmap. `bits` is row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(what: &str, msg: impl Into<String>) -> Error {
    Error::Parse { what: what.to_string(), msg: msg.into() }
}

/// Parse a P1 bitmap; `#` comments run to end of line.
pub fn parse_pbm(text: &str) -> Result<Bitmap> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            tokens.push(tok);
        }
    }
    let mut it = tokens.into_iter();
    match it.next() {
        Some("P1") => {}
        other => return Err(parse_err("pbm", format!("expected magic P1, found {other:?}"))),
    }
    let mut dim = |name: &str| -> Result<usize> {
        it.next()
            .ok_or_else(|| parse_err("pbm", format!("missing {name}")))?
            .parse::<usize>()
            .map_err(|e| parse_err("pbm", format!("bad {name}: {e}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    // pixels may be packed without separators
    let mut bits = Vec::with_capacity(width * height);
    for tok in it {
        for ch in tok.chars() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                c => return Err(parse_err("pbm", format!("unexpected pixel character {c:?}"))),
            }
        }
    }
    if bits.len() != width * height {
        return Err(parse_err("pbm", format!("expected {} pixels, found {}", width * height, bits.len())));
    }
    Ok(Bitmap { width, height, bits })
}

pub fn read_pbm(path: &Path) -> Result<Bitmap> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_pbm(&text)
}

pub fn pbm_string(bm: &Bitmap) -> String {
    let mut s = format!("P1\n{} {}\n", bm.width, bm.height);
    for row in 0..bm.height {
        let line: Vec<&str> = (0..bm.width).map(|x| if bm.bits[row * bm.width + x] { "1" } else { "0" }).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Grey-level P2 image of `values` (row-major, row 0 at the BOTTOM, i.e. lowest y).
///
/// Values are mapped linearly from `[min, max]` to `0..=255`; a constant
/// image maps to 0.
pub fn pgm_string(width: usize, height: usize, values: &[f64]) -> String {
    assert_eq!(values.len(), width * height, "image size mismatch");
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in (0..height).rev() {
        let line: Vec<String> = (0..width)
            .map(|x| {
                let v = values[row * width + x];
                let g = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
                format!("{}", g.clamp(0.0, 255.0) as u8)
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Write `bytes` to `path` through a sibling temp file and a rename.
///
/// Refuses to replace an existing file unless `force` is set.
pub fn atomic_write(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "refusing to overwrite {} (use --force)",
            path.display()
        )));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    let tmp = temp_sibling(path);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Path with `.partial` appended to the file name.
pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = std::ffi::OsString::from(".");
    name.push(path.file_name().unwrap_or_default());
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Shortest round-trip text of `v`, in exponent form for very small or
/// large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// CSV text with a header row; fields are written verbatim.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pbm_roundtrip() {
        let bm = Bitmap { width: 3, height: 2, bits: vec![true, false, true, false, true, true] };
        let parsed = parse_pbm(&pbm_string(&bm)).unwrap();
        assert_eq!(parsed, bm);
    }

    #[test]
    fn pbm_accepts_comments_and_packed_pixels() {
        let bm = parse_pbm("P1\n# a comment\n3 2\n101\n011\n").unwrap();
        assert_eq!(bm.bits, vec![true, false, true, false, true, true]);
        assert!(parse_pbm("P2\n1 1\n1\n").is_err());
        assert!(parse_pbm("P1\n2 2\n1 1 1\n").is_err());
    }

    #[test]
    fn pgm_maps_range() {
        let s = pgm_string(2, 1, &[0.0, 2.0]);
        assert_eq!(s, "P2\n2 1\n255\n0 255\n");
        let c = pgm_string(1, 1, &[3.0]);
        assert!(c.ends_with("0\n"));
    }

    #[test]
    fn numbers_roundtrip() {
        for v in [0.0, 1.5, -2.25e-10, 6.0e20, 0.1 + 0.2, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(6.076e-10), "6.076e-10");
        assert_eq!(num(23.5), "23.5");
    }

    #[test]
    fn atomic_write_respects_force() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        atomic_write(&p, b"one", false).unwrap();
        assert!(atomic_write(&p, b"two", false).is_err());
        assert_eq!(fs::read(&p).unwrap(), b"one");
        atomic_write(&p, b"two", true).unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(partial_path(&p), dir.path().join("out.json.partial"));
    }
}
