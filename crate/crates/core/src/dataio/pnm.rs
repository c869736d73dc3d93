//! Binary PGM (P5) codec, 8- and 16-bit.
//!
//! 16-bit samples are most-significant-byte first, as PNM requires.
//! Files we write re-load to bit-identical pixel values.

use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, GrayImage, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes).map_err(|detail| DataError::Malformed {
        path: path.display().to_string(),
        detail,
    })
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("not a P5 PGM".into());
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse::<usize>()
            .map_err(|e| e.to_string())?;
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if w == 0 || h == 0 {
        return Err("zero-sized image".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    // exactly one whitespace byte separates header and samples
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing header terminator".into());
    }
    pos += 1;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let need = w * h * bytes_per;
    let raw = bytes.get(pos..pos + need).ok_or("truncated pixel data")?;
    let scale = 1.0 / maxval as f32;
    let data: Vec<f32> = if bytes_per == 1 {
        raw.iter().map(|&b| b as f32 * scale).collect()
    } else {
        raw.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale)
            .collect()
    };
    for &v in &data {
        if v > 1.0 {
            return Err(format!("sample above maxval (value {v})"));
        }
    }
    Ok(GrayImage::from_parts(h, w, data))
}

pub fn save_pgm(img: &GrayImage, path: &Path, depth: PgmDepth) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let maxval: u32 = match depth {
        PgmDepth::Eight => 255,
        PgmDepth::Sixteen => 65535,
    };
    write!(f, "P5\n{} {}\n{}\n", img.width(), img.height(), maxval)?;
    match depth {
        PgmDepth::Eight => {
            for &v in img.data() {
                let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                f.write_all(&[q])?;
            }
        }
        PgmDepth::Sixteen => {
            for &v in img.data() {
                let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
                f.write_all(&q.to_be_bytes())?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_mapping_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        std::fs::write(&p, [b"P5\n2 1\n255\n".as_slice(), &[255u8, 0]].concat()).unwrap();
        let img = load_pgm(&p).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0]);

        let p16 = dir.path().join("y.pgm");
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&65535u16.to_be_bytes());
        std::fs::write(&p16, bytes).unwrap();
        assert_eq!(load_pgm(&p16).unwrap().data(), &[1.0]);
    }

    #[test]
    fn roundtrip_is_bit_exact_for_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::new(2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        for depth in [PgmDepth::Eight, PgmDepth::Sixteen] {
            let p = dir.path().join("r.pgm");
            save_pgm(&img, &p, depth).unwrap();
            let loaded = load_pgm(&p).unwrap();
            let p2 = dir.path().join("r2.pgm");
            save_pgm(&loaded, &p2, depth).unwrap();
            let (a, b) = (std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
            assert_eq!(a, b, "file bytes changed across save/load/save at {depth:?}");
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        std::fs::write(&p, [b"P5\n# a comment\n2 1\n# more\n255\n".as_slice(), &[7u8, 9]].concat())
            .unwrap();
        let img = load_pgm(&p).unwrap();
        assert!((img.data()[0] - 7.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        std::fs::write(&p, b"P5\n4 4\n255\nxy").unwrap();
        assert!(matches!(load_pgm(&p), Err(DataError::Malformed { .. })));
    }
}
