//! Binary PPM/PGM writers for inspection outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// P6 image from channels-first RGB data in [0, 1].
pub fn write_ppm(path: &Path, rgb: &[f64], height: usize, width: usize) -> Result<()> {
    assert_eq!(rgb.len(), 3 * height * width);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{width} {height}\n255\n")?;
    let plane = height * width;
    for p in 0..plane {
        for ch in 0..3 {
            let v = (rgb[ch * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8;
            w.write_all(&[v])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// P5 mask with `maxval = classes - 1`.
pub fn write_pgm(path: &Path, mask: &[u8], height: usize, width: usize, maxval: u8) -> Result<()> {
    assert_eq!(mask.len(), height * width);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n{maxval}\n")?;
    w.write_all(mask)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let rgb = vec![1.0, 0.0, 0.5, 0.25, 0.0, 1.0]; // 3 channels x 2 pixels
        write_ppm(&path, &rgb, 1, 2).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[255, 128, 0, 0, 64, 255]);
    }

    #[test]
    fn pgm_maxval_matches_classes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        write_pgm(&path, &[0, 1, 2, 3], 2, 2, 3).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n3\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 1, 2, 3]);
    }
}
