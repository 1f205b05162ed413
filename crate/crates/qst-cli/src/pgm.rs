//! Binary 8-bit portable graymap output for Husimi grids.

use std::fs;
use std::io;
use std::path::Path;

/// Encodes a square grid as a P5 graymap, mapping `[0, max]` linearly onto
/// `[0, 255]`. An all-zero grid has no scale and renders uniform black.
pub fn encode_pgm(side: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), side * side, "graymap shape");
    let max = values.iter().copied().fold(0.0_f64, f64::max);
    let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
    bytes.reserve(values.len());
    for &v in values {
        let byte = if max > 0.0 {
            (255.0 * (v / max)).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        bytes.push(byte);
    }
    bytes
}

pub fn write_pgm(path: &Path, side: usize, values: &[f64]) -> io::Result<()> {
    fs::write(path, encode_pgm(side, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_scaling_are_as_documented() {
        let bytes = encode_pgm(2, &[0.0, 0.5, 1.0, 0.25]);
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        let pixels = &bytes[bytes.len() - 4..];
        assert_eq!(pixels, &[0, 128, 255, 64]);
    }

    #[test]
    fn an_all_zero_grid_renders_black() {
        let bytes = encode_pgm(2, &[0.0; 4]);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 0, 0]);
    }
}
