//! Grayscale rasters on disk: binary PGM (P5, 8 or 16 bit, big-endian
//! samples) and PNG, each with an optional JSON sidecar carrying the display
//! window, scanner id and label.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use gdce_core::image::{max_count, RawImage, UnitImage, Window};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    /// Declared bit depth when it is narrower than the container.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_depth: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scanner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// `image.pgm` -> `image.pgm.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).map_err(|e| DataError::io(&p, e))?;
    let car = serde_json::from_str(&text).map_err(|e| DataError::Sidecar(p.clone(), e.to_string()))?;
    Ok(Some(car))
}

enum Format {
    Pgm,
    Png,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm" | "pnm") => Ok(Format::Pgm),
        Some("png") => Ok(Format::Png),
        _ => Err(DataError::UnsupportedFormat(path.to_owned())),
    }
}

/// Decoded container: dimensions, samples and container bit depth.
struct Decoded {
    width: usize,
    height: usize,
    bits: u8,
    pixels: Vec<u16>,
}

fn pgm_token(r: &mut impl BufRead) -> std::io::Result<String> {
    let mut tok = String::new();
    loop {
        let buf = r.fill_buf()?;
        if buf.is_empty() {
            break;
        }
        let c = buf[0];
        if c == b'#' && tok.is_empty() {
            let mut line = String::new();
            r.read_line(&mut line)?;
            continue;
        }
        r.consume(1);
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(char::from(c));
    }
    Ok(tok)
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Decoded> {
    let bad = |m: &str| DataError::Malformed(path.to_owned(), m.to_owned());
    let mut r = BufReader::new(bytes);
    let magic = pgm_token(&mut r).map_err(|e| DataError::io(path, e))?;
    match magic.as_str() {
        "P5" => {}
        "P6" | "P3" => return Err(DataError::NotGrayscale(path.to_owned())),
        _ => return Err(bad("not a binary PGM (P5)")),
    }
    let mut num = || -> Result<usize> {
        pgm_token(&mut r).map_err(|e| DataError::io(path, e))?.parse().map_err(|_| bad("bad header field"))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must lie in 1..=65535"));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(|e| DataError::io(path, e))?;
    let n = width * height;
    let pixels: Vec<u16> = if maxval < 256 {
        if data.len() < n {
            return Err(bad("truncated pixel data"));
        }
        data[..n].iter().map(|&b| u16::from(b)).collect()
    } else {
        if data.len() < 2 * n {
            return Err(bad("truncated pixel data"));
        }
        data[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    let bits = if maxval < 256 { 8 } else { 16 };
    Ok(Decoded { width, height, bits, pixels })
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| DataError::Malformed(path.to_owned(), e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(DataError::NotGrayscale(path.to_owned()));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let depth = info.bit_depth;
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| DataError::Malformed(path.to_owned(), e.to_string()))?;
    let buf = &buf[..frame.buffer_size()];
    let (bits, pixels) = match depth {
        png::BitDepth::Eight => (8, buf.iter().map(|&b| u16::from(b)).collect()),
        png::BitDepth::Sixteen => (16, buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()),
        other => return Err(DataError::Malformed(path.to_owned(), format!("unsupported PNG bit depth {other:?}"))),
    };
    Ok(Decoded { width, height, bits, pixels })
}

/// Read a grayscale raster plus its sidecar, if any.
pub fn load_image(path: &Path) -> Result<RawImage> {
    let format = format_of(path)?;
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let decoded = match format {
        Format::Pgm => decode_pgm(path, &bytes)?,
        Format::Png => decode_png(path, &bytes)?,
    };
    let car = read_sidecar(path)?.unwrap_or_default();
    let bits = car.bit_depth.unwrap_or(decoded.bits);
    let mut img = RawImage::new(decoded.width, decoded.height, bits, decoded.pixels)
        .map_err(|e| DataError::Image(path.to_owned(), e))?;
    match (car.center, car.width) {
        (Some(c), Some(w)) => {
            img = img.with_window(Window::new(c, w).map_err(|e| DataError::Image(path.to_owned(), e))?)
        }
        (None, None) => {}
        _ => return Err(DataError::Sidecar(sidecar_path(path), "window needs both center and width".into())),
    }
    if let Some(s) = car.scanner {
        img = img.with_scanner(s);
    }
    if let Some(l) = car.label {
        img = img.with_label(l);
    }
    Ok(img)
}

fn encode(path: &Path, width: usize, height: usize, container_bits: u8, pixels: &[u16]) -> Result<Vec<u8>> {
    match format_of(path)? {
        Format::Pgm => {
            let maxval = max_count(container_bits);
            let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
            if container_bits == 8 {
                out.extend(pixels.iter().map(|&p| p as u8));
            } else {
                out.extend(pixels.iter().flat_map(|p| p.to_be_bytes()));
            }
            Ok(out)
        }
        Format::Png => {
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
                enc.set_color(png::ColorType::Grayscale);
                enc.set_depth(if container_bits == 8 { png::BitDepth::Eight } else { png::BitDepth::Sixteen });
                let mut w = enc.write_header().map_err(|e| DataError::Malformed(path.to_owned(), e.to_string()))?;
                let data: Vec<u8> = if container_bits == 8 {
                    pixels.iter().map(|&p| p as u8).collect()
                } else {
                    pixels.iter().flat_map(|p| p.to_be_bytes()).collect()
                };
                w.write_image_data(&data).map_err(|e| DataError::Malformed(path.to_owned(), e.to_string()))?;
            }
            Ok(out)
        }
    }
}

/// Write a raw image and, when it carries metadata, its sidecar.
pub fn save_raw(img: &RawImage, path: &Path) -> Result<()> {
    let container = if img.bit_depth() <= 8 { 8 } else { 16 };
    let bytes = encode(path, img.width(), img.height(), container, img.pixels())?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))?;
    let car = Sidecar {
        bit_depth: (img.bit_depth() != container).then_some(img.bit_depth()),
        center: img.window.map(|w| w.center),
        width: img.window.map(|w| w.width),
        scanner: (!img.scanner_id.is_empty()).then(|| img.scanner_id.clone()),
        label: img.label,
    };
    if car != Sidecar::default() {
        let p = sidecar_path(path);
        let text = serde_json::to_string_pretty(&car).expect("sidecar serializes");
        fs::write(&p, text).map_err(|e| DataError::io(&p, e))?;
    }
    Ok(())
}

/// Quantize a unit image to `bit_depth` and write it.
pub fn save_image(img: &UnitImage, path: &Path, bit_depth: u8) -> Result<()> {
    let raw = img.quantize(bit_depth).map_err(|e| DataError::Image(path.to_owned(), e))?;
    save_raw(&raw, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_comment_and_eight_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let mut bytes = b"P5\n# note\n3 1\n255\n".to_vec();
        bytes.extend([0u8, 128, 255]);
        fs::write(&p, bytes).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.pixels(), &[0, 128, 255]);
        assert_eq!(img.bit_depth(), 8);
    }

    #[test]
    fn twelve_bit_sidecar_in_sixteen_bit_container() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = RawImage::new(2, 1, 12, vec![0, 4095]).unwrap().with_label(2);
        save_raw(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn color_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[1, 2, 3]).unwrap();
        }
        fs::write(&p, out).unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(err.to_string().contains("grayscale required"), "{err}");
    }

    #[test]
    fn truncated_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, b"P5\n4 4\n65535\n\x00\x01").unwrap();
        assert!(matches!(load_image(&p), Err(DataError::Malformed(..))));
    }

    #[test]
    fn malformed_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        save_raw(&RawImage::new(1, 1, 8, vec![3]).unwrap(), &p).unwrap();
        fs::write(sidecar_path(&p), "{ \"center\": 1 ").unwrap();
        assert!(matches!(load_image(&p), Err(DataError::Sidecar(..))));
    }
}
