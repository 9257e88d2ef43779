use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::DataError;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn chw<T: Scalar>(img: &Tensor<T>) -> Result<[usize; 3], DataError> {
    match *img.shape() {
        [c @ (1 | 3), h, w] => Ok([c, h, w]),
        _ => Err(DataError::Shape(img.shape().to_vec())),
    }
}

/// `[0, 1]` to a byte, rounding to nearest; out-of-range values clamp.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.as_f64();
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `[3, H, W]` to `[1, H, W]` by luminance; grayscale passes through.
pub fn to_grayscale<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>, DataError> {
    let [c, h, w] = chw(img)?;
    if c == 1 {
        return Ok(img.clone());
    }
    let d = img.data();
    let n = h * w;
    Ok(Tensor::from_fn(&[1, h, w], |i| {
        T::of(LUMA[0] * d[i].as_f64() + LUMA[1] * d[n + i].as_f64() + LUMA[2] * d[2 * n + i].as_f64())
    }))
}

/// Bilinear resampling with corner-aligned grids: output corners sample the
/// input corners exactly.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>, DataError> {
    let [c, ih, iw] = match *img.shape() {
        [c, ih, iw] if c > 0 => [c, ih, iw],
        _ => return Err(DataError::Shape(img.shape().to_vec())),
    };
    if h == 0 || w == 0 || ih == 0 || iw == 0 {
        return Err(DataError::Shape(vec![c, h, w]));
    }
    if (ih, iw) == (h, w) {
        return Ok(img.clone());
    }
    let grid = |n_out: usize, n_in: usize, i: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (s.floor() as usize).min(n_in - 2);
        (i0, i0 + 1, s - i0 as f64)
    };
    let d = img.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = &d[ch * ih * iw..(ch + 1) * ih * iw];
        for y in 0..h {
            let (y0, y1, fy) = grid(h, ih, y);
            for x in 0..w {
                let (x0, x1, fx) = grid(w, iw, x);
                let p = |yy: usize, xx: usize| plane[yy * iw + xx].as_f64();
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(T::of(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Ok(Tensor::new(vec![c, h, w], out).expect("length matches shape"))
}

/// Binary PGM (P5, maxval 255); RGB input is converted by luminance.
pub fn encode_pgm<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>, DataError> {
    let gray = to_grayscale(img)?;
    let [_, h, w] = chw(&gray)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(gray.data().iter().map(|v| quantize(*v)));
    Ok(out)
}

pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>, DataError> {
    let bad = |m: &str| DataError::Pgm(m.to_string());
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 signature"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header must end with one whitespace byte"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    let body = bytes.get(pos..pos + need).ok_or(DataError::Truncated {
        expected: pos + need,
        found: bytes.len(),
    })?;
    let m = maxval as f64;
    Ok(Tensor::from_fn(&[1, h, w], |i| {
        let v = if wide {
            u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as f64
        } else {
            body[i] as f64
        };
        T::of((v / m).min(1.0))
    }))
}

pub fn write_pgm<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<(), DataError> {
    fs::write(path, encode_pgm(img)?).map_err(DataError::io(path))
}

pub fn read_pgm<T: Scalar>(path: &Path) -> Result<Tensor<T>, DataError> {
    decode_pgm(&fs::read(path).map_err(DataError::io(path))?)
}

/// 8-bit PNG, grayscale or RGB to match the channel count.
pub fn write_png<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<(), DataError> {
    let [c, h, w] = chw(img)?;
    let d = img.data();
    let (w32, h32) = (w as u32, h as u32);
    if c == 1 {
        GrayImage::from_fn(w32, h32, |x, y| image::Luma([quantize(d[y as usize * w + x as usize])])).save(path)?;
    } else {
        let n = h * w;
        RgbImage::from_fn(w32, h32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb([quantize(d[i]), quantize(d[n + i]), quantize(d[2 * n + i])])
        })
        .save(path)?;
    }
    Ok(())
}

/// Chooses the format from the extension: `.pgm` or `.png`.
pub fn write_image<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<(), DataError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm") => write_pgm(img, path),
        _ => write_png(img, path),
    }
}

/// Any PGM, PNG or JPEG as `[1, H, W]` (no colour) or `[3, H, W]`.
pub fn read_image<T: Scalar>(path: &Path) -> Result<Tensor<T>, DataError> {
    let bytes = fs::read(path).map_err(DataError::io(path))?;
    if bytes.starts_with(b"P5") {
        return decode_pgm(&bytes);
    }
    let dynamic = image::load_from_memory(&bytes)?;
    Ok(from_dynamic(&dynamic))
}

pub(crate) fn from_dynamic<T: Scalar>(img: &DynamicImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        Tensor::from_fn(&[3, h, w], |i| {
            let (ch, p) = (i / (h * w), i % (h * w));
            T::of(raw[3 * p + ch] as f64 / 255.0)
        })
    } else {
        let gray = img.to_luma8();
        let raw = gray.as_raw();
        Tensor::from_fn(&[1, h, w], |i| T::of(raw[i] as f64 / 255.0))
    }
}
