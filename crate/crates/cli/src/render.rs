//! Grayscale heatmaps of a field: symmetric range for the real and imaginary
//! parts, min–max for the magnitude. Rows run along z, columns along x.

use anyhow::Context;
use clap::ValueEnum;
use gi_helmholtz::grid::ComplexField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Re,
    Im,
    Abs,
}

pub fn quantize(field: &ComplexField, part: Part) -> Vec<u8> {
    let v: Vec<f64> = field
        .values()
        .iter()
        .map(|c| match part {
            Part::Re => c.re,
            Part::Im => c.im,
            Part::Abs => c.norm(),
        })
        .collect();
    match part {
        Part::Re | Part::Im => {
            let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            v.iter()
                .map(|x| {
                    let t = if m > 0.0 { x / m } else { 0.0 };
                    (127.5 * (t + 1.0)).round().clamp(0.0, 255.0) as u8
                })
                .collect()
        }
        Part::Abs => {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v.iter()
                .map(|x| {
                    if hi > lo {
                        (255.0 * (x - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
                    } else {
                        0
                    }
                })
                .collect()
        }
    }
}

/// Binary PGM (P5).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn encode_png(width: usize, height: usize, pixels: &[u8]) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().context("png header")?;
        w.write_image_data(pixels).context("png data")?;
    }
    Ok(out)
}

/// Encodes by extension: `.png`, otherwise PGM.
pub fn render(field: &ComplexField, part: Part, png: bool) -> anyhow::Result<Vec<u8>> {
    let g = field.grid();
    let px = quantize(field, part);
    if png {
        encode_png(g.nx, g.nz, &px)
    } else {
        Ok(encode_pgm(g.nx, g.nz, &px))
    }
}
