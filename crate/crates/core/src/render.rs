//! Heatmaps of sensitivity vectors, montages, and PPM/PNG output.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use crate::error::{PsaError, Result};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const SEPARATOR: Rgb = [96, 96, 96];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Image {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn upscaled(&self, factor: usize) -> Image {
        let f = factor.max(1);
        let mut out = Image::filled(self.width * f, self.height * f, WHITE);
        for y in 0..out.height {
            for x in 0..out.width {
                out.set(x, y, self.get(x / f, y / f));
            }
        }
        out
    }

    fn raw_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flatten().copied().collect()
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.raw_bytes());
        out
    }

    /// Parses a binary PPM with maxval 255.
    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Image> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(PsaError::Format("truncated PPM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        if fields[0] != "P6" {
            return Err(PsaError::Format(format!(
                "PPM magic {:?}, expected P6",
                fields[0]
            )));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| PsaError::Format(format!("bad PPM header field {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(PsaError::Format(format!(
                "PPM maxval {maxval}, expected 255"
            )));
        }
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() != width * height * 3 {
            return Err(PsaError::Format(format!(
                "PPM raster has {} bytes, expected {}",
                raster.len(),
                width * height * 3
            )));
        }
        Ok(Image {
            width,
            height,
            pixels: raster.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, image.to_ppm_bytes()).map_err(|e| PsaError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| PsaError::io(path, e))?;
    Image::from_ppm_bytes(&bytes).map_err(|e| match e {
        PsaError::Format(m) => PsaError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| PsaError::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        image.width as u32,
        image.height as u32,
    );
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => PsaError::io(path, io),
        other => PsaError::io(path, std::io::Error::other(other.to_string())),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&image.raw_bytes()).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Writes PPM or PNG depending on the extension (`.png`, anything else is PPM).
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => write_png(path, image),
        _ => write_ppm(path, image),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    /// Signed values: blue (negative), white (zero), red (positive),
    /// symmetric around zero.
    Diverging,
    /// Non-negative values: black, red, yellow, white.
    Sequential,
    /// Non-negative intensities as dark ink on white.
    Gray,
}

fn to_byte(x: f64) -> u8 {
    (255.0 * x.clamp(0.0, 1.0)).round() as u8
}

/// Colour for `t` in `[-1, 1]`.
pub fn diverging(t: f64) -> Rgb {
    let g = to_byte(1.0 - t.abs());
    if t >= 0.0 {
        [255, g, g]
    } else {
        [g, g, 255]
    }
}

/// Colour for `t` in `[0, 1]`.
pub fn sequential(t: f64) -> Rgb {
    let x = 3.0 * t.clamp(0.0, 1.0);
    [to_byte(x), to_byte(x - 1.0), to_byte(x - 2.0)]
}

/// Renders `values` (row-major, `width * height` long) with the given colormap,
/// scaled so that `max |v|` reaches the end of the colour range.
pub fn render_values(
    values: &[f64],
    (width, height): (usize, usize),
    cmap: Colormap,
) -> Result<Image> {
    if width * height != values.len() {
        return Err(PsaError::dim(format!(
            "{} values cannot fill a {width}x{height} image",
            values.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(PsaError::domain(format!(
            "cannot render non-finite value {bad}"
        )));
    }
    if cmap != Colormap::Diverging {
        if let Some(neg) = values.iter().find(|&&v| v < 0.0) {
            return Err(PsaError::domain(format!(
                "{cmap:?} colormap needs non-negative values, found {neg}"
            )));
        }
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pixels = values
        .iter()
        .map(|&v| {
            let t = if scale > 0.0 { v / scale } else { 0.0 };
            match cmap {
                Colormap::Diverging => diverging(t),
                Colormap::Sequential => sequential(t),
                Colormap::Gray => {
                    let g = to_byte(1.0 - t);
                    [g, g, g]
                }
            }
        })
        .collect();
    Ok(Image {
        width,
        height,
        pixels,
    })
}

/// Signed map, e.g. a principal sensitivity map.
pub fn render_map(values: &[f64], shape: (usize, usize)) -> Result<Image> {
    render_values(values, shape, Colormap::Diverging)
}

/// Unsigned map, e.g. the standard sensitivity map.
pub fn render_unsigned(values: &[f64], shape: (usize, usize)) -> Result<Image> {
    render_values(values, shape, Colormap::Sequential)
}

/// Lays `images` out row-major on a `(rows, cols)` grid with 1-px separators
/// between cells and around the border. Unused cells stay white.
pub fn montage(images: &[Image], (rows, cols): (usize, usize)) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| PsaError::domain("montage of no images"))?;
    if images.len() > rows * cols {
        return Err(PsaError::dim(format!(
            "{} images do not fit a {rows}x{cols} grid",
            images.len()
        )));
    }
    let (w, h) = (first.width, first.height);
    if images.iter().any(|im| im.width != w || im.height != h) {
        return Err(PsaError::dim("montage images differ in size"));
    }
    let mut out = Image::filled(cols * (w + 1) + 1, rows * (h + 1) + 1, SEPARATOR);
    for cell in 0..rows * cols {
        let (gy, gx) = (cell / cols, cell % cols);
        let (ox, oy) = (1 + gx * (w + 1), 1 + gy * (h + 1));
        for y in 0..h {
            for x in 0..w {
                let c = images.get(cell).map_or(WHITE, |im| im.get(x, y));
                out.set(ox + x, oy + y, c);
            }
        }
    }
    Ok(out)
}

/// Table heatmap: one `cell`-pixel square per entry of `rows`, sequential colours.
pub fn render_table(rows: &[Vec<f64>], cell: usize) -> Result<Image> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if height == 0 || width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(PsaError::dim("table must be a nonempty rectangle"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(render_unsigned(&flat, (width, height))?.upscaled(cell))
}
