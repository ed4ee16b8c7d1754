//! Dense RGB images and 8-bit PNG/PPM I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::{Error, Real, Result};

/// Row-major `height × width × 3` RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Ppm => "ppm",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "png" => Some(ImageFormat::Png),
            "ppm" => Some(ImageFormat::Ppm),
            _ => None,
        }
    }
}

impl<T: Real> Image<T> {
    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![T::zero(); width * height * 3] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        Image { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamps to `[0, 1]` and rounds to the nearest 8-bit level.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| {
                let v = v.to_f64_lossy().clamp(0.0, 1.0);
                (v * 255.0).round() as u8
            })
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        Image { width, height, data: bytes.iter().map(|&b| T::lit(b as f64 / 255.0)).collect() }
    }

    /// Snaps every value to the nearest representable 8-bit level.
    pub fn quantized(&self) -> Self {
        Self::from_rgb8(self.width, self.height, &self.to_rgb8())
    }

    pub fn save(&self, path: &Path, format: ImageFormat) -> Result<()> {
        let bytes = self.to_rgb8();
        match format {
            ImageFormat::Png => {
                image::save_buffer(path, &bytes, self.width as u32, self.height as u32, image::ExtendedColorType::Rgb8)
                    .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
            }
            ImageFormat::Ppm => {
                let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
                write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
                f.write_all(&bytes)?;
                f.flush()?;
                Ok(())
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        match ImageFormat::from_path(path) {
            Some(ImageFormat::Ppm) => read_ppm(path),
            _ => {
                let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?.to_rgb8();
                let (w, h) = img.dimensions();
                Ok(Self::from_rgb8(w as usize, h as usize, img.as_raw()))
            }
        }
    }
}

fn read_ppm<T: Real>(path: &Path) -> Result<Image<T>> {
    let parse_err = |offset: u64, msg: &str| Error::Parse { path: path.to_path_buf(), offset, msg: msg.to_string() };
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut header = Vec::new();
    let mut offset = 0u64;
    // magic, width, height, maxval, separated by whitespace and optional comments
    while header.len() < 4 {
        let mut token = Vec::new();
        loop {
            let buf = reader.fill_buf()?;
            if buf.is_empty() {
                return Err(parse_err(offset, "truncated PPM header"));
            }
            let b = buf[0];
            reader.consume(1);
            offset += 1;
            if b == b'#' {
                let mut skipped = Vec::new();
                offset += reader.read_until(b'\n', &mut skipped)? as u64;
                continue;
            }
            if b.is_ascii_whitespace() {
                if !token.is_empty() {
                    break;
                }
            } else {
                token.push(b);
            }
        }
        header.push(String::from_utf8_lossy(&token).into_owned());
    }
    if header[0] != "P6" {
        return Err(parse_err(0, "unsupported PPM magic (expected P6)"));
    }
    let num = |s: &str| -> Result<usize> { s.parse::<usize>().map_err(|_| parse_err(offset, "bad PPM header number")) };
    let (w, h, maxval) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
    if maxval != 255 {
        return Err(parse_err(offset, "only 8-bit PPM is supported"));
    }
    let mut bytes = vec![0u8; w * h * 3];
    reader.read_exact(&mut bytes).map_err(|_| parse_err(offset, "truncated PPM pixel data"))?;
    Ok(Image::from_rgb8(w, h, &bytes))
}

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at `cap` dB for
/// identical inputs.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>, cap: f64) -> f64 {
    assert!(a.same_shape(b), "psnr on mismatched images");
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse <= 0.0 {
        return cap;
    }
    (-10.0 * mse.log10()).min(cap)
}
