use image::{Rgb, RgbImage};

use crate::{Error, Result};

/// A named polyline in data coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [[u8; 3]; 6] =
    [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

const MARGIN: u32 = 40;

/// Colour of series `i`.
pub fn series_color(i: usize) -> [u8; 3] {
    PALETTE[i % PALETTE.len()]
}

/// Axes, a light grid and one coloured polyline per series, with a colour
/// key in the top-right corner in series order. No text.
pub fn line_chart(series: &[Series], width: u32, height: u32) -> Result<RgbImage> {
    if width <= 2 * MARGIN || height <= 2 * MARGIN {
        return Err(Error::config("chart too small"));
    }
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let (pw, ph) = ((width - 2 * MARGIN) as f64, (height - 2 * MARGIN) as f64);
    let to_px = |x: f64, y: f64| {
        (MARGIN as f64 + (x - x0) / (x1 - x0) * pw, (height - MARGIN) as f64 - (y - y0) / (y1 - y0) * ph)
    };
    for k in 0..=4 {
        let gy = MARGIN as f64 + ph * k as f64 / 4.0;
        let gx = MARGIN as f64 + pw * k as f64 / 4.0;
        segment(&mut img, (MARGIN as f64, gy), ((width - MARGIN) as f64, gy), [225; 3]);
        segment(&mut img, (gx, MARGIN as f64), (gx, (height - MARGIN) as f64), [225; 3]);
    }
    let (bx, by) = (MARGIN as f64, (height - MARGIN) as f64);
    segment(&mut img, (bx, by), ((width - MARGIN) as f64, by), [0; 3]);
    segment(&mut img, (bx, by), (bx, MARGIN as f64), [0; 3]);

    for (i, s) in series.iter().enumerate() {
        let c = series_color(i);
        let good: Vec<_> = s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        for w in good.windows(2) {
            segment(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), c);
        }
        for p in &good {
            let (px, py) = to_px(p.0, p.1);
            fill(&mut img, px as i64 - 1, py as i64 - 1, 3, c);
        }
        let ky = MARGIN as i64 + 4 + 14 * i as i64;
        fill(&mut img, (width - MARGIN) as i64 - 24, ky, 10, c);
    }
    Ok(img)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn fill(img: &mut RgbImage, x: i64, y: i64, size: i64, c: [u8; 3]) {
    for dy in 0..size {
        for dx in 0..size {
            put(img, x + dx, y + dy, c);
        }
    }
}

fn segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: [u8; 3]) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = a.0 + t * (b.0 - a.0);
        let y = a.1 + t * (b.1 - a.1);
        put(img, x.round() as i64, y.round() as i64, c);
    }
}
