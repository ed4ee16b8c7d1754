use rayon::prelude::*;

use super::project::{project_one, Projected, ProjectedGaussian, ProjectionStats, ProjectionTrace};
use super::{GradientBatch, RenderOptions, RenderedImage, MAX_WEIGHT, MIN_TRANSMITTANCE, MIN_WEIGHT};
use crate::image::Image;
use crate::scene::{Camera, GaussianCloud, PARAM_COUNT};
use crate::{Error, Real, Result};

/// Depth-sorted projection of a cloud for one camera.
struct Frame<T> {
    splats: Vec<ProjectedGaussian<T>>,
    traces: Vec<Box<ProjectionTrace<T>>>,
    stats: ProjectionStats,
    width: usize,
    height: usize,
    background: [T; 3],
}

fn prepare<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera<T>, opts: &RenderOptions) -> Result<Frame<T>> {
    if let Some(index) = cloud.first_non_finite() {
        return Err(Error::NonFiniteGaussian { index });
    }
    let mut stats = ProjectionStats::default();
    let mut visible = Vec::new();
    for (i, row) in cloud.as_matrix().chunks_exact(PARAM_COUNT).enumerate() {
        match project_one(row, cam, opts) {
            Projected::Visible(t) => {
                stats.visible += 1;
                visible.push((t.to_projected(i), t));
            }
            Projected::Near => stats.culled_near += 1,
            Projected::GuardBand => stats.culled_guard_band += 1,
            Projected::Degenerate => stats.culled_degenerate += 1,
            Projected::Transparent => stats.culled_transparent += 1,
        }
    }
    visible.sort_by(|a, b| {
        a.0.depth
            .partial_cmp(&b.0.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.source_index.cmp(&b.0.source_index))
    });
    let (splats, traces) = visible.into_iter().unzip();
    Ok(Frame { splats, traces, stats, width: cam.width, height: cam.height, background: opts.background.map(T::widen) })
}

/// One accepted blend at a pixel, kept for the reverse pass.
#[derive(Clone, Copy)]
struct Blend<T> {
    slot: usize,
    weight: T,
    transmittance: T,
    clamped: bool,
}

/// Front-to-back compositing of `order` (indices into `splats`, depth sorted)
/// at one pixel centre. Returns the accumulated colour without background and
/// the final transmittance.
#[inline]
fn shade<T: Real>(
    splats: &[ProjectedGaussian<T>],
    order: impl Iterator<Item = usize>,
    px: T,
    py: T,
    mut record: impl FnMut(Blend<T>),
) -> ([T; 3], T) {
    let min_w = T::lit(MIN_WEIGHT);
    let max_w = T::lit(MAX_WEIGHT);
    let min_t = T::lit(MIN_TRANSMITTANCE);
    let half = T::lit(0.5);
    let mut color = [T::zero(); 3];
    let mut trans = T::one();
    for (slot, idx) in order.enumerate() {
        let s = &splats[idx];
        let dx = s.mean2d[0] - px;
        let dy = s.mean2d[1] - py;
        let [a, b, c] = s.conic;
        let power = -half * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power > T::zero() {
            continue;
        }
        let raw = s.opacity * power.exp();
        let clamped = raw > max_w;
        let w = if clamped { max_w } else { raw };
        if w < min_w {
            continue;
        }
        let next = trans * (T::one() - w);
        if next < min_t {
            break;
        }
        for ch in 0..3 {
            color[ch] += s.color[ch] * w * trans;
        }
        record(Blend { slot, weight: w, transmittance: trans, clamped });
        trans = next;
    }
    (color, trans)
}

#[inline]
fn pixel_center<T: Real>(v: usize) -> T {
    T::lit(v as f64 + 0.5)
}

/// Per-tile lists of splat indices in depth order.
struct Tiling {
    size: usize,
    cols: usize,
    rows: usize,
    lists: Vec<Vec<usize>>,
}

fn build_tiles<T: Real>(frame: &Frame<T>, tile_size: usize) -> Tiling {
    let size = tile_size.max(1);
    let cols = frame.width.div_ceil(size);
    let rows = frame.height.div_ceil(size);
    let mut lists = vec![Vec::new(); cols * rows];
    let half = T::lit(0.5);
    for (i, s) in frame.splats.iter().enumerate() {
        let span = |m: T, extent: usize| -> Option<(usize, usize)> {
            let lo = (m - s.radius - half).ceil();
            let hi = (m + s.radius - half).floor();
            if !(hi >= T::zero()) || !(lo <= T::lit((extent - 1) as f64)) || lo > hi {
                return None;
            }
            let lo = lo.max(T::zero()).to_usize().unwrap_or(0);
            let hi = hi.min(T::lit((extent - 1) as f64)).to_usize().unwrap_or(extent - 1);
            Some((lo, hi))
        };
        let (Some((x0, x1)), Some((y0, y1))) = (span(s.mean2d[0], frame.width), span(s.mean2d[1], frame.height)) else {
            continue;
        };
        for ty in y0 / size..=y1 / size {
            for tx in x0 / size..=x1 / size {
                lists[ty * cols + tx].push(i);
            }
        }
    }
    Tiling { size, cols, rows, lists }
}

impl Tiling {
    fn pixels(&self, tile: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.cols, tile / self.cols);
        let x0 = tx * self.size;
        let y0 = ty * self.size;
        let x1 = (x0 + self.size).min(width);
        let y1 = (y0 + self.size).min(height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

fn compose<T: Real>(frame: &Frame<T>, pixels: impl Iterator<Item = ((usize, usize), ([T; 3], T))>) -> RenderedImage<T> {
    let mut rgb = Image::zeros(frame.width, frame.height);
    let mut alpha = vec![T::zero(); frame.width * frame.height];
    for ((x, y), (c, t)) in pixels {
        let bg = frame.background;
        rgb.set_pixel(x, y, [c[0] + t * bg[0], c[1] + t * bg[1], c[2] + t * bg[2]]);
        alpha[y * frame.width + x] = T::one() - t;
    }
    RenderedImage { rgb, alpha, stats: frame.stats }
}

fn forward_tiled<T: Real>(frame: &Frame<T>, opts: &RenderOptions) -> RenderedImage<T> {
    let tiling = build_tiles(frame, opts.tile_size);
    let tiles: Vec<Vec<_>> = (0..tiling.cols * tiling.rows)
        .into_par_iter()
        .map(|tile| {
            let list = &tiling.lists[tile];
            tiling
                .pixels(tile, frame.width, frame.height)
                .map(|(x, y)| {
                    let out = shade(&frame.splats, list.iter().copied(), pixel_center(x), pixel_center(y), |_| {});
                    ((x, y), out)
                })
                .collect()
        })
        .collect();
    compose(frame, tiles.into_iter().flatten())
}

/// Renders `cloud` from `cam` with the tiled rasterizer.
pub fn render<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera<T>, opts: &RenderOptions) -> Result<RenderedImage<T>> {
    let frame = prepare(cloud, cam, opts)?;
    Ok(forward_tiled(&frame, opts))
}

/// Reference rasterizer: every pixel walks the full depth-sorted list.
pub fn render_naive<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    opts: &RenderOptions,
) -> Result<RenderedImage<T>> {
    let frame = prepare(cloud, cam, opts)?;
    let n = frame.splats.len();
    let pixels = (0..frame.height).flat_map(|y| (0..frame.width).map(move |x| (x, y)));
    let shaded: Vec<_> =
        pixels.map(|(x, y)| ((x, y), shade(&frame.splats, 0..n, pixel_center(x), pixel_center(y), |_| {}))).collect();
    Ok(compose(&frame, shaded.into_iter()))
}

/// Screen-space gradient slots: mean2d (2), conic (3), colour (3), opacity.
type Slots<T> = [T; 9];

fn backward_frame<T: Real>(
    frame: &Frame<T>,
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    upstream: &Image<T>,
    opts: &RenderOptions,
) -> GradientBatch<T> {
    let tiling = build_tiles(frame, opts.tile_size);
    let partials: Vec<Vec<(usize, Slots<T>)>> = (0..tiling.cols * tiling.rows)
        .into_par_iter()
        .map(|tile| {
            let list = &tiling.lists[tile];
            let mut acc = vec![[T::zero(); 9]; list.len()];
            let mut blends = Vec::new();
            for (x, y) in tiling.pixels(tile, frame.width, frame.height) {
                let up = upstream.pixel(x, y);
                if up.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                blends.clear();
                let (px, py) = (pixel_center::<T>(x), pixel_center::<T>(y));
                let (_, t_final) = shade(&frame.splats, list.iter().copied(), px, py, |b| blends.push(b));
                let bg = frame.background;
                // colour of everything behind the current blend, dotted with upstream
                let mut behind = t_final * (up[0] * bg[0] + up[1] * bg[1] + up[2] * bg[2]);
                for b in blends.iter().rev() {
                    let s = &frame.splats[list[b.slot]];
                    let g = &mut acc[b.slot];
                    let wt = b.weight * b.transmittance;
                    for ch in 0..3 {
                        g[5 + ch] += up[ch] * wt;
                    }
                    let uc = up[0] * s.color[0] + up[1] * s.color[1] + up[2] * s.color[2];
                    let g_w = b.transmittance * uc - behind / (T::one() - b.weight);
                    behind += uc * wt;
                    if b.clamped {
                        continue;
                    }
                    let dx = s.mean2d[0] - px;
                    let dy = s.mean2d[1] - py;
                    let [a, bb, c] = s.conic;
                    // w = o·exp(power)
                    g[8] += g_w * b.weight / s.opacity;
                    let g_p = g_w * b.weight;
                    g[0] += -g_p * (a * dx + bb * dy);
                    g[1] += -g_p * (c * dy + bb * dx);
                    g[2] += -g_p * T::lit(0.5) * dx * dx;
                    g[3] += -g_p * dx * dy;
                    g[4] += -g_p * T::lit(0.5) * dy * dy;
                }
            }
            list.iter().copied().zip(acc).filter(|(_, g)| g.iter().any(|v| *v != T::zero())).collect()
        })
        .collect();

    let mut screen = vec![[T::zero(); 9]; frame.splats.len()];
    for tile in partials {
        for (i, g) in tile {
            for (d, s) in screen[i].iter_mut().zip(g) {
                *d += s;
            }
        }
    }
    let mut out = GradientBatch::zeros(cloud.len());
    for (i, g) in screen.iter().enumerate() {
        if g.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let src = frame.splats[i].source_index;
        let row = &mut out.grads[src * PARAM_COUNT..(src + 1) * PARAM_COUNT];
        frame.traces[i].backward(cloud.row(src), cam, g, row);
    }
    out
}

fn check_upstream<T: Real>(cam: &Camera<T>, upstream: &Image<T>) -> Result<()> {
    if upstream.width != cam.width || upstream.height != cam.height {
        return Err(Error::Shape {
            op: "render_backward",
            lhs: (cam.height, cam.width),
            rhs: (upstream.height, upstream.width),
        });
    }
    if !upstream.all_finite() {
        return Err(Error::config("render_backward: non-finite upstream gradient"));
    }
    Ok(())
}

/// Gradient of `⟨upstream, render(cloud)⟩` with respect to every parameter.
pub fn render_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    upstream: &Image<T>,
    opts: &RenderOptions,
) -> Result<GradientBatch<T>> {
    check_upstream(cam, upstream)?;
    let frame = prepare(cloud, cam, opts)?;
    Ok(backward_frame(&frame, cloud, cam, upstream, opts))
}

/// Renders once, asks `upstream` for the image-space gradient of the rendered
/// result, and returns both the render and the parameter gradient.
pub fn render_with_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    opts: &RenderOptions,
    upstream: impl FnOnce(&RenderedImage<T>) -> Image<T>,
) -> Result<(RenderedImage<T>, GradientBatch<T>)> {
    let frame = prepare(cloud, cam, opts)?;
    let image = forward_tiled(&frame, opts);
    let up = upstream(&image);
    check_upstream(cam, &up)?;
    let grads = backward_frame(&frame, cloud, cam, &up, opts);
    Ok((image, grads))
}

pub fn render_batch<T: Real>(
    cloud: &GaussianCloud<T>,
    cams: &[Camera<T>],
    opts: &RenderOptions,
) -> Result<Vec<RenderedImage<T>>> {
    cams.iter().map(|c| render(cloud, c, opts)).collect()
}

/// Mean over views of the per-view parameter gradients.
pub fn render_backward_batch<T: Real>(
    cloud: &GaussianCloud<T>,
    cams: &[Camera<T>],
    upstreams: &[Image<T>],
    opts: &RenderOptions,
) -> Result<GradientBatch<T>> {
    if cams.len() != upstreams.len() || cams.is_empty() {
        return Err(Error::Shape { op: "render_backward_batch", lhs: (cams.len(), 1), rhs: (upstreams.len(), 1) });
    }
    let mut total = GradientBatch::zeros(cloud.len());
    for (c, u) in cams.iter().zip(upstreams) {
        total.add_assign(&render_backward(cloud, c, u, opts)?);
    }
    total.scale(T::one() / T::lit(cams.len() as f64));
    Ok(total)
}
