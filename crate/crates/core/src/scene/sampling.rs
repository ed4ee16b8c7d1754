use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scene::{GaussianCloud, View};
use crate::{Error, Result};

/// Drops Gaussians whose DC colour is at or below `threshold` on every channel.
pub fn filter_black_points(cloud: &GaussianCloud, threshold: f32) -> Result<GaussianCloud> {
    if !(threshold >= 0.0) {
        return Err(Error::config("black-point threshold must be non-negative"));
    }
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let g = cloud.gaussian(i).cast_f64();
            !g.dc_color().iter().all(|&c| c <= threshold as f64)
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyCloud("every point was black"));
    }
    cloud.select(&keep)
}

/// Uniform subset without replacement; survivors keep their original order.
pub fn subsample_points(cloud: &GaussianCloud, keep_fraction: f32, seed: u64) -> Result<GaussianCloud> {
    if !(0.1..=1.0).contains(&keep_fraction) {
        return Err(Error::config(format!("keep fraction {keep_fraction} outside [0.1, 1.0]")));
    }
    let n = cloud.len();
    let count = ((n as f64 * keep_fraction as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    cloud.select(&idx)
}

/// Greedy furthest-point sampling over 3-D points starting from `first`.
/// Ties go to the smaller index.
pub fn fps_indices(points: &[[f32; 3]], count: usize, first: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 || count == 0 {
        return Vec::new();
    }
    let count = count.min(n);
    let dist2 = |a: [f32; 3], b: [f32; 3]| {
        (0..3)
            .map(|k| {
                let d = a[k] as f64 - b[k] as f64;
                d * d
            })
            .sum::<f64>()
    };
    let mut picked = vec![first];
    let mut min_d: Vec<f64> = points.iter().map(|&p| dist2(p, points[first])).collect();
    let mut taken = vec![false; n];
    taken[first] = true;
    while picked.len() < count {
        let mut best = None::<(usize, f64)>;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|(_, d)| min_d[i] > d) {
                best = Some((i, min_d[i]));
            }
        }
        let (next, _) = best.expect("count <= n leaves a candidate");
        taken[next] = true;
        picked.push(next);
        for i in 0..n {
            min_d[i] = min_d[i].min(dist2(points[i], points[next]));
        }
    }
    picked
}

/// Furthest-point sampling on camera centres. The first pick is drawn from
/// `seed`; views are returned in pick order.
pub fn select_views_fps(views: &[View], count: usize, seed: u64) -> Result<Vec<View>> {
    if count > views.len() {
        return Err(Error::config(format!("cannot select {count} views out of {}", views.len())));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let first = first_pick(views.len(), seed);
    let centers: Vec<[f32; 3]> = views.iter().map(View::center).collect();
    Ok(fps_indices(&centers, count, first).into_iter().map(|i| views[i].clone()).collect())
}

pub(crate) fn first_pick(n: usize, seed: u64) -> usize {
    use rand::Rng;
    ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
}
