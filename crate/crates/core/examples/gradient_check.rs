//! Check the renderer's analytic backward pass against central differences
//! on a tiny scene in double precision.

use splatopt::image::Image;
use splatopt::render::{render, render_backward, RenderOptions};
use splatopt::scene::{generate_synthetic_scene, GaussianCloud, SceneSpec, PARAM_COUNT};

fn weighted_sum(cloud: &GaussianCloud<f64>, ds: &splatopt::scene::SceneDataset, w: &Image<f64>) -> f64 {
    let img = render(cloud, &ds.context_views[0].camera::<f64>(), &RenderOptions::default()).unwrap();
    img.rgb.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

fn main() -> anyhow::Result<()> {
    let spec = SceneSpec { n_gaussians: 4, n_context: 1, n_target: 1, image_size: (16, 16), ..SceneSpec::default() };
    let ds = generate_synthetic_scene(3, &spec)?;
    let cloud = ds.initial_cloud.cast::<f64>();
    let w = Image::from_fn(16, 16, |x, y, c| ((x * 7 + y * 3 + c) as f64 * 0.37).sin());
    let grads = render_backward(&cloud, &ds.context_views[0].camera::<f64>(), &w, &RenderOptions::default())?;

    let names = ["mean", "quat", "log_scale", "opacity", "sh"];
    let group = |c: usize| match c {
        0..3 => 0,
        3..7 => 1,
        7..10 => 2,
        10 => 3,
        _ => 4,
    };
    let h = 1e-6;
    let mut worst = [0.0f64; 5];
    for g in 0..cloud.len() {
        for c in 0..PARAM_COUNT {
            let mut plus = cloud.clone();
            plus.row_mut(g)[c] += h;
            let mut minus = cloud.clone();
            minus.row_mut(g)[c] -= h;
            let fd = (weighted_sum(&plus, &ds, &w) - weighted_sum(&minus, &ds, &w)) / (2.0 * h);
            let an = grads.grads[g * PARAM_COUNT + c];
            let err = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-7);
            worst[group(c)] = worst[group(c)].max(err);
        }
    }
    for (n, e) in names.iter().zip(worst) {
        println!("{n:>10}: worst relative error {e:.2e}");
    }
    Ok(())
}
