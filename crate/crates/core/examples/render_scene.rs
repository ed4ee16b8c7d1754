//! Generate a synthetic scene, render every view from its initial cloud and
//! write the renders next to the reference images.
//!
//! ```text
//! cargo run --release --example render_scene -- /tmp/render_scene
//! ```

use std::path::PathBuf;

use splatopt::image::{psnr, ImageFormat};
use splatopt::render::{render, RenderOptions};
use splatopt::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render_scene_out".into()));
    std::fs::create_dir_all(&out)?;
    let spec = SceneSpec { image_size: (64, 64), ..SceneSpec::default() };
    let ds = generate_synthetic_scene(7, &spec)?;
    let opts = RenderOptions::default();
    for view in ds.context_views.iter().chain(&ds.target_views) {
        let img = render(&ds.initial_cloud, &view.camera::<f32>(), &opts)?;
        println!(
            "{:>10} {:?}  psnr {:6.2} dB  visible {}",
            view.name,
            view.role,
            psnr(&img.rgb, &view.image, 99.0),
            img.stats.visible
        );
        img.rgb.save(&out.join(format!("{}_render.png", view.name)), ImageFormat::Png)?;
        view.image.save(&out.join(format!("{}_reference.png", view.name)), ImageFormat::Png)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
