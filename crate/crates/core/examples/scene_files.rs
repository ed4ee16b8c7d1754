//! Write a scene directory, read it back, and build a scene from a text
//! point cloud instead of Gaussians.

use splatopt::image::ImageFormat;
use splatopt::scene::{generate_synthetic_scene, load_scene, save_scene, sfm_init, SceneSpec};

fn main() -> anyhow::Result<()> {
    let dir = tempfile_dir()?;
    let ds = generate_synthetic_scene(4, &SceneSpec::default())?;
    save_scene(&ds, &dir, ImageFormat::Png)?;
    let back = load_scene(&dir)?;
    println!(
        "{}: {} context, {} target views, {} Gaussians, round trip exact: {}",
        back.scene_id,
        back.context_views.len(),
        back.target_views.len(),
        back.initial_cloud.len(),
        back == ds
    );
    for entry in std::fs::read_dir(&dir)? {
        println!("  {}", entry?.file_name().to_string_lossy());
    }

    let points =
        [([0.0, 0.0, 0.0], [1.0, 0.2, 0.2]), ([0.3, 0.1, 0.0], [0.2, 1.0, 0.2]), ([0.0, 0.4, 0.2], [0.2, 0.2, 1.0])];
    let cloud = sfm_init(&points)?;
    let g = cloud.gaussian(0);
    println!("point-cloud init: {} Gaussians, first scale {:?}, opacity {:.2}", cloud.len(), g.scale(), g.opacity());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("splatopt_scene_{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
