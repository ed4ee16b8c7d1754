//! Scene container: `scene.json`, 8-bit images, and `gaussians.bin`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::image::{Image, ImageFormat};
use crate::knn::build_knn;
use crate::render::sh::SH_C0;
use crate::scene::{logit, Gaussian, GaussianCloud, Role, SceneDataset, View, PARAM_COUNT, SH_COEFFS};
use crate::{Error, Result};

const CLOUD_MAGIC: &[u8; 4] = b"GSL2";
const CLOUD_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const SCENE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    version: u32,
    scene_id: String,
    views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gaussians: Option<String>,
    /// Text point cloud `x y z r g b` used when no Gaussians are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    points: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewEntry {
    name: String,
    role: Role,
    image: String,
    /// Row-major 3×3.
    intrinsics: [f64; 9],
    /// Row-major 3×3 world-to-camera rotation.
    rotation: [f64; 9],
    /// Camera centre.
    translation: [f64; 3],
}

fn parse_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), offset: offset as u64, msg: msg.into() }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn mat3(v: &[f64; 9]) -> [[f32; 3]; 3] {
    [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]].map(|r| r.map(|x| x as f32))
}

fn flat3(m: &[[f32; 3]; 3]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for (i, r) in m.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            out[3 * i + j] = *v as f64;
        }
    }
    out
}

/// Writes the dataset as a scene directory. Images use `format`.
pub fn save_scene(dataset: &SceneDataset, dir: &Path, format: ImageFormat) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut views = Vec::new();
    for v in dataset.context_views.iter().chain(&dataset.target_views) {
        let file = format!("{}.{}", v.name, format.extension());
        v.image.save(&dir.join(&file), format)?;
        views.push(ViewEntry {
            name: v.name.clone(),
            role: v.role,
            image: file,
            intrinsics: flat3(&v.intrinsics),
            rotation: flat3(&v.rotation),
            translation: v.translation.map(|x| x as f64),
        });
    }
    save_cloud(&dataset.initial_cloud, &dir.join("gaussians.bin"))?;
    let meta = SceneFile {
        version: SCENE_VERSION,
        scene_id: dataset.scene_id.clone(),
        views,
        gaussians: Some("gaussians.bin".into()),
        points: None,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::config(e.to_string()))?;
    fs::write(dir.join("scene.json"), text)?;
    Ok(())
}

/// Loads a scene directory written by [`save_scene`], or one that carries a
/// text point cloud instead of Gaussians (expanded with [`sfm_init`]).
pub fn load_scene(dir: &Path) -> Result<SceneDataset> {
    let json_path = dir.join("scene.json");
    let text = fs::read_to_string(&json_path)?;
    let meta: SceneFile = serde_json::from_str(&text)
        .map_err(|e| parse_err(&json_path, byte_offset(&text, e.line(), e.column()), e.to_string()))?;
    if meta.version != SCENE_VERSION {
        return Err(parse_err(&json_path, 0, format!("unsupported scene version {}", meta.version)));
    }
    let mut context_views = Vec::new();
    let mut target_views = Vec::new();
    for entry in meta.views {
        let at = text.find(&format!("\"{}\"", entry.name)).unwrap_or(0);
        let finite = entry
            .intrinsics
            .iter()
            .chain(&entry.rotation)
            .chain(&entry.translation)
            .all(|v| v.is_finite() && v.abs() <= f32::MAX as f64);
        if !finite {
            return Err(parse_err(&json_path, at, format!("view {}: non-finite camera values", entry.name)));
        }
        let image = Image::load(&dir.join(&entry.image))?;
        let view = View {
            name: entry.name,
            intrinsics: mat3(&entry.intrinsics),
            rotation: mat3(&entry.rotation),
            translation: entry.translation.map(|x| x as f32),
            image,
            role: entry.role,
        };
        view.validate().map_err(|e| parse_err(&json_path, at, e.to_string()))?;
        match view.role {
            Role::Context => context_views.push(view),
            Role::Target => target_views.push(view),
        }
    }
    let initial_cloud = match (&meta.gaussians, &meta.points) {
        (Some(g), _) => load_cloud(&dir.join(g))?,
        (None, Some(p)) => sfm_init(&read_points(&dir.join(p))?)?,
        (None, None) => {
            return Err(parse_err(&json_path, text.len(), "scene has neither gaussians nor points"));
        }
    };
    let dataset = SceneDataset { scene_id: meta.scene_id, context_views, target_views, initial_cloud };
    dataset.validate().map_err(|e| match e {
        Error::Config(msg) => parse_err(&json_path, 0, msg),
        other => other,
    })?;
    Ok(dataset)
}

/// A single scene directory, or every scene directory directly inside
/// `dir`, in name order.
pub fn load_scene_set(dir: &Path) -> Result<Vec<SceneDataset>> {
    if dir.join("scene.json").is_file() {
        return Ok(vec![load_scene(dir)?]);
    }
    if !dir.is_dir() {
        return Err(Error::config(format!("scene directory {} does not exist", dir.display())));
    }
    let mut dirs: Vec<_> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    dirs.retain(|p| p.join("scene.json").is_file());
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::config(format!("no scenes under {}", dir.display())));
    }
    dirs.iter().map(|d| load_scene(d)).collect()
}

/// Little-endian `GSL2` cloud file.
pub fn save_cloud(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + cloud.as_matrix().len() * 4);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for v in cloud.as_matrix() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_cloud(path: &Path) -> Result<GaussianCloud> {
    let bytes = fs::read(path)?;
    parse_cloud(&bytes, path)
}

fn parse_cloud(bytes: &[u8], path: &Path) -> Result<GaussianCloud> {
    if bytes.len() < 4 || &bytes[..4] != CLOUD_MAGIC {
        return Err(parse_err(path, 0, "bad magic, expected GSL2"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(path, bytes.len(), "truncated header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CLOUD_VERSION {
        return Err(parse_err(path, 4, format!("unsupported version {version}")));
    }
    let g = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if g == 0 {
        return Err(parse_err(path, 8, "cloud has zero gaussians"));
    }
    let expected = (g as u128) * (PARAM_COUNT as u128) * 4 + HEADER_LEN as u128;
    if (bytes.len() as u128) != expected {
        return Err(parse_err(
            path,
            bytes.len().min(expected as usize),
            format!("expected {expected} bytes for {g} gaussians, found {}", bytes.len()),
        ));
    }
    let mut params = Vec::with_capacity(g as usize * PARAM_COUNT);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(parse_err(
                path,
                HEADER_LEN + 4 * i,
                format!("non-finite value in gaussian {}", i / PARAM_COUNT),
            ));
        }
        params.push(v);
    }
    GaussianCloud::from_matrix(params)
}

/// Reads `x y z r g b` lines (colours 0–255); `#` starts a comment.
pub fn read_points(path: &Path) -> Result<Vec<([f32; 3], [f32; 3])>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            let vals: Vec<f32> = body
                .split_whitespace()
                .map(|t| t.parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(path, offset, e.to_string()))?;
            if vals.len() != 6 {
                return Err(parse_err(path, offset, format!("expected 6 values, found {}", vals.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(path, offset, "non-finite value"));
            }
            out.push(([vals[0], vals[1], vals[2]], [vals[3] / 255.0, vals[4] / 255.0, vals[5] / 255.0]));
        }
        offset += line.len();
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "no points"));
    }
    Ok(out)
}

/// Standard point-cloud initialization: isotropic scale from the mean
/// distance to the three nearest points, opacity 0.1, DC colour from the
/// point colour, identity rotation.
pub fn sfm_init(points: &[([f32; 3], [f32; 3])]) -> Result<GaussianCloud> {
    let xyz: Vec<[f32; 3]> = points.iter().map(|p| p.0).collect();
    let table = build_knn(&xyz, 3)?;
    let gaussians: Vec<Gaussian> = points
        .iter()
        .enumerate()
        .map(|(i, (mean, rgb))| {
            let row = table.row(i);
            let mean_dist = row
                .iter()
                .map(|&j| {
                    let d = [0, 1, 2].map(|a| (xyz[j][a] - mean[a]) as f64);
                    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
                })
                .sum::<f64>()
                / row.len() as f64;
            let log_scale = mean_dist.max(1e-7).ln() as f32;
            let mut sh = [[0.0f32; 3]; SH_COEFFS];
            for c in 0..3 {
                sh[0][c] = ((rgb[c] as f64 - 0.5) / SH_C0) as f32;
            }
            Gaussian {
                mean: *mean,
                quaternion: [1.0, 0.0, 0.0, 0.0],
                log_scale: [log_scale; 3],
                opacity_logit: logit(0.1f32),
                sh,
            }
        })
        .collect();
    GaussianCloud::from_gaussians(&gaussians)
}
