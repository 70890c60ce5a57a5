//! Dataset ingestion: the transforms.json convention of the synthetic scenes
//! and COLMAP text exports, plus initial points from PLY.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::Deserialize;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::io::image::read_png;
use crate::io::ply::read_ply;
use crate::math::Quaternion;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    /// One H x W x 3 image in \[0,1\] per camera.
    pub images: Vec<Vec<f64>>,
    pub splits: Vec<Split>,
    pub names: Vec<String>,
    pub initial_points: Vec<Vector3<f64>>,
    pub initial_colors: Vec<Vector3<f64>>,
}

impl Dataset {
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.cameras.len())
            .filter(|i| self.splits[*i] == Split::Train)
            .collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.cameras.len())
            .filter(|i| self.splits[*i] == Split::Test)
            .collect()
    }

    pub fn camera_positions(&self) -> Vec<Vector3<f64>> {
        self.cameras.iter().map(|c| c.position()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    TransformsJson,
    ColmapText,
}

/// Every `holdout`-th camera (by sorted order) becomes a test view; 0 keeps
/// everything in the training split.
pub const TEST_HOLDOUT: usize = 8;

/// Loads a dataset root, auto-detecting the layout unless `format` is given.
pub fn load_dataset(root: &Path, format: Option<DatasetFormat>, near: f64) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::invalid(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let format = match format {
        Some(f) => f,
        None => {
            if root.join("transforms.json").is_file()
                || root.join("transforms_train.json").is_file()
            {
                DatasetFormat::TransformsJson
            } else if root.join("sparse/0/cameras.txt").is_file()
                || root.join("cameras.txt").is_file()
            {
                DatasetFormat::ColmapText
            } else {
                return Err(Error::invalid(format!(
                    "{}: found neither transforms.json nor cameras.txt (expected a \
                     transforms-json or colmap-text layout)",
                    root.display()
                )));
            }
        }
    };
    match format {
        DatasetFormat::TransformsJson => load_transforms_json(root, near),
        DatasetFormat::ColmapText => load_colmap_text(root, near),
    }
}

#[derive(Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<TransformsFrame>,
}

#[derive(Deserialize)]
struct TransformsFrame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

fn resolve_frame_image(root: &Path, file_path: &str) -> PathBuf {
    let raw = root.join(file_path.trim_start_matches("./"));
    if raw.extension().is_some() && raw.is_file() {
        return raw;
    }
    let with_png = raw.with_extension("png");
    if with_png.is_file() {
        return with_png;
    }
    raw
}

/// transforms.json: OpenGL-style camera-to-world matrices and a shared
/// horizontal field of view. Axes are flipped to the +z-forward, y-down
/// convention before inverting.
fn load_transforms_json(root: &Path, near: f64) -> Result<Dataset> {
    let path = root.join("transforms.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let parsed: TransformsFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if parsed.frames.is_empty() {
        return Err(Error::invalid(format!("{}: no frames", path.display())));
    }

    let mut cameras = Vec::new();
    let mut images = Vec::new();
    let mut names = Vec::new();
    for frame in &parsed.frames {
        let img_path = resolve_frame_image(root, &frame.file_path);
        let img = read_png(&img_path)?;
        let mut c2w = Matrix4::zeros();
        for r in 0..4 {
            for c in 0..4 {
                c2w[(r, c)] = frame.transform_matrix[r][c];
            }
        }
        // Flip y and z camera axes (OpenGL to OpenCV convention).
        for r in 0..4 {
            c2w[(r, 1)] = -c2w[(r, 1)];
            c2w[(r, 2)] = -c2w[(r, 2)];
        }
        let w2c = c2w
            .try_inverse()
            .ok_or_else(|| Error::invalid(format!("{}: singular transform", path.display())))?;
        let rotation = Matrix3::from_fn(|r, c| w2c[(r, c)]);
        let translation = Vector3::new(w2c[(0, 3)], w2c[(1, 3)], w2c[(2, 3)]);
        let fx = Camera::focal_from_fov_x(img.width, parsed.camera_angle_x);
        let cam = Camera {
            rotation,
            translation,
            fx,
            fy: fx,
            cx: img.width as f64 / 2.0,
            cy: img.height as f64 / 2.0,
            width: img.width,
            height: img.height,
            near,
        };
        cam.validate()?;
        cameras.push(cam);
        images.push(img.pixels);
        names.push(frame.file_path.clone());
    }

    let (initial_points, initial_colors) = load_initial_points(root)?;
    let splits = holdout_splits(cameras.len());
    Ok(Dataset {
        cameras,
        images,
        splits,
        names,
        initial_points,
        initial_colors,
    })
}

fn holdout_splits(n: usize) -> Vec<Split> {
    (0..n)
        .map(|i| {
            if TEST_HOLDOUT > 0 && i % TEST_HOLDOUT == 0 {
                Split::Test
            } else {
                Split::Train
            }
        })
        .collect()
}

/// Point positions and their colors, both length M.
type PointsAndColors = (Vec<Vector3<f64>>, Vec<Vector3<f64>>);

fn load_initial_points(root: &Path) -> Result<PointsAndColors> {
    for candidate in [
        "points3d.ply",
        "points3D.ply",
        "points.ply",
        "sparse/0/points3D.ply",
    ] {
        let p = root.join(candidate);
        if p.is_file() {
            let cloud = read_ply(&p)?;
            if cloud.positions.is_empty() {
                return Err(Error::invalid(format!(
                    "{}: empty point cloud",
                    p.display()
                )));
            }
            return Ok((cloud.positions, cloud.colors));
        }
    }
    Ok((Vec::new(), Vec::new()))
}

struct ColmapCamera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

/// COLMAP text export: cameras.txt / images.txt / points3D.txt, either at the
/// root or under sparse/0, with images in images/.
fn load_colmap_text(root: &Path, near: f64) -> Result<Dataset> {
    let base = if root.join("sparse/0/cameras.txt").is_file() {
        root.join("sparse/0")
    } else {
        root.to_path_buf()
    };
    let cameras_txt = base.join("cameras.txt");
    let images_txt = base.join("images.txt");
    if !cameras_txt.is_file() || !images_txt.is_file() {
        return Err(Error::invalid(format!(
            "{}: colmap layout needs cameras.txt and images.txt",
            base.display()
        )));
    }

    let mut intrinsics = std::collections::HashMap::new();
    for (line_no, line) in std::fs::read_to_string(&cameras_txt)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        let perr = |msg: String| Error::Parse {
            path: cameras_txt.display().to_string(),
            line: line_no + 1,
            msg,
        };
        if t.len() < 5 {
            return Err(perr("truncated camera line".into()));
        }
        let id: u64 = t[0].parse().map_err(|_| perr("bad camera id".into()))?;
        let model = t[1];
        let width: usize = t[2].parse().map_err(|_| perr("bad width".into()))?;
        let height: usize = t[3].parse().map_err(|_| perr("bad height".into()))?;
        let params: Vec<f64> = t[4..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| perr("bad camera parameter".into()))?;
        let cam = match model {
            "PINHOLE" if params.len() >= 4 => ColmapCamera {
                fx: params[0],
                fy: params[1],
                cx: params[2],
                cy: params[3],
                width,
                height,
            },
            "SIMPLE_PINHOLE" if params.len() >= 3 => ColmapCamera {
                fx: params[0],
                fy: params[0],
                cx: params[1],
                cy: params[2],
                width,
                height,
            },
            other => {
                return Err(perr(format!(
                    "unsupported camera model '{other}' (PINHOLE or SIMPLE_PINHOLE only)"
                )))
            }
        };
        intrinsics.insert(id, cam);
    }

    let mut entries: Vec<(String, Camera)> = Vec::new();
    let images_text = std::fs::read_to_string(&images_txt)?;
    let mut lines = images_text.lines().enumerate().peekable();
    while let Some((line_no, line)) = lines.next() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = trimmed.split_whitespace().collect();
        let perr = |msg: String| Error::Parse {
            path: images_txt.display().to_string(),
            line: line_no + 1,
            msg,
        };
        if t.len() < 10 {
            return Err(perr("truncated image line".into()));
        }
        let q = Quaternion::new(
            t[1].parse().map_err(|_| perr("bad qw".into()))?,
            t[2].parse().map_err(|_| perr("bad qx".into()))?,
            t[3].parse().map_err(|_| perr("bad qy".into()))?,
            t[4].parse().map_err(|_| perr("bad qz".into()))?,
        )
        .normalized()
        .map_err(|_| perr("zero quaternion".into()))?;
        let translation = Vector3::new(
            t[5].parse().map_err(|_| perr("bad tx".into()))?,
            t[6].parse().map_err(|_| perr("bad ty".into()))?,
            t[7].parse().map_err(|_| perr("bad tz".into()))?,
        );
        let cam_id: u64 = t[8].parse().map_err(|_| perr("bad camera id".into()))?;
        let name = t[9].to_string();
        let intr = intrinsics
            .get(&cam_id)
            .ok_or_else(|| perr(format!("image references unknown camera {cam_id}")))?;
        let rotation =
            crate::math::quat_to_rotation(&q).map_err(|e| perr(format!("bad rotation: {e}")))?;
        let cam = Camera {
            rotation,
            translation,
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
            near,
        };
        entries.push((name, cam));
        // The second line per image holds 2D observations; skip it.
        lines.next();
    }
    if entries.is_empty() {
        return Err(Error::invalid(format!(
            "{}: no images listed",
            images_txt.display()
        )));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));

    let mut cameras = Vec::new();
    let mut images = Vec::new();
    let mut names = Vec::new();
    for (name, cam) in entries {
        let img_path = root.join("images").join(&name);
        let img = read_png(&img_path)?;
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::invalid(format!(
                "{}: image is {}x{} but camera says {}x{}",
                img_path.display(),
                img.width,
                img.height,
                cam.width,
                cam.height
            )));
        }
        cameras.push(cam);
        images.push(img.pixels);
        names.push(name);
    }

    // Initial points from points3D.txt, falling back to a PLY.
    let points_txt = base.join("points3D.txt");
    let (initial_points, initial_colors) = if points_txt.is_file() {
        let mut pts = Vec::new();
        let mut cols = Vec::new();
        for (line_no, line) in std::fs::read_to_string(&points_txt)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() < 7 {
                return Err(Error::Parse {
                    path: points_txt.display().to_string(),
                    line: line_no + 1,
                    msg: "truncated point line".into(),
                });
            }
            let get = |i: usize| -> Result<f64> {
                t[i].parse().map_err(|_| Error::Parse {
                    path: points_txt.display().to_string(),
                    line: line_no + 1,
                    msg: format!("bad number in column {i}"),
                })
            };
            pts.push(Vector3::new(get(1)?, get(2)?, get(3)?));
            cols.push(Vector3::new(
                get(4)? / 255.0,
                get(5)? / 255.0,
                get(6)? / 255.0,
            ));
        }
        (pts, cols)
    } else {
        load_initial_points(root)?
    };

    let splits = holdout_splits(cameras.len());
    Ok(Dataset {
        cameras,
        images,
        splits,
        names,
        initial_points,
        initial_colors,
    })
}
