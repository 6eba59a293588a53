//! Sparse-reconstruction ingestion (text and binary table layouts).
//!
//! Expects the usual `cameras`, `images`, `points3D` tables under a sparse
//! directory, plus an image directory with the ground-truth photographs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt};
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::{camera_extent, load_png, SceneBundle, TrainView, TEST_SPLIT_STRIDE};
use crate::camera::Camera;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct CameraIntrinsics {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Debug, Clone)]
struct ImagePose {
    qvec: [f64; 4],
    tvec: [f64; 3],
    camera_id: u32,
    name: String,
}

/// Tolerance for the radial coefficient of SIMPLE_RADIAL cameras; images
/// must be undistorted before training.
const RADIAL_EPS: f64 = 1e-9;

fn intrinsics_from_params(
    model: &str,
    width: usize,
    height: usize,
    params: &[f64],
) -> Result<CameraIntrinsics> {
    let build = |fx, fy, cx, cy| CameraIntrinsics {
        width,
        height,
        fx,
        fy,
        cx,
        cy,
    };
    match model {
        "SIMPLE_PINHOLE" => {
            if params.len() != 3 {
                return Err(Error::data("SIMPLE_PINHOLE expects 3 parameters"));
            }
            Ok(build(params[0], params[0], params[1], params[2]))
        }
        "PINHOLE" => {
            if params.len() != 4 {
                return Err(Error::data("PINHOLE expects 4 parameters"));
            }
            Ok(build(params[0], params[1], params[2], params[3]))
        }
        "SIMPLE_RADIAL" => {
            if params.len() != 4 {
                return Err(Error::data("SIMPLE_RADIAL expects 4 parameters"));
            }
            if params[3].abs() > RADIAL_EPS {
                return Err(Error::data(format!(
                    "SIMPLE_RADIAL with distortion {} is unsupported; undistort first",
                    params[3]
                )));
            }
            Ok(build(params[0], params[0], params[1], params[2]))
        }
        other => Err(Error::data(format!("unknown camera model {other}"))),
    }
}

fn model_from_id(id: i32) -> Result<&'static str> {
    match id {
        0 => Ok("SIMPLE_PINHOLE"),
        1 => Ok("PINHOLE"),
        2 => Ok("SIMPLE_RADIAL"),
        other => Err(Error::data(format!("unknown camera model id {other}"))),
    }
}

fn model_param_count(model: &str) -> usize {
    match model {
        "SIMPLE_PINHOLE" => 3,
        "PINHOLE" => 4,
        _ => 4,
    }
}

fn read_cameras_txt(path: &Path) -> Result<HashMap<u32, CameraIntrinsics>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut cameras = HashMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 5 {
            return Err(Error::data(format!("malformed camera row: {line}")));
        }
        let id: u32 = tok[0].parse().map_err(|_| Error::data("bad camera id"))?;
        let model = tok[1];
        let width: usize = tok[2].parse().map_err(|_| Error::data("bad width"))?;
        let height: usize = tok[3].parse().map_err(|_| Error::data("bad height"))?;
        let params: Vec<f64> = tok[4..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| Error::data("bad parameter")))
            .collect::<Result<_>>()?;
        cameras.insert(id, intrinsics_from_params(model, width, height, &params)?);
    }
    Ok(cameras)
}

fn read_images_txt(path: &Path) -> Result<Vec<ImagePose>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut poses = Vec::new();
    let mut expect_points_line = false;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        // Each image row is followed by its observations line, which may be
        // empty and must be consumed either way.
        if expect_points_line {
            expect_points_line = false;
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = trimmed.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(Error::data(format!("malformed image row: {trimmed}")));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::data("bad pose value"));
        poses.push(ImagePose {
            qvec: [parse(tok[1])?, parse(tok[2])?, parse(tok[3])?, parse(tok[4])?],
            tvec: [parse(tok[5])?, parse(tok[6])?, parse(tok[7])?],
            camera_id: tok[8].parse().map_err(|_| Error::data("bad camera id"))?,
            name: tok[9].to_string(),
        });
        expect_points_line = true;
    }
    Ok(poses)
}

fn read_points_txt(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = trimmed.split_whitespace().collect();
        if tok.len() < 7 {
            return Err(Error::data(format!("malformed point row: {trimmed}")));
        }
        for t in &tok[1..4] {
            positions.push(t.parse::<f64>().map_err(|_| Error::data("bad coordinate"))?);
        }
        for t in &tok[4..7] {
            colors.push(t.parse::<f64>().map_err(|_| Error::data("bad color"))? / 255.0);
        }
    }
    Ok((positions, colors))
}

fn read_string_until_nul<R: Read>(reader: &mut R) -> Result<String> {
    let mut bytes = Vec::new();
    loop {
        let mut b = [0u8; 1];
        reader
            .read_exact(&mut b)
            .map_err(|_| Error::data("truncated string"))?;
        if b[0] == 0 {
            break;
        }
        bytes.push(b[0]);
    }
    String::from_utf8(bytes).map_err(|_| Error::data("non-utf8 image name"))
}

fn read_cameras_bin(path: &Path) -> Result<HashMap<u32, CameraIntrinsics>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let n = r
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::data("truncated cameras table"))?;
    let mut cameras = HashMap::new();
    for _ in 0..n {
        let id = r.read_u32::<LittleEndian>().map_err(|_| Error::data("truncated camera"))?;
        let model_id = r
            .read_i32::<LittleEndian>()
            .map_err(|_| Error::data("truncated camera"))?;
        let width = r
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::data("truncated camera"))? as usize;
        let height = r
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::data("truncated camera"))? as usize;
        let model = model_from_id(model_id)?;
        let mut params = Vec::new();
        for _ in 0..model_param_count(model) {
            params.push(
                r.read_f64::<LittleEndian>()
                    .map_err(|_| Error::data("truncated camera parameters"))?,
            );
        }
        cameras.insert(id, intrinsics_from_params(model, width, height, &params)?);
    }
    Ok(cameras)
}

fn read_images_bin(path: &Path) -> Result<Vec<ImagePose>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let n = r
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::data("truncated images table"))?;
    let mut poses = Vec::new();
    for _ in 0..n {
        let _image_id = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::data("truncated image"))?;
        let mut qvec = [0.0; 4];
        for q in qvec.iter_mut() {
            *q = r
                .read_f64::<LittleEndian>()
                .map_err(|_| Error::data("truncated image pose"))?;
        }
        let mut tvec = [0.0; 3];
        for t in tvec.iter_mut() {
            *t = r
                .read_f64::<LittleEndian>()
                .map_err(|_| Error::data("truncated image pose"))?;
        }
        let camera_id = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::data("truncated image"))?;
        let name = read_string_until_nul(&mut r)?;
        let num_points = r
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::data("truncated image"))?;
        let mut skip = vec![0u8; (num_points as usize) * (8 + 8 + 8)];
        r.read_exact(&mut skip)
            .map_err(|_| Error::data("truncated image observations"))?;
        poses.push(ImagePose {
            qvec,
            tvec,
            camera_id,
            name,
        });
    }
    Ok(poses)
}

fn read_points_bin(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let n = r
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::data("truncated points table"))?;
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    for _ in 0..n {
        let _id = r
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::data("truncated point"))?;
        for _ in 0..3 {
            positions.push(
                r.read_f64::<LittleEndian>()
                    .map_err(|_| Error::data("truncated point"))?,
            );
        }
        for _ in 0..3 {
            colors.push(
                r.read_u8().map_err(|_| Error::data("truncated point"))? as f64 / 255.0,
            );
        }
        let _error = r
            .read_f64::<LittleEndian>()
            .map_err(|_| Error::data("truncated point"))?;
        let track_len = r
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::data("truncated point"))?;
        let mut skip = vec![0u8; (track_len as usize) * 8];
        r.read_exact(&mut skip)
            .map_err(|_| Error::data("truncated point track"))?;
    }
    Ok((positions, colors))
}

fn pose_to_camera(pose: &ImagePose, intr: &CameraIntrinsics) -> Camera {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(
        pose.qvec[0],
        pose.qvec[1],
        pose.qvec[2],
        pose.qvec[3],
    ));
    let rotation: Matrix3<f64> = *q.to_rotation_matrix().matrix();
    Camera::new(
        intr.width,
        intr.height,
        intr.fx,
        intr.fy,
        intr.cx,
        intr.cy,
        rotation,
        Vector3::new(pose.tvec[0], pose.tvec[1], pose.tvec[2]),
    )
}

/// Load a sparse reconstruction. `sparse_dir` must contain the three tables
/// in text or binary form; ground-truth images are read from `images_dir`.
/// Views are sorted by image name and every 8th goes to the test split.
pub fn load_colmap(sparse_dir: &Path, images_dir: &Path) -> Result<SceneBundle> {
    let pick = |stem: &str| -> Result<std::path::PathBuf> {
        let txt = sparse_dir.join(format!("{stem}.txt"));
        let bin = sparse_dir.join(format!("{stem}.bin"));
        if txt.is_file() {
            Ok(txt)
        } else if bin.is_file() {
            Ok(bin)
        } else {
            Err(Error::data(format!(
                "missing {stem} table under {}",
                sparse_dir.display()
            )))
        }
    };

    let cameras_path = pick("cameras")?;
    let cameras = if cameras_path.extension().is_some_and(|e| e == "txt") {
        read_cameras_txt(&cameras_path)?
    } else {
        read_cameras_bin(&cameras_path)?
    };
    let images_path = pick("images")?;
    let mut poses = if images_path.extension().is_some_and(|e| e == "txt") {
        read_images_txt(&images_path)?
    } else {
        read_images_bin(&images_path)?
    };
    let points_path = pick("points3D")?;
    let (positions, colors) = if points_path.extension().is_some_and(|e| e == "txt") {
        read_points_txt(&points_path)?
    } else {
        read_points_bin(&points_path)?
    };

    if positions.is_empty() {
        return Err(Error::data("points table contains no points"));
    }
    if poses.is_empty() {
        return Err(Error::data("images table contains no views"));
    }

    poses.sort_by(|a, b| a.name.cmp(&b.name));
    let mut views = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let intr = cameras.get(&pose.camera_id).ok_or_else(|| {
            Error::data(format!("image {} references unknown camera", pose.name))
        })?;
        let camera = pose_to_camera(pose, intr);
        let image = load_png(&images_dir.join(&pose.name))?;
        if image.width != camera.width || image.height != camera.height {
            return Err(Error::data(format!(
                "image {} is {}x{} but the camera expects {}x{}",
                pose.name, image.width, image.height, camera.width, camera.height
            )));
        }
        views.push(TrainView {
            name: pose.name.clone(),
            camera,
            image,
            is_test: i % TEST_SPLIT_STRIDE == 0,
            roi: None,
        });
    }

    let extent = camera_extent(&views.iter().map(|v| v.camera.clone()).collect::<Vec<_>>());
    Ok(SceneBundle {
        views,
        sfm_positions: positions,
        sfm_colors: colors,
        scene_extent: extent,
    })
}
