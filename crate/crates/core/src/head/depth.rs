use super::PosedMesh;
use crate::camera::CameraRig;
use crate::error::Result;
use crate::imageio::FloatImage;

/// Z-buffered camera-space depth of the mesh, `+∞` where nothing is hit.
///
/// Both windings are rasterized. Depth is interpolated perspective-correctly
/// (linear in `1/z`), which equals the ray/plane intersection at each pixel
/// center. Triangles with a vertex in front of the near plane are skipped.
pub fn rasterize_mesh_depth(mesh: &PosedMesh, camera: &CameraRig) -> Result<FloatImage> {
    camera.validate()?;
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut depth = FloatImage::new(w, h, 1, f64::INFINITY);
    let cam_pts: Vec<_> = mesh.vertices.iter().map(|v| camera.to_camera(v)).collect();

    for face in &mesh.faces {
        let p = face.map(|k| cam_pts[k as usize]);
        if p.iter().any(|q| q.z <= camera.near) {
            continue;
        }
        let s = p.map(|q| camera.project_camera_point(&q));
        let area = edge(s[0], s[1], s[2]);
        if !area.is_finite() || area.abs() < 1e-12 {
            continue;
        }
        let (min_x, max_x) = bounds(s.map(|q| q.0), w);
        let (min_y, max_y) = bounds(s.map(|q| q.1), h);
        for y in min_y..max_y {
            for x in min_x..max_x {
                let pt = (x as f64, y as f64);
                let b0 = edge(s[1], s[2], pt) / area;
                let b1 = edge(s[2], s[0], pt) / area;
                let b2 = edge(s[0], s[1], pt) / area;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let z = 1.0 / (b0 / p[0].z + b1 / p[1].z + b2 / p[2].z);
                let slot = &mut depth.data[y * w + x];
                if z < *slot && z < camera.far {
                    *slot = z;
                }
            }
        }
    }
    Ok(depth)
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn bounds(vals: [f64; 3], size: usize) -> (usize, usize) {
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor() + 1.0;
    let hi = hi.min(size as f64).max(0.0);
    (lo.min(size as f64) as usize, hi as usize)
}
