//! Image-space dense maps and their transfer to UV space.
//!
//! Rendering is orthographic: a weak-perspective camera maps `(x, y)` to
//! pixels by a uniform scale and offset and leaves `z` alone. The viewer sits
//! on the `-z` side, so the smaller depth wins the z-test. Pixel `(row, col)`
//! has its centre at image coordinates `(col + 0.5, row + 0.5)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::body_model::{JointSet, Mesh};
use crate::grid::Grid;
use crate::uv_atlas::{PartSegmentation, UvAtlas};
use crate::{Error, Result, Vec3};

pub const DEFAULT_IMAGE_SIZE: usize = 224;

/// Weak-perspective camera: `p = scale * (x, y) + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub scale: f64,
    pub offset: [f64; 2],
}

impl Camera {
    pub fn new(scale: f64, offset: [f64; 2]) -> Result<Self> {
        let cam = Self { scale, offset };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) || !self.offset.iter().all(|o| o.is_finite()) {
            return Err(Error::InvalidParams(format!("camera scale {} offset {:?}", self.scale, self.offset)));
        }
        Ok(())
    }

    /// Camera that frames the xy bounding box of `points` in a `height x width` image,
    /// leaving `margin` (fraction of the image side) free on every border.
    pub fn fit(points: &[Vec3], height: usize, width: usize, margin: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Degenerate("cannot frame an empty point set".into()));
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let usable = 1.0 - 2.0 * margin;
        let extent = [(hi[0] - lo[0]).max(1e-9), (hi[1] - lo[1]).max(1e-9)];
        let scale = (usable * width as f64 / extent[0]).min(usable * height as f64 / extent[1]);
        let centre = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        Self::new(scale, [width as f64 / 2.0 - scale * centre[0], height as f64 / 2.0 - scale * centre[1]])
    }

    pub fn project(&self, p: &Vec3) -> [f64; 2] {
        [self.scale * p.x + self.offset[0], self.scale * p.y + self.offset[1]]
    }

    /// World xy of an image point (inverse of [`Camera::project`] on the image plane).
    pub fn unproject(&self, q: [f64; 2]) -> [f64; 2] {
        [(q[0] - self.offset[0]) / self.scale, (q[1] - self.offset[1]) / self.scale]
    }
}

pub fn project_weak_perspective(points: &[Vec3], camera: &Camera) -> Vec<[f64; 2]> {
    points.iter().map(|p| camera.project(p)).collect()
}

/// Dense per-pixel maps of a rendered body.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMaps {
    pub mask: Grid<bool>,
    /// UV coordinate of the visible surface point.
    pub uv: Grid<[f64; 2]>,
    pub joint: Grid<Vec3>,
    pub location: Grid<Vec3>,
    pub displacement: Grid<Vec3>,
    pub part: Grid<Option<u8>>,
    /// Visible face, kept for diagnostics.
    pub face: Grid<Option<usize>>,
}

impl ImageMaps {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            mask: Grid::new(height, width, false),
            uv: Grid::new(height, width, [0.0; 2]),
            joint: Grid::new(height, width, Vec3::zeros()),
            location: Grid::new(height, width, Vec3::zeros()),
            displacement: Grid::new(height, width, Vec3::zeros()),
            part: Grid::new(height, width, None),
            face: Grid::new(height, width, None),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.as_slice().iter().filter(|m| **m).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.mask.len() as f64
    }

    fn clear(&mut self, idx: usize) {
        self.mask.as_mut_slice()[idx] = false;
        self.uv.as_mut_slice()[idx] = [0.0; 2];
        self.joint.as_mut_slice()[idx] = Vec3::zeros();
        self.location.as_mut_slice()[idx] = Vec3::zeros();
        self.displacement.as_mut_slice()[idx] = Vec3::zeros();
        self.part.as_mut_slice()[idx] = None;
        self.face.as_mut_slice()[idx] = None;
    }
}

/// Dense maps in UV space.
#[derive(Debug, Clone, PartialEq)]
pub struct UvMaps {
    pub valid: Grid<bool>,
    pub joint: Grid<Vec3>,
    pub location: Grid<Vec3>,
    pub displacement: Grid<Vec3>,
}

impl UvMaps {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            valid: Grid::new(height, width, false),
            joint: Grid::new(height, width, Vec3::zeros()),
            location: Grid::new(height, width, Vec3::zeros()),
            displacement: Grid::new(height, width, Vec3::zeros()),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.valid.shape()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_slice().iter().filter(|v| **v).count()
    }

    /// Rebuild displacement as location minus joint on valid texels, zero elsewhere.
    pub fn recompute_displacement(&mut self) {
        for i in 0..self.valid.len() {
            self.displacement.as_mut_slice()[i] =
                if self.valid.as_slice()[i] { self.location.as_slice()[i] - self.joint.as_slice()[i] } else { Vec3::zeros() };
        }
    }
}

/// Barycentric weights of `q` in `p`, edges included. `None` for (near) zero-area triangles.
fn barycentric_closed(p: &[[f64; 2]; 3], q: [f64; 2]) -> Option<[f64; 3]> {
    let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
    if area.abs() < 1e-12 {
        return None;
    }
    let edge = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]);
    let w = [edge(p[1], p[2]) / area, edge(p[2], p[0]) / area, edge(p[0], p[1]) / area];
    w.iter().all(|x| *x >= 0.0).then_some(w)
}

/// Render M_i, M_l, M_j and M_d with a z-buffer.
///
/// A pixel's part is read from the part segmentation at its UV texel; `M_j` is that
/// part's ground-truth joint.
pub fn render_dense_maps(
    mesh: &Mesh,
    atlas: &UvAtlas,
    part_seg: &PartSegmentation,
    joints_gt: &JointSet,
    camera: &Camera,
    height: usize,
    width: usize,
) -> Result<ImageMaps> {
    camera.validate()?;
    if mesh.vertices.len() != atlas.vertex_uv.len() {
        return Err(Error::dims(format!("{} vertices", atlas.vertex_uv.len()), mesh.vertices.len()));
    }
    if part_seg.shape() != atlas.shape() {
        return Err(Error::dims(format!("{:?} part map", atlas.shape()), format!("{:?}", part_seg.shape())));
    }
    let projected = project_weak_perspective(&mesh.vertices, camera);
    let inside = projected.iter().filter(|p| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < width as f64 && p[1] < height as f64).count();
    if 2 * inside < projected.len() {
        return Err(Error::CameraFraming { inside, total: projected.len() });
    }

    let mut depth = Grid::new(height, width, f64::INFINITY);
    let mut hit: Grid<Option<(usize, [f64; 3])>> = Grid::new(height, width, None);
    for (fi, f) in mesh.faces.iter().enumerate() {
        let p = f.map(|v| projected[v]);
        let (min_x, max_x) =
            (p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min), p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max));
        let (min_y, max_y) =
            (p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min), p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max));
        if max_x < 0.0 || max_y < 0.0 || min_x >= width as f64 || min_y >= height as f64 {
            continue;
        }
        let c0 = (min_x - 0.5).ceil().max(0.0) as usize;
        let c1 = ((max_x - 0.5).floor().min(width as f64 - 1.0)).max(-1.0);
        let r0 = (min_y - 0.5).ceil().max(0.0) as usize;
        let r1 = ((max_y - 0.5).floor().min(height as f64 - 1.0)).max(-1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let Some(b) = barycentric_closed(&p, [c as f64 + 0.5, r as f64 + 0.5]) else { continue };
                let z = b[0] * mesh.vertices[f[0]].z + b[1] * mesh.vertices[f[1]].z + b[2] * mesh.vertices[f[2]].z;
                if z < *depth.get(r, c) {
                    depth.set(r, c, z);
                    hit.set(r, c, Some((fi, b)));
                }
            }
        }
    }

    let mut maps = ImageMaps::empty(height, width);
    for (idx, h) in hit.as_slice().iter().enumerate() {
        let Some((fi, b)) = *h else { continue };
        let f = mesh.faces[fi];
        let cuv = atlas.corner_uv[fi];
        let uv = [b[0] * cuv[0][0] + b[1] * cuv[1][0] + b[2] * cuv[2][0], b[0] * cuv[0][1] + b[1] * cuv[1][1] + b[2] * cuv[2][1]];
        let (tr, tc) = atlas.texel_of_uv(uv);
        let Some(part) = *part_seg.assign.get(tr, tc) else { continue };
        let location = mesh.vertices[f[0]] * b[0] + mesh.vertices[f[1]] * b[1] + mesh.vertices[f[2]] * b[2];
        let joint = joints_gt.joints[part as usize];
        maps.mask.as_mut_slice()[idx] = true;
        maps.uv.as_mut_slice()[idx] = uv;
        maps.location.as_mut_slice()[idx] = location;
        maps.joint.as_mut_slice()[idx] = joint;
        maps.displacement.as_mut_slice()[idx] = location - joint;
        maps.part.as_mut_slice()[idx] = Some(part);
        maps.face.as_mut_slice()[idx] = Some(fi);
    }
    Ok(maps)
}

/// Axis-aligned occluder, half-open pixel ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    pub min_count: usize,
    pub max_count: usize,
    /// Rectangle side range as a fraction of the foreground bounding box side.
    pub min_size: f64,
    pub max_size: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self { min_count: 1, max_count: 2, min_size: 0.3, max_size: 0.6 }
    }
}

impl OcclusionConfig {
    pub fn none() -> Self {
        Self { min_count: 0, max_count: 0, min_size: 0.0, max_size: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_count > self.max_count || !(0.0..=1.0).contains(&self.min_size) || self.min_size > self.max_size {
            return Err(Error::Config(format!("occlusion config {self:?}")));
        }
        Ok(())
    }
}

/// Sample occluding rectangles centred inside the foreground bounding box.
pub fn sample_occluders(maps: &ImageMaps, seed: u64, cfg: &OcclusionConfig) -> Result<Vec<Rect>> {
    cfg.validate()?;
    let (h, w) = maps.shape();
    let (mut r_lo, mut r_hi, mut c_lo, mut c_hi) = (h, 0, w, 0);
    for (r, c, m) in maps.mask.iter_cells() {
        if *m {
            r_lo = r_lo.min(r);
            r_hi = r_hi.max(r + 1);
            c_lo = c_lo.min(c);
            c_hi = c_hi.max(c + 1);
        }
    }
    if r_lo >= r_hi {
        (r_lo, r_hi, c_lo, c_hi) = (0, h, 0, w);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(cfg.min_count..=cfg.max_count);
    let mut rects = Vec::with_capacity(count);
    for _ in 0..count {
        let side_h = ((r_hi - r_lo) as f64 * rng.gen_range(cfg.min_size..=cfg.max_size)).round() as usize;
        let side_w = ((c_hi - c_lo) as f64 * rng.gen_range(cfg.min_size..=cfg.max_size)).round() as usize;
        let cr = rng.gen_range(r_lo..r_hi);
        let cc = rng.gen_range(c_lo..c_hi);
        let row0 = cr.saturating_sub(side_h / 2);
        let col0 = cc.saturating_sub(side_w / 2);
        rects.push(Rect { row0, col0, row1: (row0 + side_h).min(h), col1: (col0 + side_w).min(w) });
    }
    Ok(rects)
}

/// Clear every pixel covered by `rects`.
pub fn occlude(maps: &ImageMaps, rects: &[Rect]) -> ImageMaps {
    let mut out = maps.clone();
    let w = maps.shape().1;
    for rect in rects {
        for r in rect.row0..rect.row1 {
            for c in rect.col0..rect.col1 {
                out.clear(r * w + c);
            }
        }
    }
    out
}

/// Seeded synthetic occlusion; also returns the sampled rectangles.
pub fn apply_synthetic_occlusion(maps: &ImageMaps, seed: u64, cfg: &OcclusionConfig) -> Result<(ImageMaps, Vec<Rect>)> {
    let rects = sample_occluders(maps, seed, cfg)?;
    Ok((occlude(maps, &rects), rects))
}

/// Stand-in for a learned dense-map predictor: Gaussian noise on the location and joint
/// channels of foreground pixels, displacement kept consistent.
pub fn add_prediction_noise(maps: &ImageMaps, sigma: f64, seed: u64) -> Result<ImageMaps> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma {sigma}")));
    }
    let mut out = maps.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
    for idx in 0..out.mask.len() {
        if out.mask.as_slice()[idx] {
            let l = out.location.as_slice()[idx] + draw();
            let j = out.joint.as_slice()[idx] + draw();
            out.location.as_mut_slice()[idx] = l;
            out.joint.as_mut_slice()[idx] = j;
            out.displacement.as_mut_slice()[idx] = l - j;
        }
    }
    Ok(out)
}

/// Diagnostics from [`warp_image_to_uv`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WarpStats {
    pub scattered: usize,
    pub clamped: usize,
}

/// Forward-scatter foreground pixels to the texel containing their UV; collisions are averaged.
pub fn warp_image_to_uv(maps: &ImageMaps, atlas: &UvAtlas) -> (UvMaps, WarpStats) {
    let (h, w) = atlas.shape();
    let mut sum_j = vec![Vec3::zeros(); h * w];
    let mut sum_l = vec![Vec3::zeros(); h * w];
    let mut sum_d = vec![Vec3::zeros(); h * w];
    let mut count = vec![0usize; h * w];
    let mut stats = WarpStats::default();
    for idx in 0..maps.mask.len() {
        if !maps.mask.as_slice()[idx] {
            continue;
        }
        let uv = maps.uv.as_slice()[idx];
        if !uv.iter().all(|x| (0.0..=1.0).contains(x)) {
            stats.clamped += 1;
        }
        let (r, c) = atlas.texel_of_uv(uv);
        let t = r * w + c;
        sum_j[t] += maps.joint.as_slice()[idx];
        sum_l[t] += maps.location.as_slice()[idx];
        sum_d[t] += maps.displacement.as_slice()[idx];
        count[t] += 1;
        stats.scattered += 1;
    }
    let mut out = UvMaps::empty(h, w);
    for t in 0..h * w {
        if count[t] > 0 {
            let n = count[t] as f64;
            out.valid.as_mut_slice()[t] = true;
            out.joint.as_mut_slice()[t] = sum_j[t] / n;
            out.location.as_mut_slice()[t] = sum_l[t] / n;
            out.displacement.as_mut_slice()[t] = sum_d[t] / n;
        }
    }
    (out, stats)
}

/// Complete ground-truth UV maps: rasterised locations and per-part constant joints.
pub fn make_uv_ground_truth(mesh: &Mesh, part_seg: &PartSegmentation, joints_gt: &JointSet, atlas: &UvAtlas) -> Result<UvMaps> {
    let location = atlas.rasterize_vec3(&mesh.vertices)?;
    if part_seg.shape() != atlas.shape() {
        return Err(Error::dims(format!("{:?} part map", atlas.shape()), format!("{:?}", part_seg.shape())));
    }
    let (h, w) = atlas.shape();
    let mut out = UvMaps::empty(h, w);
    out.location = location;
    for t in 0..h * w {
        if let Some(p) = part_seg.assign.as_slice()[t] {
            out.valid.as_mut_slice()[t] = true;
            out.joint.as_mut_slice()[t] = joints_gt.joints[p as usize];
        } else {
            out.location.as_mut_slice()[t] = Vec3::zeros();
        }
    }
    out.recompute_displacement();
    Ok(out)
}

/// Largest bounding-box extent of a point set, the length unit of quantisation bounds.
pub fn body_scale(points: &[Vec3]) -> f64 {
    (0..3)
        .map(|a| {
            let lo = points.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .fold(0.0, f64::max)
}
