//! UV parameterisation of the body surface.
//!
//! Every body segment unwraps to its own rectangular island. Island corners
//! sit on integer texel coordinates and each grid cell is an even number of
//! texels wide and an odd number tall, so no texel centre ever lands on a
//! triangle edge: every texel inside an island belongs to exactly one face.
//! Right-side islands are the column-mirror of the left ones and the midline
//! islands are centred on the middle of the atlas, so the left-right flip is
//! the column reflection `col -> W - 1 - col`, exactly.

use crate::body_model::{regress_joints, BodyModel, Side, LSP_MIRROR};
use crate::grid::Grid;
use crate::{Error, Result, Vec3, NUM_LSP_JOINTS};

pub const DEFAULT_RESOLUTION: usize = 128;
pub const MIN_RESOLUTION: usize = 32;

/// Texel rectangle of one segment's island.
#[derive(Debug, Clone, PartialEq)]
pub struct Island {
    pub segment: usize,
    pub col0: usize,
    pub row0: usize,
    /// Texels per column step (even).
    pub cell_width: usize,
    /// Texels per ring step (odd).
    pub cell_height: usize,
    /// Mirrored placement: column coordinates are reflected about the atlas centre.
    pub reflected: bool,
}

#[derive(Debug, Clone)]
pub struct UvAtlas {
    pub height: usize,
    pub width: usize,
    /// UV of every vertex, in `[0, 1]^2`.
    pub vertex_uv: Vec<[f64; 2]>,
    /// UV of every face corner.
    pub corner_uv: Vec<[[f64; 2]; 3]>,
    pub texel_face: Grid<Option<usize>>,
    pub texel_bary: Grid<[f64; 3]>,
    pub inside: Grid<bool>,
    pub islands: Vec<Island>,
    faces: Vec<[usize; 3]>,
    /// Vertex positions in texel units (integers stored as f64).
    vertex_texel: Vec<[f64; 2]>,
}

fn even_at_least(x: f64, min: usize) -> usize {
    let r = (x / 2.0).round().max(0.0) as usize * 2;
    r.max(min)
}

fn odd_at_least(x: f64, min: usize) -> usize {
    let r = ((x - 1.0) / 2.0).round().max(0.0) as usize * 2 + 1;
    r.max(min)
}

struct Placement {
    islands: Vec<Island>,
}

/// Try to lay out all islands at `texels_per_meter`.
fn layout(model: &BodyModel, height: usize, width: usize, texels_per_meter: f64) -> Option<Placement> {
    let cell = |seg: usize| {
        let s = &model.segments[seg];
        let a = even_at_least(texels_per_meter * s.circumference / s.sides() as f64, 2);
        let b = odd_at_least(texels_per_meter * s.length / (s.rings - 1) as f64, 1);
        (a, b, s.sides() * a, (s.rings - 1) * b)
    };
    let midline: Vec<usize> =
        model.segments.iter().enumerate().filter(|(_, s)| s.side == Side::Midline).map(|(i, _)| i).collect();
    let left: Vec<usize> = model.segments.iter().enumerate().filter(|(_, s)| s.side == Side::Left).map(|(i, _)| i).collect();

    let mut islands = Vec::new();
    // midline column, stacked bottom to top with a one-texel gutter
    let mut row = 1;
    let mut mid_half_width = 0;
    for &seg in &midline {
        let (a, b, w, h) = cell(seg);
        if row + h + 1 > height || w + 2 > width {
            return None;
        }
        islands.push(Island {
            segment: seg,
            col0: width / 2 - w / 2,
            row0: row,
            cell_width: a,
            cell_height: b,
            reflected: false,
        });
        mid_half_width = mid_half_width.max(w / 2);
        row += h + 1;
    }
    // left half, shelf packed; the right half is its reflection
    let region_right = (width / 2).checked_sub(mid_half_width + 1)?;
    let mut order: Vec<usize> = left.clone();
    order.sort_by_key(|&s| std::cmp::Reverse((cell(s).3, s)));
    let (mut x, mut y, mut shelf) = (1usize, 1usize, 0usize);
    for seg in order {
        let (a, b, w, h) = cell(seg);
        if x + w > region_right {
            x = 1;
            y += shelf + 1;
            shelf = 0;
        }
        if x + w > region_right || y + h + 1 > height {
            return None;
        }
        islands.push(Island { segment: seg, col0: x, row0: y, cell_width: a, cell_height: b, reflected: false });
        let mirror = model.segments[seg].mirror;
        islands.push(Island { segment: mirror, col0: x, row0: y, cell_width: a, cell_height: b, reflected: true });
        x += w + 1;
        shelf = shelf.max(h);
    }
    Some(Placement { islands })
}

impl UvAtlas {
    /// Unwrap `model` into a `height x width` atlas (width must be even).
    pub fn build(model: &BodyModel, height: usize, width: usize) -> Result<Self> {
        if height < MIN_RESOLUTION || width < MIN_RESOLUTION {
            return Err(Error::Config(format!("atlas resolution {height}x{width} below {MIN_RESOLUTION}x{MIN_RESOLUTION}")));
        }
        if !width.is_multiple_of(2) {
            return Err(Error::Config("atlas width must be even for the mirror layout".into()));
        }
        let mut scale = width.max(height) as f64 * 4.0;
        let placement = loop {
            if let Some(p) = layout(model, height, width, scale) {
                break p;
            }
            scale *= 0.97;
            if scale < 1.0 {
                return Err(Error::Packing(format!("{} segments do not fit in a {height}x{width} atlas", model.segments.len())));
            }
        };

        let n = model.num_vertices();
        let mut vertex_texel = vec![[f64::NAN; 2]; n];
        for island in &placement.islands {
            let seg = &model.segments[island.segment];
            for i in 0..seg.rings {
                for j in 0..seg.cols {
                    let u = (island.col0 + j * island.cell_width) as f64;
                    let u = if island.reflected { width as f64 - u } else { u };
                    let v = (island.row0 + i * island.cell_height) as f64;
                    vertex_texel[seg.vertex(i, j)] = [u, v];
                }
            }
        }
        let vertex_uv: Vec<[f64; 2]> = vertex_texel.iter().map(|t| [t[0] / width as f64, t[1] / height as f64]).collect();
        let faces: Vec<[usize; 3]> = model.faces.iter().copied().collect();
        let corner_uv = faces.iter().map(|f| f.map(|v| vertex_uv[v])).collect();

        let mut texel_face = Grid::new(height, width, None);
        let mut texel_bary = Grid::new(height, width, [0.0; 3]);
        for (fi, f) in faces.iter().enumerate() {
            let p = f.map(|v| vertex_texel[v]);
            let min_c = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let max_c = (p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(width);
            let min_r = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let max_r = (p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(height);
            for r in min_r..max_r {
                for c in min_c..max_c {
                    let q = [c as f64 + 0.5, r as f64 + 0.5];
                    if let Some(b) = barycentric(&p, q) {
                        texel_face.set(r, c, Some(fi));
                        texel_bary.set(r, c, b);
                    }
                }
            }
        }
        let inside = texel_face.map(Option::is_some);
        Ok(Self {
            height,
            width,
            vertex_uv,
            corner_uv,
            texel_face,
            texel_bary,
            inside,
            islands: placement.islands,
            faces,
            vertex_texel,
        })
    }

    pub fn default_for(model: &BodyModel) -> Result<Self> {
        Self::build(model, DEFAULT_RESOLUTION, DEFAULT_RESOLUTION)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn inside_fraction(&self) -> f64 {
        self.inside.as_slice().iter().filter(|b| **b).count() as f64 / self.inside.len() as f64
    }

    /// Corner positions of a face in texel units.
    pub fn face_texel_corners(&self, face: usize) -> [[f64; 2]; 3] {
        self.faces[face].map(|v| self.vertex_texel[v])
    }

    /// Number of inside texels per face.
    pub fn face_coverage(&self) -> Vec<usize> {
        let mut counts = vec![0; self.faces.len()];
        for f in self.texel_face.as_slice().iter().flatten() {
            counts[*f] += 1;
        }
        counts
    }

    /// Texel containing a UV coordinate; coordinates outside `[0, 1]` are clamped.
    pub fn texel_of_uv(&self, uv: [f64; 2]) -> (usize, usize) {
        let col = ((uv[0] * self.width as f64).floor().max(0.0) as usize).min(self.width - 1);
        let row = ((uv[1] * self.height as f64).floor().max(0.0) as usize).min(self.height - 1);
        (row, col)
    }

    /// Barycentric interpolation of per-vertex values into an `H x W x C` buffer (background zero).
    pub fn rasterize_attribute(&self, values: &[f64], channels: usize) -> Result<Vec<f64>> {
        let n = self.vertex_uv.len();
        if channels == 0 || values.len() != n * channels {
            return Err(Error::dims(format!("{n} x {channels} values"), values.len()));
        }
        let mut out = vec![0.0; self.height * self.width * channels];
        for (idx, face) in self.texel_face.as_slice().iter().enumerate() {
            if let Some(f) = face {
                let bary = self.texel_bary.as_slice()[idx];
                let corners = self.faces[*f];
                let dst = &mut out[idx * channels..(idx + 1) * channels];
                for (b, v) in bary.iter().zip(corners) {
                    for (d, x) in dst.iter_mut().zip(&values[v * channels..(v + 1) * channels]) {
                        *d += b * x;
                    }
                }
            }
        }
        Ok(out)
    }

    /// [`UvAtlas::rasterize_attribute`] for 3-vectors.
    pub fn rasterize_vec3(&self, values: &[Vec3]) -> Result<Grid<Vec3>> {
        let n = self.vertex_uv.len();
        if values.len() != n {
            return Err(Error::dims(format!("{n} vertices"), values.len()));
        }
        let mut out = Grid::new(self.height, self.width, Vec3::zeros());
        for (idx, face) in self.texel_face.as_slice().iter().enumerate() {
            if let Some(f) = face {
                let bary = self.texel_bary.as_slice()[idx];
                let c = self.faces[*f];
                out.as_mut_slice()[idx] = values[c[0]] * bary[0] + values[c[1]] * bary[1] + values[c[2]] * bary[2];
            }
        }
        Ok(out)
    }

    /// Bilinear sample of a texel map at `uv`, using only texels where `valid` holds.
    pub fn sample_bilinear(&self, map: &Grid<Vec3>, valid: &Grid<bool>, uv: [f64; 2]) -> Option<Vec3> {
        let x = uv[0] * self.width as f64 - 0.5;
        let y = uv[1] * self.height as f64 - 0.5;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let (c, r) = (x0 + dx, y0 + dy);
                if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                let w = wx * wy;
                if w > 0.0 && *valid.get(r, c) {
                    acc += map.get(r, c) * w;
                    total += w;
                }
            }
        }
        (total > 0.0).then(|| acc / total)
    }
}

/// Barycentric weights of `q` in triangle `p`, if `q` lies strictly inside.
pub(crate) fn barycentric(p: &[[f64; 2]; 3], q: [f64; 2]) -> Option<[f64; 3]> {
    let edge = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]);
    let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
    if area == 0.0 {
        return None;
    }
    let w0 = edge(p[1], p[2]) / area;
    let w1 = edge(p[2], p[0]) / area;
    let w2 = edge(p[0], p[1]) / area;
    (w0 > 0.0 && w1 > 0.0 && w2 > 0.0).then_some([w0, w1, w2])
}

/// Left-right texel correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipMap {
    pub flip: Grid<Option<(usize, usize)>>,
}

impl FlipMap {
    pub fn build(atlas: &UvAtlas) -> Self {
        let w = atlas.width;
        let flip = Grid::from_vec(
            atlas.height,
            atlas.width,
            atlas
                .inside
                .iter_cells()
                .map(|(r, c, inside)| (*inside && *atlas.inside.get(r, w - 1 - c)).then_some((r, w - 1 - c)))
                .collect(),
        );
        Self { flip }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<(usize, usize)> {
        *self.flip.get(row, col)
    }
}

/// Part label per texel; `None` is background. Part ids follow the LSP joint order.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSegmentation {
    pub assign: Grid<Option<u8>>,
}

impl PartSegmentation {
    /// Nearest-joint vertex labels, rasterised as per-part probabilities, argmaxed and made flip-symmetric.
    pub fn build(model: &BodyModel, atlas: &UvAtlas) -> Result<Self> {
        let sites = regress_joints(&model.template_vertices, &model.lsp_regressor)?;
        let labels: Vec<usize> = model.template_vertices.iter().map(|v| nearest_site(&sites, v)).collect();
        let mut onehot = vec![0.0; labels.len() * NUM_LSP_JOINTS];
        for (v, &l) in labels.iter().enumerate() {
            onehot[v * NUM_LSP_JOINTS + l] = 1.0;
        }
        let prob = atlas.rasterize_attribute(&onehot, NUM_LSP_JOINTS)?;
        let flip = FlipMap::build(atlas);
        let (h, w) = atlas.shape();
        let mut assign: Grid<Option<u8>> = Grid::new(h, w, None);
        for r in 0..h {
            for c in 0..w / 2 {
                if !*atlas.inside.get(r, c) {
                    continue;
                }
                let here = &prob[(r * w + c) * NUM_LSP_JOINTS..][..NUM_LSP_JOINTS];
                let mirror = flip.get(r, c).map(|(fr, fc)| &prob[(fr * w + fc) * NUM_LSP_JOINTS..][..NUM_LSP_JOINTS]);
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for k in 0..NUM_LSP_JOINTS {
                    let score = here[k] + mirror.map_or(here[k], |m| m[LSP_MIRROR[k]]);
                    if score > best_score {
                        best_score = score;
                        best = k;
                    }
                }
                assign.set(r, c, Some(best as u8));
                if let Some((fr, fc)) = flip.get(r, c) {
                    assign.set(fr, fc, Some(LSP_MIRROR[best] as u8));
                }
            }
        }
        let seg = Self { assign };
        let counts = seg.part_counts();
        if let Some(k) = counts.iter().position(|c| *c == 0) {
            return Err(Error::EmptyPart(k));
        }
        Ok(seg)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.assign.shape()
    }

    pub fn part_counts(&self) -> [usize; NUM_LSP_JOINTS] {
        let mut counts = [0; NUM_LSP_JOINTS];
        for p in self.assign.as_slice().iter().flatten() {
            counts[*p as usize] += 1;
        }
        counts
    }
}

/// Index of the closest site; ties go to the lower index.
pub fn nearest_site(sites: &[Vec3], p: &Vec3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, s) in sites.iter().enumerate() {
        let d = (s - p).norm_squared();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::ModelConfig;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (BodyModel, UvAtlas) {
        let m = BodyModel::build(&ModelConfig::default()).unwrap();
        let a = UvAtlas::default_for(&m).unwrap();
        (m, a)
    }

    #[test]
    fn default_atlas_coverage() {
        let (_, a) = setup();
        let f = a.inside_fraction();
        assert!(f > 0.2 && f < 0.95, "inside fraction {f}");
        assert!(a.face_coverage().iter().all(|c| *c >= 1));
    }

    #[test]
    fn barycentric_weights_are_a_partition_of_unity() {
        let (_, a) = setup();
        for (idx, inside) in a.inside.as_slice().iter().enumerate() {
            if *inside {
                let b = a.texel_bary.as_slice()[idx];
                assert!(b.iter().all(|w| *w >= 0.0));
                assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn face_lookup_matches_brute_force_point_in_triangle() {
        let (_, a) = setup();
        for (r, c, face) in a.texel_face.iter_cells() {
            let q = [c as f64 + 0.5, r as f64 + 0.5];
            let hits: Vec<usize> = (0..a.faces().len()).filter(|&f| barycentric(&a.face_texel_corners(f), q).is_some()).collect();
            match face {
                Some(f) => assert_eq!(hits, vec![*f], "texel ({r}, {c})"),
                None => assert!(hits.is_empty(), "texel ({r}, {c}) missed faces {hits:?}"),
            }
        }
    }

    #[test]
    fn rejects_tiny_or_odd_resolutions() {
        let (m, _) = setup();
        assert!(UvAtlas::build(&m, 16, 16).is_err());
        assert!(UvAtlas::build(&m, 64, 63).is_err());
        assert!(UvAtlas::build(&m, 32, 32).is_ok() || matches!(UvAtlas::build(&m, 32, 32), Err(Error::Packing(_))));
    }

    #[test]
    fn constant_and_coordinate_attributes() {
        let (m, a) = setup();
        let ones = vec![Vec3::new(1.5, -2.0, 0.25); m.num_vertices()];
        let r = a.rasterize_vec3(&ones).unwrap();
        for (idx, inside) in a.inside.as_slice().iter().enumerate() {
            if *inside {
                assert_relative_eq!(r.as_slice()[idx], ones[0], epsilon = 1e-12);
            } else {
                assert_eq!(r.as_slice()[idx], Vec3::zeros());
            }
        }
        let xs: Vec<f64> = m.template_vertices.iter().map(|v| v.x).collect();
        let raster = a.rasterize_attribute(&xs, 1).unwrap();
        for (idx, face) in a.texel_face.as_slice().iter().enumerate() {
            if let Some(f) = face {
                let b = a.texel_bary.as_slice()[idx];
                let p: Vec3 = a.faces()[*f].iter().zip(b).map(|(&v, w)| m.template_vertices[v] * w).sum();
                assert!((raster[idx] - p.x).abs() < 1e-6);
            }
        }
        assert!(a.rasterize_attribute(&xs[1..], 1).is_err());
    }

    #[test]
    fn random_attribute_matches_independent_barycentric_solve() {
        let (m, a) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..m.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let raster = a.rasterize_attribute(&values, 1).unwrap();
        for (r, c, face) in a.texel_face.iter_cells() {
            if let Some(f) = face {
                // solve [p1-p0, p2-p0] [l1, l2]^T = q - p0
                let p = a.face_texel_corners(*f).map(|t| [t[0] / a.width as f64, t[1] / a.height as f64]);
                let q = [(c as f64 + 0.5) / a.width as f64, (r as f64 + 0.5) / a.height as f64];
                let m2 = nalgebra::Matrix2::new(p[1][0] - p[0][0], p[2][0] - p[0][0], p[1][1] - p[0][1], p[2][1] - p[0][1]);
                let l = m2.lu().solve(&nalgebra::Vector2::new(q[0] - p[0][0], q[1] - p[0][1])).unwrap();
                let corners = a.faces()[*f];
                let expected = values[corners[0]] * (1.0 - l[0] - l[1]) + values[corners[1]] * l[0] + values[corners[2]] * l[1];
                assert!((raster[r * a.width + c] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rasterization_is_linear() {
        let (m, a) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = m.num_vertices();
        let v1: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v2: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, y) = (0.7, -1.3);
        let mixed: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| x * p + y * q).collect();
        let r1 = a.rasterize_attribute(&v1, 2).unwrap();
        let r2 = a.rasterize_attribute(&v2, 2).unwrap();
        let rm = a.rasterize_attribute(&mixed, 2).unwrap();
        for i in 0..rm.len() {
            assert!((rm[i] - (x * r1[i] + y * r2[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn flip_is_an_involution_and_mirrors_x() {
        let (m, a) = setup();
        let flip = FlipMap::build(&a);
        let xmap = a.rasterize_vec3(&m.template_vertices).unwrap();
        for (r, c, inside) in a.inside.iter_cells() {
            let f = flip.get(r, c);
            assert_eq!(f.is_some(), *inside);
            if let Some((fr, fc)) = f {
                assert_eq!(flip.get(fr, fc), Some((r, c)));
                assert!((xmap.get(fr, fc).x + xmap.get(r, c).x).abs() < 1e-5);
            }
        }
        // torso is a self-mirrored island
        let torso = a.islands.iter().find(|i| m.segments[i.segment].name == "torso").unwrap();
        let (r, c) = (torso.row0 + 1, torso.col0 + 1);
        let (fr, fc) = flip.get(r, c).unwrap();
        let seg_w = m.segments[torso.segment].sides() * torso.cell_width;
        assert_eq!(fr, r);
        assert!(fc >= torso.col0 && fc < torso.col0 + seg_w);
    }

    #[test]
    fn part_segmentation_is_flip_symmetric_and_complete() {
        let (m, a) = setup();
        let seg = PartSegmentation::build(&m, &a).unwrap();
        let flip = FlipMap::build(&a);
        assert!(seg.part_counts().iter().all(|c| *c > 0));
        for (r, c, p) in seg.assign.iter_cells() {
            assert_eq!(p.is_some(), *a.inside.get(r, c));
            if let (Some(p), Some((fr, fc))) = (p, flip.get(r, c)) {
                assert_eq!(*seg.assign.get(fr, fc), Some(LSP_MIRROR[*p as usize] as u8));
            }
        }
        let counts = seg.part_counts();
        for k in 0..NUM_LSP_JOINTS {
            assert_eq!(counts[k], counts[LSP_MIRROR[k]]);
        }
    }

    #[test]
    fn vertex_at_a_site_is_labelled_with_that_site() {
        let (m, _) = setup();
        let sites = regress_joints(&m.template_vertices, &m.lsp_regressor).unwrap();
        for (k, s) in sites.iter().enumerate() {
            assert_eq!(nearest_site(&sites, s), k);
        }
    }

    #[test]
    fn part_labels_agree_with_nearest_joint_of_texel_surface_point() {
        let (m, a) = setup();
        let seg = PartSegmentation::build(&m, &a).unwrap();
        let sites = regress_joints(&m.template_vertices, &m.lsp_regressor).unwrap();
        let surface = a.rasterize_vec3(&m.template_vertices).unwrap();
        let (mut agree, mut total) = (0usize, 0usize);
        for (r, c, p) in seg.assign.iter_cells() {
            if let Some(p) = p {
                total += 1;
                let brute = nearest_site(&sites, surface.get(r, c));
                if brute == *p as usize {
                    agree += 1;
                } else {
                    // disagreement only where the face (or its mirror) straddles a part boundary
                    let f = a.texel_face.get(r, c).unwrap();
                    let labels = |face: usize| -> Vec<usize> {
                        a.faces()[face].iter().map(|&v| nearest_site(&sites, &m.template_vertices[v])).collect()
                    };
                    let here = labels(f);
                    let mirrored: Vec<usize> = labels(m.mirror_face[f]).into_iter().map(|l| LSP_MIRROR[l]).collect();
                    assert!(here.contains(&(*p as usize)) || mirrored.contains(&(*p as usize)));
                    assert!(here.iter().chain(&mirrored).any(|l| *l != here[0]));
                }
            }
        }
        assert!(agree as f64 / total as f64 > 0.9, "agreement {agree}/{total}");
    }
}
