//! Completion of partial UV evidence and final inference from UV space.
//!
//! The warped dense-map prediction is trusted where it exists. Holes are filled
//! from the IK-reposed template after each part is translated so its joint sits
//! on the refined joint, and a thin band along the hole boundary is blended
//! linearly between the two.

use std::collections::VecDeque;

use crate::body_model::{regress_joints, BodyModel, JointSet, Mesh, PoseParams, ShapeParams};
use crate::dense_maps::{make_uv_ground_truth, Camera, ImageMaps, UvMaps};
use crate::grid::Grid;
use crate::ik::aggregate_joints;
use crate::losses::{l1_masked, loss_consistency, loss_dismag, loss_j2d, loss_j3d, UviLosses};
use crate::uv_atlas::{FlipMap, PartSegmentation, UvAtlas};
use crate::{Error, Result, Vec3, NUM_LSP_JOINTS};

pub const DEFAULT_BAND_WIDTH: usize = 2;

/// Where a fused texel's location came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Dmp,
    Ik,
    Blend,
    /// Naive completion used by the dense-map-only baseline.
    Fill,
}

impl Source {
    pub fn code(self) -> u8 {
        match self {
            Source::Dmp => 1,
            Source::Ik => 2,
            Source::Blend => 3,
            Source::Fill => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Source::Dmp),
            2 => Some(Source::Ik),
            3 => Some(Source::Blend),
            4 => Some(Source::Fill),
            _ => None,
        }
    }
}

/// Completed UV maps. `maps.valid` marks exactly the inside texels.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedUvMaps {
    pub maps: UvMaps,
    pub source: Grid<Option<Source>>,
}

impl FusedUvMaps {
    pub fn shape(&self) -> (usize, usize) {
        self.maps.shape()
    }

    pub fn source_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for s in self.source.as_slice().iter().flatten() {
            counts[s.code() as usize - 1] += 1;
        }
        counts
    }

    /// Source tags as codes, background 0.
    pub fn source_codes(&self) -> Grid<u8> {
        self.source.map(|s| s.map_or(0, |s| s.code()))
    }
}

fn all_visible(j: &JointSet) -> Result<()> {
    if j.visible_count() != NUM_LSP_JOINTS {
        return Err(Error::InvalidParams(format!("{} of {NUM_LSP_JOINTS} joints visible", j.visible_count())));
    }
    Ok(())
}

/// Write each part's joint into its texels; background stays zero.
pub fn distribute_joints_to_uv(j_refine: &JointSet, part_seg: &PartSegmentation) -> Result<Grid<Vec3>> {
    all_visible(j_refine)?;
    Ok(part_seg.assign.map(|p| p.map_or(Vec3::zeros(), |k| j_refine.joints[k as usize])))
}

/// Complete UV maps of the skinned template for `(pose, shape)`.
pub fn repose_uv_from_ik(
    model: &BodyModel,
    atlas: &UvAtlas,
    part_seg: &PartSegmentation,
    pose: &PoseParams,
    shape: &ShapeParams,
) -> Result<UvMaps> {
    let mesh = model.skin(pose, shape);
    let joints = JointSet::from_slice(&regress_joints(&mesh.vertices, &model.lsp_regressor)?)?;
    make_uv_ground_truth(&mesh, part_seg, &joints, atlas)
}

/// Chessboard distance from every texel to the nearest seed texel (`usize::MAX` with no seeds).
fn chessboard_distance(seeds: &Grid<bool>) -> Grid<usize> {
    let (h, w) = seeds.shape();
    let mut dist = Grid::new(h, w, usize::MAX);
    let mut queue = VecDeque::new();
    for (r, c, s) in seeds.iter_cells() {
        if *s {
            dist.set(r, c, 0);
            queue.push_back((r, c));
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        let d = *dist.get(r, c) + 1;
        for nr in r.saturating_sub(1)..(r + 2).min(h) {
            for nc in c.saturating_sub(1)..(c + 2).min(w) {
                if *dist.get(nr, nc) > d {
                    dist.set(nr, nc, d);
                    queue.push_back((nr, nc));
                }
            }
        }
    }
    dist
}

fn check_shape(expected: (usize, usize), got: (usize, usize), what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::dims(format!("{expected:?}"), format!("{what} {got:?}")));
    }
    Ok(())
}

/// Fuse partial dense-map evidence with complete IK maps.
///
/// Valid DMP texels further than `band_width` from a hole keep the DMP location. Holes
/// take `uv_jrefine + ik.displacement`, the IK part moved onto the refined joint. A valid
/// texel at chessboard distance `d <= band_width` from a hole blends with weight
/// `d / (band_width + 1)` on the DMP value.
pub fn fuse_uv_maps(
    dmp: &UvMaps,
    ik: &UvMaps,
    uv_jrefine: &Grid<Vec3>,
    part_seg: &PartSegmentation,
    band_width: usize,
) -> Result<FusedUvMaps> {
    let shape = part_seg.shape();
    check_shape(shape, dmp.shape(), "dense-map UV maps")?;
    check_shape(shape, ik.shape(), "IK UV maps")?;
    check_shape(shape, uv_jrefine.shape(), "refined joint map")?;
    let inside = part_seg.assign.map(|p| p.is_some());
    if let Some(t) = (0..inside.len()).find(|&t| inside.as_slice()[t] && !ik.valid.as_slice()[t]) {
        return Err(Error::InvalidParams(format!("IK maps incomplete at texel {t}")));
    }
    let holes =
        Grid::from_vec(shape.0, shape.1, (0..inside.len()).map(|t| inside.as_slice()[t] && !dmp.valid.as_slice()[t]).collect());
    let dist = chessboard_distance(&holes);
    let mut maps = UvMaps::empty(shape.0, shape.1);
    let mut source = Grid::new(shape.0, shape.1, None);
    for t in 0..inside.len() {
        if !inside.as_slice()[t] {
            continue;
        }
        let joint = uv_jrefine.as_slice()[t];
        let aligned = joint + ik.displacement.as_slice()[t];
        let d = dist.as_slice()[t];
        let (loc, tag) = if holes.as_slice()[t] {
            (aligned, Source::Ik)
        } else if d > band_width {
            (dmp.location.as_slice()[t], Source::Dmp)
        } else {
            let a = d as f64 / (band_width + 1) as f64;
            (dmp.location.as_slice()[t] * a + aligned * (1.0 - a), Source::Blend)
        };
        maps.valid.as_mut_slice()[t] = true;
        maps.location.as_mut_slice()[t] = loc;
        maps.joint.as_mut_slice()[t] = joint;
        source.as_mut_slice()[t] = Some(tag);
    }
    maps.recompute_displacement();
    Ok(FusedUvMaps { maps, source })
}

/// IK maps alone, aligned to the refined joints.
pub fn ik_only_fused(ik: &UvMaps, uv_jrefine: &Grid<Vec3>, part_seg: &PartSegmentation) -> Result<FusedUvMaps> {
    let (h, w) = part_seg.shape();
    fuse_uv_maps(&UvMaps::empty(h, w), ik, uv_jrefine, part_seg, 0)
}

/// Dense-map evidence with every hole set to its part's refined joint.
pub fn naive_fill(dmp: &UvMaps, uv_jrefine: &Grid<Vec3>, part_seg: &PartSegmentation) -> Result<FusedUvMaps> {
    let shape = part_seg.shape();
    check_shape(shape, dmp.shape(), "dense-map UV maps")?;
    check_shape(shape, uv_jrefine.shape(), "refined joint map")?;
    let mut maps = UvMaps::empty(shape.0, shape.1);
    let mut source = Grid::new(shape.0, shape.1, None);
    for (t, p) in part_seg.assign.as_slice().iter().enumerate() {
        if p.is_none() {
            continue;
        }
        let joint = uv_jrefine.as_slice()[t];
        let (loc, tag) = if dmp.valid.as_slice()[t] { (dmp.location.as_slice()[t], Source::Dmp) } else { (joint, Source::Fill) };
        maps.valid.as_mut_slice()[t] = true;
        maps.location.as_mut_slice()[t] = loc;
        maps.joint.as_mut_slice()[t] = joint;
        source.as_mut_slice()[t] = Some(tag);
    }
    maps.recompute_displacement();
    Ok(FusedUvMaps { maps, source })
}

/// Per-part mean of the joint channel.
pub fn infer_joints_from_uv(fused: &FusedUvMaps, part_seg: &PartSegmentation) -> Result<JointSet> {
    let agg = aggregate_joints(&fused.maps, part_seg, 1)?;
    if let Some(k) = agg.texel_counts.iter().position(|c| *c == 0) {
        return Err(Error::EmptyPart(k));
    }
    Ok(agg.j_initial)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshInference {
    pub mesh: Mesh,
    /// Vertices with no populated texel around their UV, copied from the fallback mesh.
    pub filled: Vec<usize>,
}

/// Bilinear sample of the location channel at every vertex UV.
pub fn infer_mesh_from_uv(fused: &FusedUvMaps, atlas: &UvAtlas, model: &BodyModel, fallback: &Mesh) -> Result<MeshInference> {
    check_shape(atlas.shape(), fused.shape(), "fused maps")?;
    let n = model.num_vertices();
    if fallback.vertices.len() != n {
        return Err(Error::dims(format!("{n} fallback vertices"), fallback.vertices.len()));
    }
    let mut filled = Vec::new();
    let vertices = (0..n)
        .map(|v| {
            atlas.sample_bilinear(&fused.maps.location, &fused.maps.valid, atlas.vertex_uv[v]).unwrap_or_else(|| {
                filled.push(v);
                fallback.vertices[v]
            })
        })
        .collect();
    if !filled.is_empty() {
        log::warn!("{} vertices filled from the fallback mesh", filled.len());
    }
    Ok(MeshInference { mesh: Mesh { vertices, faces: model.faces.clone() }, filled })
}

/// Largest ratio of 3D edge length to texel edge length over all faces: metres per texel.
pub fn texel_pitch(atlas: &UvAtlas, vertices: &[Vec3]) -> f64 {
    let mut pitch: f64 = 0.0;
    for (f, face) in atlas.faces().iter().enumerate() {
        let t = atlas.face_texel_corners(f);
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let du = ((t[a][0] - t[b][0]).powi(2) + (t[a][1] - t[b][1]).powi(2)).sqrt();
            if du > 0.0 {
                pitch = pitch.max((vertices[face[a]] - vertices[face[b]]).norm() / du);
            }
        }
    }
    pitch
}

/// Everything the inpainting objective looks at on the prediction side.
#[derive(Debug, Clone, PartialEq)]
pub struct UviPrediction<'a> {
    pub fused: &'a FusedUvMaps,
    pub camera: &'a Camera,
    pub joints: &'a [Vec3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct UviTarget<'a> {
    pub uv: &'a UvMaps,
    pub joints: &'a [Vec3],
    pub joints_2d: &'a [[f64; 2]],
    pub image: &'a ImageMaps,
}

fn flatten(maps: &UvMaps) -> Vec<f64> {
    let mut out = Vec::with_capacity(maps.valid.len() * 9);
    for t in 0..maps.valid.len() {
        for g in [&maps.location, &maps.joint, &maps.displacement] {
            out.extend_from_slice(g.as_slice()[t].as_slice());
        }
    }
    out
}

/// The five inpainting-stage terms. `map` is one L1 mean pooled over the location, joint
/// and displacement channels on ground-truth valid texels.
pub fn loss_uvi_terms(pred: &UviPrediction, gt: &UviTarget, atlas: &UvAtlas, flip: &FlipMap) -> Result<UviLosses> {
    check_shape(gt.uv.shape(), pred.fused.shape(), "predicted UV maps")?;
    check_shape(atlas.shape(), pred.fused.shape(), "predicted UV maps")?;
    let m = &pred.fused.maps;
    Ok(UviLosses {
        dismag: loss_dismag(&m.displacement, flip, &m.valid)?,
        j2d: loss_j2d(pred.joints, gt.joints_2d, pred.camera)?,
        j3d: loss_j3d(pred.joints, gt.joints)?,
        map: l1_masked(&flatten(m), &flatten(gt.uv), gt.uv.valid.as_slice(), 9)?,
        con: loss_consistency(&m.location, &m.valid, atlas, pred.camera, gt.image)?.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{sample_pose, sample_shape, ModelConfig, PoseLimits};
    use crate::dense_maps::{
        apply_synthetic_occlusion, project_weak_perspective, render_dense_maps, warp_image_to_uv, OcclusionConfig,
    };
    use crate::losses::mpve;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    struct Fixture {
        model: BodyModel,
        atlas: UvAtlas,
        seg: PartSegmentation,
        flip: FlipMap,
    }

    fn fixture() -> &'static Fixture {
        static F: OnceLock<Fixture> = OnceLock::new();
        F.get_or_init(|| {
            let model = BodyModel::build(&ModelConfig::default()).unwrap();
            let atlas = UvAtlas::default_for(&model).unwrap();
            let seg = PartSegmentation::build(&model, &atlas).unwrap();
            let flip = FlipMap::build(&atlas);
            Fixture { model, atlas, seg, flip }
        })
    }

    fn random_joints(seed: u64) -> JointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        JointSet::all_visible(std::array::from_fn(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())))
    }

    fn joints_of(mesh: &Mesh) -> JointSet {
        JointSet::from_slice(&regress_joints(&mesh.vertices, &fixture().model.lsp_regressor).unwrap()).unwrap()
    }

    #[test]
    fn distribute_round_trips_and_scans() {
        let f = fixture();
        let j = random_joints(1);
        let uvj = distribute_joints_to_uv(&j, &f.seg).unwrap();
        for (r, c, v) in uvj.iter_cells() {
            match f.seg.assign.get(r, c) {
                Some(k) => assert_eq!(*v, j.joints[*k as usize]),
                None => assert_eq!(*v, Vec3::zeros()),
            }
        }
        let (h, w) = f.seg.shape();
        let mut maps = UvMaps::empty(h, w);
        maps.joint = uvj.clone();
        maps.valid = f.seg.assign.map(|p| p.is_some());
        let fused = FusedUvMaps { maps, source: f.seg.assign.map(|p| p.map(|_| Source::Dmp)) };
        assert_eq!(infer_joints_from_uv(&fused, &f.seg).unwrap(), j);
        assert_eq!(aggregate_joints(&fused.maps, &f.seg, 1).unwrap().j_initial, j);
        let mut hidden = j;
        hidden.visible[3] = false;
        assert!(distribute_joints_to_uv(&hidden, &f.seg).is_err());
    }

    #[test]
    fn infer_joints_constant_and_random_maps() {
        let f = fixture();
        let (h, w) = f.seg.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut maps = UvMaps::empty(h, w);
        maps.valid = f.seg.assign.map(|p| p.is_some());
        let c = Vec3::new(0.3, 0.2, 0.1);
        maps.joint = Grid::new(h, w, c);
        let fused = FusedUvMaps { maps: maps.clone(), source: Grid::new(h, w, None) };
        for j in infer_joints_from_uv(&fused, &f.seg).unwrap().joints {
            assert_relative_eq!(j, c, epsilon = 1e-12);
        }
        maps.joint = maps.joint.map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()));
        let fused = FusedUvMaps { maps, source: Grid::new(h, w, None) };
        let got = infer_joints_from_uv(&fused, &f.seg).unwrap();
        for k in 0..NUM_LSP_JOINTS {
            let (mut s, mut n) = (Vec3::zeros(), 0.0);
            for (r, c, p) in f.seg.assign.iter_cells() {
                if *p == Some(k as u8) {
                    s += fused.maps.joint.get(r, c);
                    n += 1.0;
                }
            }
            assert_relative_eq!(got.joints[k], s / n, epsilon = 1e-12);
        }
    }

    #[test]
    fn repose_examples() {
        let f = fixture();
        let template = f.model.template_mesh();
        let rest = repose_uv_from_ik(&f.model, &f.atlas, &f.seg, &PoseParams::default(), &ShapeParams::default()).unwrap();
        let want = make_uv_ground_truth(&template, &f.seg, &joints_of(&template), &f.atlas).unwrap();
        assert_eq!(rest.valid, want.valid);
        for (a, b) in [(&rest.location, &want.location), (&rest.joint, &want.joint), (&rest.displacement, &want.displacement)] {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_relative_eq!(x, y, epsilon = 1e-9);
            }
        }
        for seed in 0..3 {
            let pose = sample_pose(seed, &PoseLimits::default()).unwrap();
            let shape = sample_shape(seed + 9, 1.0);
            let uv = repose_uv_from_ik(&f.model, &f.atlas, &f.seg, &pose, &shape).unwrap();
            for t in 0..uv.valid.len() {
                assert_eq!(uv.valid.as_slice()[t], f.seg.assign.as_slice()[t].is_some());
                assert_eq!(uv.displacement.as_slice()[t], uv.location.as_slice()[t] - uv.joint.as_slice()[t]);
            }
            let agg = aggregate_joints(&uv, &f.seg, 1).unwrap();
            let joints = joints_of(&f.model.skin(&pose, &shape));
            assert_eq!(agg.j_initial, joints);
        }
    }

    struct Case {
        gt_mesh: Mesh,
        gt_uv: UvMaps,
        ik: UvMaps,
        ik_mesh: Mesh,
        dmp: UvMaps,
        uvj: Grid<Vec3>,
    }

    fn case(seed: u64, occlude: bool) -> Case {
        let f = fixture();
        let pose = sample_pose(seed, &PoseLimits::default()).unwrap();
        let shape = sample_shape(seed + 50, 0.5);
        let gt_mesh = f.model.skin(&pose, &shape);
        let joints = joints_of(&gt_mesh);
        let cam = Camera::fit(&gt_mesh.vertices, 224, 224, 0.1).unwrap();
        let image = render_dense_maps(&gt_mesh, &f.atlas, &f.seg, &joints, &cam, 224, 224).unwrap();
        let image = if occlude {
            let cfg = OcclusionConfig { min_count: 1, max_count: 1, min_size: 0.5, max_size: 0.5 };
            apply_synthetic_occlusion(&image, seed, &cfg).unwrap().0
        } else {
            image
        };
        let (dmp, _) = warp_image_to_uv(&image, &f.atlas);
        // an imperfect IK estimate
        let mut theta = pose.theta;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        for t in theta.iter_mut().skip(1) {
            *t += Vec3::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15));
        }
        let ik_pose = PoseParams::new(theta).unwrap();
        let ik = repose_uv_from_ik(&f.model, &f.atlas, &f.seg, &ik_pose, &shape).unwrap();
        Case {
            gt_uv: make_uv_ground_truth(&gt_mesh, &f.seg, &joints, &f.atlas).unwrap(),
            ik_mesh: f.model.skin(&ik_pose, &shape),
            uvj: distribute_joints_to_uv(&joints, &f.seg).unwrap(),
            gt_mesh,
            ik,
            dmp,
        }
    }

    fn assert_complete(fused: &FusedUvMaps) {
        let f = fixture();
        for t in 0..fused.maps.valid.len() {
            let inside = f.seg.assign.as_slice()[t].is_some();
            assert_eq!(fused.maps.valid.as_slice()[t], inside);
            assert_eq!(fused.source.as_slice()[t].is_some(), inside);
            let m = &fused.maps;
            let d = m.location.as_slice()[t] - m.joint.as_slice()[t] - m.displacement.as_slice()[t];
            assert!(d.norm() < 1e-6);
        }
    }

    #[test]
    fn fusion_trivial_cases() {
        let f = fixture();
        let c = case(3, false);
        // complete noiseless evidence passes through untouched
        let fused = fuse_uv_maps(&c.gt_uv, &c.ik, &c.uvj, &f.seg, DEFAULT_BAND_WIDTH).unwrap();
        assert_complete(&fused);
        assert_eq!(fused.maps.location, c.gt_uv.location);
        assert_eq!(fused.source_counts(), [f.seg.part_counts().iter().sum::<usize>(), 0, 0, 0]);
        // no evidence: the aligned IK maps
        let (h, w) = f.seg.shape();
        let fused = fuse_uv_maps(&UvMaps::empty(h, w), &c.ik, &c.uvj, &f.seg, DEFAULT_BAND_WIDTH).unwrap();
        assert_complete(&fused);
        for t in 0..fused.maps.valid.len() {
            if fused.maps.valid.as_slice()[t] {
                assert_eq!(fused.source.as_slice()[t], Some(Source::Ik));
                assert_relative_eq!(
                    fused.maps.location.as_slice()[t],
                    c.uvj.as_slice()[t] + c.ik.displacement.as_slice()[t],
                    epsilon = 1e-12
                );
            }
        }
        assert!(fuse_uv_maps(&UvMaps::empty(8, 8), &c.ik, &c.uvj, &f.seg, 2).is_err());
        let mut holey = c.ik.clone();
        let t = f.seg.assign.as_slice().iter().position(|p| p.is_some()).unwrap();
        holey.valid.as_mut_slice()[t] = false;
        assert!(fuse_uv_maps(&c.dmp, &holey, &c.uvj, &f.seg, 2).is_err());
    }

    #[test]
    fn fusion_preserves_evidence_and_is_idempotent() {
        let f = fixture();
        for seed in [4, 5] {
            let c = case(seed, true);
            let fused = fuse_uv_maps(&c.dmp, &c.ik, &c.uvj, &f.seg, DEFAULT_BAND_WIDTH).unwrap();
            assert_complete(&fused);
            let counts = fused.source_counts();
            assert!(counts[0] > 0 && counts[1] > 0 && counts[2] > 0, "{counts:?}");
            for t in 0..fused.maps.valid.len() {
                if fused.source.as_slice()[t] == Some(Source::Dmp) {
                    assert_eq!(fused.maps.location.as_slice()[t], c.dmp.location.as_slice()[t]);
                }
            }
            let again = fuse_uv_maps(&fused.maps, &c.ik, &c.uvj, &f.seg, DEFAULT_BAND_WIDTH).unwrap();
            assert_eq!(again.maps.location, fused.maps.location);
        }
    }

    #[test]
    fn band_weights_follow_the_distance() {
        let f = fixture();
        let c = case(6, true);
        let band = 3;
        let fused = fuse_uv_maps(&c.dmp, &c.ik, &c.uvj, &f.seg, band).unwrap();
        let holes = Grid::from_vec(
            c.dmp.valid.shape().0,
            c.dmp.valid.shape().1,
            (0..c.dmp.valid.len()).map(|t| f.seg.assign.as_slice()[t].is_some() && !c.dmp.valid.as_slice()[t]).collect(),
        );
        let hole_list: Vec<(usize, usize)> = holes.iter_cells().filter(|x| *x.2).map(|(r, c, _)| (r, c)).collect();
        let (_, w) = holes.shape();
        let mut checked = 0;
        for t in (0..fused.maps.valid.len()).step_by(7) {
            if fused.source.as_slice()[t] != Some(Source::Blend) {
                continue;
            }
            let (r, cc) = (t / w, t % w);
            let d = hole_list.iter().map(|&(hr, hc)| hr.abs_diff(r).max(hc.abs_diff(cc))).min().unwrap();
            assert!((1..=band).contains(&d));
            let a = d as f64 / (band + 1) as f64;
            let want = c.dmp.location.as_slice()[t] * a + (c.uvj.as_slice()[t] + c.ik.displacement.as_slice()[t]) * (1.0 - a);
            assert_relative_eq!(fused.maps.location.as_slice()[t], want, epsilon = 1e-12);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn fused_mesh_beats_ik_only_under_occlusion() {
        let f = fixture();
        for seed in [10, 11, 12] {
            let c = case(seed, true);
            let fused = fuse_uv_maps(&c.dmp, &c.ik, &c.uvj, &f.seg, DEFAULT_BAND_WIDTH).unwrap();
            let mesh = infer_mesh_from_uv(&fused, &f.atlas, &f.model, &c.ik_mesh).unwrap().mesh;
            let fused_err = mpve(&mesh.vertices, &c.gt_mesh.vertices).unwrap();
            let ik_err = mpve(&c.ik_mesh.vertices, &c.gt_mesh.vertices).unwrap();
            assert!(fused_err <= ik_err, "seed {seed}: fused {fused_err} mm, IK {ik_err} mm");
        }
    }

    #[test]
    fn mesh_round_trips_within_quantisation() {
        let f = fixture();
        let (h, w) = f.seg.shape();
        let c = case(13, false);
        let pitch = texel_pitch(&f.atlas, &c.gt_mesh.vertices);
        let gt = FusedUvMaps { maps: c.gt_uv.clone(), source: Grid::new(h, w, Some(Source::Dmp)) };
        let inf = infer_mesh_from_uv(&gt, &f.atlas, &f.model, &c.ik_mesh).unwrap();
        assert!(inf.filled.is_empty());
        for (p, q) in inf.mesh.vertices.iter().zip(&c.gt_mesh.vertices) {
            assert!((p - q).norm() < 2.0 * pitch, "{} vs pitch {pitch}", (p - q).norm());
        }
        let ik_fused = ik_only_fused(&c.ik, &distribute_joints_to_uv(&joints_of(&c.ik_mesh), &f.seg).unwrap(), &f.seg).unwrap();
        let ik_inf = infer_mesh_from_uv(&ik_fused, &f.atlas, &f.model, &c.gt_mesh).unwrap();
        let pitch = texel_pitch(&f.atlas, &c.ik_mesh.vertices);
        for (p, q) in ik_inf.mesh.vertices.iter().zip(&c.ik_mesh.vertices) {
            assert!((p - q).norm() < 2.0 * pitch);
        }
        // constant location map
        let k = Vec3::new(1.0, -2.0, 0.5);
        let mut maps = c.gt_uv.clone();
        maps.location = Grid::new(h, w, k);
        let inf =
            infer_mesh_from_uv(&FusedUvMaps { maps, source: Grid::new(h, w, None) }, &f.atlas, &f.model, &c.ik_mesh).unwrap();
        for v in inf.mesh.vertices {
            assert_relative_eq!(v, k, epsilon = 1e-12);
        }
        // nothing populated: every vertex falls back
        let empty = FusedUvMaps { maps: UvMaps::empty(h, w), source: Grid::new(h, w, None) };
        let inf = infer_mesh_from_uv(&empty, &f.atlas, &f.model, &c.ik_mesh).unwrap();
        assert_eq!(inf.filled.len(), f.model.num_vertices());
        assert_eq!(inf.mesh.vertices, c.ik_mesh.vertices);
    }

    #[test]
    fn naive_fill_uses_refined_joints() {
        let f = fixture();
        let c = case(14, true);
        let fused = naive_fill(&c.dmp, &c.uvj, &f.seg).unwrap();
        assert_complete(&fused);
        for t in 0..fused.maps.valid.len() {
            match fused.source.as_slice()[t] {
                Some(Source::Fill) => assert_eq!(fused.maps.displacement.as_slice()[t], Vec3::zeros()),
                Some(Source::Dmp) => assert_eq!(fused.maps.location.as_slice()[t], c.dmp.location.as_slice()[t]),
                None => {}
                other => panic!("{other:?}"),
            }
        }
    }

    fn perfect_inputs(c: &Case) -> (FusedUvMaps, Camera, ImageMaps, Vec<Vec3>, Vec<[f64; 2]>) {
        let f = fixture();
        let (h, w) = f.seg.shape();
        let joints = joints_of(&c.gt_mesh).joints.to_vec();
        let cam = Camera::fit(&c.gt_mesh.vertices, 224, 224, 0.1).unwrap();
        let image = render_dense_maps(&c.gt_mesh, &f.atlas, &f.seg, &joints_of(&c.gt_mesh), &cam, 224, 224).unwrap();
        let j2d = project_weak_perspective(&joints, &cam);
        (FusedUvMaps { maps: c.gt_uv.clone(), source: Grid::new(h, w, Some(Source::Dmp)) }, cam, image, joints, j2d)
    }

    #[test]
    fn uvi_terms_at_the_rest_pose() {
        let f = fixture();
        let mesh = f.model.template_mesh();
        let joints = joints_of(&mesh);
        let c = Case {
            gt_uv: make_uv_ground_truth(&mesh, &f.seg, &joints, &f.atlas).unwrap(),
            ik: UvMaps::empty(1, 1),
            ik_mesh: mesh.clone(),
            dmp: UvMaps::empty(1, 1),
            uvj: Grid::new(1, 1, Vec3::zeros()),
            gt_mesh: mesh,
        };
        let (fused, cam, image, j3d, j2d) = perfect_inputs(&c);
        let pred = UviPrediction { fused: &fused, camera: &cam, joints: &j3d };
        let gt = UviTarget { uv: &c.gt_uv, joints: &j3d, joints_2d: &j2d, image: &image };
        let l = loss_uvi_terms(&pred, &gt, &f.atlas, &f.flip).unwrap();
        assert!(l.dismag < 1e-6 && l.j2d < 1e-6 && l.j3d < 1e-6 && l.map < 1e-6, "{l:?}");
        // reprojection of rasterised locations is exact up to texel quantisation
        assert!(l.con <= 1.0, "{}", l.con);
        assert_relative_eq!(l.total(), l.dismag + l.j2d + l.j3d + l.map + l.con, epsilon = 1e-12);
    }

    #[test]
    fn uvi_terms_decompose_and_map_matches_scan() {
        let f = fixture();
        let c = case(15, false);
        let (mut fused, cam, image, j3d, j2d) = perfect_inputs(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 0..fused.maps.valid.len() {
            if fused.maps.valid.as_slice()[t] {
                fused.maps.location.as_mut_slice()[t] += Vec3::new(rng.gen_range(-0.01..0.01), 0.0, rng.gen_range(-0.01..0.01));
            }
        }
        fused.maps.recompute_displacement();
        let pj: Vec<Vec3> = j3d.iter().map(|j| j + Vec3::new(0.01, -0.02, 0.0)).collect();
        let pred = UviPrediction { fused: &fused, camera: &cam, joints: &pj };
        let gt = UviTarget { uv: &c.gt_uv, joints: &j3d, joints_2d: &j2d, image: &image };
        let l = loss_uvi_terms(&pred, &gt, &f.atlas, &f.flip).unwrap();
        let (mut sum, mut n) = (0.0, 0.0);
        for t in 0..fused.maps.valid.len() {
            if c.gt_uv.valid.as_slice()[t] {
                for (a, b) in [
                    (&fused.maps.location, &c.gt_uv.location),
                    (&fused.maps.joint, &c.gt_uv.joint),
                    (&fused.maps.displacement, &c.gt_uv.displacement),
                ] {
                    sum += (a.as_slice()[t] - b.as_slice()[t]).abs().sum();
                    n += 3.0;
                }
            }
        }
        assert_relative_eq!(l.map, sum / n, epsilon = 1e-12);
        assert_relative_eq!(l.j3d, 0.01, epsilon = 1e-12);
        assert_relative_eq!(l.j2d, loss_j2d(&pj, &j2d, &cam).unwrap(), epsilon = 1e-12);
        assert_relative_eq!(
            l.dismag,
            loss_dismag(&fused.maps.displacement, &f.flip, &fused.maps.valid).unwrap(),
            epsilon = 1e-12
        );
        assert_relative_eq!(l.total(), l.dismag + l.j2d + l.j3d + l.map + l.con, epsilon = 1e-12);
    }
}
