//! Procedural articulated body with linear blend skinning.
//!
//! The body is a set of tubes, one per segment, hung on a 24-joint kinematic
//! tree. Each tube is a regular `rings x (sides + 1)` vertex grid (the last
//! column duplicates the first so every tube unwraps to a rectangle). The left
//! side is generated explicitly and the right side is its exact x-mirror, so
//! the template, the shape space and every regressor are bilaterally symmetric
//! bit for bit.
//!
//! Coordinates: meters, `+y` up, `+x` towards the body's left, the body faces `-z`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rotation::{canonicalize, rodrigues, rodrigues_derivatives};
use crate::{Error, Mat3, Result, Vec3, NUM_BETAS, NUM_KIN_JOINTS, NUM_LSP_JOINTS};

pub const KIN_NAMES: [&str; NUM_KIN_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const KIN_PARENTS: [Option<usize>; NUM_KIN_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// Left/right partner of each kinematic joint (midline joints map to themselves).
pub const KIN_MIRROR: [usize; NUM_KIN_JOINTS] =
    [0, 2, 1, 3, 5, 4, 6, 8, 7, 9, 11, 10, 12, 14, 13, 15, 17, 16, 19, 18, 21, 20, 23, 22];

/// LSP joint order; part ids in UV space use the same indices.
pub const LSP_NAMES: [&str; NUM_LSP_JOINTS] = [
    "right_ankle",
    "right_knee",
    "right_hip",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_wrist",
    "right_elbow",
    "right_shoulder",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "neck",
    "head_top",
];

pub const LSP_MIRROR: [usize; NUM_LSP_JOINTS] = [5, 4, 3, 2, 1, 0, 11, 10, 9, 8, 7, 6, 12, 13];

/// Parent-child hierarchy of the 24 pose joints, topologically ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    pub parent: Vec<Option<usize>>,
    pub names: Vec<String>,
}

impl KinematicTree {
    pub fn standard() -> Self {
        Self { parent: KIN_PARENTS.to_vec(), names: KIN_NAMES.iter().map(|s| s.to_string()).collect() }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let roots = self.parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 || self.parent[0].is_some() {
            return Err(Error::InvalidParams("kinematic tree must have exactly one root at index 0".into()));
        }
        for (i, p) in self.parent.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                _ => return Err(Error::InvalidParams(format!("joint {i} is not topologically ordered"))),
            }
        }
        Ok(())
    }
}

/// Axis-angle pose, root orientation at index 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    pub theta: [Vec3; NUM_KIN_JOINTS],
}

impl Default for PoseParams {
    fn default() -> Self {
        Self { theta: [Vec3::zeros(); NUM_KIN_JOINTS] }
    }
}

impl PoseParams {
    /// Build from raw axis-angle vectors, wrapping each to magnitude at most pi.
    pub fn new(theta: [Vec3; NUM_KIN_JOINTS]) -> Result<Self> {
        if theta.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("pose".into()));
        }
        Ok(Self { theta: theta.map(|v| canonicalize(&v)) })
    }

    /// Keep the vectors as given; used where gradients must refer to the raw values.
    pub(crate) fn raw(theta: [Vec3; NUM_KIN_JOINTS]) -> Self {
        Self { theta }
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_KIN_JOINTS * 3 {
            return Err(Error::dims(NUM_KIN_JOINTS * 3, values.len()));
        }
        let mut theta = [Vec3::zeros(); NUM_KIN_JOINTS];
        for (k, t) in theta.iter_mut().enumerate() {
            *t = Vec3::new(values[3 * k], values[3 * k + 1], values[3 * k + 2]);
        }
        Self::new(theta)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.theta.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }
}

pub const MAX_ABS_BETA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapeParams {
    pub beta: [f64; NUM_BETAS],
}

impl ShapeParams {
    /// Rejects coefficients outside `[-5, 5]`.
    pub fn new(beta: [f64; NUM_BETAS]) -> Result<Self> {
        if let Some(b) = beta.iter().find(|b| !b.is_finite() || b.abs() > MAX_ABS_BETA) {
            return Err(Error::InvalidParams(format!("shape coefficient {b} outside [-5, 5]")));
        }
        Ok(Self { beta })
    }

    /// Clamps coefficients into `[-5, 5]`; non-finite values become zero.
    pub fn clamped(beta: [f64; NUM_BETAS]) -> Self {
        Self { beta: beta.map(|b| if b.is_finite() { b.clamp(-MAX_ABS_BETA, MAX_ABS_BETA) } else { 0.0 }) }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let beta: [f64; NUM_BETAS] = values.try_into().map_err(|_| Error::dims(NUM_BETAS, values.len()))?;
        Self::new(beta)
    }
}

/// Posed vertices sharing the model's face list.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Arc<Vec<[usize; 3]>>,
}

impl Mesh {
    pub fn scaled(&self, factor: f64) -> Mesh {
        Mesh { vertices: self.vertices.iter().map(|v| v * factor).collect(), faces: self.faces.clone() }
    }
}

/// 14 root-relative joints with visibility. Invisible joints hold zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSet {
    pub joints: [Vec3; NUM_LSP_JOINTS],
    pub visible: [bool; NUM_LSP_JOINTS],
}

impl JointSet {
    pub fn all_visible(joints: [Vec3; NUM_LSP_JOINTS]) -> Self {
        Self { joints, visible: [true; NUM_LSP_JOINTS] }
    }

    pub fn from_slice(joints: &[Vec3]) -> Result<Self> {
        let joints: [Vec3; NUM_LSP_JOINTS] = joints.try_into().map_err(|_| Error::dims(NUM_LSP_JOINTS, joints.len()))?;
        Ok(Self::all_visible(joints))
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Zero every joint flagged invisible.
    pub fn with_invisible_zeroed(mut self) -> Self {
        for (j, v) in self.joints.iter_mut().zip(self.visible) {
            if !v {
                *j = Vec3::zeros();
            }
        }
        self
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }
}

/// Sparse linear map from mesh vertices to joints; each row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub columns: usize,
}

impl Regressor {
    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let columns = dense.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(dense.len());
        for row in dense {
            if row.len() != columns {
                return Err(Error::dims(columns, row.len()));
            }
            rows.push(row.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(i, w)| (i, *w)).collect());
        }
        Ok(Self { rows, columns })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.columns];
                for &(i, w) in row {
                    dense[i] += w;
                }
                dense
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn apply_row(&self, row: usize, vertices: &[Vec3]) -> Vec3 {
        self.rows[row].iter().fold(Vec3::zeros(), |acc, &(i, w)| acc + vertices[i] * w)
    }
}

/// `joints = regressor . vertices`.
pub fn regress_joints(vertices: &[Vec3], regressor: &Regressor) -> Result<Vec<Vec3>> {
    if regressor.columns != vertices.len() {
        return Err(Error::dims(format!("{} vertices", regressor.columns), vertices.len()));
    }
    Ok((0..regressor.len()).map(|r| regressor.apply_row(r, vertices)).collect())
}

/// Bone capsule radii in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneRadii {
    pub torso: f64,
    pub head: f64,
    pub upper_leg: f64,
    pub lower_leg: f64,
    pub foot: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub hand: f64,
}

impl Default for BoneRadii {
    fn default() -> Self {
        Self {
            torso: 0.16,
            head: 0.095,
            upper_leg: 0.075,
            lower_leg: 0.055,
            foot: 0.045,
            upper_arm: 0.05,
            forearm: 0.04,
            hand: 0.035,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Upper bound on the vertex count; the finest tessellation that fits is used.
    pub vertex_budget: usize,
    pub radii: BoneRadii,
    pub num_betas: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { vertex_budget: 1400, radii: BoneRadii::default(), num_betas: NUM_BETAS }
    }
}

pub const MIN_VERTEX_BUDGET: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Midline,
    Left,
    Right,
}

/// One tube of the body and its place in the vertex/face arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub side: Side,
    pub rings: usize,
    /// Columns per ring, `sides + 1` (the last column duplicates the first).
    pub cols: usize,
    pub vertex_offset: usize,
    pub face_offset: usize,
    pub face_count: usize,
    /// Axis length in meters.
    pub length: f64,
    /// Mean circumference in meters.
    pub circumference: f64,
    pub mirror: usize,
}

impl Segment {
    pub fn sides(&self) -> usize {
        self.cols - 1
    }

    pub fn vertex(&self, ring: usize, col: usize) -> usize {
        self.vertex_offset + ring * self.cols + col
    }

    pub fn vertex_count(&self) -> usize {
        self.rings * self.cols
    }

    /// Vertices of one ring without the duplicated seam column.
    pub fn ring_vertices(&self, ring: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.sides()).map(move |c| self.vertex(ring, c))
    }
}

/// Parametric body: template, blendshapes, skinning weights and regressors.
#[derive(Debug, Clone)]
pub struct BodyModel {
    pub tree: KinematicTree,
    pub template_vertices: Vec<Vec3>,
    pub faces: Arc<Vec<[usize; 3]>>,
    /// `shape_dirs[v][b]`: displacement of vertex `v` per unit of `beta[b]`.
    pub shape_dirs: Vec<[Vec3; NUM_BETAS]>,
    /// Dense `N x 24` skinning weights.
    pub skin_weights: Vec<[f64; NUM_KIN_JOINTS]>,
    pub kin_regressor: Regressor,
    pub lsp_regressor: Regressor,
    pub mirror_vertex: Vec<usize>,
    pub mirror_face: Vec<usize>,
    pub segments: Vec<Segment>,
    sparse_weights: Vec<Vec<(usize, f64)>>,
}

/// Tessellation for one detail level.
struct Detail {
    limb_sides: usize,
    mid_sides: usize,
    long_rings: usize,
    short_rings: usize,
    torso_rings: usize,
    head_rings: usize,
}

impl Detail {
    fn level(d: usize) -> Self {
        Self {
            limb_sides: 4 + 2 * d,
            mid_sides: 8 + 4 * d,
            long_rings: 2 + 2 * d,
            short_rings: 2 + d,
            torso_rings: 4 + 3 * d,
            head_rings: 3 + d,
        }
    }

    fn vertex_count(&self) -> usize {
        let limb = (4 * self.long_rings + 2 * self.short_rings) * (self.limb_sides + 1);
        2 * limb + (self.torso_rings + self.head_rings) * (self.mid_sides + 1)
    }
}

/// How a tube's rings are bound to joints.
struct Binding {
    own: usize,
    /// Joint sharing half the weight of ring 0.
    blend_ring0: Option<usize>,
    /// Rings at or beyond this axis parameter are bound to the given joint instead.
    tip: Option<(usize, f64)>,
}

struct TubeSpec {
    name: &'static str,
    start: Vec3,
    end: Vec3,
    rings: usize,
    sides: usize,
    radius: f64,
    /// Radius multiplier at the far end (linear taper).
    taper: f64,
    binding: Binding,
}

const TORSO_BOTTOM: f64 = -0.14;
const TORSO_TOP: f64 = 0.52;
const HEAD_BOTTOM: f64 = 0.50;
const HEAD_TOP: f64 = 0.80;
const SPINE_HEIGHTS: [(usize, f64); 4] = [(0, 0.0), (3, 0.11), (6, 0.24), (9, 0.37)];
const HEAD_JOINT_HEIGHT: f64 = 0.62;
const TORSO_DEPTH_RATIO: f64 = 0.7;
const COLLAR_TORSO_SHARE: f64 = 0.6;

// Left-side nominal joint positions.
const L_HIP: [f64; 3] = [0.09, -0.09, 0.0];
const L_KNEE: [f64; 3] = [0.10, -0.50, 0.0];
const L_ANKLE: [f64; 3] = [0.10, -0.90, 0.0];
const L_TOE: [f64; 3] = [0.10, -0.96, -0.19];
const L_SHOULDER: [f64; 3] = [0.19, 0.46, 0.0];
const L_ELBOW: [f64; 3] = [0.46, 0.46, 0.0];
const L_WRIST: [f64; 3] = [0.71, 0.46, 0.0];
const L_FINGERTIP: [f64; 3] = [0.86, 0.46, 0.0];
const FOOT_JOINT_T: f64 = 0.6;
const HAND_JOINT_T: f64 = 0.6;

// Shape space: meters per unit coefficient.
const GIRTH_TORSO: f64 = 0.05;
const GIRTH_LEG: f64 = 0.06;
const GIRTH_ARM: f64 = 0.06;
const HEAD_SCALE: f64 = 0.04;
const LENGTH_STEP: f64 = 0.02;
const TORSO_HEIGHT_STEP: f64 = 0.03;
const SHOULDER_STEP: f64 = 0.02;

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn mirror_point(p: &Vec3) -> Vec3 {
    Vec3::new(-p.x, p.y, p.z)
}

/// Two unit vectors orthogonal to `axis` and to each other.
fn cross_section_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let d = axis.normalize();
    let reference = if d.y.abs() > 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (reference - d * d.dot(&reference)).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Per-vertex attributes collected while generating the canonical (left + midline-half) body.
#[derive(Clone)]
struct VertexRecord {
    position: Vec3,
    shape: [Vec3; NUM_BETAS],
    weights: Vec<(usize, f64)>,
}

impl VertexRecord {
    fn mirrored(&self) -> Self {
        Self {
            position: mirror_point(&self.position),
            shape: self.shape.map(|s| mirror_point(&s)),
            weights: self.weights.iter().map(|&(j, w)| (KIN_MIRROR[j], w)).collect(),
        }
    }
}

impl BodyModel {
    /// Generate the symmetric capsule body for `config`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        if config.vertex_budget < MIN_VERTEX_BUDGET {
            return Err(Error::Config(format!(
                "vertex budget {} is below the minimum of {MIN_VERTEX_BUDGET}",
                config.vertex_budget
            )));
        }
        if config.num_betas != NUM_BETAS {
            return Err(Error::Config(format!("shape space must have {NUM_BETAS} coefficients")));
        }
        let r = &config.radii;
        for (name, v) in [
            ("torso", r.torso),
            ("head", r.head),
            ("upper_leg", r.upper_leg),
            ("lower_leg", r.lower_leg),
            ("foot", r.foot),
            ("upper_arm", r.upper_arm),
            ("forearm", r.forearm),
            ("hand", r.hand),
        ] {
            if !(v > 0.0 && v < 0.5) {
                return Err(Error::Config(format!("radius {name} = {v} must lie in (0, 0.5)")));
            }
        }
        let mut level = 1;
        while Detail::level(level + 1).vertex_count() <= config.vertex_budget && level < 16 {
            level += 1;
        }
        let detail = Detail::level(level);
        Builder::new(config, detail).finish()
    }

    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn template_mesh(&self) -> Mesh {
        Mesh { vertices: self.template_vertices.clone(), faces: self.faces.clone() }
    }

    pub fn sparse_weights(&self, vertex: usize) -> &[(usize, f64)] {
        &self.sparse_weights[vertex]
    }

    fn shaped_vertex(&self, v: usize, shape: &ShapeParams) -> Vec3 {
        let dirs = &self.shape_dirs[v];
        let mut p = self.template_vertices[v];
        for (d, b) in dirs.iter().zip(shape.beta.iter()) {
            if *b != 0.0 {
                p += d * *b;
            }
        }
        p
    }

    fn rest_joints(&self, shape: &ShapeParams) -> [Vec3; NUM_KIN_JOINTS] {
        let mut joints = [Vec3::zeros(); NUM_KIN_JOINTS];
        for (k, j) in joints.iter_mut().enumerate() {
            *j = self.kin_regressor.rows[k].iter().fold(Vec3::zeros(), |acc, &(i, w)| acc + self.shaped_vertex(i, shape) * w);
        }
        joints
    }

    fn kinematics(&self, pose: &PoseParams, rest: &[Vec3; NUM_KIN_JOINTS]) -> Kinematics {
        let mut local = [Mat3::identity(); NUM_KIN_JOINTS];
        let mut rot = [Mat3::identity(); NUM_KIN_JOINTS];
        let mut trans = [Vec3::zeros(); NUM_KIN_JOINTS];
        for k in 0..NUM_KIN_JOINTS {
            local[k] = rodrigues(&pose.theta[k]);
            match self.tree.parent[k] {
                None => {
                    rot[k] = local[k];
                    trans[k] = rest[k];
                }
                Some(p) => {
                    rot[k] = rot[p] * local[k];
                    trans[k] = rot[p] * (rest[k] - rest[p]) + trans[p];
                }
            }
        }
        Kinematics { local, rot, trans }
    }

    fn blend(&self, v: usize, shaped: &Vec3, rest: &[Vec3; NUM_KIN_JOINTS], kin: &Kinematics) -> Vec3 {
        self.sparse_weights[v]
            .iter()
            .fold(Vec3::zeros(), |acc, &(k, w)| acc + (kin.rot[k] * (shaped - rest[k]) + kin.trans[k]) * w)
    }

    /// Linear blend skinning of the shaped template, translated so the root joint is at the origin.
    pub fn skin(&self, pose: &PoseParams, shape: &ShapeParams) -> Mesh {
        self.skin_with_cache(pose, shape).0
    }

    /// [`BodyModel::skin`] plus the intermediate state needed by [`BodyModel::skin_backward`].
    pub fn skin_with_cache(&self, pose: &PoseParams, shape: &ShapeParams) -> (Mesh, SkinCache) {
        let shaped: Vec<Vec3> = (0..self.num_vertices()).map(|v| self.shaped_vertex(v, shape)).collect();
        let rest = self.rest_joints(shape);
        let kin = self.kinematics(pose, &rest);
        let mut vertices: Vec<Vec3> = shaped.iter().enumerate().map(|(v, s)| self.blend(v, s, &rest, &kin)).collect();
        let root = self.kin_regressor.apply_row(0, &vertices);
        for p in &mut vertices {
            *p -= root;
        }
        let cache = SkinCache { pose: *pose, shaped, rest, kin };
        (Mesh { vertices, faces: self.faces.clone() }, cache)
    }

    /// Root-relative positions of the listed vertices only.
    pub fn skin_subset(&self, pose: &PoseParams, shape: &ShapeParams, subset: &[usize]) -> Vec<Vec3> {
        let rest = self.rest_joints(shape);
        let kin = self.kinematics(pose, &rest);
        let pose_vertex = |v: usize| self.blend(v, &self.shaped_vertex(v, shape), &rest, &kin);
        let root = self.kin_regressor.rows[0].iter().fold(Vec3::zeros(), |acc, &(i, w)| acc + pose_vertex(i) * w);
        subset.iter().map(|&v| pose_vertex(v) - root).collect()
    }

    /// LSP joints of the posed body without skinning the full mesh.
    pub fn posed_lsp_joints(&self, pose: &PoseParams, shape: &ShapeParams) -> [Vec3; NUM_LSP_JOINTS] {
        let support = self.lsp_support();
        let posed = self.skin_subset(pose, shape, &support.vertices);
        let mut joints = [Vec3::zeros(); NUM_LSP_JOINTS];
        for (k, j) in joints.iter_mut().enumerate() {
            *j = support.rows[k].iter().fold(Vec3::zeros(), |acc, &(i, w)| acc + posed[i] * w);
        }
        joints
    }

    fn lsp_support(&self) -> LspSupport {
        let mut vertices: Vec<usize> = self.lsp_regressor.rows.iter().flatten().map(|&(i, _)| i).collect();
        vertices.sort_unstable();
        vertices.dedup();
        let rows = self
            .lsp_regressor
            .rows
            .iter()
            .map(|row| row.iter().map(|&(i, w)| (vertices.binary_search(&i).unwrap_or(0), w)).collect())
            .collect();
        LspSupport { vertices, rows }
    }

    /// Gradient of `sum(grad_vertices . skin(pose, shape))` with respect to pose and shape.
    pub fn skin_backward(&self, cache: &SkinCache, grad_vertices: &[Vec3]) -> Result<(PoseParams, [f64; NUM_BETAS])> {
        let n = self.num_vertices();
        if grad_vertices.len() != n {
            return Err(Error::dims(n, grad_vertices.len()));
        }
        let SkinCache { pose, shaped, rest, kin } = cache;
        // out_i = posed_i - sum_j K0j posed_j
        let grad_root: Vec3 = -grad_vertices.iter().sum::<Vec3>();
        let mut grad_posed = grad_vertices.to_vec();
        for &(i, w) in &self.kin_regressor.rows[0] {
            grad_posed[i] += grad_root * w;
        }

        let mut g_rot = [Mat3::zeros(); NUM_KIN_JOINTS];
        let mut g_trans = [Vec3::zeros(); NUM_KIN_JOINTS];
        let mut g_rest = [Vec3::zeros(); NUM_KIN_JOINTS];
        let mut g_shaped = vec![Vec3::zeros(); n];
        for v in 0..n {
            let g = grad_posed[v];
            if g == Vec3::zeros() {
                continue;
            }
            for &(k, w) in &self.sparse_weights[v] {
                let gw = g * w;
                g_rot[k] += gw * (shaped[v] - rest[k]).transpose();
                g_trans[k] += gw;
                let back = kin.rot[k].transpose() * gw;
                g_shaped[v] += back;
                g_rest[k] -= back;
            }
        }

        let mut g_local = [Mat3::zeros(); NUM_KIN_JOINTS];
        for k in (0..NUM_KIN_JOINTS).rev() {
            match self.tree.parent[k] {
                None => {
                    g_local[k] = g_rot[k];
                    g_rest[k] += g_trans[k];
                }
                Some(p) => {
                    let (gr, gt) = (g_rot[k], g_trans[k]);
                    g_rot[p] += gr * kin.local[k].transpose();
                    g_local[k] = kin.rot[p].transpose() * gr;
                    g_rot[p] += gt * (rest[k] - rest[p]).transpose();
                    let back = kin.rot[p].transpose() * gt;
                    g_rest[k] += back;
                    g_rest[p] -= back;
                    g_trans[p] += gt;
                }
            }
        }

        let mut grad_pose = PoseParams::default();
        for k in 0..NUM_KIN_JOINTS {
            let d = rodrigues_derivatives(&pose.theta[k]);
            for c in 0..3 {
                grad_pose.theta[k][c] = g_local[k].component_mul(&d[c]).sum();
            }
        }

        for (k, row) in self.kin_regressor.rows.iter().enumerate() {
            for &(i, w) in row {
                g_shaped[i] += g_rest[k] * w;
            }
        }
        let mut grad_beta = [0.0; NUM_BETAS];
        for (v, g) in g_shaped.iter().enumerate() {
            for (b, gb) in grad_beta.iter_mut().enumerate() {
                *gb += self.shape_dirs[v][b].dot(g);
            }
        }
        Ok((grad_pose, grad_beta))
    }
}

struct LspSupport {
    vertices: Vec<usize>,
    rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone)]
struct Kinematics {
    local: [Mat3; NUM_KIN_JOINTS],
    rot: [Mat3; NUM_KIN_JOINTS],
    trans: [Vec3; NUM_KIN_JOINTS],
}

/// Forward state kept by [`BodyModel::skin_with_cache`].
#[derive(Debug, Clone)]
pub struct SkinCache {
    pose: PoseParams,
    shaped: Vec<Vec3>,
    rest: [Vec3; NUM_KIN_JOINTS],
    kin: Kinematics,
}

struct Builder<'a> {
    config: &'a ModelConfig,
    detail: Detail,
    records: Vec<VertexRecord>,
    faces: Vec<[usize; 3]>,
    mirror_face: Vec<usize>,
    mirror_vertex: Vec<usize>,
    segments: Vec<Segment>,
    pelvis_y: f64,
}

impl<'a> Builder<'a> {
    fn new(config: &'a ModelConfig, detail: Detail) -> Self {
        Self {
            config,
            detail,
            records: Vec::new(),
            faces: Vec::new(),
            mirror_face: Vec::new(),
            mirror_vertex: Vec::new(),
            segments: Vec::new(),
            pelvis_y: 0.0,
        }
    }

    fn limb_specs(&self) -> Vec<TubeSpec> {
        let r = &self.config.radii;
        let d = &self.detail;
        let s = d.limb_sides;
        vec![
            TubeSpec {
                name: "upper_leg",
                start: v3(L_HIP),
                end: v3(L_KNEE),
                rings: d.long_rings,
                sides: s,
                radius: r.upper_leg,
                taper: 0.8,
                binding: Binding { own: 1, blend_ring0: Some(0), tip: None },
            },
            TubeSpec {
                name: "lower_leg",
                start: v3(L_KNEE),
                end: v3(L_ANKLE),
                rings: d.long_rings,
                sides: s,
                radius: r.lower_leg,
                taper: 0.75,
                binding: Binding { own: 4, blend_ring0: Some(1), tip: None },
            },
            TubeSpec {
                name: "foot",
                start: v3(L_ANKLE),
                end: v3(L_TOE),
                rings: d.short_rings,
                sides: s,
                radius: r.foot,
                taper: 0.7,
                binding: Binding { own: 7, blend_ring0: Some(4), tip: Some((10, FOOT_JOINT_T)) },
            },
            TubeSpec {
                name: "upper_arm",
                start: v3(L_SHOULDER),
                end: v3(L_ELBOW),
                rings: d.long_rings,
                sides: s,
                radius: r.upper_arm,
                taper: 0.85,
                binding: Binding { own: 16, blend_ring0: Some(13), tip: None },
            },
            TubeSpec {
                name: "forearm",
                start: v3(L_ELBOW),
                end: v3(L_WRIST),
                rings: d.long_rings,
                sides: s,
                radius: r.forearm,
                taper: 0.8,
                binding: Binding { own: 18, blend_ring0: Some(16), tip: None },
            },
            TubeSpec {
                name: "hand",
                start: v3(L_WRIST),
                end: v3(L_FINGERTIP),
                rings: d.short_rings,
                sides: s,
                radius: r.hand,
                taper: 0.7,
                binding: Binding { own: 20, blend_ring0: Some(18), tip: Some((22, HAND_JOINT_T)) },
            },
        ]
    }

    fn ring_t(rings: usize, i: usize) -> f64 {
        i as f64 / (rings - 1) as f64
    }

    /// Index of the ring nearest to axis parameter `t`.
    fn nearest_ring(rings: usize, t: f64) -> usize {
        ((t * (rings - 1) as f64).round() as usize).min(rings - 1)
    }

    fn ring_weights(spec: &TubeSpec, ring: usize) -> Vec<(usize, f64)> {
        let b = &spec.binding;
        if let Some((tip, t_tip)) = b.tip {
            if ring >= Self::nearest_ring(spec.rings, t_tip) {
                return vec![(tip, 1.0)];
            }
        }
        match (ring, b.blend_ring0) {
            (0, Some(p)) => vec![(p, 0.5), (b.own, 0.5)],
            _ => vec![(b.own, 1.0)],
        }
    }

    fn push_segment(&mut self, name: &str, side: Side, rings: usize, cols: usize, length: f64, circumference: f64) -> usize {
        let seg = Segment {
            name: name.to_string(),
            side,
            rings,
            cols,
            vertex_offset: self.records.len(),
            face_offset: self.faces.len(),
            face_count: 0,
            length,
            circumference,
            mirror: self.segments.len(),
        };
        self.segments.push(seg);
        self.segments.len() - 1
    }

    /// Quad `(ring, col)` split along the main diagonal, or the anti-diagonal when `anti`.
    fn quad(seg: &Segment, i: usize, j: usize, anti: bool) -> [[usize; 3]; 2] {
        let a = seg.vertex(i, j);
        let b = seg.vertex(i, j + 1);
        let c = seg.vertex(i + 1, j + 1);
        let d = seg.vertex(i + 1, j);
        if anti {
            [[a, b, d], [b, c, d]]
        } else {
            [[a, b, c], [a, c, d]]
        }
    }

    fn add_limb(&mut self, spec: &TubeSpec) -> (usize, usize) {
        let axis = spec.end - spec.start;
        let length = axis.norm();
        let (e1, e2) = cross_section_basis(&axis);
        let sides = spec.sides;
        let cols = sides + 1;
        let circumference = PI * spec.radius * (1.0 + spec.taper);
        let left = self.push_segment(spec.name, Side::Left, spec.rings, cols, length, circumference);
        let mut left_records = Vec::with_capacity(spec.rings * cols);
        for i in 0..spec.rings {
            let t = Self::ring_t(spec.rings, i);
            let center = spec.start + axis * t;
            let radius = spec.radius * (1.0 + (spec.taper - 1.0) * t);
            let weights = Self::ring_weights(spec, i);
            for j in 0..cols {
                let phi = 2.0 * PI * (j % sides) as f64 / sides as f64;
                let radial = (e1 * phi.cos() + e2 * phi.sin()) * radius;
                let position = center + radial;
                let shape = self.limb_shape(spec.name, &radial, t, &axis);
                left_records.push(VertexRecord { position, shape, weights: weights.clone() });
            }
        }
        let right_records: Vec<VertexRecord> = left_records.iter().map(VertexRecord::mirrored).collect();
        let left_offset = self.records.len();
        self.records.extend(left_records);
        let mut left_faces = Vec::new();
        {
            let seg = &self.segments[left];
            for i in 0..spec.rings - 1 {
                for j in 0..sides {
                    left_faces.extend(Self::quad(seg, i, j, false));
                }
            }
        }
        let lf_offset = self.faces.len();
        self.faces.extend(left_faces.iter().copied());
        self.segments[left].face_count = left_faces.len();

        let right = self.push_segment(spec.name, Side::Right, spec.rings, cols, length, circumference);
        let right_offset = self.records.len();
        self.records.extend(right_records);
        let rf_offset = self.faces.len();
        for f in &left_faces {
            let m = |v: usize| v - left_offset + right_offset;
            self.faces.push([m(f[0]), m(f[2]), m(f[1])]);
        }
        self.segments[right].face_count = left_faces.len();
        self.segments[left].mirror = right;
        self.segments[right].mirror = left;

        let count = spec.rings * cols;
        self.mirror_vertex.resize(self.records.len(), 0);
        for k in 0..count {
            self.mirror_vertex[left_offset + k] = right_offset + k;
            self.mirror_vertex[right_offset + k] = left_offset + k;
        }
        self.mirror_face.resize(self.faces.len(), 0);
        for k in 0..left_faces.len() {
            self.mirror_face[lf_offset + k] = rf_offset + k;
            self.mirror_face[rf_offset + k] = lf_offset + k;
        }
        (left, right)
    }

    fn limb_shape(&self, name: &str, radial: &Vec3, t: f64, axis: &Vec3) -> [Vec3; NUM_BETAS] {
        let mut shape = [Vec3::zeros(); NUM_BETAS];
        let dir = axis.normalize();
        let is_leg = matches!(name, "upper_leg" | "lower_leg" | "foot");
        if is_leg {
            shape[1] = radial * GIRTH_LEG;
        } else {
            shape[2] = radial * GIRTH_ARM;
            // arms ride on the torso-height and shoulder-width components
            shape[8] = Vec3::new(0.0, TORSO_HEIGHT_STEP * torso_height_share(self.pelvis_y, L_SHOULDER[1]), 0.0);
            shape[9] = Vec3::new(SHOULDER_STEP, 0.0, 0.0);
        }
        let upper_leg_dir = (v3(L_KNEE) - v3(L_HIP)).normalize();
        let lower_leg_dir = (v3(L_ANKLE) - v3(L_KNEE)).normalize();
        let upper_arm_dir = (v3(L_ELBOW) - v3(L_SHOULDER)).normalize();
        let forearm_dir = (v3(L_WRIST) - v3(L_ELBOW)).normalize();
        match name {
            "upper_leg" => shape[4] = dir * (LENGTH_STEP * t),
            "lower_leg" => {
                shape[4] = upper_leg_dir * LENGTH_STEP;
                shape[5] = dir * (LENGTH_STEP * t);
            }
            "foot" => {
                shape[4] = upper_leg_dir * LENGTH_STEP;
                shape[5] = lower_leg_dir * LENGTH_STEP;
            }
            "upper_arm" => shape[6] = dir * (LENGTH_STEP * t),
            "forearm" => {
                shape[6] = upper_arm_dir * LENGTH_STEP;
                shape[7] = dir * (LENGTH_STEP * t);
            }
            "hand" => {
                shape[6] = upper_arm_dir * LENGTH_STEP;
                shape[7] = forearm_dir * LENGTH_STEP;
            }
            _ => {}
        }
        shape
    }

    /// Vertical midline tube; the right half of every ring mirrors the left half.
    fn add_midline(
        &mut self,
        name: &str,
        bottom: f64,
        top: f64,
        rings: usize,
        radius: f64,
        depth_ratio: f64,
        weights: impl Fn(f64) -> Vec<(usize, f64)>,
        shape: impl Fn(&Vec3, f64) -> [Vec3; NUM_BETAS],
    ) -> usize {
        let sides = self.detail.mid_sides;
        let cols = sides + 1;
        let half = sides / 2;
        let length = top - bottom;
        let circumference = PI * radius * (1.0 + depth_ratio);
        let seg_idx = self.push_segment(name, Side::Midline, rings, cols, length, circumference);
        let offset = self.records.len();
        let mut records: Vec<VertexRecord> = Vec::with_capacity(rings * cols);
        for i in 0..rings {
            let y = bottom + length * Self::ring_t(rings, i);
            let center = Vec3::new(0.0, y, 0.0);
            let w = weights(y);
            let mut ring: Vec<VertexRecord> = Vec::with_capacity(cols);
            for j in 0..=half {
                let phi = 2.0 * PI * j as f64 / sides as f64;
                // phi = 0 is the back (+z), phi = pi the front
                let x = if j == 0 || j == half { 0.0 } else { radius * phi.sin() };
                let radial = Vec3::new(x, 0.0, radius * depth_ratio * phi.cos());
                let position = center + radial;
                ring.push(VertexRecord { position, shape: shape(&radial, y), weights: w.clone() });
            }
            for j in half + 1..=sides {
                let m = ring[sides - j].mirrored();
                ring.push(m);
            }
            records.extend(ring);
        }
        self.records.extend(records);
        self.mirror_vertex.resize(self.records.len(), 0);
        for i in 0..rings {
            for j in 0..cols {
                let seg = &self.segments[seg_idx];
                self.mirror_vertex[seg.vertex(i, j)] = seg.vertex(i, sides - j);
            }
        }
        let first_face = self.faces.len();
        let seg = self.segments[seg_idx].clone();
        for i in 0..rings - 1 {
            for j in 0..half {
                self.faces.extend(Self::quad(&seg, i, j, false));
            }
        }
        let left_count = self.faces.len() - first_face;
        // right-half quads are the exact mirrors of the left-half ones
        let mirror_of = |v: usize| {
            let local = v - offset;
            let (i, j) = (local / cols, local % cols);
            seg.vertex(i, sides - j)
        };
        for k in 0..left_count {
            let f = self.faces[first_face + k];
            self.faces.push([mirror_of(f[0]), mirror_of(f[2]), mirror_of(f[1])]);
        }
        self.segments[seg_idx].face_count = 2 * left_count;
        self.mirror_face.resize(self.faces.len(), 0);
        for k in 0..left_count {
            self.mirror_face[first_face + k] = first_face + left_count + k;
            self.mirror_face[first_face + left_count + k] = first_face + k;
        }
        seg_idx
    }

    fn finish(mut self) -> Result<BodyModel> {
        let radii = self.config.radii.clone();
        let torso_rings = self.detail.torso_rings;
        let head_rings = self.detail.head_rings;
        let torso_ring_at = |y: f64| Builder::nearest_ring(torso_rings, (y - TORSO_BOTTOM) / (TORSO_TOP - TORSO_BOTTOM));
        let torso_ring_y = |ring: usize| TORSO_BOTTOM + (TORSO_TOP - TORSO_BOTTOM) * Builder::ring_t(torso_rings, ring);
        let spine_rings: Vec<usize> = SPINE_HEIGHTS.iter().map(|&(_, y)| torso_ring_at(y)).collect();
        let mut distinct = spine_rings.clone();
        distinct.push(torso_rings - 1);
        distinct.dedup();
        if distinct.len() != SPINE_HEIGHTS.len() + 1 {
            return Err(Error::Config("torso tessellation too coarse for the spine joints".into()));
        }
        // hat-function knots sit exactly on the regressor rings so the pelvis ring is rigid
        let knots: Vec<(usize, f64)> = SPINE_HEIGHTS.iter().zip(&spine_rings).map(|(&(j, _), &r)| (j, torso_ring_y(r))).collect();
        let pelvis_y = knots[0].1;
        self.pelvis_y = pelvis_y;
        let torso = self.add_midline(
            "torso",
            TORSO_BOTTOM,
            TORSO_TOP,
            torso_rings,
            radii.torso,
            TORSO_DEPTH_RATIO,
            |y| torso_weights(&knots, y),
            |radial, y| {
                let mut s = [Vec3::zeros(); NUM_BETAS];
                s[0] = radial * GIRTH_TORSO;
                s[8] = Vec3::new(0.0, TORSO_HEIGHT_STEP * torso_height_share(pelvis_y, y), 0.0);
                s
            },
        );
        let head_center = Vec3::new(0.0, 0.5 * (HEAD_BOTTOM + HEAD_TOP), 0.0);
        let head = self.add_midline(
            "head",
            HEAD_BOTTOM,
            HEAD_TOP,
            head_rings,
            radii.head,
            1.0,
            |y| if y < HEAD_JOINT_HEIGHT - 1e-9 { vec![(12, 1.0)] } else { vec![(15, 1.0)] },
            move |radial, y| {
                let mut s = [Vec3::zeros(); NUM_BETAS];
                let p = Vec3::new(0.0, y, 0.0) + radial;
                s[3] = (p - head_center) * HEAD_SCALE;
                s[8] = Vec3::new(0.0, TORSO_HEIGHT_STEP, 0.0);
                s
            },
        );
        let specs = self.limb_specs();
        let mut limb = std::collections::HashMap::new();
        for spec in &specs {
            let (l, r) = self.add_limb(spec);
            limb.insert(spec.name, (l, r, spec.rings));
        }

        let n = self.records.len();
        let seg = |i: usize| self.segments[i].clone();
        let ring_row = |s: &Segment, ring: usize| -> Vec<(usize, f64)> {
            let w = 1.0 / s.sides() as f64;
            s.ring_vertices(ring).map(|v| (v, w)).collect()
        };
        let torso_seg = seg(torso);
        let head_seg = seg(head);
        let head_ring_at = |y: f64| Builder::nearest_ring(head_rings, (y - HEAD_BOTTOM) / (HEAD_TOP - HEAD_BOTTOM));

        let side_seg = |name: &str, side: Side| {
            let (l, r, _) = limb[name];
            seg(if side == Side::Left { l } else { r })
        };
        let first = |s: &Segment| ring_row(s, 0);
        let last = |s: &Segment| ring_row(s, s.rings - 1);
        let at_t = |s: &Segment, t: f64| ring_row(s, Builder::nearest_ring(s.rings, t));

        let mut kin_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); NUM_KIN_JOINTS];
        for (&(joint, _), &ring) in SPINE_HEIGHTS.iter().zip(&spine_rings) {
            kin_rows[joint] = ring_row(&torso_seg, ring);
        }
        kin_rows[12] = last(&torso_seg);
        kin_rows[15] = ring_row(&head_seg, head_ring_at(HEAD_JOINT_HEIGHT));
        for (side, off) in [(Side::Left, 0usize), (Side::Right, 1usize)] {
            let upper_leg = side_seg("upper_leg", side);
            let lower_leg = side_seg("lower_leg", side);
            let foot = side_seg("foot", side);
            let upper_arm = side_seg("upper_arm", side);
            let forearm = side_seg("forearm", side);
            let hand = side_seg("hand", side);
            kin_rows[1 + off] = first(&upper_leg);
            kin_rows[4 + off] = last(&upper_leg);
            kin_rows[7 + off] = last(&lower_leg);
            kin_rows[10 + off] = at_t(&foot, FOOT_JOINT_T);
            kin_rows[16 + off] = first(&upper_arm);
            kin_rows[18 + off] = last(&upper_arm);
            kin_rows[20 + off] = last(&forearm);
            kin_rows[22 + off] = at_t(&hand, HAND_JOINT_T);
            let collar: Vec<(usize, f64)> = last(&torso_seg)
                .into_iter()
                .map(|(v, w)| (v, w * COLLAR_TORSO_SHARE))
                .chain(first(&upper_arm).into_iter().map(|(v, w)| (v, w * (1.0 - COLLAR_TORSO_SHARE))))
                .collect();
            kin_rows[13 + off] = collar;
        }

        let mut lsp_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); NUM_LSP_JOINTS];
        for (side, ankle, knee, hip, wrist, elbow, shoulder) in
            [(Side::Right, 0, 1, 2, 6, 7, 8), (Side::Left, 5, 4, 3, 11, 10, 9)]
        {
            let upper_leg = side_seg("upper_leg", side);
            let lower_leg = side_seg("lower_leg", side);
            let upper_arm = side_seg("upper_arm", side);
            let forearm = side_seg("forearm", side);
            lsp_rows[ankle] = last(&lower_leg);
            lsp_rows[knee] = last(&upper_leg);
            lsp_rows[hip] = first(&upper_leg);
            lsp_rows[wrist] = last(&forearm);
            lsp_rows[elbow] = last(&upper_arm);
            lsp_rows[shoulder] = first(&upper_arm);
        }
        lsp_rows[12] = last(&torso_seg);
        lsp_rows[13] = last(&head_seg);

        // root-relative template: put the pelvis ring centroid at the origin (x is zero by symmetry)
        let root = kin_rows[0].iter().fold(Vec3::zeros(), |acc, &(i, w)| acc + self.records[i].position * w);
        let shift = Vec3::new(0.0, root.y, root.z);
        let template_vertices: Vec<Vec3> = self.records.iter().map(|r| r.position - shift).collect();
        let shape_dirs: Vec<[Vec3; NUM_BETAS]> = self.records.iter().map(|r| r.shape).collect();
        let sparse_weights: Vec<Vec<(usize, f64)>> = self.records.iter().map(|r| r.weights.clone()).collect();
        let skin_weights = sparse_weights
            .iter()
            .map(|ws| {
                let mut dense = [0.0; NUM_KIN_JOINTS];
                for &(k, w) in ws {
                    dense[k] += w;
                }
                dense
            })
            .collect();

        Ok(BodyModel {
            tree: KinematicTree::standard(),
            template_vertices,
            faces: Arc::new(self.faces),
            shape_dirs,
            skin_weights,
            kin_regressor: Regressor { rows: kin_rows, columns: n },
            lsp_regressor: Regressor { rows: lsp_rows, columns: n },
            mirror_vertex: self.mirror_vertex,
            mirror_face: self.mirror_face,
            segments: self.segments,
            sparse_weights,
        })
    }
}

fn torso_height_share(pelvis_y: f64, y: f64) -> f64 {
    ((y - pelvis_y) / (TORSO_TOP - pelvis_y)).clamp(0.0, 1.0)
}

/// Hat-function blend of the pelvis and spine joints by ring height.
fn torso_weights(knots: &[(usize, f64)], y: f64) -> Vec<(usize, f64)> {
    let (first_joint, first_y) = knots[0];
    if y <= first_y {
        return vec![(first_joint, 1.0)];
    }
    for pair in knots.windows(2) {
        let ((j0, y0), (j1, y1)) = (pair[0], pair[1]);
        if y <= y1 {
            let a = (y - y0) / (y1 - y0);
            if a <= 0.0 {
                return vec![(j0, 1.0)];
            }
            if a >= 1.0 {
                return vec![(j1, 1.0)];
            }
            return vec![(j0, 1.0 - a), (j1, a)];
        }
    }
    vec![(knots[knots.len() - 1].0, 1.0)]
}

/// Per-joint, per-axis angle ranges for pose sampling (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseLimits {
    pub lower: [Vec3; NUM_KIN_JOINTS],
    pub upper: [Vec3; NUM_KIN_JOINTS],
}

impl PoseLimits {
    pub fn zero() -> Self {
        Self { lower: [Vec3::zeros(); NUM_KIN_JOINTS], upper: [Vec3::zeros(); NUM_KIN_JOINTS] }
    }

    /// Uniformly scale every range, e.g. for near-rest-pose targets.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { lower: self.lower.map(|v| v * factor), upper: self.upper.map(|v| v * factor) }
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..NUM_KIN_JOINTS {
            for c in 0..3 {
                let (lo, hi) = (self.lower[k][c], self.upper[k][c]);
                if !(lo > -PI && hi < PI && lo <= hi) {
                    return Err(Error::InvalidParams(format!(
                        "pose limit for joint {k} axis {c} is [{lo}, {hi}], must satisfy -pi < lo <= hi < pi"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Default for PoseLimits {
    /// Moderate everyday ranges, specified on the left side and mirrored.
    fn default() -> Self {
        let mut lower = [Vec3::zeros(); NUM_KIN_JOINTS];
        let mut upper = [Vec3::zeros(); NUM_KIN_JOINTS];
        let mut set = |k: usize, lo: [f64; 3], hi: [f64; 3]| {
            lower[k] = v3(lo);
            upper[k] = v3(hi);
        };
        set(0, [-0.2, -0.3, -0.15], [0.2, 0.3, 0.15]);
        for k in [3, 6, 9] {
            set(k, [-0.2, -0.2, -0.15], [0.25, 0.2, 0.15]);
        }
        set(12, [-0.25, -0.3, -0.2], [0.25, 0.3, 0.2]);
        set(15, [-0.25, -0.3, -0.2], [0.25, 0.3, 0.2]);
        // left side: hip flexes about x (positive swings the leg forward)
        set(1, [-0.5, -0.3, -0.1], [1.2, 0.3, 0.5]);
        set(4, [-1.4, -0.1, -0.1], [0.0, 0.1, 0.1]);
        set(7, [-0.3, -0.2, -0.2], [0.3, 0.2, 0.2]);
        set(10, [-0.2, -0.1, -0.1], [0.2, 0.1, 0.1]);
        set(13, [-0.15, -0.15, -0.15], [0.15, 0.15, 0.15]);
        set(16, [-0.5, -0.5, -1.2], [0.5, 1.0, 0.8]);
        set(18, [-0.3, 0.0, -0.2], [0.3, 1.6, 0.2]);
        set(20, [-0.4, -0.3, -0.4], [0.4, 0.3, 0.4]);
        set(22, [-0.2, -0.2, -0.2], [0.2, 0.2, 0.2]);
        // mirrored rotation: (a, b, c) -> (a, -b, -c)
        for k in [1, 4, 7, 10, 13, 16, 18, 20, 22] {
            let m = KIN_MIRROR[k];
            lower[m] = Vec3::new(lower[k].x, -upper[k].y, -upper[k].z);
            upper[m] = Vec3::new(upper[k].x, -lower[k].y, -lower[k].z);
        }
        Self { lower, upper }
    }
}

/// Deterministic uniform pose sample within `limits`.
pub fn sample_pose(seed: u64, limits: &PoseLimits) -> Result<PoseParams> {
    limits.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = [Vec3::zeros(); NUM_KIN_JOINTS];
    for (k, t) in theta.iter_mut().enumerate() {
        for c in 0..3 {
            let (lo, hi) = (limits.lower[k][c], limits.upper[k][c]);
            t[c] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        }
    }
    PoseParams::new(theta)
}

/// Shape sample: standard normal coefficients scaled by `sigma`, clamped to the valid range.
pub fn sample_shape(seed: u64, sigma: f64) -> ShapeParams {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beta = [0.0; NUM_BETAS];
    for b in &mut beta {
        let z: f64 = StandardNormal.sample(&mut rng);
        *b = z * sigma;
    }
    ShapeParams::clamped(beta)
}
