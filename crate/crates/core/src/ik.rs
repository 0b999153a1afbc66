//! From dense UV joint evidence to pose and shape.
//!
//! [`aggregate_joints`] averages the UV joint map per part into `J_initial`.
//! The inpaint/refine net completes and corrects it into `J_refine`, and
//! GIK-Net regresses `(theta, beta)` from `J_refine`. [`numerical_ik`] is the
//! iterative Levenberg-Marquardt baseline. [`train_ik_stage`] trains both nets
//! jointly on synthetic mocap with noise and joint-dropout augmentation.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::body_model::{sample_pose, sample_shape, BodyModel, JointSet, PoseLimits, PoseParams, ShapeParams};
use crate::dense_maps::UvMaps;
use crate::losses::{mpjpe, IkLosses};
use crate::nn::{AdamState, DropoutKey, Mlp, MlpSpec, Mode};
use crate::uv_atlas::PartSegmentation;
use crate::{derive_seed, Error, Result, Vec3, NUM_BETAS, NUM_KIN_JOINTS, NUM_LSP_JOINTS};

pub const INPAINT_INPUT_DIM: usize = NUM_LSP_JOINTS * 3 + NUM_LSP_JOINTS;
pub const JOINT_DIM: usize = NUM_LSP_JOINTS * 3;
pub const GIK_OUTPUT_DIM: usize = NUM_KIN_JOINTS * 3 + NUM_BETAS;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationResult {
    pub j_initial: JointSet,
    pub texel_counts: [usize; NUM_LSP_JOINTS],
}

/// Per-part mean of the UV joint map over valid texels. Parts with fewer than
/// `min_texels` valid texels come back zeroed and invisible.
pub fn aggregate_joints(uv: &UvMaps, part_seg: &PartSegmentation, min_texels: usize) -> Result<AggregationResult> {
    if uv.shape() != part_seg.shape() {
        return Err(Error::dims(format!("{:?}", part_seg.shape()), format!("{:?}", uv.shape())));
    }
    // running means reproduce a constant part exactly
    let mut means = [Vec3::zeros(); NUM_LSP_JOINTS];
    let mut counts = [0usize; NUM_LSP_JOINTS];
    for (t, part) in part_seg.assign.as_slice().iter().enumerate() {
        if let Some(p) = part {
            if uv.valid.as_slice()[t] {
                let k = *p as usize;
                counts[k] += 1;
                means[k] += (uv.joint.as_slice()[t] - means[k]) / counts[k] as f64;
            }
        }
    }
    let min = min_texels.max(1);
    let mut j = JointSet { joints: [Vec3::zeros(); NUM_LSP_JOINTS], visible: [false; NUM_LSP_JOINTS] };
    for k in 0..NUM_LSP_JOINTS {
        if counts[k] >= min {
            j.joints[k] = means[k];
            j.visible[k] = true;
        }
    }
    Ok(AggregationResult { j_initial: j, texel_counts: counts })
}

/// Inpaint-net input: coordinates (zero where invisible) followed by visibility flags.
pub fn inpaint_features(j: &JointSet) -> [f64; INPAINT_INPUT_DIM] {
    let mut x = [0.0; INPAINT_INPUT_DIM];
    for k in 0..NUM_LSP_JOINTS {
        if j.visible[k] {
            for c in 0..3 {
                x[3 * k + c] = j.joints[k][c];
            }
            x[JOINT_DIM + k] = 1.0;
        }
    }
    x
}

fn joints_from_row(row: &[f64]) -> JointSet {
    let mut joints = [Vec3::zeros(); NUM_LSP_JOINTS];
    for (k, j) in joints.iter_mut().enumerate() {
        *j = Vec3::new(row[3 * k], row[3 * k + 1], row[3 * k + 2]);
    }
    JointSet::all_visible(joints)
}

fn check_net(net: &Mlp, input: usize, output: usize) -> Result<()> {
    if net.spec.input_dim != input || net.spec.output_dim != output {
        return Err(Error::dims(
            format!("{input} -> {output} network"),
            format!("{} -> {}", net.spec.input_dim, net.spec.output_dim),
        ));
    }
    if net.steps == 0 {
        return Err(Error::Untrained);
    }
    Ok(())
}

/// The net predicts a correction that is added to the (zero-filled) input coordinates.
pub fn inpaint_refine_batch(net: &Mlp, inputs: &[JointSet]) -> Result<Vec<JointSet>> {
    check_net(net, INPAINT_INPUT_DIM, JOINT_DIM)?;
    let x = Array2::from_shape_fn((inputs.len(), INPAINT_INPUT_DIM), |(i, c)| inpaint_features(&inputs[i])[c]);
    let delta = net.predict(x.view())?;
    let out = &delta + &x.slice(s![.., ..JOINT_DIM]);
    Ok(out.rows().into_iter().map(|r| joints_from_row(r.as_slice().expect("row-major"))).collect())
}

pub fn inpaint_refine_joints(net: &Mlp, agg: &AggregationResult) -> Result<JointSet> {
    Ok(inpaint_refine_batch(net, std::slice::from_ref(&agg.j_initial))?.remove(0))
}

fn params_from_row(row: &[f64]) -> Result<(PoseParams, ShapeParams)> {
    let pose = PoseParams::from_flat(&row[..NUM_KIN_JOINTS * 3])?;
    let beta: [f64; NUM_BETAS] = row[NUM_KIN_JOINTS * 3..].try_into().expect("width checked");
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("shape".into()));
    }
    Ok((pose, ShapeParams::clamped(beta)))
}

pub fn gik_batch(net: &Mlp, j_refine: &[JointSet]) -> Result<Vec<(PoseParams, ShapeParams)>> {
    check_net(net, JOINT_DIM, GIK_OUTPUT_DIM)?;
    let x = Array2::from_shape_fn((j_refine.len(), JOINT_DIM), |(i, c)| j_refine[i].joints[c / 3][c % 3]);
    let out = net.predict(x.view())?;
    out.rows().into_iter().map(|r| params_from_row(r.as_slice().expect("row-major"))).collect()
}

/// GIK-Net: canonical axis-angle pose and clamped shape from refined joints.
pub fn gik_forward(net: &Mlp, j_refine: &JointSet) -> Result<(PoseParams, ShapeParams)> {
    Ok(gik_batch(net, std::slice::from_ref(j_refine))?.remove(0))
}

const HEAD_INIT_SCALE: f64 = 0.01;

/// Inpaint/refine net and GIK-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct IkNets {
    pub inpaint: Mlp,
    pub gik: Mlp,
}

impl IkNets {
    pub fn new(inpaint: MlpSpec, gik: MlpSpec, seed: u64) -> Result<Self> {
        if inpaint.input_dim != INPAINT_INPUT_DIM || inpaint.output_dim != JOINT_DIM {
            return Err(Error::dims(format!("{INPAINT_INPUT_DIM} -> {JOINT_DIM}"), format!("{inpaint:?}")));
        }
        if gik.input_dim != JOINT_DIM || gik.output_dim != GIK_OUTPUT_DIM {
            return Err(Error::dims(format!("{JOINT_DIM} -> {GIK_OUTPUT_DIM}"), format!("{gik:?}")));
        }
        let mut nets = Self { inpaint: Mlp::new(inpaint, derive_seed(seed, 1))?, gik: Mlp::new(gik, derive_seed(seed, 2))? };
        // start near "no correction" and the rest pose
        nets.inpaint.scale_head(HEAD_INIT_SCALE);
        nets.gik.scale_head(HEAD_INIT_SCALE);
        Ok(nets)
    }

    pub fn default_specs() -> (MlpSpec, MlpSpec) {
        (MlpSpec::new(INPAINT_INPUT_DIM, JOINT_DIM), MlpSpec::new(JOINT_DIM, GIK_OUTPUT_DIM))
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.inpaint.set_mode(mode);
        self.gik.set_mode(mode);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop once the sum of squared residuals falls below this (m^2).
    pub cost_tolerance: f64,
    pub initial_damping: f64,
    /// Central-difference step.
    pub fd_step: f64,
    pub optimize_shape: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iterations: 200, cost_tolerance: 1e-12, initial_damping: 1e-3, fd_step: 1e-6, optimize_shape: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub pose: PoseParams,
    pub shape: ShapeParams,
    /// Final sum of squared joint residuals (m^2).
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after the start and after every accepted step.
    pub cost_history: Vec<f64>,
}

pub const MIN_VISIBLE_FOR_IK: usize = 4;

/// Damped least squares over visible joints, Jacobian by central differences.
/// Damping starts at `initial_damping`, grows x10 on a rejected step and shrinks /10
/// on an accepted one.
pub fn numerical_ik(model: &BodyModel, target: &JointSet, init: (&PoseParams, &ShapeParams), cfg: &LmConfig) -> Result<LmResult> {
    let visible: Vec<usize> = (0..NUM_LSP_JOINTS).filter(|k| target.visible[*k]).collect();
    if visible.len() < MIN_VISIBLE_FOR_IK {
        return Err(Error::UnderDetermined { visible: visible.len(), required: MIN_VISIBLE_FOR_IK });
    }
    let n_pose = NUM_KIN_JOINTS * 3;
    let n_params = if cfg.optimize_shape { n_pose + NUM_BETAS } else { n_pose };
    let fixed_shape = *init.1;
    let unpack = |p: &DVector<f64>| -> (PoseParams, ShapeParams) {
        let mut theta = [Vec3::zeros(); NUM_KIN_JOINTS];
        for (k, t) in theta.iter_mut().enumerate() {
            *t = Vec3::new(p[3 * k], p[3 * k + 1], p[3 * k + 2]);
        }
        let shape = if cfg.optimize_shape { ShapeParams::clamped(std::array::from_fn(|b| p[n_pose + b])) } else { fixed_shape };
        (PoseParams::raw(theta), shape)
    };
    let residuals = |p: &DVector<f64>| -> DVector<f64> {
        let (pose, shape) = unpack(p);
        let joints = model.posed_lsp_joints(&pose, &shape);
        DVector::from_iterator(visible.len() * 3, visible.iter().flat_map(|&k| (joints[k] - target.joints[k]).data.0[0]))
    };
    let mut p = DVector::zeros(n_params);
    for k in 0..NUM_KIN_JOINTS {
        for c in 0..3 {
            p[3 * k + c] = init.0.theta[k][c];
        }
    }
    if cfg.optimize_shape {
        for b in 0..NUM_BETAS {
            p[n_pose + b] = init.1.beta[b];
        }
    }
    let mut r = residuals(&p);
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = cfg.initial_damping;
    let mut iterations = 0;
    while iterations < cfg.max_iterations && cost > cfg.cost_tolerance {
        iterations += 1;
        let mut jac = DMatrix::zeros(r.len(), n_params);
        for i in 0..n_params {
            let mut hi = p.clone();
            hi[i] += cfg.fd_step;
            let mut lo = p.clone();
            lo[i] -= cfg.fd_step;
            jac.set_column(i, &((residuals(&hi) - residuals(&lo)) / (2.0 * cfg.fd_step)));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e12 {
            let a = &jtj + DMatrix::identity(n_params, n_params) * lambda;
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let candidate = &p + &step;
            let r_new = residuals(&candidate);
            let c_new = r_new.norm_squared();
            if c_new < cost {
                p = candidate;
                r = r_new;
                cost = c_new;
                lambda = (lambda / 10.0).max(1e-12);
                history.push(cost);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let (pose, shape) = unpack(&p);
    let pose = PoseParams::new(pose.theta)?;
    Ok(LmResult { pose, shape, residual: cost, iterations, converged: cost <= cfg.cost_tolerance, cost_history: history })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Per-coordinate Gaussian noise (m).
    pub noise_sigma: f64,
    /// Probability that a joint is hidden.
    pub occlusion_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.01, occlusion_prob: 0.3 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { noise_sigma: 0.0, occlusion_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || !(0.0..1.0).contains(&self.occlusion_prob) {
            return Err(Error::Config(format!("augmentation {self:?}")));
        }
        Ok(())
    }
}

/// Gaussian noise on every coordinate, then independent joint dropout.
pub fn augment_joints(j: &JointSet, cfg: &AugmentConfig, seed: u64) -> Result<JointSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = *j;
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma checked");
        for p in out.joints.iter_mut() {
            for c in 0..3 {
                p[c] += normal.sample(&mut rng);
            }
        }
    }
    for v in out.visible.iter_mut() {
        if rng.gen::<f64>() < cfg.occlusion_prob {
            *v = false;
        }
    }
    Ok(out.with_invisible_zeroed())
}

/// Synthetic mocap: sampled poses and shapes with their joints.
#[derive(Debug, Clone, PartialEq)]
pub struct MocapSet {
    pub poses: Vec<PoseParams>,
    pub shapes: Vec<ShapeParams>,
    pub joints: Vec<JointSet>,
}

impl MocapSet {
    pub fn synthesize(model: &BodyModel, count: usize, seed: u64, limits: &PoseLimits, shape_sigma: f64) -> Result<Self> {
        let mut set =
            Self { poses: Vec::with_capacity(count), shapes: Vec::with_capacity(count), joints: Vec::with_capacity(count) };
        for i in 0..count as u64 {
            let pose = sample_pose(derive_seed(seed, 2 * i), limits)?;
            let shape = sample_shape(derive_seed(seed, 2 * i + 1), shape_sigma);
            set.joints.push(JointSet::all_visible(model.posed_lsp_joints(&pose, &shape)));
            set.poses.push(pose);
            set.shapes.push(shape);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            poses: self.poses[range.clone()].to_vec(),
            shapes: self.shapes[range.clone()].to_vec(),
            joints: self.joints[range].to_vec(),
        }
    }
}

/// Relative weights of the IK objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkLossWeights {
    pub theta: f64,
    pub beta: f64,
    pub ji: f64,
    pub vi: f64,
}

impl Default for IkLossWeights {
    fn default() -> Self {
        Self { theta: 1.0, beta: 1.0, ji: 1.0, vi: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub weights: IkLossWeights,
    /// Smallest accepted dataset.
    pub min_samples: usize,
    /// Worker threads for the skinning part of the objective (0: all cores).
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            augment: AugmentConfig::default(),
            weights: IkLossWeights::default(),
            min_samples: 1000,
            threads: 0,
        }
    }
}

/// Mean training losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub losses: IkLosses,
}

impl EpochLosses {
    pub fn total(&self) -> f64 {
        self.losses.total()
    }
}

pub fn curve_to_csv(curve: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,l_ji,l_theta,l_beta,l_vi,l_ik\n");
    for e in curve {
        let l = &e.losses;
        out.push_str(&format!("{},{:.9},{:.9},{:.9},{:.9},{:.9}\n", e.epoch, l.ji, l.theta, l.beta, l.vi, l.total()));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub nets: IkNets,
    pub curve: Vec<EpochLosses>,
}

/// One batch: inputs, targets and their gradients, all in network layout.
struct BatchResult {
    losses: IkLosses,
    inpaint_grads: Vec<f64>,
    gik_grads: Vec<f64>,
    inpaint_cache: crate::nn::ForwardCache,
    gik_cache: crate::nn::ForwardCache,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-sample vertex term: `mean |skin(pred) - skin(gt)|` and its gradient on the raw outputs.
fn vertex_term(model: &BodyModel, pred_row: &[f64], pose: &PoseParams, shape: &ShapeParams) -> Result<(f64, Vec<f64>)> {
    let n = model.num_vertices();
    let theta: [Vec3; NUM_KIN_JOINTS] =
        std::array::from_fn(|k| Vec3::new(pred_row[3 * k], pred_row[3 * k + 1], pred_row[3 * k + 2]));
    let raw_beta: [f64; NUM_BETAS] = std::array::from_fn(|b| pred_row[NUM_KIN_JOINTS * 3 + b]);
    if theta.iter().any(|t| !t.iter().all(|x| x.is_finite())) || raw_beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("network output".into()));
    }
    let pred_shape = ShapeParams::clamped(raw_beta);
    let (pred, cache) = model.skin_with_cache(&PoseParams::raw(theta), &pred_shape);
    let gt = model.skin(pose, shape);
    let scale = 1.0 / (3 * n) as f64;
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(n);
    for (p, q) in pred.vertices.iter().zip(&gt.vertices) {
        let d = p - q;
        loss += d.abs().sum();
        g.push(d.map(sign) * scale);
    }
    let (g_pose, g_beta) = model.skin_backward(&cache, &g)?;
    let mut grad = g_pose.to_flat();
    for b in 0..NUM_BETAS {
        let inside = raw_beta[b].abs() < crate::body_model::MAX_ABS_BETA;
        grad.push(if inside { g_beta[b] } else { 0.0 });
    }
    Ok((loss * scale, grad))
}

fn vertex_terms(
    model: &BodyModel,
    out: &Array2<f64>,
    poses: &[PoseParams],
    shapes: &[ShapeParams],
    threads: usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let rows: Vec<&[f64]> = out.rows().into_iter().map(|r| r.to_slice().expect("row-major")).collect();
    let threads = if threads == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { threads };
    let chunk = rows.len().div_ceil(threads.max(1)).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = rows
            .chunks(chunk)
            .zip(poses.chunks(chunk).zip(shapes.chunks(chunk)))
            .map(|(rs, (ps, ss))| {
                scope.spawn(move || {
                    rs.iter().zip(ps.iter().zip(ss)).map(|(r, (p, s))| vertex_term(model, r, p, s)).collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut all = Vec::with_capacity(rows.len());
        for h in handles {
            all.extend(h.join().expect("worker panicked")?);
        }
        Ok(all)
    })
}

#[allow(clippy::too_many_arguments)]
fn run_batch(
    model: &BodyModel,
    nets: &IkNets,
    inputs: &[JointSet],
    targets: &[JointSet],
    poses: &[PoseParams],
    shapes: &[ShapeParams],
    weights: &IkLossWeights,
    key: DropoutKey,
    threads: usize,
) -> Result<BatchResult> {
    let b = inputs.len();
    let x = Array2::from_shape_fn((b, INPAINT_INPUT_DIM), |(i, c)| inpaint_features(&inputs[i])[c]);
    let (delta, inpaint_cache) = nets.inpaint.forward(x.view(), key)?;
    let j_refine = &delta + &x.slice(s![.., ..JOINT_DIM]);
    let (out, gik_cache) = nets.gik.forward(j_refine.view(), DropoutKey { seed: derive_seed(key.seed, 7), ..key })?;

    let mut losses = IkLosses::default();
    let mut g_refine = Array2::zeros((b, JOINT_DIM));
    let ji_scale = 1.0 / (b * JOINT_DIM) as f64;
    for i in 0..b {
        for c in 0..JOINT_DIM {
            let d = j_refine[(i, c)] - targets[i].joints[c / 3][c % 3];
            losses.ji += d.abs() * ji_scale;
            g_refine[(i, c)] = weights.ji * sign(d) * ji_scale;
        }
    }
    let mut g_out = Array2::zeros((b, GIK_OUTPUT_DIM));
    let n_pose = NUM_KIN_JOINTS * 3;
    let th_scale = 1.0 / (b * n_pose) as f64;
    let be_scale = 1.0 / (b * NUM_BETAS) as f64;
    for i in 0..b {
        let gt_theta = poses[i].to_flat();
        for c in 0..n_pose {
            let d = out[(i, c)] - gt_theta[c];
            losses.theta += d.abs() * th_scale;
            g_out[(i, c)] = weights.theta * sign(d) * th_scale;
        }
        for c in 0..NUM_BETAS {
            let d = out[(i, n_pose + c)] - shapes[i].beta[c];
            losses.beta += d.abs() * be_scale;
            g_out[(i, n_pose + c)] = weights.beta * sign(d) * be_scale;
        }
    }
    for (i, (l, g)) in vertex_terms(model, &out, poses, shapes, threads)?.into_iter().enumerate() {
        losses.vi += l / b as f64;
        for (c, gc) in g.into_iter().enumerate() {
            g_out[(i, c)] += weights.vi * gc / b as f64;
        }
    }
    let (gik_grads, g_in) = nets.gik.backward(&gik_cache, g_out.view())?;
    g_refine += &g_in;
    let (inpaint_grads, _) = nets.inpaint.backward(&inpaint_cache, g_refine.view())?;
    Ok(BatchResult { losses, inpaint_grads, gik_grads, inpaint_cache, gik_cache })
}

/// Objective terms of the nets on a fixed batch, train-mode forward with the given dropout key.
pub fn ik_batch_losses(
    model: &BodyModel,
    nets: &IkNets,
    inputs: &[JointSet],
    data: &MocapSet,
    key: DropoutKey,
) -> Result<IkLosses> {
    let mut nets = nets.clone();
    nets.set_mode(Mode::Train);
    Ok(run_batch(model, &nets, inputs, &data.joints, &data.poses, &data.shapes, &IkLossWeights::default(), key, 1)?.losses)
}

const STREAM_SHUFFLE: u64 = 0x5348_5546;
const STREAM_AUGMENT: u64 = 0x4155_474d;
const STREAM_DROPOUT: u64 = 0x4452_4f50;

/// Joint training of the inpaint/refine net and GIK-Net on the IK objective.
pub fn train_ik_stage(model: &BodyModel, data: &MocapSet, cfg: &TrainConfig, specs: (MlpSpec, MlpSpec)) -> Result<TrainOutput> {
    if data.len() < cfg.min_samples.max(2) {
        return Err(Error::Config(format!("training needs at least {} samples, got {}", cfg.min_samples.max(2), data.len())));
    }
    if cfg.batch_size < 2 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config(format!("training config {cfg:?}")));
    }
    cfg.augment.validate()?;
    let mut nets = IkNets::new(specs.0, specs.1, cfg.seed)?;
    nets.set_mode(Mode::Train);
    let mut adam_inpaint = AdamState::new(nets.inpaint.num_params(), cfg.learning_rate);
    let mut adam_gik = AdamState::new(nets.gik.num_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ STREAM_SHUFFLE, epoch as u64)));
        let mut sums = IkLosses::default();
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let inputs = batch
                .iter()
                .map(|&i| {
                    let s = derive_seed(cfg.seed ^ STREAM_AUGMENT, (epoch * data.len() + i) as u64);
                    augment_joints(&data.joints[i], &cfg.augment, s)
                })
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<JointSet> = batch.iter().map(|&i| data.joints[i]).collect();
            let poses: Vec<PoseParams> = batch.iter().map(|&i| data.poses[i]).collect();
            let shapes: Vec<ShapeParams> = batch.iter().map(|&i| data.shapes[i]).collect();
            let key = DropoutKey { seed: cfg.seed ^ STREAM_DROPOUT, step };
            let res = run_batch(model, &nets, &inputs, &targets, &poses, &shapes, &cfg.weights, key, cfg.threads)?;
            let total = res.losses.total();
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, detail: format!("non-finite loss at step {step}: {:?}", res.losses) });
            }
            adam_inpaint
                .step(&mut nets.inpaint.params, &res.inpaint_grads)
                .map_err(|e| Error::Diverged { epoch, detail: e.to_string() })?;
            adam_gik.step(&mut nets.gik.params, &res.gik_grads).map_err(|e| Error::Diverged { epoch, detail: e.to_string() })?;
            nets.inpaint.update_running_stats(&res.inpaint_cache);
            nets.gik.update_running_stats(&res.gik_cache);
            nets.inpaint.steps += 1;
            nets.gik.steps += 1;
            step += 1;
            let w = batch.len() as f64;
            sums.ji += res.losses.ji * w;
            sums.theta += res.losses.theta * w;
            sums.beta += res.losses.beta * w;
            sums.vi += res.losses.vi * w;
            seen += batch.len();
        }
        let n = seen.max(1) as f64;
        let losses = IkLosses { theta: sums.theta / n, beta: sums.beta / n, ji: sums.ji / n, vi: sums.vi / n };
        log::info!("epoch {epoch}: ji {:.5} theta {:.5} beta {:.5} vi {:.5}", losses.ji, losses.theta, losses.beta, losses.vi);
        curve.push(EpochLosses { epoch, losses });
    }
    nets.set_mode(Mode::Eval);
    Ok(TrainOutput { nets, curve })
}

/// Joints of `skin(gik(j))` for each input.
pub fn gik_reposed_joints(model: &BodyModel, gik: &Mlp, inputs: &[JointSet]) -> Result<Vec<[Vec3; NUM_LSP_JOINTS]>> {
    Ok(gik_batch(gik, inputs)?.iter().map(|(p, s)| model.posed_lsp_joints(p, s)).collect())
}

/// Held-out comparison of the trained path against simple baselines (all in mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkEvaluation {
    /// `skin(GIK(J_gt))` joints against the targets.
    pub gik_mpjpe: f64,
    /// Rest-pose joints against the targets.
    pub tpose_mpjpe: f64,
    /// Inpaint net on augmented inputs.
    pub inpaint_mpjpe: f64,
    /// Augmented inputs with hidden joints left at zero.
    pub zero_fill_mpjpe: f64,
}

pub fn evaluate_ik(
    model: &BodyModel,
    nets: &IkNets,
    data: &MocapSet,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<IkEvaluation> {
    if data.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let n = data.len() as f64;
    let rest = model.posed_lsp_joints(&PoseParams::default(), &ShapeParams::default());
    let reposed = gik_reposed_joints(model, &nets.gik, &data.joints)?;
    let inputs = (0..data.len())
        .map(|i| augment_joints(&data.joints[i], augment, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let refined = inpaint_refine_batch(&nets.inpaint, &inputs)?;
    let mut e = IkEvaluation { gik_mpjpe: 0.0, tpose_mpjpe: 0.0, inpaint_mpjpe: 0.0, zero_fill_mpjpe: 0.0 };
    for i in 0..data.len() {
        let gt = &data.joints[i].joints;
        e.gik_mpjpe += mpjpe(&reposed[i], gt)? / n;
        e.tpose_mpjpe += mpjpe(&rest, gt)? / n;
        e.inpaint_mpjpe += mpjpe(&refined[i].joints, gt)? / n;
        e.zero_fill_mpjpe += mpjpe(&inputs[i].joints, gt)? / n;
    }
    Ok(e)
}
