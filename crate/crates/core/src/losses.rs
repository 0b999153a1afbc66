//! Training objectives and evaluation metrics.
//!
//! Every L1 term is a mean over the participating scalar elements, so loss
//! magnitudes do not depend on resolution or batch size. Metrics are in mm.

use crate::dense_maps::{Camera, ImageMaps};
use crate::grid::Grid;
use crate::uv_atlas::{FlipMap, UvAtlas};
use crate::{Error, Mat3, Result, Vec3};

pub const BCE_EPS: f64 = 1e-7;

/// Mean absolute difference over `mask`ed elements of `channels`-wide rows; 0 for an empty mask.
pub fn l1_masked(pred: &[f64], gt: &[f64], mask: &[bool], channels: usize) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != mask.len() * channels {
        return Err(Error::dims(format!("{} x {channels}", mask.len()), format!("{} / {}", pred.len(), gt.len())));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, m) in mask.iter().enumerate() {
        if *m {
            for c in 0..channels {
                sum += (pred[i * channels + c] - gt[i * channels + c]).abs();
            }
            n += channels;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

fn flat3(g: &Grid<Vec3>) -> Vec<f64> {
    g.as_slice().iter().flat_map(|v| [v.x, v.y, v.z]).collect()
}

/// [`l1_masked`] on 3-vector maps.
pub fn l1_masked_vec3(pred: &Grid<Vec3>, gt: &Grid<Vec3>, mask: &Grid<bool>) -> Result<f64> {
    if pred.shape() != gt.shape() || pred.shape() != mask.shape() {
        return Err(Error::dims(format!("{:?}", mask.shape()), format!("{:?} / {:?}", pred.shape(), gt.shape())));
    }
    l1_masked(&flat3(pred), &flat3(gt), mask.as_slice(), 3)
}

/// Mean absolute difference of two equally long vectors.
pub fn l1_mean(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::dims(gt.len(), pred.len()));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn l1_mean_vec3(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::dims(gt.len(), pred.len()));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs().sum()).sum::<f64>() / (3 * pred.len()) as f64)
}

/// Mean binary cross-entropy; probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_mask_loss(pred_prob: &[f64], gt_mask: &[bool]) -> Result<f64> {
    if pred_prob.len() != gt_mask.len() || pred_prob.is_empty() {
        return Err(Error::dims(gt_mask.len(), pred_prob.len()));
    }
    let total: f64 = pred_prob
        .iter()
        .zip(gt_mask)
        .map(|(p, y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if *y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / pred_prob.len() as f64)
}

/// Mean of `| |d(t)| - |d(flip t)| |` over texels valid at both ends.
pub fn loss_dismag(uv_d: &Grid<Vec3>, flip: &FlipMap, valid: &Grid<bool>) -> Result<f64> {
    if uv_d.shape() != valid.shape() || uv_d.shape() != flip.flip.shape() {
        return Err(Error::dims(format!("{:?}", uv_d.shape()), format!("{:?} / {:?}", valid.shape(), flip.flip.shape())));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (r, c, v) in valid.iter_cells() {
        if !*v {
            continue;
        }
        if let Some((fr, fc)) = flip.get(r, c) {
            if *valid.get(fr, fc) {
                sum += (uv_d.get(r, c).norm() - uv_d.get(fr, fc).norm()).abs();
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

pub fn loss_j3d(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    l1_mean_vec3(pred, gt)
}

/// Project `pred_j3d` with `camera`, then mean L1 against 2D targets.
pub fn loss_j2d(pred_j3d: &[Vec3], gt_j2d: &[[f64; 2]], camera: &Camera) -> Result<f64> {
    camera.validate()?;
    if pred_j3d.len() != gt_j2d.len() || gt_j2d.is_empty() {
        return Err(Error::dims(gt_j2d.len(), pred_j3d.len()));
    }
    let sum: f64 = pred_j3d
        .iter()
        .zip(gt_j2d)
        .map(|(p, g)| {
            let q = camera.project(p);
            (q[0] - g[0]).abs() + (q[1] - g[1]).abs()
        })
        .sum();
    Ok(sum / (2 * gt_j2d.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyLoss {
    pub value: f64,
    /// No foreground pixel contributed.
    pub empty: bool,
}

/// Reproject the predicted UV location map through the image-space IUV correspondence.
///
/// Each foreground pixel samples `pred_location` at its UV, projects the sample, and is
/// penalised by its L1 distance (mean over x and y) to its own pixel centre.
pub fn loss_consistency(
    pred_location: &Grid<Vec3>,
    pred_valid: &Grid<bool>,
    atlas: &UvAtlas,
    camera: &Camera,
    gt: &ImageMaps,
) -> Result<ConsistencyLoss> {
    camera.validate()?;
    if pred_location.shape() != atlas.shape() || pred_valid.shape() != atlas.shape() {
        return Err(Error::dims(format!("{:?}", atlas.shape()), format!("{:?}", pred_location.shape())));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (r, c, m) in gt.mask.iter_cells() {
        if !*m {
            continue;
        }
        let Some(p) = atlas.sample_bilinear(pred_location, pred_valid, *gt.uv.get(r, c)) else { continue };
        let q = camera.project(&p);
        sum += (q[0] - (c as f64 + 0.5)).abs() + (q[1] - (r as f64 + 0.5)).abs();
        n += 2;
    }
    if n == 0 {
        log::warn!("consistency loss over an empty foreground");
        return Ok(ConsistencyLoss { value: 0.0, empty: true });
    }
    Ok(ConsistencyLoss { value: sum / n as f64, empty: false })
}

/// Dense-map prediction terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DmpLosses {
    pub m_ib: f64,
    pub m_iuv: f64,
    pub m_l: f64,
    pub m_j: f64,
    pub m_d: f64,
}

impl DmpLosses {
    pub fn m_i(&self) -> f64 {
        self.m_ib + self.m_iuv
    }

    pub fn total(&self) -> f64 {
        self.m_i() + self.m_l + self.m_j + self.m_d
    }
}

/// IK stage terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IkLosses {
    pub theta: f64,
    pub beta: f64,
    pub ji: f64,
    pub vi: f64,
}

impl IkLosses {
    pub fn total(&self) -> f64 {
        self.theta + self.beta + self.ji + self.vi
    }
}

/// UV inpainting stage terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UviLosses {
    pub dismag: f64,
    pub j2d: f64,
    pub j3d: f64,
    pub map: f64,
    pub con: f64,
}

impl UviLosses {
    pub fn total(&self) -> f64 {
        self.dismag + self.j2d + self.j3d + self.map + self.con
    }
}

/// All named terms of the full objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub dmp: DmpLosses,
    pub ik: IkLosses,
    pub uvi: UviLosses,
}

impl LossBreakdown {
    pub fn all(&self) -> f64 {
        self.dmp.total() + self.ik.total() + self.uvi.total()
    }

    /// `(name, value)` for every term followed by the composites.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let (d, i, u) = (&self.dmp, &self.ik, &self.uvi);
        vec![
            ("m_ib", d.m_ib),
            ("m_iuv", d.m_iuv),
            ("m_l", d.m_l),
            ("m_j", d.m_j),
            ("m_d", d.m_d),
            ("theta", i.theta),
            ("beta", i.beta),
            ("ji", i.ji),
            ("vi", i.vi),
            ("map", u.map),
            ("j3d", u.j3d),
            ("j2d", u.j2d),
            ("dismag", u.dismag),
            ("con", u.con),
            ("dmp", d.total()),
            ("ik", i.total()),
            ("uvi", u.total()),
            ("all", self.all()),
        ]
    }
}

/// Dense-map terms of a prediction against ground truth. Regression terms use the
/// ground-truth foreground.
pub fn dmp_losses(pred: &ImageMaps, pred_mask_prob: &[f64], gt: &ImageMaps) -> Result<DmpLosses> {
    if pred.shape() != gt.shape() {
        return Err(Error::dims(format!("{:?}", gt.shape()), format!("{:?}", pred.shape())));
    }
    let uv = |m: &ImageMaps| m.uv.as_slice().iter().flat_map(|q| *q).collect::<Vec<f64>>();
    Ok(DmpLosses {
        m_ib: bce_mask_loss(pred_mask_prob, gt.mask.as_slice())?,
        m_iuv: l1_masked(&uv(pred), &uv(gt), gt.mask.as_slice(), 2)?,
        m_l: l1_masked_vec3(&pred.location, &gt.location, &gt.mask)?,
        m_j: l1_masked_vec3(&pred.joint, &gt.joint, &gt.mask)?,
        m_d: l1_masked_vec3(&pred.displacement, &gt.displacement, &gt.mask)?,
    })
}

fn check_counts(pred: &[Vec3], gt: &[Vec3]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::dims(gt.len(), pred.len()));
    }
    Ok(())
}

/// Mean per-joint position error in millimetres.
pub fn mpjpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_counts(pred, gt)?;
    Ok(1000.0 * pred.iter().zip(gt).map(|(a, b)| (a - b).norm()).sum::<f64>() / pred.len() as f64)
}

/// Mean per-vertex error in millimetres.
pub fn mpve(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    mpjpe(pred, gt)
}

/// Singular value decomposition of a 3x3 matrix by one-sided Jacobi rotations.
///
/// Returns `(u, sigma, v)` with `a = u * diag(sigma) * v^T`, `sigma` descending and
/// `u`, `v` orthogonal.
pub fn svd3(a: &Mat3) -> (Mat3, Vec3, Mat3) {
    const TOL: f64 = 1e-12;
    let mut w = *a;
    let mut v = Mat3::identity();
    for _sweep in 0..60 {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = w.column(p).norm_squared();
            let beta = w.column(q).norm_squared();
            let gamma = w.column(p).dot(&w.column(q));
            if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for m in [&mut w, &mut v] {
                for row in 0..3 {
                    let (x, y) = (m[(row, p)], m[(row, q)]);
                    m[(row, p)] = c * x - s * y;
                    m[(row, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order = [0, 1, 2];
    let norms = [w.column(0).norm(), w.column(1).norm(), w.column(2).norm()];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = Mat3::zeros();
    let mut v_sorted = Mat3::zeros();
    let mut sigma = Vec3::zeros();
    let scale = norms[order[0]].max(f64::MIN_POSITIVE);
    for (k, &i) in order.iter().enumerate() {
        sigma[k] = norms[i];
        v_sorted.set_column(k, &v.column(i));
        if norms[i] > 1e-14 * scale {
            u.set_column(k, &(w.column(i) / norms[i]));
        }
    }
    // complete u for rank-deficient input
    for k in 0..3 {
        if sigma[k] <= 1e-14 * scale {
            let mut cand = Vec3::zeros();
            if k == 2 {
                cand = u.column(0).cross(&u.column(1));
            } else {
                for e in 0..3 {
                    let mut x = Vec3::zeros();
                    x[e] = 1.0;
                    for j in 0..k {
                        x -= u.column(j) * u.column(j).dot(&x);
                    }
                    if x.norm() > cand.norm() {
                        cand = x;
                    }
                }
            }
            u.set_column(k, &cand.normalize());
        }
    }
    (u, sigma, v_sorted)
}

/// Similarity transform `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Mat3,
    pub scale: f64,
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x * self.scale + self.translation
    }
}

/// Least-squares similarity aligning `source` onto `target`.
pub fn procrustes(source: &[Vec3], target: &[Vec3]) -> Result<Similarity> {
    check_counts(source, target)?;
    let n = source.len() as f64;
    let mu_x: Vec3 = source.iter().sum::<Vec3>() / n;
    let mu_y: Vec3 = target.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    let mut spread = Mat3::zeros();
    let mut var_x = 0.0;
    for (x, y) in source.iter().zip(target) {
        let (xc, yc) = (x - mu_x, y - mu_y);
        cov += yc * xc.transpose();
        spread += xc * xc.transpose();
        var_x += xc.norm_squared();
    }
    cov /= n;
    var_x /= n;
    let (_, spread_sigma, _) = svd3(&spread);
    if source.len() < 3 || var_x <= 1e-300 || spread_sigma[1] <= 1e-12 * spread_sigma[0] {
        return Err(Error::Degenerate("procrustes needs at least three non-collinear points".into()));
    }
    let (u, d, v) = svd3(&cov);
    let mut s = Vec3::new(1.0, 1.0, 1.0);
    if (u * v.transpose()).determinant() < 0.0 {
        s[2] = -1.0;
    }
    let rotation = u * Mat3::from_diagonal(&s) * v.transpose();
    let scale = d.dot(&s) / var_x;
    let translation = mu_y - rotation * mu_x * scale;
    Ok(Similarity { rotation, scale, translation })
}

/// MPJPE after optimal similarity alignment of `pred` onto `gt`.
pub fn pa_mpjpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    let sim = procrustes(pred, gt)?;
    let aligned: Vec<Vec3> = pred.iter().map(|p| sim.apply(p)).collect();
    mpjpe(&aligned, gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::rodrigues;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s))
    }

    fn rand_joints(rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        (0..14).map(|_| rand_vec(rng, 0.8)).collect()
    }

    #[test]
    fn l1_examples() {
        let gt = vec![0.1, -0.4, 2.0, 3.0];
        let mask = vec![true, false];
        assert_eq!(l1_masked(&gt, &gt, &mask, 2).unwrap(), 0.0);
        let shifted: Vec<f64> = gt.iter().map(|x| x + 0.5).collect();
        assert_relative_eq!(l1_masked(&shifted, &gt, &[true, true], 2).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(l1_masked(&shifted, &gt, &[false, false], 2).unwrap(), 0.0);
        assert!(l1_masked(&shifted, &gt, &[true], 2).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(1..40);
            let a: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let (mut s, mut k) = (0.0, 0);
            for i in 0..n {
                if m[i] {
                    for c in 0..3 {
                        s += (a[i * 3 + c] - b[i * 3 + c]).abs();
                        k += 1;
                    }
                }
            }
            let expect = if k == 0 { 0.0 } else { s / k as f64 };
            assert_relative_eq!(l1_masked(&a, &b, &m, 3).unwrap(), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn bce_examples() {
        let gt = [true, false, true, false];
        let exact: Vec<f64> = gt.iter().map(|y| if *y { 1.0 } else { 0.0 }).collect();
        assert!(bce_mask_loss(&exact, &gt).unwrap() <= 1e-6);
        assert_relative_eq!(bce_mask_loss(&[0.5; 4], &gt).unwrap(), std::f64::consts::LN_2, epsilon = 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<bool> = (0..100).map(|_| rng.gen_bool(0.4)).collect();
        let mut s = 0.0;
        for i in 0..100 {
            let q = p[i].clamp(1e-7, 1.0 - 1e-7);
            s += if y[i] { -q.ln() } else { -(1.0 - q).ln() };
        }
        assert_relative_eq!(bce_mask_loss(&p, &y).unwrap(), s / 100.0, epsilon = 1e-12);
    }

    fn toy_flip(h: usize, w: usize) -> (FlipMap, Grid<bool>) {
        let flip = FlipMap { flip: Grid::from_vec(h, w, (0..h * w).map(|i| Some((i / w, w - 1 - i % w))).collect()) };
        (flip, Grid::new(h, w, true))
    }

    #[test]
    fn dismag_examples() {
        let (h, w) = (4, 6);
        let (flip, valid) = toy_flip(h, w);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // equal magnitudes, different directions on the mirror side
        let mut d = Grid::new(h, w, Vec3::zeros());
        for r in 0..h {
            for c in 0..w / 2 {
                let v = rand_vec(&mut rng, 1.0);
                d.set(r, c, v);
                d.set(r, w - 1 - c, Vec3::new(v.norm(), 0.0, 0.0));
            }
        }
        assert!(loss_dismag(&d, &flip, &valid).unwrap() < 1e-12);
        // one side doubled: every texel contributes the unscaled magnitude
        let mut scaled = d.clone();
        let mut expect = 0.0;
        for r in 0..h {
            for c in 0..w / 2 {
                scaled.set(r, c, d.get(r, c) * 2.0);
                expect += 2.0 * d.get(r, c).norm();
            }
        }
        expect /= (h * w) as f64;
        assert_relative_eq!(loss_dismag(&scaled, &flip, &valid).unwrap(), expect, epsilon = 1e-12);
        // invariant to swapping with the flipped map
        let flipped = Grid::from_vec(h, w, (0..h * w).map(|i| *scaled.get(i / w, w - 1 - i % w)).collect());
        assert_relative_eq!(
            loss_dismag(&flipped, &flip, &valid).unwrap(),
            loss_dismag(&scaled, &flip, &valid).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn joint_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = rand_joints(&mut rng);
        assert_eq!(loss_j3d(&gt, &gt).unwrap(), 0.0);
        let cam = Camera::new(1.0, [0.0, 0.0]).unwrap();
        let gt2: Vec<[f64; 2]> = gt.iter().map(|p| cam.project(p)).collect();
        assert_eq!(loss_j2d(&gt, &gt2, &cam).unwrap(), 0.0);
        let shifted: Vec<Vec3> = gt.iter().map(|p| p + Vec3::new(1.0, 0.0, 0.0)).collect();
        assert_relative_eq!(loss_j2d(&shifted, &gt2, &cam).unwrap(), 0.5, epsilon = 1e-12);
        for _ in 0..20 {
            let pred = rand_joints(&mut rng);
            let cam = Camera::new(rng.gen_range(10.0..200.0), [rng.gen_range(0.0..100.0), 3.0]).unwrap();
            let (mut s2, mut s3) = (0.0, 0.0);
            for k in 0..14 {
                s2 += (cam.scale * pred[k].x + cam.offset[0] - gt2[k][0]).abs();
                s2 += (cam.scale * pred[k].y + cam.offset[1] - gt2[k][1]).abs();
                for a in 0..3 {
                    s3 += (pred[k][a] - gt[k][a]).abs();
                }
            }
            assert_relative_eq!(loss_j2d(&pred, &gt2, &cam).unwrap(), s2 / 28.0, epsilon = 1e-9);
            assert_relative_eq!(loss_j3d(&pred, &gt).unwrap(), s3 / 42.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mpjpe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = rand_joints(&mut rng);
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
        let off = rand_vec(&mut rng, 1.0).normalize() * 0.005;
        let moved: Vec<Vec3> = gt.iter().map(|p| p + off).collect();
        assert_relative_eq!(mpjpe(&moved, &gt).unwrap(), 5.0, epsilon = 1e-9);
        let pred = rand_joints(&mut rng);
        let mut s = 0.0;
        for k in 0..14 {
            let d = pred[k] - gt[k];
            s += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        }
        assert_relative_eq!(mpjpe(&pred, &gt).unwrap(), 1000.0 * s / 14.0, epsilon = 1e-9);
        assert!(mpjpe(&pred[..3], &gt).is_err());
    }

    #[test]
    fn svd3_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..500 {
            let mut a = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            if i % 5 == 0 {
                // rank two
                let c = a.column(0) * 0.3 - a.column(1) * 2.0;
                a.set_column(2, &c);
            }
            let (u, s, v) = svd3(&a);
            assert_relative_eq!(u * Mat3::from_diagonal(&s) * v.transpose(), a, epsilon = 1e-10);
            assert_relative_eq!(u.transpose() * u, Mat3::identity(), epsilon = 1e-10);
            assert_relative_eq!(v.transpose() * v, Mat3::identity(), epsilon = 1e-10);
            assert!(s[0] >= s[1] && s[1] >= s[2] && s[2] >= 0.0);
            let reference = a.svd(false, false).singular_values;
            let mut r: Vec<f64> = reference.iter().copied().collect();
            r.sort_by(|x, y| y.total_cmp(x));
            for k in 0..3 {
                assert_relative_eq!(s[k], r[k], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn procrustes_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let gt = rand_joints(&mut rng);
            let r = rodrigues(&rand_vec(&mut rng, 3.0));
            let s = rng.gen_range(0.2..5.0);
            let t = rand_vec(&mut rng, 2.0);
            let pred: Vec<Vec3> = gt.iter().map(|p| r * p * s + t).collect();
            assert!(pa_mpjpe(&pred, &gt).unwrap() < 1e-6);
        }
        let gt = rand_joints(&mut rng);
        assert!(pa_mpjpe(&gt, &gt).unwrap() < 1e-9);
        for _ in 0..1000 {
            let gt = rand_joints(&mut rng);
            let pred: Vec<Vec3> = gt.iter().map(|p| p + rand_vec(&mut rng, 0.2)).collect();
            assert!(pa_mpjpe(&pred, &gt).unwrap() <= mpjpe(&pred, &gt).unwrap() + 1e-9);
        }
    }

    #[test]
    fn procrustes_handles_reflection_and_degeneracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = rand_joints(&mut rng);
        let mirrored: Vec<Vec3> = gt.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let sim = procrustes(&mirrored, &gt).unwrap();
        assert_relative_eq!(sim.rotation.determinant(), 1.0, epsilon = 1e-9);
        let line: Vec<Vec3> = (0..14).map(|k| Vec3::new(k as f64, 2.0 * k as f64, 0.0)).collect();
        assert!(matches!(pa_mpjpe(&line, &gt), Err(Error::Degenerate(_))));
        // invariance to similarity transforms of the prediction
        let pred: Vec<Vec3> = gt.iter().map(|p| p + rand_vec(&mut rng, 0.1)).collect();
        let r = rodrigues(&Vec3::new(0.3, -1.0, 0.4));
        let moved: Vec<Vec3> = pred.iter().map(|p| r * p * 1.7 + Vec3::new(3.0, 0.0, -1.0)).collect();
        assert_relative_eq!(pa_mpjpe(&moved, &gt).unwrap(), pa_mpjpe(&pred, &gt).unwrap(), epsilon = 1e-7);
    }

    #[test]
    fn composites_are_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = || rng.gen_range(0.0..3.0);
        let b = LossBreakdown {
            dmp: DmpLosses { m_ib: x(), m_iuv: x(), m_l: x(), m_j: x(), m_d: x() },
            ik: IkLosses { theta: x(), beta: x(), ji: x(), vi: x() },
            uvi: UviLosses { dismag: x(), j2d: x(), j3d: x(), map: x(), con: x() },
        };
        let named = b.named();
        let terms: f64 = named[..14].iter().map(|(_, v)| v).sum();
        assert_relative_eq!(b.all(), terms, epsilon = 1e-9);
        assert_relative_eq!(b.dmp.total(), named[..5].iter().map(|(_, v)| v).sum::<f64>(), epsilon = 1e-12);
    }
}
