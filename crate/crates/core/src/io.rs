//! Persistence: the `UVB1` tensor container, OBJ export, PNG images and the
//! key=value run configuration.
//!
//! Container layout, all little-endian:
//!
//! ```text
//! "UVB1" | element type (u8) | rank (u8) | dims (u64 x rank) | payload | CRC32 (u32)
//! ```
//!
//! The CRC covers every byte before it. Element types: 1 = f32, 2 = f64, 3 = u8, 4 = bool.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::body_model::{JointSet, Mesh, ModelConfig, PoseLimits, PoseParams, ShapeParams};
use crate::dense_maps::{Camera, ImageMaps, OcclusionConfig, Rect, UvMaps};
use crate::grid::Grid;
use crate::ik::{AugmentConfig, IkLossWeights, IkNets, LmConfig, TrainConfig};
use crate::nn::{Mlp, MlpSpec, Mode};
use crate::uv_fusion::{FusedUvMaps, Source};
use crate::{Error, Result, Vec3, NUM_BETAS, NUM_KIN_JOINTS, NUM_LSP_JOINTS};

pub const MAGIC: &[u8; 4] = b"UVB1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
            TensorData::U8(_) => 3,
            TensorData::Bool(_) => 4,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::F64(_) => "f64",
            TensorData::U8(_) => "u8",
            TensorData::Bool(_) => "bool",
        }
    }
}

fn element_size(code: u8) -> Result<usize> {
    match code {
        1 => Ok(4),
        2 => Ok(8),
        3 | 4 => Ok(1),
        other => Err(Error::ElementType(other)),
    }
}

/// Row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() || dims.len() > u8::MAX as usize {
            return Err(Error::dims(format!("{dims:?}"), format!("{} elements", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, TensorData::F64(data))
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            other => Err(Error::dims("f64 tensor", other.type_name())),
        }
    }

    fn expect_dims(&self, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::dims(format!("{dims:?}"), format!("{:?}", self.dims)));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.dims.len() + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.push(self.data.code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::Bool(v) => out.extend(v.iter().map(|b| *b as u8)),
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 6 {
            return Err(Error::Truncated("header".into()));
        }
        let code = bytes[4];
        let size = element_size(code)?;
        let rank = bytes[5] as usize;
        let header = 6 + 8 * rank;
        if bytes.len() < header {
            return Err(Error::Truncated(format!("{} bytes, header needs {header}", bytes.len())));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut count: u64 = 1;
        for r in 0..rank {
            let d = u64::from_le_bytes(bytes[6 + 8 * r..14 + 8 * r].try_into().expect("8 bytes"));
            count = count.checked_mul(d).ok_or_else(|| Error::Truncated("dims overflow".into()))?;
            dims.push(d as usize);
        }
        let payload = count
            .checked_mul(size as u64)
            .filter(|p| *p <= (bytes.len() - header) as u64)
            .ok_or_else(|| Error::Truncated(format!("payload of {count} elements does not fit in {} bytes", bytes.len())))?
            as usize;
        let expected = header + payload + 4;
        if bytes.len() != expected {
            return Err(Error::Truncated(format!("{} bytes, layout needs {expected}", bytes.len())));
        }
        let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..expected - 4]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let body = &bytes[header..header + payload];
        let data = match code {
            1 => TensorData::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect()),
            2 => TensorData::F64(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect()),
            3 => TensorData::U8(body.to_vec()),
            _ => TensorData::Bool(
                body.iter()
                    .map(|b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        _ => Err(Error::ElementType(*b)),
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Tensor::new(dims, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn vec3_from(s: &[f64]) -> Vec3 {
    Vec3::new(s[0], s[1], s[2])
}

const UV_CHANNELS: usize = 10;

/// `[H, W, 10]`: valid, joint, location, displacement.
pub fn uv_maps_to_tensor(maps: &UvMaps) -> Tensor {
    let (h, w) = maps.shape();
    let mut data = Vec::with_capacity(h * w * UV_CHANNELS);
    for t in 0..h * w {
        data.push(maps.valid.as_slice()[t] as u8 as f64);
        for g in [&maps.joint, &maps.location, &maps.displacement] {
            data.extend_from_slice(g.as_slice()[t].as_slice());
        }
    }
    Tensor::f64(vec![h, w, UV_CHANNELS], data).expect("consistent")
}

fn grid_dims(t: &Tensor, channels: usize) -> Result<(usize, usize)> {
    if t.dims.len() != 3 || t.dims[2] != channels {
        return Err(Error::dims(format!("[H, W, {channels}]"), format!("{:?}", t.dims)));
    }
    Ok((t.dims[0], t.dims[1]))
}

pub fn uv_maps_from_tensor(t: &Tensor) -> Result<UvMaps> {
    let (h, w) = grid_dims(t, UV_CHANNELS)?;
    let d = t.as_f64()?;
    let mut maps = UvMaps::empty(h, w);
    for (i, px) in d.chunks_exact(UV_CHANNELS).enumerate() {
        maps.valid.as_mut_slice()[i] = px[0] != 0.0;
        maps.joint.as_mut_slice()[i] = vec3_from(&px[1..4]);
        maps.location.as_mut_slice()[i] = vec3_from(&px[4..7]);
        maps.displacement.as_mut_slice()[i] = vec3_from(&px[7..10]);
    }
    Ok(maps)
}

const IMAGE_CHANNELS: usize = 14;

/// `[H, W, 14]`: mask, uv, joint, location, displacement, part (-1 none), face (-1 none).
pub fn image_maps_to_tensor(maps: &ImageMaps) -> Tensor {
    let (h, w) = maps.shape();
    let mut data = Vec::with_capacity(h * w * IMAGE_CHANNELS);
    for t in 0..h * w {
        data.push(maps.mask.as_slice()[t] as u8 as f64);
        data.extend_from_slice(&maps.uv.as_slice()[t]);
        for g in [&maps.joint, &maps.location, &maps.displacement] {
            data.extend_from_slice(g.as_slice()[t].as_slice());
        }
        data.push(maps.part.as_slice()[t].map_or(-1.0, |p| p as f64));
        data.push(maps.face.as_slice()[t].map_or(-1.0, |f| f as f64));
    }
    Tensor::f64(vec![h, w, IMAGE_CHANNELS], data).expect("consistent")
}

pub fn image_maps_from_tensor(t: &Tensor) -> Result<ImageMaps> {
    let (h, w) = grid_dims(t, IMAGE_CHANNELS)?;
    let d = t.as_f64()?;
    let mut maps = ImageMaps::empty(h, w);
    for (i, px) in d.chunks_exact(IMAGE_CHANNELS).enumerate() {
        maps.mask.as_mut_slice()[i] = px[0] != 0.0;
        maps.uv.as_mut_slice()[i] = [px[1], px[2]];
        maps.joint.as_mut_slice()[i] = vec3_from(&px[3..6]);
        maps.location.as_mut_slice()[i] = vec3_from(&px[6..9]);
        maps.displacement.as_mut_slice()[i] = vec3_from(&px[9..12]);
        maps.part.as_mut_slice()[i] = (px[12] >= 0.0).then_some(px[12] as u8);
        maps.face.as_mut_slice()[i] = (px[13] >= 0.0).then_some(px[13] as usize);
    }
    Ok(maps)
}

/// `[H, W, 11]`: the UV map channels followed by the source code.
pub fn fused_to_tensor(fused: &FusedUvMaps) -> Tensor {
    let base = uv_maps_to_tensor(&fused.maps);
    let (h, w) = fused.shape();
    let d = base.as_f64().expect("f64");
    let mut data = Vec::with_capacity(h * w * (UV_CHANNELS + 1));
    for (t, px) in d.chunks_exact(UV_CHANNELS).enumerate() {
        data.extend_from_slice(px);
        data.push(fused.source.as_slice()[t].map_or(0.0, |s| s.code() as f64));
    }
    Tensor::f64(vec![h, w, UV_CHANNELS + 1], data).expect("consistent")
}

pub fn fused_from_tensor(t: &Tensor) -> Result<FusedUvMaps> {
    let (h, w) = grid_dims(t, UV_CHANNELS + 1)?;
    let d = t.as_f64()?;
    let base: Vec<f64> = d.chunks_exact(UV_CHANNELS + 1).flat_map(|px| px[..UV_CHANNELS].iter().copied()).collect();
    let maps = uv_maps_from_tensor(&Tensor::f64(vec![h, w, UV_CHANNELS], base)?)?;
    let source = d
        .chunks_exact(UV_CHANNELS + 1)
        .map(|px| match px[UV_CHANNELS] as u8 {
            0 => Ok(None),
            c => Source::from_code(c).map(Some).ok_or_else(|| Error::InvalidParams(format!("source code {c}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FusedUvMaps { maps, source: Grid::from_vec(h, w, source) })
}

/// `[14, 4]`: x, y, z, visible.
pub fn joints_to_tensor(j: &JointSet) -> Tensor {
    let data =
        (0..NUM_LSP_JOINTS).flat_map(|k| [j.joints[k].x, j.joints[k].y, j.joints[k].z, j.visible[k] as u8 as f64]).collect();
    Tensor::f64(vec![NUM_LSP_JOINTS, 4], data).expect("consistent")
}

pub fn joints_from_tensor(t: &Tensor) -> Result<JointSet> {
    t.expect_dims(&[NUM_LSP_JOINTS, 4])?;
    let d = t.as_f64()?;
    Ok(JointSet {
        joints: std::array::from_fn(|k| vec3_from(&d[4 * k..])),
        visible: std::array::from_fn(|k| d[4 * k + 3] != 0.0),
    })
}

pub fn pose_to_tensor(p: &PoseParams) -> Tensor {
    Tensor::f64(vec![NUM_KIN_JOINTS, 3], p.to_flat()).expect("consistent")
}

pub fn pose_from_tensor(t: &Tensor) -> Result<PoseParams> {
    t.expect_dims(&[NUM_KIN_JOINTS, 3])?;
    PoseParams::from_flat(t.as_f64()?)
}

pub fn shape_to_tensor(s: &ShapeParams) -> Tensor {
    Tensor::f64(vec![NUM_BETAS], s.beta.to_vec()).expect("consistent")
}

pub fn shape_from_tensor(t: &Tensor) -> Result<ShapeParams> {
    t.expect_dims(&[NUM_BETAS])?;
    ShapeParams::from_slice(t.as_f64()?)
}

/// `[3]`: scale, offset x, offset y.
pub fn camera_to_tensor(c: &Camera) -> Tensor {
    Tensor::f64(vec![3], vec![c.scale, c.offset[0], c.offset[1]]).expect("consistent")
}

pub fn camera_from_tensor(t: &Tensor) -> Result<Camera> {
    t.expect_dims(&[3])?;
    let d = t.as_f64()?;
    Camera::new(d[0], [d[1], d[2]])
}

pub fn points_to_tensor(points: &[Vec3]) -> Tensor {
    Tensor::f64(vec![points.len(), 3], points.iter().flat_map(|p| p.iter().copied()).collect()).expect("consistent")
}

pub fn points_from_tensor(t: &Tensor) -> Result<Vec<Vec3>> {
    if t.dims.len() != 2 || t.dims[1] != 3 {
        return Err(Error::dims("[N, 3]", format!("{:?}", t.dims)));
    }
    Ok(t.as_f64()?.chunks_exact(3).map(vec3_from).collect())
}

/// `[N, 4]`: row0, col0, row1, col1.
pub fn rects_to_tensor(rects: &[Rect]) -> Tensor {
    let data = rects.iter().flat_map(|r| [r.row0, r.col0, r.row1, r.col1].map(|x| x as f64)).collect();
    Tensor::f64(vec![rects.len(), 4], data).expect("consistent")
}

pub fn rects_from_tensor(t: &Tensor) -> Result<Vec<Rect>> {
    if t.dims.len() != 2 || t.dims[1] != 4 {
        return Err(Error::dims("[N, 4]", format!("{:?}", t.dims)));
    }
    Ok(t.as_f64()?
        .chunks_exact(4)
        .map(|c| Rect { row0: c[0] as usize, col0: c[1] as usize, row1: c[2] as usize, col1: c[3] as usize })
        .collect())
}

/// Writes `{name}_spec.uvb`, `{name}_params.uvb` and `{name}_running.uvb` into `dir`.
pub fn save_mlp(net: &Mlp, dir: &Path, name: &str) -> Result<()> {
    let s = &net.spec;
    let spec = vec![
        s.input_dim as f64,
        s.output_dim as f64,
        s.hidden_dim as f64,
        s.num_blocks as f64,
        s.dropout_rate,
        s.use_batchnorm as u8 as f64,
        net.steps as f64,
    ];
    Tensor::f64(vec![7], spec)?.save(dir.join(format!("{name}_spec.uvb")))?;
    Tensor::f64(vec![net.params.len()], net.params.clone())?.save(dir.join(format!("{name}_params.uvb")))?;
    let layers = net.running_mean.len();
    let running: Vec<f64> = net.running_mean.iter().chain(&net.running_var).flatten().copied().collect();
    Tensor::f64(vec![2, layers, s.hidden_dim], running)?.save(dir.join(format!("{name}_running.uvb")))
}

/// Inverse of [`save_mlp`]; the network comes back in eval mode.
pub fn load_mlp(dir: &Path, name: &str) -> Result<Mlp> {
    let spec = Tensor::load(dir.join(format!("{name}_spec.uvb")))?;
    spec.expect_dims(&[7])?;
    let v = spec.as_f64()?;
    let spec = MlpSpec {
        input_dim: v[0] as usize,
        output_dim: v[1] as usize,
        hidden_dim: v[2] as usize,
        num_blocks: v[3] as usize,
        dropout_rate: v[4],
        use_batchnorm: v[5] != 0.0,
    };
    let mut net = Mlp::new(spec, 0)?;
    net.steps = v[6] as u64;
    net.set_params(Tensor::load(dir.join(format!("{name}_params.uvb")))?.as_f64()?.to_vec())?;
    let running = Tensor::load(dir.join(format!("{name}_running.uvb")))?;
    running.expect_dims(&[2, net.running_mean.len(), spec.hidden_dim])?;
    let rows: Vec<Vec<f64>> = running.as_f64()?.chunks(spec.hidden_dim.max(1)).map(|c| c.to_vec()).collect();
    let (mean, var) = rows.split_at(net.running_mean.len());
    net.set_running_stats(mean.to_vec(), var.to_vec())?;
    net.set_mode(Mode::Eval);
    Ok(net)
}

pub fn save_nets(nets: &IkNets, dir: &Path) -> Result<()> {
    save_mlp(&nets.inpaint, dir, "inpaint")?;
    save_mlp(&nets.gik, dir, "gik")
}

pub fn load_nets(dir: &Path) -> Result<IkNets> {
    Ok(IkNets { inpaint: load_mlp(dir, "inpaint")?, gik: load_mlp(dir, "gik")? })
}

/// `v x y z` lines, then 1-based `f a b c` lines.
pub fn export_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 20);
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in mesh.faces.iter() {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    out
}

pub fn write_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    fs::write(path, export_obj(mesh)).map_err(|e| Error::io(path, e))
}

/// Fixed 16-colour palette; index 0 is black background.
pub const PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
];

fn png_encoder<'a>(path: &Path, w: usize, h: usize) -> Result<png::Encoder<'a, BufWriter<fs::File>>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_depth(png::BitDepth::Eight);
    Ok(enc)
}

/// 8-bit greyscale, foreground white.
pub fn write_mask_png(mask: &Grid<bool>, path: &Path) -> Result<()> {
    let (h, w) = mask.shape();
    let mut enc = png_encoder(path, w, h)?;
    enc.set_color(png::ColorType::Grayscale);
    let data: Vec<u8> = mask.as_slice().iter().map(|m| if *m { 255 } else { 0 }).collect();
    enc.write_header()?.write_image_data(&data)?;
    Ok(())
}

/// Indexed-colour PNG with [`PALETTE`]; labels are taken modulo 16.
pub fn write_indexed_png(labels: &Grid<u8>, path: &Path) -> Result<()> {
    let (h, w) = labels.shape();
    let mut enc = png_encoder(path, w, h)?;
    enc.set_color(png::ColorType::Indexed);
    enc.set_palette(PALETTE.concat());
    let data: Vec<u8> = labels.as_slice().iter().map(|l| l % 16).collect();
    enc.write_header()?.write_image_data(&data)?;
    Ok(())
}

/// Part labels shifted by one so background is palette index 0.
pub fn part_labels(parts: &Grid<Option<u8>>) -> Grid<u8> {
    parts.map(|p| p.map_or(0, |k| k + 1))
}

/// Every tunable of a run, stored as flat `key = value` text. `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub vertex_budget: usize,
    pub atlas_height: usize,
    pub atlas_width: usize,
    pub image_size: usize,
    pub camera_margin: f64,
    /// Multiplier on the default joint-angle ranges.
    pub pose_scale: f64,
    pub shape_sigma: f64,
    /// Gaussian noise (m) on rendered maps standing in for a dense-map predictor.
    pub dmp_noise_sigma: f64,
    pub occlusion_min_count: usize,
    pub occlusion_max_count: usize,
    pub occlusion_min_size: f64,
    pub occlusion_max_size: f64,
    pub aggregate_min_texels: usize,
    pub augment_noise_sigma: f64,
    pub augment_occlusion_prob: f64,
    /// Synthetic mocap samples added to the training poses of the data directory.
    pub mocap_samples: usize,
    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_learning_rate: f64,
    pub train_min_samples: usize,
    pub weight_theta: f64,
    pub weight_beta: f64,
    pub weight_ji: f64,
    pub weight_vi: f64,
    pub net_hidden_dim: usize,
    pub net_num_blocks: usize,
    pub net_dropout: f64,
    pub net_batchnorm: bool,
    pub lm_max_iterations: usize,
    pub lm_cost_tolerance: f64,
    pub lm_initial_damping: f64,
    pub lm_fd_step: f64,
    pub lm_optimize_shape: bool,
    pub band_width: usize,
    pub seed_data: u64,
    pub seed_mocap: u64,
    pub seed_train: u64,
    pub seed_pipeline: u64,
    /// Worker threads (0: all cores). Results do not depend on it.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let occ = OcclusionConfig::default();
        let aug = AugmentConfig::default();
        let train = TrainConfig::default();
        let lm = LmConfig::default();
        let (spec, _) = IkNets::default_specs();
        let model = ModelConfig::default();
        Self {
            vertex_budget: model.vertex_budget,
            atlas_height: crate::uv_atlas::DEFAULT_RESOLUTION,
            atlas_width: crate::uv_atlas::DEFAULT_RESOLUTION,
            image_size: crate::dense_maps::DEFAULT_IMAGE_SIZE,
            camera_margin: 0.1,
            pose_scale: 1.0,
            shape_sigma: 1.0,
            dmp_noise_sigma: 0.005,
            occlusion_min_count: occ.min_count,
            occlusion_max_count: occ.max_count,
            occlusion_min_size: occ.min_size,
            occlusion_max_size: occ.max_size,
            aggregate_min_texels: 1,
            augment_noise_sigma: aug.noise_sigma,
            augment_occlusion_prob: aug.occlusion_prob,
            mocap_samples: 0,
            train_epochs: train.epochs,
            train_batch_size: train.batch_size,
            train_learning_rate: train.learning_rate,
            train_min_samples: train.min_samples,
            weight_theta: 1.0,
            weight_beta: 1.0,
            weight_ji: 1.0,
            weight_vi: 1.0,
            net_hidden_dim: spec.hidden_dim,
            net_num_blocks: spec.num_blocks,
            net_dropout: spec.dropout_rate,
            net_batchnorm: spec.use_batchnorm,
            lm_max_iterations: lm.max_iterations,
            lm_cost_tolerance: lm.cost_tolerance,
            lm_initial_damping: lm.initial_damping,
            lm_fd_step: lm.fd_step,
            lm_optimize_shape: lm.optimize_shape,
            band_width: crate::uv_fusion::DEFAULT_BAND_WIDTH,
            seed_data: 0,
            seed_mocap: 1,
            seed_train: 2,
            seed_pipeline: 3,
            threads: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

macro_rules! config_keys {
    ($($key:literal => $field:ident : $ty:ty),* $(,)?) => {
        impl RunConfig {
            /// Every key in file order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$field = parse_value::<$ty>(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$field.to_string())),*]
            }
        }
    };
}

config_keys! {
    "model.vertex_budget" => vertex_budget: usize,
    "atlas.height" => atlas_height: usize,
    "atlas.width" => atlas_width: usize,
    "image.size" => image_size: usize,
    "camera.margin" => camera_margin: f64,
    "data.pose_scale" => pose_scale: f64,
    "data.shape_sigma" => shape_sigma: f64,
    "data.dmp_noise_sigma" => dmp_noise_sigma: f64,
    "occlusion.min_count" => occlusion_min_count: usize,
    "occlusion.max_count" => occlusion_max_count: usize,
    "occlusion.min_size" => occlusion_min_size: f64,
    "occlusion.max_size" => occlusion_max_size: f64,
    "aggregate.min_texels" => aggregate_min_texels: usize,
    "augment.noise_sigma" => augment_noise_sigma: f64,
    "augment.occlusion_prob" => augment_occlusion_prob: f64,
    "train.mocap_samples" => mocap_samples: usize,
    "train.epochs" => train_epochs: usize,
    "train.batch_size" => train_batch_size: usize,
    "train.learning_rate" => train_learning_rate: f64,
    "train.min_samples" => train_min_samples: usize,
    "train.weight_theta" => weight_theta: f64,
    "train.weight_beta" => weight_beta: f64,
    "train.weight_ji" => weight_ji: f64,
    "train.weight_vi" => weight_vi: f64,
    "net.hidden_dim" => net_hidden_dim: usize,
    "net.num_blocks" => net_num_blocks: usize,
    "net.dropout" => net_dropout: f64,
    "net.batchnorm" => net_batchnorm: bool,
    "lm.max_iterations" => lm_max_iterations: usize,
    "lm.cost_tolerance" => lm_cost_tolerance: f64,
    "lm.initial_damping" => lm_initial_damping: f64,
    "lm.fd_step" => lm_fd_step: f64,
    "lm.optimize_shape" => lm_optimize_shape: bool,
    "fusion.band_width" => band_width: usize,
    "seed.data" => seed_data: u64,
    "seed.mocap" => seed_mocap: u64,
    "seed.train" => seed_train: u64,
    "seed.pipeline" => seed_pipeline: u64,
    "threads" => threads: usize,
}

impl RunConfig {
    /// Defaults overridden by the keys present in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.occlusion().validate()?;
        self.augment().validate()?;
        self.pose_limits()?;
        let positive = [
            self.camera_margin + 1.0,
            self.shape_sigma + 1.0,
            self.dmp_noise_sigma + 1.0,
            self.train_learning_rate,
            self.lm_fd_step,
        ];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) || self.camera_margin >= 0.5 {
            return Err(Error::Config(format!("numeric settings out of range in {self:?}")));
        }
        if self.image_size == 0 || self.train_batch_size < 2 {
            return Err(Error::Config("image.size must be positive and train.batch_size at least 2".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { vertex_budget: self.vertex_budget, ..ModelConfig::default() }
    }

    pub fn pose_limits(&self) -> Result<PoseLimits> {
        let limits = PoseLimits::default().scaled(self.pose_scale);
        limits.validate()?;
        Ok(limits)
    }

    pub fn occlusion(&self) -> OcclusionConfig {
        OcclusionConfig {
            min_count: self.occlusion_min_count,
            max_count: self.occlusion_max_count,
            min_size: self.occlusion_min_size,
            max_size: self.occlusion_max_size,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig { noise_sigma: self.augment_noise_sigma, occlusion_prob: self.augment_occlusion_prob }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            learning_rate: self.train_learning_rate,
            seed: self.seed_train,
            augment: self.augment(),
            weights: IkLossWeights { theta: self.weight_theta, beta: self.weight_beta, ji: self.weight_ji, vi: self.weight_vi },
            min_samples: self.train_min_samples,
            threads: self.threads,
        }
    }

    pub fn net_specs(&self) -> (MlpSpec, MlpSpec) {
        let (mut a, mut b) = IkNets::default_specs();
        for s in [&mut a, &mut b] {
            s.hidden_dim = self.net_hidden_dim;
            s.num_blocks = self.net_num_blocks;
            s.dropout_rate = self.net_dropout;
            s.use_batchnorm = self.net_batchnorm;
        }
        (a, b)
    }

    pub fn lm(&self) -> LmConfig {
        LmConfig {
            max_iterations: self.lm_max_iterations,
            cost_tolerance: self.lm_cost_tolerance,
            initial_damping: self.lm_initial_damping,
            fd_step: self.lm_fd_step,
            optimize_shape: self.lm_optimize_shape,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{sample_pose, BodyModel};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn sample_tensor() -> Tensor {
        Tensor::f64(vec![2, 3], vec![1.0, -2.5, f64::MIN_POSITIVE, 0.0, -0.0, 1e300]).unwrap()
    }

    #[test]
    fn every_element_type_round_trips() {
        let cases = [
            sample_tensor(),
            Tensor::new(vec![4], TensorData::F32(vec![1.5, -0.0, f32::MAX, 3.0])).unwrap(),
            Tensor::new(vec![2, 2], TensorData::U8(vec![0, 7, 255, 1])).unwrap(),
            Tensor::new(vec![3], TensorData::Bool(vec![true, false, true])).unwrap(),
            Tensor::new(vec![0, 5], TensorData::F64(vec![])).unwrap(),
            Tensor::new(vec![], TensorData::F64(vec![4.0])).unwrap(),
        ];
        for t in cases {
            let back = Tensor::decode(&t.encode()).unwrap();
            assert_eq!(back.encode(), t.encode());
            assert_eq!(back.dims, t.dims);
        }
        let nan = Tensor::f64(vec![1], vec![f64::NAN]).unwrap();
        let back = Tensor::decode(&nan.encode()).unwrap();
        assert_eq!(back.as_f64().unwrap()[0].to_bits(), f64::NAN.to_bits());
        assert!(Tensor::f64(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn header_layout() {
        let bytes = sample_tensor().encode();
        assert_eq!(&bytes[..4], b"UVB1");
        assert_eq!(bytes[4], 2);
        assert_eq!(bytes[5], 2);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 6 + 16 + 48 + 4);
        assert_eq!(f64::from_le_bytes(bytes[30..38].try_into().unwrap()), -2.5);
    }

    #[test]
    fn corruption_is_reported_distinctly() {
        let bytes = sample_tensor().encode();
        let mut flipped = bytes.clone();
        flipped[30] ^= 0x10;
        assert!(matches!(Tensor::decode(&flipped), Err(Error::Checksum { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Tensor::decode(&magic), Err(Error::BadMagic)));
        assert!(matches!(Tensor::decode(&bytes[..bytes.len() - 5]), Err(Error::Truncated(_))));
        assert!(matches!(Tensor::decode(&bytes[..3]), Err(Error::Truncated(_))));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(Tensor::decode(&longer), Err(Error::Truncated(_))));
        let mut code = bytes.clone();
        code[4] = 9;
        assert!(matches!(Tensor::decode(&code), Err(Error::ElementType(9))));
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let bytes = sample_tensor().encode();
        for i in 0..bytes.len() {
            for bit in 0..8 {
                let mut b = bytes.clone();
                b[i] ^= 1 << bit;
                let err = Tensor::decode(&b);
                assert!(err.is_err(), "byte {i} bit {bit}");
                if (22..bytes.len() - 4).contains(&i) {
                    assert!(matches!(err, Err(Error::Checksum { .. })));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn random_tensors_round_trip_bitwise(data in proptest::collection::vec(any::<f64>(), 0..64), cols in 1usize..4) {
            let rows = data.len() / cols;
            let t = Tensor::f64(vec![rows, cols], data[..rows * cols].to_vec()).unwrap();
            let back = Tensor::decode(&t.encode()).unwrap();
            let a: Vec<u64> = t.as_f64().unwrap().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = back.as_f64().unwrap().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.dims, t.dims);
        }

        #[test]
        fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..80)) {
            let _ = Tensor::decode(&bytes);
        }
    }

    #[test]
    fn obj_of_a_triangle() {
        let mesh = Mesh {
            vertices: vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.5, -2.0)],
            faces: Arc::new(vec![[0, 1, 2]]),
        };
        let obj = export_obj(&mesh);
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).collect::<Vec<_>>(), vec!["f 1 2 3"]);
        assert!(obj.contains("v 0 1.5 -2\n"));
    }

    #[test]
    fn domain_objects_round_trip() {
        let model = BodyModel::build(&ModelConfig::default()).unwrap();
        let pose = sample_pose(3, &PoseLimits::default()).unwrap();
        assert_eq!(pose_from_tensor(&Tensor::decode(&pose_to_tensor(&pose).encode()).unwrap()).unwrap(), pose);
        let shape = crate::body_model::sample_shape(1, 1.0);
        assert_eq!(shape_from_tensor(&shape_to_tensor(&shape)).unwrap(), shape);
        let cam = Camera::new(80.0, [100.0, 90.5]).unwrap();
        assert_eq!(camera_from_tensor(&camera_to_tensor(&cam)).unwrap(), cam);
        let mut j = JointSet::all_visible(model.posed_lsp_joints(&pose, &shape));
        j.visible[4] = false;
        assert_eq!(joints_from_tensor(&joints_to_tensor(&j)).unwrap(), j);
        let rects = vec![Rect { row0: 1, col0: 2, row1: 30, col1: 40 }];
        assert_eq!(rects_from_tensor(&rects_to_tensor(&rects)).unwrap(), rects);
        let mesh = model.skin(&pose, &shape);
        assert_eq!(points_from_tensor(&points_to_tensor(&mesh.vertices)).unwrap(), mesh.vertices);
        assert!(pose_from_tensor(&shape_to_tensor(&shape)).is_err());
    }

    #[test]
    fn mlp_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = IkNets::default_specs();
        let spec = MlpSpec { hidden_dim: 16, num_blocks: 1, ..a };
        let mut net = Mlp::new(spec, 5).unwrap();
        net.steps = 12;
        net.running_mean[0][3] = 0.25;
        net.running_var[1][2] = 4.0;
        net.set_mode(Mode::Eval);
        save_mlp(&net, dir.path(), "x").unwrap();
        let back = load_mlp(dir.path(), "x").unwrap();
        assert_eq!(back, net);
        assert!(matches!(load_mlp(dir.path(), "missing"), Err(Error::Io { .. })));
    }

    #[test]
    fn run_config_round_trips_and_rejects_unknown_keys() {
        let mut cfg = RunConfig::default();
        cfg.train_learning_rate = 3.3e-4;
        cfg.seed_data = 17;
        cfg.net_batchnorm = false;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("seed.data = 4 # trailing").unwrap().seed_data, 4);
        assert!(matches!(RunConfig::parse("seed.date = 4"), Err(Error::Config(_))));
        assert!(RunConfig::parse("seed.data").is_err());
        assert!(RunConfig::parse("seed.data = x").is_err());
        assert!(RunConfig::parse("train.batch_size = 1").is_err());
        assert_eq!(RunConfig::KEYS.len(), cfg.entries().len());
        for key in RunConfig::KEYS {
            assert!(cfg.to_text().contains(&format!("{key} = ")));
        }
    }

    #[test]
    fn pngs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = Grid::new(4, 6, 0u8);
        labels.set(1, 2, 5);
        write_indexed_png(&labels, &dir.path().join("p.png")).unwrap();
        write_mask_png(&labels.map(|l| *l > 0), &dir.path().join("m.png")).unwrap();
        let bytes = fs::read(dir.path().join("p.png")).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
        assert!(bytes.windows(4).any(|w| w == b"PLTE"));
    }
}
