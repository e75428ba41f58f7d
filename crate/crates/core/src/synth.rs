//! Procedural two-domain road scenes with exact depth and labels.
//!
//! A pinhole camera 1.5 m above a flat ground plane looks at a road lined
//! with vegetation, buildings and trees; cars sit on the road. Objects are
//! flat billboards drawn far to near.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fog::{apply_fog, FogParams};
use crate::formats;
use crate::tensor::{DepthMap, LabelMap, RgbImage};

pub const NUM_CLASSES: usize = 5;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["road", "sky", "building", "car", "vegetation"];
pub const ROAD: u8 = 0;
pub const SKY: u8 = 1;
pub const BUILDING: u8 = 2;
pub const CAR: u8 = 3;
pub const VEGETATION: u8 = 4;

pub const SKY_DEPTH: f64 = 1000.0;
pub const NEAR_GROUND_DEPTH: f64 = 5.0;
pub const FAR_GROUND_DEPTH: f64 = 300.0;
pub const OBJECT_DEPTH_RANGE: [f64; 2] = [10.0, 250.0];
const CAMERA_HEIGHT: f64 = 1.5;
const SOURCE_NOISE: f64 = 0.02;
const TARGET_NOISE: f64 = 0.05;
/// Target palette: hue rotation about the gray axis, then a brightness offset.
const TARGET_HUE_DEG: f64 = 10.0;
const TARGET_BRIGHTNESS: f64 = -0.04;
/// Per-scene illumination, shared by both domains.
const MIN_CONTRAST: f64 = 0.55;
const EXPOSURE_RANGE: [f64; 2] = [-0.05, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub domain: Domain,
    /// Fog density interval in 1/m, used for TARGET only.
    pub fog_beta_range: [f64; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 96,
            width: 128,
            seed: 0,
            domain: Domain::Source,
            fog_beta_range: [0.005, 0.02],
        }
    }
}

impl SceneSpec {
    pub fn source(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn target(seed: u64) -> Self {
        Self {
            seed,
            domain: Domain::Target,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid(format!(
                "scene size {}x{} is below the 16x16 minimum",
                self.height, self.width
            )));
        }
        let [lo, hi] = self.fog_beta_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return Err(Error::invalid(format!("bad fog_beta_range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// One rendered scene. `clear` is the domain-styled image before fog; for
/// SOURCE scenes `image == clear` and `beta == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: RgbImage,
    pub clear: RgbImage,
    pub depth: DepthMap,
    pub labels: LabelMap,
    pub beta: f64,
}

pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<(RgbImage, DepthMap, LabelMap)> {
    let s = render_scene(spec, index)?;
    Ok((s.image, s.depth, s.labels))
}

/// Renders the same clear target scene under a different fog density.
pub fn refog(scene: &Scene, beta: f64) -> Result<RgbImage> {
    let fogged = apply_fog(&scene.clear, &scene.depth, &FogParams::with_beta(beta)?)?;
    Ok(quantize(fogged))
}

fn quantize(img: RgbImage) -> RgbImage {
    let data = img.data.iter().map(|&v| formats::to_u8(v) as f64 / 255.0).collect();
    RgbImage {
        data,
        ..img
    }
}

fn scene_rng(seed: u64, index: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(index);
    rng
}

struct Camera {
    horizon: f64,
    /// Focal length times camera height, in pixel·meters.
    k: f64,
    focal: f64,
    cx: f64,
}

impl Camera {
    fn ground_depth(&self, row: usize) -> Option<f64> {
        let dy = row as f64 + 0.5 - self.horizon;
        (dy > 0.0).then(|| (self.k / dy).clamp(NEAR_GROUND_DEPTH, FAR_GROUND_DEPTH))
    }

    fn lateral(&self, col: usize, depth: f64) -> f64 {
        (col as f64 + 0.5 - self.cx) * depth / self.focal
    }

    fn ground_row(&self, depth: f64) -> f64 {
        self.horizon + self.k / depth
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Building { x0: f64, x1: f64, top: f64, color: [f64; 3], window_pitch: f64 },
    Tree { x: f64, radius: f64, canopy: [f64; 3] },
    Car { x: f64, color: [f64; 3] },
}

struct Object {
    depth: f64,
    shape: Shape,
}

impl Object {
    /// Horizontal and vertical extent in meters (u from camera axis, v above ground).
    fn extent(&self) -> (f64, f64, f64) {
        match self.shape {
            Shape::Building { x0, x1, top, .. } => (x0.min(x1), x0.max(x1), top),
            Shape::Tree { x, radius, .. } => (x - radius, x + radius, 2.0 + 2.0 * radius),
            Shape::Car { x, .. } => (x - 0.9, x + 0.9, 1.5),
        }
    }

    fn shade(&self, u: f64, v: f64) -> Option<(u8, [f64; 3])> {
        match self.shape {
            Shape::Building { color, window_pitch, .. } => {
                let fu = (u.abs() / window_pitch).fract();
                let fv = (v / window_pitch).fract();
                let window = v > 1.0 && (0.3..0.7).contains(&fu) && (0.35..0.75).contains(&fv);
                let c = if window { color.map(|c| c * 0.45) } else { color };
                Some((BUILDING, c))
            }
            Shape::Tree { x, radius, canopy } => {
                let cy = 2.0 + radius;
                if (u - x).powi(2) + (v - cy).powi(2) <= radius * radius {
                    Some((VEGETATION, canopy))
                } else if (u - x).abs() <= 0.2 && v <= cy {
                    Some((VEGETATION, [0.35, 0.25, 0.15]))
                } else {
                    None
                }
            }
            Shape::Car { x, color } => {
                let du = (u - x).abs();
                if v < 0.35 && du > 0.5 {
                    Some((CAR, [0.05, 0.05, 0.05]))
                } else if (0.9..1.35).contains(&v) && du < 0.75 {
                    Some((CAR, [0.15, 0.2, 0.25]))
                } else {
                    Some((CAR, color))
                }
            }
        }
    }
}

const BUILDING_COLORS: [[f64; 3]; 4] = [
    [0.7, 0.35, 0.25],
    [0.8, 0.62, 0.3],
    [0.45, 0.3, 0.2],
    [0.6, 0.3, 0.4],
];
const CAR_COLORS: [[f64; 3]; 4] = [
    [0.8, 0.1, 0.1],
    [0.1, 0.2, 0.7],
    [0.9, 0.75, 0.1],
    [0.1, 0.55, 0.6],
];

fn jitter(rng: &mut ChaCha8Rng, c: [f64; 3], amount: f64) -> [f64; 3] {
    let d = rng.random_range(-amount..=amount);
    c.map(|v| (v + d).clamp(0.0, 1.0))
}

fn side(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// Depth in `[lo, hi)` with density falling off away from the camera.
fn near_skewed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u * u
}

fn layout(rng: &mut ChaCha8Rng, road_half: f64) -> Vec<Object> {
    let [dmin, dmax] = OBJECT_DEPTH_RANGE;
    let mut objects = Vec::new();
    for _ in 0..rng.random_range(3..=6) {
        let s = side(rng);
        let near = road_half + rng.random_range(2.0..12.0);
        let width = rng.random_range(6.0..20.0);
        let base = BUILDING_COLORS[rng.random_range(0..BUILDING_COLORS.len())];
        objects.push(Object {
            depth: near_skewed(rng, 15.0, dmax),
            shape: Shape::Building {
                x0: s * near,
                x1: s * (near + width),
                top: rng.random_range(8.0..30.0),
                color: jitter(rng, base, 0.05),
                window_pitch: rng.random_range(2.5..4.0),
            },
        });
    }
    for _ in 0..rng.random_range(2..=6) {
        let s = side(rng);
        objects.push(Object {
            depth: near_skewed(rng, dmin, 150.0),
            shape: Shape::Tree {
                x: s * (road_half + rng.random_range(1.0..10.0)),
                radius: rng.random_range(1.5..3.0),
                canopy: jitter(rng, [0.15, 0.45, 0.15], 0.05),
            },
        });
    }
    for _ in 0..rng.random_range(1..=3) {
        let lane = road_half - 1.0;
        let base = CAR_COLORS[rng.random_range(0..CAR_COLORS.len())];
        objects.push(Object {
            depth: rng.random_range(dmin..60.0),
            shape: Shape::Car {
                x: rng.random_range(-lane..lane),
                color: jitter(rng, base, 0.05),
            },
        });
    }
    // Far to near; ties keep generation order.
    objects.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    objects
}

fn target_palette(c: [f64; 3]) -> [f64; 3] {
    let (s, co) = TARGET_HUE_DEG.to_radians().sin_cos();
    let k = (1.0 - co) / 3.0;
    let q = s / 3f64.sqrt();
    let m = [
        [co + k, k - q, k + q],
        [k + q, co + k, k - q],
        [k - q, k + q, co + k],
    ];
    std::array::from_fn(|i| {
        (m[i][0] * c[0] + m[i][1] * c[1] + m[i][2] * c[2] + TARGET_BRIGHTNESS).clamp(0.0, 1.0)
    })
}

/// Renders scene `index`; all randomness comes from streams keyed by
/// `(spec.seed, index)`.
pub fn render_scene(spec: &SceneSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = scene_rng(spec.seed, index, 0);

    let horizon = h as f64 * rng.random_range(0.38..0.46);
    let k = NEAR_GROUND_DEPTH * (h as f64 - 0.5 - horizon);
    let cam = Camera {
        horizon,
        k,
        focal: k / CAMERA_HEIGHT,
        cx: w as f64 * (0.5 + rng.random_range(-0.1..0.1)),
    };
    let road_half = rng.random_range(3.5..6.0);
    let grass = jitter(&mut rng, [0.35, 0.55, 0.25], 0.04);
    let road = jitter(&mut rng, [0.4, 0.4, 0.42], 0.04);
    let objects = layout(&mut rng, road_half);

    let mut color = vec![[0.0; 3]; h * w];
    let mut labels = vec![0u8; h * w];
    let mut depth = vec![0.0; h * w];
    for r in 0..h {
        let ground = cam.ground_depth(r);
        for c in 0..w {
            let i = r * w + c;
            match ground {
                None => {
                    let t = ((r as f64 + 0.5) / horizon).min(1.0);
                    color[i] = [0.4 + 0.35 * t, 0.6 + 0.25 * t, 0.9 + 0.05 * t];
                    labels[i] = SKY;
                    depth[i] = SKY_DEPTH;
                }
                Some(d) => {
                    let u = cam.lateral(c, d);
                    if u.abs() <= road_half {
                        let marking = u.abs() < 0.12 && (d / 4.0) as u64 % 2 == 0;
                        color[i] = if marking { [0.9, 0.9, 0.85] } else { road };
                        labels[i] = ROAD;
                    } else {
                        color[i] = grass;
                        labels[i] = VEGETATION;
                    }
                    depth[i] = d;
                }
            }
        }
    }

    for obj in &objects {
        let d = obj.depth;
        let (u0, u1, top) = obj.extent();
        let base = cam.ground_row(d);
        let px = |u: f64| cam.cx + u * cam.focal / d;
        let rows = ((base - top * cam.focal / d).floor().max(0.0) as usize)..(base.ceil().min(h as f64) as usize);
        let cols = (px(u0).floor().max(0.0) as usize)..(px(u1).ceil().clamp(0.0, w as f64) as usize);
        for r in rows {
            let v = (base - (r as f64 + 0.5)) * d / cam.focal;
            if !(0.0..=top).contains(&v) {
                continue;
            }
            for c in cols.clone() {
                let u = cam.lateral(c, d);
                if u < u0 || u > u1 {
                    continue;
                }
                if let Some((label, rgb)) = obj.shade(u, v) {
                    let i = r * w + c;
                    labels[i] = label;
                    color[i] = rgb;
                    depth[i] = d;
                }
            }
        }
    }

    let (noise, target) = match spec.domain {
        Domain::Source => (SOURCE_NOISE, false),
        Domain::Target => (TARGET_NOISE, true),
    };
    // Per-scene illumination: contrast about mid-gray plus an exposure offset.
    let contrast = rng.random_range(MIN_CONTRAST..=1.0);
    let exposure = rng.random_range(EXPOSURE_RANGE[0]..=EXPOSURE_RANGE[1]);
    let normal = Normal::new(0.0, noise).expect("positive std");
    let mut data = Vec::with_capacity(h * w * 3);
    for rgb in color {
        let lit = rgb.map(|v| 0.5 + contrast * (v - 0.5) + exposure);
        let styled = if target { target_palette(lit) } else { lit };
        for v in styled {
            data.push((v + normal.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }
    let clear = quantize(RgbImage::new(h, w, data)?);
    let depth = DepthMap::new(h, w, depth)?;
    let labels = LabelMap::new(h, w, labels)?;

    let beta = if target {
        let [lo, hi] = spec.fog_beta_range;
        if hi > lo {
            scene_rng(spec.seed, index, 0xF06).random_range(lo..=hi)
        } else {
            lo
        }
    } else {
        0.0
    };
    let image = if target {
        quantize(apply_fog(&clear, &depth, &FogParams::with_beta(beta)?)?)
    } else {
        clear.clone()
    };
    Ok(Scene {
        image,
        clear,
        depth,
        labels,
        beta,
    })
}

/// Renders scenes `first..first + n` in parallel; output order follows index.
pub fn render_scenes(spec: &SceneSpec, first: u64, n: usize) -> Result<Vec<Scene>> {
    (first..first + n as u64)
        .into_par_iter()
        .map(|i| render_scene(spec, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub count: usize,
    pub spec: SceneSpec,
    pub images: Vec<String>,
    pub depths: Vec<String>,
    pub labels: Vec<String>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::format(format!("manifest: {e}")))?;
        if m.images.len() != m.count || m.depths.len() != m.count || m.labels.len() != m.count {
            return Err(Error::format("manifest: file lists do not match count"));
        }
        Ok(m)
    }
}

pub const MANIFEST: &str = "manifest.json";

fn entry_names(i: usize) -> [String; 3] {
    [
        format!("img/{i:06}.png"),
        format!("depth/{i:06}.fdep"),
        format!("label/{i:06}.png"),
    ]
}

/// Writes `n` scenes (indices `0..n`) and the manifest under `dir`.
pub fn generate_dataset(spec: &SceneSpec, n: usize, dir: &Path) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    spec.validate()?;
    (0..n).into_par_iter().try_for_each(|i| {
        let (img, depth, labels) = generate_scene(spec, i as u64)?;
        let [ip, dp, lp] = entry_names(i);
        formats::write_rgb_png(&dir.join(ip), &img)?;
        formats::write_bytes(&dir.join(dp), &formats::encode_fdep(&depth))?;
        formats::write_label_png(&dir.join(lp), &labels)
    })?;
    let names: Vec<[String; 3]> = (0..n).map(entry_names).collect();
    let manifest = DatasetManifest {
        count: n,
        spec: spec.clone(),
        images: names.iter().map(|e| e[0].clone()).collect(),
        depths: names.iter().map(|e| e[1].clone()).collect(),
        labels: names.iter().map(|e| e[2].clone()).collect(),
    };
    formats::write_bytes(&dir.join(MANIFEST), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<RgbImage>,
    pub depths: Vec<DepthMap>,
    pub labels: Vec<LabelMap>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let text = String::from_utf8(formats::read_bytes(&path)?)
        .map_err(|_| Error::format(format!("{}: not UTF-8", path.display())))?;
    DatasetManifest::from_json(&text)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let resolve = |rel: &String| -> PathBuf { dir.join(rel) };
    let images = manifest.images.par_iter().map(|p| formats::read_rgb_png(&resolve(p))).collect::<Result<Vec<_>>>()?;
    let depths = manifest.depths.par_iter().map(|p| formats::read_fdep(&resolve(p))).collect::<Result<Vec<_>>>()?;
    let labels = manifest.labels.par_iter().map(|p| formats::read_label_png(&resolve(p))).collect::<Result<Vec<_>>>()?;
    for (i, l) in labels.iter().enumerate() {
        l.validate_classes(NUM_CLASSES)?;
        let (img, d) = (&images[i], &depths[i]);
        if (img.height, img.width) != (l.height, l.width) || (d.height, d.width) != (l.height, l.width) {
            return Err(Error::format(format!("dataset entry {i}: image, depth and label sizes differ")));
        }
    }
    Ok(Dataset {
        manifest,
        images,
        depths,
        labels,
    })
}
