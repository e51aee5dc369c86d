//! Seeded synthetic two-view scenes with known pose and ground-truth labels.
//!
//! A scene samples a relative pose, places 3D points in front of the first
//! camera, projects them into both normalized cameras, perturbs the second
//! view of true matches with Gaussian noise and replaces a fixed fraction of
//! second-view points with uniform draws over the field of view. Labels are
//! then recomputed from the residual under the true essential matrix.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    essential_from_pose, symmetric_epipolar_residual, CorrespondenceSet, EssentialMatrix, GeometryError, Pose,
    DEFAULT_INLIER_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scene io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene header: {0}")]
    Header(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_correspondences: usize,
    pub outlier_ratio: f64,
    /// Standard deviation of second-view noise, normalized units.
    pub noise_sigma: f64,
    pub depth_range: (f64, f64),
    pub rotation_max_deg: f64,
    pub baseline_max: f64,
    /// Half-width of the square field of view in normalized coordinates.
    pub fov_half_width: f64,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_correspondences: 500,
            outlier_ratio: 0.7,
            noise_sigma: 5e-4,
            depth_range: (2.0, 8.0),
            rotation_max_deg: 20.0,
            baseline_max: 1.0,
            fov_half_width: 1.0,
            shuffle: true,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        if self.n_correspondences < 16 {
            return bad("n_correspondences must be at least 16");
        }
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return bad("outlier_ratio must lie in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and non-negative");
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad("depth_range must satisfy 0 < min < max");
        }
        if !(self.rotation_max_deg >= 0.0 && self.rotation_max_deg <= 180.0) {
            return bad("rotation_max_deg must lie in [0, 180]");
        }
        if !(self.baseline_max > 0.0 && self.baseline_max.is_finite()) {
            return bad("baseline_max must be positive");
        }
        if !(self.fov_half_width > 0.0 && self.fov_half_width.is_finite()) {
            return bad("fov_half_width must be positive");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    /// Coordinates, labels and pose.
    pub corrs: CorrespondenceSet,
    pub e_true: EssentialMatrix,
    /// Residual of each correspondence under `e_true`.
    pub gt_residuals: Vec<f64>,
    /// Pre-shuffle position of each row.
    pub source_index: Vec<usize>,
    /// Rows whose second view was replaced by a random point.
    pub injected_outlier: Vec<bool>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.corrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corrs.is_empty()
    }

    pub fn pose(&self) -> &Pose {
        self.corrs.pose().expect("generated scenes carry a pose")
    }

    pub fn labels(&self) -> &[bool] {
        self.corrs.labels().expect("generated scenes carry labels")
    }

    pub fn inlier_fraction(&self) -> f64 {
        self.labels().iter().filter(|&&l| l).count() as f64 / self.len() as f64
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

const MAX_VISIBILITY_TRIES: usize = 200;

pub fn generate_scene(config: &SceneConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_correspondences;
    let fov = config.fov_half_width;

    let axis = Unit::new_normalize(random_unit(&mut rng));
    let angle = rng.random_range(0.0..=config.rotation_max_deg).to_radians();
    let rotation: Matrix3<f64> = *Rotation3::from_axis_angle(&axis, angle).matrix();
    let baseline = config.baseline_max * rng.random_range(0.25..=1.0);
    let t_metric = random_unit(&mut rng) * baseline;
    let pose = Pose::new(rotation, t_metric)?;
    let e_true = essential_from_pose(&pose);

    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        let mut chosen = None;
        for _ in 0..MAX_VISIBILITY_TRIES {
            let x = rng.random_range(-fov..=fov);
            let y = rng.random_range(-fov..=fov);
            let depth = rng.random_range(config.depth_range.0..=config.depth_range.1);
            let p1 = Vector3::new(x, y, 1.0) * depth;
            let p2 = rotation * p1 + t_metric;
            if p2.z <= 1e-3 {
                continue;
            }
            let (u, v) = (p2.x / p2.z, p2.y / p2.z);
            chosen = Some([x, y, u, v]);
            if u.abs() <= fov && v.abs() <= fov {
                break;
            }
        }
        coords.push(chosen.ok_or_else(|| {
            SceneError::InvalidConfig("no point visible in both cameras; reduce baseline or rotation".into())
        })?);
    }

    let n_out = (config.outlier_ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut injected = vec![false; n];
    for &i in &order[..n_out] {
        injected[i] = true;
    }
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    for (q, &out) in coords.iter_mut().zip(&injected) {
        if out {
            q[2] = rng.random_range(-fov..=fov);
            q[3] = rng.random_range(-fov..=fov);
        } else if config.noise_sigma > 0.0 {
            q[2] += noise.sample(&mut rng);
            q[3] += noise.sample(&mut rng);
        }
    }

    let mut source_index: Vec<usize> = (0..n).collect();
    if config.shuffle {
        source_index.shuffle(&mut rng);
    }
    let coords: Vec<[f64; 4]> = source_index.iter().map(|&i| coords[i]).collect();
    let injected_outlier: Vec<bool> = source_index.iter().map(|&i| injected[i]).collect();
    let gt_residuals: Vec<f64> = coords
        .iter()
        .map(|q| symmetric_epipolar_residual(e_true.matrix(), q))
        .collect();
    let labels = gt_residuals.iter().map(|&r| r < DEFAULT_INLIER_THRESHOLD).collect();
    let corrs = CorrespondenceSet::new(coords)?.with_labels(labels)?.with_pose(pose);
    Ok(Scene {
        config: *config,
        corrs,
        e_true,
        gt_residuals,
        source_index,
        injected_outlier,
    })
}

/// Scenes seeded `base_seed, base_seed + 1, …`.
pub fn generate_split(config: &SceneConfig, n_scenes: usize, base_seed: u64) -> Result<Vec<Scene>, SceneError> {
    (0..n_scenes as u64)
        .map(|i| generate_scene(&config.with_seed(base_seed.wrapping_add(i))))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    config: SceneConfig,
    n: usize,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    e_true: [f64; 9],
    source_index: Vec<usize>,
    injected_outlier: Vec<bool>,
}

/// Appends one record: u64 LE header length, JSON header, N×4 f64 LE
/// coordinates (row-major), N label bytes (0 or 1).
pub fn write_scene<W: Write>(w: &mut W, scene: &Scene) -> Result<(), SceneError> {
    let r = scene.pose().rotation();
    let t = scene.pose().translation();
    let header = SceneHeader {
        config: scene.config,
        n: scene.len(),
        rotation: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        translation: [t.x, t.y, t.z],
        e_true: scene.e_true.to_row_major(),
        source_index: scene.source_index.clone(),
        injected_outlier: scene.injected_outlier.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for q in scene.corrs.coords() {
        for v in q {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let labels: Vec<u8> = scene.labels().iter().map(|&l| l as u8).collect();
    w.write_all(&labels)?;
    Ok(())
}

/// Reads one record, or `None` at a clean end of stream.
pub fn read_scene<R: Read>(r: &mut R) -> Result<Option<Scene>, SceneError> {
    let mut len = [0u8; 8];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let h: SceneHeader = serde_json::from_slice(&json)?;
    let mut coords = Vec::with_capacity(h.n);
    let mut buf = [0u8; 8];
    for _ in 0..h.n {
        let mut q = [0.0; 4];
        for v in &mut q {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        coords.push(q);
    }
    let mut labels = vec![0u8; h.n];
    r.read_exact(&mut labels)?;
    let pose = Pose::new(Matrix3::from_fn(|i, j| h.rotation[i][j]), Vector3::from(h.translation))?;
    let e_true = EssentialMatrix::from_unit_row_slice(&h.e_true);
    let gt_residuals = coords
        .iter()
        .map(|q| symmetric_epipolar_residual(e_true.matrix(), q))
        .collect();
    let corrs = CorrespondenceSet::new(coords)?
        .with_labels(labels.iter().map(|&l| l != 0).collect())?
        .with_pose(pose);
    Ok(Some(Scene {
        config: h.config,
        corrs,
        e_true,
        gt_residuals,
        source_index: h.source_index,
        injected_outlier: h.injected_outlier,
    }))
}

pub fn read_scenes<R: Read>(r: &mut R) -> Result<Vec<Scene>, SceneError> {
    let mut out = Vec::new();
    while let Some(s) = read_scene(r)? {
        out.push(s);
    }
    Ok(out)
}
