//! Calibrated two-view epipolar geometry.
//!
//! Conventions: a correspondence is `(x, y, x′, y′)` in camera-normalized
//! coordinates, homogeneous points are `p = (x, y, 1)` and `p′ = (x′, y′, 1)`,
//! and a [`Pose`] maps first-camera points into the second camera,
//! `X₂ = R·X₁ + t`, so that `p′ᵀ E p = 0` with `E = [t]ₓ R`.

mod decompose;
mod eight_point;
mod ransac;

pub use decompose::{decompose_essential, PoseEstimate};
pub use eight_point::{weighted_eight_point, EightPointEstimate, design_row};
pub use ransac::{ransac_eight_point, ransac_with_prefilter, RansacConfig, RansacResult};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Residual threshold separating inliers from outliers, in squared normalized units.
pub const DEFAULT_INLIER_THRESHOLD: f64 = 1e-4;

/// Lower clamp of the residual denominator.
const DENOM_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("need at least 8 correspondences with positive weight, got {0}")]
    RankDeficient(usize),
    #[error("{what}: expected {expected} entries, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("weights must be finite and non-negative")]
    InvalidWeights,
    #[error("coordinates must be finite")]
    NonFiniteCoordinates,
    #[error("rotation is not orthonormal with det +1")]
    InvalidRotation,
    #[error("translation must be non-zero and finite")]
    InvalidTranslation,
    #[error("no inliers selected")]
    NoInliers,
    #[error("singular value decomposition failed")]
    SvdFailed,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Relative pose with unit-norm translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Validates the rotation and normalizes the translation to unit length.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-9) || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation);
        }
        let norm = translation.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(GeometryError::InvalidTranslation);
        }
        Ok(Self {
            rotation,
            translation: translation / norm,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }
}

/// 3×3 matrix kept at unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Normalizes `m` to unit Frobenius norm.
    pub fn new(m: Matrix3<f64>) -> Self {
        let n = m.norm();
        if n > 0.0 {
            Self(m / n)
        } else {
            Self(m)
        }
    }

    /// Builds from a row-major 9-vector.
    pub fn from_row_slice(v: &[f64]) -> Self {
        Self::new(Matrix3::from_row_slice(v))
    }

    /// Wraps a matrix that is already unit-norm, without renormalizing.
    pub(crate) fn from_unit_row_slice(v: &[f64]) -> Self {
        Self(Matrix3::from_row_slice(v))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    /// Nearest matrix with singular values proportional to `(1, 1, 0)`,
    /// renormalized. Matrices already on that manifold are returned unchanged.
    pub fn project(&self) -> Self {
        let svd = self.0.svd(true, true);
        let mut s = svd.singular_values;
        let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let (s0, s1, s2) = (s[order[0]], s[order[1]], s[order[2]]);
        let frob = self.0.norm();
        if (s0 - s1).abs() <= 1e-13 && s2 <= 1e-13 && (frob - 1.0).abs() <= 1e-13 {
            return *self;
        }
        let half = std::f64::consts::FRAC_1_SQRT_2;
        s[order[0]] = half;
        s[order[1]] = half;
        s[order[2]] = 0.0;
        Self::new(u * Matrix3::from_diagonal(&s) * v_t)
    }

    /// Frobenius distance to `other`, minimized over the sign of `self`.
    pub fn distance(&self, other: &EssentialMatrix) -> f64 {
        (self.0 - other.0).norm().min((self.0 + other.0).norm())
    }

    pub fn scaled(&self, lambda: f64) -> Matrix3<f64> {
        self.0 * lambda
    }
}

/// Correspondences in camera-normalized coordinates, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    coords: Vec<[f64; 4]>,
    labels: Option<Vec<bool>>,
    pose: Option<Pose>,
}

impl CorrespondenceSet {
    pub fn new(coords: Vec<[f64; 4]>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFiniteCoordinates);
        }
        Ok(Self {
            coords,
            labels: None,
            pose: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != self.coords.len() {
            return Err(GeometryError::LengthMismatch {
                what: "labels",
                expected: self.coords.len(),
                actual: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = Some(pose);
        self
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 4]] {
        &self.coords
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn pose(&self) -> Option<&Pose> {
        self.pose.as_ref()
    }

    /// Rows at `indices`, in that order, carrying labels and pose along.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            pose: self.pose,
        }
    }

    /// Row-major N×4 copy.
    pub fn flat(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// `E = [t]ₓ R`, normalized to unit Frobenius norm.
pub fn essential_from_pose(pose: &Pose) -> EssentialMatrix {
    EssentialMatrix::new(skew(&pose.translation) * pose.rotation)
}

/// Squared epipolar error normalized by the first two components of both
/// epipolar lines. Invariant to scaling `e`.
pub fn symmetric_epipolar_residual(e: &Matrix3<f64>, q: &[f64; 4]) -> f64 {
    let p = Vector3::new(q[0], q[1], 1.0);
    let pp = Vector3::new(q[2], q[3], 1.0);
    let ep = e * p;
    let etp = e.transpose() * pp;
    let num = pp.dot(&ep);
    let den = ep.x * ep.x + ep.y * ep.y + etp.x * etp.x + etp.y * etp.y;
    num * num / den.max(DENOM_FLOOR)
}

/// Result of verifying a whole correspondence set against one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub distances: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Verification {
    pub fn inlier_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Residual of every correspondence under `e`; inlier iff residual `< threshold`.
pub fn full_size_verification(e: &EssentialMatrix, corrs: &CorrespondenceSet, threshold: f64) -> Verification {
    let distances: Vec<f64> = corrs
        .coords()
        .iter()
        .map(|q| symmetric_epipolar_residual(e.matrix(), q))
        .collect();
    let mask = distances.iter().map(|&d| d < threshold).collect();
    Verification { distances, mask }
}

/// Angle of a rotation matrix, in radians.
fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    sin.atan2(cos)
}

/// Angular errors in degrees: rotation geodesic angle, and the angle between
/// translation directions up to sign.
pub fn pose_error(estimated: &Pose, truth: &Pose) -> (f64, f64) {
    let err_r = rotation_angle(&(estimated.rotation.transpose() * truth.rotation)).to_degrees();
    let (a, b) = (estimated.translation.normalize(), truth.translation.normalize());
    let err_t = a.cross(&b).norm().atan2(a.dot(&b).abs()).to_degrees();
    (err_r, err_t)
}
