//! Transform algebra, arm description and the classic full-DoF forward
//! kinematics of the two-joint cylindrical link.
//!
//! Every link carries a twist joint `phi` about its own cylinder axis and a
//! bend joint `theta` relative to the previous link. The link transform is
//! `twist_rotation(phi) * bend_translation(theta, d)`, with the rotation
//! blocks taken verbatim from the arm's published link matrices:
//!
//! ```text
//! twist:  [ c  s  0 ]        bend:  [ 1  0  0 ]  translation (0, d sin t, d cos t)
//!         [-s  c  0 ]               [ 0  c  s ]
//!         [ 0  0  1 ]               [ 0 -s  c ]
//! ```
//!
//! Both blocks are rotations by the *negative* angle about z and x
//! respectively, so joint axes used by the Jacobians point along `-z`/`-x`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{invalid_arg, KinematicsError, Result};

/// Rigid homogeneous transform. The bottom row is always `(0, 0, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for HomTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl HomTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Standard homogeneous product `self * other`.
    #[inline]
    pub fn compose(&self, other: &HomTransform) -> HomTransform {
        HomTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Inverse of a rigid transform.
    pub fn inverse(&self) -> HomTransform {
        let rt = self.rotation.transpose();
        HomTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Reads the upper 3x4 block; the bottom row is ignored.
    pub fn from_matrix(m: &Matrix4<f64>) -> HomTransform {
        HomTransform {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Row-major 4x4 entries.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Largest absolute entry-wise difference over the full 4x4 matrix.
    pub fn max_abs_diff(&self, other: &HomTransform) -> f64 {
        let dr = (self.rotation - other.rotation).amax();
        let dt = (self.translation - other.translation).amax();
        dr.max(dt)
    }

    /// `max |R^T R - I|`, a diagnostic for accumulated drift.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn determinant(&self) -> f64 {
        self.rotation.determinant()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_log(&self.rotation).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for HomTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.to_matrix();
        for r in 0..4 {
            if r > 0 {
                writeln!(f)?;
            }
            for c in 0..4 {
                if c > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{:.16e}", m[(r, c)])?;
            }
        }
        Ok(())
    }
}

pub fn compose(a: &HomTransform, b: &HomTransform) -> HomTransform {
    a.compose(b)
}

/// Rotation of a link about its own cylinder axis.
pub fn twist_rotation(phi: f64) -> Result<HomTransform> {
    if !phi.is_finite() {
        return Err(invalid_arg(format!(
            "twist angle must be finite, got {phi}"
        )));
    }
    let (s, c) = phi.sin_cos();
    Ok(HomTransform {
        rotation: Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0),
        translation: Vector3::zeros(),
    })
}

/// Bend relative to the previous link followed by the link's length.
pub fn bend_translation(theta: f64, d: f64) -> Result<HomTransform> {
    if !theta.is_finite() {
        return Err(invalid_arg(format!(
            "bend angle must be finite, got {theta}"
        )));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(invalid_arg(format!(
            "link length must be positive, got {d}"
        )));
    }
    let (s, c) = theta.sin_cos();
    Ok(HomTransform {
        rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c),
        translation: Vector3::new(0.0, d * s, d * c),
    })
}

/// `twist_rotation(phi) * bend_translation(theta, d)` written out entry by
/// entry. Bit-identical to the two-matrix product since every dropped term is
/// an exact zero.
#[inline]
pub(crate) fn link_transform(phi: f64, theta: f64, d: f64) -> HomTransform {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    HomTransform {
        rotation: Matrix3::new(cp, sp * ct, sp * st, -sp, cp * ct, cp * st, 0.0, -st, ct),
        translation: Vector3::new(sp * (d * st), cp * (d * st), d * ct),
    }
}

/// Rotation by `-angle` about the x axis: the rotation block of a bend.
#[inline]
pub(crate) fn bend_rotation(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

/// Role of a link in the reduced model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkMode {
    /// First link of a sector; both joints are free.
    Head,
    /// Follows a head; twist fixed at zero, bend shared with the rest of the body.
    Body,
    /// Immobile link held at frozen angles.
    Damaged,
}

impl LinkMode {
    /// Numeric code used by mode vectors: 1 head, 0 body, -1 damaged.
    pub fn code(self) -> i8 {
        match self {
            LinkMode::Head => 1,
            LinkMode::Body => 0,
            LinkMode::Damaged => -1,
        }
    }

    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            1 => Ok(LinkMode::Head),
            0 => Ok(LinkMode::Body),
            -1 => Ok(LinkMode::Damaged),
            other => Err(invalid_arg(format!(
                "link mode must be -1, 0 or 1, got {other}"
            ))),
        }
    }

    pub fn is_functional(self) -> bool {
        self != LinkMode::Damaged
    }
}

pub fn modes_from_codes(codes: &[i64]) -> Result<Vec<LinkMode>> {
    codes.iter().map(|&c| LinkMode::from_code(c)).collect()
}

/// Frozen `(phi, theta)` of a damaged link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenAngles {
    pub phi: f64,
    pub theta: f64,
}

impl FrozenAngles {
    pub fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta }
    }
}

/// Physical description of the arm. Link indices are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmLayout {
    link_length: f64,
    modes: Vec<LinkMode>,
    frozen: BTreeMap<usize, FrozenAngles>,
}

impl ArmLayout {
    /// Builds and validates a layout. Every damaged link needs a frozen entry
    /// and a body link must follow a head through a run of body links only.
    pub fn new(
        link_length: f64,
        modes: Vec<LinkMode>,
        frozen: BTreeMap<usize, FrozenAngles>,
    ) -> Result<Self> {
        if !(link_length > 0.0 && link_length.is_finite()) {
            return Err(invalid_arg(format!(
                "link length must be positive, got {link_length}"
            )));
        }
        if modes.is_empty() {
            return Err(invalid_arg("an arm needs at least one link"));
        }
        validate_modes(&modes)?;
        for (i, mode) in modes.iter().enumerate() {
            let has = frozen.contains_key(&i);
            match (mode, has) {
                (LinkMode::Damaged, false) => {
                    return Err(invalid_arg(format!(
                        "damaged link {i} has no frozen angles"
                    )))
                }
                (LinkMode::Head | LinkMode::Body, true) => {
                    return Err(invalid_arg(format!(
                        "link {i} is functional but has frozen angles"
                    )))
                }
                _ => {}
            }
        }
        if let Some((&i, _)) = frozen.iter().find(|(&i, _)| i >= modes.len()) {
            return Err(invalid_arg(format!(
                "frozen entry for nonexistent link {i}"
            )));
        }
        if let Some((i, _)) = frozen
            .iter()
            .find(|(_, a)| !(a.phi.is_finite() && a.theta.is_finite()))
        {
            return Err(invalid_arg(format!(
                "frozen angles of link {i} are not finite"
            )));
        }
        Ok(Self {
            link_length,
            modes,
            frozen,
        })
    }

    /// Every link a head, nothing damaged.
    pub fn all_heads(num_links: usize, link_length: f64) -> Result<Self> {
        Self::new(
            link_length,
            vec![LinkMode::Head; num_links],
            BTreeMap::new(),
        )
    }

    pub fn num_links(&self) -> usize {
        self.modes.len()
    }

    pub fn link_length(&self) -> f64 {
        self.link_length
    }

    pub fn modes(&self) -> &[LinkMode] {
        &self.modes
    }

    pub fn mode(&self, link: usize) -> LinkMode {
        self.modes[link]
    }

    pub fn frozen(&self) -> &BTreeMap<usize, FrozenAngles> {
        &self.frozen
    }

    pub fn frozen_angles(&self, link: usize) -> Option<FrozenAngles> {
        self.frozen.get(&link).copied()
    }

    pub fn mode_codes(&self) -> Vec<i8> {
        self.modes.iter().map(|m| m.code()).collect()
    }

    pub fn functional_links(&self) -> usize {
        self.modes.iter().filter(|m| m.is_functional()).count()
    }

    /// Same damage pattern with every functional link promoted to head: the
    /// layout the classic method works on.
    pub fn fully_articulated(&self) -> ArmLayout {
        let modes = self
            .modes
            .iter()
            .map(|&m| {
                if m == LinkMode::Body {
                    LinkMode::Head
                } else {
                    m
                }
            })
            .collect();
        ArmLayout {
            link_length: self.link_length,
            modes,
            frozen: self.frozen.clone(),
        }
    }

    /// Joint values with damaged slots replaced by their frozen angles.
    pub(crate) fn effective_angles(&self, link: usize, q: &[f64]) -> (f64, f64) {
        match self.frozen.get(&link) {
            Some(a) => (a.phi, a.theta),
            None => (q[2 * link], q[2 * link + 1]),
        }
    }
}

/// Checks the head/body run structure of a mode vector.
pub fn validate_modes(modes: &[LinkMode]) -> Result<()> {
    for (i, mode) in modes.iter().enumerate() {
        if *mode != LinkMode::Body {
            continue;
        }
        match i.checked_sub(1).map(|p| modes[p]) {
            None => {
                return Err(KinematicsError::MalformedLayout(
                    "the first link cannot be a body link".into(),
                ))
            }
            Some(LinkMode::Damaged) => {
                return Err(KinematicsError::MalformedLayout(format!(
                    "body link {i} follows damaged link {}",
                    i - 1
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Joint vector `[phi_0, theta_0, phi_1, theta_1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullConfiguration(Vec<f64>);

impl FullConfiguration {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return Err(invalid_arg(format!(
                "a full configuration has two angles per link, got {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid_arg(format!("joint value {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(num_links: usize) -> Self {
        Self(vec![0.0; 2 * num_links])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_links(&self) -> usize {
        self.0.len() / 2
    }

    pub fn phi(&self, link: usize) -> f64 {
        self.0[2 * link]
    }

    pub fn theta(&self, link: usize) -> f64 {
        self.0[2 * link + 1]
    }
}

/// End-effector velocity: linear part then angular part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
        }
    }

    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Forward kinematics with the per-link frames kept for Jacobian assembly.
#[derive(Debug, Clone)]
pub struct ChainPose {
    pub end_effector: HomTransform,
    /// `frames[i]` is the pose of the frame entering link `i`;
    /// `frames[N]` equals the end effector.
    pub frames: Vec<HomTransform>,
    pub(crate) source: Vec<f64>,
}

impl ChainPose {
    /// True when this pose was computed from exactly `q`.
    pub fn matches(&self, q: &[f64]) -> bool {
        self.source.len() == q.len()
            && self
                .source
                .iter()
                .zip(q)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Product of all link transforms in order. Damaged slots of `q` are ignored
/// and replaced by their frozen angles.
pub fn classic_forward(layout: &ArmLayout, q: &FullConfiguration) -> Result<ChainPose> {
    let n = layout.num_links();
    if q.len() != 2 * n {
        return Err(invalid_arg(format!(
            "configuration has {} values, layout needs {}",
            q.len(),
            2 * n
        )));
    }
    let d = layout.link_length();
    let values = q.values();
    let mut frames = Vec::with_capacity(n + 1);
    let mut current = HomTransform::identity();
    frames.push(current);
    for link in 0..n {
        let (phi, theta) = layout.effective_angles(link, values);
        current = current.compose(&link_transform(phi, theta, d));
        frames.push(current);
    }
    Ok(ChainPose {
        end_effector: current,
        frames,
        source: values.to_vec(),
    })
}

/// Difference from `current` to `target`: translation offset and the
/// angle-axis vector of `target.R * current.R^T`.
pub fn pose_error(current: &HomTransform, target: &HomTransform) -> Twist {
    let linear = target.translation - current.translation;
    let relative = target.rotation * current.rotation.transpose();
    Twist {
        linear,
        angular: rotation_log(&relative),
    }
}

/// Angle-axis vector of a rotation matrix, angle in `[0, pi]`.
///
/// At angle pi the axis sign is fixed by making its largest-magnitude
/// component positive.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let sin = v.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    let angle = sin.atan2(cos);
    if sin < 1e-4 && cos < 0.0 {
        // Near pi the antisymmetric part vanishes; read the axis from the
        // symmetric part instead.
        let sym = (r + r.transpose()) * 0.5;
        let one_minus_cos = 1.0 - cos;
        let diag = Vector3::new(
            (sym[(0, 0)] - cos) / one_minus_cos,
            (sym[(1, 1)] - cos) / one_minus_cos,
            (sym[(2, 2)] - cos) / one_minus_cos,
        );
        let k = diag.imax();
        let ak = diag[k].max(0.0).sqrt();
        let mut axis = Vector3::zeros();
        for j in 0..3 {
            axis[j] = if j == k {
                ak
            } else {
                sym[(j, k)] / (one_minus_cos * ak)
            };
        }
        axis /= axis.norm();
        // Below rounding level the sign of v is noise; keep the
        // largest-component-positive axis.
        if sin > 1e-10 && axis.dot(&v) < 0.0 {
            axis = -axis;
        }
        return axis * angle;
    }
    if sin < 1e-8 {
        // angle / sin(angle) ~ 1 + angle^2 / 6
        return v * (1.0 + angle * angle / 6.0);
    }
    v * (angle / sin)
}

/// Rotation matrix of an angle-axis vector (Rodrigues).
pub fn rotation_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let angle = w.norm();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    let k = w / angle;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}
