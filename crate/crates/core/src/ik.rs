//! Jacobians, damped least squares and the iterate-to-pose loop.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{invalid_arg, KinematicsError, Result};
use crate::kinematics::{
    classic_forward, link_transform, pose_error, rotation_log, ArmLayout, ChainPose,
    FullConfiguration, HomTransform, Twist,
};
use crate::sector::{
    arc_point, arc_ratio, arc_ratio_derivative, closed_form_domain, reduced_forward,
    ReducedConfiguration, ReducedPose, SectorDecomposition, VarKind,
};

/// What a Jacobian column differentiates with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnLabel {
    /// Classic mode: one joint of one link (`HeadPhi` is the twist,
    /// `HeadTheta` the bend).
    Link { link: usize, kind: VarKind },
    /// Reduced mode: one variable of one sector.
    Sector { sector: usize, kind: VarKind },
    /// Column of a matrix supplied directly by the caller.
    Raw(usize),
}

/// `6 x m` matrix: rows 0..3 linear velocity, rows 3..6 angular velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<ColumnLabel>,
}

impl Jacobian {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let labels = (0..matrix.ncols()).map(ColumnLabel::Raw).collect();
        Self { matrix, labels }
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows used by `mode`: all six, or the three linear rows.
    pub fn task_rows(&self, mode: TargetMode) -> DMatrix<f64> {
        match mode {
            TargetMode::Pose => self.matrix.clone(),
            TargetMode::PositionOnly => self.matrix.rows(0, 3).into_owned(),
        }
    }

    fn with_capacity(cols: usize) -> (DMatrix<f64>, Vec<ColumnLabel>) {
        (DMatrix::zeros(6, cols), Vec::with_capacity(cols))
    }
}

/// How the shared body bend is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BodyColumnRule {
    /// Sum of the elementary columns of every body joint (the total derivative).
    #[default]
    ChainRuleSum,
    /// Only the last body joint's column. Diagnostics only; it does not match
    /// the finite-difference derivative for bodies longer than one link.
    LastJointOnly,
}

#[inline]
fn set_column(m: &mut DMatrix<f64>, col: usize, linear: &Vector3<f64>, angular: &Vector3<f64>) {
    let mut c = m.column_mut(col);
    c[0] = linear.x;
    c[1] = linear.y;
    c[2] = linear.z;
    c[3] = angular.x;
    c[4] = angular.y;
    c[5] = angular.z;
}

/// Linear and angular parts of one Jacobian column.
type JointColumn = (Vector3<f64>, Vector3<f64>);

/// Twist and bend columns of a fully articulated link entered at `frame`.
///
/// The twist block rotates by `-phi` about z and the bend block by `-theta`
/// about x, so the joint axes are `-z` and `-x` of the respective frames.
#[inline]
fn link_columns(frame: &HomTransform, phi: f64, end: &Vector3<f64>) -> (JointColumn, JointColumn) {
    let r = &frame.rotation;
    let lever = end - frame.translation;
    let twist_axis = -r.column(2).into_owned();
    let (s, c) = phi.sin_cos();
    let bend_axis = -(r.column(0) * c - r.column(1) * s);
    (
        (twist_axis.cross(&lever), twist_axis),
        (bend_axis.cross(&lever), bend_axis),
    )
}

/// Classic geometric Jacobian from a cached [`ChainPose`]; one column pair
/// per functional link, none for damaged links.
pub fn classic_jacobian(
    layout: &ArmLayout,
    q: &FullConfiguration,
    pose: &ChainPose,
) -> Result<Jacobian> {
    if !pose.matches(q.values()) || pose.frames.len() != layout.num_links() + 1 {
        return Err(KinematicsError::InvalidState(
            "chain pose was computed for a different configuration".into(),
        ));
    }
    let functional = layout.functional_links();
    let (mut m, mut labels) = Jacobian::with_capacity(2 * functional);
    let end = pose.end_effector.translation;
    let mut col = 0;
    for link in 0..layout.num_links() {
        if !layout.mode(link).is_functional() {
            continue;
        }
        let (twist, bend) = link_columns(&pose.frames[link], q.phi(link), &end);
        set_column(&mut m, col, &twist.0, &twist.1);
        set_column(&mut m, col + 1, &bend.0, &bend.1);
        labels.push(ColumnLabel::Link {
            link,
            kind: VarKind::HeadPhi,
        });
        labels.push(ColumnLabel::Link {
            link,
            kind: VarKind::HeadTheta,
        });
        col += 2;
    }
    Ok(Jacobian { matrix: m, labels })
}

/// [`classic_forward`] followed by [`classic_jacobian`].
pub fn classic_jacobian_at(layout: &ArmLayout, q: &FullConfiguration) -> Result<Jacobian> {
    let pose = classic_forward(layout, q)?;
    classic_jacobian(layout, q, &pose)
}

/// Textbook variant that rebuilds every joint frame from the base, costing
/// O(N^2) transform products. Used as the uncached benchmark baseline.
pub fn classic_jacobian_naive(layout: &ArmLayout, q: &FullConfiguration) -> Result<Jacobian> {
    let n = layout.num_links();
    if q.len() != 2 * n {
        return Err(invalid_arg(format!(
            "configuration has {} values, layout needs {}",
            q.len(),
            2 * n
        )));
    }
    let d = layout.link_length();
    let frame_at = |upto: usize| {
        let mut t = HomTransform::identity();
        for link in 0..upto {
            let (phi, theta) = layout.effective_angles(link, q.values());
            t = t.compose(&link_transform(phi, theta, d));
        }
        t
    };
    let end = frame_at(n).translation;
    let functional = layout.functional_links();
    let (mut m, mut labels) = Jacobian::with_capacity(2 * functional);
    let mut col = 0;
    for link in 0..n {
        if !layout.mode(link).is_functional() {
            continue;
        }
        let frame = frame_at(link);
        let (twist, bend) = link_columns(&frame, q.phi(link), &end);
        set_column(&mut m, col, &twist.0, &twist.1);
        set_column(&mut m, col + 1, &bend.0, &bend.1);
        labels.push(ColumnLabel::Link {
            link,
            kind: VarKind::HeadPhi,
        });
        labels.push(ColumnLabel::Link {
            link,
            kind: VarKind::HeadTheta,
        });
        col += 2;
    }
    Ok(Jacobian { matrix: m, labels })
}

/// Body-bend column as the explicit sum over body joints. Exact for any
/// angle; used outside the closed-form domain and as a test oracle.
pub(crate) fn body_column_by_summation(
    body_start: &HomTransform,
    theta: f64,
    u: usize,
    d: f64,
    end: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let axis = -body_start.rotation.column(0).into_owned();
    let step = link_transform(0.0, theta, d);
    let mut frame = *body_start;
    let mut linear = Vector3::zeros();
    for _ in 0..u {
        linear += axis.cross(&(end - frame.translation));
        frame = frame.compose(&step);
    }
    (linear, axis * u as f64)
}

/// Total derivative of the end-effector with respect to a body's shared bend.
///
/// All body joints turn about the same axis `a = -x` of the body frame, so the
/// sum of their columns is `d(chord)/d(theta)` rotated into the world plus
/// `u * a x (p_e - p_body_end)`.
fn body_column_closed(
    body_start: &HomTransform,
    body_end: &Vector3<f64>,
    theta: f64,
    u: usize,
    d: f64,
    end: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let axis = -body_start.rotation.column(0).into_owned();
    let ratio = arc_ratio(u, theta);
    let ratio_prime = arc_ratio_derivative(u, theta);
    let half = 0.5 * (u as f64 + 1.0);
    let (s, c) = (half * theta).sin_cos();
    let chord_rate = Vector3::new(
        0.0,
        d * (ratio_prime * s + ratio * half * c),
        d * (ratio_prime * c - ratio * half * s),
    );
    let uf = u as f64;
    let linear = body_start.rotation * chord_rate + axis.cross(&(end - body_end)) * uf;
    (linear, axis * uf)
}

/// Reduced Jacobian from a cached [`ReducedPose`]: two columns per sector
/// plus one for the body bend when the sector has a body.
pub fn reduced_jacobian(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q: &ReducedConfiguration,
    pose: &ReducedPose,
) -> Result<Jacobian> {
    reduced_jacobian_with_rule(decomp, layout, q, pose, BodyColumnRule::ChainRuleSum)
}

pub fn reduced_jacobian_with_rule(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q: &ReducedConfiguration,
    pose: &ReducedPose,
    rule: BodyColumnRule,
) -> Result<Jacobian> {
    if !pose.matches(q.values()) || pose.sectors.len() != decomp.sectors().len() {
        return Err(KinematicsError::InvalidState(
            "reduced pose was computed for a different configuration".into(),
        ));
    }
    let d = layout.link_length();
    let v = q.values();
    let (mut m, mut labels) = Jacobian::with_capacity(decomp.num_vars());
    let end = pose.end_effector.translation;
    for (t, (sector, frames)) in decomp.sectors().iter().zip(&pose.sectors).enumerate() {
        let col = sector.offset;
        let (twist, bend) = link_columns(&frames.start, v[col], &end);
        set_column(&mut m, col, &twist.0, &twist.1);
        set_column(&mut m, col + 1, &bend.0, &bend.1);
        labels.push(ColumnLabel::Sector {
            sector: t,
            kind: VarKind::HeadPhi,
        });
        labels.push(ColumnLabel::Sector {
            sector: t,
            kind: VarKind::HeadTheta,
        });
        if !sector.has_body() {
            continue;
        }
        let theta = v[col + 2];
        let u = sector.body_count;
        let (linear, angular) = match rule {
            BodyColumnRule::ChainRuleSum if closed_form_domain(theta, u) => body_column_closed(
                &frames.body_start,
                &frames.end.translation,
                theta,
                u,
                d,
                &end,
            ),
            BodyColumnRule::ChainRuleSum => {
                body_column_by_summation(&frames.body_start, theta, u, d, &end)
            }
            BodyColumnRule::LastJointOnly => {
                let axis = -frames.body_start.rotation.column(0).into_owned();
                let joint = frames.body_start.translation
                    + frames.body_start.rotation * arc_point(u - 1, theta, d);
                (axis.cross(&(end - joint)), axis)
            }
        };
        set_column(&mut m, col + 2, &linear, &angular);
        labels.push(ColumnLabel::Sector {
            sector: t,
            kind: VarKind::BodyTheta,
        });
    }
    Ok(Jacobian { matrix: m, labels })
}

/// [`reduced_forward`] followed by [`reduced_jacobian`].
pub fn reduced_jacobian_at(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q: &ReducedConfiguration,
) -> Result<Jacobian> {
    let pose = reduced_forward(decomp, layout, q)?;
    reduced_jacobian(decomp, layout, q, &pose)
}

/// Upper triangle of `J J^T + k^2 I`, filled symmetric.
fn damped_gram(j: &DMatrix<f64>, k: f64) -> DMatrix<f64> {
    let r = j.nrows();
    let mut g = DMatrix::<f64>::zeros(r, r);
    for col in j.column_iter() {
        for a in 0..r {
            let ca = col[a];
            for b in a..r {
                g[(a, b)] += ca * col[b];
            }
        }
    }
    for a in 0..r {
        g[(a, a)] += k * k;
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

fn factor(j: &DMatrix<f64>, k: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(invalid_arg(format!(
            "damping must be non-negative, got {k}"
        )));
    }
    let g = damped_gram(j, k);
    let scale = g.diagonal().amax();
    let chol = g.cholesky().ok_or(KinematicsError::SingularSystem)?;
    if k == 0.0 {
        let l = chol.l_dirty();
        let tiny = 1e-13 * scale;
        if scale == 0.0 || (0..l.nrows()).any(|i| l[(i, i)] * l[(i, i)] <= tiny) {
            return Err(KinematicsError::SingularSystem);
        }
    }
    Ok(chol)
}

/// `J^T (J J^T + k^2 I)^{-1}` through a Cholesky solve of the small
/// row-space system. Returns an `m x rows` matrix.
pub fn damped_pseudo_inverse(j: &DMatrix<f64>, k: f64) -> Result<DMatrix<f64>> {
    let chol = factor(j, k)?;
    Ok(chol.solve(j).transpose())
}

/// `J^T (J J^T + k^2 I)^{-1} rhs` without forming the pseudo-inverse.
pub fn dls_velocity(j: &DMatrix<f64>, k: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if rhs.len() != j.nrows() {
        return Err(invalid_arg(format!(
            "task vector has {} rows, Jacobian has {}",
            rhs.len(),
            j.nrows()
        )));
    }
    let chol = factor(j, k)?;
    let y = chol.solve(rhs);
    Ok(DVector::from_iterator(
        j.ncols(),
        j.column_iter().map(|c| c.dot(&y)),
    ))
}

/// Tracking task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// Position and orientation (6 rows).
    #[default]
    Pose,
    /// Position only (3 rows).
    PositionOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// DLS damping factor `k`.
    pub damping: f64,
    /// Integration step.
    pub dt: f64,
    pub max_iterations: usize,
    pub position_tolerance: f64,
    /// Radians.
    pub orientation_tolerance: f64,
    pub stall_window: usize,
    pub stall_epsilon: f64,
    /// Cap on the norm of the joint velocity before it is scaled by `dt`.
    pub step_clamp: f64,
}

impl SolverSettings {
    /// Defaults with the position tolerance scaled to the arm: `1e-4 * N * d`.
    pub fn for_arm(num_links: usize, link_length: f64) -> Self {
        Self {
            position_tolerance: 1e-4 * num_links as f64 * link_length,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("position_tolerance", self.position_tolerance),
            ("orientation_tolerance", self.orientation_tolerance),
            ("step_clamp", self.step_clamp),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid_arg(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(invalid_arg(format!(
                "damping must be non-negative, got {}",
                self.damping
            )));
        }
        if !(self.stall_epsilon >= 0.0) {
            return Err(invalid_arg("stall_epsilon must be non-negative"));
        }
        if self.max_iterations == 0 || self.stall_window == 0 {
            return Err(invalid_arg(
                "max_iterations and stall_window must be positive",
            ));
        }
        Ok(())
    }
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            damping: 0.1,
            dt: 1.0,
            max_iterations: 2000,
            position_tolerance: 1e-4,
            orientation_tolerance: 1e-3,
            stall_window: 50,
            stall_epsilon: 1e-12,
            step_clamp: 0.5,
        }
    }
}

fn task_vector(u_e: &Twist, mode: TargetMode) -> DVector<f64> {
    match mode {
        TargetMode::Pose => DVector::from_row_slice(&u_e.to_array()),
        TargetMode::PositionOnly => DVector::from_row_slice(u_e.linear.as_slice()),
    }
}

/// One Euler step `Q' = Q + clamp(J* u_e) * dt`.
pub fn ik_step(
    q: &ReducedConfiguration,
    j: &Jacobian,
    u_e: &Twist,
    settings: &SolverSettings,
    mode: TargetMode,
) -> Result<ReducedConfiguration> {
    if j.ncols() != q.len() {
        return Err(invalid_arg(format!(
            "Jacobian has {} columns, configuration has {} values",
            j.ncols(),
            q.len()
        )));
    }
    let rows = j.task_rows(mode);
    let mut rate = dls_velocity(&rows, settings.damping, &task_vector(u_e, mode))?;
    let norm = rate.norm();
    if norm > settings.step_clamp {
        rate *= settings.step_clamp / norm;
    }
    let mut next = q.clone();
    for (value, r) in next.values_mut().iter_mut().zip(rate.iter()) {
        *value += r * settings.dt;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Error improved by less than `stall_epsilon` over `stall_window` iterations.
    Stalled,
    MaxIterations,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::Stalled => "stalled",
            SolveStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub position_error: f64,
    /// Zero in position-only mode.
    pub orientation_error: f64,
    pub configuration: ReducedConfiguration,
    /// Every iterate, starting with the initial configuration, when recorded.
    pub trajectory: Option<Vec<ReducedConfiguration>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveOptions {
    pub mode: TargetMode,
    pub record_trajectory: bool,
    pub body_rule: BodyColumnRule,
}

/// Iterates forward kinematics, pose error, Jacobian, DLS and an Euler step
/// until the tolerances are met, progress stalls or the iteration budget
/// runs out. Damaged links are outside `Q` and never move.
pub fn solve_to_pose(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q0: &ReducedConfiguration,
    target: &HomTransform,
    settings: &SolverSettings,
    options: &SolveOptions,
) -> Result<SolveReport> {
    settings.validate()?;
    if decomp.num_vars() == 0 {
        return Err(KinematicsError::NoFunctionalDofs);
    }
    let mut q = q0.clone();
    let mut trajectory = options.record_trajectory.then(|| vec![q.clone()]);
    let mut history: Vec<f64> = Vec::new();
    let mut iteration = 0;
    loop {
        let pose = reduced_forward(decomp, layout, &q)?;
        let error = pose_error(&pose.end_effector, target);
        let position_error = error.linear.norm();
        let orientation_error = match options.mode {
            TargetMode::Pose => error.angular.norm(),
            TargetMode::PositionOnly => 0.0,
        };
        let finish = |status| SolveReport {
            status,
            iterations: iteration,
            position_error,
            orientation_error,
            configuration: q.clone(),
            trajectory: trajectory.clone(),
        };
        if position_error <= settings.position_tolerance
            && orientation_error <= settings.orientation_tolerance
        {
            return Ok(finish(SolveStatus::Converged));
        }
        if iteration >= settings.max_iterations {
            return Ok(finish(SolveStatus::MaxIterations));
        }
        let metric = position_error + orientation_error;
        history.push(metric);
        if history.len() > settings.stall_window {
            let before = history[history.len() - 1 - settings.stall_window];
            if before - metric < settings.stall_epsilon {
                return Ok(finish(SolveStatus::Stalled));
            }
        }
        let j = reduced_jacobian_with_rule(decomp, layout, &q, &pose, options.body_rule)?;
        q = ik_step(&q, &j, &error, settings, options.mode)?;
        if let Some(t) = trajectory.as_mut() {
            t.push(q.clone());
        }
        iteration += 1;
    }
}

/// Central-difference Jacobian of a transform-valued map: position rows
/// from the translation, angular rows from the angle-axis of
/// `R(x + h) R(x - h)^T`.
pub fn finite_difference_jacobian_with<F>(x: &[f64], h: f64, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> HomTransform,
{
    let mut m = DMatrix::zeros(6, x.len());
    let mut probe = x.to_vec();
    for col in 0..x.len() {
        probe[col] = x[col] + h;
        let plus = f(&probe);
        probe[col] = x[col] - h;
        let minus = f(&probe);
        probe[col] = x[col];
        let linear = (plus.translation - minus.translation) / (2.0 * h);
        let relative: Matrix3<f64> = plus.rotation * minus.rotation.transpose();
        let angular = rotation_log(&relative) / (2.0 * h);
        set_column(&mut m, col, &linear, &angular);
    }
    m
}

/// Finite-difference counterpart of [`reduced_jacobian`].
pub fn finite_difference_jacobian(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q: &ReducedConfiguration,
    h: f64,
) -> Result<Jacobian> {
    if !(h > 0.0) {
        return Err(invalid_arg(format!("step must be positive, got {h}")));
    }
    // Validates lengths once; the closure below cannot fail afterwards.
    reduced_forward(decomp, layout, q)?;
    let matrix = finite_difference_jacobian_with(q.values(), h, |x| {
        let probe = ReducedConfiguration::new(x.to_vec()).expect("finite probe");
        reduced_forward(decomp, layout, &probe)
            .expect("validated lengths")
            .end_effector
    });
    let labels = (0..q.len())
        .map(|i| {
            let (sector, kind) = decomp.slot(i);
            ColumnLabel::Sector { sector, kind }
        })
        .collect();
    Ok(Jacobian { matrix, labels })
}

/// Finite-difference counterpart of [`classic_jacobian`], over the joints of
/// functional links only.
pub fn classic_finite_difference_jacobian(
    layout: &ArmLayout,
    q: &FullConfiguration,
    h: f64,
) -> Result<Jacobian> {
    if !(h > 0.0) {
        return Err(invalid_arg(format!("step must be positive, got {h}")));
    }
    classic_forward(layout, q)?;
    let positions: Vec<usize> = (0..layout.num_links())
        .filter(|&l| layout.mode(l).is_functional())
        .flat_map(|l| [2 * l, 2 * l + 1])
        .collect();
    let x: Vec<f64> = positions.iter().map(|&p| q.values()[p]).collect();
    let mut full = q.values().to_vec();
    let matrix = finite_difference_jacobian_with(&x, h, |x| {
        for (&p, &value) in positions.iter().zip(x) {
            full[p] = value;
        }
        let probe = FullConfiguration::new(full.clone()).expect("finite probe");
        classic_forward(layout, &probe)
            .expect("validated lengths")
            .end_effector
    });
    let labels = positions
        .iter()
        .map(|&p| ColumnLabel::Link {
            link: p / 2,
            kind: if p % 2 == 0 {
                VarKind::HeadPhi
            } else {
                VarKind::HeadTheta
            },
        })
        .collect();
    Ok(Jacobian { matrix, labels })
}

/// `max_j |a_j - b_j| / |b_j|` over columns, with `b` the reference.
pub fn max_relative_column_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "Jacobian shapes differ");
    a.column_iter()
        .zip(b.column_iter())
        .map(|(ca, cb)| {
            let scale = cb.norm().max(f64::MIN_POSITIVE);
            (ca - cb).norm() / scale
        })
        .fold(0.0, f64::max)
}
