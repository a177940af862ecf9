//! Sector decomposition of the arm and the reduced forward kinematics.
//!
//! A sector is a head link (free twist and bend) followed by an optional
//! body of `u` links whose twists are pinned at zero and which all share a
//! single bend angle. Damaged links sit between sectors at frozen angles.
//! The reduced configuration `Q` holds `[phi_h, theta_h, (theta_b)]` per
//! sector in link order.
//!
//! A body of `u` equal links with equal bends `theta` traces a circular arc,
//! so its product collapses to one matrix: a bend rotation of `u * theta`
//! and a chord of signed length `d * sin(u theta / 2) / sin(theta / 2)`
//! pointing at `(u + 1) * theta / 2` in the y-z plane.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{invalid_arg, KinematicsError, Result};
use crate::kinematics::{
    bend_rotation, bend_translation, link_transform, twist_rotation, ArmLayout, FullConfiguration,
    HomTransform, LinkMode,
};

/// Which joint value a reduced variable drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    HeadPhi,
    HeadTheta,
    BodyTheta,
}

/// Structural part of a sector. `first_link` is zero-based; the sector
/// covers links `first_link ..= first_link + body_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sector {
    pub first_link: usize,
    pub body_count: usize,
    /// Position of `phi_h` inside the reduced configuration.
    pub offset: usize,
}

impl Sector {
    pub fn has_body(&self) -> bool {
        self.body_count > 0
    }

    pub fn num_vars(&self) -> usize {
        if self.has_body() {
            3
        } else {
            2
        }
    }

    pub fn last_link(&self) -> usize {
        self.first_link + self.body_count
    }
}

/// Sector together with its current angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorRecord {
    pub first_link: usize,
    pub body_count: usize,
    pub phi_head: f64,
    pub theta_head: f64,
    pub theta_body: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment {
    Damaged(usize),
    Sector(usize),
}

/// Sector list, damaged-link list and the correspondence between reduced
/// variables and joint slots, all derived from a layout's mode vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorDecomposition {
    num_links: usize,
    sectors: Vec<Sector>,
    damaged: Vec<usize>,
    segments: Vec<Segment>,
    slots: Vec<(usize, VarKind)>,
}

impl SectorDecomposition {
    pub fn new(layout: &ArmLayout) -> Self {
        let modes = layout.modes();
        let mut sectors: Vec<Sector> = Vec::new();
        let mut damaged = Vec::new();
        let mut segments = Vec::new();
        let mut slots = Vec::new();
        for (link, mode) in modes.iter().enumerate() {
            match mode {
                LinkMode::Head => {
                    let offset = slots.len();
                    let index = sectors.len();
                    sectors.push(Sector {
                        first_link: link,
                        body_count: 0,
                        offset,
                    });
                    segments.push(Segment::Sector(index));
                    slots.push((index, VarKind::HeadPhi));
                    slots.push((index, VarKind::HeadTheta));
                }
                LinkMode::Body => {
                    // ArmLayout guarantees a head precedes every body run.
                    let index = sectors.len() - 1;
                    let sector = &mut sectors[index];
                    if sector.body_count == 0 {
                        slots.push((index, VarKind::BodyTheta));
                    }
                    sector.body_count += 1;
                }
                LinkMode::Damaged => {
                    damaged.push(link);
                    segments.push(Segment::Damaged(link));
                }
            }
        }
        Self {
            num_links: modes.len(),
            sectors,
            damaged,
            segments,
            slots,
        }
    }

    pub fn num_links(&self) -> usize {
        self.num_links
    }

    pub fn sectors(&self) -> &[Sector] {
        &self.sectors
    }

    /// Zero-based indices of damaged links, increasing.
    pub fn damaged(&self) -> &[usize] {
        &self.damaged
    }

    /// Length of the reduced configuration.
    pub fn num_vars(&self) -> usize {
        self.slots.len()
    }

    /// Sector and role of reduced variable `index`.
    pub fn slot(&self, index: usize) -> (usize, VarKind) {
        self.slots[index]
    }

    /// Positions in the full configuration driven by reduced variable `index`.
    pub fn q_positions(&self, index: usize) -> Vec<usize> {
        let (t, kind) = self.slots[index];
        let s = self.sectors[t];
        match kind {
            VarKind::HeadPhi => vec![2 * s.first_link],
            VarKind::HeadTheta => vec![2 * s.first_link + 1],
            VarKind::BodyTheta => (1..=s.body_count)
                .map(|k| 2 * (s.first_link + k) + 1)
                .collect(),
        }
    }

    /// Sector records (`[i_t, u_t, phi_h, theta_h, theta_b]`) at `q`.
    pub fn records(&self, q: &ReducedConfiguration) -> Result<Vec<SectorRecord>> {
        self.check_len(q)?;
        let v = q.values();
        Ok(self
            .sectors
            .iter()
            .map(|s| SectorRecord {
                first_link: s.first_link,
                body_count: s.body_count,
                phi_head: v[s.offset],
                theta_head: v[s.offset + 1],
                theta_body: s.has_body().then(|| v[s.offset + 2]),
            })
            .collect())
    }

    /// Largest sector size (head plus body).
    pub fn max_sector_size(&self) -> usize {
        self.sectors
            .iter()
            .map(|s| s.body_count + 1)
            .max()
            .unwrap_or(1)
    }

    fn check_len(&self, q: &ReducedConfiguration) -> Result<()> {
        if q.len() != self.num_vars() {
            return Err(invalid_arg(format!(
                "reduced configuration has {} values, decomposition needs {}",
                q.len(),
                self.num_vars()
            )));
        }
        Ok(())
    }

    fn check_layout(&self, layout: &ArmLayout) -> Result<()> {
        if layout.num_links() != self.num_links {
            return Err(invalid_arg(format!(
                "decomposition covers {} links, layout has {}",
                self.num_links,
                layout.num_links()
            )));
        }
        Ok(())
    }

    /// Reduced configuration read off `q`; see [`project_configuration`].
    pub fn project(&self, q: &FullConfiguration) -> Result<ReducedConfiguration> {
        if q.len() != 2 * self.num_links {
            return Err(invalid_arg(format!(
                "configuration has {} values, layout needs {}",
                q.len(),
                2 * self.num_links
            )));
        }
        let mut out = Vec::with_capacity(self.num_vars());
        for s in &self.sectors {
            out.push(q.phi(s.first_link));
            out.push(q.theta(s.first_link));
            if s.has_body() {
                let shared = q.theta(s.first_link + 1);
                for link in s.first_link + 1..=s.last_link() {
                    if q.phi(link).abs() > BODY_TOLERANCE {
                        return Err(KinematicsError::InconsistentConfiguration(format!(
                            "body link {link} has nonzero twist {}",
                            q.phi(link)
                        )));
                    }
                    if (q.theta(link) - shared).abs() > BODY_TOLERANCE {
                        return Err(KinematicsError::InconsistentConfiguration(format!(
                            "body link {link} bends by {} but its body shares {}",
                            q.theta(link),
                            shared
                        )));
                    }
                }
                out.push(shared);
            }
        }
        Ok(ReducedConfiguration(out))
    }
}

const BODY_TOLERANCE: f64 = 1e-12;

/// Reduced configuration `[phi_h1, theta_h1, (theta_b1), phi_h2, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedConfiguration(Vec<f64>);

impl ReducedConfiguration {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid_arg(format!("reduced value {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
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
}

/// Builds the decomposition for `layout` and reads the reduced
/// configuration off `q`.
pub fn decompose(
    layout: &ArmLayout,
    q: &FullConfiguration,
) -> Result<(SectorDecomposition, ReducedConfiguration)> {
    let decomp = SectorDecomposition::new(layout);
    let reduced = decomp.project(q)?;
    Ok((decomp, reduced))
}

/// Inverse of [`expand_configuration`]: extracts `Q` from a configuration
/// that satisfies the sector constraints of `layout`.
pub fn project_configuration(
    layout: &ArmLayout,
    q: &FullConfiguration,
) -> Result<ReducedConfiguration> {
    SectorDecomposition::new(layout).project(q)
}

/// Writes `Q` back into joint slots: heads get `(phi_h, theta_h)`, body
/// links `(0, theta_b)`, damaged links their frozen angles.
pub fn expand_configuration(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q: &ReducedConfiguration,
) -> Result<FullConfiguration> {
    decomp.check_layout(layout)?;
    decomp.check_len(q)?;
    let v = q.values();
    let mut out = vec![0.0; 2 * decomp.num_links];
    for s in &decomp.sectors {
        out[2 * s.first_link] = v[s.offset];
        out[2 * s.first_link + 1] = v[s.offset + 1];
        for link in s.first_link + 1..=s.last_link() {
            out[2 * link] = 0.0;
            out[2 * link + 1] = v[s.offset + 2];
        }
    }
    for &link in &decomp.damaged {
        let frozen = layout
            .frozen_angles(link)
            .ok_or_else(|| invalid_arg(format!("damaged link {link} has no frozen angles")))?;
        out[2 * link] = frozen.phi;
        out[2 * link + 1] = frozen.theta;
    }
    FullConfiguration::new(out)
}

/// Head link transform: twist then bend.
pub fn head_transform(phi: f64, theta: f64, d: f64) -> Result<HomTransform> {
    Ok(twist_rotation(phi)?.compose(&bend_translation(theta, d)?))
}

/// Transform of a damaged link held at `(phi, theta)`.
pub fn damaged_transform(phi: f64, theta: f64, d: f64) -> Result<HomTransform> {
    Ok(twist_rotation(phi)?.compose(&bend_translation(theta, d)?))
}

/// `sin(k x / 2) / sin(x / 2)`, i.e. the chord of `k` unit links bending by
/// `x` each, signed so that it stays continuous through the straight pose.
pub(crate) fn arc_ratio(k: usize, x: f64) -> f64 {
    if k <= 1 {
        return k as f64;
    }
    let kf = k as f64;
    if x.abs() < 1e-6 && kf * x.abs() < 0.1 {
        let x2 = x * x;
        let k2 = kf * kf;
        return kf
            * (1.0 - (k2 - 1.0) * x2 / 24.0 + (k2 - 1.0) * (3.0 * k2 - 7.0) * x2 * x2 / 5760.0);
    }
    (0.5 * kf * x).sin() / (0.5 * x).sin()
}

/// Derivative of [`arc_ratio`] with respect to `x`.
pub(crate) fn arc_ratio_derivative(k: usize, x: f64) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    let kf = k as f64;
    if (kf * x).abs() < 1e-3 {
        let k2 = kf * kf;
        return kf * (-(k2 - 1.0) * x / 12.0 + (k2 - 1.0) * (3.0 * k2 - 7.0) * x * x * x / 1440.0);
    }
    let (sh, ch) = (0.5 * x).sin_cos();
    let (sk, ck) = (0.5 * kf * x).sin_cos();
    (0.5 * kf * ck * sh - 0.5 * sk * ch) / (sh * sh)
}

/// Position reached after `k` body links, in the body's starting frame.
#[inline]
pub(crate) fn arc_point(k: usize, theta: f64, d: f64) -> Vector3<f64> {
    let chord = d * arc_ratio(k, theta);
    let direction = 0.5 * (k as f64 + 1.0) * theta;
    let (s, c) = direction.sin_cos();
    Vector3::new(0.0, chord * s, chord * c)
}

/// Straight-line distance spanned by a body of `u` links of length `d`, each
/// bending by `theta`. Signed: it turns negative once the arc passes a half
/// circle, which keeps the closed-form body transform valid on its whole
/// domain.
pub fn chord_length(theta: f64, u: usize, d: f64) -> Result<f64> {
    if u == 0 {
        return Err(invalid_arg("a body has at least one link"));
    }
    if !(d > 0.0 && d.is_finite()) || !theta.is_finite() {
        return Err(invalid_arg(format!(
            "chord needs finite theta and positive d, got theta={theta} d={d}"
        )));
    }
    Ok(d * arc_ratio(u, theta))
}

/// Product of `u` bend transforms with zero twist.
pub fn body_transform_iterative(theta: f64, u: usize, d: f64) -> Result<HomTransform> {
    if u == 0 {
        return Err(invalid_arg("a body has at least one link"));
    }
    let step = bend_translation(theta, d)?;
    Ok(iterate_bends(&step, u))
}

fn iterate_bends(step: &HomTransform, u: usize) -> HomTransform {
    let mut acc = *step;
    for _ in 1..u {
        acc = acc.compose(step);
    }
    acc
}

/// Closed form applies while `(u - 1) * |theta| < 2 pi`.
pub fn closed_form_domain(theta: f64, u: usize) -> bool {
    (u.saturating_sub(1) as f64) * theta.abs() < 2.0 * PI
}

/// Result of [`body_transform_closed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyTransform {
    pub transform: HomTransform,
    /// Set when the angle left the closed-form domain and the iterative
    /// product was used instead.
    pub fallback: bool,
}

/// Single-matrix body transform: bend rotation by `u * theta` and a chord
/// translation at angle `(u + 1) * theta / 2`.
pub fn body_transform_closed(theta: f64, u: usize, d: f64) -> Result<BodyTransform> {
    if u == 0 {
        return Err(invalid_arg("a body has at least one link"));
    }
    if !(d > 0.0 && d.is_finite()) || !theta.is_finite() {
        return Err(invalid_arg(format!(
            "body needs finite theta and positive d, got theta={theta} d={d}"
        )));
    }
    Ok(body_closed_unchecked(theta, u, d))
}

#[inline]
fn body_closed_unchecked(theta: f64, u: usize, d: f64) -> BodyTransform {
    if !closed_form_domain(theta, u) {
        let step = link_transform(0.0, theta, d);
        return BodyTransform {
            transform: iterate_bends(&step, u),
            fallback: true,
        };
    }
    BodyTransform {
        transform: HomTransform::new(bend_rotation(u as f64 * theta), arc_point(u, theta, d)),
        fallback: false,
    }
}

/// Cached frames of one sector, for Jacobian assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorFrames {
    /// Frame entering the head link.
    pub start: HomTransform,
    /// Frame after the head; the body (if any) starts here.
    pub body_start: HomTransform,
    /// Frame at the end of the sector.
    pub end: HomTransform,
}

/// Reduced forward kinematics with per-sector frames retained.
#[derive(Debug, Clone)]
pub struct ReducedPose {
    pub end_effector: HomTransform,
    pub sectors: Vec<SectorFrames>,
    /// Number of bodies evaluated outside the closed-form domain.
    pub fallbacks: usize,
    pub(crate) source: Vec<f64>,
}

impl ReducedPose {
    pub fn matches(&self, q: &[f64]) -> bool {
        self.source.len() == q.len()
            && self
                .source
                .iter()
                .zip(q)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

struct SectorParts {
    head: HomTransform,
    body: Option<BodyTransform>,
}

fn sector_parts(s: &Sector, v: &[f64], d: f64) -> SectorParts {
    let head = link_transform(v[s.offset], v[s.offset + 1], d);
    let body = s
        .has_body()
        .then(|| body_closed_unchecked(v[s.offset + 2], s.body_count, d));
    SectorParts { head, body }
}

fn chain_parts(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q: &ReducedConfiguration,
    parts: &[SectorParts],
) -> ReducedPose {
    let d = layout.link_length();
    let mut current = HomTransform::identity();
    let mut frames = Vec::with_capacity(decomp.sectors.len());
    let mut fallbacks = 0;
    for segment in &decomp.segments {
        match *segment {
            Segment::Damaged(link) => {
                // Presence checked by ArmLayout::new.
                let (phi, theta) = layout
                    .frozen_angles(link)
                    .map_or((0.0, 0.0), |a| (a.phi, a.theta));
                current = current.compose(&link_transform(phi, theta, d));
            }
            Segment::Sector(t) => {
                let start = current;
                let p = &parts[t];
                let body_start = start.compose(&p.head);
                current = match &p.body {
                    Some(body) => {
                        fallbacks += usize::from(body.fallback);
                        body_start.compose(&body.transform)
                    }
                    None => body_start,
                };
                frames.push(SectorFrames {
                    start,
                    body_start,
                    end: current,
                });
            }
        }
    }
    ReducedPose {
        end_effector: current,
        sectors: frames,
        fallbacks,
        source: q.values().to_vec(),
    }
}

/// End-effector transform from the reduced configuration: damaged-link
/// transforms and sector transforms multiplied in link order.
pub fn reduced_forward(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q: &ReducedConfiguration,
) -> Result<ReducedPose> {
    decomp.check_layout(layout)?;
    decomp.check_len(q)?;
    let d = layout.link_length();
    let v = q.values();
    let parts: Vec<SectorParts> = decomp
        .sectors
        .iter()
        .map(|s| sector_parts(s, v, d))
        .collect();
    Ok(chain_parts(decomp, layout, q, &parts))
}

/// [`reduced_forward`] with the per-sector head and body matrices evaluated
/// on the rayon pool. The chaining itself stays sequential, so the result is
/// bit-identical to the sequential version.
pub fn reduced_forward_parallel(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q: &ReducedConfiguration,
) -> Result<ReducedPose> {
    decomp.check_layout(layout)?;
    decomp.check_len(q)?;
    let d = layout.link_length();
    let v = q.values();
    let parts: Vec<SectorParts> = decomp
        .sectors
        .par_iter()
        .map(|s| sector_parts(s, v, d))
        .collect();
    Ok(chain_parts(decomp, layout, q, &parts))
}

/// Degree-of-freedom counts of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofCount {
    /// Independent variables in `Q`.
    pub control_vars: usize,
    /// Joints that move: both joints of each head plus the bend of every body link.
    pub mobile_joints: usize,
}

pub fn count_dofs(decomp: &SectorDecomposition) -> DofCount {
    let heads = decomp.sectors.len();
    let body: usize = decomp.sectors.iter().map(|s| s.body_count).sum();
    DofCount {
        control_vars: decomp.num_vars(),
        mobile_joints: 2 * heads + body,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{classic_forward, modes_from_codes, FrozenAngles};
    use std::collections::BTreeMap;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    const FIG3: [i64; 16] = [1, -1, -1, 1, 0, 0, 0, 0, -1, 1, 1, 0, 0, 0, -1, 1];

    fn fig3_layout(frozen_angle: f64) -> ArmLayout {
        let modes = modes_from_codes(&FIG3).unwrap();
        let frozen = modes
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == LinkMode::Damaged)
            .map(|(i, _)| (i, FrozenAngles::new(frozen_angle, -frozen_angle)))
            .collect();
        ArmLayout::new(1.0, modes, frozen).unwrap()
    }

    /// Brute-force run-length scan of a code vector into (first, body) pairs.
    fn runs(codes: &[i64]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < codes.len() {
            if codes[i] == 1 {
                let mut j = i + 1;
                while j < codes.len() && codes[j] == 0 {
                    j += 1;
                }
                out.push((i, j - i - 1));
                i = j;
            } else {
                i += 1;
            }
        }
        out
    }

    #[test]
    fn fig3_decomposition() {
        let layout = fig3_layout(0.0);
        let decomp = SectorDecomposition::new(&layout);
        // one-based {2,3,9,15}
        assert_eq!(decomp.damaged(), &[1, 2, 8, 14]);
        let got: Vec<(usize, usize)> = decomp
            .sectors()
            .iter()
            .map(|s| (s.first_link, s.body_count))
            .collect();
        // one-based (1,0) (4,4) (10,0) (11,3) (16,0)
        assert_eq!(got, vec![(0, 0), (3, 4), (9, 0), (10, 3), (15, 0)]);
        assert_eq!(got, runs(&FIG3));
        let dofs = count_dofs(&decomp);
        assert_eq!(dofs.mobile_joints, 17);
        assert_eq!(dofs.control_vars, 12);
    }

    #[test]
    fn all_heads_reduce_to_identity() {
        let layout = ArmLayout::all_heads(5, 0.5).unwrap();
        let q = FullConfiguration::new((0..10).map(|i| 0.1 * i as f64 - 0.4).collect()).unwrap();
        let (decomp, reduced) = decompose(&layout, &q).unwrap();
        assert_eq!(decomp.sectors().len(), 5);
        assert!(decomp.sectors().iter().all(|s| s.body_count == 0));
        assert_eq!(reduced.values(), q.values());
        assert_eq!(
            count_dofs(&decomp),
            DofCount {
                control_vars: 10,
                mobile_joints: 10
            }
        );
        let back = expand_configuration(&decomp, &layout, &reduced).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn partition_covers_every_link_once() {
        let layout = fig3_layout(0.1);
        let decomp = SectorDecomposition::new(&layout);
        let mut seen = vec![0u8; layout.num_links()];
        for s in decomp.sectors() {
            for slot in &mut seen[s.first_link..=s.last_link()] {
                *slot += 1;
            }
        }
        for &link in decomp.damaged() {
            seen[link] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn expand_single_sector() {
        let modes = modes_from_codes(&[1, 0, 0, 0]).unwrap();
        let layout = ArmLayout::new(1.0, modes, BTreeMap::new()).unwrap();
        let decomp = SectorDecomposition::new(&layout);
        let q = ReducedConfiguration::new(vec![0.4, 0.5, 0.6]).unwrap();
        let full = expand_configuration(&decomp, &layout, &q).unwrap();
        assert_eq!(full.values(), &[0.4, 0.5, 0.0, 0.6, 0.0, 0.6, 0.0, 0.6]);
        assert_eq!(decomp.project(&full).unwrap(), q);
        assert_eq!(decomp.q_positions(2), vec![3, 5, 7]);
    }

    #[test]
    fn project_rejects_body_twist() {
        let modes = modes_from_codes(&[1, 0, 0]).unwrap();
        let layout = ArmLayout::new(1.0, modes, BTreeMap::new()).unwrap();
        let q = FullConfiguration::new(vec![0.0, 0.0, 0.1, 0.2, 0.0, 0.2]).unwrap();
        assert!(matches!(
            project_configuration(&layout, &q),
            Err(KinematicsError::InconsistentConfiguration(_))
        ));
        let q = FullConfiguration::new(vec![0.0, 0.0, 0.0, 0.2, 0.0, 0.3]).unwrap();
        assert!(matches!(
            decompose(&layout, &q),
            Err(KinematicsError::InconsistentConfiguration(_))
        ));
    }

    #[test]
    fn expand_rejects_length_mismatch() {
        let layout = fig3_layout(0.0);
        let decomp = SectorDecomposition::new(&layout);
        let q = ReducedConfiguration::zeros(11);
        assert!(expand_configuration(&decomp, &layout, &q).is_err());
        assert!(reduced_forward(&decomp, &layout, &q).is_err());
    }

    #[test]
    fn head_transform_examples() {
        let t = head_transform(0.0, 0.0, 2.0).unwrap();
        assert_eq!(
            t,
            HomTransform::from_translation(Vector3::new(0.0, 0.0, 2.0))
        );
        let direct = twist_rotation(FRAC_PI_2)
            .unwrap()
            .compose(&bend_translation(FRAC_PI_2, 1.0).unwrap());
        assert_eq!(head_transform(FRAC_PI_2, FRAC_PI_2, 1.0).unwrap(), direct);
        for i in 0..20 {
            let t = head_transform(0.3 * i as f64, -0.2 * i as f64, 1.7).unwrap();
            assert!((t.translation.norm() - 1.7).abs() < 1e-14);
        }
    }

    #[test]
    fn damaged_transform_matches_printed_matrix() {
        assert_eq!(
            damaged_transform(0.0, 0.0, 1.0).unwrap(),
            HomTransform::from_translation(Vector3::z())
        );
        for &(phi, theta, d) in &[(PI / 4.0, PI / 6.0, 1.0), (-1.2, 2.2, 0.3)] {
            let b = damaged_transform(phi, theta, d).unwrap();
            let (sp, cp) = phi.sin_cos();
            let (st, ct) = theta.sin_cos();
            let printed = [
                [cp, sp * ct, sp * st, d * sp * st],
                [-sp, cp * ct, cp * st, d * cp * st],
                [0.0, -st, ct, d * ct],
                [0.0, 0.0, 0.0, 1.0],
            ];
            let m = b.to_matrix();
            for r in 0..4 {
                for c in 0..4 {
                    assert!((m[(r, c)] - printed[r][c]).abs() < 1e-15);
                }
            }
        }
    }

    /// Brute-force planar chain: sum of link vectors rotated by k * theta.
    fn planar_sum(theta: f64, u: usize, d: f64) -> (f64, f64) {
        let mut y = 0.0;
        let mut z = 0.0;
        for k in 1..=u {
            let a = k as f64 * theta;
            y += d * a.sin();
            z += d * a.cos();
        }
        (y, z)
    }

    #[test]
    fn chord_length_examples() {
        assert_eq!(chord_length(0.7, 1, 1.3).unwrap(), 1.3);
        assert!((chord_length(FRAC_PI_2, 2, 1.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(chord_length(0.0, 5, 1.0).unwrap(), 5.0);
        let (y, z) = planar_sum(0.3, 7, 1.0);
        assert!((chord_length(0.3, 7, 1.0).unwrap() - y.hypot(z)).abs() < 1e-12);
        assert!(chord_length(0.3, 0, 1.0).is_err());
    }

    #[test]
    fn arc_ratio_series_matches_direct_formula() {
        for &k in &[2usize, 7, 50, 1000] {
            for &x in &[1e-7, -3e-7, 9e-7] {
                let direct = (0.5 * k as f64 * x).sin() / (0.5 * x).sin();
                let series = arc_ratio(k, x);
                assert!((direct - series).abs() <= 1e-13 * k as f64, "k={k} x={x}");
            }
        }
    }

    /// sin(k x / 2) / sin(x / 2) as a sum of cosines, and its derivative.
    fn arc_ratio_by_sum(k: usize, x: f64) -> (f64, f64) {
        let mut value = 0.0;
        let mut slope = 0.0;
        for j in 0..k {
            let w = 0.5 * (k as f64 - 1.0 - 2.0 * j as f64);
            value += (w * x).cos();
            slope -= w * (w * x).sin();
        }
        (value, slope)
    }

    #[test]
    fn arc_ratio_matches_cosine_sum() {
        for &k in &[1usize, 2, 3, 12, 200] {
            for &x in &[0.0, 1e-7, 2e-5, 1e-3, 0.05, -0.2, 0.4] {
                if !closed_form_domain(x, k) {
                    continue;
                }
                let (value, slope) = arc_ratio_by_sum(k, x);
                let kf = k as f64;
                assert!((arc_ratio(k, x) - value).abs() <= 1e-13 * kf, "k={k} x={x}");
                let an = arc_ratio_derivative(k, x);
                let tol = 1e-8 * slope.abs() + 1e-13 * kf.powi(3);
                assert!((an - slope).abs() <= tol, "k={k} x={x} an={an} sum={slope}");
            }
        }
    }

    #[test]
    fn body_iterative_examples() {
        assert_eq!(
            body_transform_iterative(0.4, 1, 1.0).unwrap(),
            bend_translation(0.4, 1.0).unwrap()
        );
        let straight = body_transform_iterative(0.0, 3, 0.5).unwrap();
        assert_eq!(straight.translation, Vector3::new(0.0, 0.0, 1.5));
        let bent = body_transform_iterative(0.2, 10, 1.0).unwrap();
        assert!((bent.rotation_angle() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn body_closed_examples() {
        let one = body_transform_closed(0.4, 1, 1.0).unwrap();
        assert!(!one.fallback);
        assert!(
            one.transform
                .max_abs_diff(&bend_translation(0.4, 1.0).unwrap())
                < 1e-15
        );
        for &(theta, u) in &[(FRAC_PI_3, 2usize), (0.4, 12)] {
            let c = body_transform_closed(theta, u, 1.0).unwrap();
            let it = body_transform_iterative(theta, u, 1.0).unwrap();
            assert!(!c.fallback);
            assert!(c.transform.max_abs_diff(&it) < 1e-9);
        }
    }

    #[test]
    fn body_closed_falls_back_outside_domain() {
        let c = body_transform_closed(1.0, 10, 1.0).unwrap();
        assert!(c.fallback);
        let it = body_transform_iterative(1.0, 10, 1.0).unwrap();
        assert_eq!(c.transform, it);
    }

    #[test]
    fn fig3_straight_arm() {
        let layout = fig3_layout(0.0);
        let decomp = SectorDecomposition::new(&layout);
        let q = ReducedConfiguration::zeros(decomp.num_vars());
        let pose = reduced_forward(&decomp, &layout, &q).unwrap();
        let expected = HomTransform::from_translation(Vector3::new(0.0, 0.0, 16.0));
        assert!(pose.end_effector.max_abs_diff(&expected) < 1e-12);
        assert_eq!(pose.sectors.len(), 5);
    }

    #[test]
    fn all_heads_reduced_equals_classic_exactly() {
        let layout = ArmLayout::all_heads(9, 0.8).unwrap();
        let q = FullConfiguration::new((0..18).map(|i| (i as f64 * 0.77).sin()).collect()).unwrap();
        let (decomp, reduced) = decompose(&layout, &q).unwrap();
        let a = reduced_forward(&decomp, &layout, &reduced).unwrap();
        let b = classic_forward(&layout, &q).unwrap();
        assert_eq!(a.end_effector, b.end_effector);
    }

    #[test]
    fn parallel_is_bit_identical() {
        let layout = fig3_layout(0.3);
        let decomp = SectorDecomposition::new(&layout);
        let q = ReducedConfiguration::new(
            (0..decomp.num_vars())
                .map(|i| 0.1 + 0.05 * i as f64)
                .collect(),
        )
        .unwrap();
        let a = reduced_forward(&decomp, &layout, &q).unwrap();
        let b = reduced_forward_parallel(&decomp, &layout, &q).unwrap();
        assert_eq!(a.end_effector, b.end_effector);
        assert_eq!(a.sectors, b.sectors);
    }
}
