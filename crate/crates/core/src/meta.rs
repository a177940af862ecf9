//! Online restructuring of the sector model.
//!
//! The halving controller starts from the coarsest structure (one head at the
//! base, everything else body) and, every time the solver fails, halves the
//! maximum body size `k` and promotes new heads, until every functional link
//! is a head. Heads are never demoted, so each transition can carry the
//! physical pose over exactly.

use std::collections::BTreeMap;

use crate::error::{invalid_arg, KinematicsError, Result};
use crate::ik::{solve_to_pose, SolveOptions, SolveReport, SolveStatus, SolverSettings};
use crate::kinematics::{ArmLayout, FrozenAngles, FullConfiguration, HomTransform, LinkMode};
use crate::sector::{expand_configuration, ReducedConfiguration, SectorDecomposition};

/// Maps a link index to its mode. The halving policy is one implementation;
/// the trait lets other policies drive the same machinery.
pub trait MetaController {
    fn mode(&self, link: usize) -> LinkMode;
    fn num_links(&self) -> usize;

    fn modes(&self) -> Vec<LinkMode> {
        (0..self.num_links()).map(|i| self.mode(i)).collect()
    }
}

/// State of the halving controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    failures: usize,
    max_body: usize,
    modes: Vec<LinkMode>,
    frozen: BTreeMap<usize, FrozenAngles>,
    history: Vec<Vec<LinkMode>>,
}

impl MetaController for ControllerState {
    fn mode(&self, link: usize) -> LinkMode {
        self.modes[link]
    }

    fn num_links(&self) -> usize {
        self.modes.len()
    }
}

impl ControllerState {
    /// State 0 of an undamaged arm: `k = N`, a single head at the base.
    pub fn new(num_links: usize) -> Result<Self> {
        Self::with_damage(num_links, BTreeMap::new())
    }

    /// State 0 with the given links damaged. A functional link right after a
    /// damaged one starts a new sector.
    pub fn with_damage(num_links: usize, frozen: BTreeMap<usize, FrozenAngles>) -> Result<Self> {
        if num_links == 0 {
            return Err(invalid_arg("an arm needs at least one link"));
        }
        if let Some(&link) = frozen.keys().find(|&&l| l >= num_links) {
            return Err(invalid_arg(format!("damaged link {link} is out of range")));
        }
        let mut modes: Vec<LinkMode> = (0..num_links)
            .map(|i| {
                if frozen.contains_key(&i) {
                    LinkMode::Damaged
                } else if i % num_links == 0 {
                    LinkMode::Head
                } else {
                    LinkMode::Body
                }
            })
            .collect();
        repair(&mut modes);
        Ok(Self {
            failures: 0,
            max_body: num_links,
            modes,
            frozen,
            history: Vec::new(),
        })
    }

    /// Adopts an arbitrary layout; `k` starts at its largest sector size.
    pub fn from_layout(layout: &ArmLayout) -> Self {
        let decomp = SectorDecomposition::new(layout);
        Self {
            failures: 0,
            max_body: decomp.max_sector_size(),
            modes: layout.modes().to_vec(),
            frozen: layout.frozen().clone(),
            history: Vec::new(),
        }
    }

    /// Number of failures so far (`a`).
    pub fn failures(&self) -> usize {
        self.failures
    }

    /// Current maximum sector size (`k_a`).
    pub fn max_body(&self) -> usize {
        self.max_body
    }

    pub fn modes(&self) -> &[LinkMode] {
        &self.modes
    }

    pub fn frozen(&self) -> &BTreeMap<usize, FrozenAngles> {
        &self.frozen
    }

    /// Mode vectors of earlier states, oldest first.
    pub fn history(&self) -> &[Vec<LinkMode>] {
        &self.history
    }

    pub fn heads(&self) -> Vec<usize> {
        self.modes
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == LinkMode::Head)
            .map(|(i, _)| i)
            .collect()
    }

    /// True once no further halving is possible.
    pub fn is_final(&self) -> bool {
        self.max_body <= 1
    }

    pub fn layout(&self, link_length: f64) -> Result<ArmLayout> {
        ArmLayout::new(link_length, self.modes.clone(), self.frozen.clone())
    }
}

/// Promotes the first functional link of every run that follows a damaged
/// link (or the base) to head.
fn repair(modes: &mut [LinkMode]) {
    let mut after_gap = true;
    for mode in modes.iter_mut() {
        match mode {
            LinkMode::Damaged => after_gap = true,
            LinkMode::Body if after_gap => {
                *mode = LinkMode::Head;
                after_gap = false;
            }
            _ => after_gap = false,
        }
    }
}

/// One failure: `k <- floor(k / 2)` and a new mode vector.
///
/// A link becomes (or stays) a head when it is the base link, was already a
/// head, sits alone between two heads of the previous state (and is not the
/// last link), or falls on the new grid `i mod k = 0`. All conditions read
/// the previous state only. Damaged links are left untouched.
pub fn halving_step(state: &ControllerState) -> Result<ControllerState> {
    if state.is_final() {
        return Err(KinematicsError::NoFurtherStates);
    }
    let k = state.max_body / 2;
    let prev = &state.modes;
    let n = prev.len();
    let mut modes: Vec<LinkMode> = (0..n)
        .map(|i| {
            if prev[i] == LinkMode::Damaged {
                return LinkMode::Damaged;
            }
            let isolated = i > 0
                && i + 1 < n
                && prev[i - 1] == LinkMode::Head
                && prev[i + 1] == LinkMode::Head;
            if i == 0 || prev[i] == LinkMode::Head || isolated || i % k == 0 {
                LinkMode::Head
            } else {
                LinkMode::Body
            }
        })
        .collect();
    repair(&mut modes);
    let mut history = state.history.clone();
    history.push(prev.clone());
    Ok(ControllerState {
        failures: state.failures + 1,
        max_body: k,
        modes,
        frozen: state.frozen.clone(),
        history,
    })
}

/// Number of distinct structures the halving controller visits for `N`
/// links: the length of `N, N/2, ..., 1`, i.e. `floor(log2 N) + 1`.
pub fn state_count(num_links: usize) -> usize {
    let mut k = num_links.max(1);
    let mut count = 1;
    while k > 1 {
        k /= 2;
        count += 1;
    }
    count
}

/// Marks `link` damaged at `frozen`. When this cuts a body, the first
/// surviving body link after it becomes a head so the layout stays valid.
/// Idempotent for an already damaged link.
pub fn mark_damaged(
    state: &ControllerState,
    link: usize,
    frozen: FrozenAngles,
) -> Result<ControllerState> {
    if link >= state.modes.len() {
        return Err(invalid_arg(format!(
            "link {link} is out of range for {} links",
            state.modes.len()
        )));
    }
    if state.modes[link] == LinkMode::Damaged {
        return Ok(state.clone());
    }
    if !(frozen.phi.is_finite() && frozen.theta.is_finite()) {
        return Err(invalid_arg("frozen angles must be finite"));
    }
    let mut next = state.clone();
    next.modes[link] = LinkMode::Damaged;
    next.frozen.insert(link, frozen);
    repair(&mut next.modes);
    Ok(next)
}

/// Replaces the structure of a running arm. The new layout must keep every
/// damaged link damaged, keep every surviving head a head, and freeze newly
/// damaged links at their current angles. The returned configuration
/// reproduces the physical pose `q_physical` in the new structure.
pub fn restructure(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    q_physical: &FullConfiguration,
    new_layout: &ArmLayout,
) -> Result<(SectorDecomposition, ReducedConfiguration)> {
    let n = layout.num_links();
    if new_layout.num_links() != n || decomp.num_links() != n {
        return Err(KinematicsError::InvalidTransition(
            "layouts describe arms of different length".into(),
        ));
    }
    if q_physical.len() != 2 * n {
        return Err(invalid_arg(format!(
            "configuration has {} values, layout needs {}",
            q_physical.len(),
            2 * n
        )));
    }
    for link in 0..n {
        match (layout.mode(link), new_layout.mode(link)) {
            (LinkMode::Damaged, LinkMode::Damaged) => {
                if layout.frozen_angles(link) != new_layout.frozen_angles(link) {
                    return Err(KinematicsError::InvalidTransition(format!(
                        "frozen angles of damaged link {link} changed"
                    )));
                }
            }
            (LinkMode::Damaged, _) => {
                return Err(KinematicsError::InvalidTransition(format!(
                    "damaged link {link} cannot become functional"
                )))
            }
            (LinkMode::Head, LinkMode::Body) => {
                return Err(KinematicsError::InvalidTransition(format!(
                    "head link {link} would be demoted to body"
                )))
            }
            (_, LinkMode::Damaged) => {
                let frozen = new_layout.frozen_angles(link).expect("validated layout");
                if frozen.phi.to_bits() != q_physical.phi(link).to_bits()
                    || frozen.theta.to_bits() != q_physical.theta(link).to_bits()
                {
                    return Err(KinematicsError::InvalidTransition(format!(
                        "link {link} must be frozen at its current angles"
                    )));
                }
            }
            _ => {}
        }
    }
    let new_decomp = SectorDecomposition::new(new_layout);
    let q = new_decomp.project(q_physical)?;
    Ok((new_decomp, q))
}

/// True when the solver failed to reach the target.
pub fn failure_detector(report: &SolveReport) -> bool {
    matches!(
        report.status,
        SolveStatus::Stalled | SolveStatus::MaxIterations
    )
}

/// Back to the coarsest structure, damage kept. Not applied automatically:
/// moving a bent arm into it demotes heads, so [`restructure`] rejects the
/// transition and the configuration has to go through
/// [`align_configuration`] first, which moves the arm.
pub fn coarsen(state: &ControllerState) -> Result<ControllerState> {
    ControllerState::with_damage(state.modes.len(), state.frozen.clone())
}

/// Forces `q` onto the sector constraints of `layout`: body twists set to
/// zero, body bends set to the mean bend of their body, damaged links to
/// their frozen angles. Changes the pose whenever `q` violated a constraint.
pub fn align_configuration(layout: &ArmLayout, q: &FullConfiguration) -> Result<FullConfiguration> {
    if q.len() != 2 * layout.num_links() {
        return Err(invalid_arg(format!(
            "configuration has {} values, layout needs {}",
            q.len(),
            2 * layout.num_links()
        )));
    }
    let decomp = SectorDecomposition::new(layout);
    let mut out = q.values().to_vec();
    for s in decomp.sectors() {
        if !s.has_body() {
            continue;
        }
        let links = s.first_link + 1..=s.last_link();
        let mean = links.clone().map(|l| q.theta(l)).sum::<f64>() / s.body_count as f64;
        for l in links {
            out[2 * l] = 0.0;
            out[2 * l + 1] = mean;
        }
    }
    for (&link, a) in layout.frozen() {
        out[2 * link] = a.phi;
        out[2 * link + 1] = a.theta;
    }
    FullConfiguration::new(out)
}

/// One solve attempt inside [`solve_with_escalation`].
#[derive(Debug, Clone)]
pub struct Attempt {
    pub failures: usize,
    pub max_body: usize,
    pub control_vars: usize,
    pub report: SolveReport,
}

#[derive(Debug, Clone)]
pub struct EscalationOutcome {
    pub attempts: Vec<Attempt>,
    pub state: ControllerState,
    pub layout: ArmLayout,
    pub decomposition: SectorDecomposition,
    pub configuration: ReducedConfiguration,
}

impl EscalationOutcome {
    pub fn final_report(&self) -> &SolveReport {
        &self.attempts.last().expect("at least one attempt").report
    }

    pub fn converged(&self) -> bool {
        self.final_report().status == SolveStatus::Converged
    }

    /// Number of structure changes performed.
    pub fn restructures(&self) -> usize {
        self.attempts.len() - 1
    }

    pub fn physical_configuration(&self) -> Result<FullConfiguration> {
        expand_configuration(&self.decomposition, &self.layout, &self.configuration)
    }
}

/// Solves in the current structure; on failure halves `k`, restructures at
/// the reached pose and retries, until success or the final state. Performs
/// at most `state_count(N) - 1` restructures.
pub fn solve_with_escalation(
    state: ControllerState,
    link_length: f64,
    q_physical: &FullConfiguration,
    target: &HomTransform,
    settings: &SolverSettings,
    options: &SolveOptions,
) -> Result<EscalationOutcome> {
    let mut state = state;
    let mut layout = state.layout(link_length)?;
    let mut decomp = SectorDecomposition::new(&layout);
    let mut q = decomp.project(q_physical)?;
    let mut attempts = Vec::new();
    loop {
        let report = solve_to_pose(&decomp, &layout, &q, target, settings, options)?;
        let failed = failure_detector(&report);
        q = report.configuration.clone();
        attempts.push(Attempt {
            failures: state.failures(),
            max_body: state.max_body(),
            control_vars: decomp.num_vars(),
            report,
        });
        if !failed || state.is_final() {
            break;
        }
        let next = halving_step(&state)?;
        let next_layout = next.layout(link_length)?;
        let physical = expand_configuration(&decomp, &layout, &q)?;
        let (next_decomp, next_q) = restructure(&decomp, &layout, &physical, &next_layout)?;
        state = next;
        layout = next_layout;
        decomp = next_decomp;
        q = next_q;
    }
    Ok(EscalationOutcome {
        attempts,
        state,
        layout,
        decomposition: decomp,
        configuration: q,
    })
}
