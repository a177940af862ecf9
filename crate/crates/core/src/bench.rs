//! Per-step timing of the classic and sector-reduced solvers.
//!
//! One step is forward kinematics, pose error, Jacobian, DLS and the clamped
//! Euler update. Each phase and the whole step are timed separately with a
//! monotonic clock; a record holds the median over the repeats, after one
//! discarded warmup repeat. Inner loops are calibrated so that a single
//! sample lasts at least [`BenchOptions::min_sample_s`].

use std::f64::consts::PI;
use std::hint::black_box;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid_arg, KinematicsError, Result};
use crate::ik::{
    classic_jacobian, classic_jacobian_naive, dls_velocity, reduced_jacobian, Jacobian,
    SolverSettings,
};
use crate::kinematics::{classic_forward, pose_error, ArmLayout, FullConfiguration, HomTransform};
use crate::meta::{halving_step, state_count, ControllerState};
use crate::sector::{
    count_dofs, expand_configuration, reduced_forward, ReducedConfiguration, SectorDecomposition,
};

/// FK agreement required before any dynamic timing is recorded.
pub const GATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    /// Every link a head, prefix-cached FK and Jacobian.
    Classic,
    /// Every link a head, each joint frame rebuilt from the base.
    ClassicNaive,
    /// Sector-reduced model in one halving state.
    Dynamic,
}

impl BenchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMethod::Classic => "classic",
            BenchMethod::ClassicNaive => "classic_naive",
            BenchMethod::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub method: BenchMethod,
    /// Halving state; `None` for the classic methods.
    pub state: Option<usize>,
    pub num_links: usize,
    /// Joints that move.
    pub active_dofs: usize,
    /// Columns of the Jacobian.
    pub control_vars: usize,
    pub t_fk_s: f64,
    pub t_jac_s: f64,
    pub t_dls_s: f64,
    pub t_step_s: f64,
    pub repeats: usize,
    /// Set when the run could not be performed; times are then NaN.
    pub skipped: bool,
}

impl BenchRecord {
    pub const CSV_HEADER: [&'static str; 11] = [
        "method",
        "state",
        "num_links",
        "active_dofs",
        "control_vars",
        "t_fk_s",
        "t_jac_s",
        "t_dls_s",
        "t_step_s",
        "repeats",
        "skipped",
    ];

    pub fn csv_fields(&self) -> [String; 11] {
        let time = |t: f64| {
            if t.is_nan() {
                String::new()
            } else {
                format!("{t:e}")
            }
        };
        [
            self.method.as_str().to_string(),
            self.state.map(|a| a.to_string()).unwrap_or_default(),
            self.num_links.to_string(),
            self.active_dofs.to_string(),
            self.control_vars.to_string(),
            time(self.t_fk_s),
            time(self.t_jac_s),
            time(self.t_dls_s),
            time(self.t_step_s),
            self.repeats.to_string(),
            self.skipped.to_string(),
        ]
    }

    fn skipped(
        method: BenchMethod,
        state: Option<usize>,
        num_links: usize,
        dofs: (usize, usize),
        repeats: usize,
    ) -> Self {
        Self {
            method,
            state,
            num_links,
            active_dofs: dofs.0,
            control_vars: dofs.1,
            t_fk_s: f64::NAN,
            t_jac_s: f64::NAN,
            t_dls_s: f64::NAN,
            t_step_s: f64::NAN,
            repeats,
            skipped: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSelection {
    All,
    One(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub num_links: usize,
    pub link_length: f64,
    pub states: StateSelection,
    pub repeats: usize,
    pub seed: u64,
    /// Also time the O(N^2) classic variant.
    pub naive: bool,
    /// Skip the classic run entirely.
    pub skip_classic: bool,
    pub settings: SolverSettings,
    pub min_sample_s: f64,
    /// Naive runs above this many links are recorded as skipped; their cost
    /// grows quadratically.
    pub max_naive_links: usize,
}

impl BenchOptions {
    pub fn new(num_links: usize) -> Self {
        Self {
            num_links,
            link_length: 1.0,
            states: StateSelection::All,
            repeats: 5,
            seed: 0,
            naive: false,
            skip_classic: false,
            settings: SolverSettings::for_arm(num_links, 1.0),
            min_sample_s: 2e-3,
            max_naive_links: 20_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_links < 2 {
            return Err(invalid_arg("benchmark needs at least 2 links"));
        }
        if self.repeats < 3 {
            return Err(invalid_arg("benchmark needs at least 3 repeats"));
        }
        if let StateSelection::One(a) = self.states {
            let count = state_count(self.num_links);
            if a >= count {
                return Err(invalid_arg(format!(
                    "state {a} out of range, {} links have {count} states",
                    self.num_links
                )));
            }
        }
        if !(self.min_sample_s >= 0.0) {
            return Err(invalid_arg("min_sample_s must be non-negative"));
        }
        self.settings.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    /// Log-log slope of dynamic step time against control variables.
    pub dynamic_slope: Option<f64>,
}

/// Median of a non-empty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `ln y` against `ln x`. `None` with fewer than two
/// usable points or no spread in `x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Controller state after `a` halvings of an undamaged arm.
pub fn halving_state(num_links: usize, a: usize) -> Result<ControllerState> {
    let mut state = ControllerState::new(num_links)?;
    for _ in 0..a {
        state = halving_step(&state)?;
    }
    Ok(state)
}

/// Random `Q` for a decomposition: head twists in `[-pi, pi]`, head bends in
/// `[-0.5, 0.5]`, body bends small enough that a body curls by at most half
/// a turn.
pub fn random_reduced(decomp: &SectorDecomposition, rng: &mut impl Rng) -> ReducedConfiguration {
    let mut v = vec![0.0; decomp.num_vars()];
    for s in decomp.sectors() {
        v[s.offset] = rng.random_range(-PI..PI);
        v[s.offset + 1] = rng.random_range(-0.5..0.5);
        if s.has_body() {
            let limit = (PI / (s.body_count as f64 + 1.0)).min(0.5);
            v[s.offset + 2] = rng.random_range(-limit..limit);
        }
    }
    ReducedConfiguration::new(v).expect("finite values")
}

fn random_full(num_links: usize, rng: &mut impl Rng) -> FullConfiguration {
    let v = (0..num_links)
        .flat_map(|_| [rng.random_range(-PI..PI), rng.random_range(-0.5..0.5)])
        .collect();
    FullConfiguration::new(v).expect("finite values")
}

/// Rough working-set size of one step in bytes.
fn step_bytes(num_links: usize, cols: usize) -> usize {
    let jacobian = 6 * cols * 8;
    let frames = (num_links + 1) * 12 * 8;
    let vectors = 4 * cols * 8;
    jacobian + frames + vectors
}

fn can_allocate(bytes: usize) -> bool {
    let mut probe: Vec<u8> = Vec::new();
    probe.try_reserve_exact(bytes).is_ok()
}

#[derive(Debug, Clone, Copy)]
struct Timings {
    fk: f64,
    jac: f64,
    dls: f64,
    step: f64,
}

fn seconds_per_call(inner: usize, mut f: impl FnMut()) -> f64 {
    let start = Instant::now();
    for _ in 0..inner {
        f();
    }
    start.elapsed().as_secs_f64() / inner as f64
}

#[allow(clippy::too_many_arguments)]
/// Times the phases of one step. `fk` returns the cached pose, `end` reads the
/// end-effector from it and `jac` builds the Jacobian from it.
fn measure<P>(
    q: &[f64],
    target: &HomTransform,
    settings: &SolverSettings,
    repeats: usize,
    min_sample_s: f64,
    fk: impl Fn() -> Result<P>,
    end: impl Fn(&P) -> HomTransform,
    jac: impl Fn(&P) -> Result<Jacobian>,
) -> Result<Timings> {
    let step = || -> Result<Vec<f64>> {
        let pose = fk()?;
        let err = pose_error(&end(&pose), target);
        let j = jac(&pose)?;
        let mut rate = dls_velocity(
            &j.matrix,
            settings.damping,
            &DVector::from_row_slice(&err.to_array()),
        )?;
        let norm = rate.norm();
        if norm > settings.step_clamp {
            rate *= settings.step_clamp / norm;
        }
        Ok(q.iter()
            .zip(rate.iter())
            .map(|(a, r)| a + r * settings.dt)
            .collect())
    };

    let start = Instant::now();
    black_box(step()?);
    let once = start.elapsed().as_secs_f64();
    let inner = if once > 0.0 {
        ((min_sample_s / once).ceil() as usize).clamp(1, 1_000_000)
    } else {
        1_000_000
    };

    let pose = fk()?;
    let err = DVector::from_row_slice(&pose_error(&end(&pose), target).to_array());
    let j = jac(&pose)?;

    let mut samples = Vec::with_capacity(repeats);
    let mut failure: Option<KinematicsError> = None;
    for _ in 0..=repeats {
        let mut record = |r: Result<()>| {
            if let Err(e) = r {
                failure.get_or_insert(e);
            }
        };
        let fk_t = seconds_per_call(inner, || record(fk().map(|p| drop(black_box(p)))));
        let jac_t = seconds_per_call(inner, || record(jac(&pose).map(|m| drop(black_box(m)))));
        let dls_t = seconds_per_call(inner, || {
            record(dls_velocity(&j.matrix, settings.damping, &err).map(|v| drop(black_box(v))))
        });
        let step_t = seconds_per_call(inner, || record(step().map(|v| drop(black_box(v)))));
        samples.push(Timings {
            fk: fk_t,
            jac: jac_t,
            dls: dls_t,
            step: step_t,
        });
    }
    if let Some(e) = failure {
        return Err(e);
    }
    // The first repeat is the warmup.
    let kept = &samples[1..];
    let pick = |f: fn(&Timings) -> f64| median(&kept.iter().map(f).collect::<Vec<_>>());
    Ok(Timings {
        fk: pick(|t| t.fk),
        jac: pick(|t| t.jac),
        dls: pick(|t| t.dls),
        step: pick(|t| t.step),
    })
}

fn target_pose(num_links: usize, d: f64, seed: u64) -> Result<HomTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a72_6765_7400_0000);
    let layout = ArmLayout::all_heads(num_links, d)?;
    Ok(classic_forward(&layout, &random_full(num_links, &mut rng))?.end_effector)
}

/// Times the classic method (cached or naive) on an all-head arm.
pub fn bench_classic(opts: &BenchOptions, naive: bool) -> Result<BenchRecord> {
    opts.validate()?;
    let n = opts.num_links;
    let method = if naive {
        BenchMethod::ClassicNaive
    } else {
        BenchMethod::Classic
    };
    let dofs = (2 * n, 2 * n);
    if (naive && n > opts.max_naive_links) || !can_allocate(step_bytes(n, 2 * n)) {
        return Ok(BenchRecord::skipped(method, None, n, dofs, opts.repeats));
    }
    let layout = ArmLayout::all_heads(n, opts.link_length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let q = random_full(n, &mut rng);
    let target = target_pose(n, opts.link_length, opts.seed)?;
    let fk = || classic_forward(&layout, &q);
    let end = |p: &crate::kinematics::ChainPose| p.end_effector;
    let t = if naive {
        measure(
            q.values(),
            &target,
            &opts.settings,
            opts.repeats,
            opts.min_sample_s,
            fk,
            end,
            |_| classic_jacobian_naive(&layout, &q),
        )?
    } else {
        measure(
            q.values(),
            &target,
            &opts.settings,
            opts.repeats,
            opts.min_sample_s,
            fk,
            end,
            |p| classic_jacobian(&layout, &q, p),
        )?
    };
    Ok(BenchRecord {
        method,
        state: None,
        num_links: n,
        active_dofs: dofs.0,
        control_vars: dofs.1,
        t_fk_s: t.fk,
        t_jac_s: t.jac,
        t_dls_s: t.dls,
        t_step_s: t.step,
        repeats: opts.repeats,
        skipped: false,
    })
}

/// Layout, decomposition and benchmark configuration of state `a`, checked
/// against the classic chain.
fn gated_state(
    opts: &BenchOptions,
    a: usize,
) -> Result<(ArmLayout, SectorDecomposition, ReducedConfiguration)> {
    let layout = halving_state(opts.num_links, a)?.layout(opts.link_length)?;
    let decomp = SectorDecomposition::new(&layout);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1 + a as u64));
    let q = random_reduced(&decomp, &mut rng);
    let reduced = reduced_forward(&decomp, &layout, &q)?.end_effector;
    let full = expand_configuration(&decomp, &layout, &q)?;
    let classic = classic_forward(&layout, &full)?.end_effector;
    let gap = reduced.max_abs_diff(&classic);
    if !(gap <= GATE_TOLERANCE) {
        return Err(KinematicsError::InvalidState(format!(
            "correctness gate failed in state {a}: reduced and classic FK differ by {gap:e}"
        )));
    }
    Ok((layout, decomp, q))
}

/// Times the reduced method in halving state `a`, after checking that its
/// forward kinematics agrees with the classic chain.
pub fn bench_state(opts: &BenchOptions, a: usize) -> Result<BenchRecord> {
    opts.validate()?;
    let n = opts.num_links;
    let (layout, decomp, q) = gated_state(opts, a)?;
    let counts = count_dofs(&decomp);
    let dofs = (counts.mobile_joints, counts.control_vars);
    if !can_allocate(step_bytes(n, counts.control_vars)) {
        return Ok(BenchRecord::skipped(
            BenchMethod::Dynamic,
            Some(a),
            n,
            dofs,
            opts.repeats,
        ));
    }
    let target = target_pose(n, opts.link_length, opts.seed)?;
    let t = measure(
        q.values(),
        &target,
        &opts.settings,
        opts.repeats,
        opts.min_sample_s,
        || reduced_forward(&decomp, &layout, &q),
        |p| p.end_effector,
        |p| reduced_jacobian(&decomp, &layout, &q, p),
    )?;
    Ok(BenchRecord {
        method: BenchMethod::Dynamic,
        state: Some(a),
        num_links: n,
        active_dofs: dofs.0,
        control_vars: dofs.1,
        t_fk_s: t.fk,
        t_jac_s: t.jac,
        t_dls_s: t.dls,
        t_step_s: t.step,
        repeats: opts.repeats,
        skipped: false,
    })
}

/// Classic record(s) followed by one dynamic record per selected state.
/// Runs strictly sequentially.
pub fn run_bench(opts: &BenchOptions) -> Result<BenchReport> {
    opts.validate()?;
    let states: Vec<usize> = match opts.states {
        StateSelection::All => (0..state_count(opts.num_links)).collect(),
        StateSelection::One(a) => vec![a],
    };
    // Gate every state before any timing is produced.
    for &a in &states {
        gated_state(opts, a)?;
    }
    let mut records = Vec::new();
    if !opts.skip_classic {
        records.push(bench_classic(opts, false)?);
    }
    if opts.naive {
        records.push(bench_classic(opts, true)?);
    }
    for &a in &states {
        records.push(bench_state(opts, a)?);
    }
    let dynamic: Vec<&BenchRecord> = records
        .iter()
        .filter(|r| r.method == BenchMethod::Dynamic && !r.skipped)
        .collect();
    let dynamic_slope = fit_loglog_slope(
        &dynamic
            .iter()
            .map(|r| r.control_vars as f64)
            .collect::<Vec<_>>(),
        &dynamic.iter().map(|r| r.t_step_s).collect::<Vec<_>>(),
    );
    Ok(BenchReport {
        records,
        dynamic_slope,
    })
}
