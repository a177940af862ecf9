//! Python bindings. Link indices are zero-based, matrices are nested lists
//! of rows, transforms are 4x4.

use std::collections::BTreeMap;

use hyperarm_core as core;
use hyperarm_core::ik::{classic_jacobian_at, reduced_jacobian_at};
use hyperarm_core::kinematics::modes_from_codes;
use hyperarm_core::{
    ArmLayout, FrozenAngles, FullConfiguration, HomTransform, ReducedConfiguration,
    SectorDecomposition, SolveOptions, SolveReport, SolverSettings, TargetMode,
};
use nalgebra::{DMatrix, Matrix4};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(hyperarm, KinematicsError, PyValueError);

fn err(e: core::KinematicsError) -> PyErr {
    KinematicsError::new_err(e.to_string())
}

type Rows = Vec<Vec<f64>>;

fn transform_rows(t: &HomTransform) -> Rows {
    let m = t.to_matrix();
    (0..4)
        .map(|r| (0..4).map(|c| m[(r, c)]).collect())
        .collect()
}

fn transform_from_rows(rows: &Rows) -> PyResult<HomTransform> {
    if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
        return Err(PyValueError::new_err("a transform is a 4x4 list of rows"));
    }
    let m = Matrix4::from_fn(|r, c| rows[r][c]);
    Ok(HomTransform::from_matrix(&m))
}

fn matrix_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &Rows) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("matrix rows differ in length"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

fn settings_for(
    layout: &ArmLayout,
    damping: Option<f64>,
    max_iterations: Option<usize>,
) -> SolverSettings {
    let mut s = SolverSettings::for_arm(layout.num_links(), layout.link_length());
    if let Some(k) = damping {
        s.damping = k;
    }
    if let Some(n) = max_iterations {
        s.max_iterations = n;
    }
    s
}

fn options(position_only: bool) -> SolveOptions {
    SolveOptions {
        mode: if position_only {
            TargetMode::PositionOnly
        } else {
            TargetMode::Pose
        },
        ..SolveOptions::default()
    }
}

fn report_dict<'py>(py: Python<'py>, r: &SolveReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("status", r.status.as_str())?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("position_error", r.position_error)?;
    d.set_item("orientation_error", r.orientation_error)?;
    d.set_item("q", r.configuration.values().to_vec())?;
    Ok(d)
}

/// Arm description: mode codes (1 head, 0 body, -1 damaged), link length and
/// frozen `(phi, theta)` for every damaged link.
#[pyclass(module = "hyperarm", frozen)]
struct Arm {
    layout: ArmLayout,
    decomp: SectorDecomposition,
}

impl Arm {
    fn from_layout(layout: ArmLayout) -> Self {
        let decomp = SectorDecomposition::new(&layout);
        Self { layout, decomp }
    }

    fn reduced(&self, q: Vec<f64>) -> PyResult<ReducedConfiguration> {
        ReducedConfiguration::new(q).map_err(err)
    }

    fn full(&self, q: Vec<f64>) -> PyResult<FullConfiguration> {
        FullConfiguration::new(q).map_err(err)
    }
}

#[pymethods]
impl Arm {
    #[new]
    #[pyo3(signature = (modes, link_length = 1.0, frozen = None))]
    fn new(
        modes: Vec<i64>,
        link_length: f64,
        frozen: Option<BTreeMap<usize, (f64, f64)>>,
    ) -> PyResult<Self> {
        let modes = modes_from_codes(&modes).map_err(err)?;
        let frozen = frozen
            .unwrap_or_default()
            .into_iter()
            .map(|(i, (phi, theta))| (i, FrozenAngles::new(phi, theta)))
            .collect();
        Ok(Self::from_layout(
            ArmLayout::new(link_length, modes, frozen).map_err(err)?,
        ))
    }

    #[staticmethod]
    #[pyo3(signature = (num_links, link_length = 1.0))]
    fn all_heads(num_links: usize, link_length: f64) -> PyResult<Self> {
        Ok(Self::from_layout(
            ArmLayout::all_heads(num_links, link_length).map_err(err)?,
        ))
    }

    #[getter]
    fn num_links(&self) -> usize {
        self.layout.num_links()
    }

    #[getter]
    fn link_length(&self) -> f64 {
        self.layout.link_length()
    }

    #[getter]
    fn modes(&self) -> Vec<i8> {
        self.layout.mode_codes()
    }

    /// Length of `Q`.
    #[getter]
    fn num_vars(&self) -> usize {
        self.decomp.num_vars()
    }

    /// `(first_link, body_count)` per sector.
    #[getter]
    fn sectors(&self) -> Vec<(usize, usize)> {
        self.decomp
            .sectors()
            .iter()
            .map(|s| (s.first_link, s.body_count))
            .collect()
    }

    #[getter]
    fn damaged(&self) -> Vec<usize> {
        self.decomp.damaged().to_vec()
    }

    /// `(control_vars, mobile_joints)`.
    fn dofs(&self) -> (usize, usize) {
        let c = core::count_dofs(&self.decomp);
        (c.control_vars, c.mobile_joints)
    }

    /// End-effector transform from `Q`.
    fn forward(&self, q: Vec<f64>) -> PyResult<Rows> {
        let pose =
            core::reduced_forward(&self.decomp, &self.layout, &self.reduced(q)?).map_err(err)?;
        Ok(transform_rows(&pose.end_effector))
    }

    /// End-effector transform from two values per link.
    fn classic_forward(&self, q: Vec<f64>) -> PyResult<Rows> {
        let pose = core::classic_forward(&self.layout, &self.full(q)?).map_err(err)?;
        Ok(transform_rows(&pose.end_effector))
    }

    fn expand(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        let full = core::expand_configuration(&self.decomp, &self.layout, &self.reduced(q)?)
            .map_err(err)?;
        Ok(full.into_values())
    }

    fn project(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .decomp
            .project(&self.full(q)?)
            .map_err(err)?
            .into_values())
    }

    /// 6 x len(Q) Jacobian: linear rows, then angular rows.
    fn jacobian(&self, q: Vec<f64>) -> PyResult<Rows> {
        let j = reduced_jacobian_at(&self.decomp, &self.layout, &self.reduced(q)?).map_err(err)?;
        Ok(matrix_rows(&j.matrix))
    }

    /// Classic Jacobian, two columns per functional link.
    fn classic_jacobian(&self, q: Vec<f64>) -> PyResult<Rows> {
        let j = classic_jacobian_at(&self.layout, &self.full(q)?).map_err(err)?;
        Ok(matrix_rows(&j.matrix))
    }

    /// Iterates DLS steps from `q0` (zeros by default) towards `target`.
    #[pyo3(signature = (target, q0 = None, position_only = false, damping = None, max_iterations = None))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        target: Rows,
        q0: Option<Vec<f64>>,
        position_only: bool,
        damping: Option<f64>,
        max_iterations: Option<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let target = transform_from_rows(&target)?;
        let q0 = match q0 {
            Some(q) => self.reduced(q)?,
            None => ReducedConfiguration::zeros(self.decomp.num_vars()),
        };
        let settings = settings_for(&self.layout, damping, max_iterations);
        let report = core::solve_to_pose(
            &self.decomp,
            &self.layout,
            &q0,
            &target,
            &settings,
            &options(position_only),
        )
        .map_err(err)?;
        report_dict(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Arm(num_links={}, num_vars={}, link_length={})",
            self.layout.num_links(),
            self.decomp.num_vars(),
            self.layout.link_length()
        )
    }
}

/// Halving meta-controller state.
#[pyclass(module = "hyperarm", frozen)]
struct Controller {
    state: core::ControllerState,
}

#[pymethods]
impl Controller {
    /// State 0 of an arm; `frozen` maps damaged links to `(phi, theta)`.
    #[new]
    #[pyo3(signature = (num_links, frozen = None))]
    fn new(num_links: usize, frozen: Option<BTreeMap<usize, (f64, f64)>>) -> PyResult<Self> {
        let frozen = frozen
            .unwrap_or_default()
            .into_iter()
            .map(|(i, (phi, theta))| (i, FrozenAngles::new(phi, theta)))
            .collect();
        Ok(Self {
            state: core::ControllerState::with_damage(num_links, frozen).map_err(err)?,
        })
    }

    #[getter]
    fn max_body(&self) -> usize {
        self.state.max_body()
    }

    #[getter]
    fn failures(&self) -> usize {
        self.state.failures()
    }

    #[getter]
    fn heads(&self) -> Vec<usize> {
        self.state.heads()
    }

    #[getter]
    fn modes(&self) -> Vec<i8> {
        self.state.modes().iter().map(|m| m.code()).collect()
    }

    fn is_final(&self) -> bool {
        self.state.is_final()
    }

    /// Next state after a failure.
    fn halve(&self) -> PyResult<Controller> {
        Ok(Controller {
            state: core::halving_step(&self.state).map_err(err)?,
        })
    }

    #[pyo3(signature = (link_length = 1.0))]
    fn arm(&self, link_length: f64) -> PyResult<Arm> {
        Ok(Arm::from_layout(
            self.state.layout(link_length).map_err(err)?,
        ))
    }

    /// Solves from the physical configuration `q` (two values per link),
    /// halving and restructuring after every failure.
    #[pyo3(signature = (target, q, link_length = 1.0, position_only = false))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        target: Rows,
        q: Vec<f64>,
        link_length: f64,
        position_only: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let target = transform_from_rows(&target)?;
        let layout = self.state.layout(link_length).map_err(err)?;
        let settings = settings_for(&layout, None, None);
        let q = FullConfiguration::new(q).map_err(err)?;
        let outcome = core::solve_with_escalation(
            self.state.clone(),
            link_length,
            &q,
            &target,
            &settings,
            &options(position_only),
        )
        .map_err(err)?;
        let d = report_dict(py, outcome.final_report())?;
        d.set_item("restructures", outcome.restructures())?;
        d.set_item("heads", outcome.state.heads())?;
        d.set_item(
            "physical_q",
            outcome.physical_configuration().map_err(err)?.into_values(),
        )?;
        Ok(d)
    }
}

/// Number of halving states of an arm with `num_links` links.
#[pyfunction]
fn state_count(num_links: usize) -> usize {
    core::state_count(num_links)
}

/// Signed chord of `u` equal links bent by `theta` each.
#[pyfunction]
#[pyo3(signature = (theta, u, link_length = 1.0))]
fn chord_length(theta: f64, u: usize, link_length: f64) -> PyResult<f64> {
    core::chord_length(theta, u, link_length).map_err(err)
}

/// `J^T (J J^T + k^2 I)^-1`.
#[pyfunction]
fn damped_pseudo_inverse(j: Rows, k: f64) -> PyResult<Rows> {
    let m = matrix_from_rows(&j)?;
    Ok(matrix_rows(
        &core::damped_pseudo_inverse(&m, k).map_err(err)?,
    ))
}

#[pymodule]
fn hyperarm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Arm>()?;
    m.add_class::<Controller>()?;
    m.add_function(wrap_pyfunction!(state_count, m)?)?;
    m.add_function(wrap_pyfunction!(chord_length, m)?)?;
    m.add_function(wrap_pyfunction!(damped_pseudo_inverse, m)?)?;
    m.add("KinematicsError", m.py().get_type::<KinematicsError>())?;
    Ok(())
}
