//! Kinematics for hyper-redundant serial arms built from identical
//! two-joint links (twist about the link axis, bend relative to the
//! previous link).
//!
//! Two formulations are provided side by side:
//!
//! * the classic one, where every joint is a control variable
//!   ([`classic_forward`], [`classic_jacobian`]);
//! * a sector-reduced one, where runs of links share a single bend and the
//!   number of control variables is set by a mode vector that a
//!   meta-controller can rewrite online ([`sector`], [`meta`]). Damaged links
//!   are held at frozen angles and drop out of the Jacobian.
//!
//! Both feed the same damped-least-squares solver in [`ik`].

// `!(a <= b)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod error;
pub mod ik;
pub mod kinematics;
pub mod meta;
pub mod sector;

pub use error::{KinematicsError, Result};
pub use ik::{
    classic_jacobian, damped_pseudo_inverse, finite_difference_jacobian, ik_step, reduced_jacobian,
    solve_to_pose, BodyColumnRule, Jacobian, SolveOptions, SolveReport, SolveStatus,
    SolverSettings, TargetMode,
};
pub use kinematics::{
    bend_translation, classic_forward, compose, pose_error, twist_rotation, ArmLayout,
    FrozenAngles, FullConfiguration, HomTransform, LinkMode, Twist,
};
pub use meta::{
    failure_detector, halving_step, mark_damaged, restructure, solve_with_escalation, state_count,
    ControllerState,
};
pub use sector::{
    body_transform_closed, body_transform_iterative, chord_length, count_dofs, damaged_transform,
    decompose, expand_configuration, head_transform, project_configuration, reduced_forward,
    DofCount, ReducedConfiguration, Sector, SectorDecomposition,
};
