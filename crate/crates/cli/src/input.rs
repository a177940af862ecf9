//! Number lists, configurations and target poses read from the command line.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hyperarm_core::kinematics::FullConfiguration;
use hyperarm_core::sector::{expand_configuration, ReducedConfiguration, SectorDecomposition};
use hyperarm_core::{ArmLayout, HomTransform};
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

/// Parses numbers separated by commas and/or whitespace. `#` comments run to
/// the end of the line.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for token in line.split(|c: char| c == ',' || c.is_whitespace()) {
            if token.is_empty() {
                continue;
            }
            let v: f64 = token
                .parse()
                .with_context(|| format!("'{token}' is not a number"))?;
            if !v.is_finite() {
                bail!("'{token}' is not finite");
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Reads the argument as a file when such a file exists, else as an inline list.
pub fn numbers_from_arg(arg: &str) -> Result<Vec<f64>> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        parse_numbers(&text).with_context(|| format!("in {}", path.display()))
    } else {
        parse_numbers(arg)
    }
}

/// Joint values given either as `Q` (one value per control variable) or as
/// the full `(phi, theta)` list of every link. The full form must satisfy
/// the sector constraints of the layout.
pub fn configuration_from_values(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    values: Vec<f64>,
) -> Result<ReducedConfiguration> {
    let full_len = 2 * layout.num_links();
    if values.len() == decomp.num_vars() {
        return Ok(ReducedConfiguration::new(values)?);
    }
    if values.len() == full_len {
        let q = FullConfiguration::new(values)?;
        let reduced = decomp.project(&q)?;
        let back = expand_configuration(decomp, layout, &reduced)?;
        if back.values() != q.values() {
            bail!("damaged links must be given at their frozen angles");
        }
        return Ok(reduced);
    }
    bail!(
        "configuration has {} values; expected {} (Q) or {} (two per link)",
        values.len(),
        decomp.num_vars(),
        full_len
    )
}

/// 12 numbers: rotation row-major then translation. 7 numbers: translation
/// then a unit quaternion `qw qx qy qz`.
pub fn target_from_values(values: &[f64]) -> Result<HomTransform> {
    match values.len() {
        12 => {
            let r = Matrix3::from_row_slice(&values[..9]);
            let t = Vector3::new(values[9], values[10], values[11]);
            let ortho = (r.transpose() * r - Matrix3::identity()).amax();
            if ortho > 1e-6 || r.determinant() <= 0.0 {
                bail!("target rotation is not a proper rotation (orthonormality error {ortho:e})");
            }
            Ok(HomTransform::new(r, t))
        }
        7 => {
            let t = Vector3::new(values[0], values[1], values[2]);
            let q = Quaternion::new(values[3], values[4], values[5], values[6]);
            if (q.norm() - 1.0).abs() > 1e-6 {
                bail!("target quaternion has norm {}, expected 1", q.norm());
            }
            let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
            Ok(HomTransform::new(r.into_inner(), t))
        }
        n => bail!("target needs 12 numbers (rotation + translation) or 7 (translation + quaternion), got {n}"),
    }
}

/// Comma-separated one-based link numbers, converted to zero-based indices.
pub fn parse_links(text: &str, num_links: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let link: usize = token
            .parse()
            .with_context(|| format!("'{token}' is not a link number"))?;
        if link == 0 || link > num_links {
            bail!("link {link} outside 1..={num_links}");
        }
        if !out.contains(&(link - 1)) {
            out.push(link - 1);
        }
    }
    Ok(out)
}
