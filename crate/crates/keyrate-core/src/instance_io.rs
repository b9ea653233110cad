//! Self-describing instance files.
//!
//! One JSON document per instance: label, dimensions, constraints
//! (matrix/value pairs), Kraus factors, pinching projectors and the
//! optional reduced-density block. Complex matrices are row-major arrays
//! of [re, im] pairs; numbers print in shortest round-trip form, so a
//! save/load cycle reproduces every double bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fr::{ProblemInstance, ReducedDensity};
use crate::hermitian::{CMat, HermitianMatrix, C64};
use crate::maps::{KrausMap, PinchingMap};

type ComplexRows = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Serialize, Deserialize)]
struct ConstraintDoc {
    matrix: ComplexRows,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReducedDensityDoc {
    rho_a: ComplexRows,
    n_b: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceDoc {
    label: String,
    n: usize,
    k: usize,
    constraints: Vec<ConstraintDoc>,
    kraus: Vec<ComplexRows>,
    pinching: Vec<ComplexRows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reduced_density: Option<ReducedDensityDoc>,
}

fn matrix_to_rows(m: &CMat) -> ComplexRows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn rows_to_matrix(rows: &ComplexRows, field: &str) -> Result<CMat> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::InvalidInstance(format!("{field}: empty matrix")));
    }
    let nc = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != nc {
            return Err(Error::InvalidInstance(format!(
                "{field}: row {i} has {} entries, expected {nc}",
                r.len()
            )));
        }
    }
    let mut m = CMat::zeros(nr, nc);
    for (i, r) in rows.iter().enumerate() {
        for (j, &[re, im]) in r.iter().enumerate() {
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::InvalidInstance(format!(
                    "{field}: non-finite entry at ({i},{j})"
                )));
            }
            m[(i, j)] = C64::new(re, im);
        }
    }
    Ok(m)
}

fn hermitian_from_rows(rows: &ComplexRows, field: &str) -> Result<HermitianMatrix> {
    let m = rows_to_matrix(rows, field)?;
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInstance(format!(
            "{field}: {}x{} is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = (&m - m.adjoint()).norm();
    if asym > 1e-12 * m.norm().max(1.0) {
        return Err(Error::InvalidInstance(format!(
            "{field}: not Hermitian (asymmetry {asym:.3e})"
        )));
    }
    Ok(HermitianMatrix::symmetrize(m))
}

/// Serializes an instance to the wire document.
pub fn instance_to_json(instance: &ProblemInstance) -> Result<String> {
    let doc = InstanceDoc {
        label: instance.label.clone(),
        n: instance.n,
        k: instance.k(),
        constraints: instance
            .constraints
            .iter()
            .map(|(op, v)| ConstraintDoc { matrix: matrix_to_rows(op.as_matrix()), value: *v })
            .collect(),
        kraus: instance.g_map.factors().iter().map(matrix_to_rows).collect(),
        pinching: instance.z_map.projectors().iter().map(matrix_to_rows).collect(),
        reduced_density: instance.reduced_density.as_ref().map(|rd| ReducedDensityDoc {
            rho_a: matrix_to_rows(rd.rho_a.as_matrix()),
            n_b: rd.n_b,
        }),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parses and validates the wire document. Schema violations carry the
/// offending field in the message.
pub fn instance_from_json(text: &str) -> Result<ProblemInstance> {
    let doc: InstanceDoc = serde_json::from_str(text)?;

    let mut constraints = Vec::with_capacity(doc.constraints.len());
    for (i, c) in doc.constraints.iter().enumerate() {
        let op = hermitian_from_rows(&c.matrix, &format!("constraints[{i}].matrix"))?;
        if op.dim() != doc.n {
            return Err(Error::InvalidInstance(format!(
                "constraints[{i}].matrix: dimension {} ≠ n = {}",
                op.dim(),
                doc.n
            )));
        }
        constraints.push((op, c.value));
    }

    let mut kraus = Vec::with_capacity(doc.kraus.len());
    for (j, rows) in doc.kraus.iter().enumerate() {
        let f = rows_to_matrix(rows, &format!("kraus[{j}]"))?;
        if f.shape() != (doc.k, doc.n) {
            return Err(Error::InvalidInstance(format!(
                "kraus[{j}]: shape {:?} ≠ ({}, {})",
                f.shape(),
                doc.k,
                doc.n
            )));
        }
        kraus.push(f);
    }
    let g_map = KrausMap::new(kraus)
        .map_err(|e| Error::InvalidInstance(format!("kraus: {e}")))?;

    let mut projectors = Vec::with_capacity(doc.pinching.len());
    for (j, rows) in doc.pinching.iter().enumerate() {
        let z = rows_to_matrix(rows, &format!("pinching[{j}]"))?;
        if z.shape() != (doc.k, doc.k) {
            return Err(Error::InvalidInstance(format!(
                "pinching[{j}]: shape {:?} ≠ ({}, {})",
                z.shape(),
                doc.k,
                doc.k
            )));
        }
        projectors.push(z);
    }
    let z_map = PinchingMap::new(projectors)
        .map_err(|e| Error::InvalidInstance(format!("pinching: {e}")))?;

    let reduced_density = match &doc.reduced_density {
        Some(rd) => Some(ReducedDensity {
            rho_a: hermitian_from_rows(&rd.rho_a, "reduced_density.rho_a")?,
            n_b: rd.n_b,
        }),
        None => None,
    };

    ProblemInstance::new(constraints, g_map, z_map, reduced_density, doc.label)
}

/// Loads an instance file.
pub fn load_instance(path: impl AsRef<Path>) -> Result<ProblemInstance> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::InvalidInstance(format!("{}: {e}", path.as_ref().display()))
    })?;
    instance_from_json(&text)
}

/// Saves an instance file (lossless round trip).
pub fn save_instance(instance: &ProblemInstance, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, instance_to_json(instance)?)?;
    Ok(())
}
