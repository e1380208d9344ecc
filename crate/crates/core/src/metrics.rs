//! Network predictions on grids and relative L2 errors of the magnitudes.

use crate::error::{Error, Result};
use crate::net::{forward_values_batch, NetworkShape, ParameterVector, Point};
use crate::oracle::FieldSample;
use crate::training::FIELDS;

/// Network fields at `points`.
pub fn predict(params: &ParameterVector, shape: &NetworkShape, points: &[Point]) -> Result<Vec<FieldSample>> {
    if shape.output_dim != FIELDS {
        return Err(Error::Config(format!("expected {FIELDS} network outputs, got {}", shape.output_dim)));
    }
    let values = forward_values_batch(&params.values, shape, points)?;
    Ok(points
        .iter()
        .zip(values.chunks_exact(FIELDS))
        .map(|(&point, v)| {
            let mut s = FieldSample { point, ..Default::default() };
            s.set_values([v[0], v[1], v[2], v[3]]);
            s
        })
        .collect())
}

/// ‖|h_pred| − |h_exact|‖₂ / ‖|h_exact|‖₂ for h1 and h2.
pub fn relative_l2(pred: &[FieldSample], exact: &[FieldSample]) -> Result<[f64; 2]> {
    if pred.len() != exact.len() {
        return Err(Error::Usage(format!("grids differ in size ({} vs {})", pred.len(), exact.len())));
    }
    let mut num = [0.0; 2];
    let mut den = [0.0; 2];
    for (p, e) in pred.iter().zip(exact) {
        let (p1, p2) = p.magnitudes();
        let (e1, e2) = e.magnitudes();
        num[0] += (p1 - e1).powi(2);
        num[1] += (p2 - e2).powi(2);
        den[0] += e1 * e1;
        den[1] += e2 * e2;
    }
    if den.contains(&0.0) {
        return Err(Error::Usage("relative error against an identically zero field".into()));
    }
    Ok([(num[0] / den[0]).sqrt(), (num[1] / den[1]).sqrt()])
}
