//! Distance models over a flat parameter vector: single and product spaces,
//! overlaying spaces with the universal dyadic signature, and dot-product
//! similarities.

mod model;
mod params;
mod signature;

pub use model::{Model, Scalars, EXP_DOT_CLAMP};
pub use params::{ParamLayout, Params};
pub use signature::{
    parse_signature, parse_signature_with, Aggregation, Factor, Shape, Signature,
    SphereConvention, MAX_OVERLAY_DEPTH,
};

use crate::error::{Error, Result};

pub fn weight_count(sig: &Signature) -> usize {
    sig.weight_count()
}

fn require(model: &Model, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidSignature(format!(
            "{} is not a {what} signature",
            model.signature()
        )))
    }
}

pub fn product_distance(model: &Model, raw: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
    require(model, model.signature().factors().is_some(), "product")?;
    Ok(model.distance(&model.resolve(raw), x, y))
}

pub fn overlay_distance(model: &Model, raw: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
    require(
        model,
        matches!(model.signature().shape, Shape::Overlay { .. }),
        "overlay",
    )?;
    Ok(model.distance(&model.resolve(raw), x, y))
}

pub fn dot_distance(model: &Model, raw: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
    require(model, !model.is_metric(), "dot")?;
    Ok(model.distance(&model.resolve(raw), x, y))
}

/// Gradient of `d(f(i), f(j))` with respect to both rows and all raw scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub distance: f64,
    pub row_i: Vec<f64>,
    pub row_j: Vec<f64>,
    pub scalars: Vec<f64>,
}

pub fn model_gradients(model: &Model, params: &Params, i: usize, j: usize) -> PairGradients {
    let dim = model.dim();
    let mut row_i = vec![0.0; dim];
    let mut row_j = vec![0.0; dim];
    let mut scalars = vec![0.0; model.scalar_count()];
    let s = model.resolve(params.scalars());
    let distance = model.accumulate(
        &s,
        params.row(i),
        params.row(j),
        1.0,
        &mut row_i,
        &mut row_j,
        &mut scalars,
    );
    if i == j {
        // Both arguments are the same row.
        for (a, b) in row_i.iter_mut().zip(&row_j) {
            *a += b;
        }
        row_j.clone_from(&row_i);
    }
    PairGradients {
        distance,
        row_i,
        row_j,
        scalars,
    }
}
