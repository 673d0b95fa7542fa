use std::ops::Range;

use smallvec::SmallVec;

use super::signature::{Aggregation, Shape, Signature};
use crate::geometry::{self, PairStats, SpaceKind, TermGrad};

/// Exponent bound for the `c * exp(-x.y)` similarity.
pub const EXP_DOT_CLAMP: f64 = 60.0;

#[derive(Debug, Clone)]
struct Slot {
    kind: SpaceKind,
    range: Range<usize>,
    weight: Option<usize>,
}

#[derive(Debug, Clone)]
enum Compiled {
    Product(Vec<Slot>),
    Overlay {
        subsets: Vec<Range<usize>>,
        aggregation: Aggregation,
    },
    Dot,
    ExpDot,
}

/// Resolved scalar parameters: positive weights `w = exp(theta)` and the
/// dot offset `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalars {
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl Scalars {
    /// Explicit weights, bypassing the exponential parameterisation. Zero
    /// weights switch terms off.
    pub fn from_weights(weights: Vec<f64>) -> Self {
        Self {
            weights,
            offset: 0.0,
        }
    }
}

/// Distance model compiled from a [`Signature`].
///
/// Raw trainable scalars are laid out as one `theta` per weighted term
/// (product: non-Euclidean factors in order; overlay: layer, then subset,
/// then E/S/H), or the single offset `c` for dot similarities.
#[derive(Debug, Clone)]
pub struct Model {
    signature: Signature,
    compiled: Compiled,
}

impl Model {
    pub fn new(signature: Signature) -> Self {
        let compiled = match &signature.shape {
            Shape::Single(_) | Shape::Product(_) => {
                let mut start = 0;
                let mut next_weight = 0;
                let slots = signature
                    .factors()
                    .unwrap()
                    .iter()
                    .map(|f| {
                        let range = start..start + f.ambient;
                        start += f.ambient;
                        let weight = (f.kind != SpaceKind::Euclidean).then(|| {
                            next_weight += 1;
                            next_weight - 1
                        });
                        Slot {
                            kind: f.kind,
                            range,
                            weight,
                        }
                    })
                    .collect();
                Compiled::Product(slots)
            }
            Shape::Overlay { aggregation, .. } => Compiled::Overlay {
                subsets: signature.overlay_subsets().unwrap(),
                aggregation: *aggregation,
            },
            Shape::Dot => Compiled::Dot,
            Shape::ExpDot => Compiled::ExpDot,
        };
        Self {
            signature,
            compiled,
        }
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn dim(&self) -> usize {
        self.signature.dim
    }

    pub fn is_metric(&self) -> bool {
        self.signature.is_metric()
    }

    pub fn weight_count(&self) -> usize {
        match self.compiled {
            Compiled::Dot | Compiled::ExpDot => 0,
            _ => self.signature.weight_count(),
        }
    }

    pub fn has_offset(&self) -> bool {
        !self.is_metric()
    }

    pub fn scalar_count(&self) -> usize {
        self.signature.weight_count()
    }

    /// Initial raw scalars: `theta = 0` (unit weights) and `c = 1`.
    pub fn initial_scalars(&self) -> Vec<f64> {
        if self.has_offset() {
            vec![1.0]
        } else {
            vec![0.0; self.weight_count()]
        }
    }

    pub fn resolve(&self, raw: &[f64]) -> Scalars {
        debug_assert_eq!(raw.len(), self.scalar_count());
        if self.has_offset() {
            Scalars {
                weights: Vec::new(),
                offset: raw[0],
            }
        } else {
            Scalars {
                weights: raw.iter().map(|t| t.exp()).collect(),
                offset: 0.0,
            }
        }
    }

    /// Model distance (or dissimilarity score for dot models) between two
    /// ambient vectors.
    pub fn distance(&self, s: &Scalars, x: &[f64], y: &[f64]) -> f64 {
        match &self.compiled {
            Compiled::Product(slots) => {
                let mut sum = 0.0;
                for slot in slots {
                    let st = PairStats::of(&x[slot.range.clone()], &y[slot.range.clone()]);
                    let d = geometry::term_value(slot.kind, &st);
                    let w = slot.weight.map_or(1.0, |k| s.weights[k]);
                    sum += w * d * d;
                }
                sum.sqrt()
            }
            Compiled::Overlay {
                subsets,
                aggregation,
            } => {
                let mut acc = 0.0;
                for (i, range) in subsets.iter().enumerate() {
                    let st = PairStats::of(&x[range.clone()], &y[range.clone()]);
                    for (k, kind) in SpaceKind::ALL.into_iter().enumerate() {
                        let w = s.weights[3 * i + k];
                        let d = geometry::term_value(kind, &st);
                        match aggregation {
                            Aggregation::L0 => acc = f64::max(acc, w * d),
                            Aggregation::L1 => acc += w * d,
                            Aggregation::L2 => acc += w * d * d,
                        }
                    }
                }
                match aggregation {
                    Aggregation::L2 => acc.sqrt(),
                    _ => acc,
                }
            }
            Compiled::Dot => s.offset - dot(x, y),
            Compiled::ExpDot => {
                s.offset * (-dot(x, y).clamp(-EXP_DOT_CLAMP, EXP_DOT_CLAMP)).exp()
            }
        }
    }

    /// Adds `upstream * grad` of the distance to `gx`, `gy` (ambient rows)
    /// and `graw` (raw scalars) and returns the distance.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate(
        &self,
        s: &Scalars,
        x: &[f64],
        y: &[f64],
        upstream: f64,
        gx: &mut [f64],
        gy: &mut [f64],
        graw: &mut [f64],
    ) -> f64 {
        self.accumulate_with(s, x, y, |_| upstream, gx, gy, graw)
    }

    /// Like [`Model::accumulate`], with the upstream derivative computed
    /// from the distance itself.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_with(
        &self,
        s: &Scalars,
        x: &[f64],
        y: &[f64],
        upstream: impl FnOnce(f64) -> f64,
        gx: &mut [f64],
        gy: &mut [f64],
        graw: &mut [f64],
    ) -> f64 {
        match &self.compiled {
            Compiled::Product(slots) => {
                let mut terms: SmallVec<[TermGrad; 8]> = SmallVec::new();
                for slot in slots {
                    let st = PairStats::of(&x[slot.range.clone()], &y[slot.range.clone()]);
                    terms.push(geometry::term_grad(slot.kind, &st));
                }
                let sum: f64 = slots
                    .iter()
                    .zip(&terms)
                    .map(|(slot, t)| slot.weight.map_or(1.0, |k| s.weights[k]) * t.d * t.d)
                    .sum();
                let total = sum.sqrt();
                let upstream = upstream(total);
                if total == 0.0 || upstream == 0.0 {
                    return total;
                }
                for (slot, t) in slots.iter().zip(&terms) {
                    let w = slot.weight.map_or(1.0, |k| s.weights[k]);
                    let g = upstream * w * t.d / total;
                    if let Some(k) = slot.weight {
                        graw[k] += upstream * w * t.d * t.d / (2.0 * total);
                    }
                    apply(slot.range.clone(), x, y, gx, gy, g * t.ax, g * t.bx, g * t.ay, g * t.by);
                }
                total
            }
            Compiled::Overlay {
                subsets,
                aggregation,
            } => {
                let mut terms: SmallVec<[TermGrad; 21]> = SmallVec::new();
                for range in subsets {
                    let st = PairStats::of(&x[range.clone()], &y[range.clone()]);
                    for kind in SpaceKind::ALL {
                        terms.push(geometry::term_grad(kind, &st));
                    }
                }
                let w = &s.weights;
                let (total, argmax) = match aggregation {
                    Aggregation::L0 => {
                        let mut best = 0usize;
                        for j in 1..terms.len() {
                            if w[j] * terms[j].d > w[best] * terms[best].d {
                                best = j;
                            }
                        }
                        (w[best] * terms[best].d, best)
                    }
                    Aggregation::L1 => (terms.iter().zip(w).map(|(t, w)| w * t.d).sum(), 0),
                    Aggregation::L2 => (
                        terms
                            .iter()
                            .zip(w)
                            .map(|(t, w)| w * t.d * t.d)
                            .sum::<f64>()
                            .sqrt(),
                        0,
                    ),
                };
                let upstream = upstream(total);
                if upstream == 0.0 || (*aggregation == Aggregation::L2 && total == 0.0) {
                    return total;
                }
                for (i, range) in subsets.iter().enumerate() {
                    let (mut cxx, mut cxy, mut cyy, mut cyx) = (0.0, 0.0, 0.0, 0.0);
                    for k in 0..3 {
                        let j = 3 * i + k;
                        let t = &terms[j];
                        // dD/dd_j and dD/dtheta_j = w_j dD/dw_j
                        let (dd, dtheta) = match aggregation {
                            Aggregation::L0 => {
                                if j != argmax {
                                    continue;
                                }
                                (w[j], w[j] * t.d)
                            }
                            Aggregation::L1 => (w[j], w[j] * t.d),
                            Aggregation::L2 => {
                                (w[j] * t.d / total, w[j] * t.d * t.d / (2.0 * total))
                            }
                        };
                        graw[j] += upstream * dtheta;
                        let g = upstream * dd;
                        cxx += g * t.ax;
                        cxy += g * t.bx;
                        cyy += g * t.ay;
                        cyx += g * t.by;
                    }
                    if cxx != 0.0 || cxy != 0.0 || cyy != 0.0 || cyx != 0.0 {
                        apply(range.clone(), x, y, gx, gy, cxx, cxy, cyy, cyx);
                    }
                }
                total
            }
            Compiled::Dot => {
                let d = s.offset - dot(x, y);
                let upstream = upstream(d);
                for i in 0..x.len() {
                    gx[i] -= upstream * y[i];
                    gy[i] -= upstream * x[i];
                }
                graw[0] += upstream;
                d
            }
            Compiled::ExpDot => {
                let p = dot(x, y);
                let e = (-p.clamp(-EXP_DOT_CLAMP, EXP_DOT_CLAMP)).exp();
                let upstream = upstream(s.offset * e);
                graw[0] += upstream * e;
                if p.abs() < EXP_DOT_CLAMP {
                    let g = -upstream * s.offset * e;
                    for i in 0..x.len() {
                        gx[i] += g * y[i];
                        gy[i] += g * x[i];
                    }
                }
                s.offset * e
            }
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn apply(
    range: Range<usize>,
    x: &[f64],
    y: &[f64],
    gx: &mut [f64],
    gy: &mut [f64],
    cxx: f64,
    cxy: f64,
    cyy: f64,
    cyx: f64,
) {
    let (x, y) = (&x[range.clone()], &y[range.clone()]);
    let (gx, gy) = (&mut gx[range.clone()], &mut gy[range]);
    for (g, (a, b)) in gx.iter_mut().zip(x.iter().zip(y)) {
        *g += cxx * a + cxy * b;
    }
    for (g, (a, b)) in gy.iter_mut().zip(x.iter().zip(y)) {
        *g += cyy * b + cyx * a;
    }
}

