use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SpaceKind;

/// Deepest overlay supported; the weight count grows as `3 (2^{t+1} - 1)`.
pub const MAX_OVERLAY_DEPTH: usize = 12;

/// How the subscript of a spherical factor is read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SphereConvention {
    /// `S4` is the 4-sphere and occupies 5 stored coordinates.
    #[default]
    Manifold,
    /// `S5` occupies 5 stored coordinates (the 4-sphere); at least 2 are
    /// required.
    Stored,
}

impl SphereConvention {
    pub fn name(self) -> &'static str {
        match self {
            SphereConvention::Manifold => "manifold",
            SphereConvention::Stored => "stored",
        }
    }
}

impl std::str::FromStr for SphereConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "manifold" => Ok(SphereConvention::Manifold),
            "stored" => Ok(SphereConvention::Stored),
            _ => Err(Error::Config(format!("unknown sphere convention '{s}'"))),
        }
    }
}

/// One factor of a product space over `ambient` stored coordinates.
///
/// Displayed with the manifold dimension, which for spherical factors is one
/// less than the number of stored values: `S4` occupies 5 coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Factor {
    pub kind: SpaceKind,
    pub ambient: usize,
}

impl Factor {
    pub fn manifold_dim(&self) -> usize {
        match self.kind {
            SpaceKind::Spherical => self.ambient - 1,
            _ => self.ambient,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.letter(), self.manifold_dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Maximum of weighted terms.
    L0,
    /// Weighted sum.
    L1,
    /// Root of the weighted sum of squares.
    L2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shape {
    Single(Factor),
    Product(Vec<Factor>),
    Overlay { depth: usize, aggregation: Aggregation },
    Dot,
    ExpDot,
}

/// A validated space specification for embeddings of dimension `dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub shape: Shape,
    pub dim: usize,
}

impl Signature {
    pub fn is_metric(&self) -> bool {
        !matches!(self.shape, Shape::Dot | Shape::ExpDot)
    }

    /// Product factors (a single space is a one-factor product).
    pub fn factors(&self) -> Option<&[Factor]> {
        match &self.shape {
            Shape::Single(f) => Some(std::slice::from_ref(f)),
            Shape::Product(fs) => Some(fs),
            _ => None,
        }
    }

    /// Sum of manifold dimensions; smaller than `dim` when spherical factors
    /// use the stored-value convention.
    pub fn manifold_dim(&self) -> usize {
        match self.factors() {
            Some(fs) => fs.iter().map(Factor::manifold_dim).sum(),
            None => self.dim,
        }
    }

    /// Number of trainable scalars: one weight per non-Euclidean product
    /// factor, `3 (2^{t+1} - 1)` overlay weights, or the dot offset.
    pub fn weight_count(&self) -> usize {
        match &self.shape {
            Shape::Single(_) | Shape::Product(_) => self
                .factors()
                .unwrap()
                .iter()
                .filter(|f| f.kind != SpaceKind::Euclidean)
                .count(),
            Shape::Overlay { depth, .. } => 3 * ((1usize << (depth + 1)) - 1),
            Shape::Dot | Shape::ExpDot => 1,
        }
    }

    /// Coordinate subsets of the universal overlay signature as half-open
    /// ranges, layer by layer: layer `l` splits `0..dim` into `2^l`
    /// contiguous blocks with boundaries `floor(dim * i / 2^l)`.
    pub fn overlay_subsets(&self) -> Option<Vec<std::ops::Range<usize>>> {
        match self.shape {
            Shape::Overlay { depth, .. } => Some(dyadic_subsets(self.dim, depth)),
            _ => None,
        }
    }
}

pub(crate) fn dyadic_subsets(dim: usize, depth: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::with_capacity((1 << (depth + 1)) - 1);
    for layer in 0..=depth {
        let parts = 1usize << layer;
        for i in 0..parts {
            out.push(dim * i / parts..dim * (i + 1) / parts);
        }
    }
    out
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.shape {
            Shape::Single(factor) => write!(f, "{factor}"),
            Shape::Product(factors) => {
                let mut first = true;
                let mut i = 0;
                while i < factors.len() {
                    let run = factors[i..].iter().take_while(|g| **g == factors[i]).count();
                    if !first {
                        f.write_str("x")?;
                    }
                    first = false;
                    write!(f, "{}", factors[i])?;
                    if run > 1 {
                        write!(f, "^{run}")?;
                    }
                    i += run;
                }
                Ok(())
            }
            Shape::Overlay { depth, aggregation } => {
                let agg = match aggregation {
                    Aggregation::L0 => 0,
                    Aggregation::L1 => 1,
                    Aggregation::L2 => 2,
                };
                write!(f, "OL{agg}:t={depth}")
            }
            Shape::Dot => f.write_str("DOT"),
            Shape::ExpDot => f.write_str("EXPDOT"),
        }
    }
}

/// Parses a signature such as `E10`, `H5xS4`, `H2^5`, `H2^2xE2xS1^2`,
/// `OL1:t=1` or `DOT` (case-insensitive) and checks it against `dim`.
/// Spherical subscripts are manifold dimensions.
pub fn parse_signature(text: &str, dim: usize) -> Result<Signature> {
    parse_signature_with(text, dim, SphereConvention::Manifold)
}

pub fn parse_signature_with(
    text: &str,
    dim: usize,
    convention: SphereConvention,
) -> Result<Signature> {
    if dim == 0 {
        return Err(Error::InvalidSignature("dimension must be positive".into()));
    }
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        convention,
    };
    let shape = p.signature()?;
    p.end()?;
    let sig = Signature { shape, dim };
    validate(&sig)?;
    Ok(sig)
}

fn validate(sig: &Signature) -> Result<()> {
    match &sig.shape {
        Shape::Single(_) | Shape::Product(_) => {
            let total: usize = sig.factors().unwrap().iter().map(|f| f.ambient).sum();
            if total != sig.dim {
                return Err(Error::DimensionMismatch {
                    expected: sig.dim,
                    got: total,
                });
            }
        }
        Shape::Overlay { depth, .. } => {
            if *depth > MAX_OVERLAY_DEPTH {
                return Err(Error::InvalidSignature(format!(
                    "overlay depth {depth} exceeds {MAX_OVERLAY_DEPTH}"
                )));
            }
            if sig.dim < (1 << depth) {
                return Err(Error::InvalidSignature(format!(
                    "overlay depth {depth} needs at least {} coordinates, have {}",
                    1usize << depth,
                    sig.dim
                )));
            }
        }
        Shape::Dot | Shape::ExpDot => {}
    }
    Ok(())
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    convention: SphereConvention,
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::SignatureSyntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).map(u8::to_ascii_uppercase)
    }

    fn keyword(&mut self, word: &str) -> bool {
        let end = self.pos + word.len();
        if end <= self.src.len() && self.src[self.pos..end].eq_ignore_ascii_case(word.as_bytes())
        {
            self.pos = end;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        if self.keyword(word) {
            Ok(())
        } else {
            self.err(format!("expected '{word}'"))
        }
    }

    fn int(&mut self) -> Result<usize> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected an integer");
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match digits.parse::<usize>() {
            Ok(v) if v <= 1 << 20 => Ok(v),
            _ => {
                self.pos = start;
                self.err("integer out of range")
            }
        }
    }

    fn end(&self) -> Result<()> {
        if self.pos == self.src.len() {
            Ok(())
        } else {
            self.err("unexpected trailing input")
        }
    }

    fn signature(&mut self) -> Result<Shape> {
        if self.keyword("EXPDOT") {
            return Ok(Shape::ExpDot);
        }
        if self.keyword("DOT") {
            return Ok(Shape::Dot);
        }
        if self.keyword("OL") {
            let aggregation = match self.peek() {
                Some(b'0') => Aggregation::L0,
                Some(b'1') => Aggregation::L1,
                Some(b'2') => Aggregation::L2,
                _ => return self.err("expected aggregation 0, 1 or 2"),
            };
            self.pos += 1;
            self.expect(":T=")?;
            let depth = self.int()?;
            return Ok(Shape::Overlay { depth, aggregation });
        }
        let mut factors = Vec::new();
        let mut powered = false;
        loop {
            let (factor, count) = self.term()?;
            powered |= count > 1;
            factors.extend(std::iter::repeat_n(factor, count));
            if !self.keyword("X") {
                break;
            }
        }
        if factors.len() == 1 && !powered {
            Ok(Shape::Single(factors[0]))
        } else {
            Ok(Shape::Product(factors))
        }
    }

    fn term(&mut self) -> Result<(Factor, usize)> {
        let kind = match self.peek() {
            Some(b'E') => SpaceKind::Euclidean,
            Some(b'S') => SpaceKind::Spherical,
            Some(b'H') => SpaceKind::Hyperbolic,
            _ => return self.err("expected space kind E, S or H"),
        };
        self.pos += 1;
        let at = self.pos;
        let n = self.int()?;
        let ambient = match (kind, self.convention) {
            (SpaceKind::Spherical, SphereConvention::Manifold) => n + 1,
            _ => n,
        };
        if ambient < 1 || (kind == SpaceKind::Spherical && ambient < 2) {
            self.pos = at;
            return match kind {
                SpaceKind::Spherical => {
                    self.err("spherical factor needs at least 2 stored coordinates")
                }
                _ => self.err("factor dimension must be positive"),
            };
        }
        let mut count = 1;
        if self.keyword("^") {
            let at = self.pos;
            count = self.int()?;
            if count == 0 {
                self.pos = at;
                return self.err("power must be positive");
            }
        }
        Ok((Factor { kind, ambient }, count))
    }
}
