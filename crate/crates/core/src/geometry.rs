//! Projections of ambient vectors onto the sphere and the hyperboloid, the
//! three base distances, and their gradients with respect to the ambient
//! coordinates.
//!
//! Every distance here is a function of four pair statistics of the ambient
//! vectors (`|x|^2`, `|y|^2`, `x.y`, `|x - y|^2`), and every gradient is a
//! linear combination `a x + b y`. The model code relies on both facts to
//! evaluate all three geometries over a shared coordinate subset in a single
//! pass.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Interior margin applied to `arccos`/`arccosh` arguments when computing
/// gradients, keeping derivatives finite at the domain boundary.
pub const GRAD_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpaceKind {
    Euclidean,
    Spherical,
    Hyperbolic,
}

impl SpaceKind {
    pub const ALL: [SpaceKind; 3] = [
        SpaceKind::Euclidean,
        SpaceKind::Spherical,
        SpaceKind::Hyperbolic,
    ];

    pub fn letter(self) -> char {
        match self {
            SpaceKind::Euclidean => 'E',
            SpaceKind::Spherical => 'S',
            SpaceKind::Hyperbolic => 'H',
        }
    }
}

/// A point on the upper sheet of the hyperboloid `<p, p>_h = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint(Vec<f64>);

impl LorentzPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn inner(&self, other: &LorentzPoint) -> f64 {
        lorentz_inner(&self.0, &other.0)
    }
}

/// `x_1 y_1 - sum_{i>=2} x_i y_i`.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> f64 {
    let tail: f64 = x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum();
    x[0] * y[0] - tail
}

pub fn map_spherical(x: &[f64]) -> Result<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

/// Lifts `x` onto the hyperboloid as `(sqrt(1 + |x|^2), x)`.
pub fn map_hyperbolic(x: &[f64]) -> LorentzPoint {
    let sq: f64 = x.iter().map(|v| v * v).sum();
    let mut coords = Vec::with_capacity(x.len() + 1);
    coords.push((1.0 + sq).sqrt());
    coords.extend_from_slice(x);
    LorentzPoint(coords)
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

pub fn dist_euclidean(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    Ok(euclidean(&PairStats::of(x, y)))
}

pub fn dist_spherical(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    let s = PairStats::of(x, y);
    if s.xx == 0.0 || s.yy == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(spherical(&s))
}

pub fn dist_hyperbolic(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    Ok(hyperbolic(&PairStats::of(x, y)))
}

pub fn distance(kind: SpaceKind, x: &[f64], y: &[f64]) -> Result<f64> {
    match kind {
        SpaceKind::Euclidean => dist_euclidean(x, y),
        SpaceKind::Spherical => dist_spherical(x, y),
        SpaceKind::Hyperbolic => dist_hyperbolic(x, y),
    }
}

/// Gradients of the composed distance with respect to both ambient vectors.
/// Singular configurations are regularised rather than rejected.
pub fn grad_distance(kind: SpaceKind, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(x, y)?;
    let g = term_grad(kind, &PairStats::of(x, y));
    let gx = x.iter().zip(y).map(|(a, b)| g.ax * a + g.bx * b).collect();
    let gy = y.iter().zip(x).map(|(b, a)| g.ay * b + g.by * a).collect();
    Ok((gx, gy))
}

/// Sufficient statistics of a pair of equal-length vectors.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PairStats {
    pub len: usize,
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
    pub dd: f64,
}

impl PairStats {
    #[inline]
    pub fn of(x: &[f64], y: &[f64]) -> Self {
        let mut s = PairStats {
            len: x.len(),
            ..PairStats::default()
        };
        for (&a, &b) in x.iter().zip(y) {
            let diff = a - b;
            s.xx += a * a;
            s.yy += b * b;
            s.xy += a * b;
            s.dd += diff * diff;
        }
        s
    }

    #[inline]
    fn cosine(&self) -> f64 {
        (self.xy / (self.xx * self.yy).sqrt()).clamp(-1.0, 1.0)
    }

    /// `<M_H(x), M_H(y)>_h - 1`, computed without cancellation.
    #[inline]
    fn lorentz_gap(&self) -> (f64, f64, f64) {
        let p0 = (1.0 + self.xx).sqrt();
        let q0 = (1.0 + self.yy).sqrt();
        let lift = (self.xx - self.yy) / (p0 + q0);
        (((self.dd - lift * lift) * 0.5).max(0.0), p0, q0)
    }
}

/// A distance value with its gradient written as `grad_x = ax x + bx y`,
/// `grad_y = ay y + by x`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TermGrad {
    pub d: f64,
    pub ax: f64,
    pub bx: f64,
    pub ay: f64,
    pub by: f64,
}

#[inline]
pub(crate) fn euclidean(s: &PairStats) -> f64 {
    s.dd.sqrt()
}

#[inline]
pub(crate) fn spherical(s: &PairStats) -> f64 {
    if s.xx == 0.0 || s.yy == 0.0 {
        // No direction: only a coincident pair is at distance zero.
        return if s.dd == 0.0 { 0.0 } else { FRAC_PI_2 };
    }
    if s.len == 1 {
        return if s.xy > 0.0 { 0.0 } else { PI };
    }
    let c = s.cosine();
    if c > 0.5 {
        // Small angles: half-chord of the projected points avoids the
        // cancellation in arccos near 1.
        let (nx, ny) = (s.xx.sqrt(), s.yy.sqrt());
        let lift = (s.xx - s.yy) / (nx + ny);
        let chord_sq = ((s.dd - lift * lift) / (nx * ny)).max(0.0);
        2.0 * (0.5 * chord_sq.sqrt()).min(1.0).asin()
    } else {
        c.acos()
    }
}

#[inline]
pub(crate) fn hyperbolic(s: &PairStats) -> f64 {
    let (gap, _, _) = s.lorentz_gap();
    acosh_1p(gap)
}

/// `arccosh(1 + gap)` for `gap >= 0`.
#[inline]
fn acosh_1p(gap: f64) -> f64 {
    (gap + (gap * (gap + 2.0)).sqrt()).ln_1p()
}

#[inline]
pub(crate) fn term_value(kind: SpaceKind, s: &PairStats) -> f64 {
    match kind {
        SpaceKind::Euclidean => euclidean(s),
        SpaceKind::Spherical => spherical(s),
        SpaceKind::Hyperbolic => hyperbolic(s),
    }
}

#[inline]
pub(crate) fn term_grad(kind: SpaceKind, s: &PairStats) -> TermGrad {
    match kind {
        SpaceKind::Euclidean => {
            let d = s.dd.sqrt();
            let inv = if d > 0.0 { 1.0 / d } else { 0.0 };
            TermGrad {
                d,
                ax: inv,
                bx: -inv,
                ay: inv,
                by: -inv,
            }
        }
        SpaceKind::Spherical => {
            let d = spherical(s);
            if s.xx == 0.0 || s.yy == 0.0 || s.len == 1 {
                return TermGrad {
                    d,
                    ..TermGrad::default()
                };
            }
            let c = s.cosine();
            let nudged = c.clamp(-1.0 + GRAD_EPS, 1.0 - GRAD_EPS);
            let sine = (1.0 - nudged * nudged).sqrt();
            // d/dx arccos(c) = -(y / (|x||y|) - c x / |x|^2) / sin
            let cross = -1.0 / (s.xx.sqrt() * s.yy.sqrt() * sine);
            TermGrad {
                d,
                ax: c / (s.xx * sine),
                bx: cross,
                ay: c / (s.yy * sine),
                by: cross,
            }
        }
        SpaceKind::Hyperbolic => {
            let (gap, p0, q0) = s.lorentz_gap();
            let d = acosh_1p(gap);
            let nudged = gap.max(GRAD_EPS);
            let k = 1.0 / (nudged * (nudged + 2.0)).sqrt();
            // d<p,q>_h/dx = x q0 / p0 - y
            TermGrad {
                d,
                ax: k * q0 / p0,
                bx: -k,
                ay: k * p0 / q0,
                by: -k,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Kahan-compensated Euclidean distance.
    fn compensated_euclidean(x: &[f64], y: &[f64]) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (a, b) in x.iter().zip(y) {
            let term = (a - b) * (a - b) - comp;
            let t = sum + term;
            comp = (t - sum) - term;
            sum = t;
        }
        sum.sqrt()
    }

    fn central_difference(kind: SpaceKind, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = 1e-5;
        let f = |x: &[f64], y: &[f64]| distance(kind, x, y).unwrap();
        let partial = |v: &[f64], i: usize, other: &[f64], first: bool| {
            let mut plus = v.to_vec();
            let mut minus = v.to_vec();
            plus[i] += h;
            minus[i] -= h;
            if first {
                (f(&plus, other) - f(&minus, other)) / (2.0 * h)
            } else {
                (f(other, &plus) - f(other, &minus)) / (2.0 * h)
            }
        };
        let gx = (0..x.len()).map(|i| partial(x, i, y, true)).collect();
        let gy = (0..y.len()).map(|i| partial(y, i, x, false)).collect();
        (gx, gy)
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let scale = a
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(b.iter().map(|v| v * v).sum::<f64>().sqrt())
            .max(1e-12);
        diff / scale
    }

    #[test]
    fn spherical_projection() {
        assert_eq!(map_spherical(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(map_spherical(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(map_spherical(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn hyperbolic_projection() {
        let apex = map_hyperbolic(&[0.0, 0.0, 0.0]);
        assert_eq!(apex.coords(), &[1.0, 0.0, 0.0, 0.0]);
        let p = map_hyperbolic(&[0.3]);
        assert_eq!(p.coords(), &[1.09f64.sqrt(), 0.3]);
    }

    #[test]
    fn base_distance_examples() {
        assert_eq!(dist_euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(dist_euclidean(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(matches!(
            dist_euclidean(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));

        assert_eq!(dist_spherical(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(close(
            dist_spherical(&[1.0, 0.0], &[0.0, 2.0]).unwrap(),
            std::f64::consts::FRAC_PI_2,
            1e-15
        ));
        assert_eq!(
            dist_spherical(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(),
            std::f64::consts::PI
        );
        assert!(matches!(
            dist_spherical(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));

        assert_eq!(dist_hyperbolic(&[0.2, -0.4], &[0.2, -0.4]).unwrap(), 0.0);
        // arccosh(sqrt(1.09)) evaluated with mpmath at 50 digits.
        let expected = 0.295_673_047_563_422_2;
        assert!(close(dist_hyperbolic(&[0.3], &[0.0]).unwrap(), expected, 1e-15));
    }

    #[test]
    fn hyperbolic_matches_lorentz_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let naive = map_hyperbolic(&x).inner(&map_hyperbolic(&y)).max(1.0).acosh();
            let d = dist_hyperbolic(&x, &y).unwrap();
            assert!(close(d, naive, 1e-10 * naive.max(1.0)), "{d} vs {naive}");
        }
    }

    #[test]
    fn euclidean_matches_compensated_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let n = rng.gen_range(1..32);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let oracle = compensated_euclidean(&x, &y);
            assert!(close(dist_euclidean(&x, &y).unwrap(), oracle, 1e-12 * oracle.max(1.0)));
        }
    }

    #[test]
    fn euclidean_gradient_examples() {
        let (gx, gy) = grad_distance(SpaceKind::Euclidean, &[0.0, 0.0], &[3.0, 4.0]).unwrap();
        for (got, want) in gx.iter().zip([-0.6, -0.8]) {
            assert!(close(*got, want, 1e-15));
        }
        for (got, want) in gy.iter().zip([0.6, 0.8]) {
            assert!(close(*got, want, 1e-15));
        }
        let x = [0.3, -1.2, 2.0];
        let y = [0.31, -1.1, 2.05];
        let (gx, gy) = grad_distance(SpaceKind::Euclidean, &x, &y).unwrap();
        for (a, b) in gx.iter().zip(&gy) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for kind in SpaceKind::ALL {
            let mut checked = 0;
            while checked < 1000 {
                let n = rng.gen_range(1..8);
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let s = PairStats::of(&x, &y);
                let degenerate = match kind {
                    SpaceKind::Euclidean => s.dd < 1e-4,
                    SpaceKind::Spherical => {
                        n < 2 || s.xx < 1e-2 || s.yy < 1e-2 || s.cosine().abs() > 1.0 - 1e-4
                    }
                    SpaceKind::Hyperbolic => s.dd < 1e-4,
                };
                if degenerate {
                    continue;
                }
                let (gx, gy) = grad_distance(kind, &x, &y).unwrap();
                let (fx, fy) = central_difference(kind, &x, &y);
                assert!(rel_err(&gx, &fx) < 1e-4, "{kind:?} x={x:?} y={y:?}");
                assert!(rel_err(&gy, &fy) < 1e-4, "{kind:?} x={x:?} y={y:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn singular_gradients_are_finite() {
        for kind in SpaceKind::ALL {
            let x = [0.4, -0.2];
            let (gx, gy) = grad_distance(kind, &x, &x).unwrap();
            assert!(gx.iter().chain(&gy).all(|v| v.is_finite()), "{kind:?}");
            let (gx, _) = grad_distance(kind, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
            assert!(gx.iter().all(|v| v.is_finite()));
        }
        let (gx, gy) = grad_distance(SpaceKind::Spherical, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(gx.iter().chain(&gy).all(|v| *v == 0.0));
        // S_0: one coordinate, distance is 0 or pi and flat everywhere.
        assert_eq!(dist_spherical(&[0.5], &[-2.0]).unwrap(), std::f64::consts::PI);
        let (gx, _) = grad_distance(SpaceKind::Spherical, &[0.5], &[-2.0]).unwrap();
        assert_eq!(gx[0], 0.0);
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, n)
    }

    proptest! {
        #[test]
        fn projections_land_on_their_surfaces(x in vec_strategy(5)) {
            let p = map_hyperbolic(&x);
            prop_assert!((p.inner(&p) - 1.0).abs() < 1e-9);
            prop_assert!(p.coords()[0] >= 1.0);
            if x.iter().any(|v| *v != 0.0) {
                let u = map_spherical(&x).unwrap();
                let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn base_distances_are_metrics(
            x in vec_strategy(4), y in vec_strategy(4), z in vec_strategy(4)
        ) {
            prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
            prop_assume!(y.iter().any(|v| v.abs() > 1e-3));
            prop_assume!(z.iter().any(|v| v.abs() > 1e-3));
            for kind in SpaceKind::ALL {
                let dxy = distance(kind, &x, &y).unwrap();
                let dyx = distance(kind, &y, &x).unwrap();
                prop_assert_eq!(dxy, dyx);
                prop_assert!(dxy >= 0.0);
                prop_assert_eq!(distance(kind, &x, &x).unwrap(), 0.0);
                let dxz = distance(kind, &x, &z).unwrap();
                let dyz = distance(kind, &y, &z).unwrap();
                prop_assert!(dxy + dyz - dxz >= -1e-9, "{:?}", kind);
            }
        }

        #[test]
        fn spherical_zero_iff_same_direction(x in vec_strategy(3), scale in 0.1f64..10.0) {
            prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
            let y: Vec<f64> = x.iter().map(|v| v * scale).collect();
            prop_assert!(dist_spherical(&x, &y).unwrap() < 1e-7);
        }
    }
}
