//! One-dimensional quadrature rules on a finite interval.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Trapezoid,
    GaussLegendre,
}

/// Nodes and weights of a rule mapped onto `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct Nodes<T> {
    pub points: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> Nodes<T> {
    pub fn new(rule: Rule, lo: T, hi: T, count: usize) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::invalid(
                "interval",
                "upper bound must exceed lower bound",
            ));
        }
        match rule {
            Rule::Trapezoid => trapezoid(lo, hi, count),
            Rule::GaussLegendre => gauss_legendre(lo, hi, count),
        }
    }

    pub fn integrate(&self, mut f: impl FnMut(T) -> T) -> T {
        self.points
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (&x, &w)| acc + w * f(x))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn trapezoid<T: Scalar>(lo: T, hi: T, count: usize) -> Result<Nodes<T>> {
    if count < 2 {
        return Err(Error::invalid(
            "nodes",
            "trapezoid rule needs at least 2 nodes",
        ));
    }
    let intervals = T::from_usize(count - 1).unwrap();
    let step = (hi - lo) / intervals;
    let half = step / T::lit(2.0);
    let points = (0..count)
        .map(|i| lo + step * T::from_usize(i).unwrap())
        .collect();
    let weights = (0..count)
        .map(|i| if i == 0 || i == count - 1 { half } else { step })
        .collect();
    Ok(Nodes { points, weights })
}

/// Newton iteration on the three-term Legendre recurrence, seeded with
/// `cos(pi (i - 1/4) / (n + 1/2))`.
fn gauss_legendre<T: Scalar>(lo: T, hi: T, count: usize) -> Result<Nodes<T>> {
    if count < 1 {
        return Err(Error::invalid(
            "nodes",
            "Gauss-Legendre rule needs at least 1 node",
        ));
    }
    let n = count;
    let nf = T::from_usize(n).unwrap();
    let one = T::one();
    let two = T::lit(2.0);
    let mid = (hi + lo) / two;
    let half = (hi - lo) / two;
    let tol = T::epsilon() * T::lit(4.0);

    let mut points = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    for i in 0..n.div_ceil(2) {
        let k = T::from_usize(i + 1).unwrap();
        let mut z = (T::PI() * (k - T::lit(0.25)) / (nf + T::lit(0.5))).cos();
        let mut derivative = one;
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, z);
            derivative = dp;
            let dz = p / dp;
            z = z - dz;
            if dz.abs() <= tol {
                let (_, dp) = legendre_with_derivative(n, z);
                derivative = dp;
                break;
            }
        }
        let w = two / ((one - z * z) * derivative * derivative);
        points[i] = mid - half * z;
        points[n - 1 - i] = mid + half * z;
        weights[i] = half * w;
        weights[n - 1 - i] = half * w;
    }
    Ok(Nodes { points, weights })
}

fn legendre_with_derivative<T: Scalar>(n: usize, z: T) -> (T, T) {
    let one = T::one();
    let mut p_prev = one;
    let mut p = z;
    if n == 0 {
        return (one, T::zero());
    }
    for k in 2..=n {
        let kf = T::from_usize(k).unwrap();
        let next = ((T::lit(2.0) * kf - one) * z * p - (kf - one) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    let nf = T::from_usize(n).unwrap();
    let dp = nf * (z * p - p_prev) / (z * z - one);
    (p, dp)
}
