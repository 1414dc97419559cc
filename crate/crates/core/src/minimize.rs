//! Bracketed one-dimensional minimization (Brent's method: golden-section
//! steps with parabolic interpolation when it behaves).

use crate::scalar::Scalar;

/// `(3 - sqrt 5) / 2`
const GOLDEN: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum<T> {
    pub x: T,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` on `[lo, hi]` starting from the golden-section point.
pub fn brent<T: Scalar, F: FnMut(T) -> T>(
    f: F,
    lo: T,
    hi: T,
    xtol: T,
    max_iter: usize,
) -> Minimum<T> {
    let start = lo + T::lit(GOLDEN) * (hi - lo);
    brent_from(f, lo, hi, start, xtol, max_iter)
}

/// Minimizes `f` on `[lo, hi]` from an interior starting point, stopping once
/// the bracket around the best point is narrower than about `2 * xtol`.
///
/// Returns the best point seen even when `max_iter` is exhausted, with
/// `converged == false`.
pub fn brent_from<T: Scalar, F: FnMut(T) -> T>(
    mut f: F,
    lo: T,
    hi: T,
    start: T,
    xtol: T,
    max_iter: usize,
) -> Minimum<T> {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let zero = T::zero();
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let golden = T::lit(GOLDEN);

    let mut x = start.max(a).min(b);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d = zero;
    let mut e = zero;

    for iteration in 0..max_iter {
        let mid = half * (a + b);
        let tol1 = half * xtol + T::epsilon() * x.abs();
        let tol2 = two * tol1;
        if (x - mid).abs() <= tol2 - half * (b - a) {
            return Minimum {
                x,
                value: fx,
                iterations: iteration,
                converged: true,
            };
        }

        let mut golden_step = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = two * (q - r);
            if q > zero {
                p = -p;
            } else {
                q = -q;
            }
            let previous = e;
            if p.abs() < (half * q * previous).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if mid >= x { tol1 } else { -tol1 };
                }
                golden_step = false;
            }
        }
        if golden_step {
            e = if x >= mid { a - x } else { b - x };
            d = golden * e;
        }

        let u = if d.abs() >= tol1 {
            x + d
        } else if d >= zero {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);

        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Minimum {
        x,
        value: fx,
        iterations: max_iter,
        converged: false,
    }
}
