//! Scalar abstraction shared by plain floating-point evaluation and
//! forward-mode differentiation.
//!
//! Everything numeric in this crate is generic over [`Real`] (`f32` or `f64`).
//! Expression evaluation is additionally generic over [`Scalar`], which is
//! implemented both by the reals themselves and by the truncated Taylor types
//! [`Jet1`] (one directional derivative) and [`Jet2`] (two directions plus the
//! mixed second derivative). Running an expression on `Jet2<R>` yields exact
//! derivatives: there is no truncation error, only rounding.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use num_traits::{FloatConst, FromPrimitive, One, Zero};

/// Arithmetic plus the elementary functions of the expression language.
///
/// Implementations must be pure: the same inputs produce bit-identical
/// outputs, which the rest of the crate relies on for reproducibility.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Underlying real field (`f32` or `f64`).
    type Field: Real;

    /// Embeds a constant (zero derivative part).
    fn lift(c: Self::Field) -> Self;

    /// Value part, discarding any derivative information.
    fn real(self) -> Self::Field;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    /// Integer power with the usual chain rule; total for nonzero base.
    fn powi(self, n: i32) -> Self;
    /// Power with a constant real exponent.
    fn powf_const(self, c: Self::Field) -> Self;
}

/// A real scalar type usable for grid data, residuals and tolerances.
///
/// `f32` and `f64` implement this. Concrete aliases at the crate root fix
/// `f64`, which is what the shipped tolerances are calibrated for.
pub trait Real:
    Scalar<Field = Self>
    + PartialOrd
    + Zero
    + One
    + FromPrimitive
    + FloatConst
    + Default
    + Display
    + serde::Serialize
    + Send
    + Sync
    + 'static
{
    fn finite(self) -> bool;
    /// Lossy embedding of an `f64` literal (exact for `f64`).
    fn from_lit(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn max_by_val(self, other: Self) -> Self;
    fn min_by_val(self, other: Self) -> Self;
}

macro_rules! impl_real_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            type Field = $t;

            #[inline]
            fn lift(c: $t) -> $t {
                c
            }
            #[inline]
            fn real(self) -> $t {
                self
            }
            #[inline]
            fn sin(self) -> $t {
                <$t>::sin(self)
            }
            #[inline]
            fn cos(self) -> $t {
                <$t>::cos(self)
            }
            #[inline]
            fn tan(self) -> $t {
                <$t>::tan(self)
            }
            #[inline]
            fn exp(self) -> $t {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> $t {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> $t {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> $t {
                <$t>::abs(self)
            }
            #[inline]
            fn powi(self, n: i32) -> $t {
                <$t>::powi(self, n)
            }
            #[inline]
            fn powf_const(self, c: $t) -> $t {
                <$t>::powf(self, c)
            }
        }

        impl Real for $t {
            #[inline]
            fn finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn from_lit(v: f64) -> $t {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn max_by_val(self, other: $t) -> $t {
                <$t>::max(self, other)
            }
            #[inline]
            fn min_by_val(self, other: $t) -> $t {
                <$t>::min(self, other)
            }
        }
    };
}

impl_real_scalar!(f32);
impl_real_scalar!(f64);

/// First-order dual number: value and one directional derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet1<R> {
    pub v: R,
    pub d: R,
}

impl<R: Real> Jet1<R> {
    #[inline]
    pub fn new(v: R, d: R) -> Self {
        Jet1 { v, d }
    }

    /// Seed for a variable carried along a direction component.
    #[inline]
    pub fn seeded(v: R, d: R) -> Self {
        Jet1 { v, d }
    }
}

/// Second-order jet along two directions.
///
/// Represents `v + e1*d1 + e2*d2 + e1*e2*d12` with `e1^2 = e2^2 = 0`:
/// the value, the two directional derivatives and the mixed second
/// derivative of whatever function produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2<R> {
    pub v: R,
    pub d1: R,
    pub d2: R,
    pub d12: R,
}

impl<R: Real> Jet2<R> {
    #[inline]
    pub fn new(v: R, d1: R, d2: R, d12: R) -> Self {
        Jet2 { v, d1, d2, d12 }
    }

    /// Seed for evaluation at a point with two tangent directions.
    #[inline]
    pub fn seeded(v: R, d1: R, d2: R) -> Self {
        Jet2 {
            v,
            d1,
            d2,
            d12: R::zero(),
        }
    }
}

macro_rules! jet1_chain {
    // value, first derivative of the outer function
    ($u:ident, $f:expr, $df:expr) => {{
        let f = $f;
        let df = $df;
        Jet1 {
            v: f,
            d: df * $u.d,
        }
    }};
}

impl<R: Real> Add for Jet1<R> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Jet1::new(self.v + o.v, self.d + o.d)
    }
}
impl<R: Real> Sub for Jet1<R> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Jet1::new(self.v - o.v, self.d - o.d)
    }
}
impl<R: Real> Mul for Jet1<R> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Jet1::new(self.v * o.v, self.v * o.d + self.d * o.v)
    }
}
impl<R: Real> Div for Jet1<R> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Jet1::new(q, (self.d - q * o.d) / o.v)
    }
}
impl<R: Real> Neg for Jet1<R> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Jet1::new(-self.v, -self.d)
    }
}
impl<R: Real> AddAssign for Jet1<R> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<R: Real> Scalar for Jet1<R> {
    type Field = R;

    #[inline]
    fn lift(c: R) -> Self {
        Jet1::new(c, R::zero())
    }
    #[inline]
    fn real(self) -> R {
        self.v
    }
    #[inline]
    fn sin(self) -> Self {
        jet1_chain!(self, self.v.sin(), self.v.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        jet1_chain!(self, self.v.cos(), -self.v.sin())
    }
    #[inline]
    fn tan(self) -> Self {
        let t = self.v.tan();
        jet1_chain!(self, t, R::one() + t * t)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        jet1_chain!(self, e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        jet1_chain!(self, self.v.ln(), R::one() / self.v)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        jet1_chain!(self, s, R::from_lit(0.5) / s)
    }
    #[inline]
    fn abs(self) -> Self {
        let sign = signum_or_zero(self.v);
        jet1_chain!(self, self.v.abs(), sign)
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::lift(R::one()),
            1 => self,
            _ => {
                let nf = R::from_i32(n).expect("i32 fits in float");
                jet1_chain!(self, self.v.powi(n), nf * self.v.powi(n - 1))
            }
        }
    }
    fn powf_const(self, c: R) -> Self {
        jet1_chain!(self, self.v.powf_const(c), c * self.v.powf_const(c - R::one()))
    }
}

impl<R: Real> Add for Jet2<R> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Jet2::new(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2, self.d12 + o.d12)
    }
}
impl<R: Real> Sub for Jet2<R> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Jet2::new(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2, self.d12 - o.d12)
    }
}
impl<R: Real> Mul for Jet2<R> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Jet2::new(
            self.v * o.v,
            self.v * o.d1 + self.d1 * o.v,
            self.v * o.d2 + self.d2 * o.v,
            self.v * o.d12 + self.d1 * o.d2 + self.d2 * o.d1 + self.d12 * o.v,
        )
    }
}
impl<R: Real> Div for Jet2<R> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        // Solve q*o = self channel by channel.
        let v = self.v / o.v;
        let d1 = (self.d1 - v * o.d1) / o.v;
        let d2 = (self.d2 - v * o.d2) / o.v;
        let d12 = (self.d12 - d1 * o.d2 - d2 * o.d1 - v * o.d12) / o.v;
        Jet2::new(v, d1, d2, d12)
    }
}
impl<R: Real> Neg for Jet2<R> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Jet2::new(-self.v, -self.d1, -self.d2, -self.d12)
    }
}
impl<R: Real> AddAssign for Jet2<R> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<R: Real> Jet2<R> {
    /// Chain rule through a scalar function with given first and second
    /// derivative at the value part.
    #[inline]
    fn chain(self, f: R, df: R, ddf: R) -> Self {
        Jet2::new(
            f,
            df * self.d1,
            df * self.d2,
            ddf * self.d1 * self.d2 + df * self.d12,
        )
    }
}

impl<R: Real> Scalar for Jet2<R> {
    type Field = R;

    #[inline]
    fn lift(c: R) -> Self {
        Jet2::new(c, R::zero(), R::zero(), R::zero())
    }
    #[inline]
    fn real(self) -> R {
        self.v
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = (self.v.sin(), self.v.cos());
        self.chain(s, c, -s)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = (self.v.sin(), self.v.cos());
        self.chain(c, -s, -c)
    }
    #[inline]
    fn tan(self) -> Self {
        let t = self.v.tan();
        let sec2 = R::one() + t * t;
        self.chain(t, sec2, R::from_lit(2.0) * t * sec2)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        let inv = R::one() / self.v;
        self.chain(self.v.ln(), inv, -inv * inv)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let ds = R::from_lit(0.5) / s;
        self.chain(s, ds, -ds / (R::from_lit(2.0) * self.v))
    }
    #[inline]
    fn abs(self) -> Self {
        let sign = signum_or_zero(self.v);
        self.chain(self.v.abs(), sign, R::zero())
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::lift(R::one()),
            1 => self,
            _ => {
                let nf = R::from_i32(n).expect("i32 fits in float");
                let second = if n == 2 {
                    // avoid 0^0 at v = 0
                    nf
                } else {
                    nf * (nf - R::one()) * self.v.powi(n - 2)
                };
                self.chain(self.v.powi(n), nf * self.v.powi(n - 1), second)
            }
        }
    }
    fn powf_const(self, c: R) -> Self {
        let f = self.v.powf_const(c);
        let df = c * self.v.powf_const(c - R::one());
        let ddf = c * (c - R::one()) * self.v.powf_const(c - R::from_lit(2.0));
        self.chain(f, df, ddf)
    }
}

#[inline]
fn signum_or_zero<R: Real>(v: R) -> R {
    if v > R::zero() {
        R::one()
    } else if v < R::zero() {
        -R::one()
    } else {
        R::zero()
    }
}
