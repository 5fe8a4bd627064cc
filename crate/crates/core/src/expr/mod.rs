//! Scalar expressions in named variables, with exact derivatives.
//!
//! An [`Expression`] is parsed from standard infix syntax over a declared,
//! ordered variable list (see `docs/expr-grammar.md` for the grammar). It can
//! be evaluated on any [`Scalar`]: plain reals for values, [`Jet2`] for exact
//! first and mixed second directional derivatives. All coordinate data in this
//! crate (anchor entries, structure functions, Lagrangians, morphism
//! components) is stored as expressions, so every derivative a residual needs
//! is exact and the only numerical error left is grid error.
//!
//! Evaluation is pure and allocation-free; expressions can be shared freely
//! across threads.

mod parse;

use std::fmt;
use std::sync::Arc;

use num_traits::Zero;

use crate::scalar::{Jet1, Jet2, Real, Scalar};

pub use parse::ParseError;

/// Unary functions of the expression language.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    /// Natural logarithm.
    Log,
    Sqrt,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

/// Expression tree. Variables are indices into the owning expression's
/// declared variable list.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Lit(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    /// Power with a constant integer exponent (folded at parse time).
    PowI(Box<Node>, i32),
    /// Power with a constant real exponent (folded at parse time).
    PowC(Box<Node>, f64),
    /// Power with a variable exponent; requires a positive base.
    Pow(Box<Node>, Box<Node>),
    Fn1(Func, Box<Node>),
}

/// Errors raised while evaluating an expression.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("point has {got} components but {expected} variables are declared")]
    ArityMismatch { expected: usize, got: usize },
    #[error("log of non-positive value {value}")]
    LogNonPositive { value: f64 },
    #[error("square root of negative value {value}")]
    SqrtNegative { value: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("power with non-positive base {base} and non-integer exponent")]
    PowNonPositiveBase { base: f64 },
    #[error("zero base raised to negative exponent")]
    ZeroBaseNegativePower,
}

/// A parsed scalar expression over an ordered variable list.
///
/// Immutable after construction; cloning is cheap (the variable list is
/// shared).
///
/// ```
/// use algebroid_mech::Expression;
///
/// let e = Expression::parse("x1*y1 + sin(x1)", &["x1", "y1"]).unwrap();
/// assert_eq!(e.eval(&[0.0_f64, 3.0]).unwrap(), 0.0);
///
/// // exact mixed second derivative of x1*y1 along the two axes
/// let jet = e.eval_jet2(&[0.0_f64, 3.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
/// assert_eq!(jet.d12, 1.0);
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Expression {
    vars: Arc<[String]>,
    root: Node,
}

impl Expression {
    /// Parses `source` against the declared variable list.
    ///
    /// Variable names must be distinct identifiers and must not shadow the
    /// built-in function names.
    pub fn parse<S: AsRef<str>>(source: &str, vars: &[S]) -> Result<Expression, ParseError> {
        let vars: Vec<String> = vars.iter().map(|v| v.as_ref().to_owned()).collect();
        parse::check_vars(&vars)?;
        let root = parse::parse(source, &vars)?;
        Ok(Expression {
            vars: vars.into(),
            root,
        })
    }

    /// Parses with a variable list shared from another expression.
    pub fn parse_shared(source: &str, vars: &Arc<[String]>) -> Result<Expression, ParseError> {
        let root = parse::parse(source, vars)?;
        Ok(Expression {
            vars: vars.clone(),
            root,
        })
    }

    /// A literal constant over the given variables.
    pub fn constant<S: AsRef<str>>(value: f64, vars: &[S]) -> Expression {
        let vars: Vec<String> = vars.iter().map(|v| v.as_ref().to_owned()).collect();
        Expression {
            vars: vars.into(),
            root: Node::Lit(value),
        }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn vars_arc(&self) -> Arc<[String]> {
        self.vars.clone()
    }

    /// The underlying tree, for inspection.
    pub fn root(&self) -> &Node {
        &self.root
    }

    /// True if the expression contains no variables.
    pub fn is_constant(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Lit(_) => true,
                Node::Var(_) => false,
                Node::Neg(a) | Node::PowI(a, _) | Node::PowC(a, _) | Node::Fn1(_, a) => walk(a),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a) && walk(b)
                }
            }
        }
        walk(&self.root)
    }

    /// Evaluates at a point of any scalar type (reals or jets).
    pub fn eval<T: Scalar>(&self, point: &[T]) -> Result<T, EvalError> {
        if point.len() != self.vars.len() {
            return Err(EvalError::ArityMismatch {
                expected: self.vars.len(),
                got: point.len(),
            });
        }
        eval_node(&self.root, point)
    }

    /// Value and exact directional derivative along `dir`.
    pub fn eval_jet1<R: Real>(&self, point: &[R], dir: &[R]) -> Result<Jet1<R>, EvalError> {
        if dir.len() != point.len() {
            return Err(EvalError::ArityMismatch {
                expected: point.len(),
                got: dir.len(),
            });
        }
        let seeded: Vec<Jet1<R>> = point
            .iter()
            .zip(dir)
            .map(|(&v, &d)| Jet1::seeded(v, d))
            .collect();
        self.eval(&seeded)
    }

    /// Value, the two exact directional derivatives along `dir1` and `dir2`,
    /// and the exact mixed second derivative, via nested dual numbers.
    pub fn eval_jet2<R: Real>(
        &self,
        point: &[R],
        dir1: &[R],
        dir2: &[R],
    ) -> Result<Jet2<R>, EvalError> {
        if dir1.len() != point.len() || dir2.len() != point.len() {
            return Err(EvalError::ArityMismatch {
                expected: point.len(),
                got: dir1.len().min(dir2.len()),
            });
        }
        let seeded: Vec<Jet2<R>> = point
            .iter()
            .zip(dir1.iter().zip(dir2))
            .map(|(&v, (&d1, &d2))| Jet2::seeded(v, d1, d2))
            .collect();
        self.eval(&seeded)
    }

    /// Exact partial derivative with respect to variable `i`.
    pub fn partial<R: Real>(&self, point: &[R], i: usize) -> Result<R, EvalError> {
        let mut dir = vec![R::zero(); point.len()];
        dir[i] = R::one();
        Ok(self.eval_jet1(point, &dir)?.d)
    }

    /// Exact gradient at `point`.
    pub fn gradient<R: Real>(&self, point: &[R]) -> Result<Vec<R>, EvalError> {
        let mut dir = vec![R::zero(); point.len()];
        let mut grad = Vec::with_capacity(point.len());
        for i in 0..point.len() {
            dir[i] = R::one();
            grad.push(self.eval_jet1(point, &dir)?.d);
            dir[i] = R::zero();
        }
        Ok(grad)
    }

    /// Substitutes `inner[i]` for variable `i`. All inner expressions must
    /// share one variable list, which becomes the variable list of the result.
    pub fn compose(&self, inner: &[Expression]) -> Result<Expression, ComposeError> {
        if inner.len() != self.vars.len() {
            return Err(ComposeError::ArityMismatch {
                expected: self.vars.len(),
                got: inner.len(),
            });
        }
        let vars = match inner.first() {
            Some(first) => {
                for e in inner {
                    if e.vars != first.vars {
                        return Err(ComposeError::VariableListMismatch);
                    }
                }
                first.vars.clone()
            }
            None => Arc::from(Vec::<String>::new()),
        };
        fn subst(n: &Node, inner: &[Expression]) -> Node {
            match n {
                Node::Lit(c) => Node::Lit(*c),
                Node::Var(i) => inner[*i].root.clone(),
                Node::Neg(a) => Node::Neg(Box::new(subst(a, inner))),
                Node::Add(a, b) => Node::Add(Box::new(subst(a, inner)), Box::new(subst(b, inner))),
                Node::Sub(a, b) => Node::Sub(Box::new(subst(a, inner)), Box::new(subst(b, inner))),
                Node::Mul(a, b) => Node::Mul(Box::new(subst(a, inner)), Box::new(subst(b, inner))),
                Node::Div(a, b) => Node::Div(Box::new(subst(a, inner)), Box::new(subst(b, inner))),
                Node::PowI(a, k) => Node::PowI(Box::new(subst(a, inner)), *k),
                Node::PowC(a, c) => Node::PowC(Box::new(subst(a, inner)), *c),
                Node::Pow(a, b) => Node::Pow(Box::new(subst(a, inner)), Box::new(subst(b, inner))),
                Node::Fn1(f, a) => Node::Fn1(*f, Box::new(subst(a, inner))),
            }
        }
        Ok(Expression {
            root: subst(&self.root, inner),
            vars,
        })
    }

    /// Sum of two expressions over the same variable list.
    pub fn add(&self, other: &Expression) -> Result<Expression, ComposeError> {
        if self.vars != other.vars {
            return Err(ComposeError::VariableListMismatch);
        }
        Ok(Expression {
            vars: self.vars.clone(),
            root: Node::Add(Box::new(self.root.clone()), Box::new(other.root.clone())),
        })
    }

    /// Product of two expressions over the same variable list.
    pub fn mul(&self, other: &Expression) -> Result<Expression, ComposeError> {
        if self.vars != other.vars {
            return Err(ComposeError::VariableListMismatch);
        }
        Ok(Expression {
            vars: self.vars.clone(),
            root: Node::Mul(Box::new(self.root.clone()), Box::new(other.root.clone())),
        })
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ComposeError {
    #[error("composition expects {expected} inner expressions, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("inner expressions do not share a variable list")]
    VariableListMismatch,
}

fn eval_node<T: Scalar>(node: &Node, point: &[T]) -> Result<T, EvalError> {
    Ok(match node {
        Node::Lit(c) => T::lift(T::Field::from_lit(*c)),
        Node::Var(i) => point[*i],
        Node::Neg(a) => -eval_node(a, point)?,
        Node::Add(a, b) => eval_node(a, point)? + eval_node(b, point)?,
        Node::Sub(a, b) => eval_node(a, point)? - eval_node(b, point)?,
        Node::Mul(a, b) => eval_node(a, point)? * eval_node(b, point)?,
        Node::Div(a, b) => {
            let den = eval_node(b, point)?;
            if den.real() == T::Field::zero() {
                return Err(EvalError::DivisionByZero);
            }
            eval_node(a, point)? / den
        }
        Node::PowI(a, n) => {
            let base = eval_node(a, point)?;
            if *n < 0 && base.real() == T::Field::zero() {
                return Err(EvalError::ZeroBaseNegativePower);
            }
            base.powi(*n)
        }
        Node::PowC(a, c) => {
            let base = eval_node(a, point)?;
            let b = base.real();
            if b < T::Field::zero() {
                return Err(EvalError::PowNonPositiveBase { base: b.to_f64() });
            }
            if b == T::Field::zero() && *c < 0.0 {
                return Err(EvalError::ZeroBaseNegativePower);
            }
            base.powf_const(T::Field::from_lit(*c))
        }
        Node::Pow(a, b) => {
            let base = eval_node(a, point)?;
            if base.real() <= T::Field::zero() {
                return Err(EvalError::PowNonPositiveBase {
                    base: base.real().to_f64(),
                });
            }
            let expo = eval_node(b, point)?;
            Scalar::exp(expo * Scalar::ln(base))
        }
        Node::Fn1(f, a) => {
            let u = eval_node(a, point)?;
            match f {
                Func::Sin => Scalar::sin(u),
                Func::Cos => Scalar::cos(u),
                Func::Tan => Scalar::tan(u),
                Func::Exp => Scalar::exp(u),
                Func::Log => {
                    if u.real() <= T::Field::zero() {
                        return Err(EvalError::LogNonPositive {
                            value: u.real().to_f64(),
                        });
                    }
                    Scalar::ln(u)
                }
                Func::Sqrt => {
                    if u.real() < T::Field::zero() {
                        return Err(EvalError::SqrtNegative {
                            value: u.real().to_f64(),
                        });
                    }
                    Scalar::sqrt(u)
                }
                Func::Abs => Scalar::abs(u),
            }
        }
    })
}

// Printing with minimal parentheses. Re-parsing the output yields the same
// tree, which the round-trip tests rely on.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root, &self.vars, 0)
    }
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn node_prec(n: &Node) -> u8 {
    match n {
        Node::Add(..) | Node::Sub(..) => PREC_ADD,
        Node::Mul(..) | Node::Div(..) => PREC_MUL,
        Node::Neg(..) => PREC_NEG,
        Node::Lit(v) if *v < 0.0 => PREC_NEG,
        Node::PowI(..) | Node::PowC(..) | Node::Pow(..) => PREC_POW,
        Node::Lit(_) | Node::Var(_) | Node::Fn1(..) => PREC_ATOM,
    }
}

fn write_node(
    f: &mut fmt::Formatter<'_>,
    n: &Node,
    vars: &[String],
    min_prec: u8,
) -> fmt::Result {
    let prec = node_prec(n);
    let parens = prec < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match n {
        Node::Lit(v) => write!(f, "{:?}", v)?,
        Node::Var(i) => write!(f, "{}", vars[*i])?,
        Node::Neg(a) => {
            write!(f, "-")?;
            write_node(f, a, vars, PREC_NEG)?;
        }
        Node::Add(a, b) => {
            write_node(f, a, vars, PREC_ADD)?;
            write!(f, " + ")?;
            write_node(f, b, vars, PREC_ADD + 1)?;
        }
        Node::Sub(a, b) => {
            write_node(f, a, vars, PREC_ADD)?;
            write!(f, " - ")?;
            write_node(f, b, vars, PREC_ADD + 1)?;
        }
        Node::Mul(a, b) => {
            write_node(f, a, vars, PREC_MUL)?;
            write!(f, "*")?;
            write_node(f, b, vars, PREC_MUL + 1)?;
        }
        Node::Div(a, b) => {
            write_node(f, a, vars, PREC_MUL)?;
            write!(f, "/")?;
            write_node(f, b, vars, PREC_MUL + 1)?;
        }
        Node::PowI(a, k) => {
            write_node(f, a, vars, PREC_ATOM)?;
            write!(f, "^{}", k)?;
        }
        Node::PowC(a, c) => {
            write_node(f, a, vars, PREC_ATOM)?;
            if *c < 0.0 {
                write!(f, "^({:?})", c)?;
            } else {
                write!(f, "^{:?}", c)?;
            }
        }
        Node::Pow(a, b) => {
            write_node(f, a, vars, PREC_ATOM)?;
            write!(f, "^")?;
            write_node(f, b, vars, PREC_NEG)?;
        }
        Node::Fn1(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(f, a, vars, 0)?;
            write!(f, ")")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn expr(src: &str, vars: &[&str]) -> Expression {
        Expression::parse(src, vars).unwrap()
    }

    #[test]
    fn eval_basics() {
        assert_eq!(expr("sin(x1)", &["x1"]).eval(&[0.0]).unwrap(), 0.0);
        assert_eq!(expr("x1*y1", &["x1", "y1"]).eval(&[2.0, 3.0]).unwrap(), 6.0);
        assert_eq!(expr("y1^2/2", &["y1"]).eval(&[3.0]).unwrap(), 4.5);
    }

    #[test]
    fn domain_errors_are_reported() {
        assert!(matches!(
            expr("log(x1)", &["x1"]).eval(&[-1.0]),
            Err(EvalError::LogNonPositive { .. })
        ));
        assert!(matches!(
            expr("1/x1", &["x1"]).eval(&[0.0]),
            Err(EvalError::DivisionByZero)
        ));
        assert!(matches!(
            expr("sqrt(x1)", &["x1"]).eval(&[-4.0]),
            Err(EvalError::SqrtNegative { .. })
        ));
        assert!(matches!(
            expr("x1", &["x1"]).eval(&[1.0, 2.0]),
            Err(EvalError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn jet2_square() {
        let e = expr("x1^2", &["x1"]);
        let j = e.eval_jet2(&[3.0], &[1.0], &[1.0]).unwrap();
        assert_eq!((j.v, j.d1, j.d2, j.d12), (9.0, 6.0, 6.0, 2.0));
    }

    #[test]
    fn jet2_sin_at_zero() {
        let e = expr("sin(x1)", &["x1"]);
        let j = e.eval_jet2(&[0.0], &[1.0], &[1.0]).unwrap();
        assert_eq!((j.v, j.d1, j.d2, j.d12), (0.0, 1.0, 1.0, 0.0));
    }

    /// Independent oracle: central finite differences on random cubic
    /// polynomials in four variables.
    #[test]
    fn jet_matches_finite_differences_on_random_cubics() {
        let vars = ["x1", "x2", "x3", "x4"];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            // random polynomial of total degree <= 3
            let mut terms = Vec::new();
            for _ in 0..8 {
                let c: f64 = rng.random_range(-2.0..2.0);
                let e1 = rng.random_range(0..2u32);
                let e2 = rng.random_range(0..2u32);
                let e3 = rng.random_range(0..2u32);
                let e4 = if e1 + e2 + e3 < 3 {
                    rng.random_range(0..=(3 - e1 - e2 - e3))
                } else {
                    0
                };
                let mut t = format!("{:?}", c);
                for (v, e) in vars.iter().zip([e1, e2, e3, e4]) {
                    for _ in 0..e {
                        t.push('*');
                        t.push_str(v);
                    }
                }
                terms.push(t);
            }
            let src = terms.join(" + ");
            let e = expr(&src, &vars);

            let point: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dir: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

            let j = e.eval_jet2(&point, &dir, &dir).unwrap();

            let h = 1e-5;
            let shift = |s: f64| -> Vec<f64> {
                point.iter().zip(&dir).map(|(p, d)| p + s * d).collect()
            };
            let fd = (e.eval(&shift(h)).unwrap() - e.eval(&shift(-h)).unwrap()) / (2.0 * h);
            assert!(
                (j.d1 - fd).abs() < 1e-8,
                "jet {} vs fd {} for {}",
                j.d1,
                fd,
                src
            );
        }
    }

    /// Jets of a sum are the componentwise sums of the jets, exactly.
    #[test]
    fn jet_linearity_is_exact() {
        let vars = ["x1", "x2"];
        let a = expr("sin(x1)*x2", &vars);
        let b = expr("exp(x2)/(1 + x1^2)", &vars);
        let sum = expr("sin(x1)*x2 + exp(x2)/(1 + x1^2)", &vars);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let d1 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let d2 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let ja = a.eval_jet2(&p, &d1, &d2).unwrap();
            let jb = b.eval_jet2(&p, &d1, &d2).unwrap();
            let js = sum.eval_jet2(&p, &d1, &d2).unwrap();
            assert_eq!(js.v, ja.v + jb.v);
            assert_eq!(js.d1, ja.d1 + jb.d1);
            assert_eq!(js.d2, ja.d2 + jb.d2);
            assert_eq!(js.d12, ja.d12 + jb.d12);
        }
    }

    /// Chain rule: for sin(exp(x)) the jet derivative equals
    /// cos(exp(x))*exp(x) to machine precision.
    #[test]
    fn chain_rule_spot_check() {
        let e = expr("sin(exp(x1))", &["x1"]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-2.0..2.0);
            let j = e.eval_jet1(&[x], &[1.0]).unwrap();
            let exact = x.exp().cos_of_self_times_exp(x);
            assert!((j.d - exact).abs() <= 1e-13 * (1.0 + exact.abs()));
        }
    }

    trait ChainOracle {
        fn cos_of_self_times_exp(self, x: f64) -> f64;
    }
    impl ChainOracle for f64 {
        fn cos_of_self_times_exp(self, x: f64) -> f64 {
            self.cos() * x.exp()
        }
    }

    #[test]
    fn display_reparse_roundtrip() {
        let vars = ["x1", "x2", "y1"];
        let sources = [
            "x1*y1 + sin(x2)",
            "-(x1 + x2)*y1",
            "x1^2^3",
            "x1^-2 + 2/(x2 - 4)",
            "sqrt(abs(x1))/exp(-x2) - tan(y1)^0.5",
            "-x1^2",
            "(x1 + 1)*(x2 - 2)/(y1 + 3)",
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for src in sources {
            let e = expr(src, &vars);
            let printed = e.to_string();
            let back = expr(&printed, &vars);
            assert_eq!(e, back, "AST changed for {src} -> {printed}");
            for _ in 0..100 {
                let p = [
                    rng.random_range(0.1..2.0),
                    rng.random_range(0.1..2.0),
                    rng.random_range(0.1..1.4),
                ];
                assert_eq!(e.eval(&p), back.eval(&p));
            }
        }
    }

    #[test]
    fn jets_evaluate_in_single_precision() {
        let e = expr("x1^2*sin(x2)", &["x1", "x2"]);
        let j32 = e.eval_jet2(&[1.5f32, 0.4], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let j64 = e.eval_jet2(&[1.5f64, 0.4], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((f64::from(j32.v) - j64.v).abs() < 1e-6);
        assert!((f64::from(j32.d12) - j64.d12).abs() < 1e-6);
    }

    #[test]
    fn compose_substitutes() {
        let outer = expr("x1^2 + x2", &["x1", "x2"]);
        let inner = [expr("sin(u)", &["u"]), expr("u*2", &["u"])];
        let comp = outer.compose(&inner).unwrap();
        let u = 0.7;
        let expected = (u.sin()).powi(2) + u * 2.0;
        assert_eq!(comp.eval(&[u]).unwrap(), expected);
    }

    #[test]
    fn variable_exponent_requires_positive_base() {
        let e = expr("x1^x2", &["x1", "x2"]);
        assert!((e.eval(&[2.0, 3.0]).unwrap() - 8.0).abs() < 1e-12);
        assert!(matches!(
            e.eval(&[-2.0, 3.0]),
            Err(EvalError::PowNonPositiveBase { .. })
        ));
    }

    mod roundtrip_property {
        use super::*;
        use proptest::prelude::*;

        fn arb_node() -> impl Strategy<Value = Node> {
            let leaf = prop_oneof![
                (-3.0..3.0f64).prop_map(Node::Lit),
                (0usize..2).prop_map(Node::Var),
            ];
            leaf.prop_recursive(4, 48, 4, |inner| {
                prop_oneof![
                    inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                    (inner.clone(), inner.clone())
                        .prop_map(|(a, b)| Node::Add(Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone())
                        .prop_map(|(a, b)| Node::Sub(Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone())
                        .prop_map(|(a, b)| Node::Mul(Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone())
                        .prop_map(|(a, b)| Node::Div(Box::new(a), Box::new(b))),
                    (inner.clone(), -3i32..4).prop_map(|(a, k)| Node::PowI(Box::new(a), k)),
                    (
                        inner,
                        prop_oneof![
                            Just(Func::Sin),
                            Just(Func::Cos),
                            Just(Func::Tan),
                            Just(Func::Exp),
                            Just(Func::Log),
                            Just(Func::Sqrt),
                            Just(Func::Abs)
                        ]
                    )
                        .prop_map(|(a, f)| Node::Fn1(f, Box::new(a))),
                ]
            })
        }

        proptest! {
            /// Printing and re-parsing any tree preserves evaluation
            /// bit for bit (including which inputs are domain errors).
            #[test]
            fn print_parse_preserves_evaluation(
                root in arb_node(),
                p1 in -2.0..2.0f64,
                p2 in -2.0..2.0f64,
            ) {
                let vars: Arc<[String]> = vec!["x1".to_owned(), "x2".to_owned()].into();
                let e = Expression { vars: vars.clone(), root };
                let printed = e.to_string();
                let back = Expression::parse_shared(&printed, &vars)
                    .unwrap_or_else(|err| panic!("re-parse of {printed} failed: {err}"));
                let lhs = e.eval(&[p1, p2]);
                let rhs = back.eval(&[p1, p2]);
                match (&lhs, &rhs) {
                    (Ok(a), Ok(b)) => prop_assert!(
                        a == b || (a.is_nan() && b.is_nan()),
                        "{printed}: {a} != {b}"
                    ),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "{printed}: {lhs:?} vs {rhs:?}"),
                }
            }
        }
    }
}
