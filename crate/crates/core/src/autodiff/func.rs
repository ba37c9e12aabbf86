use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Declared input shape; `None` entries accept any extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeSpec(pub Vec<Option<usize>>);

impl ShapeSpec {
    pub fn exact(dims: &[usize]) -> Self {
        Self(dims.iter().map(|&d| Some(d)).collect())
    }

    /// A matrix with any number of rows and a fixed column count.
    pub fn rows_of(cols: usize) -> Self {
        Self(vec![None, Some(cols)])
    }

    pub fn check(&self, shape: &[usize]) -> Result<()> {
        let ok = shape.len() == self.0.len() && self.0.iter().zip(shape).all(|(s, &d)| s.is_none_or(|s| s == d));
        if ok {
            Ok(())
        } else {
            Err(Error::shape(self, shape))
        }
    }
}

impl std::fmt::Display for ShapeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match d {
                Some(d) => write!(f, "{}", d)?,
                None => write!(f, "_")?,
            }
        }
        write!(f, "]")
    }
}

/// A deterministic tensor map that can replay itself onto a [`Tape`].
///
/// `record` must only append nodes to `tape`; calling it twice with the same
/// input must produce bitwise-identical values. Implementations are shared
/// read-only between threads, and every evaluation uses its own tape.
pub trait DifferentiableFn: Send + Sync {
    fn input_shape(&self) -> ShapeSpec;

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Var>;
}

impl<F: DifferentiableFn + ?Sized> DifferentiableFn for &F {
    fn input_shape(&self) -> ShapeSpec {
        (**self).input_shape()
    }

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        (**self).record(tape, input)
    }
}

/// Reduction of a function's output to the scalar being differentiated.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarSelector {
    /// The output is already a single value.
    Whole,
    /// One component of the flattened output (e.g. a class logit).
    Component(usize),
    /// Sum of all output components.
    Sum,
    /// `‖f(x) − target‖²` against a fixed target.
    SquaredDistance(Tensor),
}

impl ScalarSelector {
    /// Applies the reduction numerically, without a tape.
    pub fn apply(&self, output: &Tensor) -> Result<f64> {
        match self {
            ScalarSelector::Whole => output.item().map_err(|_| {
                Error::Contract(format!(
                    "selector yields a non-scalar output of shape {:?}",
                    output.shape()
                ))
            }),
            ScalarSelector::Component(i) => {
                output.data().get(*i).copied().ok_or_else(|| {
                    Error::Contract(format!("component {} out of range for {} outputs", i, output.len()))
                })
            }
            ScalarSelector::Sum => Ok(output.sum()),
            ScalarSelector::SquaredDistance(target) => Ok(output.sub(target)?.squared_norm()),
        }
    }

    /// Appends the reduction to `tape`.
    pub fn record(&self, tape: &mut Tape, output: Var) -> Result<Var> {
        match self {
            ScalarSelector::Whole => {
                let out = tape.value(output);
                if !out.is_scalar() {
                    return Err(Error::Contract(format!(
                        "selector yields a non-scalar output of shape {:?}",
                        out.shape()
                    )));
                }
                Ok(output)
            }
            ScalarSelector::Component(i) => tape.index(output, *i),
            ScalarSelector::Sum => Ok(tape.sum(output)),
            ScalarSelector::SquaredDistance(target) => {
                let t = tape.constant(target.clone());
                let diff = tape.sub(output, t)?;
                Ok(tape.squared_norm(diff))
            }
        }
    }
}

/// Evaluates `f(x)`.
pub fn evaluate<F: DifferentiableFn + ?Sized>(f: &F, x: &Tensor) -> Result<Tensor> {
    f.input_shape().check(x.shape())?;
    let mut tape = Tape::new();
    let input = tape.constant(x.clone());
    let out = f.record(&mut tape, input)?;
    Ok(tape.value(out).clone())
}

/// Output, selected scalar and its gradient with respect to the input.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub output: Tensor,
    pub scalar: f64,
    pub gradient: Tensor,
}

pub fn value_and_gradient<F: DifferentiableFn + ?Sized>(
    f: &F,
    x: &Tensor,
    selector: &ScalarSelector,
) -> Result<Evaluation> {
    f.input_shape().check(x.shape())?;
    let mut tape = Tape::new();
    let input = tape.var(x.clone());
    let out = f.record(&mut tape, input)?;
    let scalar = selector.record(&mut tape, out)?;
    let mut grads = tape.backward(scalar)?;
    Ok(Evaluation {
        output: tape.value(out).clone(),
        scalar: tape.value(scalar).item()?,
        gradient: grads.take(input),
    })
}

/// Exact reverse-mode gradient of `selector(f(x))` with respect to `x`.
pub fn gradient<F: DifferentiableFn + ?Sized>(f: &F, x: &Tensor, selector: &ScalarSelector) -> Result<Tensor> {
    value_and_gradient(f, x, selector).map(|e| e.gradient)
}

/// Central finite differences, `(s(x + h·e_i) − s(x − h·e_i)) / 2h` per entry.
pub fn finite_diff_gradient<F: DifferentiableFn + ?Sized>(
    f: &F,
    x: &Tensor,
    selector: &ScalarSelector,
    h: f64,
) -> Result<Tensor> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::param("h", format!("step must be positive, got {}", h)));
    }
    f.input_shape().check(x.shape())?;
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = selector.apply(&evaluate(f, &probe)?)?;
        probe.data_mut()[i] = orig - h;
        let down = selector.apply(&evaluate(f, &probe)?)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// `max_i |a_i − b_i| / max(max_i |b_i|, floor)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let scale = b.max_abs().max(floor);
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// Wraps a closure over a tape as a [`DifferentiableFn`].
pub struct FnGraph<G> {
    shape: ShapeSpec,
    graph: G,
}

impl<G> FnGraph<G>
where
    G: Fn(&mut Tape, Var) -> Result<Var> + Send + Sync,
{
    pub fn new(shape: ShapeSpec, graph: G) -> Self {
        Self { shape, graph }
    }
}

impl<G> DifferentiableFn for FnGraph<G>
where
    G: Fn(&mut Tape, Var) -> Result<Var> + Send + Sync,
{
    fn input_shape(&self) -> ShapeSpec {
        self.shape.clone()
    }

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        (self.graph)(tape, input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> impl DifferentiableFn {
        FnGraph::new(ShapeSpec::exact(&[1]), |t, x| t.mul(x, x))
    }

    #[test]
    fn evaluate_relu() {
        let f = FnGraph::new(ShapeSpec::exact(&[2]), |t, x| Ok(t.relu(x)));
        let y = evaluate(&f, &Tensor::vector(vec![-1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn evaluate_softmax_symmetric() {
        let f = FnGraph::new(ShapeSpec::exact(&[2]), |t, x| Ok(t.softmax(x)));
        let y = evaluate(&f, &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn evaluate_rejects_wrong_shape() {
        let f = square();
        let err = evaluate(&f, &Tensor::vector(vec![1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::InputShape { .. }));
    }

    #[test]
    fn gradient_of_square() {
        let f = square();
        let g = gradient(&f, &Tensor::vector(vec![3.0]), &ScalarSelector::Whole).unwrap();
        assert_eq!(g.data(), &[6.0]);
    }

    #[test]
    fn gradient_of_inner_product() {
        let f = FnGraph::new(ShapeSpec::exact(&[2]), |t, z| Ok(t.squared_norm(z)));
        let g = gradient(&f, &Tensor::vector(vec![1.0, 2.0]), &ScalarSelector::Whole).unwrap();
        assert_eq!(g.data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_selector_is_a_contract_error() {
        let f = FnGraph::new(ShapeSpec::exact(&[2]), |t, x| Ok(t.tanh(x)));
        let x = Tensor::vector(vec![0.1, 0.2]);
        assert!(matches!(
            gradient(&f, &x, &ScalarSelector::Whole),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            finite_diff_gradient(&f, &x, &ScalarSelector::Whole, 1e-5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn finite_differences_square_and_exp() {
        let g = finite_diff_gradient(&square(), &Tensor::vector(vec![3.0]), &ScalarSelector::Whole, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() <= 1e-6);

        let e = FnGraph::new(ShapeSpec::exact(&[1]), |t, x| Ok(t.exp(x)));
        let g = finite_diff_gradient(&e, &Tensor::vector(vec![0.0]), &ScalarSelector::Whole, 1e-5).unwrap();
        assert!((g.data()[0] - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn finite_differences_of_constant_are_zero() {
        let c = FnGraph::new(ShapeSpec::exact(&[3]), |t, _x| Ok(t.constant(Tensor::scalar(4.0))));
        let g = finite_diff_gradient(&c, &Tensor::vector(vec![1.0, 2.0, 3.0]), &ScalarSelector::Whole, 1e-5).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn finite_differences_reject_bad_step() {
        for h in [0.0, -1e-3, f64::NAN] {
            assert!(matches!(
                finite_diff_gradient(&square(), &Tensor::vector(vec![1.0]), &ScalarSelector::Whole, h),
                Err(Error::Parameter { name: "h", .. })
            ));
        }
    }
}
