//! Compact reverse-mode differentiation over dense `f64` matrices, with a
//! finite-difference gradient checker and a momentum optimizer.

mod params;
mod tape;
mod tensor;

pub use params::{MomentumSgd, ParameterStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `f` at `point` against central finite
/// differences with step `h`. Returns the maximum over coordinates of
/// `|g_ad - g_fd| / max(1, |g_ad|)`.
pub fn gradient_check<F>(f: F, point: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {h} outside [1e-7, 1e-4]"
        )));
    }
    let eval = |pt: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = pt.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                node: out.index(),
                op: "gradient_check probe",
            });
        }
        Ok(v)
    };

    let tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    tape.check_finite()?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut probe: Vec<Tensor> = point.to_vec();
    let mut worst = 0.0f64;
    for (p, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe[p].data()[k];
            probe[p].data_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe[p].data_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe[p].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = g.data()[k];
            worst = worst.max((ad - fd).abs() / ad.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use super::*;

    #[test]
    fn forward_examples() {
        let t = Tape::new();
        let z = t.leaf(Tensor::scalar(0.0));
        assert_eq!(t.value(t.tanh(z)).item(), 0.0);
        let one = t.masked_softmax(t.leaf(Tensor::row(vec![3.0, -1.0])), Rc::new(vec![false, true]))
            .unwrap();
        assert_eq!(t.value(one).data(), &[0.0, 1.0]);
        let m = t.leaf(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let v = t.leaf(Tensor::column(vec![1.0, 1.0]));
        let mv = t.matmul(m, v).unwrap();
        assert_eq!(t.value(mv).data(), &[3.0, 7.0]);
    }

    #[test]
    fn backward_examples() {
        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).item(), 6.0);

        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.tanh(x);
        assert_eq!(t.backward(y).unwrap().get(x).item(), 1.0);

        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let c = t.constant(Tensor::scalar(5.0));
        let g = t.backward(c).unwrap();
        assert_eq!(g.get(x).item(), 0.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tape::new();
        let x = t.leaf(Tensor::zeros(2, 1));
        assert!(matches!(t.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn shape_errors_and_nonfinite() {
        let t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 3));
        let b = t.leaf(Tensor::zeros(2, 3));
        assert!(t.matmul(a, b).is_err());
        assert!(t.add(a, t.leaf(Tensor::zeros(3, 2))).is_err());
        let big = t.leaf(Tensor::scalar(1000.0));
        let e = t.exp(big);
        assert!(matches!(t.check_finite(), Err(Error::NonFinite { node, op: "exp" }) if node == e.index()));
    }

    #[test]
    fn empty_softmax_row_is_config_error() {
        let t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 2));
        let r = t.masked_softmax(a, Rc::new(vec![true, false, false, false]));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn linear_function_checks_exactly() {
        let w = Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0]);
        let err = gradient_check(
            |t, v| {
                let c = t.constant(w.transpose());
                Ok(t.sum(t.matmul(v[0], c)?))
            },
            &[Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0])],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_bad_step() {
        let r = gradient_check(|t, v| Ok(t.sum(v[0])), &[Tensor::scalar(1.0)], 1e-2);
        assert!(r.is_err());
    }
}
