use crate::error::Result;
use crate::num::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub value: f64,
    pub grads: ModelParams,
}

/// `lambda * sum_j w_j (theta_j - anchor_j)^2` and its gradient
/// `2 lambda w_j (theta_j - anchor_j)`.
pub fn quadratic_penalty(
    params: &ModelParams,
    anchor: &ModelParams,
    importance: &ModelParams,
    lambda: f64,
) -> Result<Penalty> {
    params.check_layout(anchor, "penalty anchor")?;
    params.check_layout(importance, "penalty importance")?;
    let mut grads = params.zeros_like();
    let mut value = 0.0;
    let triples = params.iter().zip(anchor.iter()).zip(importance.iter());
    for (((name, p), (_, a)), (_, w)) in triples {
        let g = grads.get_mut(name).expect("same layout");
        for (i, gi) in g.data_mut().iter_mut().enumerate() {
            let d = p.data()[i] - a.data()[i];
            let wi = w.data()[i];
            value += wi * d * d;
            *gi = 2.0 * lambda * wi * d;
        }
    }
    Ok(Penalty {
        value: lambda * value,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{finite_diff_gradient, max_relative_error, Tensor};

    fn scalar(x: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::scalar(x));
        p
    }

    #[test]
    fn formula_plug_in() {
        // lambda 10, F 2, offset 0.5
        let p = quadratic_penalty(&scalar(1.5), &scalar(1.0), &scalar(2.0), 10.0).unwrap();
        assert_eq!(p.value, 5.0);
        assert_eq!(p.grads.get("w").unwrap().data(), &[20.0]);
        // lambda 1, Omega 3, offset 2
        let p = quadratic_penalty(&scalar(2.0), &scalar(0.0), &scalar(3.0), 1.0).unwrap();
        assert_eq!(p.value, 12.0);
        assert_eq!(p.grads.get("w").unwrap().data(), &[12.0]);
    }

    #[test]
    fn zero_at_anchor() {
        let p = quadratic_penalty(&scalar(0.7), &scalar(0.7), &scalar(5.0), 10.0).unwrap();
        assert_eq!(p.value, 0.0);
        assert_eq!(p.grads.get("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut theta = ModelParams::new();
        theta.insert("a", Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap());
        let anchor = theta.map(|x| x * 0.5 + 0.1);
        let imp = theta.map(|x| x.abs() + 0.2);
        let analytic = quadratic_penalty(&theta, &anchor, &imp, 5.0).unwrap().grads;
        let numeric = finite_diff_gradient(
            |p| quadratic_penalty(p, &anchor, &imp, 5.0).unwrap().value,
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(&analytic, &numeric, 1e-12).unwrap().rel_error < 1e-6);
    }
}
