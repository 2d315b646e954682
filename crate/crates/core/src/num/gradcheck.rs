use super::ModelParams;
use crate::error::{contract, Error, Result};

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn finite_diff_gradient<F>(mut f: F, params: &ModelParams, h: f64) -> Result<ModelParams>
where
    F: FnMut(&ModelParams) -> f64,
{
    if !(h > 0.0) {
        return Err(contract(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let n = params.tensor(name)?.len();
        for i in 0..n {
            let x0 = params.tensor(name)?.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = x0 + h;
            let up = f(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = x0 - h;
            let down = f(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = x0;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite {
                    param: name.clone(),
                    index: i,
                });
            }
            grads.get_mut(name).unwrap().data_mut()[i] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Worst coordinate of a gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradDiscrepancy {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Max over coordinates of `|a - n| / max(|a|, |n|, floor)`.
///
/// `floor` bounds the denominator so that coordinates whose true gradient is
/// zero are judged on absolute error instead of dividing noise by noise.
pub fn max_relative_error(
    analytic: &ModelParams,
    numeric: &ModelParams,
    floor: f64,
) -> Result<GradDiscrepancy> {
    analytic.check_layout(numeric, "gradient comparison")?;
    let mut worst = GradDiscrepancy {
        param: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        rel_error: 0.0,
    };
    for ((name, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(floor);
            if rel > worst.rel_error || worst.param.is_empty() {
                worst = GradDiscrepancy {
                    param: name.clone(),
                    index: i,
                    analytic: x,
                    numeric: y,
                    rel_error: rel,
                };
            }
        }
    }
    Ok(worst)
}
