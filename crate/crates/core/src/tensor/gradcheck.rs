use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so near-zero gradients are
/// compared on an absolute scale instead of amplifying rounding noise.
const REL_FLOOR: f64 = 1e-3;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (tensor, flat index) of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks backward gradients of a scalar function of one tensor against
/// central differences.
pub fn grad_check<F>(f: F, param: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vs| f(g, vs[0]), std::slice::from_ref(param), eps)
}

/// Multi-tensor variant of [`grad_check`]. Every coordinate of every tensor
/// is perturbed by `±eps`; relative error is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)`.
pub fn grad_check_many<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item().ok_or_else(|| {
            Error::Contract(format!(
                "grad_check needs a scalar output, got shape {:?}",
                g.shape(out)
            ))
        })
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for t in 0..work.len() {
        for i in 0..work[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[t].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[t].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[t].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (t, i);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap().data(), &[2.0, 4.0]);

        let r = grad_check(
            |g, v| {
                let sq = g.mul(v, v)?;
                Ok(g.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient_both_ways() {
        let x = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(7.0))),
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn non_scalar_output_is_a_contract_error() {
        let x = Tensor::zeros([2]);
        let r = grad_check(|g, v| Ok(g.relu(v)), &x, 1e-5);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
