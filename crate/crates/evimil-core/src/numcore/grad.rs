//! Central-difference verification of reverse-mode gradients.

use super::array::Array;
use super::tape::{Tape, Var};

/// Compare analytic gradients of a scalar-valued builder against central
/// finite differences over every element of every parameter.
///
/// `build` receives a fresh tape plus leaves for `params` and must return a
/// scalar node. It must be deterministic: it is re-run twice per parameter
/// element. Returns the maximum over elements of
/// `|analytic − central| / (|central| + 1e-12)`.
pub fn grad_check<F>(build: F, params: &[Array], eps: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    assert!((1e-7..=1e-3).contains(&eps), "eps {eps} outside [1e-7, 1e-3]");
    let eval = |params: &[Array]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        build(&tape, &vars).item()
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = build(&tape, &vars);
    assert_eq!(root.shape(), vec![1], "grad_check requires a scalar root");
    let grads = tape.backward(root);
    let analytic: Vec<Array> = vars.iter().map(|v| grads.wrt(*v).clone()).collect();

    let mut worst = 0.0f64;
    let mut probe: Vec<Array> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for j in 0..param.len() {
            let orig = param.as_slice()[j];
            probe[pi].as_mut_slice()[j] = orig + eps;
            let up = eval(&probe);
            probe[pi].as_mut_slice()[j] = orig - eps;
            let down = eval(&probe);
            probe[pi].as_mut_slice()[j] = orig;
            let central = (up - down) / (2.0 * eps);
            let rel = (analytic[pi].as_slice()[j] - central).abs() / (central.abs() + 1e-12);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_analytic() {
        let w = Array::scalar(3.0);
        let err = grad_check(|_t, p| p[0].square().sum(), &[w], 1e-5);
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn constant_function_zero_gradient() {
        let w = Array::vector(vec![1.0, -2.0]);
        let err = grad_check(|_t, p| p[0].scale(0.0).sum(), &[w], 1e-5);
        assert_eq!(err, 0.0);
    }

    #[test]
    #[should_panic(expected = "scalar root")]
    fn non_scalar_root_rejected() {
        let w = Array::vector(vec![1.0, 2.0]);
        grad_check(|_t, p| p[0].square(), &[w], 1e-5);
    }
}
