use super::params::{Grads, Params};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// `(parameter index, element)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Denominator floor: entries whose gradients are both below it are compared
/// in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

/// Central differences of `loss` per parameter element against `analytic`.
///
/// # Panics
/// If `step` is not positive or `analytic` does not match `params` in shape.
pub fn finite_difference_check(
    params: &Params<f64>,
    analytic: &Grads<f64>,
    step: f64,
    loss: impl Fn(&Params<f64>) -> f64,
) -> FdReport {
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(analytic.len(), params.len(), "one gradient per parameter");
    let mut probe = params.clone();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for i in 0..params.len() {
        assert_eq!(
            analytic[i].shape(),
            params.get(i).shape(),
            "gradient shape of {}",
            params.name(i)
        );
        for e in 0..params.get(i).len() {
            let orig = params.get(i).as_slice()[e];
            probe.get_mut(i).as_mut_slice()[e] = orig + step;
            let plus = loss(&probe);
            probe.get_mut(i).as_mut_slice()[e] = orig - step;
            let minus = loss(&probe);
            probe.get_mut(i).as_mut_slice()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i].as_slice()[e];
            let err = (numeric - a).abs() / numeric.abs().max(a.abs()).max(REL_FLOOR);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((i, e));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::Linear;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_layer_is_exact_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = Params::default();
        let lin = Linear::new(&mut p, "lin", 4, 3, &mut rng);
        let x = Matrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
        let proj = Matrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let mut grads = p.zero_grads();
        lin.backward(&p, &x, &proj, &mut grads).unwrap();
        let report = finite_difference_check(&p, &grads, 1e-4, |p| {
            lin.forward(p, &x)
                .unwrap()
                .hadamard(&proj)
                .as_slice()
                .iter()
                .sum()
        });
        assert_eq!(report.checked, 15);
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = Params::default();
        let lin = Linear::new(&mut p, "lin", 2, 2, &mut rng);
        let x = Matrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mut grads = p.zero_grads();
        lin.backward(&p, &x, &Matrix::filled(3, 2, 1.0), &mut grads)
            .unwrap();
        grads[0].as_mut_slice()[1] += 0.5;
        let report = finite_difference_check(&p, &grads, 1e-4, |p| {
            lin.forward(p, &x).unwrap().as_slice().iter().sum()
        });
        assert!(report.max_rel_err > 0.1);
        assert_eq!(report.worst, Some((0, 1)));
    }
}
