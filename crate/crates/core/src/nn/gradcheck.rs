//! Central finite-difference checks on 64-bit parameters.

pub const FD_EPS: f64 = 1e-4;

/// Denominator floor for the relative error so exactly-zero gradients do not
/// divide by zero.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compare `grad` against central differences of `loss` at `params`, over
/// every index or only `indices`.
pub fn check_gradients<F>(params: &[f64], grad: &[f64], loss: F, indices: Option<&[usize]>) -> GradCheck
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(params.len(), grad.len());
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut p = params.to_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &i in idx {
        let orig = p[i];
        p[i] = orig + FD_EPS;
        let lp = loss(&p);
        p[i] = orig - FD_EPS;
        let lm = loss(&p);
        p[i] = orig;
        let num = (lp - lm) / (2.0 * FD_EPS);
        let err = rel_error(grad[i], num);
        if err > out.max_rel_error || !err.is_finite() {
            out = GradCheck {
                max_rel_error: if err.is_finite() { err } else { f64::INFINITY },
                worst_index: i,
                analytic: grad[i],
                numeric: num,
                checked: out.checked,
            };
        }
        out.checked += 1;
    }
    out
}
