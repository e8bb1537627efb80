use super::{AutodiffError, ParamStore, Tape, Var};

/// Outcome of comparing tape gradients with central finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Number of scalar parameter entries compared.
    pub checked: usize,
    /// Largest `|g_ad − g_fd| / max(|g_ad|, |g_fd|, floor)` over all entries.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the largest error occurred.
    pub worst: Option<(String, usize)>,
    /// Entries whose relative error exceeded the tolerance passed in.
    pub failures: usize,
}

/// Denominator floor, so entries whose true gradient is zero are judged by
/// absolute error instead of dividing by rounding noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Perturbs every entry of every parameter by `±h` and compares the central
/// difference of the scalar built by `f` with the analytic gradient.
pub fn check_gradients<E: From<AutodiffError>>(
    store: &ParamStore,
    h: f64,
    tolerance: f64,
    f: impl Fn(&mut Tape) -> Result<Var, E>,
) -> Result<GradCheck, E> {
    let grads = {
        let mut tape = Tape::new(store);
        let root = f(&mut tape)?;
        tape.backward(root)?
    };
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new(s);
        let root = f(&mut tape)?;
        Ok(tape.value(root).item())
    };
    let mut probe = store.clone();
    let mut out = GradCheck { checked: 0, max_rel_error: 0.0, worst: None, failures: 0 };
    for (id, p) in store.iter() {
        for k in 0..p.value.len() {
            let orig = p.value.data()[k];
            probe.get_mut(id).value.data_mut()[k] = orig + h;
            let plus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig - h;
            let minus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let ad = grads.param(id).map_or(0.0, |g| g.data()[k]);
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(GRAD_CHECK_FLOOR);
            out.checked += 1;
            if rel > tolerance {
                out.failures += 1;
            }
            if out.worst.is_none() || rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = Some((p.name.clone(), k));
            }
        }
    }
    Ok(out)
}
