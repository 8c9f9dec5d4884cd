//! Central finite-difference gradient checks.

use super::{ParamStore, Result, Tape, Tensor, Var};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let out = f(&tape, tape.leaf(x.clone()))?;
    Ok(out.item())
}

/// Compares the reverse-mode gradient of the scalar function `f` at `x`
/// against central differences with step `h`; returns the largest relative
/// error over coordinates.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(&tape, input)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get_or_zero(input);

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(a, (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}

/// One coordinate of a parameter gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamProbe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl ParamProbe {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

/// Same check with respect to every entry of every parameter in `store`.
/// `f` records a scalar loss reading its parameters from the store.
pub fn finite_difference_check_params<F>(f: F, store: &mut ParamStore, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    Ok(finite_difference_probes(f, store, h)?
        .iter()
        .map(ParamProbe::relative_error)
        .fold(0.0, f64::max))
}

/// Analytic and central-difference derivative of every parameter entry.
pub fn finite_difference_probes<F>(f: F, store: &mut ParamStore, h: f64) -> Result<Vec<ParamProbe>>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    store.zero_grad();
    {
        let tape = Tape::new();
        let out = f(&tape, store)?;
        tape.backward(out)?.accumulate_into(store);
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        Ok(f(&tape, store)?.item())
    };
    let mut probes = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for i in 0..store.value(id).numel() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            probes.push(ParamProbe {
                name: store.name(id).to_string(),
                index: i,
                analytic: store.grad(id)[i],
                numeric: (plus - minus) / (2.0 * h),
            });
        }
    }
    store.zero_grad();
    Ok(probes)
}
