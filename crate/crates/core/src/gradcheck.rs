//! Central finite-difference validation of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with the given step, on up to `max_coords` coordinates sampled
/// across all parameters. The error per coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    f: F,
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(&mut tape, store)?;
        let value = tape.value(v).item()?;
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite loss during gradient check".into()));
        }
        Ok(value)
    };

    let mut coords = Vec::new();
    for id in store.ids() {
        for k in 0..store.get(id).value.len() {
            coords.push((id, k));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        let mut picked = sample(&mut rng, coords.len(), max_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: chosen.len(),
        worst: None,
    };
    for c in chosen {
        let (id, k) = coords[c];
        let analytic = store.get(id).grad.data()[k];
        let original = store.get(id).value.data()[k];
        store.get_mut(id).value.data_mut()[k] = original + step;
        let plus = eval(store)?;
        store.get_mut(id).value.data_mut()[k] = original - step;
        let minus = eval(store)?;
        store.get_mut(id).value.data_mut()[k] = original;
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let err = (analytic - numeric).abs() / denom;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((store.get(id).name.clone(), k));
        }
    }
    store.zero_grads();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_map_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add(
            "w",
            Tensor::new(vec![3, 2], vec![0.3, -0.1, 0.7, 0.2, -0.5, 0.9]).unwrap(),
        );
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, -1.0, 0.5, 0.1, 3.0]).unwrap();
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let xv = tape.constant(x.clone());
                let wv = tape.param(store, w);
                let y = tape.matmul(xv, wv)?;
                Ok(tape.sum(y))
            },
            1e-5,
            100,
            0,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 6);
        assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
    }
}
