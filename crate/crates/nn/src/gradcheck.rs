//! Central finite-difference verification of tape gradients.

use qgan_quat::Tensor;

use crate::autodiff::{NodeId, Tape};
use crate::params::{ParamId, ParamStore};
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per parameter; larger tensors are strided.
    pub max_entries: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            tolerance: 1e-4,
            max_entries: 48,
            floor: 1e-3,
        }
    }
}

/// Worst relative error for one component of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub component: usize,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    /// Distance of the base point to the nearest kink of the graph.
    pub min_kink: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }
}

fn scalar_loss(tape: &Tape<f64>, id: NodeId) -> Result<f64> {
    let v = tape.value(id);
    if v.numel() == 1 || (v.numel() == 4 && v.data()[1..].iter().all(|x| *x == 0.0)) {
        Ok(v.data()[0])
    } else {
        Err(NnError::NonScalarLoss(v.shape().to_vec()))
    }
}

/// Compare the tape gradient of `f` against central differences for the
/// parameters `ids` of `store`. `f` records a scalar loss on a fresh tape.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    ids: &[ParamId],
    mut f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    scalar_loss(&tape, loss)?;
    let grads = tape.backward(loss)?;
    let min_kink = tape.min_kink_distance();
    let mut entries = Vec::new();
    for &id in ids {
        let analytic: Tensor<f64> = grads.param_or_zeros(store, id);
        let (name, k) = {
            let p = store.param(id);
            (p.name.clone(), p.value.shape().first().copied().unwrap_or(1).max(1))
        };
        let n = analytic.numel();
        let per = (n / k).max(1);
        let stride = (n / opts.max_entries).max(1);
        let mut worst = vec![(0.0f64, 0usize); k];
        let mut i = 0;
        while i < n {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + opts.step;
            let mut tp = Tape::new();
            let lp = f(&mut tp, store)?;
            let up = scalar_loss(&tp, lp)?;
            store.get_mut(id).data_mut()[i] = orig - opts.step;
            let mut tm = Tape::new();
            let lm = f(&mut tm, store)?;
            let down = scalar_loss(&tm, lm)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            let c = (i / per).min(k - 1);
            worst[c].0 = worst[c].0.max(err);
            worst[c].1 += 1;
            i += stride;
        }
        for (component, (e, count)) in worst.into_iter().enumerate() {
            if count > 0 {
                entries.push(GradCheckEntry {
                    param: name.clone(),
                    component,
                    max_rel_error: e,
                    checked: count,
                });
            }
        }
    }
    Ok(GradCheckReport {
        entries,
        tolerance: opts.tolerance,
        min_kink,
    })
}

/// Runs `check` for successive seeds until the base point lies at least
/// `margin` away from every kink, returning that report.
pub fn grad_check_smooth(
    margin: f64,
    tries: u64,
    mut check: impl FnMut(u64) -> Result<GradCheckReport>,
) -> Result<GradCheckReport> {
    for seed in 0..tries {
        let r = check(seed)?;
        if r.min_kink >= margin {
            return Ok(r);
        }
    }
    Err(NnError::Config(format!(
        "no seed in 0..{tries} avoided kinks by {margin}"
    )))
}
