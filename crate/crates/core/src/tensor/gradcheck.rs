//! Central finite-difference checks against the tape's analytic gradients.
//!
//! Only forward evaluations are used on the numeric side. A perturbation that
//! changes the graph's branch signature (a ReLU flips, a max moves, a gathered
//! index changes) is not a valid finite-difference sample, and neither is one
//! evaluated at a repeated smallest eigenvalue; such entries are counted as
//! `skipped` instead of compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamStore, Session, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            rtol: 1e-4,
            atol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Selection {
    All,
    /// `count` scalar entries drawn uniformly over all parameters.
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    /// Fraction of attempted entries that were comparable.
    pub fn smooth_fraction(&self) -> f64 {
        let total = self.checked + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.checked as f64 / total as f64
        }
    }
}

fn evaluate<E, F>(store: &ParamStore, f: &F) -> Result<(f64, Option<u64>), E>
where
    F: for<'g> Fn(&Session<'g>) -> Result<Var<'g>, E>,
{
    let g = Graph::with_signature();
    let s = Session::frozen(&g, store);
    let loss = f(&s)?;
    Ok((loss.item(), g.is_regular().then(|| g.signature())))
}

/// Compares analytic and central-difference gradients of the scalar built by `f`.
pub fn check<E, F>(
    store: &ParamStore,
    selection: Selection,
    config: GradCheckConfig,
    f: F,
) -> Result<GradCheckReport, E>
where
    F: for<'g> Fn(&Session<'g>) -> Result<Var<'g>, E>,
{
    let g = Graph::with_signature();
    let session = Session::new(&g, store);
    let loss = f(&session)?;
    let base_signature = g.is_regular().then(|| g.signature());
    let grads = g.backward(loss).expect("scalar loss");
    let mut analytic = store.zero_grads();
    session.accumulate_grads(&grads, &mut analytic);
    drop(session);

    let entries: Vec<(ParamId, usize)> = match selection {
        Selection::All => store
            .ids()
            .flat_map(|id| (0..store.get(id).numel()).map(move |i| (id, i)))
            .collect(),
        Selection::Sample { count, seed } => {
            let total = store.num_scalars();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let offsets: Vec<usize> = store
                .ids()
                .scan(0, |acc, id| {
                    let start = *acc;
                    *acc += store.get(id).numel();
                    Some(start)
                })
                .collect();
            (0..count)
                .map(|_| {
                    let flat = rng.random_range(0..total);
                    let p = offsets.partition_point(|&o| o <= flat) - 1;
                    let id = store.ids().nth(p).unwrap();
                    (id, flat - offsets[p])
                })
                .collect()
        }
    };

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for (id, i) in entries {
        let orig = work.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = orig + config.step;
        let (fp, sp) = evaluate(&work, &f)?;
        work.get_mut(id).data_mut()[i] = orig - config.step;
        let (fm, sm) = evaluate(&work, &f)?;
        work.get_mut(id).data_mut()[i] = orig;
        if base_signature.is_none() || sp != base_signature || sm != base_signature {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * config.step);
        let a = analytic[id.index()][i];
        let scale = a.abs().max(numeric.abs());
        let err = (a - numeric).abs();
        if scale > 0.0 {
            report.max_rel_err = report.max_rel_err.max(err / scale);
        }
        report.checked += 1;
        if err > config.rtol * scale + config.atol {
            report.failures.push(Mismatch {
                param: store.name(id).to_string(),
                index: i,
                analytic: a,
                numeric,
            });
        }
    }
    Ok(report)
}
