#![allow(dead_code)]

use gctnet::tensor::gradcheck::{check, GradCheckConfig, GradCheckReport, Selection};
use gctnet::tensor::{Graph, Init, ParamId, ParamStore, Session, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: [u64; 5] = [11, 23, 37, 41, 59];

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::new(shape, random_vec(shape.iter().product(), seed)).unwrap()
}

/// Registers a differentiable input tensor in the store.
pub fn input_param(store: &mut ParamStore, name: &str, shape: &[usize], seed: u64) -> ParamId {
    let id = store.add(name, shape, Init::Zeros);
    store.get_mut(id).data_mut().copy_from_slice(random_tensor(shape, seed).data());
    id
}

/// `Σ out ⊙ R` for a fixed random `R`, a generic scalar probe.
pub fn probe<'g>(out: Var<'g>, seed: u64) -> Var<'g> {
    let r = out.graph().constant(random_tensor(&out.shape(), seed ^ 0x5eed));
    out.mul(r).unwrap().sum_all()
}

pub fn assert_gradcheck(report: &GradCheckReport, what: &str) {
    assert!(
        report.passed(),
        "{what}: checked {} skipped {} failures {:?}",
        report.checked,
        report.skipped,
        &report.failures[..report.failures.len().min(5)]
    );
}

pub fn gradcheck<E, F>(store: &ParamStore, selection: Selection, f: F) -> GradCheckReport
where
    E: std::fmt::Debug,
    F: for<'g> Fn(&Session<'g>) -> Result<Var<'g>, E>,
{
    check(store, selection, GradCheckConfig::default(), f).unwrap()
}

pub fn values(store: &ParamStore, f: impl for<'g> FnOnce(&Session<'g>) -> Var<'g>) -> Vec<f64> {
    let g = Graph::new();
    let s = Session::frozen(&g, store);
    f(&s).data()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rows of a row-major `n×d` buffer reordered by `perm` (row i of the result is row perm[i]).
pub fn permute_rows(data: &[f64], d: usize, perm: &[usize]) -> Vec<f64> {
    perm.iter().flat_map(|&i| data[i * d..(i + 1) * d].iter().copied()).collect()
}

pub fn random_perm(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}
