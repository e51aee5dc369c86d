use gctnet::tensor::gradcheck::{check, GradCheckConfig, Selection};
use gctnet::tensor::{Graph, Init, ParamStore, Session, Tensor, TensorError, Var};
use proptest::prelude::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Runs `f` over five seeded stores built by `build`, asserting every check passes.
fn run<B, F>(name: &str, build: B, f: F)
where
    B: Fn(&mut ParamStore),
    F: for<'g> Fn(&Session<'g>) -> Result<Var<'g>, TensorError>,
{
    for seed in SEEDS {
        let mut store = ParamStore::new(seed);
        build(&mut store);
        let report = check(&store, Selection::All, GradCheckConfig::default(), &f).unwrap();
        assert!(
            report.passed(),
            "{name} seed {seed}: {:?} (checked {}, skipped {})",
            report.failures,
            report.checked,
            report.skipped
        );
        assert!(report.smooth_fraction() > 0.8, "{name}: too many kinks");
    }
}

fn p(s: &Session<'_>, name: &str) -> gctnet::tensor::ParamId {
    s.store().find(name).unwrap()
}

#[test]
fn matmul_gradients() {
    run(
        "matmul",
        |st| {
            st.add("a", &[3, 4], Init::Uniform(1.0));
            st.add("b", &[4, 2], Init::Uniform(1.0));
        },
        |s| {
            let a = s.param(p(s, "a"));
            let b = s.param(p(s, "b"));
            Ok(a.matmul(b)?.sum_all())
        },
    );
}

#[test]
fn batched_matmul_gradients() {
    run(
        "bmm",
        |st| {
            st.add("a", &[2, 3, 4], Init::Uniform(1.0));
            st.add("b", &[4, 2], Init::Uniform(1.0));
            st.add("c", &[2, 2, 3], Init::Uniform(1.0));
        },
        |s| {
            let ab = s.param(p(s, "a")).matmul(s.param(p(s, "b")))?;
            let abc = ab.matmul(s.param(p(s, "c")))?;
            Ok(abc.square().sum_all())
        },
    );
}

#[test]
fn elementwise_and_broadcast_gradients() {
    run(
        "binary",
        |st| {
            st.add("x", &[3, 4], Init::Uniform(1.0));
            st.add("bias", &[4], Init::Uniform(1.0));
            st.add("col", &[3, 1], Init::Uniform(1.0));
        },
        |s| {
            let x = s.param(p(s, "x"));
            let bias = s.param(p(s, "bias"));
            let col = s.param(p(s, "col"));
            let denom = col.square().add_scalar(1.0);
            let y = x.add(bias)?.mul(col)?.sub(bias)?.div(denom)?;
            Ok(y.square().sum_all())
        },
    );
}

#[test]
fn unary_gradients() {
    run(
        "unary",
        |st| {
            st.add("x", &[12], Init::Uniform(2.0));
        },
        |s| {
            let x = s.param(p(s, "x"));
            let pos = x.square().add_scalar(0.5);
            let parts = [
                x.relu(),
                x.sigmoid(),
                x.tanh(),
                x.exp(),
                pos.ln(),
                pos.sqrt(),
                x.softplus(),
                x.neg().scale(0.3),
                x.clamp(-0.5, 0.5),
            ];
            let mut acc = parts[0].sum_all();
            for (i, v) in parts.iter().enumerate().skip(1) {
                acc = acc.add(v.scale(1.0 + i as f64).sum_all())?;
            }
            Ok(acc)
        },
    );
}

#[test]
fn reduction_gradients() {
    run(
        "reductions",
        |st| {
            st.add("x", &[3, 5, 2], Init::Uniform(1.0));
        },
        |s| {
            let x = s.param(p(s, "x"));
            let sm = x.softmax(1)?;
            let (mx, _) = x.max_axis(1)?;
            let mean = x.mean_axis(2)?;
            let w = s.graph().constant(Tensor::new(&[3, 5, 2], (0..30).map(|i| (i as f64).sin()).collect())?);
            Ok(sm.mul(w)?.sum_all().add(mx.square().sum_all())?.add(mean.sum_all())?)
        },
    );
}

#[test]
fn shape_op_gradients() {
    run(
        "shape",
        |st| {
            st.add("a", &[2, 3, 4], Init::Uniform(1.0));
            st.add("b", &[2, 3, 1], Init::Uniform(1.0));
        },
        |s| {
            let a = s.param(p(s, "a"));
            let b = s.param(p(s, "b"));
            let c = s.graph().concat(&[a, b], 2)?;
            let c = c.permute(&[2, 0, 1])?.reshape(&[5, 6])?.narrow(1, 1, 4)?;
            let c = c.transpose()?.gather_rows(&[3, 0, 0, 2])?;
            let w = s.graph().constant(Tensor::new(&[4, 5], (0..20).map(|i| (i as f64).cos()).collect())?);
            Ok(c.mul(w)?.square().sum_all())
        },
    );
}

#[test]
fn duplicate_gather_accumulates() {
    run(
        "gather",
        |st| {
            st.add("x", &[4, 3], Init::Uniform(1.0));
        },
        |s| {
            let x = s.param(p(s, "x"));
            Ok(x.gather_rows(&[1, 1, 3, 1])?.square().sum_all())
        },
    );
}

#[test]
fn sym_eig_min_gradients() {
    run(
        "eig",
        |st| {
            st.add("a", &[12, 5], Init::Uniform(1.0));
            st.add("probe", &[5], Init::Uniform(1.0));
        },
        |s| {
            let a = s.param(p(s, "a"));
            let m = a.transpose()?.matmul(a)?;
            let v = m.sym_eig_min()?;
            let probe = s.param(p(s, "probe"));
            Ok(v.mul(probe)?.sum_all().square())
        },
    );
}

#[test]
fn backward_is_bitwise_deterministic() {
    let grads = || {
        let mut st = ParamStore::new(11);
        let a = st.add("a", &[6, 6], Init::Uniform(1.0));
        let g = Graph::new();
        let s = Session::new(&g, &st);
        let x = s.param(a);
        let loss = x.matmul(x).unwrap().softmax(1).unwrap().square().sum_all();
        let gr = g.backward(loss).unwrap();
        gr.get(x).unwrap()
    };
    let (g1, g2) = (grads(), grads());
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-300.0f64..300.0, 12)) {
        let g = Graph::new();
        let x = g.constant(Tensor::new(&[3, 4], values).unwrap());
        let y = x.softmax(1).unwrap().data();
        for r in 0..3 {
            let s: f64 = y[r * 4..(r + 1) * 4].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(y[r * 4..(r + 1) * 4].iter().all(|v| *v >= 0.0));
        }
    }
}
