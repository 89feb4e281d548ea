use gagcn::checks::{run_gradcheck, toy_model, CheckScale};
use gagcn::numkernel::gradcheck::DEFAULT_TOL;
use gagcn::numkernel::{kronecker, matmul, st_apply, CheckOptions};
use gagcn::Rng;

#[test]
fn every_scale_passes_for_several_seeds() {
    for scale in [CheckScale::Ops, CheckScale::Layer, CheckScale::Model] {
        for seed in [0, 5] {
            let entries = run_gradcheck(scale, seed, &CheckOptions::default()).unwrap();
            assert!(!entries.is_empty());
            for e in &entries {
                assert!(e.passes(DEFAULT_TOL), "{scale} seed {seed}: {} {:.3e}", e.name, e.max_rel_err);
            }
        }
    }
}

#[test]
fn model_check_lists_each_parameter_once() {
    let entries = run_gradcheck(CheckScale::Model, 1, &CheckOptions::default()).unwrap();
    let model = toy_model(1).unwrap();
    let listed: Vec<&str> = entries.iter().map(|e| e.name.as_str()).collect();
    let stored: Vec<&str> = model.store.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(listed, stored);
}

#[test]
fn two_sided_product_matches_materialized_kronecker() {
    let mut rng = Rng::new(31);
    for case in 0..200 {
        let (n, t, w) = (1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(3));
        let r = rng.split(case);
        let s = r.split(0).uniform_tensor(&[n, n], -1.0, 1.0);
        let tm = r.split(1).uniform_tensor(&[t, t], -1.0, 1.0);
        let h = r.split(2).uniform_tensor(&[w, n, t], -1.0, 1.0);
        let k = kronecker(&s, &tm).unwrap();
        let slow = matmul(&h.reshape(&[w, n * t]).unwrap(), &k.transpose().unwrap()).unwrap();
        let fast = st_apply(&s, &tm, &h).unwrap();
        assert!(fast.reshape(&[w, n * t]).unwrap().max_abs_diff(&slow) <= 1e-10);
    }
}
