use macrofin::checkpoint::Checkpoint;
use macrofin::first_best::{solve_first_best, FirstBestConfig, FirstBestSolution};
use macrofin::ramsey::system::{solve_ramsey_point, DepositBounds};
use macrofin::real::Real;
use macrofin::simulation::{simulate, SimConfig};
use macrofin::welfare::{consumption_equivalent, decompose_gains, value_of_consumption_equivalent};
use macrofin::{Error, ModelParams};
use proptest::prelude::*;
use std::sync::OnceLock;

fn fb() -> &'static FirstBestSolution {
    static FB: OnceLock<FirstBestSolution> = OnceLock::new();
    FB.get_or_init(|| solve_first_best(&ModelParams::default(), &FirstBestConfig::default()).unwrap())
}

#[test]
fn first_best_bellman_residual_off_grid() {
    let sol = fb();
    let k0 = sol.alloc(10.0, 0).unwrap().k_next;
    for j in 0..20 {
        let k = k0 * (0.7 + 0.03 * j as f64 + 0.0123);
        for s in [0, sol.chain.median_normal(), sol.chain.len() - 1] {
            let r = sol.bellman_residual(k, s).unwrap();
            assert!(r < 1e-5, "Bellman residual {r} at K={k}, s={s}");
        }
    }
}

#[test]
fn checkpoint_roundtrip_is_bit_identical() {
    let c = fb().to_checkpoint();
    let bytes = c.to_bytes();
    let back = FirstBestSolution::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.to_checkpoint().to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fb.ckpt");
    c.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap().to_bytes(), bytes);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let bytes = fb().to_checkpoint().to_bytes();
    for cut in [10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))));
    }
}

#[test]
fn parameter_hash_mismatch_is_rejected() {
    let c = fb().to_checkpoint();
    let other = ModelParams { beta: 0.96, ..ModelParams::default() };
    assert!(c.expect_params_hash(&other.hash()).is_err());
    assert!(c.expect_params_hash(&ModelParams::default().hash()).is_ok());
}

#[test]
fn decomposition_of_identical_paths_is_zero() {
    let cfg = SimConfig { periods: 2000, burn_in: 100, seed: 4 };
    let path = simulate(fb(), &cfg).unwrap();
    let g = decompose_gains(&path, &path, &fb().params).unwrap();
    for v in [g.total, g.efficiency, g.redistribution, g.insurance] {
        assert!(v.abs() < 1e-12, "{g:?}");
    }
}

/// With successors that are constant in the state and a zero promise, the
/// planner point solves to machine precision.
#[test]
fn planner_point_converges_with_fixed_successors() {
    let p = ModelParams::default();
    let chain = p.shock_chain().unwrap();
    let fb = fb();
    let k = fb.alloc(10.0, 0).unwrap().k_next;
    let s = chain.median_normal();
    let a = fb.alloc(k, s).unwrap();
    let (cw, ce) = (a.c_w, a.c_e);
    fn succ<T: Real>(cw: f64, ce: f64) -> impl FnMut(usize, T, T, T) -> (T, T, T) {
        move |_s, _k, _d, mu| (T::cst(cw), T::cst(ce), mu)
    }
    struct Both<A, B>(A, B);
    impl<A: FnMut(usize, f64, f64, f64) -> (f64, f64, f64), B> macrofin::ramsey::system::RamseyNext<f64> for Both<A, B> {
        fn next(&mut self, s: usize, k: f64, d: f64, mu: f64) -> (f64, f64, f64) {
            (self.0)(s, k, d, mu)
        }
    }
    type D4 = macrofin::real::Dual<4>;
    impl<A, B: FnMut(usize, D4, D4, D4) -> (D4, D4, D4)> macrofin::ramsey::system::RamseyNext<D4> for Both<A, B> {
        fn next(&mut self, s: usize, k: D4, d: D4, mu: D4) -> (D4, D4, D4) {
            (self.1)(s, k, d, mu)
        }
    }
    let mut both = Both(succ::<f64>(cw, ce), succ::<D4>(cw, ce));
    let out = solve_ramsey_point(
        &p,
        &chain,
        k,
        0.65 * k,
        0.0,
        s,
        [cw, ce, 0.6, 0.0],
        DepositBounds { lo: 0.2, hi: 1.0 },
        &mut both,
        1e-12,
        80,
    )
    .unwrap();
    assert!(out.residual < 1e-9, "{out:?}");
    assert!(out.x[0] > 0.0 && out.x[1] > 0.0);
}

proptest! {
    #[test]
    fn consumption_equivalent_inverts(omega in 0.05f64..20.0, gamma in 0.5f64..5.0) {
        let p = ModelParams { gamma, ..ModelParams::default() };
        let v = value_of_consumption_equivalent(omega, &p).unwrap();
        let back = consumption_equivalent(v, &p).unwrap();
        prop_assert!((back - omega).abs() < 1e-9 * omega);
    }

    #[test]
    fn consumption_equivalent_is_monotone(a in 0.1f64..5.0, b in 0.1f64..5.0) {
        let p = ModelParams::default();
        let (va, vb) = (value_of_consumption_equivalent(a, &p).unwrap(), value_of_consumption_equivalent(b, &p).unwrap());
        prop_assert_eq!(a < b, va < vb);
    }
}
