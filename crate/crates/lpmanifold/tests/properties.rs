//! Randomized structural properties: closed forms against quadrature,
//! lossless sequence reshaping, and the norm axioms of the weighted
//! Hölder functional. Shapes and inputs are drawn by proptest; each
//! property must hold on every draw, not merely on average.

use lpmanifold::integral::beta_increment;
use lpmanifold::lp::{hkappa_distance, SequenceU};
use lpmanifold::mild::weighted_norm_of;
use lpmanifold::quad::beta_kernel_quadrature;
use ndarray::Array2;
use proptest::prelude::*;

/// A long grid path sliced into `m` unit blocks of `n` cells over `d` modes,
/// returned with its slicing parameter.
fn flat_path() -> impl Strategy<Value = (Array2<f64>, usize)> {
    (1usize..5, 1usize..7, 1usize..5).prop_flat_map(|(m, n, d)| {
        let rows = m * n + 1;
        prop::collection::vec(-1.0f64..1.0, rows * d)
            .prop_map(move |v| (Array2::from_shape_vec((rows, d), v).unwrap(), n))
    })
}

/// A grid path plus the weights, decay rate, and step matching its width.
fn normed_path() -> impl Strategy<Value = (Array2<f64>, Vec<f64>, f64, f64)> {
    (2usize..12, 1usize..5).prop_flat_map(|(rows, d)| {
        (
            prop::collection::vec(-1.0f64..1.0, rows * d)
                .prop_map(move |v| Array2::from_shape_vec((rows, d), v).unwrap()),
            prop::collection::vec(0.1f64..2.0, d),
            0.0f64..1.5,
            0.05f64..0.5,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    /// Graded product quadrature of `(r-s)^a (t-r)^b` agrees with the
    /// Gamma-function closed form across the whole integrable range,
    /// including both endpoint singularities at once.
    #[test]
    fn beta_quadrature_matches_closed_form(
        a in -0.9f64..1.5,
        b in -0.9f64..1.5,
        s in 0.05f64..0.8,
        dt in 0.2f64..1.2,
    ) {
        let t = s + dt;
        let closed = beta_increment(a, b, s, t);
        let quad = beta_kernel_quadrature(b, a, s, t, 512, 2.0, |_| 1.0);
        prop_assert!(
            (quad - closed).abs() <= 1e-7 * closed.abs(),
            "a={a} b={b}: quad {quad} vs closed {closed}"
        );
    }

    /// Slicing a path into endpoint-matched blocks and concatenating back
    /// is bitwise lossless, for every tiling shape.
    #[test]
    fn sequence_flat_roundtrip_is_bitwise((flat, n) in flat_path()) {
        let seq = SequenceU::from_flat(&flat, n).unwrap();
        prop_assert_eq!(seq.flatten(), flat);
    }

    /// `|U - V|_kappa` computed blockwise equals the norm of the
    /// materialized difference path.
    #[test]
    fn hkappa_distance_matches_materialized_difference(
        (fa, n) in flat_path(),
        raw in prop::collection::vec(-1.0f64..1.0, 200),
        kappa in 0.1f64..1.0,
    ) {
        let mut fb = fa.clone();
        for (x, r) in fb.iter_mut().zip(raw.iter().cycle()) {
            *x += r;
        }
        let a = SequenceU::from_flat(&fa, n).unwrap();
        let b = SequenceU::from_flat(&fb, n).unwrap();
        let diff = SequenceU::from_flat(&(&fb - &fa), n).unwrap();
        let weights: Vec<f64> = (1..=fa.ncols()).map(|i| 1.0 / i as f64).collect();
        let direct = hkappa_distance(&a, &b, kappa, &weights, 0.6).unwrap();
        let via_diff = diff.hkappa_norm(kappa, &weights, 0.6);
        prop_assert!(
            (direct - via_diff).abs() <= 1e-12 * (1.0 + via_diff),
            "direct {direct} vs materialized {via_diff}"
        );
    }

    /// The weighted Hölder functional is a norm on grid paths: absolutely
    /// homogeneous, subadditive, and zero only at zero.
    #[test]
    fn weighted_norm_axioms(
        (u, weights, rho, h) in normed_path(),
        raw in prop::collection::vec(-1.0f64..1.0, 60),
        c in -3.0f64..3.0,
    ) {
        let mut v = u.clone();
        for (x, r) in v.iter_mut().zip(raw.iter().cycle()) {
            *x = *r;
        }
        let beta = 0.6;
        let nu = weighted_norm_of(&u, h, &weights, rho, beta);
        let nv = weighted_norm_of(&v, h, &weights, rho, beta);
        let nsum = weighted_norm_of(&(&u + &v), h, &weights, rho, beta);
        let nscaled = weighted_norm_of(&u.mapv(|x| c * x), h, &weights, rho, beta);

        prop_assert!(nsum <= nu + nv + 1e-12 * (1.0 + nu + nv));
        prop_assert!(
            (nscaled - c.abs() * nu).abs() <= 1e-12 * (1.0 + nu),
            "|c u| = {nscaled} vs |c| |u| = {}",
            c.abs() * nu
        );
        if u.iter().any(|&x| x != 0.0) {
            prop_assert!(nu > 0.0);
        }
    }
}
