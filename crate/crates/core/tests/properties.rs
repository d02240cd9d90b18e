use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use chi_contract::channels::{random_comm_channel, random_ldp_channel, ConstraintSpec};
use chi_contract::contraction::{h_matrix, verify_norm_bounds};
use chi_contract::perturbation::{induce, paninski_family};
use chi_contract::prob::{apply_channel, divergence, mix_channels, DivergenceKind};
use chi_contract::{Channel, Distribution};

fn distribution(k: usize) -> impl Strategy<Value = Distribution> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|w| {
        let total: f64 = w.iter().sum();
        Distribution::new(w.into_iter().map(|x| x / total).collect()).unwrap()
    })
}

fn channel(k: usize, m: usize) -> impl Strategy<Value = Channel> {
    prop::collection::vec(0.0f64..1.0, k * m).prop_map(move |raw| {
        let mut w = DMatrix::from_column_slice(m, k, &raw);
        for mut col in w.column_iter_mut() {
            col[0] += 1e-3;
            let total = col.sum();
            col /= total;
        }
        Channel::new(w).unwrap()
    })
}

fn signs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(any::<bool>(), len).prop_map(|b| b.into_iter().map(|s| if s { 1.0 } else { -1.0 }).collect())
}

fn pair() -> impl Strategy<Value = (Distribution, Distribution)> {
    (1usize..8).prop_flat_map(|k| (distribution(k), distribution(k)))
}

proptest! {
    #[test]
    fn divergence_inequalities((p, q) in pair()) {
        let tv = divergence(&p, &q, DivergenceKind::Tv).unwrap();
        let kl = divergence(&p, &q, DivergenceKind::Kl).unwrap();
        let chi2 = divergence(&p, &q, DivergenceKind::Chi2).unwrap();
        prop_assert!(tv <= (kl / 2.0).sqrt() + 1e-12);
        prop_assert!(kl <= chi2.ln_1p() + 1e-12);
        prop_assert!(tv <= 0.5 * chi2.sqrt() + 1e-12);
    }

    #[test]
    fn data_processing(
        (p, q, w) in (1usize..7, 1usize..6).prop_flat_map(|(k, m)| (distribution(k), distribution(k), channel(k, m)))
    ) {
        let (wp, wq) = (apply_channel(&w, &p).unwrap(), apply_channel(&w, &q).unwrap());
        for kind in [DivergenceKind::Tv, DivergenceKind::Kl, DivergenceKind::Chi2] {
            let before = divergence(&p, &q, kind).unwrap();
            let after = divergence(&wp, &wq, kind).unwrap();
            prop_assert!(after <= before + 1e-12, "{kind}: {after} > {before}");
        }
    }

    #[test]
    fn mixing_is_linear(
        (p, a, b, t) in (1usize..7).prop_flat_map(|k| (distribution(k), channel(k, 3), channel(k, 3), 0.0f64..=1.0))
    ) {
        let mixed = mix_channels(&[(a.clone(), t), (b.clone(), 1.0 - t)]).unwrap();
        let lhs = apply_channel(&mixed, &p).unwrap();
        let (pa, pb) = (apply_channel(&a, &p).unwrap(), apply_channel(&b, &p).unwrap());
        for y in 0..3 {
            let rhs = t * pa.probs()[y] + (1.0 - t) * pb.probs()[y];
            prop_assert!((lhs.probs()[y] - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn h_matrix_is_psd_sum_of_rank_ones(w in (1usize..5, 1usize..7).prop_flat_map(|(h, m)| channel(2 * h, m))) {
        let h = h_matrix(&w).unwrap();
        let half = w.k() / 2;
        let mut oracle = DMatrix::<f64>::zeros(half, half);
        for y in 0..w.m() {
            let mass: f64 = (0..w.k()).map(|x| w.prob(y, x)).sum();
            let b = DVector::from_fn(half, |i, _| (w.prob(y, 2 * i) - w.prob(y, 2 * i + 1)) / mass.sqrt());
            oracle += &b * b.transpose();
        }
        prop_assert!((h.entries() - &oracle).abs().max() <= 1e-12);
        prop_assert!(h.min_eigenvalue() >= -1e-12);
        prop_assert!((h.nuclear() - oracle.trace()).abs() <= 1e-10);
    }

    #[test]
    fn induced_inner_products_match_gram(
        (w, z, z2, eps) in (1usize..5).prop_flat_map(|h| (channel(2 * h, 3), signs(h), signs(h), 0.01f64..0.5))
    ) {
        let k = w.k();
        let f = paninski_family(k, eps).unwrap();
        let a = induce(&w, &f.perturbation(&z)).unwrap();
        let b = induce(&w, &f.perturbation(&z2)).unwrap();
        let h = h_matrix(&w).unwrap();
        let quad = (DVector::from_column_slice(&z).transpose() * h.entries() * DVector::from_column_slice(&z2))[0];
        let expected = 4.0 * eps * eps / k as f64 * quad;
        prop_assert!((a.inner(&b).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn constrained_channels_respect_norm_bounds(seed in any::<u64>(), bits in 1u32..4, rho in 0.05f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 12;
        let w = random_comm_channel(k, bits, &mut rng).unwrap();
        let c = verify_norm_bounds(&w, &ConstraintSpec::comm(bits, k).unwrap()).unwrap();
        prop_assert!(c.nuclear <= f64::from(1u32 << bits) + 1e-9);
        prop_assert!(c.frobenius_sq <= f64::from(2u32 << bits) + 1e-9);
        let v = random_ldp_channel(k, 4, rho, &mut rng).unwrap();
        let d = verify_norm_bounds(&v, &ConstraintSpec::ldp(rho, k).unwrap()).unwrap();
        prop_assert!(d.nuclear <= (rho.exp() - 1.0).powi(2) / 2.0 * (1.0 + 1e-9));
    }
}
