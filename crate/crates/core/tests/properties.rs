use proptest::prelude::*;

use polyfhe::leakage::{privacy_gain, suppression_rate};
use polyfhe::pipeline::{compress_prefix, Attributes, Embedding};
use polyfhe::polyprotect::{encrypt_windows, gen_params, protect_encrypted, protect_plain};
use polyfhe::similarity::cosine_plain;
use polyfhe::summation::{dft_sum, fold_add_all, naive_add_all};
use polyfhe::EncryptionContext;

fn ctx(cap: usize) -> EncryptionContext {
    EncryptionContext::new(cap, 16, 99).unwrap()
}

fn values(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encrypt_decrypt_round_trip(v in values(64)) {
        let c = ctx(64);
        let back = c.decrypt(&c.encrypt_values(&v).unwrap()).unwrap();
        prop_assert_eq!(back.values(), &v[..]);
    }

    #[test]
    fn slot_ops_are_homomorphic(pair in (1usize..=32).prop_flat_map(|n| (
        prop::collection::vec(-10.0f64..10.0, n),
        prop::collection::vec(-10.0f64..10.0, n),
    ))) {
        let (a, b) = pair;
        let c = ctx(32);
        let (ca, cb) = (c.encrypt_values(&a).unwrap(), c.encrypt_values(&b).unwrap());
        let sum = c.decrypt(&c.add(&ca, &cb).unwrap()).unwrap();
        let prod = c.decrypt(&c.mult(&ca, &cb).unwrap()).unwrap();
        for i in 0..a.len() {
            prop_assert!((sum.values()[i] - (a[i] + b[i])).abs() <= 1e-12);
            prop_assert!((prod.values()[i] - a[i] * b[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn rotations_compose(v in values(16), j in 0usize..40, k in 0usize..40) {
        let c = ctx(16);
        let x = c.encrypt_values(&v).unwrap();
        let two = c.rotate_left(&c.rotate_left(&x, j).unwrap(), k).unwrap();
        let one = c.rotate_left(&x, j + k).unwrap();
        prop_assert_eq!(c.decrypt_all(&two).unwrap(), c.decrypt_all(&one).unwrap());
        let back = c.rotate_right(&c.rotate_left(&x, k).unwrap(), k).unwrap();
        prop_assert_eq!(c.decrypt_all(&back).unwrap(), c.decrypt_all(&x).unwrap());
    }

    #[test]
    fn serialization_round_trips(v in values(32), nonce in any::<[u8; 16]>()) {
        let c = ctx(32);
        let x = c.encrypt_values(&v).unwrap();
        let bytes = c.serialize_with_nonce(&x, nonce).unwrap();
        let y = c.deserialize_ciphertext(&bytes, v.len(), 0).unwrap();
        prop_assert_eq!(c.decrypt_all(&y).unwrap(), c.decrypt_all(&x).unwrap());
    }

    #[test]
    fn summation_kernels_agree_with_scalar_sum(v in values(64)) {
        let n = v.len();
        let c = ctx(n.next_power_of_two());
        let x = c.encrypt_values(&v).unwrap();
        let want: f64 = v.iter().sum();
        for got in [
            naive_add_all(&c, &x, n).unwrap(),
            fold_add_all(&c, &x, n).unwrap(),
            dft_sum(&c, &x, n).unwrap(),
        ] {
            prop_assert!((c.decrypt_all(&got).unwrap()[0] - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn polyprotect_encrypted_equals_plain(
        m in 2usize..=7,
        overlap_frac in 0.0f64..1.0,
        len in 8usize..=48,
        seed in any::<u64>(),
        raw in prop::collection::vec(-1.0f64..1.0, 48),
    ) {
        let overlap = ((m - 1) as f64 * overlap_frac) as usize;
        let params = gen_params(m, overlap, 50, seed).unwrap();
        let v = &raw[..len];
        let c = ctx(16);
        let enc = protect_encrypted(&encrypt_windows(v, &params, &c).unwrap(), &params, &c).unwrap();
        let plain = protect_plain(v, &params).unwrap();
        let stride = m - overlap;
        prop_assert_eq!(plain.k(), (len.saturating_sub(m)).div_ceil(stride) + 1);
        for (a, b) in enc.decrypt(&c).unwrap().iter().zip(plain.plain().unwrap()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn cosine_is_symmetric_bounded_and_scale_free(
        pair in (2usize..=32).prop_flat_map(|n| (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )),
        scale in 0.01f64..100.0,
    ) {
        let (a, b) = pair;
        prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
        let ab = cosine_plain(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - cosine_plain(&b, &a).unwrap()).abs() <= 1e-15);
        let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
        prop_assert!((ab - cosine_plain(&scaled, &b).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn compressed_prefix_is_unit(v in prop::collection::vec(0.01f64..1.0, 8..64), d in 1usize..8) {
        let e = Embedding {
            values: v,
            subject_id: 0,
            attributes: Attributes { gender: 0, age_band: 0, ethnicity: 0 },
        };
        let c = compress_prefix(&e, d).unwrap();
        prop_assert_eq!(c.values.len(), d);
        prop_assert!((c.values.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn pg_sr_relations(a_o in 0.001f64..=1.0, a_p in 0.0f64..=1.0) {
        let pg = privacy_gain(a_o, a_p);
        let sr = suppression_rate(a_o, a_p).unwrap();
        prop_assert!((pg - (a_o - a_p)).abs() <= 1e-15);
        prop_assert!((sr * a_o - (a_o - a_p)).abs() <= 1e-15);
        prop_assert!(sr <= 1.0);
    }
}
