mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rug::Integer;

use common::{deployment, knn_valid_label_sets, knn_valid_labels, pair};
use ppknn::bench::synthetic_table;
use ppknn::dataset::PlainTable;
use ppknn::mpc::ids;
use ppknn::paillier::{keygen, Encryptor};
use ppknn::ppknn::{owner_encrypt_db, querier_encrypt_query, Stage1};

fn random_rows(rng: &mut ChaCha20Rng, n: usize, m: usize, w: usize, attr_bits: u32) -> Vec<Vec<u64>> {
    synthetic_table(n, m, w, attr_bits, rng).unwrap().rows().to_vec()
}

#[test]
fn oracle_handles_ties() {
    // Query 0; distances 0, 1, 1, 4 with labels 1, 2, 3, 2.
    let rows = vec![vec![0, 1], vec![1, 2], vec![1, 3], vec![2, 2]];
    assert_eq!(knn_valid_labels(&rows, &[0], 1), [1].into());
    assert_eq!(knn_valid_labels(&rows, &[0], 2), [1, 2, 3].into());
    assert_eq!(knn_valid_labels(&rows, &[0], 3), [1, 2, 3].into());
    assert_eq!(knn_valid_labels(&rows, &[0], 4), [2].into());
    assert_eq!(knn_valid_label_sets(&rows, &[0], 2), [vec![1, 2], vec![1, 3]].into());
}

#[test]
fn classify_matches_plaintext_knn() {
    let mut rng = ChaCha20Rng::seed_from_u64(50);
    let rows = random_rows(&mut rng, 16, 3, 3, 3);
    let (dep, rec) = deployment(rows.clone(), 3, 512, 51, false);
    for k in [1, 2, 4] {
        for _ in 0..3 {
            let q: Vec<u64> = (0..3).map(|_| rng.gen_range(0..8)).collect();
            let got = dep.query(&q, k).unwrap().label;
            let valid = knn_valid_labels(&rows, &q, k);
            assert!(valid.contains(&got), "k={k} q={q:?}: got {got}, valid {valid:?}");
        }
    }
    // C2 saw exactly one zero in every selection vector.
    for (id, values) in rec.decrypted.lock().unwrap().iter() {
        if *id == ids::ONE_HOT {
            assert_eq!(values.iter().filter(|v| **v == 0).count(), 1);
        }
    }
}

#[test]
fn degenerate_k_values() {
    let mut rng = ChaCha20Rng::seed_from_u64(52);
    let mut rows = random_rows(&mut rng, 8, 2, 2, 3);
    // A unique nearest record for k = 1 and a strict global majority for k = n.
    rows[0] = vec![7, 7, 1];
    for r in rows.iter_mut().skip(1).take(5) {
        r[2] = 2;
    }
    for r in rows.iter_mut().skip(6) {
        r[2] = 1;
    }
    let (dep, _) = deployment(rows.clone(), 3, 512, 53, false);
    assert_eq!(dep.query(&[7, 7], 1).unwrap().label, 1);
    assert_eq!(dep.query(&[0, 0], 8).unwrap().label, 2);
}

#[test]
fn stage1_returns_a_tie_valid_neighbor_set() {
    // Many duplicate distances: attributes drawn from {0, 1}.
    let mut rng = ChaCha20Rng::seed_from_u64(54);
    let rows: Vec<Vec<u64>> = (0..16).map(|i| vec![rng.gen_range(0..2), rng.gen_range(0..2), 1 + i % 4]).collect();
    let mut p = pair(512, 55);
    let table = PlainTable::new(rows.clone(), Some(1)).unwrap();
    let db = owner_encrypt_db(p.ev.encryptor(), &table, &mut rng).unwrap();
    for k in [3, 6] {
        let q = [0, 1];
        let query = querier_encrypt_query(p.ev.encryptor(), &q, &db.params, &mut rng).unwrap();
        let labels = Stage1::run(&mut p.ev, &p.ch, &query, &db, k).unwrap();
        let mut got: Vec<u64> = labels.iter().map(|c| p.dec(c).to_u64().unwrap()).collect();
        got.sort();
        let valid = knn_valid_label_sets(&rows, &q, k);
        assert!(valid.contains(&got), "k={k}: {got:?} not in {valid:?}");
    }
}

#[test]
fn parallel_mode_matches_the_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(56);
    let rows = random_rows(&mut rng, 12, 2, 3, 3);
    let (dep, _) = deployment(rows.clone(), 3, 512, 57, true);
    for k in [1, 3] {
        let q: Vec<u64> = (0..2).map(|_| rng.gen_range(0..8)).collect();
        let got = dep.query(&q, k).unwrap().label;
        assert!(knn_valid_labels(&rows, &q, k).contains(&got));
    }
}

#[test]
fn stage2_frequencies_sum_to_k() {
    let mut p = pair(512, 58);
    let mut rng = ChaCha20Rng::seed_from_u64(59);
    for k in [1, 4, 9] {
        let classes: Vec<_> = (1..=4u64).map(|c| p.ev.encrypt_u64(c)).collect();
        let labels: Vec<u64> = (0..k).map(|_| rng.gen_range(1..=4)).collect();
        let enc: Vec<_> = labels.iter().map(|&c| p.ev.encrypt_u64(c)).collect();
        let f = p.ev.sf(&p.ch, &classes, &enc).unwrap();
        let f = p.decs(&f);
        assert_eq!(f.iter().sum::<Integer>(), k as u64);
        for (c, fc) in (1..=4u64).zip(&f) {
            assert_eq!(*fc, labels.iter().filter(|&&x| x == c).count() as u64);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encrypted_tables_and_queries_round_trip(seed in any::<u64>(), n in 2usize..6, m in 1usize..4, bits in 1u32..6) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (pk, sk) = keygen(512, &mut rng).unwrap();
        let enc = Encryptor::public(Arc::new(pk));
        let rows = synthetic_table(n, m, 2, bits, &mut rng).unwrap().rows().to_vec();
        let table = PlainTable::new(rows.clone(), Some(bits)).unwrap();
        let db = owner_encrypt_db(&enc, &table, &mut rng).unwrap();
        prop_assert_eq!(db.decrypt(&sk).unwrap(), rows);
        let classes: BTreeSet<u64> = db.classes.iter().map(|c| sk.decrypt(c).unwrap().to_u64().unwrap()).collect();
        prop_assert_eq!(classes.len(), db.params.w);
        // Every squared distance fits the distance width.
        let max = m as u64 * ((1u64 << bits) - 1).pow(2);
        prop_assert!(max < (1u64 << db.params.l) - 1);
        let q: Vec<u64> = (0..m).map(|_| rng.gen_range(0..1u64 << bits)).collect();
        let eq = querier_encrypt_query(&enc, &q, &db.params, &mut rng).unwrap();
        let back: Vec<u64> = eq.attrs.iter().map(|c| sk.decrypt(c).unwrap().to_u64().unwrap()).collect();
        prop_assert_eq!(back, q);
    }
}
