//! Acceptance suite. Runs every criterion in sequence and prints one line per
//! criterion; the test fails if any criterion fails. The full-scale
//! communication check is a separate ignored test.
//!
//! The report goes to stderr even when the harness captures output.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rug::Integer;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::{deployment, knn_valid_labels, pair, Pair};
use ppknn::bench::{random_query, run_bench, synthetic_table, BenchConfig, BenchReport, Mode};
use ppknn::dataset::{load_csv, CsvOptions, Schema};
use ppknn::mpc::{ids, Extremum, Permutation, RankedValue, SminPins};
use ppknn::paillier::Ciphertext;
use ppknn::ppknn::{querier_encrypt_query, Stage1};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Written to stderr directly, bypassing the test harness's output capture, so
/// the report shows up in plain `cargo test` runs too.
fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn run_criterion(id: &str, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    report(&format!("criterion {id} {tag} {name} ({secs:.1}s): {detail}"));
    outcome.is_ok()
}

fn u(x: &Integer) -> u64 {
    x.to_u64().expect("small plaintext")
}

// ------------------------------------------------------------------ 1

fn sub_protocol_oracles() -> Outcome {
    let mut p = pair(512, 1000);
    let mut rng = ChaCha20Rng::seed_from_u64(1001);
    let n = p.ev.pk().n().clone();
    let mut failures = Vec::new();

    // SM: 1000 random pairs, in batches of 100.
    for _ in 0..10 {
        let vals: Vec<(Integer, Integer)> =
            (0..100).map(|_| (ppknn::random::below(&n, &mut rng), ppknn::random::below(&n, &mut rng))).collect();
        let pairs: Vec<(Ciphertext, Ciphertext)> = vals.iter().map(|(a, b)| (p.ev.encrypt(a), p.ev.encrypt(b))).collect();
        let out = p.ev.sm_batch(&p.ch, &pairs).map_err(|e| e.to_string())?;
        for ((a, b), c) in vals.iter().zip(&out) {
            if p.dec(c) != Integer::from(a * b) % &n {
                failures.push("SM".to_string());
            }
        }
    }

    // SBD: 500 values at each of l = 6, 12, 20, extremes included.
    for l in [6usize, 12, 20] {
        let top = (1u64 << l) - 1;
        let mut zs: Vec<u64> = vec![0, 1, top, top - 1];
        zs.extend((4..500).map(|_| rng.gen_range(0..=top)));
        for chunk in zs.chunks(50) {
            let cts: Vec<Ciphertext> = chunk.iter().map(|&z| p.ev.encrypt_u64(z)).collect();
            let bits = p.ev.sbd_many(&p.ch, &cts, l).map_err(|e| e.to_string())?;
            for (z, b) in chunk.iter().zip(&bits) {
                match b.reveal(&p.sk) {
                    Ok(v) if v == *z && b.len() == l => {}
                    _ => failures.push(format!("SBD l={l} z={z}")),
                }
            }
        }
    }

    // SBOR: exhaustive, three repetitions.
    for _ in 0..3 {
        for (a, b) in [(0u64, 0u64), (0, 1), (1, 0), (1, 1)] {
            let (ea, eb) = (p.ev.encrypt_u64(a), p.ev.encrypt_u64(b));
            let o = p.ev.sbor(&p.ch, &ea, &eb).map_err(|e| e.to_string())?;
            if u(&p.dec(&o)) != (a | b) {
                failures.push(format!("SBOR {a}|{b}"));
            }
        }
    }

    // SMIN / SMAX: 1000 pairs at l = 12, 50 of them equal.
    let l = 12;
    for i in 0..1000 {
        let a = rng.gen_range(0..1u64 << l);
        let b = if i < 50 { a } else { rng.gen_range(0..1u64 << l) };
        let (x, y) = (p.ranked(a, l, &[1]), p.ranked(b, l, &[2]));
        let which = if i % 2 == 0 { Extremum::Min } else { Extremum::Max };
        let r = match which {
            Extremum::Min => p.ev.smin(&p.ch, &x, &y),
            Extremum::Max => p.ev.smax(&p.ch, &x, &y),
        }
        .map_err(|e| e.to_string())?;
        let want = if which == Extremum::Min { a.min(b) } else { a.max(b) };
        let secret = u(&p.dec(&r.bundle.0[0]));
        let want_secret: BTreeSet<u64> = match (a.cmp(&b), which) {
            (std::cmp::Ordering::Equal, _) => [1, 2].into(),
            (std::cmp::Ordering::Less, Extremum::Min) | (std::cmp::Ordering::Greater, Extremum::Max) => [1].into(),
            _ => [2].into(),
        };
        if r.value.reveal(&p.sk).ok() != Some(Integer::from(want)) || !want_secret.contains(&secret) {
            failures.push(format!("{which:?}({a},{b})"));
        }
    }

    // SMIN_n / SMAX_w: sizes 1..=16, 200 trials.
    for t in 0..200 {
        let size = 1 + t % 16;
        let which = if t % 2 == 0 { Extremum::Min } else { Extremum::Max };
        let vals: Vec<u64> = (0..size).map(|_| rng.gen_range(0..1u64 << l)).collect();
        let items: Vec<RankedValue> = vals.iter().enumerate().map(|(i, &v)| p.ranked(v, l, &[i as u64])).collect();
        let r = p.ev.tournament(&p.ch, which, items).map_err(|e| e.to_string())?;
        let want = if which == Extremum::Min { *vals.iter().min().unwrap() } else { *vals.iter().max().unwrap() };
        let idx = u(&p.dec(&r.bundle.0[0])) as usize;
        if r.value.reveal(&p.sk).ok() != Some(Integer::from(want)) || vals.get(idx) != Some(&want) {
            failures.push(format!("{which:?} over {size}"));
        }
    }

    // SF: 200 random histograms.
    for _ in 0..200 {
        let w = rng.gen_range(2..=6usize);
        let k = rng.gen_range(1..=10usize);
        let mut classes: Vec<u64> = Vec::new();
        while classes.len() < w {
            let c = rng.gen_range(1..1000);
            if !classes.contains(&c) {
                classes.push(c);
            }
        }
        let labels: Vec<u64> = (0..k).map(|_| classes[rng.gen_range(0..w)]).collect();
        let ec: Vec<Ciphertext> = classes.iter().map(|&c| p.ev.encrypt_u64(c)).collect();
        let el: Vec<Ciphertext> = labels.iter().map(|&c| p.ev.encrypt_u64(c)).collect();
        let f = p.ev.sf(&p.ch, &ec, &el).map_err(|e| e.to_string())?;
        let got: Vec<u64> = f.iter().map(|c| u(&p.dec(c))).collect();
        let want: Vec<u64> = classes.iter().map(|c| labels.iter().filter(|x| *x == c).count() as u64).collect();
        if got != want {
            failures.push(format!("SF {classes:?} {labels:?}"));
        }
    }

    check(failures.is_empty(), format!("{} oracle mismatches, first: {:?}", failures.len(), failures.first()))?;
    Ok("SM 1000, SBD 1500, SBOR 12, SMIN/SMAX 1000, tournaments 200, SF 200: zero mismatches".into())
}

// ------------------------------------------------------------------ 2

fn worked_examples() -> Outcome {
    let mut p = pair(512, 2000);
    let n = p.ev.pk().n().clone();
    let signed = |x: i64| if x < 0 { Integer::from(&n + x) } else { Integer::from(x) };

    let (a, b) = (p.ev.encrypt_u64(59), p.ev.encrypt_u64(58));
    let ab = p.ev.sm_with_masks(&p.ch, &a, &b, &Integer::from(1), &Integer::from(3)).map_err(|e| e.to_string())?;
    check(p.dec(&ab) == 3422, "SM(59, 58) != 3422")?;
    check(p.rec.decrypted.lock().unwrap().last().map(|(_, v)| v.clone()) == Some(vec![Integer::from(60), Integer::from(61)]), "P2 did not see (60, 61)")?;
    check(*p.rec.products.lock().unwrap() == vec![Integer::from(3660)], "h != 3660")?;

    let x: Vec<Ciphertext> = [63u64, 1, 1, 145, 233, 1, 3, 0, 6, 0].iter().map(|&v| p.ev.encrypt_u64(v)).collect();
    let y: Vec<Ciphertext> = [56u64, 1, 3, 130, 256, 1, 2, 1, 6, 2].iter().map(|&v| p.ev.encrypt_u64(v)).collect();
    let d = p.ev.ssed(&p.ch, &x, &y).map_err(|e| e.to_string())?;
    check(p.dec(&d) == 813, "SSED != 813")?;

    let z = p.ev.encrypt_u64(55);
    let bits = p.ev.sbd(&p.ch, &z, 6).map_err(|e| e.to_string())?;
    check(p.decs(bits.bits()) == [1, 1, 0, 1, 1, 1].map(Integer::from).to_vec(), "SBD(55) != 110111")?;

    let uu = p.ranked(55, 6, &[1001]);
    let vv = p.ranked(58, 6, &[2002]);
    let pins = SminPins {
        u_greater_v: false,
        pi1: Permutation::from_one_based(&[6, 5, 4, 3, 2, 1]).unwrap(),
        pi2: Permutation::from_one_based(&[2, 1, 5, 6, 3, 4]).unwrap(),
    };
    let (out, tr) = p.ev.compare_traced(&p.ch, Extremum::Min, &uu, &vv, Some(&pins)).map_err(|e| e.to_string())?;
    let ints = |xs: &[i64]| xs.iter().map(|&x| signed(x)).collect::<Vec<_>>();
    check(p.decs(&tr.w) == ints(&[0, 0, 1, 0, 0, 0]), "W column")?;
    check(p.decs(&tr.t) == ints(&[0, 0, 1, 1, 0, 1]), "T column")?;
    check(p.decs(&tr.lambda) == ints(&[0, 0, -1, 1, 0, 1]), "lambda column")?;
    check(p.dec(&tr.alpha) == 1, "alpha != 1")?;
    check(out.value.reveal(&p.sk).ok() == Some(Integer::from(55)), "min != 55")?;
    check(out.bundle.reveal(&p.sk).ok() == Some(vec![Integer::from(1001)]), "secret is not u's")?;
    Ok("SM(59,58)=3422 with masks (1,3); SSED=813; SBD(55,6)=110111; SMIN(55,58)=55 with u's secret, alpha=1".into())
}

// ----------------------------------------------------------- 3 and 4

struct EndToEnd {
    shares: Vec<f64>,
}

fn end_to_end(out: &mut Option<EndToEnd>) -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3000);
    let table = synthetic_table(64, 6, 4, 4, &mut rng).unwrap();
    let rows = table.rows().to_vec();
    let (dep, _) = deployment(rows.clone(), 4, 512, 3001, false);
    let mut shares = Vec::new();
    let mut wrong = Vec::new();
    let mut tied = 0;
    for k in [1usize, 3, 5] {
        for _ in 0..50 {
            let q = random_query(6, 4, &mut rng);
            let r = dep.query(&q, k).map_err(|e| e.to_string())?;
            let valid = knn_valid_labels(&rows, &q, k);
            if valid.len() > 1 {
                tied += 1;
            }
            if !valid.contains(&r.label) {
                wrong.push((k, q, r.label, valid));
            }
            shares.push(r.stage2.time.as_secs_f64() / r.total_time.as_secs_f64());
        }
    }
    *out = Some(EndToEnd { shares });
    check(wrong.is_empty(), format!("{} of 150 queries outside the oracle's answer set, first {:?}", wrong.len(), wrong.first()))?;
    Ok(format!("150 of 150 queries (k = 1, 3, 5) match the plaintext oracle; {tied} had tied valid sets"))
}

fn stage_dominance(e2e: &Option<EndToEnd>) -> Outcome {
    let e = e2e.as_ref().ok_or("end-to-end runs did not complete")?;
    let worst = e.shares.iter().cloned().fold(0.0, f64::max);
    let mean = e.shares.iter().sum::<f64>() / e.shares.len() as f64;
    check(worst <= 0.05, format!("stage 2 share up to {:.2}%", 100.0 * worst))?;
    Ok(format!("stage2/total: mean {:.3}%, worst {:.3}% (limit 5%)", 100.0 * mean, 100.0 * worst))
}

// ----------------------------------------------------------- 5 and 6

fn bench(n: usize, k: usize, key_bits: u32, m: usize, mode: Mode, queries: usize) -> BenchReport {
    let cfg = BenchConfig { n, m, w: 4, k, key_bits, attr_bits: 4, mode, queries, data_seed: 5000, protocol_seed: Some(5001) };
    run_bench(&cfg).expect("bench run")
}

fn scaling(base_out: &mut Option<BenchReport>) -> Outcome {
    let base = bench(64, 5, 512, 6, Mode::Serial, 2);
    let more_k = bench(64, 10, 512, 6, Mode::Serial, 2);
    let more_n = bench(128, 5, 512, 6, Mode::Serial, 2);
    let ratio = |a: f64, b: f64| a / b;
    let s1 = |r: &BenchReport| r.stage1_time.as_secs_f64();
    let b1 = |r: &BenchReport| r.stage1_bytes as f64;
    let rs = [
        ("time k", ratio(s1(&more_k), s1(&base))),
        ("bytes k", ratio(b1(&more_k), b1(&base))),
        ("time n", ratio(s1(&more_n), s1(&base))),
        ("bytes n", ratio(b1(&more_n), b1(&base))),
    ];
    *base_out = Some(base);
    let text = rs.iter().map(|(n, r)| format!("{n} x{r:.2}")).collect::<Vec<_>>().join(", ");
    check(rs.iter().all(|(_, r)| (1.6..=2.4).contains(r)), format!("ratio outside [1.6, 2.4]: {text}"))?;
    Ok(text)
}

fn offline_speedup(serial: &Option<BenchReport>) -> Outcome {
    let serial = serial.clone().unwrap_or_else(|| bench(64, 5, 512, 6, Mode::Serial, 2));
    let offline = bench(64, 5, 512, 6, Mode::Offline, 2);
    check(offline.pool_misses == 0, format!("{} pool misses", offline.pool_misses))?;
    let (s, o) = (serial.stage1_time.as_secs_f64(), offline.stage1_time.as_secs_f64());
    let gain = 1.0 - o / s;
    check(gain >= 0.20, format!("online stage 1 only {:.1}% faster ({s:.2}s vs {o:.2}s)", 100.0 * gain))?;
    Ok(format!(
        "online stage 1 {:.1}% faster ({s:.2}s serial vs {o:.2}s with pools; precompute {:.2}s, 0 misses)",
        100.0 * gain,
        offline.precompute_time.as_secs_f64()
    ))
}

// ------------------------------------------------------------------ 7

fn key_size_ratio() -> Outcome {
    let small = bench(16, 2, 512, 6, Mode::Serial, 1);
    let large = bench(16, 2, 1024, 6, Mode::Serial, 1);
    let r = large.total_time.as_secs_f64() / small.total_time.as_secs_f64();
    check(r >= 4.0, format!("K=1024 only x{r:.2} slower"))?;
    Ok(format!("per-query time K=1024 / K=512 = x{r:.2} ({:.2}s vs {:.2}s)", large.total_time.as_secs_f64(), small.total_time.as_secs_f64()))
}

// ------------------------------------------------------------------ 9

fn obliviousness() -> Outcome {
    // Comparison bit over repeated runs on the same inputs.
    let mut p: Pair = pair(512, 9000);
    let runs = 1000;
    for _ in 0..runs {
        let a = p.ranked(55, 6, &[1]);
        let b = p.ranked(58, 6, &[2]);
        p.ev.smin(&p.ch, &a, &b).map_err(|e| e.to_string())?;
    }
    let ones = p.rec.alphas.lock().unwrap().iter().filter(|&&a| a).count();
    let freq = ones as f64 / runs as f64;
    check((0.45..=0.55).contains(&freq), format!("alpha frequency {freq:.3}"))?;

    // Position of the zero C2 sees in the selection vector, fixed query and table.
    let mut rng = ChaCha20Rng::seed_from_u64(9001);
    let n = 16;
    let table = synthetic_table(n, 1, 2, 2, &mut rng).unwrap();
    let mut q = pair(512, 9002);
    let db = ppknn::ppknn::owner_encrypt_db(q.ev.encryptor(), &table, &mut rng).unwrap();
    let query = querier_encrypt_query(q.ev.encryptor(), &[1], &db.params, &mut rng).unwrap();
    let iterations = 500;
    for _ in 0..iterations {
        Stage1::run(&mut q.ev, &q.ch, &query, &db, 1).map_err(|e| e.to_string())?;
    }
    let mut counts = vec![0f64; n];
    for (id, vals) in q.rec.decrypted.lock().unwrap().iter() {
        if *id == ids::ONE_HOT {
            let zeros: Vec<usize> = vals.iter().enumerate().filter(|(_, v)| **v == 0).map(|(i, _)| i).collect();
            check(zeros.len() == 1, "selection vector without exactly one zero")?;
            counts[zeros[0]] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    check(total == iterations as f64, format!("{total} selection vectors observed"))?;
    let expected = total / n as f64;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p_value = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
    check(p_value >= 0.001, format!("zero position not uniform: chi2 {stat:.2}, p {p_value:.5}"))?;
    Ok(format!("alpha frequency {freq:.3} over {runs}; zero position chi2 {stat:.2} (df 15), p {p_value:.3} over {iterations}"))
}

#[test]
fn acceptance() {
    let mut ok = true;
    ok &= run_criterion("1", "sub-protocol oracle suite", sub_protocol_oracles);
    ok &= run_criterion("2", "worked examples", worked_examples);
    let mut e2e = None;
    ok &= run_criterion("3", "end-to-end classifier equivalence", || end_to_end(&mut e2e));
    ok &= run_criterion("4", "stage cost dominance", || stage_dominance(&e2e));
    let mut base = None;
    ok &= run_criterion("5", "scaling shape in k and n", || scaling(&mut base));
    ok &= run_criterion("6", "offline precomputation speedup", || offline_speedup(&base));
    ok &= run_criterion("7", "key-size cost ratio", key_size_ratio);
    report("criterion 8 SKIP full-scale communication check (ignored test `full_scale_communication`)");
    ok &= run_criterion("9", "obliviousness surrogates", obliviousness);
    assert!(ok, "at least one acceptance criterion failed");
}

/// Full-scale communication: n=1728, m=6, k=10, K=1024, the car table.
/// Slow (about an hour on one core); run with `--ignored`.
#[test]
#[ignore]
fn full_scale_communication() {
    let ok = run_criterion("8", "full-scale stage 1 communication", || {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/tests/data/car.csv");
        let (table, _) = load_csv(&path, &CsvOptions { schema: Schema::Auto, has_header: true }).map_err(|e| e.to_string())?;
        check((table.n(), table.m(), table.w()) == (1728, 6, 4), "unexpected table shape")?;
        let (dep, _) = deployment(table.rows().to_vec(), table.attr_bits(), 1024, 8000, false);
        let r = dep.query(&[1, 2, 0, 1, 2, 1], 10).map_err(|e| e.to_string())?;
        let mb = r.stage1.bytes as f64 / 1e6;
        let reference = 154.741;
        let ratio = mb / reference;
        check((0.5..=2.0).contains(&ratio), format!("stage 1 {mb:.3} MB is x{ratio:.2} the reference"))?;
        Ok(format!(
            "stage 1 {mb:.3} MB vs {reference} MB reference (x{ratio:.2}); stage 1 {:.0}s, l = {}",
            r.stage1.time.as_secs_f64(),
            dep.c1().params().l
        ))
    });
    assert!(ok);
}
