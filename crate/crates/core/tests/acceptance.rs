//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed. Built without the libtest harness so the
//! lines are always shown.

use std::time::{Duration, Instant};

use binlstm::bitpack::{mlb_dot, mlb_matvec, mlb_pointwise_mul, xnor_popcount_dot};
use binlstm::delay::{estimate_delay, table_speedup, DelayReference, GateDelayParams, Precision};
use binlstm::io::model::{decode_model, encode_model, model_file_size};
use binlstm::lut::{ActivationKind, PwlTable};
use binlstm::mlb::{mlb_quantize, ScalePolicy, SCALE_FLOOR};
use binlstm::numeric::matvec;
use binlstm::{
    build_integrator_model, evaluate, evaluate_with, load_model, save_model, BinaryPlane, Execution, LstmModel, Model,
    QuantConfig, QuantizedMatrix, QuantizedModel, RealVector, SeededRng, SignMeanTask,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn timed<F: FnOnce() -> Outcome>(limit: Duration, f: F) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{}; {:.3}s (limit {}s)", o.detail, took.as_secs_f64(), limit.as_secs());
    o.pass &= took < limit;
    o
}

fn naive_int_dot(a: &[f64], b: &[f64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (*x as i64) * (*y as i64)).sum()
}

fn kernel_exactness() -> Outcome {
    timed(Duration::from_secs(2), || {
        let mut rng = SeededRng::new(1);
        let mut checked = 0;
        let mut mismatches = 0;
        for n in 1..=129 {
            for _ in 0..100 {
                let a = rng.signs(n);
                let b = rng.signs(n);
                let pa = BinaryPlane::pack_signs(&a).unwrap();
                let pb = BinaryPlane::pack_signs(&b).unwrap();
                if xnor_popcount_dot(&pa, &pb).unwrap() != naive_int_dot(&a, &b) {
                    mismatches += 1;
                }
                checked += 1;
            }
        }
        outcome(mismatches == 0, format!("{checked} pairs, {mismatches} mismatches"))
    })
}

/// `|got - want| <= tol * scale`, with `scale` the sum of absolute terms so
/// cancellation near zero does not inflate the relative error.
fn rel_err(got: f64, want: f64, scale: f64) -> f64 {
    (got - want).abs() / scale.max(f64::MIN_POSITIVE)
}

fn mlb_oracle_equivalence() -> Outcome {
    timed(Duration::from_secs(10), || {
        let mut rng = SeededRng::new(2);
        let mut worst: f64 = 0.0;
        let cases = 1000;
        for case in 0..cases {
            let a_levels = 1 + case % 4;
            let w_levels = 1 + (case / 4) % 4;
            let n = 1 + (rng.next_f64() * 150.0) as usize;
            let x = rng.uniform(-2.0, 2.0, n).unwrap();
            let w = rng.uniform(-1.0, 1.0, n).unwrap();
            let xq = mlb_quantize(&x, &ScalePolicy::Fitted { levels: a_levels }).unwrap();
            let wq = mlb_quantize(&w, &ScalePolicy::Fitted { levels: w_levels }).unwrap();
            let (xr, wr) = (xq.reconstruct(), wq.reconstruct());

            let want: f64 = xr.iter().zip(wr.iter()).map(|(p, q)| p * q).sum();
            let scale: f64 = xr.iter().zip(wr.iter()).map(|(p, q)| (p * q).abs()).sum();
            worst = worst.max(rel_err(mlb_dot(&xq, &wq).unwrap(), want, scale));

            let prod = mlb_pointwise_mul(&xq, &wq).unwrap();
            for k in 0..n {
                let want = xr[k] * wr[k];
                let scale: f64 = xq.scales().iter().sum::<f64>() * wq.scales().iter().sum::<f64>();
                worst = worst.max(rel_err(prod[k], want, scale));
            }

            let rows = 1 + case % 7;
            let m = rng.uniform_matrix(rows, n, -1.0, 1.0).unwrap();
            let mq = QuantizedMatrix::quantize(&m, &ScalePolicy::Fitted { levels: w_levels }).unwrap();
            let mr = mq.reconstruct();
            let got = mlb_matvec(&mq, &xq).unwrap();
            let want = matvec(&mr, &xr).unwrap();
            for r in 0..rows {
                let scale: f64 = mr.row(r).iter().zip(xr.iter()).map(|(p, q)| (p * q).abs()).sum();
                worst = worst.max(rel_err(got[r], want[r], scale));
            }
        }
        outcome(
            worst <= 1e-9,
            format!("{cases} cases over (A,W) in 1..=4 x 1..=4, worst relative error {worst:.2e} (tol 1e-9)"),
        )
    })
}

fn residual_norm(x: &RealVector, levels: usize) -> f64 {
    let t = mlb_quantize(x, &ScalePolicy::Fitted { levels }).unwrap();
    let r = t.reconstruct();
    x.iter()
        .zip(r.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn algorithm_fidelity() -> Outcome {
    let t = mlb_quantize(&[0.9, -0.3], &ScalePolicy::Fitted { levels: 2 }).unwrap();
    let s = t.scales();
    let planes: Vec<(bool, bool)> = t.levels().iter().map(|p| (p.get(0), p.get(1))).collect();
    let r = t.reconstruct();
    let trace_ok = (s[0] - 0.6).abs() < 1e-15
        && (s[1] - 0.3).abs() < 1e-15
        && planes == [(true, false), (true, true)]
        && (r[0] - 0.9).abs() < 1e-15
        && (r[1] + 0.3).abs() < 1e-15;

    let mut rng = SeededRng::new(3);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = 1 + (rng.next_f64() * 64.0) as usize;
        let x = rng.uniform(-3.0, 3.0, n).unwrap();
        // Once the residual is exhausted to rounding noise, every further
        // level carries the scale floor and may move each element by it,
        // plus rounding at the magnitude of x.
        let noise = 1e-12 * x.norm_l2();
        let drift = SCALE_FLOOR * (n as f64).sqrt() + 1e-15 * x.norm_l2();
        let mut prev = x.norm_l2();
        for levels in 1..=6 {
            let cur = residual_norm(&x, levels);
            let ok = if prev > noise { cur < prev } else { cur <= prev + drift };
            if !ok {
                violations += 1;
            }
            prev = cur;
        }
    }
    outcome(
        trace_ok && violations == 0,
        format!(
            "trace scales {s:?} planes {planes:?}; 1000 vectors x 6 levels, {violations} residual increases beyond the scale floor"
        ),
    )
}

fn lut_budget() -> Outcome {
    let sig = PwlTable::default_for(ActivationKind::Sigmoid);
    let tanh = PwlTable::default_for(ActivationKind::Tanh);
    let samples = 100_000;
    let mut err_sig: f64 = 0.0;
    let mut err_tanh: f64 = 0.0;
    let mut sym: f64 = 0.0;
    for i in 0..samples {
        // twice the tabulated domain, to cover saturation
        let u = -1.0 + 2.0 * i as f64 / (samples - 1) as f64;
        let vs = 16.0 * u;
        let vt = 8.0 * u;
        err_sig = err_sig.max((sig.eval(vs) - ActivationKind::Sigmoid.exact(vs)).abs());
        err_tanh = err_tanh.max((tanh.eval(vt) - vt.tanh()).abs());
        sym = sym.max((sig.eval(-vs) - (1.0 - sig.eval(vs))).abs());
        sym = sym.max((tanh.eval(-vt) + tanh.eval(vt)).abs());
    }
    outcome(
        err_sig <= 1e-3 && err_tanh <= 1e-3 && sym <= 1e-12,
        format!("max error sigmoid {err_sig:.3e}, tanh {err_tanh:.3e}; symmetry {sym:.1e}"),
    )
}

fn accuracy_table(task: impl Fn(u64) -> SignMeanTask, seeds: u64) -> (Vec<f64>, [Vec<f64>; 3]) {
    let model = build_integrator_model(8, 4).unwrap();
    let quant: Vec<QuantizedModel> = (1..=3)
        .map(|l| QuantizedModel::quantize(&model, &QuantConfig::mubinn2(l, l)).unwrap())
        .collect();
    let mut fp = Vec::new();
    let mut q: [Vec<f64>; 3] = Default::default();
    for seed in 0..seeds {
        let data = task(seed).generate().unwrap();
        fp.push(evaluate(&model, &data).unwrap());
        for (l, m) in quant.iter().enumerate() {
            q[l].push(evaluate(m, &data).unwrap());
        }
    }
    (fp, q)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn accuracy_retention() -> Outcome {
    timed(Duration::from_secs(30), || {
        let (fp, q) = accuracy_table(SignMeanTask::with_seed, 5);
        let ref_ok = fp.iter().all(|a| *a >= 0.97);
        let gap = fp.iter().zip(&q[2]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let m: Vec<f64> = q.iter().map(|v| mean(v)).collect();
        let trend_ok = m[0] <= m[1] && m[1] <= m[2];
        outcome(
            ref_ok && gap <= 0.03 && trend_ok,
            format!(
                "fp acc min {:.4}; max |fp - (3,3)| {gap:.4}; mean (1,1) {:.4} (2,2) {:.4} (3,3) {:.4}",
                fp.iter().cloned().fold(1.0, f64::min),
                m[0],
                m[1],
                m[2]
            ),
        )
    })
}

fn speedup_and_ordering() -> Outcome {
    let table = DelayReference::bundled();
    let three = Precision::Levels(3);
    let speedup = table_speedup(&table, three, three).unwrap();
    let params = GateDelayParams::default();
    let grid: Vec<(Precision, Precision)> = (1..=5)
        .flat_map(|a| (1..=5).map(move |w| (Precision::Levels(a), Precision::Levels(w))))
        .collect();
    let mut strict_pairs = 0;
    let mut violations = 0;
    for &(a1, w1) in &grid {
        for &(a2, w2) in &grid {
            let (t1, t2) = (table.get(a1, w1).unwrap(), table.get(a2, w2).unwrap());
            if t1 < t2 {
                strict_pairs += 1;
                let e1 = estimate_delay(a1, w1, &params).unwrap();
                let e2 = estimate_delay(a2, w2, &params).unwrap();
                if e1 >= e2 {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        (46.0..=48.0).contains(&speedup) && violations == 0,
        format!("table FP/(3,3) = {speedup:.3}; estimator breaks {violations} of {strict_pairs} strict table pairs"),
    )
}

fn large_shape_smoke() -> Outcome {
    let (steps, input, hidden) = (1300, 32, 100);
    let mut rng = SeededRng::new(7);
    let fp = LstmModel::random(input, hidden, 2, 0.2, &mut rng).unwrap();
    let seq: Vec<RealVector> = (0..steps).map(|_| rng.uniform(-1.0, 1.0, input).unwrap()).collect();
    let q = QuantizedModel::quantize(&fp, &QuantConfig::mubinn2(3, 3)).unwrap();
    let start = Instant::now();
    let run = q.predict(&seq);
    let took = start.elapsed();

    let fp_bytes = encode_model(&Model::FullPrecision(fp.clone())).len();
    let q11 = QuantizedModel::quantize(&fp, &QuantConfig::mubinn2(1, 1)).unwrap();
    let q_bytes = encode_model(&Model::Quantized(q11)).len();
    let sizes_exact =
        fp_bytes == model_file_size(input, hidden, 2, None) && q_bytes == model_file_size(input, hidden, 2, Some(1));
    let ratio = fp_bytes as f64 / q_bytes as f64;
    outcome(
        run.is_ok() && took < Duration::from_secs(5) && sizes_exact && ratio >= 8.0,
        format!(
            "(3,3) forward T={steps} in {:.3}s (limit 5s); fp file {fp_bytes} B, (1,1) file {q_bytes} B, ratio {ratio:.2}; sizes match layout: {sizes_exact}",
            took.as_secs_f64()
        ),
    )
}

fn build_models(seed: u64) -> Vec<Model> {
    let mut rng = SeededRng::new(seed);
    let fp = LstmModel::random(8, 6, 3, 0.5, &mut rng).unwrap();
    let mut models = vec![Model::FullPrecision(fp.clone())];
    for cfg in [
        QuantConfig::b_lstm(),
        QuantConfig::mubinn1(2, 3),
        QuantConfig::mubinn2(3, 3),
    ] {
        models.push(Model::Quantized(QuantizedModel::quantize(&fp, &cfg).unwrap()));
    }
    models
}

fn logits_bits(m: &Model, data: &binlstm::Dataset, exec: Execution) -> Vec<u64> {
    let rows: Vec<Vec<u64>> = exec.map_range(data.len(), |i| {
        m.predict(&data.sequence(i))
            .unwrap()
            .0
            .iter()
            .map(|v| v.to_bits())
            .collect()
    });
    rows.concat()
}

fn determinism_and_round_trip() -> Outcome {
    let a = build_models(11);
    let b = build_models(11);
    let bytes_a: Vec<Vec<u8>> = a.iter().map(encode_model).collect();
    let bytes_b: Vec<Vec<u8>> = b.iter().map(encode_model).collect();
    let same_files = bytes_a == bytes_b;

    let data = SignMeanTask {
        features: 8,
        timesteps: 12,
        samples: 64,
        ..SignMeanTask::with_seed(4)
    }
    .generate()
    .unwrap();
    let mut same_outputs = true;
    for m in &a {
        let seq = logits_bits(m, &data, Execution::Sequential);
        same_outputs &= seq == logits_bits(m, &data, Execution::Parallel);
        #[cfg(feature = "parallel")]
        for threads in [1, 4] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            same_outputs &= pool.install(|| logits_bits(m, &data, Execution::Parallel)) == seq;
        }
    }
    let acc_seq = evaluate_with(&build_integrator_model(8, 4).unwrap(), &data, Execution::Sequential).unwrap();
    let acc_par = evaluate_with(&build_integrator_model(8, 4).unwrap(), &data, Execution::Parallel).unwrap();
    same_outputs &= acc_seq == acc_par;

    let dir = tempfile::tempdir().unwrap();
    let mut round_trips = true;
    for (i, m) in a.iter().enumerate() {
        let p1 = dir.path().join(format!("m{i}.mubn"));
        let p2 = dir.path().join(format!("m{i}_again.mubn"));
        save_model(m, &p1).unwrap();
        let loaded = load_model(&p1).unwrap();
        save_model(&loaded, &p2).unwrap();
        round_trips &= std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();
        round_trips &= decode_model(&bytes_a[i]).unwrap() == *m;
    }
    outcome(
        same_files && same_outputs && round_trips,
        format!(
            "{} models: identical files {same_files}; identical outputs across runs and workers {same_outputs}; save-load-save identical {round_trips}",
            a.len()
        ),
    )
}

/// The default task is separable enough that every configuration scores
/// 1.0. This reports the level trend on a narrower margin; it is not gated.
fn hard_variant_report() -> String {
    let (fp, q) = accuracy_table(
        |seed| SignMeanTask {
            margin: 0.03,
            ..SignMeanTask::with_seed(seed)
        },
        5,
    );
    format!(
        "margin 0.03: mean fp {:.4}, (1,1) {:.4}, (2,2) {:.4}, (3,3) {:.4}",
        mean(&fp),
        mean(&q[0]),
        mean(&q[1]),
        mean(&q[2])
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("kernel exactness", kernel_exactness),
        ("multi-level oracle equivalence", mlb_oracle_equivalence),
        ("binarization fidelity", algorithm_fidelity),
        ("activation table error budget", lut_budget),
        ("accuracy retention", accuracy_retention),
        ("delay table speedup and ordering", speedup_and_ordering),
        ("large-shape smoke test", large_shape_smoke),
        ("determinism and round trip", determinism_and_round_trip),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {tag}: {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    println!("info: {}", hard_variant_report());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
