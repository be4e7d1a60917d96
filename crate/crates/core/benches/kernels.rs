//! Sequential vs parallel execution of the binarized kernels and of batch
//! evaluation. Without the `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use binlstm::bitpack::{mlb_matvec_with, xnor_popcount_dot, GammaTable};
use binlstm::mlb::{mlb_quantize, ScalePolicy};
use binlstm::task::predict_all;
use binlstm::{
    BinaryPlane, Execution, LstmModel, QuantConfig, QuantizedMatrix, QuantizedModel, SeededRng, SignMeanTask,
};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn xnor_dot(c: &mut Criterion) {
    let mut group = c.benchmark_group("xnor_popcount_dot");
    let mut rng = SeededRng::new(1);
    for n in [64, 132, 1024, 8192] {
        let a = BinaryPlane::pack_signs(&rng.signs(n)).unwrap();
        let b = BinaryPlane::pack_signs(&rng.signs(n)).unwrap();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| xnor_popcount_dot(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn matvec(c: &mut Criterion) {
    let mut group = c.benchmark_group("mlb_matvec");
    let mut rng = SeededRng::new(2);
    for (rows, cols, levels) in [(100, 132, 3), (400, 132, 3), (1024, 1024, 2)] {
        let m = rng.uniform_matrix(rows, cols, -1.0, 1.0).unwrap();
        let x = rng.uniform(-1.0, 1.0, cols).unwrap();
        let mq = QuantizedMatrix::quantize(&m, &ScalePolicy::Fitted { levels }).unwrap();
        let xq = mlb_quantize(&x, &ScalePolicy::Fitted { levels }).unwrap();
        let gamma = GammaTable::from_scales(mq.scales(), xq.scales());
        let label = format!("{rows}x{cols}@{levels}");
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, &label), &exec, |bench, exec| {
                bench.iter(|| mlb_matvec_with(&mq, black_box(&xq), &gamma, *exec).unwrap())
            });
        }
    }
    group.finish();
}

fn evaluate(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict_all");
    group.sample_size(10);
    let data = SignMeanTask {
        samples: 64,
        ..SignMeanTask::with_seed(3)
    }
    .generate()
    .unwrap();
    let fp = LstmModel::random(8, 32, 2, 0.5, &mut SeededRng::new(4)).unwrap();
    let q = QuantizedModel::quantize(&fp, &QuantConfig::mubinn2(3, 3)).unwrap();
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("fp", name), |bench| {
            bench.iter(|| predict_all(&fp, &data, exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("mubinn2_3x3", name), |bench| {
            bench.iter(|| predict_all(&q, &data, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, xnor_dot, matvec, evaluate);
criterion_main!(benches);
