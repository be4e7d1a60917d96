use std::time::Instant;

use anyhow::{bail, ensure, Context as _, Result};
use serde_json::json;

use binlstm::delay::{estimate_delay, ops_count, CellDims, DelayReference, GateDelayParams, Precision};
use binlstm::io::model::{encode_model, model_file_size};
use binlstm::task::{build_integrator_model, predict_all, LARGE_SHAPE};
use binlstm::{
    evaluate, load_model, save_model, BiasPolicy, Dataset, Execution, LstmModel, Model, QuantConfig, QuantMode,
    QuantizedModel, RealVector, SeededRng, SignMeanTask,
};

use crate::output::{Context, Report};
use crate::{BenchArgs, BiasArg, DelayArgs, EvalArgs, GenDataArgs, InferArgs, MakeToyArgs, QuantizeArgs};

fn quant_config(ctx: &Context, mode: &str, act: usize, weight: usize, pow2: bool, strict: bool) -> Result<QuantConfig> {
    let mode: QuantMode = mode.parse()?;
    let mut cfg = QuantConfig::for_mode(mode, act, weight);
    if mode == QuantMode::BLstm {
        ensure!(
            act == 1 && weight == 1,
            "b_lstm is single-level by definition (got --act-levels {act} --weight-levels {weight})"
        );
    }
    if mode == QuantMode::Mubinn1 && !pow2 {
        if strict {
            bail!("mubinn1 requires power-of-two scales; pass --pow2");
        }
        ctx.warn("mubinn1 requires power-of-two scales; enabling --pow2");
    }
    if pow2 {
        cfg.pow2_scales = true;
    }
    Ok(cfg)
}

fn load_fp(path: &std::path::Path) -> Result<LstmModel> {
    match load_model(path)? {
        Model::FullPrecision(m) => Ok(m),
        Model::Quantized(q) => bail!(
            "{}: expected a full-precision model, found {}",
            path.display(),
            q.config().mode.name()
        ),
    }
}

fn load_dataset(path: &std::path::Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn quantize(ctx: &Context, a: QuantizeArgs) -> Result<Report> {
    let mut cfg = quant_config(ctx, &a.mode, a.act_levels, a.weight_levels, a.pow2, a.strict)?;
    cfg.binarize_recurrent = !a.no_binarize_recurrent;
    cfg.bias_policy = match a.bias {
        BiasArg::Fp => BiasPolicy::FullPrecision,
        BiasArg::Mlb => BiasPolicy::MlbStored,
    };
    cfg.validate()?;

    let fp = load_fp(&a.input)?;
    let q = QuantizedModel::quantize(&fp, &cfg)?;
    let errors = q.reconstruction_errors(&fp.weights)?;
    save_model(&Model::Quantized(q), &a.out)?;

    let mut r = Report::default();
    r.kv("mode", cfg.mode.name());
    r.kv("act_levels", cfg.act_levels);
    r.kv("weight_levels", cfg.weight_levels);
    r.kv("out", a.out.display().to_string());
    r.detail("tensor l2_error");
    for (name, e) in &errors {
        r.detail(format!("{name} {e:.6e}"));
    }
    r.field(
        "l2_errors",
        errors
            .iter()
            .map(|(n, e)| (n.clone(), json!(e)))
            .collect::<serde_json::Map<_, _>>(),
    );
    Ok(r)
}

pub fn infer(_: &Context, a: InferArgs) -> Result<Report> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let labels = predict_all(&model, &data, Execution::default())?;
    let mut r = Report::default();
    for l in &labels {
        r.line(l.to_string());
    }
    r.field("labels", labels);
    Ok(r)
}

pub fn eval(_: &Context, a: EvalArgs) -> Result<Report> {
    let model = load_model(&a.model)?;
    let reference = a.reference.as_deref().map(load_fp).transpose()?;
    let data = load_dataset(&a.data)?;
    let acc = evaluate(&model, &data)?;
    let mut r = Report::default();
    r.kv("samples", data.len());
    r.kv("accuracy", acc);
    if let Some(fp) = reference {
        let ref_acc = evaluate(&fp, &data)?;
        r.kv("ref_accuracy", ref_acc);
        r.kv("gap", (ref_acc - acc).abs());
        if let Model::Quantized(q) = &model {
            ensure!(!data.is_empty(), "dataset has no samples");
            let (mut abs, mut rel) = (0.0, 0.0);
            for i in 0..data.len() {
                let e = q.preactivation_error(&fp.weights, &data.sequence(i))?;
                abs += e.mean_abs;
                rel += e.relative;
            }
            r.kv("preact_mean_abs_error", abs / data.len() as f64);
            r.kv("preact_relative_error", rel / data.len() as f64);
        }
    }
    Ok(r)
}

fn model_precision(m: &Model) -> (Precision, Precision) {
    match m {
        Model::FullPrecision(_) => (Precision::Full, Precision::Full),
        Model::Quantized(q) => (
            Precision::Levels(q.config().act_levels),
            Precision::Levels(q.config().weight_levels),
        ),
    }
}

pub fn bench(ctx: &Context, a: BenchArgs) -> Result<Report> {
    let (timesteps, features, hidden) = if a.large_shape {
        LARGE_SHAPE
    } else {
        (a.timesteps, a.features, a.hidden)
    };
    ensure!(
        timesteps > 0 && features > 0 && hidden > 0,
        "timesteps, features and hidden must be positive"
    );
    ensure!(a.repeats > 0, "--repeats must be positive");

    let model = match &a.model {
        Some(p) => {
            let m = load_model(p)?;
            ensure!(
                m.input_size() == features,
                "{}: model input size {} does not match --features {features}",
                p.display(),
                m.input_size()
            );
            m
        }
        None => {
            let cfg = quant_config(ctx, &a.mode, a.act_levels, a.weight_levels, false, false)?;
            let fp = LstmModel::random(features, hidden, 2, 0.5, &mut SeededRng::new(ctx.seed))?;
            Model::Quantized(QuantizedModel::quantize(&fp, &cfg)?)
        }
    };

    let mut rng = SeededRng::new(ctx.seed ^ 0x5eed);
    let seqs: Vec<Vec<RealVector>> = (0..a.repeats)
        .map(|_| (0..timesteps).map(|_| rng.uniform(-1.0, 1.0, features)).collect())
        .collect::<binlstm::Result<_>>()?;
    let start = Instant::now();
    for s in &seqs {
        model.predict(s)?;
    }
    let per_seq = start.elapsed().as_secs_f64() / a.repeats as f64;

    let (act, weight) = model_precision(&model);
    let binarized_pointwise = matches!(&model, Model::Quantized(q) if q.config().mode == QuantMode::Mubinn2);
    let dims = CellDims {
        input: model.input_size(),
        hidden: model.hidden_size(),
    };
    let ops = ops_count(act, weight, dims, binarized_pointwise);
    let size = encode_model(&model).len();
    let fp_size = model_file_size(model.input_size(), model.hidden_size(), model.num_classes(), None);

    let mut r = Report::default();
    r.kv("model", model.mode_name());
    r.kv(
        "shape",
        format!("T={timesteps} F={features} hidden={}", model.hidden_size()),
    );
    r.kv("seconds_per_sequence", per_seq);
    r.kv("seconds_per_step", per_seq / timesteps as f64);
    r.kv("ops_binary_dots", ops.binary_dots);
    r.kv("ops_popcount_bits", ops.popcount_bits);
    r.kv("ops_pointwise_xnors", ops.pointwise_xnors);
    r.kv("ops_scale_mults", ops.scale_mults);
    r.kv("ops_fp_matmul_mults", ops.fp_matmul_mults);
    r.kv("ops_fp_pointwise_mults", ops.fp_pointwise_mults);
    r.kv("file_bytes", size);
    r.kv("fp_file_bytes", fp_size);
    r.kv("size_ratio", fp_size as f64 / size as f64);
    Ok(r)
}

pub fn delay(_: &Context, a: DelayArgs) -> Result<Report> {
    let levels = match (&a.act_levels, &a.weight_levels) {
        (Some(x), Some(w)) => Some((x.parse::<Precision>()?, w.parse::<Precision>()?)),
        (None, None) => None,
        _ => bail!("--act-levels and --weight-levels go together"),
    };
    ensure!(
        levels.is_some() || a.table,
        "nothing to do: pass --act-levels/--weight-levels or --table"
    );
    let params = match &a.calib {
        Some(p) => GateDelayParams::load_calibration(p)?,
        None => GateDelayParams::default(),
    };
    let reference = DelayReference::bundled();
    let mut r = Report::default();

    if let Some((act, weight)) = levels {
        let d = estimate_delay(act, weight, &params)?;
        let fp = estimate_delay(Precision::Full, Precision::Full, &params)?;
        r.kv("act", act.to_string());
        r.kv("weight", weight.to_string());
        r.kv("model_delay", d);
        r.kv("model_speedup", fp / d);
        if let (Ok(t), Ok(s)) = (reference.get(act, weight), reference.speedup(act, weight)) {
            r.kv("table_delay", t);
            r.kv("table_speedup", s);
        }
        r.detail("note: model delays are logic-depth estimates in opaque units; compare them by order, not value");
    }

    if a.table {
        r.line("act weight delay speedup speedup_vs_fp_weights");
        let mut rows = Vec::new();
        for act in DelayReference::AXIS {
            for weight in DelayReference::AXIS {
                let d = reference.get(act, weight)?;
                let s = reference.speedup(act, weight)?;
                let sw = reference.speedup_vs_fp_weights(act, weight)?;
                r.line(format!("{act} {weight} {d:.3} {s:.2} {sw:.2}"));
                rows.push(json!({
                    "act": act.to_string(),
                    "weight": weight.to_string(),
                    "delay": d,
                    "speedup": s,
                    "speedup_vs_fp_weights": sw,
                }));
            }
        }
        r.field("table", rows);
    }
    Ok(r)
}

pub fn gen_data(ctx: &Context, a: GenDataArgs) -> Result<Report> {
    let base = if a.large_shape {
        SignMeanTask::large_shape(ctx.seed)
    } else {
        SignMeanTask {
            timesteps: a.timesteps,
            features: a.features,
            ..SignMeanTask::with_seed(ctx.seed)
        }
    };
    let task = SignMeanTask {
        samples: a.samples,
        noise: a.noise,
        margin: a.margin,
        ..base
    };
    task.validate()?;
    let data = task.generate()?;
    data.save(&a.out)?;
    let mut r = Report::default();
    r.kv("samples", data.len());
    r.kv("timesteps", data.timesteps());
    r.kv("features", data.features());
    r.kv("out", a.out.display().to_string());
    Ok(r)
}

pub fn make_toy(ctx: &Context, a: MakeToyArgs) -> Result<Report> {
    ensure!(a.features > 0 && a.hidden > 0, "features and hidden must be positive");
    let model = if a.random {
        ensure!(a.classes > 0, "classes must be positive");
        LstmModel::random(a.features, a.hidden, a.classes, a.scale, &mut SeededRng::new(ctx.seed))?
    } else {
        build_integrator_model(a.features, a.hidden)?
    };
    save_model(&Model::FullPrecision(model), &a.out)?;
    let mut r = Report::default();
    r.kv("kind", if a.random { "random" } else { "integrator" });
    r.kv("features", a.features);
    r.kv("hidden", a.hidden);
    r.kv("out", a.out.display().to_string());
    Ok(r)
}
