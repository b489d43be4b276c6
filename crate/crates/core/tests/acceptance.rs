//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use chrono::{Duration, NaiveDate};
use pricecast::config::{RunConfig, DEFAULT_MODEL_FEATURES};
use pricecast::data::{
    add_seasonal_features, forward_fill, pearson_correlation, synth_series, TimeSeriesFrame, MISSING,
};
use pricecast::forecast::{aggregate_monthly, recursive_forecast, StepPredictor};
use pricecast::metrics::{classification_metrics, confusion_from_labels, f_score, mae, rmse};
use pricecast::models::{build_ann, build_hybrid, build_rnn, ConvBlock, HybridConfig, ModelKind};
use pricecast::nn::{gradient_check, Layer, Mode, ModelGraph, NnError, Tensor};
use pricecast::pipeline::{self, Comparison, COMPARISON_CSV};
use pricecast::preprocess::{apply_minmax, chrono_split, fit_minmax, invert_minmax, make_windows, SplitSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn round_half_up_cents(x: f64) -> i64 {
    (x * 100.0 + 0.5).floor() as i64
}

fn f_consistency() -> Outcome {
    for (p, r, printed) in [(0.28, 0.96, 43), (0.30, 0.49, 37), (0.22, 0.43, 29)] {
        let f = f_score(p, r);
        ensure(
            round_half_up_cents(f) == printed,
            format!("p={p} r={r}: F={f:.4} does not round to 0.{printed}"),
        )?;
    }
    Ok("3 published (precision, recall, F) triples reproduced".into())
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let n = rng.random_range(1..=200);
        let actual: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        let predicted: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();

        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            match (actual[i], predicted[i]) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        let accuracy = (tp + tn) as f64 / n as f64;
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };

        let c = confusion_from_labels(&actual, &predicted).map_err(|e| e.to_string())?;
        ensure(
            (c.tp, c.fp, c.tn, c.fn_) == (tp, fp, tn, fn_),
            format!("case {case}: counts differ"),
        )?;
        let m = classification_metrics(&c).map_err(|e| e.to_string())?;
        ensure(
            m.accuracy == accuracy && m.precision == precision && m.recall == recall && m.f_score == f,
            format!("case {case}: metrics differ"),
        )?;

        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-300.0..300.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-300.0..300.0)).collect();
        let mut sq = 0.0;
        let mut abs = 0.0;
        for i in 0..n {
            sq += (y[i] - p[i]) * (y[i] - p[i]);
            abs += (y[i] - p[i]).abs();
        }
        let naive_rmse = (sq / n as f64).sqrt();
        let naive_mae = abs / n as f64;
        let got_rmse = rmse(&y, &p).map_err(|e| e.to_string())?;
        let got_mae = mae(&y, &p).map_err(|e| e.to_string())?;
        ensure(
            (got_rmse - naive_rmse).abs() <= 1e-12 && (got_mae - naive_mae).abs() <= 1e-12,
            format!("case {case}: rmse/mae differ from the naive loop"),
        )?;
    }
    Ok("1000 random label vectors and error vectors match brute force".into())
}

fn gradients() -> Outcome {
    const W: usize = 8;
    const F: usize = 3;
    const H: usize = 4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let single = |layer: Layer, shape: Vec<usize>| ModelGraph::new(vec![layer], shape, seed).unwrap();
        let hybrid = HybridConfig {
            window: W,
            n_features: F,
            conv_blocks: vec![ConvBlock {
                out_channels: H,
                kernel: 3,
                pool: 2,
            }],
            lstm_hidden: H,
            dense_head: vec![H, 1],
            dropout_rate: 0.2,
            horizon: 1,
        };
        let models = vec![
            single(Layer::conv1d(F, H, 3, 1, &mut rng).unwrap(), vec![W, F]),
            single(Layer::maxpool1d(2, 2).unwrap(), vec![W, F]),
            single(Layer::dense(W * F, H, &mut rng).unwrap(), vec![W * F]),
            single(Layer::Relu, vec![W, F]),
            single(Layer::dropout(0.3).unwrap(), vec![W, F]).with_mode(Mode::Training),
            single(Layer::lstm(F, H, &mut rng).unwrap(), vec![W, F]),
            single(Layer::rnn(F, H, &mut rng).unwrap(), vec![W, F]),
            single(Layer::Flatten, vec![W, F]),
            build_hybrid(&hybrid, seed).unwrap().with_mode(Mode::Training),
            build_rnn(W, F, H, 1, seed).unwrap(),
            build_ann(W, F, &[H], 1, seed).unwrap(),
        ];
        for model in &models {
            let mut in_shape = vec![2];
            in_shape.extend_from_slice(model.input_shape());
            let mut out_shape = vec![2];
            out_shape.extend(model.output_shape());
            let n_in: usize = in_shape.iter().product();
            let n_out: usize = out_shape.iter().product();
            let x = Tensor::new(in_shape, (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let y = Tensor::new(out_shape, (0..n_out).map(|_| rng.random_range(1.0..3.0)).collect()).unwrap();
            let report = gradient_check(model, &x, &y, 1e-5).map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_error);
            checked += report.entries_checked;
            ensure(
                report.max_rel_error < 1e-4,
                format!(
                    "seed {seed}, {:?}: error {:e} at {}",
                    model.layers().iter().map(Layer::kind).collect::<Vec<_>>(),
                    report.max_rel_error,
                    report.worst
                ),
            )?;
        }
    }
    Ok(format!(
        "8 layer kinds + 3 architectures x 5 seeds, {checked} entries, worst {worst:.2e}"
    ))
}

struct Runs {
    first: Comparison,
    first_csv: Vec<u8>,
    second_csv: Vec<u8>,
    seconds: f64,
}

fn compare_runs() -> Result<Runs, String> {
    let run = || -> Result<(Comparison, Vec<u8>, f64), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = RunConfig::synthetic(2106, 7);
        cfg.output_dir = dir.path().to_path_buf();
        let started = Instant::now();
        let c = pipeline::compare(&cfg).map_err(|e| e.to_string())?;
        let secs = started.elapsed().as_secs_f64();
        let csv = std::fs::read(dir.path().join(COMPARISON_CSV)).map_err(|e| e.to_string())?;
        Ok((c, csv, secs))
    };
    let (first, first_csv, seconds) = run()?;
    let (_, second_csv, _) = run()?;
    Ok(Runs {
        first,
        first_csv,
        second_csv,
        seconds,
    })
}

fn learnability(runs: &Result<Runs, String>) -> Outcome {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let c = &runs.first;
    let baseline = c.persistence_metrics.rmse;
    let rmse_of = |k: ModelKind| c.row(k).map(|r| r.metrics.rmse).ok_or("missing row");
    let (hybrid, rnn, ann) = (
        rmse_of(ModelKind::Hybrid)?,
        rmse_of(ModelKind::Rnn)?,
        rmse_of(ModelKind::Ann)?,
    );
    let detail = format!(
        "persistence {baseline:.3}, hybrid {hybrid:.3}, rnn {rnn:.3}, ann {ann:.3}, compare took {:.0}s",
        runs.seconds
    );
    ensure(
        hybrid < baseline && rnn < baseline && ann < baseline,
        format!("baseline not beaten: {detail}"),
    )?;
    ensure(hybrid <= ann, format!("hybrid worse than ann: {detail}"))?;
    ensure(runs.seconds < 300.0, format!("too slow: {detail}"))?;
    Ok(detail)
}

fn preprocessing() -> Outcome {
    let frame = add_seasonal_features(&synth_series(2106, 7)).unwrap();
    let (train, test) = chrono_split(&frame, SplitSpec { train_fraction: 0.7 }).map_err(|e| e.to_string())?;
    ensure(
        (train.len(), test.len()) == (1474, 632),
        format!("split {}/{}", train.len(), test.len()),
    )?;

    let params = fit_minmax(&frame, 0..1474).map_err(|e| e.to_string())?;
    let scaled = apply_minmax(&frame, &params).map_err(|e| e.to_string())?;
    for (j, name) in frame.feature_names().iter().enumerate() {
        let r = params.range(name).unwrap();
        if r.max == r.min {
            continue;
        }
        let back = invert_minmax(&scaled.columns()[j], &params, name).unwrap();
        let err = back
            .iter()
            .zip(&frame.columns()[j])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(err <= 1e-9, format!("{name}: roundtrip error {err:e}"))?;
    }

    let mut grid = 0;
    for n in [1usize, 5, 31, 32, 60, 200] {
        let sub = frame.slice_rows(0, n).unwrap();
        for window in [1usize, 7, 30] {
            for horizon in [1usize, 3, 7] {
                let got = make_windows(&sub, window, horizon, "rrp").map(|d| d.len()).ok();
                let want = (n >= window + horizon).then(|| n - window - horizon + 1);
                ensure(
                    got == want,
                    format!("n={n} w={window} h={horizon}: {got:?} vs {want:?}"),
                )?;
                grid += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let holed = frame
        .map_columns(|_, col| {
            Ok(col
                .iter()
                .map(|v| if rng.random_bool(0.1) { MISSING } else { *v })
                .collect())
        })
        .unwrap();
    let once = forward_fill(&holed).map_err(|e| e.to_string())?;
    let twice = forward_fill(&once).map_err(|e| e.to_string())?;
    ensure(
        once == twice && once.count_missing() == 0,
        "forward_fill not idempotent",
    )?;
    Ok(format!(
        "split 1474/632, scaler roundtrip <= 1e-9, {grid} window cases, forward_fill idempotent"
    ))
}

struct Persistence {
    target: usize,
    features: usize,
}

impl StepPredictor for Persistence {
    fn predict_next(&self, w: &Tensor) -> Result<f64, NnError> {
        Ok(w.data()[w.len() - self.features + self.target])
    }
}

fn model_frame(n: usize, seed: u64) -> (TimeSeriesFrame, pricecast::preprocess::ScalerParams) {
    let names: Vec<String> = DEFAULT_MODEL_FEATURES.iter().map(|s| s.to_string()).collect();
    let raw = add_seasonal_features(&synth_series(n, seed))
        .unwrap()
        .select(&names)
        .unwrap();
    let scaler = fit_minmax(&raw, 0..n * 7 / 10).unwrap();
    (apply_minmax(&raw, &scaler).unwrap(), scaler)
}

fn forecast_bookkeeping() -> Outcome {
    let (scaled, scaler) = model_frame(2106, 7);
    let stub = Persistence {
        target: scaled.index_of("rrp").unwrap(),
        features: scaled.n_features(),
    };
    let steps = 2191;
    let daily = recursive_forecast(&stub, &scaled, &scaler, 30, steps, "rrp").map_err(|e| e.to_string())?;
    ensure(
        daily
            .rrp_forecast
            .iter()
            .all(|v| v.to_bits() == daily.rrp_forecast[0].to_bits()),
        "persistence forecast is not constant",
    )?;

    let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    let mut six_years = daily.clone();
    six_years.dates = (0..steps).map(|i| start + Duration::days(i as i64)).collect();
    let monthly = aggregate_monthly(&six_years).map_err(|e| e.to_string())?;
    ensure(monthly.len() == 72, format!("{} monthly rows", monthly.len()))?;
    ensure(monthly.partial_month.iter().all(|p| !p), "unexpected partial month")?;

    let model = build_hybrid(
        &HybridConfig {
            window: 30,
            n_features: scaled.n_features(),
            ..HybridConfig::default()
        },
        3,
    )
    .unwrap();
    let full = recursive_forecast(&model, &scaled, &scaler, 30, 110, "rrp").map_err(|e| e.to_string())?;
    for k in [1, 10, 100] {
        let prefix = recursive_forecast(&model, &scaled, &scaler, 30, k, "rrp").map_err(|e| e.to_string())?;
        let same = prefix
            .rrp_forecast
            .iter()
            .zip(&full.rrp_forecast)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same && prefix.len() == k, format!("prefix k={k} differs"))?;
    }
    Ok("constant persistence forecast, 2191 days -> 72 months, prefixes 1/10/100 bit-identical".into())
}

fn determinism(runs: &Result<Runs, String>) -> Outcome {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    ensure(runs.first_csv == runs.second_csv, "comparison CSVs differ")?;
    let rows = String::from_utf8_lossy(&runs.first_csv).lines().count() - 1;
    ensure(rows == 3, format!("{rows} rows"))?;
    Ok(format!("two compare runs, {} identical bytes", runs.first_csv.len()))
}

fn correlation() -> Outcome {
    let frame = add_seasonal_features(&synth_series(2106, 7)).unwrap();
    let m = pearson_correlation(&frame, frame.feature_names()).map_err(|e| e.to_string())?;
    let k = m.names.len();
    for i in 0..k {
        let name = &m.names[i];
        if m.constant_columns.contains(name) {
            // zero-variance columns carry a flag and a zero diagonal instead
            let col = frame.column(name).unwrap();
            ensure(
                col.iter().all(|v| *v == col[0]),
                format!("{name} flagged constant but varies"),
            )?;
            ensure(
                m.values[i][i] == 0.0,
                format!("constant {name} has diagonal {}", m.values[i][i]),
            )?;
        } else {
            ensure(m.values[i][i] == 1.0, format!("diagonal {name} = {}", m.values[i][i]))?;
        }
        for j in 0..k {
            ensure(m.values[i][j] == m.values[j][i], "not symmetric")?;
            ensure((-1.0..=1.0).contains(&m.values[i][j]), "entry out of range")?;
        }
    }
    let dr = m.get("demand", "rrp").unwrap();
    ensure(dr > 0.3, format!("demand/rrp {dr}"))?;

    let d: Vec<NaiveDate> = (0..3)
        .map(|i| NaiveDate::from_ymd_opt(2020, 1, 1 + i).unwrap())
        .collect();
    let tiny = TimeSeriesFrame::new(
        d,
        vec!["x".into(), "y".into()],
        vec![vec![1.0, 2.0, 3.0], vec![1.0, 3.0, 2.0]],
    )
    .unwrap();
    let r = pearson_correlation(&tiny, tiny.feature_names())
        .unwrap()
        .get("x", "y")
        .unwrap();
    ensure((r - 0.5).abs() < 1e-12, format!("hand example r = {r}"))?;
    Ok(format!(
        "{k}x{k} matrix valid ({} constant column flagged), demand/rrp {dr:.3}, hand example r = 0.5",
        m.constant_columns.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("F-score consistency with published figures", Box::new(f_consistency)),
        ("metric oracle equivalence", Box::new(metric_oracle)),
        ("gradient correctness", Box::new(gradients)),
        ("pipeline learnability", Box::new(|| learnability(shared()))),
        ("preprocessing invariants", Box::new(preprocessing)),
        ("forecast bookkeeping", Box::new(forecast_bookkeeping)),
        ("compare determinism", Box::new(|| determinism(shared()))),
        ("correlation matrix", Box::new(correlation)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} [{secs:.1}s] {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} [{secs:.1}s] {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn shared() -> &'static Result<Runs, String> {
    static RUNS: std::sync::OnceLock<Result<Runs, String>> = std::sync::OnceLock::new();
    RUNS.get_or_init(compare_runs)
}
