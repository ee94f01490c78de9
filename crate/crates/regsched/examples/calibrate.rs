// Scratch sweep harness for picking the synthetic-experiment settings.
use regsched::data::Dataset;
use regsched::model::{Activation, LayeredModel, StructureMask};
use regsched::regularizers::{LambdaMatrix, RegKind};
use regsched::schedule::{ScheduleMode, ScheduleSpec};
use regsched::trainer::{TrainOptions, TrainingLoop};

fn train_static(
    data: &Dataset,
    hidden: &[usize],
    act: Activation,
    opts: TrainOptions,
    seed: u64,
    rows: Option<&[(RegKind, f64)]>,
) -> (f64, f64, f64) {
    let k = hidden.len() + 1;
    let model = LayeredModel::random(data.n_features(), hidden, act, 0, seed + 1000).unwrap();
    let mask = StructureMask::full(&model);
    let mut training = TrainingLoop::new(model, mask, data, opts, seed).unwrap();
    let spec = match rows {
        None => ScheduleSpec::new(ScheduleMode::Basic, opts.iterations, k).unwrap(),
        Some(entries) => {
            let mut spec = ScheduleSpec::new(ScheduleMode::Static, opts.iterations, k).unwrap();
            let mut m = LambdaMatrix::zeros(k);
            for layer in 0..k {
                for (kind, v) in entries {
                    m.set(layer, kind.index(), *v);
                }
            }
            spec.static_matrix = Some(m);
            spec
        }
    };
    match training.run_schedule(&spec) {
        Ok(()) => {}
        Err(e) => {
            return (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        }
    }
    let test = training.test_mae().unwrap();
    let last = training.records().last().unwrap().clone();
    (test, last.robustness.unwrap_or(f64::NAN), last.parameter_variance)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let t: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1200);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let hidden: Vec<usize> = args
        .get(3)
        .map(|s| s.split('-').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![16, 8]);

    let act = match args.get(4).map(|s| s.as_str()).unwrap_or("relu") {
        "tanh" => Activation::Tanh,
        "sigmoid" => Activation::Sigmoid,
        _ => Activation::Relu,
    };
    let data = Dataset::synthesize(10_000, 30, 0).unwrap();
    let opts = TrainOptions {
        iterations: t,
        learning_rate: lr,
        batch_size: args.get(5).map(|s| s.parse().unwrap()).unwrap_or(32),
        record_every: 1,
        robustness_window: 50,
    };
    println!("T={t} lr={lr} hidden={hidden:?} act={:?}", act);
    let settings: Vec<(&str, Option<Vec<(RegKind, f64)>>)> = vec![
        ("basic", None),
        ("ridge 0.1", Some(vec![(RegKind::Ridge, 0.1)])),
        ("ridge 0.2", Some(vec![(RegKind::Ridge, 0.2)])),
        ("ridge 0.4", Some(vec![(RegKind::Ridge, 0.4)])),
        ("ridge 0.7", Some(vec![(RegKind::Ridge, 0.7)])),
        ("lasso 0.1", Some(vec![(RegKind::Lasso, 0.1)])),
        ("lasso 0.3", Some(vec![(RegKind::Lasso, 0.3)])),
        ("r.2+l.2", Some(vec![(RegKind::Ridge, 0.2), (RegKind::Lasso, 0.2)])),
        ("r.4+l.2", Some(vec![(RegKind::Ridge, 0.4), (RegKind::Lasso, 0.2)])),
        ("r.2+l.2+hf.2+ld.2", Some(vec![(RegKind::Ridge, 0.2), (RegKind::Lasso, 0.2), (RegKind::HighFreq, 0.2), (RegKind::LocalDiff, 0.2)])),
        ("all 0.3", Some(vec![(RegKind::Ridge, 0.3), (RegKind::Lasso, 0.3), (RegKind::HighFreq, 0.3), (RegKind::LocalDiff, 0.3), (RegKind::Orthogonal, 0.3)])),
    ];
    for (label, rows) in &settings {
        let mut maes = Vec::new();
        let mut robusts = Vec::new();
        let mut variances = Vec::new();
        for seed in 0..5u64 {
            let (mae, rob, var) = train_static(&data, &hidden, act, opts, seed, rows.as_deref());
            maes.push(mae);
            robusts.push(rob);
            variances.push(var);
        }
        println!(
            "{label:>14}: median test MAE {:.4}  (all {:?})  robustness {:.4e}  param var {:.4e}",
            median(maes.clone()),
            maes.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>(),
            median(robusts),
            median(variances)
        );
    }
}
