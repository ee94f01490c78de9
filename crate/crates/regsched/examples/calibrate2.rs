// Scratch: run the real cumulative-vs-basic pipeline at candidate settings.
use regsched::data::Dataset;
use regsched::experiment::{
    run_single, ArchitectureSpec, DatasetSpec, ExperimentConfig, GaNasSpec, GaRegSpec,
    ScheduleBlock, TrainingSpec,
};
use regsched::model::Activation;
use regsched::schedule::ScheduleMode;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let t: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1200);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let hidden: Vec<usize> = args
        .get(3)
        .map(|s| s.split('-').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![16, 8]);
    let act = match args.get(4).map(|s| s.as_str()).unwrap_or("tanh") {
        "relu" => Activation::Relu,
        "sigmoid" => Activation::Sigmoid,
        _ => Activation::Tanh,
    };
    let eval_steps: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(15);
    let gens: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(8);
    let pop: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(12);

    let config = ExperimentConfig {
        dataset: DatasetSpec {
            source: "synthetic".to_string(),
            target_column: None,
            objects: Some(10_000),
            features: Some(30),
        },
        architecture: ArchitectureSpec {
            hidden: hidden.clone(),
            activation: act,
            autoencoder_layers: 0,
        },
        training: TrainingSpec {
            iterations: t,
            learning_rate: lr,
            batch_size: 32,
            record_every: 1,
            robustness_window: 50,
        },
        schedule: ScheduleBlock {
            mode: ScheduleMode::Basic,
            static_matrix: None,
            pretrain_iterations: None,
        },
        ga_reg: GaRegSpec {
            population_size: pop,
            generations: gens,
            eval_steps,
            ..Default::default()
        },
        ga_nas: GaNasSpec::default(),
        seeds: (0..5).collect(),
        output_dir: "/tmp/calib".into(),
        dataset_seed: 0,
        compare_modes: None,
        compare_datasets: None,
    };
    println!("T={t} lr={lr} hidden={hidden:?} act={act:?} eval_steps={eval_steps} gens={gens} pop={pop}");

    let dataset = Dataset::synthesize(10_000, 30, 0).unwrap();
    let mut ratios = Vec::new();
    let mut basic_maes = Vec::new();
    let mut cumulative_maes = Vec::new();
    let mut basic_rob = Vec::new();
    let mut cum_rob = Vec::new();
    let mut basic_pv = Vec::new();
    let mut cum_pv = Vec::new();
    for seed in 0..5u64 {
        let basic = run_single(&config, &dataset, ScheduleMode::Basic, seed).unwrap();
        let cumulative = run_single(&config, &dataset, ScheduleMode::Cumulative, seed).unwrap();
        let b = basic.summary.test_mae;
        let c = cumulative.summary.test_mae;
        let lambda = cumulative.ga_reg.as_ref().unwrap().lambda_matrix.clone();
        println!(
            "  seed {seed}: basic {b:.4} cumulative {c:.4} ratio {:.3}  rob {:.3e}/{:.3e} pv {:.3e}/{:.3e}",
            c / b,
            basic.summary.robustness.unwrap_or(f64::NAN),
            cumulative.summary.robustness.unwrap_or(f64::NAN),
            basic.summary.parameter_variance,
            cumulative.summary.parameter_variance,
        );
        for (i, row) in lambda.rows().iter().enumerate() {
            println!("    layer {i}: {row:?}");
        }
        ratios.push(c / b);
        basic_maes.push(b);
        cumulative_maes.push(c);
        basic_rob.push(basic.summary.robustness.unwrap_or(f64::NAN));
        cum_rob.push(cumulative.summary.robustness.unwrap_or(f64::NAN));
        basic_pv.push(basic.summary.parameter_variance);
        cum_pv.push(cumulative.summary.parameter_variance);
    }
    println!(
        "median basic {:.4}  median cumulative {:.4}  cum/basic of medians {:.3}  median ratio {:.3}",
        median(basic_maes.clone()),
        median(cumulative_maes.clone()),
        median(cumulative_maes) / median(basic_maes),
        median(ratios)
    );
    println!(
        "median robustness basic {:.3e} cumulative {:.3e} | param var basic {:.3e} cumulative {:.3e}",
        median(basic_rob),
        median(cum_rob),
        median(basic_pv),
        median(cum_pv)
    );
}
