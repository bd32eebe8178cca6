use hope_core::head::HopeConfig;
use hope_core::synth::{generate, DatasetSpec};
use hope_core::train::{train, HeadKind, TrainSettings, Variant};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let delta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
    let seeds: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3);

    let mut spec = DatasetSpec::default_benchmark();
    spec.noise_sigma = noise;
    let ds = generate::<f32>(&spec).unwrap();
    println!("cluster sizes: {:?}", ds.cluster_sizes);

    let settings = TrainSettings {
        epochs,
        ..TrainSettings::default()
    };

    for variant in Variant::ALL {
        let t0 = Instant::now();
        let mut accs = Vec::new();
        for seed in 1..=seeds {
            let mut cfg = HopeConfig::with_dims(spec.views, spec.dim, spec.num_classes);
            cfg.delta = delta;
            cfg.seed = seed;
            let out = train(HeadKind::Hope, variant, &ds, &cfg, &settings).unwrap();
            accs.push(out.report.summary.final_val.accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!(
            "{:24} mean val acc {:.4} {:?} ({:.2?}/seed)",
            variant.name(),
            mean,
            accs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t0.elapsed() / seeds as u32
        );
    }
    let t0 = Instant::now();
    let mut accs = Vec::new();
    for seed in 1..=seeds {
        let mut cfg = HopeConfig::with_dims(spec.views, spec.dim, spec.num_classes);
        cfg.delta = delta;
        cfg.seed = seed;
        let out = train(HeadKind::Linear, Variant::Full, &ds, &cfg, &settings).unwrap();
        accs.push(out.report.summary.final_val.accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    println!(
        "{:24} mean val acc {:.4} {:?} ({:.2?}/seed)",
        "linear",
        mean,
        accs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        t0.elapsed() / seeds as u32
    );
}
