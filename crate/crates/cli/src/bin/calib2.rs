use hope_core::head::{ExecMode, HopeConfig};
use hope_core::synth::{generate, make_view_batch, split, DatasetSpec};
use hope_core::train::{evaluate, train, HeadKind, Model, TrainSettings, Variant};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let delta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
    let tau: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let mut spec = DatasetSpec::default_benchmark();
    spec.noise_sigma = noise;
    let ds = generate::<f32>(&spec).unwrap();
    let splits = split(&ds, 0.6, 0.2, ds.spec.seed).unwrap();

    for variant in [Variant::Full, Variant::NoElasticCapacity] {
        let mut cfg = HopeConfig::with_dims(spec.views, spec.dim, spec.num_classes);
        cfg.delta = delta;
        cfg.tau_init = tau;
        cfg.seed = 1;
        let settings = TrainSettings { epochs, ..TrainSettings::default() };
        let out = train(HeadKind::Hope, variant, &ds, &cfg, &settings).unwrap();
        let last = out.report.epochs.last().unwrap();
        let val = evaluate(&out.model, &ds, &splits.val).unwrap();
        println!(
            "{:<22} val {:.4} (head {:.3} tail {:.3}) loads {:?} rho {:.3} dead {:.3} maxcos {:.3}",
            variant.name(), val.accuracy, val.head_accuracy, val.tail_accuracy,
            last.expert_load.iter().map(|l| (l * 100.0).round() / 100.0).collect::<Vec<_>>(),
            last.sparsity, last.dead_node_rate,
            last.max_offdiag_cos.unwrap_or(-1.0),
        );
        // score stats per expert on the train batch
        if let Model::Hope(m) = &out.model {
            let batch = make_view_batch(&ds, &splits.train).unwrap();
            let pass = out.model.forward_pass(&batch, ExecMode::Sparse, false).unwrap();
            let routing = pass.routing.unwrap();
            let tau_now = m.head.tau();
            for ex in 0..routing.experts {
                let mut col: Vec<f64> = (0..routing.batch).map(|v| routing.score(v, ex)).collect();
                col.sort_by(|a, b| b.partial_cmp(a).unwrap());
                println!(
                    "  expert {ex}: top10 {:.3} p25 {:.3} median {:.3} tau {:.3}",
                    col[10], col[routing.batch / 4], col[routing.batch / 2], tau_now
                );
            }
        }
    }
}
