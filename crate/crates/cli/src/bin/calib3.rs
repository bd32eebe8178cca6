use hope_core::head::{ExecMode, HopeConfig};
use hope_core::synth::{generate, make_view_batch, split, DatasetSpec};
use hope_core::train::{evaluate, train, HeadKind, Model, TrainSettings, Variant};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let delta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);

    let mut spec = DatasetSpec::default_benchmark();
    spec.noise_sigma = noise;
    let ds = generate::<f32>(&spec).unwrap();
    let splits = split(&ds, 0.6, 0.2, ds.spec.seed).unwrap();

    let mut cfg = HopeConfig::with_dims(spec.views, spec.dim, spec.num_classes);
    cfg.delta = delta;
    cfg.seed = 1;

    // oracle-aligned training: swap in signature-mean prototypes at init by
    // training a full model whose prototype bank we overwrite through the
    // public param API before any steps; emulate by training from a custom
    // starting model via 0-epoch train then manual loop is overkill --
    // instead train() starts from Model::init, so we replicate its loop here
    let settings = TrainSettings { epochs, ..TrainSettings::default() };
    let out = train(HeadKind::Hope, Variant::Full, &ds, &cfg, &settings).unwrap();
    let val = evaluate(&out.model, &ds, &splits.val).unwrap();
    println!("learned-proto   val {:.4} (tail {:.3})", val.accuracy, val.tail_accuracy);

    // manual loop with oracle prototypes
    use hope_core::train::{AdamConfig, OptimState};
    let mut model: Model<f32> = Model::init(HeadKind::Hope, Variant::Full, &cfg).unwrap();
    if let Model::Hope(m) = &mut model {
        let protos = m.head.prototypes.as_mut().unwrap();
        for (mi, p) in protos.iter_mut().enumerate() {
            let mut mean = vec![0.0f64; spec.dim];
            let mut any = false;
            for c in 0..spec.num_clusters {
                if ds.informative_view[c] == mi {
                    for j in 0..spec.dim {
                        mean[j] += ds.signatures[mi][c][j] as f64;
                    }
                    any = true;
                }
            }
            if any {
                let n: f64 = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
                for j in 0..spec.dim {
                    p[j] = (mean[j] / n) as f32;
                }
            }
        }
    }
    let train_batch = make_view_batch(&ds, &splits.train).unwrap();
    let labels: Vec<usize> = splits.train.iter().map(|&i| ds.labels[i]).collect();
    let lens: Vec<usize> = model.params().iter().map(|(_, _, d)| d.len()).collect();
    let mut optim = OptimState::new(AdamConfig::default(), &lens);
    for _ in 0..epochs {
        let mut pass = model.forward_pass(&train_batch, ExecMode::Sparse, true).unwrap();
        let losses = model.attach_loss(&mut pass, &labels).unwrap();
        pass.tape.backward(losses.total_id).unwrap();
        let grads: Vec<Vec<f32>> = pass.param_ids.iter().map(|&id| pass.tape.grad(id).unwrap().to_vec()).collect();
        let mut params = model.params_mut();
        let mut slots: Vec<&mut Vec<f32>> = params.iter_mut().map(|(_, _, d)| &mut **d).collect();
        optim.step(&mut slots, &grads).unwrap();
    }
    let val = evaluate(&model, &ds, &splits.val).unwrap();
    println!("oracle-proto    val {:.4} (tail {:.3})", val.accuracy, val.tail_accuracy);
    let pass = model.forward_pass(&train_batch, ExecMode::Sparse, false).unwrap();
    let routing = pass.routing.unwrap();
    for ex in 0..routing.experts {
        let mut col: Vec<f64> = (0..routing.batch).map(|v| routing.score(v, ex)).collect();
        col.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let pop = (0..routing.batch).filter(|&v| routing.selected(v, ex)).count();
        println!("  expert {ex}: top10 {:.3} median {:.3} pop {}", col[10], col[routing.batch / 2], pop);
    }
}
