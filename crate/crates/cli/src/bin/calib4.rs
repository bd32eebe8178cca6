use hope_core::head::{ExecMode, HopeConfig};
use hope_core::synth::{generate, make_view_batch, split, DatasetSpec};
use hope_core::train::{AdamConfig, Model, HeadKind, OptimState, Variant};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let delta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lambda: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.5);

    let mut spec = DatasetSpec::default_benchmark();
    spec.noise_sigma = noise;
    let ds = generate::<f32>(&spec).unwrap();
    let splits = split(&ds, 0.6, 0.2, ds.spec.seed).unwrap();
    let mut cfg = HopeConfig::with_dims(spec.views, spec.dim, spec.num_classes);
    cfg.delta = delta;
    cfg.lambda = lambda;
    cfg.seed = 1;

    let mut model: Model<f32> = Model::init(HeadKind::Hope, Variant::Full, &cfg).unwrap();
    let train_batch = make_view_batch(&ds, &splits.train).unwrap();
    let labels: Vec<usize> = splits.train.iter().map(|&i| ds.labels[i]).collect();
    let lens: Vec<usize> = model.params().iter().map(|(_, _, d)| d.len()).collect();
    let mut optim = OptimState::new(AdamConfig::default(), &lens);

    for epoch in 0..epochs {
        let mut pass = model.forward_pass(&train_batch, ExecMode::Sparse, true).unwrap();
        let losses = model.attach_loss(&mut pass, &labels).unwrap();
        pass.tape.backward(losses.total_id).unwrap();
        if epoch % 40 == 0 {
            // prototype gradient norms (total = task + lambda*ortho path)
            let names: Vec<String> = model.params().iter().map(|(n, _, _)| n.clone()).collect();
            let mut pgrad = 0.0f64;
            let mut fd_w = (0.0f64, 0.0f64);
            for (i, &id) in pass.param_ids.iter().enumerate() {
                let g = pass.tape.grad(id).unwrap();
                if names[i].starts_with("prototype") {
                    pgrad += g.iter().map(|x| (*x as f64).powi(2)).sum::<f64>();
                }
                if names[i] == "fusion.w" {
                    // rows 0..d = z_s part, rows d..2d = z_d part
                    let vals = pass.tape.value(id);
                    let d = cfg.dim;
                    let out = cfg.out_dim;
                    let ws: f64 = vals[..d * out].iter().map(|x| (*x as f64).powi(2)).sum();
                    let wd: f64 = vals[d * out..].iter().map(|x| (*x as f64).powi(2)).sum();
                    fd_w = (ws.sqrt(), wd.sqrt());
                }
            }
            let routing = pass.routing.as_ref().unwrap();
            let pops: Vec<usize> = (0..routing.experts).map(|m| routing.column_popcount(m)).collect();
            println!(
                "epoch {epoch}: loss {:.4} |dP| {:.2e} |W_s| {:.3} |W_d| {:.3} pops {:?}",
                losses.total, pgrad.sqrt(), fd_w.0, fd_w.1, pops
            );
        }
        let grads: Vec<Vec<f32>> = pass.param_ids.iter().map(|&id| pass.tape.grad(id).unwrap().to_vec()).collect();
        let mut params = model.params_mut();
        let mut slots: Vec<&mut Vec<f32>> = params.iter_mut().map(|(_, _, d)| &mut **d).collect();
        optim.step(&mut slots, &grads).unwrap();
    }
    // final alignment of each prototype against each cluster signature (in its view)
    if let Model::Hope(m) = &model {
        let protos = m.head.prototypes.as_ref().unwrap();
        for (mi, p) in protos.iter().enumerate() {
            let mut best = (0.0f64, usize::MAX);
            for c in 0..spec.num_clusters {
                if ds.informative_view[c] != mi { continue; }
                let dot: f64 = p.iter().zip(&ds.signatures[mi][c]).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
                let pn: f64 = p.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                let cos = dot / pn;
                if cos.abs() > best.0.abs() { best = (cos, c); }
            }
            println!("prototype {mi}: best |cos| {:.3} to cluster {:?}", best.0, best.1);
        }
    }
}
