use ssm_core::harness::{train, RunConfig, SsmModel};
use ssm_core::harness::model::window_at;
use ssm_core::synthdata::{generate_episode, Episode, WorldSpec};

fn argmax(v: &[f64]) -> usize { v.iter().enumerate().max_by(|a,b| a.1.partial_cmp(b.1).unwrap()).unwrap().0 }

// windowed eval with fresh EM per position (training protocol)
fn eval_windowed(model: &SsmModel, ep: &Episode, stride: usize) -> (f64, f64) {
    let (mut dh, mut dn, mut ah, mut an) = (0, 0, 0, 0);
    let mut t = 0;
    while t < ep.len() - ep.horizon {
        let w = window_at(&ep.features, t, model.config.memory_len).unwrap();
        let out = model.forward_window(&w, 12345 ^ t as u64, None, None).unwrap().2;
        if argmax(out.p_d.value().data()) == ep.y_d(t).unwrap() { dh += 1; }
        dn += 1;
        if argmax(out.p_a.value().data()) == ep.y_a(t).unwrap() { ah += 1; }
        an += 1;
        t += stride;
    }
    (dh as f64 / dn as f64, ah as f64 / an as f64)
}

fn main() {
    let world = WorldSpec::default_world(0);
    let horizon = world.default_horizon();
    let train_ep = generate_episode(&world, 3000, horizon, 100).unwrap();
    let eval_ep = generate_episode(&world, 2500, horizon, 200).unwrap();
    let cfg = RunConfig { steps: 3000, d_model: 64, d_edge: 32, warmup_steps: 200, seed: 0, eval_every: 0,
        readout: ssm_core::apl::ReadoutMode::CurrentNode, em_max_iters: 30, em_tol: 1e-4, ..RunConfig::default() };
    let out = train(&cfg, std::slice::from_ref(&train_ep)).unwrap();

    let (d1, a1) = eval_windowed(&out.model, &train_ep, 17);
    println!("windowed fresh-EM on TRAIN ep: det {:.3} ant {:.3}", d1, a1);
    let (d2, a2) = eval_windowed(&out.model, &eval_ep, 17);
    println!("windowed fresh-EM on EVAL  ep: det {:.3} ant {:.3}", d2, a2);
    let preds = ssm_core::harness::stream_episode(&out.model, &eval_ep.features).unwrap();
    let (mut dh, mut dn, mut ah, mut an) = (0, 0, 0, 0);
    for t in 0..eval_ep.len() {
        if let Some(y) = eval_ep.y_d(t) { if argmax(&preds[t].p_d) == y { dh += 1; } dn += 1; }
        if let Some(y) = eval_ep.y_a(t) { if argmax(&preds[t].p_a) == y { ah += 1; } an += 1; }
    }
    println!("streamed warm-EM on EVAL  ep: det {:.3} ant {:.3}", dh as f64/dn as f64, ah as f64/an as f64);
}
