use ssm_core::harness::{train, evaluate_episode, RunConfig};
use ssm_core::synthdata::{bayes_oracle, generate_episode, WorldSpec};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let memory_len: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(511);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let world = WorldSpec::default_world(0);
    let horizon = world.default_horizon();
    let train_ep = generate_episode(&world, 3000, horizon, 100 + seed).unwrap();
    let eval_ep = generate_episode(&world, 2500, horizon, 200 + seed).unwrap();

    // Oracle reference on the eval episode.
    let post = bayes_oracle(&world, &eval_ep.features, horizon).unwrap();
    let mut od = 0usize; let mut oa = 0usize; let mut na = 0usize;
    for t in 0..eval_ep.len() {
        let y = eval_ep.y_d(t).unwrap();
        let pick = post[t].detection.iter().enumerate().max_by(|a,b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        if pick == y { od += 1; }
        if let Some(ya) = eval_ep.y_a(t) {
            let pa = post[t].anticipation.iter().enumerate().max_by(|a,b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            if pa == ya { oa += 1; }
            na += 1;
        }
    }
    let oracle_det = od as f64 / eval_ep.len() as f64;
    let oracle_ant = oa as f64 / na as f64;

    let cfg = RunConfig { steps, memory_len, seed, eval_every: 100, ..RunConfig::default() };
    let t0 = Instant::now();
    let out = train(&cfg, std::slice::from_ref(&train_ep)).unwrap();
    let train_time = t0.elapsed().as_secs_f64();
    for r in &out.log {
        println!("step {:4}  loss {:.4}  det {:.3}  ant {:.3}", r.step, r.loss_total, r.detection_accuracy, r.anticipation_accuracy);
    }
    let t1 = Instant::now();
    let eval = evaluate_episode(&out.model, &eval_ep).unwrap();
    println!("eval_time {:.1}s  train_time {:.1}s ({:.1} ms/step)", t1.elapsed().as_secs_f64(), train_time, 1000.0*train_time/steps as f64);
    println!("oracle det {:.3} ant {:.3} | targets det {:.3} ant {:.3}", oracle_det, oracle_ant, 0.9*oracle_det, 0.85*oracle_ant);
    println!("model  det {:.3} ant {:.3}", eval.detection_accuracy, eval.anticipation_accuracy);
}
