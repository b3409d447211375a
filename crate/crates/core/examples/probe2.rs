use ssm_core::harness::{train, stream_episode, RunConfig};
use ssm_core::synthdata::{bayes_oracle, generate_episode, WorldSpec};
use std::time::Instant;

fn argmax(v: &[f64]) -> usize { v.iter().enumerate().max_by(|a,b| a.1.partial_cmp(b.1).unwrap()).unwrap().0 }

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = args.get(1).map(String::as_str).unwrap_or("a");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let world = WorldSpec::default_world(0);
    let horizon = world.default_horizon();
    let eval_ep = generate_episode(&world, 2500, horizon, 200 + seed).unwrap();

    let (cfg, train_eps) = match variant {
        // A: extra short episode for cold-start coverage
        "a" => (RunConfig { steps: 3000, seed, eval_every: 0, ..RunConfig::default() },
                vec![generate_episode(&world, 3000, horizon, 100 + seed).unwrap(),
                     generate_episode(&world, 800, horizon, 300 + seed).unwrap()]),
        // B: batch 4
        "b" => (RunConfig { steps: 2000, batch_size: 4, seed, eval_every: 0, ..RunConfig::default() },
                vec![generate_episode(&world, 3000, horizon, 100 + seed).unwrap()]),
        // C: low lr, long run
        "c" => (RunConfig { steps: 5000, learning_rate: 5e-4, seed, eval_every: 0, ..RunConfig::default() },
                vec![generate_episode(&world, 3000, horizon, 100 + seed).unwrap()]),
        // E1: current-node readout
        "e1" => (RunConfig { steps: 3000, seed, eval_every: 0, readout: ssm_core::apl::ReadoutMode::CurrentNode, ..RunConfig::default() },
                vec![generate_episode(&world, 3000, horizon, 100 + seed).unwrap(),
                     generate_episode(&world, 800, horizon, 300 + seed).unwrap()]),
        // E2: wider model
        "e2" => (RunConfig { steps: 3000, d_model: 64, d_edge: 32, seed, eval_every: 0, ..RunConfig::default() },
                vec![generate_episode(&world, 3000, horizon, 100 + seed).unwrap(),
                     generate_episode(&world, 800, horizon, 300 + seed).unwrap()]),
        // E3: warmup
        "e3" => (RunConfig { steps: 3000, warmup_steps: 200, seed, eval_every: 0, ..RunConfig::default() },
                vec![generate_episode(&world, 3000, horizon, 100 + seed).unwrap(),
                     generate_episode(&world, 800, horizon, 300 + seed).unwrap()]),
        // E4: wide + current-node readout + warmup
        "e4" => (RunConfig { steps: 3000, d_model: 64, d_edge: 32, warmup_steps: 200, seed, eval_every: 0, readout: ssm_core::apl::ReadoutMode::CurrentNode, em_max_iters: 30, em_tol: 1e-4, ..RunConfig::default() },
                vec![generate_episode(&world, 3000, horizon, 100 + seed).unwrap(),
                     generate_episode(&world, 800, horizon, 300 + seed).unwrap()]),
        // F: wide, current-node, 3 diverse train episodes, longer schedule
        "f1" => (RunConfig { steps: 4500, d_model: 64, d_edge: 32, warmup_steps: 200, seed, eval_every: 0, readout: ssm_core::apl::ReadoutMode::CurrentNode, em_max_iters: 30, em_tol: 1e-4, ..RunConfig::default() },
                vec![generate_episode(&world, 2500, horizon, 100 + seed).unwrap(),
                     generate_episode(&world, 2500, horizon, 300 + seed).unwrap(),
                     generate_episode(&world, 2500, horizon, 400 + seed).unwrap()]),
        "f2" => (RunConfig { steps: 4500, learning_rate: 2e-3, d_model: 64, d_edge: 32, warmup_steps: 200, seed, eval_every: 0, readout: ssm_core::apl::ReadoutMode::CurrentNode, em_max_iters: 30, em_tol: 1e-4, ..RunConfig::default() },
                vec![generate_episode(&world, 2500, horizon, 100 + seed).unwrap(),
                     generate_episode(&world, 2500, horizon, 300 + seed).unwrap(),
                     generate_episode(&world, 2500, horizon, 400 + seed).unwrap()]),
        _ => panic!("variant"),
    };

    let post = bayes_oracle(&world, &eval_ep.features, horizon).unwrap();
    let t0 = Instant::now();
    let out = train(&cfg, &train_eps).unwrap();
    let train_time = t0.elapsed().as_secs_f64();
    let preds = stream_episode(&out.model, &eval_ep.features).unwrap();

    let mut stats = [[0usize; 4]; 2]; // [cold/warm][det_hit, det_n, ant_hit, ant_n]
    let mut ostats = [[0usize; 4]; 2];
    for t in 0..eval_ep.len() {
        let region = if t < 511 { 0 } else { 1 };
        let y = eval_ep.y_d(t).unwrap();
        stats[region][1] += 1; ostats[region][1] += 1;
        if argmax(&preds[t].p_d) == y { stats[region][0] += 1; }
        if argmax(&post[t].detection) == y { ostats[region][0] += 1; }
        if let Some(ya) = eval_ep.y_a(t) {
            stats[region][3] += 1; ostats[region][3] += 1;
            if argmax(&preds[t].p_a) == ya { stats[region][2] += 1; }
            if argmax(&post[t].anticipation) == ya { ostats[region][2] += 1; }
        }
    }
    let acc = |s: &[usize; 4]| (s[0] as f64 / s[1] as f64, s[2] as f64 / s[3] as f64);
    let (mcd, mca) = acc(&stats[0]); let (mwd, mwa) = acc(&stats[1]);
    let (ocd, oca) = acc(&ostats[0]); let (owd, owa) = acc(&ostats[1]);
    let det = (stats[0][0]+stats[1][0]) as f64 / (stats[0][1]+stats[1][1]) as f64;
    let ant = (stats[0][2]+stats[1][2]) as f64 / (stats[0][3]+stats[1][3]) as f64;
    let odet = (ostats[0][0]+ostats[1][0]) as f64 / (ostats[0][1]+ostats[1][1]) as f64;
    let oant = (ostats[0][2]+ostats[1][2]) as f64 / (ostats[0][3]+ostats[1][3]) as f64;
    println!("variant {variant} seed {seed}: train {:.0}s", train_time);
    println!("  model  cold det/ant {:.3}/{:.3}  warm {:.3}/{:.3}  TOTAL {:.3}/{:.3}", mcd, mca, mwd, mwa, det, ant);
    println!("  oracle cold det/ant {:.3}/{:.3}  warm {:.3}/{:.3}  TOTAL {:.3}/{:.3}", ocd, oca, owd, owa, odet, oant);
    println!("  ratios det {:.3} (need 0.90)  ant {:.3} (need 0.85)", det/odet, ant/oant);
}
