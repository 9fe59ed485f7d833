//! Calibration probe: measures the acceptance-style quantities (threshold
//! crossings, best FD medians) for the four modes over five seeds.

use cgt::synthdata::{Dataset, Task};
use cgt::condnet::GeneratorSpec;
use cgt::train::{iterations_to_threshold, pretrain_with_spec, transfer_train, MetricKind, Mode, TrainConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pre_iters: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let t_iters: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1200);
    let m_target: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let pre_seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(7);

    let task = Task::ring(8, m_target, 2.0, 0.15, 7, 2000, 50).unwrap();
    let data = Dataset::generate(&task);
    let mut cfg = TrainConfig::pretrain_default(pre_seed);
    cfg.iterations = pre_iters;

    let t0 = std::time::Instant::now();
    let width: usize = std::env::var("GEN_WIDTH").ok().and_then(|v| v.parse().ok()).unwrap_or(64);
    let gspec = GeneratorSpec { hidden: vec![width; 3], ..GeneratorSpec::default() };
    let out = pretrain_with_spec(&task, &data, &cfg, gspec).expect("pretrain");
    let last = out.record.points.last().unwrap();
    println!(
        "pretrain {}it {:.0}s: final mean_fd {:.4} cov {:.3} (best @{})",
        pre_iters,
        t0.elapsed().as_secs_f64(),
        out.record.mean_target(last, MetricKind::Frechet),
        out.record.mean_target(last, MetricKind::Coverage),
        out.best_iteration,
    );

    for mode in Mode::ALL {
        let mut hits = Vec::new();
        let mut bests = Vec::new();
        let t1 = std::time::Instant::now();
        for seed in 1..=5u64 {
            let mut tcfg = TrainConfig::transfer_default(mode, seed);
            tcfg.iterations = t_iters;
            if let Ok(v) = std::env::var("LR_D") { tcfg.lr_d = v.parse().unwrap(); }
            if let Ok(v) = std::env::var("LR_G") { tcfg.lr_g = v.parse().unwrap(); }
            if let Ok(v) = std::env::var("DSTEPS") { tcfg.d_steps_per_g_step = v.parse().unwrap(); }
            let tout =
                transfer_train(&out.best_checkpoint, &task, &data, &tcfg).expect("transfer");
            let hit = iterations_to_threshold(&tout.record, "frechet", 0.15).unwrap();
            let best = tout.record.best_mean_target(MetricKind::Frechet).unwrap().1;
            hits.push(hit);
            bests.push(best);
        }
        let hit_med: Vec<f64> =
            hits.iter().map(|h| h.map(|v| v as f64).unwrap_or(f64::INFINITY)).collect();
        println!(
            "{:12} ({:4.0}s) hits {:?} median {}  bests {:?} median {:.4}",
            mode.name(),
            t1.elapsed().as_secs_f64(),
            hits,
            median(hit_med.clone()),
            bests.iter().map(|b| (b * 1e4).round() / 1e4).collect::<Vec<_>>(),
            median(bests.clone()),
        );
    }
}
