use scg_net::config::FullConfig;
use scg_net::train::train;

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut cfg = FullConfig::default();
    cfg.train.epochs = epochs;
    cfg.train.eval_every = 1;
    let start = std::time::Instant::now();
    let (_, report) = train(&cfg, None, None).unwrap();
    for (epoch, split, m) in &report.metrics_history {
        println!("epoch {epoch:>3} {split:<5}: oa {:.4} mf1 {:.4} f1 {:?}", m.overall_accuracy, m.mean_f1,
            m.per_class_f1.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }
    let last = report.loss_history.last().unwrap();
    println!("final losses: dice {:.4} kl {:.4} dl {:.4} total {:.4}", last.dice, last.kl, last.dl, last.total);
    println!("elapsed {:.1?} for {} epochs ({} steps)", start.elapsed(), epochs, report.loss_history.len());
}
