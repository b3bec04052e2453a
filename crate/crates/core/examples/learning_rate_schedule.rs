//! Prints the periodic cosine learning-rate trace and shows early stopping
//! on a scripted validation curve.
//!
//! cargo run --example learning_rate_schedule

use ait::training::{cosine_lr, EarlyStopping, Progress, TrainConfig};

fn main() {
    let cfg = TrainConfig::default();
    for epoch in (0..=cfg.cosine_period * 2).step_by(5) {
        let lr = cosine_lr(epoch, &cfg);
        let bar = "#".repeat((lr / cfg.lr0 * 40.0).round() as usize);
        println!("epoch {:>3}  lr {lr:.3e}  {bar}", epoch + 1);
    }

    let curve = [1.0, 0.8, 0.7, 0.72, 0.69, 0.70, 0.71, 0.73, 0.74];
    let mut stop = EarlyStopping::new(3);
    for (i, &v) in curve.iter().enumerate() {
        let p = stop.observe(v);
        println!("epoch {} val {v:.2} -> {p:?}", i + 1);
        if p == Progress::Stop {
            break;
        }
    }
    println!("best epoch {} with val {:.2}", stop.best_epoch, stop.best);
}
