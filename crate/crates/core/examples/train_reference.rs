//! Trains the reference AF-proxy classifier and reports split accuracies.
//!
//! `cargo run --release -p ecgxai-core --example train_reference -- [n_per_class] [epochs] [seed]`

use std::time::Instant;

use ecgxai::synth::{make_af_dataset, train_reference_model, REFERENCE_EPOCHS};

fn main() -> ecgxai::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n_per_class = args.first().copied().unwrap_or(200) as usize;
    let epochs = args.get(1).copied().unwrap_or(REFERENCE_EPOCHS as u64) as usize;
    let seed = args.get(2).copied().unwrap_or(0);
    let start = Instant::now();
    let dataset = make_af_dataset(n_per_class, seed)?;
    let (model, report) = train_reference_model(&dataset, epochs, seed)?;
    println!("parameters: {}", model.network().num_params());
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {epoch:>2}: loss {loss:.4}");
    }
    println!(
        "accuracy: train {:.3}, val {:.3}, test {:.3}",
        report.train_accuracy, report.val_accuracy, report.test_accuracy
    );
    println!("elapsed: {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
