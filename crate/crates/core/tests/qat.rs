use std::time::Instant;

use jetforge::data::{synth_gen, JetBatch};
use jetforge::model::ModelConfig;
use jetforge::quantization::{layer_census, quantize_model};
use jetforge::training::TrainConfig;

fn batch(seed: u64, n: usize) -> JetBatch {
    JetBatch::from_records(&synth_gen(seed, n, 8, 3, 5).unwrap(), 8, 3).unwrap()
}

fn smooth(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|v| v.iter().sum::<f64>() / w as f64).collect()
}

#[test]
fn qat_loss_trends_down_over_80_epochs() {
    let (train, val) = (batch(1, 768), batch(2, 256));
    let cfg = TrainConfig {
        early_stop_patience: None,
        batch_size: 64,
        ..TrainConfig::qat(3)
    };
    let start = Instant::now();
    let out = quantize_model(&ModelConfig::tiny(), 3, &train, &val, &cfg).unwrap();
    eprintln!("80 QAT epochs in {:.1}s", start.elapsed().as_secs_f64());
    assert_eq!(out.history.len(), 80);
    assert_eq!(layer_census(&out.model).0.len(), 24);

    let loss: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    let s = smooth(&loss, 10);
    // least-squares slope of the smoothed curve
    let n = s.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = s.iter().sum::<f64>() / n;
    let slope: f64 = s.iter().enumerate().map(|(i, y)| (i as f64 - mx) * (y - my)).sum::<f64>()
        / s.iter().enumerate().map(|(i, _)| (i as f64 - mx).powi(2)).sum::<f64>();
    assert!(slope < 0.0, "slope {slope}");
    assert!(s[s.len() - 1] < 0.8 * s[0], "{} -> {}", s[0], s[s.len() - 1]);
    // the plateau schedule never goes below its floor
    assert!(out.history.iter().all(|r| r.lr >= 1e-4 - 1e-15 && r.lr <= 8e-4));
}
