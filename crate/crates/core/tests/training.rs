use least_volume::train::{train, TrainConfig};
use least_volume::verify::run_toy1d;

#[test]
fn toy_curve_embedding_is_injective_and_accurate() {
    let run = run_toy1d(&TrainConfig { record_time: false, ..TrainConfig::toy1d() }, true).unwrap();
    let codes = run.model.encode(&run.data.samples).unwrap();
    let recon = run.model.decode(&codes).unwrap();
    let n = run.data.len();
    for i in 0..n {
        for j in i + 1..n {
            let dx: f64 = run.data.samples.row(i).iter().zip(run.data.samples.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            let dz: f64 = codes.row(i).iter().zip(codes.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(dx < 1e-12 || dz > 0.0, "samples {i} and {j} share a code");
        }
    }
    let mse = recon.data().iter().zip(run.data.samples.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / recon.len() as f64;
    assert!(mse < 1e-3, "mse {mse}");
    let a = run.analyzer().unwrap();
    assert_eq!(a.estimate_latent_dim(0.01).unwrap(), 1);
}

#[test]
fn training_is_reproducible() {
    let data = least_volume::data::gen_curve1d(50, 3).unwrap();
    let cfg = TrainConfig { epochs: 50, record_time: false, ..TrainConfig::toy1d() };
    let spec = least_volume::model::ModelSpec::toy1d();
    let go = || train(least_volume::model::build_autoencoder(&spec, 1).unwrap(), &data.samples, &cfg).unwrap();
    let ((m1, h1), (m2, h2)) = (go(), go());
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert_eq!(least_volume::checkpoint::to_bytes(&m1).unwrap(), least_volume::checkpoint::to_bytes(&m2).unwrap());
}
