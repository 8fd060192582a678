//! Scratch diagnostic: sampler-rule comparison on an existing run directory.

use incda::harness::config::ExperimentConfig;
use incda::harness::data::{read_dataset, read_first_guesses};
use incda::harness::evaluate::normalized_rmse;
use incda::neural_prior::NeuralPrior;
use incda::training::TemperatureSchedule;

fn main() {
    let run = std::env::args().nth(1).unwrap_or("runs/full2".to_string());
    let config =
        ExperimentConfig::load(std::path::Path::new(&format!("{run}/config_used.json"))).unwrap();
    let mut config = config;
    config.out_dir = run.clone().into();
    let data = read_dataset(&config).unwrap();
    let fg = read_first_guesses(&config, &data).unwrap();
    let neural = NeuralPrior::load(
        std::path::Path::new(&format!("{run}/checkpoint_neural.json")),
        std::path::Path::new(&format!("{run}/checkpoint_neural.bin")),
    )
    .unwrap();
    let uncond = NeuralPrior::load(
        std::path::Path::new(&format!("{run}/checkpoint_uncond.json")),
        std::path::Path::new(&format!("{run}/checkpoint_uncond.bin")),
    )
    .unwrap();
    let schedule = TemperatureSchedule::regular(5);
    let n = data.test.len();

    // Naive degradation resampling for conditional and unconditional paths.
    let mut cond = vec![0.0; n];
    let mut unc = vec![0.0; n];
    for j in 0..n {
        let truth = data.normalizer.normalize(&data.test[j]);
        let (proc, y) = &data.test_obs[j];
        let z0 = fg.test[j].as_slice().to_vec();
        let levels = schedule.levels();

        let mut z = z0.clone();
        for (k, &s) in levels.iter().enumerate() {
            let x = neural.assimilate(&z, y, proc, s).unwrap();
            let s_next = levels.get(k + 1).copied().unwrap_or(0.0);
            for i in 0..z.len() {
                z[i] = s_next * z0[i] + (1.0 - s_next) * x[i];
            }
        }
        cond[j] = normalized_rmse(&z, truth.as_slice());

        let mut z = z0.clone();
        for (k, &s) in levels.iter().enumerate() {
            let x = uncond.prior_mu(&z, s).unwrap();
            let s_next = levels.get(k + 1).copied().unwrap_or(0.0);
            for i in 0..z.len() {
                z[i] = s_next * z0[i] + (1.0 - s_next) * x[i];
            }
        }
        unc[j] = normalized_rmse(&z, truth.as_slice());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let d: Vec<f64> = unc.iter().zip(&cond).map(|(a, b)| a - b).collect();
    let md = mean(&d);
    let sd = (d.iter().map(|x| (x - md) * (x - md)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
    println!("resample: neural {:.4}  uncond {:.4}", mean(&cond), mean(&unc));
    println!("paired gap {:.4}  t {:.2}", md, md / (sd / (n as f64).sqrt()));
}
