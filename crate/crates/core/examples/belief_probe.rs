//! Estimator comparison on a shared transition stream: a randomized planar
//! quadrotor flies small attitude wiggles while the Stein particle belief
//! and the unscented filter identify its mass and inertia side by side.
//!
//! cargo run --release -p prmppi --example belief_probe [sigma_v] [step] [iters]

use nalgebra::{DMatrix, DVector};
use prmppi::belief::{
    svgd_update, ukf_update, GaussianBelief, NoiseModel, ParameterParticles, SvgdConfig,
    TransitionObservation,
};
use prmppi::dynamics::{self, make_model};
use prmppi::stream_rng;
use rand::Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let sigma_v: f64 = args.get(1).map_or(0.05, |s| s.parse().unwrap());
    let step: f64 = args.get(2).map_or(0.05, |s| s.parse().unwrap());
    let iters: usize = args.get(3).map_or(10, |s| s.parse().unwrap());

    let model = make_model("quad2d").unwrap();
    let d = model.descriptor();
    let truth = DVector::from_vec(vec![0.0352, 1.9e-5]);
    let prior = prmppi::dynamics::Box::from_pairs(&[
        (0.5 * 0.027, 1.5 * 0.027),
        (0.5 * 1.4e-5, 1.5 * 1.4e-5),
    ]);

    let noise = NoiseModel::diagonal(&[0.4 * sigma_v, 0.4 * sigma_v, sigma_v, sigma_v, 2.0 * sigma_v, 4.0 * sigma_v]).unwrap();
    let mut rng = stream_rng(1, 0);
    let mut particles =
        ParameterParticles::from_prior(&prior, &d.param_bounds, 100, &mut rng).unwrap();
    let mut gauss = GaussianBelief::from_uniform_box(&prior);
    let q = DMatrix::from_diagonal(&prior.widths().map(|w| (1e-3 * w) * (1e-3 * w)));
    let svgd_cfg = SvgdConfig { step_size: step, iterations: iters };

    // Hover-ish trajectory with attitude wiggles so both parameters are
    // observable.
    let mut x = DVector::from_vec(vec![0.0, 1.0, 0.1, 0.0, 0.0, 0.0]);
    for t in 0..60 {
        let u = DVector::from_vec(vec![
            0.004 * ((t as f64) * 0.37).sin() + rng.random_range(-0.01..0.01),
            0.004 * ((t as f64) * 0.53).cos() + rng.random_range(-0.01..0.01),
        ]);
        let u = d.control_limits.projected(&u);
        let next = dynamics::step(model.as_ref(), &x, &u, &truth).unwrap();
        let obs = TransitionObservation::new(x.clone(), u.clone(), next.clone());

        svgd_update(&mut particles, model.as_ref(), &obs, &noise, &svgd_cfg).unwrap();
        gauss = ukf_update(&gauss, model.as_ref(), &obs, &noise, &q).unwrap();
        x = next;

        if t % 5 == 0 || t == 59 {
            let pm = particles.mean();
            let ps = particles.std();
            println!(
                "t={t:3} svgd m={:.5} (±{:.5}) iz={:.3e} (±{:.2e}) | ukf m={:.5} iz={:.3e} | true m={:.5} iz={:.3e}",
                pm[0], ps[0], pm[1], ps[1], gauss.mean[0], gauss.mean[1], truth[0], truth[1]
            );
        }
    }
}
