use nerd_core::priors::{eps_from_denoiser, tweedie_denoise, GmmScalarPrior, NoiseSchedule};
use nerd_core::rng::GaussianStream;

// Self-normalised importance sampling with the prior as proposal: draw
// x0 ~ prior, weight by N(x_t; sqrt(a) x0, 1 - a). Returns (mean, standard error).
fn mc_posterior_mean(triples: &[(f64, f64, f64)], x_t: f64, a: f64, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = GaussianStream::new(seed);
    let total: f64 = triples.iter().map(|t| t.0).sum();
    let var = 1.0 - a;
    let mut samples = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.next_uniform() * total;
        let mut comp = triples[triples.len() - 1];
        for t in triples {
            if u < t.0 {
                comp = *t;
                break;
            }
            u -= t.0;
        }
        let x0 = comp.1 + comp.2 * rng.next_gaussian();
        let r = x_t - a.sqrt() * x0;
        samples.push(x0);
        log_w.push(-r * r / (2.0 * var));
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let sw: f64 = w.iter().sum();
    let mean = w.iter().zip(&samples).map(|(w, x)| w * x).sum::<f64>() / sw;
    let se2 = w.iter().zip(&samples).map(|(w, x)| w * w * (x - mean) * (x - mean)).sum::<f64>() / (sw * sw);
    (mean, se2.sqrt())
}

#[test]
fn posterior_mean_matches_monte_carlo() {
    let priors: [&[(f64, f64, f64)]; 4] = [
        &[(1.0, 0.3, 0.1)],
        &[(0.5, 0.0, 0.05), (0.5, 1.0, 0.05)],
        &[(0.55, 0.0, 0.02), (0.3, 0.2, 0.02), (0.05, 0.3, 0.02), (0.1, 1.0, 0.02)],
        &[(0.2, -0.5, 0.3), (0.8, 0.4, 0.1)],
    ];
    let schedule = NoiseSchedule::ddpm(10).unwrap();
    let cases = [(100, 0.1), (300, 0.5), (500, -0.2), (800, 0.9), (1000, 0.0)];
    let mut worst: f64 = 0.0;
    for (p, triples) in priors.iter().enumerate() {
        let prior = GmmScalarPrior::from_triples(triples).unwrap();
        for (c, &(t, x_t)) in cases.iter().enumerate() {
            let a = schedule.alpha_bar(t);
            let exact = prior.posterior_mean(x_t, a);
            let (mc, se) = mc_posterior_mean(triples, x_t, a, 1_000_000, (p * 10 + c) as u64);
            let z = (exact - mc).abs() / se;
            worst = worst.max(z);
            assert!(z <= 3.0, "prior {p} t {t} x_t {x_t}: exact {exact} mc {mc} se {se}");
        }
    }
    eprintln!("largest deviation {worst:.2} standard errors");
}

#[test]
fn eps_and_denoise_round_trip() {
    let schedule = NoiseSchedule::ddpm(10).unwrap();
    let mut rng = GaussianStream::new(1);
    let x_t = rng.gaussian_vec(256);
    let x0 = rng.gaussian_vec(256);
    for t in [1, 10, 250, 999, 1000] {
        let a = schedule.alpha_bar(t);
        let eps = eps_from_denoiser(&x_t, &x0, a).unwrap();
        let back = tweedie_denoise(&x_t, &eps, a).unwrap();
        let err = back.iter().zip(&x0).map(|(b, x)| (b - x).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "t {t}: {err}");
    }
}
