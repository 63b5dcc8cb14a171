//! Shared helpers for the integration suites: an independent central
//! finite-difference oracle and small config builders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use udon::config::{ExperimentConfig, KvMap};

/// Standard normal draws via Box-Muller, independent of library code.
pub fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// Central finite differences of a scalar function of a flat input vector.
pub fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Max-norm relative error of an analytic gradient against the numeric one.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0f64, f64::max)
        / scale
}

/// Small two-domain experiment config for fast integration runs.
pub fn tiny_config(extra: &str) -> ExperimentConfig {
    let base = "steps = 40\nbatch_size = 16\nbackbone_hidden = 24\nbackbone_out = 24\n\
                student_dim = 6\nteacher_dim = 12\nrefresh_period = 10\neval_every = 0\n\
                gen_feature_dim = 16\ngen_shared_dims = 2\ngen_cue_dims = 2\ngen_domains = 2\n\
                gen_domain_0 = 4,0,30,discriminative,0.25\ngen_domain_1 = 5,1.0,40,noise,0.25\n";
    let kv = KvMap::parse_text(&format!("{base}{extra}")).unwrap();
    ExperimentConfig::from_kv(&kv).unwrap()
}

/// Path to a file under the repository's `configs/` directory.
pub fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}
