//! Random-action stepping rate of a 256-env batch.
use std::sync::Arc;

use doorlab::env::{random_action, EnvSettings, VecEnv, TEACHER_OBS_DIM};
use rand::SeedableRng;

fn main() {
    let n = 256;
    let mut venv = VecEnv::new(Arc::new(EnvSettings::default()), 0, n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut obs = vec![0f32; n * TEACHER_OBS_DIM];
    let start = std::time::Instant::now();
    for _ in 0..200 {
        let actions: Vec<_> = (0..n).map(|_| random_action(&mut rng)).collect();
        let r = venv.step(&actions);
        venv.reset_done(&r);
        venv.teacher_obs(&mut obs);
    }
    println!("{:.0} env steps/s", (n * 200) as f64 / start.elapsed().as_secs_f64());
}
