//! Case-study systems, surrogate perception noise, and rollout generation.

pub mod kinematic_car;
pub mod mountain_car;
pub mod noise;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::conformal::{TaskMap, Trajectory, TrajectoryDataset};
use crate::geometry::HyperBox;
use crate::models::noise::NoiseProfile;
use crate::{Error, Result};

/// Closed-loop simulation pieces for dataset generation. The controller sees
/// the noisy perception output and, for models whose controller also uses
/// directly measured state components, the true state.
pub struct SimSetup<'a> {
    pub task: &'a dyn TaskMap,
    pub control: &'a (dyn Fn(&[f64], &[f64]) -> f64 + Sync),
    pub step: &'a (dyn Fn(&[f64], f64) -> Vec<f64> + Sync),
}

/// Simulates `n` rollouts of `t` steps with IID uniform initial states on
/// `x0` and perception `y = g(x) + e`, `e` drawn from the noise region
/// containing `x`. Trajectories get RNG streams split from the master seed,
/// so parallel and serial runs are identical; ids are `id_offset..id_offset+n`.
pub fn generate_dataset(
    setup: &SimSetup,
    noise: &NoiseProfile,
    domain: &HyperBox,
    x0: &HyperBox,
    n: usize,
    t: usize,
    seed: u64,
    id_offset: u64,
) -> Result<TrajectoryDataset> {
    noise.validate()?;
    if !domain.contains_box(x0) {
        return Err(Error::Validation("initial set leaves the domain".into()));
    }
    let out_dim = setup.task.output_dim();
    let trajectories = (0..n)
        .into_par_iter()
        .map(|j| -> Result<Trajectory> {
            let id = id_offset + j as u64;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(id);
            let mut x: Vec<f64> = x0
                .dims
                .iter()
                .map(|iv| {
                    use rand::Rng;
                    if iv.width() == 0.0 {
                        iv.lo
                    } else {
                        rng.random_range(iv.lo..=iv.hi)
                    }
                })
                .collect();
            let mut states = Vec::with_capacity(t + 1);
            let mut outputs = Vec::with_capacity(t + 1);
            for k in 0..=t {
                let e = noise.sample(&x, domain, out_dim, &mut rng)?;
                let y: Vec<f64> = setup
                    .task
                    .extract(&x)
                    .iter()
                    .zip(&e)
                    .map(|(g, e)| g + e)
                    .collect();
                states.push(x.clone());
                outputs.push(y.clone());
                if k < t {
                    let u = (setup.control)(&y, &x);
                    x = (setup.step)(&x, u);
                }
            }
            Ok(Trajectory { id, states, outputs })
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectoryDataset::new(trajectories)
}
