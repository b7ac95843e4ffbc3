//! Seeded random program instances for oracle-equivalence checks.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{P1Instance, P2Instance};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn vector<R: Rng + ?Sized>(rng: &mut R, m: usize, scale: f64) -> DVector<f64> {
    DVector::from_iterator(m, (0..m).map(|_| uniform(rng, -scale, scale)))
}

/// `L_g h` with norm at least `0.1`.
fn nonvanishing<R: Rng + ?Sized>(rng: &mut R, m: usize) -> DVector<f64> {
    loop {
        let v = vector(rng, m, 3.0);
        if v.norm() >= 0.1 {
            return v;
        }
    }
}

pub fn random_p1_instance<R: Rng + ?Sized>(rng: &mut R, m: usize) -> P1Instance {
    let lg_h = nonvanishing(rng, m);
    let lf_h = uniform(rng, -5.0, 5.0);
    let alpha_h = if rng.random::<f64>() < 0.05 {
        -lf_h
    } else {
        uniform(rng, -5.0, 5.0)
    };
    P1Instance::new(lf_h, lg_h, alpha_h)
}

/// Mixes in exact branch seams (`p₁ = 0` or `p₂ = 0`) about one time in ten.
pub fn random_p2_instance<R: Rng + ?Sized>(rng: &mut R, m: usize) -> P2Instance {
    let lg_h = nonvanishing(rng, m);
    let lg_v = vector(rng, m, 3.0);
    let lf_v = uniform(rng, -5.0, 5.0);
    let cv = if rng.random::<f64>() < 0.05 {
        -lf_v
    } else {
        uniform(rng, 0.0, 5.0)
    };
    let lf_h = uniform(rng, -5.0, 5.0);
    let alpha_h = if rng.random::<f64>() < 0.05 {
        -lf_h
    } else {
        uniform(rng, -5.0, 5.0)
    };
    P2Instance {
        lf_v,
        lg_v,
        cv,
        lf_h,
        lg_h,
        alpha_h,
    }
}
