//! Dipole emission patterns and collection through a finite-NA objective.
//!
//! The quantization (B-field) axis is z; the objective looks along x and
//! collects both hemispheres (|n_x| large enough). Normalized angular
//! densities about z:
//!   f1(theta) = 3/(16 pi) (1 + cos^2 theta)   (sigma transitions)
//!   f0(theta) = 3/(8 pi)  sin^2 theta          (pi transitions)

use crate::par;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

#[derive(Debug, Clone, Copy)]
pub struct CollectionGeometry {
    pub numerical_aperture: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmissionCase {
    /// cycling readout on mF = -3/2: sigma-minus photons only, g = f1
    MinusThreeHalf,
    /// readout on mF = -1/2: g = (2/3) f0 + (1/3) f1
    MinusOneHalf,
    /// uniform density control (solid-angle fraction)
    Isotropic,
}

fn density(case: EmissionCase, cos_t: f64) -> f64 {
    use std::f64::consts::PI;
    let f1 = 3.0 / (16.0 * PI) * (1.0 + cos_t * cos_t);
    let f0 = 3.0 / (8.0 * PI) * (1.0 - cos_t * cos_t);
    match case {
        EmissionCase::MinusThreeHalf => f1,
        EmissionCase::MinusOneHalf => 2.0 / 3.0 * f0 + 1.0 / 3.0 * f1,
        EmissionCase::Isotropic => 1.0 / (4.0 * PI),
    }
}

fn density_max(case: EmissionCase) -> f64 {
    use std::f64::consts::PI;
    match case {
        EmissionCase::MinusThreeHalf => 3.0 / (8.0 * PI),
        EmissionCase::MinusOneHalf => 3.0 / (8.0 * PI),
        EmissionCase::Isotropic => 1.0 / (4.0 * PI),
    }
}

/// Monte Carlo collection efficiency for the given emission case; returns
/// (efficiency, binomial standard error). Deterministic for a given seed,
/// identical between the parallel and sequential builds.
pub fn collection_efficiency(
    geometry: &CollectionGeometry,
    case: EmissionCase,
    rng_seed: u64,
) -> (f64, f64) {
    assert!(geometry.sample_count >= 10_000, "need at least 1e4 samples");
    let na2 = geometry.numerical_aperture * geometry.numerical_aperture;
    let fmax = density_max(case);
    let shards = 64usize;
    let per = geometry.sample_count / shards;
    let rem = geometry.sample_count - per * shards;
    let counts = par::map_indexed(shards, |s| {
        let n = per + if s < rem { 1 } else { 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(rng_seed, s as u64));
        let mut acc = 0u64;
        for _ in 0..n {
            // rejection-sample an emission direction from the density
            let (cos_t, phi) = loop {
                let ct: f64 = rng.gen_range(-1.0..1.0);
                let u: f64 = rng.gen_range(0.0..fmax);
                if u < density(case, ct) {
                    break (ct, rng.gen_range(0.0..std::f64::consts::TAU));
                }
            };
            let sin_t = (1.0 - cos_t * cos_t).sqrt();
            let nx = sin_t * phi.cos();
            if nx * nx >= 1.0 - na2 {
                acc += 1;
            }
        }
        acc
    });
    let hits: u64 = counts.iter().sum();
    let n = geometry.sample_count as f64;
    let p = hits as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GEO: CollectionGeometry = CollectionGeometry {
        numerical_aperture: 0.6,
        sample_count: 400_000,
    };

    #[test]
    fn isotropic_matches_spherical_cap() {
        let (eff, se) = collection_efficiency(&GEO, EmissionCase::Isotropic, 7);
        // both caps: 1 - sqrt(1 - NA^2)
        let expect = 1.0 - (1.0f64 - 0.36).sqrt();
        assert!((eff - expect).abs() < 4.0 * se, "{eff} vs {expect}");
    }

    #[test]
    fn full_na_collects_everything() {
        let geo = CollectionGeometry {
            numerical_aperture: 0.999_999,
            sample_count: 20_000,
        };
        for case in [EmissionCase::MinusThreeHalf, EmissionCase::MinusOneHalf] {
            let (eff, _) = collection_efficiency(&geo, case, 3);
            assert!(eff > 0.995, "{eff}");
        }
    }

    #[test]
    fn ratio_near_1p4() {
        let (e32, _) = collection_efficiency(&GEO, EmissionCase::MinusThreeHalf, 11);
        let (e12, _) = collection_efficiency(&GEO, EmissionCase::MinusOneHalf, 12);
        let r = e12 / e32;
        assert!((r - 1.44).abs() < 0.03, "{r}");
    }

    #[test]
    fn error_scales_inverse_sqrt() {
        let mut geo = GEO;
        geo.sample_count = 100_000;
        let (_, se1) = collection_efficiency(&geo, EmissionCase::MinusThreeHalf, 5);
        geo.sample_count = 400_000;
        let (_, se2) = collection_efficiency(&geo, EmissionCase::MinusThreeHalf, 5);
        assert!((se1 / se2 - 2.0).abs() < 0.1, "{se1} {se2}");
    }

    #[test]
    fn deterministic_given_seed() {
        let a = collection_efficiency(&GEO, EmissionCase::MinusOneHalf, 99);
        let b = collection_efficiency(&GEO, EmissionCase::MinusOneHalf, 99);
        assert_eq!(a, b);
    }
}
