//! Seeded random test functions. The generator name is part of the output so
//! that stored baselines can be tied to the sampling procedure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fields::{ClosedForm, ExteriorData, Field, Grid};
use crate::Point;

pub const GENERATOR: &str = "bump-sum/chacha8/v1";

/// Bounds for `ψ(s) = exp(1 - 1/(1 - s²))`: `max(|ψ''|, |ψ'(s)/s|)` over `s ∈ [0, 1)`.
pub fn bump_curvature_constant() -> f64 {
    let mut k: f64 = 2.0;
    for i in 1..4000 {
        let s = i as f64 / 4000.0;
        let q = 1.0 - s * s;
        let psi = (1.0 - 1.0 / q).exp();
        let d1 = psi * (-2.0 * s / (q * q));
        let d2 = psi * ((2.0 * s / (q * q)).powi(2) - 2.0 / (q * q) - 8.0 * s * s / (q * q * q));
        k = k.max(d2.abs()).max((d1 / s).abs());
    }
    k
}

/// A sampled probe with its declared second-derivative bound.
#[derive(Clone, Debug)]
pub struct Probe {
    pub form: ClosedForm,
    pub field: Field,
    pub curvature: f64,
}

pub struct ProbeGenerator {
    rng: ChaCha8Rng,
    dim: usize,
    curvature_constant: f64,
}

impl ProbeGenerator {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim,
            curvature_constant: bump_curvature_constant(),
        }
    }

    fn point(&mut self, radius: f64) -> Point {
        loop {
            let p = [
                self.rng.gen_range(-radius..radius),
                if self.dim == 2 { self.rng.gen_range(-radius..radius) } else { 0.0 },
            ];
            if crate::norm(p) < radius {
                return p;
            }
        }
    }

    /// Sum of one to three bumps centred in `B_{0.8}` with radii in `[0.2, 0.8]`
    /// and amplitudes in `[-1, 1]`.
    pub fn bump_sum(&mut self) -> (ClosedForm, f64) {
        let count = self.rng.gen_range(1..=3);
        let mut terms = Vec::with_capacity(count);
        let mut curvature = 0.0;
        for _ in 0..count {
            let center = self.point(0.8);
            let radius: f64 = self.rng.gen_range(0.2..0.8);
            let amplitude: f64 = self.rng.gen_range(-1.0..1.0);
            curvature += amplitude.abs() * self.curvature_constant / (radius * radius);
            terms.push(ClosedForm::Bump {
                center,
                radius,
                amplitude,
            });
        }
        (ClosedForm::Sum { terms }, curvature)
    }

    pub fn affine(&mut self) -> ClosedForm {
        ClosedForm::Affine {
            value: self.rng.gen_range(-1.0..1.0),
            slope: [
                self.rng.gen_range(-1.0..1.0),
                if self.dim == 2 { self.rng.gen_range(-1.0..1.0) } else { 0.0 },
            ],
        }
    }

    /// A bump-sum probe sampled on `grid`, exterior given by the same closed form.
    pub fn probe(&mut self, grid: Grid) -> Result<Probe> {
        let (form, curvature) = self.bump_sum();
        let field = Field::sample(grid, &form, ExteriorData::new(form.clone())?)?;
        Ok(Probe { form, field, curvature })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_probes() {
        let g = Grid::new(1, 1.0 / 16.0, 2.0).unwrap();
        let a = ProbeGenerator::new(7, 1).probe(g).unwrap();
        let b = ProbeGenerator::new(7, 1).probe(g).unwrap();
        assert_eq!(a.field, b.field);
        let c = ProbeGenerator::new(8, 1).probe(g).unwrap();
        assert_ne!(a.field, c.field);
    }

    #[test]
    fn curvature_constant_bounds_second_difference() {
        let k = bump_curvature_constant();
        let f = ClosedForm::Bump {
            center: [0.0, 0.0],
            radius: 1.0,
            amplitude: 1.0,
        };
        let d = 1e-4;
        for i in 0..200 {
            let x = -1.0 + 0.01 * i as f64;
            let dd = (f.eval([x + d, 0.0]) - 2.0 * f.eval([x, 0.0]) + f.eval([x - d, 0.0])) / (d * d);
            assert!(dd.abs() <= k + 1e-3);
        }
    }
}
