//! The negative-data mixture `b·p_out + (1 - b)·p_ζ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{CouplingFlow, NegativePatch};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NegativeSource {
    RealPool,
    Flow,
    Mixture { b: f64 },
}

impl NegativeSource {
    /// Probability of drawing a real negative.
    pub fn real_probability(&self) -> f64 {
        match self {
            NegativeSource::RealPool => 1.0,
            NegativeSource::Flow => 0.0,
            NegativeSource::Mixture { b } => *b,
        }
    }

    pub fn from_b(b: f64) -> Result<Self> {
        let s = NegativeSource::Mixture { b };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.real_probability();
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidArgument(format!("mixing probability {b} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn uses_flow(&self) -> bool {
        self.real_probability() < 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceChoice {
    Real,
    Flow,
}

pub fn choose_source<R: Rng + ?Sized>(source: &NegativeSource, rng: &mut R) -> Result<SourceChoice> {
    source.validate()?;
    Ok(if rng.random_bool(source.real_probability()) {
        SourceChoice::Real
    } else {
        SourceChoice::Flow
    })
}

/// Randomness used while drawing negatives, split so that the real branch
/// never perturbs the flow's latent stream and vice versa.
pub struct NegativeRngs<'a, R: Rng + ?Sized> {
    pub choice: &'a mut R,
    pub pool: &'a mut R,
    pub latent: &'a mut R,
}

/// Standard deviation of the flow latents used for negatives.
pub const DEFAULT_LATENT_TEMPERATURE: f64 = 1.0;

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "latent temperature must be positive, got {t}"
        )));
    }
    Ok(())
}

/// Draws a `size` patch: Bernoulli(b) picks the source, then a random crop of
/// a random bank texture or a flow sample.
pub fn sample_negative<R: Rng + ?Sized>(
    source: &NegativeSource,
    flow: Option<&CouplingFlow>,
    temperature: f64,
    bank: &[NegativePatch],
    size: (usize, usize),
    rngs: NegativeRngs<'_, R>,
) -> Result<(NegativePatch, SourceChoice)> {
    check_temperature(temperature)?;
    let (h, w) = size;
    match choose_source(source, rngs.choice)? {
        SourceChoice::Real => {
            if bank.is_empty() {
                return Err(Error::InvalidArgument(
                    "real negative selected but the pool is empty".into(),
                ));
            }
            let tex = &bank[rngs.pool.random_range(0..bank.len())];
            if tex.height < h || tex.width < w {
                return Err(Error::InvalidArgument(format!(
                    "bank texture {}x{} smaller than {h}x{w}",
                    tex.height, tex.width
                )));
            }
            let top = rngs.pool.random_range(0..=tex.height - h);
            let left = rngs.pool.random_range(0..=tex.width - w);
            let rows: Vec<usize> = (0..h)
                .flat_map(|r| (0..w).map(move |c| (top + r) * tex.width + left + c))
                .collect();
            Ok((
                NegativePatch {
                    height: h,
                    width: w,
                    values: tex.values.gather_rows(&rows),
                },
                SourceChoice::Real,
            ))
        }
        SourceChoice::Flow => {
            let flow = flow.ok_or_else(|| Error::InvalidArgument("flow negative selected without a flow".into()))?;
            let z = flow.sample_latent_tempered(h * w, temperature, rngs.latent);
            let values = flow.inverse(&z)?.sample;
            Ok((
                NegativePatch {
                    height: h,
                    width: w,
                    values,
                },
                SourceChoice::Flow,
            ))
        }
    }
}

/// Element-wise negatives for point data.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeDraw {
    pub values: Tensor,
    pub from_flow: Vec<bool>,
    /// Latents of the flow-generated rows, in order.
    pub latent: Tensor,
}

/// `n` point negatives, each independently real (uniform pick from `pool`)
/// or synthetic.
pub fn sample_negative_points<R: Rng + ?Sized>(
    source: &NegativeSource,
    flow: Option<&CouplingFlow>,
    temperature: f64,
    pool: &Tensor,
    n: usize,
    rngs: NegativeRngs<'_, R>,
) -> Result<NegativeDraw> {
    check_temperature(temperature)?;
    let choices = (0..n)
        .map(|_| choose_source(source, rngs.choice))
        .collect::<Result<Vec<_>>>()?;
    let n_flow = choices.iter().filter(|&&c| c == SourceChoice::Flow).count();
    let dim = if pool.shape().len() == 2 && !pool.is_empty() {
        pool.cols()
    } else {
        flow.map(|f| f.dim())
            .ok_or_else(|| Error::InvalidArgument("no pool and no flow".into()))?
    };
    let (latent, synth) = if n_flow > 0 {
        let flow = flow.ok_or_else(|| Error::InvalidArgument("flow negative selected without a flow".into()))?;
        if flow.dim() != dim {
            return Err(Error::ShapeMismatch("flow and pool dimensions differ".into()));
        }
        let z = flow.sample_latent_tempered(n_flow, temperature, rngs.latent);
        let x = flow.inverse(&z)?.sample;
        (z, Some(x))
    } else {
        (Tensor::zeros(vec![0, dim]), None)
    };
    let mut values = Tensor::zeros(vec![n, dim]);
    let mut next_flow = 0;
    for (i, c) in choices.iter().enumerate() {
        match c {
            SourceChoice::Real => {
                if pool.is_empty() {
                    return Err(Error::InvalidArgument(
                        "real negative selected but the pool is empty".into(),
                    ));
                }
                let j = rngs.pool.random_range(0..pool.rows());
                values.row_mut(i).copy_from_slice(pool.row(j));
            }
            SourceChoice::Flow => {
                let x = synth.as_ref().expect("flow rows drawn");
                values.row_mut(i).copy_from_slice(x.row(next_flow));
                next_flow += 1;
            }
        }
    }
    Ok(NegativeDraw {
        values,
        from_flow: choices.iter().map(|&c| c == SourceChoice::Flow).collect(),
        latent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;
    use crate::rng::rng_from_seed;

    fn bank() -> Vec<NegativePatch> {
        vec![NegativePatch {
            height: 4,
            width: 4,
            values: Tensor::matrix(16, 2, (0..32).map(|i| 100.0 + i as f64).collect()).unwrap(),
        }]
    }

    fn flow() -> CouplingFlow {
        CouplingFlow::new(&FlowConfig::new(2), &mut rng_from_seed(0)).unwrap()
    }

    fn draw(src: NegativeSource, seed: u64, n: usize) -> NegativeDraw {
        let (mut a, mut b, mut c) = (rng_from_seed(seed), rng_from_seed(seed + 1), rng_from_seed(seed + 2));
        let pool = Tensor::matrix(3, 2, vec![10.0, 10.0, 11.0, 11.0, 12.0, 12.0]).unwrap();
        let f = flow();
        sample_negative_points(
            &src,
            Some(&f),
            1.0,
            &pool,
            n,
            NegativeRngs {
                choice: &mut a,
                pool: &mut b,
                latent: &mut c,
            },
        )
        .unwrap()
    }

    #[test]
    fn extremes_pick_one_source() {
        let real = draw(NegativeSource::Mixture { b: 1.0 }, 1, 200);
        assert!(real.from_flow.iter().all(|&f| !f));
        assert_eq!(real.latent.rows(), 0);
        let synth = draw(NegativeSource::Flow, 1, 200);
        assert!(synth.from_flow.iter().all(|&f| f));
        assert_eq!(synth.values, synth.latent); // identity flow
    }

    #[test]
    fn half_mixture_concentrates() {
        let d = draw(NegativeSource::Mixture { b: 0.5 }, 9, 10_000);
        let real = d.from_flow.iter().filter(|&&f| !f).count() as f64 / 1e4;
        assert!((real - 0.5).abs() < 0.02, "{real}");
    }

    #[test]
    fn patches_are_deterministic_and_sourced() {
        let f = flow();
        let get = |src: NegativeSource, seed: u64| {
            let (mut a, mut b, mut c) = (rng_from_seed(seed), rng_from_seed(seed + 1), rng_from_seed(seed + 2));
            sample_negative(
                &src,
                Some(&f),
                1.0,
                &bank(),
                (2, 3),
                NegativeRngs {
                    choice: &mut a,
                    pool: &mut b,
                    latent: &mut c,
                },
            )
            .unwrap()
        };
        let (p, c) = get(NegativeSource::RealPool, 4);
        assert_eq!(c, SourceChoice::Real);
        assert!(p.values.data().iter().all(|&v| v >= 100.0));
        assert_eq!(get(NegativeSource::RealPool, 4).0, p);
        let (q, c) = get(NegativeSource::Flow, 4);
        assert_eq!(c, SourceChoice::Flow);
        assert_eq!(q.values.rows(), 6);
    }

    #[test]
    fn missing_sources_are_errors() {
        let (mut a, mut b, mut c) = (rng_from_seed(0), rng_from_seed(1), rng_from_seed(2));
        let r = sample_negative(
            &NegativeSource::RealPool,
            None,
            1.0,
            &[],
            (2, 2),
            NegativeRngs {
                choice: &mut a,
                pool: &mut b,
                latent: &mut c,
            },
        );
        assert!(r.is_err());
        let r = sample_negative(
            &NegativeSource::Flow,
            None,
            1.0,
            &bank(),
            (2, 2),
            NegativeRngs {
                choice: &mut a,
                pool: &mut b,
                latent: &mut c,
            },
        );
        assert!(r.is_err());
        assert!(NegativeSource::from_b(1.2).is_err());
        let r = sample_negative(
            &NegativeSource::Flow,
            Some(&flow()),
            0.0,
            &bank(),
            (2, 2),
            NegativeRngs {
                choice: &mut a,
                pool: &mut b,
                latent: &mut c,
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn temperature_scales_latents() {
        let pool = Tensor::zeros(vec![0, 2]);
        let f = flow();
        let get = |t: f64| {
            let (mut a, mut b, mut c) = (rng_from_seed(3), rng_from_seed(4), rng_from_seed(5));
            sample_negative_points(
                &NegativeSource::Flow,
                Some(&f),
                t,
                &pool,
                50,
                NegativeRngs {
                    choice: &mut a,
                    pool: &mut b,
                    latent: &mut c,
                },
            )
            .unwrap()
        };
        let (one, two) = (get(1.0), get(2.0));
        for (x, y) in one.latent.data().iter().zip(two.latent.data()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }
}
