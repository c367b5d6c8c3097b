//! Held-out patterns: random entries, whole tubes, and the quadrant design.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::distributions::{substream, ChainRng};
use crate::error::{Error, Result};
use crate::tensor::{Mask, SpatioTensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    /// Uniformly chosen observed entries.
    Rm { rate: f64 },
    /// Whole `(m, ·, p)` tubes.
    Nm { rate: f64 },
    /// Whole `(·, t, p)` tubes.
    Sbm { rate: f64 },
    /// Per-quadrant random missing over the first two modes: `diagonal` on the two
    /// diagonal quadrants, `off_diagonal` on the others.
    Quadrant { diagonal: f64, off_diagonal: f64 },
}

impl Scenario {
    pub fn quadrant() -> Self {
        Scenario::Quadrant {
            diagonal: 0.6,
            off_diagonal: 0.8,
        }
    }

    fn validate(&self) -> Result<()> {
        let rates: &[f64] = match self {
            Scenario::Rm { rate } | Scenario::Nm { rate } | Scenario::Sbm { rate } => &[*rate][..],
            Scenario::Quadrant { diagonal, off_diagonal } => &[*diagonal, *off_diagonal][..],
        };
        for &r in rates {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Parameter(format!("missing rate {r} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MissingOutcome {
    pub train: SpatioTensor,
    /// Newly hidden entries that were observed in the input.
    pub test: Mask,
    /// Hidden fraction of the originally observed entries.
    pub achieved_rate: f64,
}

fn hide_random(candidates: &[usize], rate: f64, rng: &mut ChainRng, hidden: &mut [bool]) {
    let k = (rate * candidates.len() as f64).floor() as usize;
    for i in index::sample(rng, candidates.len(), k) {
        hidden[candidates[i]] = true;
    }
}

/// Hides entries of `t` according to `scenario`, using the `mask` substream of `seed`.
pub fn apply_missing(t: &SpatioTensor, scenario: Scenario, seed: u64) -> Result<MissingOutcome> {
    scenario.validate()?;
    let dims = t.dims();
    let mask = t.mask();
    let mut rng = substream(seed, "mask");
    let mut hidden = vec![false; dims.len()];
    match scenario {
        Scenario::Rm { rate } => hide_random(mask.observed(), rate, &mut rng, &mut hidden),
        Scenario::Nm { rate } | Scenario::Sbm { rate } => {
            let by_time = matches!(scenario, Scenario::Sbm { .. });
            let (outer, inner) = if by_time { (dims.t, dims.m) } else { (dims.m, dims.t) };
            let tubes = outer * dims.p;
            let k = ((rate * tubes as f64).round() as usize).min(tubes);
            for tube in index::sample(&mut rng, tubes, k) {
                let (a, p) = (tube % outer, tube / outer);
                for b in 0..inner {
                    let idx = if by_time {
                        dims.index(b, a, p)
                    } else {
                        dims.index(a, b, p)
                    };
                    hidden[idx] = true;
                }
            }
        }
        Scenario::Quadrant { diagonal, off_diagonal } => {
            let (hm, ht) = (dims.m / 2, dims.t / 2);
            let mut quads: [Vec<usize>; 4] = Default::default();
            for &i in mask.observed() {
                let (m, tt, _) = dims.coords(i);
                quads[usize::from(m >= hm) + 2 * usize::from(tt >= ht)].push(i);
            }
            for (q, cand) in quads.iter().enumerate() {
                let rate = if q == 0 || q == 3 { diagonal } else { off_diagonal };
                hide_random(cand, rate, &mut rng, &mut hidden);
            }
        }
    }
    let test_bits: Vec<bool> = (0..dims.len()).map(|i| hidden[i] && mask.is_observed(i)).collect();
    let test = Mask::new(dims, test_bits)?;
    let train_mask = mask.difference(&test)?;
    let achieved_rate = if mask.count() == 0 {
        0.0
    } else {
        test.count() as f64 / mask.count() as f64
    };
    Ok(MissingOutcome {
        train: t.with_mask(train_mask)?,
        test,
        achieved_rate,
    })
}
