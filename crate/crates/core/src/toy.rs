//! The conditional 2-D toy task: one Gaussian arm per class, arms evenly
//! spaced on a circle.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTask {
    pub num_classes: usize,
    pub radius: f64,
    pub std: f64,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            num_classes: 4,
            radius: 2.0,
            std: 0.25,
        }
    }
}

/// One labelled data point.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub class: usize,
    pub x: Vec<f64>,
}

impl ToyTask {
    pub fn class_mean(&self, class: usize) -> [f64; 2] {
        let angle = 2.0 * PI * class as f64 / self.num_classes as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }

    pub fn sample_class<R: Rng>(&self, class: usize, rng: &mut R) -> Vec<f64> {
        let mu = self.class_mean(class);
        mu.iter()
            .map(|m| m + self.std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `per_class` points for every class, class-major order.
    pub fn generate(&self, per_class: usize, seed: u64) -> Vec<Sample> {
        let mut rng = seeded(seed, 0xDA7A);
        (0..self.num_classes)
            .flat_map(|c| (0..per_class).map(move |_| c))
            .map(|class| Sample {
                class,
                x: self.sample_class(class, &mut rng),
            })
            .collect()
    }
}

pub fn to_csv(data: &[Sample]) -> String {
    let mut out = String::from("class,x0,x1\n");
    for s in data {
        out.push_str(&format!("{},{},{}\n", s.class, s.x[0], s.x[1]));
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<Sample>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "class,x0,x1" => {}
        other => {
            return Err(Error::Config(format!(
                "data file header must be `class,x0,x1`, found {other:?}"
            )))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Config(format!("data line {}: cannot parse `{line}`", i + 2));
            let mut parts = line.split(',');
            let class = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
            let x: Vec<f64> = parts
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            if x.len() != 2 {
                return Err(bad());
            }
            Ok(Sample { class, x })
        })
        .collect()
}
