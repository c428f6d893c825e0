//! Function-evaluation accounting for the old policy.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nnet::VelocityModel;

fn check(steps: usize, tau: usize, depth: usize) -> Result<()> {
    if depth == 0 || depth > steps || tau > steps - depth || depth > 63 {
        return Err(Error::Schedule(format!(
            "invalid window tau = {tau}, depth = {depth} for {steps} steps"
        )));
    }
    Ok(())
}

/// Evaluations needed by the shared-prefix tree: one per unique edge.
pub fn nfe_exact(steps: usize, tau: usize, depth: usize) -> Result<u64> {
    check(steps, tau, depth)?;
    let leaves = 1u64 << (depth - 1);
    let branching: u64 = (1..depth).map(|k| 1u64 << k).sum();
    Ok(tau as u64 + branching + leaves + leaves * (steps - tau - depth) as u64)
}

/// `tau + G (T - tau)`: prefix shared, everything after it per leaf.
pub fn nfe_prefix_bound(steps: usize, tau: usize, depth: usize) -> Result<u64> {
    check(steps, tau, depth)?;
    Ok(tau as u64 + (1u64 << (depth - 1)) * (steps - tau) as u64)
}

/// `G T`: every leaf simulated independently.
pub fn nfe_naive(steps: usize, depth: usize) -> u64 {
    (1u64 << (depth.max(1) - 1)) * steps as u64
}

/// One row of the NFE report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NfeRow {
    pub tau: usize,
    pub naive: u64,
    pub prefix_bound: u64,
    pub exact: u64,
    pub per_sample: f64,
}

pub fn nfe_report(steps: usize, depth: usize) -> Result<Vec<NfeRow>> {
    check(steps, 0, depth)?;
    (0..=steps - depth)
        .map(|tau| {
            let exact = nfe_exact(steps, tau, depth)?;
            Ok(NfeRow {
                tau,
                naive: nfe_naive(steps, depth),
                prefix_bound: nfe_prefix_bound(steps, tau, depth)?,
                exact,
                per_sample: exact as f64 / (1u64 << (depth - 1)) as f64,
            })
        })
        .collect()
}

pub fn nfe_report_csv(rows: &[NfeRow]) -> String {
    let mut out = String::from("tau,naive,paper_bound,exact,per_sample\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.tau, r.naive, r.prefix_bound, r.exact, r.per_sample
        ));
    }
    out
}

/// Wraps a model and counts velocity evaluations.
pub struct CountingModel<'a, M: ?Sized> {
    inner: &'a M,
    count: AtomicU64,
}

impl<'a, M: VelocityModel + ?Sized> CountingModel<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<M: VelocityModel + ?Sized> VelocityModel for CountingModel<'_, M> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }
    fn velocity(&self, x: &[f64], t: f64, class: usize) -> Result<Vec<f64>> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.velocity(x, t, class)
    }
    fn accumulate_vjp(&self, x: &[f64], t: f64, class: usize, upstream: &[f64], grad: &mut [f64]) -> Result<()> {
        self.inner.accumulate_vjp(x, t, class, upstream, grad)
    }
}
