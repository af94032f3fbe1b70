//! Training objectives over network outputs and their gradients.

use serde::{Deserialize, Serialize};

use super::tensor::{Act, Real};
use crate::divergence::{huber_elem, huber_elem_grad, jsd, jsd_grad_q, kld, HUBER_DELTA, KLD_SMOOTHING};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Sum over columns of `JSD(target, output)`.
    ColumnJsd,
    /// Sum over columns of `KL(target ‖ output)`.
    ColumnKld,
    /// Mean elementwise Huber penalty (threshold 1).
    Huber,
}

impl Loss {
    /// Per-example losses.
    pub fn per_example<T: Real>(&self, out: &Act<T>, target: &Act<T>) -> Result<Vec<f64>> {
        check(out, target)?;
        let (h, w) = (out.h, out.w);
        let per = out.c * h * w;
        let samples = sample_rows(out);
        let targets = sample_rows(target);
        Ok(samples
            .iter()
            .zip(&targets)
            .map(|(q, p)| match self {
                Loss::ColumnJsd | Loss::ColumnKld => (0..w)
                    .map(|c| {
                        let pc = column(p, h, w, c);
                        let qc = column(q, h, w, c);
                        if *self == Loss::ColumnJsd {
                            jsd(&pc, &qc)
                        } else {
                            kld(&pc, &qc, KLD_SMOOTHING)
                        }
                    })
                    .sum(),
                Loss::Huber => {
                    q.iter()
                        .zip(p)
                        .map(|(a, b)| huber_elem(a - b, HUBER_DELTA))
                        .sum::<f64>()
                        / per as f64
                }
            })
            .collect())
    }

    /// Batch-mean loss and its gradient with respect to `out`.
    pub fn value_and_grad<T: Real>(&self, out: &Act<T>, target: &Act<T>) -> Result<(f64, Act<T>)> {
        let losses = self.per_example(out, target)?;
        let n = out.n as f64;
        let value = losses.iter().sum::<f64>() / n;
        let (h, w) = (out.h, out.w);
        let per = out.c * h * w;
        let mut grad = Act::zeros(out.c, out.n, out.h, out.w);
        let samples = sample_rows(out);
        let targets = sample_rows(target);
        let mut g_col = vec![0.0; h];
        for (s, (q, p)) in samples.iter().zip(&targets).enumerate() {
            let mut g = vec![0.0; per];
            match self {
                Loss::ColumnJsd => {
                    for c in 0..w {
                        let pc = column(p, h, w, c);
                        let qc = column(q, h, w, c);
                        jsd_grad_q(&pc, &qc, &mut g_col);
                        for r in 0..h {
                            g[r * w + c] = g_col[r];
                        }
                    }
                }
                Loss::ColumnKld => {
                    for c in 0..w {
                        let pc = column(p, h, w, c);
                        let qc = column(q, h, w, c);
                        kld_grad_q(&pc, &qc, &mut g_col);
                        for r in 0..h {
                            g[r * w + c] = g_col[r];
                        }
                    }
                }
                Loss::Huber => {
                    for ((gi, a), b) in g.iter_mut().zip(q).zip(p) {
                        *gi = huber_elem_grad(a - b, HUBER_DELTA) / per as f64;
                    }
                }
            }
            write_sample(&mut grad, s, &g, 1.0 / n);
        }
        Ok((value, grad))
    }
}

/// Gradient of the smoothed, renormalized KL divergence in `q`.
fn kld_grad_q(p: &[f64], q: &[f64], out: &mut [f64]) {
    let e = KLD_SMOOTHING;
    let zp: f64 = p.iter().map(|v| v + e).sum();
    let zq: f64 = q.iter().map(|v| v + e).sum();
    // d/dq_i of -Σ_j p̃_j ln(q_j + e) + ln zq  (p̃ sums to 1)
    for ((o, &a), &b) in out.iter_mut().zip(p).zip(q) {
        *o = -((a + e) / zp) / (b + e) + 1.0 / zq;
    }
}

fn check<T: Real>(out: &Act<T>, target: &Act<T>) -> Result<()> {
    if out.shape() != target.shape() {
        return Err(Error::mismatch(
            format!("{:?}", out.shape()),
            format!("{:?}", target.shape()),
        ));
    }
    if out.n == 0 {
        return Err(Error::DegenerateInput("empty batch".into()));
    }
    Ok(())
}

/// Per-sample values, channel-major then spatial.
fn sample_rows<T: Real>(a: &Act<T>) -> Vec<Vec<f64>> {
    let s = a.spatial();
    (0..a.n)
        .map(|n| {
            (0..a.c)
                .flat_map(|ch| {
                    let base = a.plane(ch, n);
                    a.data[base..base + s].iter().map(|v| v.as_f64())
                })
                .collect()
        })
        .collect()
}

fn write_sample<T: Real>(a: &mut Act<T>, n: usize, values: &[f64], scale: f64) {
    let s = a.spatial();
    for ch in 0..a.c {
        let base = a.plane(ch, n);
        for k in 0..s {
            a.data[base + k] = T::of(values[ch * s + k] * scale);
        }
    }
}

fn column(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    (0..h).map(|r| x[r * w + c]).collect()
}
