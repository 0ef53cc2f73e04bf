#![allow(dead_code)]

use amtc::carve::compensate_column;
use amtc::presence::{decide, merge_segments, rer_column, DetectionParams};
use amtc::{OnlineEstimate, Spectrogram, TransitionModel};
use rand::Rng;

fn w(lambda: f64, log_p: f64) -> f64 {
    if log_p == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        lambda * log_p
    }
}

/// Accumulates `z` (columns) from `anchor`, or from the prior when there is
/// none. Returns the accumulated columns and the lowest-index predecessors.
pub fn accumulate_from(
    columns: &[Vec<f64>],
    anchor: Option<&[f64]>,
    model: &TransitionModel,
) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let m_len = model.bins();
    let lambda = model.lambda();
    let mut g: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    let mut arg: Vec<Vec<usize>> = Vec::with_capacity(columns.len());
    for (i, z) in columns.iter().enumerate() {
        let prev = if i == 0 { anchor } else { Some(g[i - 1].as_slice()) };
        let mut col = vec![0.0; m_len];
        let mut from = vec![0usize; m_len];
        for m in 0..m_len {
            match prev {
                None => col[m] = z[m] + w(lambda, model.log_prior()[m]),
                Some(prev) => {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_j = 0;
                    for (j, p) in prev.iter().enumerate() {
                        let v = p + w(lambda, model.log_transition(j, m));
                        if v > best {
                            best = v;
                            best_j = j;
                        }
                    }
                    col[m] = best + z[m];
                    from[m] = best_j;
                }
            }
        }
        g.push(col);
        arg.push(from);
    }
    (g, arg)
}

fn lowest_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn backtrack(arg: &[Vec<usize>], last: &[f64], from: usize) -> Vec<usize> {
    let width = arg.len();
    let mut out = vec![0; width - from];
    let mut f = lowest_argmax(last);
    for i in (from..width).rev() {
        out[i - from] = f;
        if i > 0 {
            f = arg[i][f];
        }
    }
    out
}

/// Re-solves the whole sliding window from scratch on every frame.
///
/// Layer 1 is accumulated over the full history. Each later layer carves the
/// window from the layer above and accumulates from its own accumulated column
/// just left of the window, as computed on the previous frame.
pub struct BruteForce {
    k1: usize,
    k2: usize,
    traces: usize,
    models: Vec<TransitionModel>,
    det: DetectionParams,
    frames: Vec<Vec<f64>>,
    previous_g: Vec<(usize, Vec<Vec<f64>>)>,
    state: Option<(usize, Vec<Vec<usize>>, Vec<Vec<f64>>, Vec<Vec<bool>>)>,
    emitted: usize,
    pub columns: u64,
}

impl BruteForce {
    pub fn new(k1: usize, k2: usize, traces: usize, models: Vec<TransitionModel>, det: DetectionParams) -> Self {
        BruteForce {
            k1,
            k2,
            traces,
            models,
            det,
            frames: Vec::new(),
            previous_g: Vec::new(),
            state: None,
            emitted: 0,
            columns: 0,
        }
    }

    fn model(&self, l: usize) -> &TransitionModel {
        &self.models[l.min(self.models.len() - 1)]
    }

    pub fn push(&mut self, frame: &[f64]) -> Option<OnlineEstimate> {
        self.frames.push(frame.to_vec());
        let tau2 = self.frames.len() - 1;
        let tau1 = tau2.saturating_sub(self.k1 + self.k2);
        let mut window: Vec<Vec<f64>> = self.frames[tau1..].to_vec();
        let mut traces = Vec::new();
        let mut rers = Vec::new();
        let mut masks = Vec::new();
        let mut new_g = Vec::new();
        for l in 0..self.traces {
            if l > 0 {
                let above: &Vec<usize> = &traces[l - 1];
                window = window
                    .iter()
                    .zip(above)
                    .map(|(col, &f)| {
                        let mut out = vec![0.0; col.len()];
                        compensate_column(col, f, &mut out);
                        out
                    })
                    .collect();
            }
            let trace = if l == 0 {
                let (g, arg) = accumulate_from(&self.frames, None, self.model(0));
                self.columns += g.len() as u64;
                let t = backtrack(&arg, &g[tau2], tau1);
                new_g.push((tau1, g[tau1..].to_vec()));
                t
            } else {
                let anchor = if tau1 == 0 {
                    None
                } else {
                    let (start, g) = &self.previous_g[l];
                    Some(g[tau1 - 1 - start].clone())
                };
                let (g, arg) = accumulate_from(&window, anchor.as_deref(), self.model(l));
                self.columns += g.len() as u64;
                let t = backtrack(&arg, g.last().unwrap(), 0);
                new_g.push((tau1, g));
                t
            };
            let r: Vec<f64> = window
                .iter()
                .zip(&trace)
                .map(|(col, &f)| rer_column(col, f, self.det.delta_f))
                .collect();
            masks.push(merge_segments(&decide(&r, self.det.delta_rer), self.det.delta1, self.det.delta2));
            rers.push(r);
            traces.push(trace);
        }
        self.previous_g = new_g;
        self.state = Some((tau1, traces, rers, masks));
        if tau2 >= self.k2 {
            let n = tau2 - self.k2;
            self.emitted = n + 1;
            Some(self.estimate(n))
        } else {
            None
        }
    }

    fn estimate(&self, frame: usize) -> OnlineEstimate {
        let (tau1, traces, rers, masks) = self.state.as_ref().unwrap();
        let i = frame - tau1;
        OnlineEstimate {
            frame,
            bins: traces.iter().map(|t| t[i]).collect(),
            voiced: masks.iter().map(|m| m[i]).collect(),
            rer: rers.iter().map(|r| r[i]).collect(),
        }
    }

    pub fn finalize(&mut self) -> Vec<OnlineEstimate> {
        let out = (self.emitted..self.frames.len()).map(|n| self.estimate(n)).collect();
        self.emitted = self.frames.len();
        out
    }

    pub fn run(mut self, z: &Spectrogram) -> Vec<OnlineEstimate> {
        let mut out: Vec<OnlineEstimate> = z.columns().filter_map(|c| self.push(c)).collect();
        out.extend(self.finalize());
        out
    }
}

/// A random nonnegative spectrogram with one or two wandering ridges.
pub fn random_ridges(rng: &mut impl Rng, bins: usize, frames: usize) -> Spectrogram {
    let ridges = rng.gen_range(1..=2);
    let mut pos: Vec<f64> = (0..ridges).map(|_| rng.gen_range(1.0..(bins - 1) as f64)).collect();
    let heights: Vec<f64> = (0..ridges).map(|_| rng.gen_range(1.0..4.0)).collect();
    let columns: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            for p in &mut pos {
                *p = (*p + rng.gen_range(-0.8..0.8)).clamp(0.0, (bins - 1) as f64);
            }
            (0..bins)
                .map(|m| {
                    let mut v = rng.gen_range(0.0..1.0);
                    for (p, h) in pos.iter().zip(&heights) {
                        let d = m as f64 - p;
                        v += h * (-d * d / 2.0).exp();
                    }
                    v
                })
                .collect()
        })
        .collect();
    Spectrogram::from_columns_unit(&columns).unwrap()
}

/// Exact equality, treating equal infinities as equal.
pub fn same_estimates(a: &[OnlineEstimate], b: &[OnlineEstimate]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.frame == y.frame
                && x.bins == y.bins
                && x.voiced == y.voiced
                && x.rer.iter().zip(&y.rer).all(|(p, q)| p == q || (p.is_nan() && q.is_nan()))
        })
}
