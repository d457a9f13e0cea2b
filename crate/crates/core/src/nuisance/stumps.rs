//! Gradient boosting with depth-1 regression trees.

use rand::seq::index::sample;

use crate::seed::Stream;

/// Boosting settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StumpConfig {
    pub rounds: usize,
    pub shrinkage: f64,
    /// Fraction of training rows drawn (without replacement) per round.
    pub subsample: f64,
    pub min_leaf: usize,
}

impl Default for StumpConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            shrinkage: 0.1,
            subsample: 0.5,
            min_leaf: 10,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Stump {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

impl Stump {
    fn eval(&self, x: &[f64]) -> f64 {
        if x[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

/// Additive model `init + shrinkage * sum stumps`.
#[derive(Debug, Clone)]
pub(crate) struct Ensemble {
    init: f64,
    shrinkage: f64,
    stumps: Vec<Stump>,
}

impl Ensemble {
    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        self.init + self.shrinkage * self.stumps.iter().map(|s| s.eval(x)).sum::<f64>()
    }
}

/// Training rows presorted once per feature.
struct Presorted<'a> {
    rows: &'a [&'a [f64]],
    order: Vec<Vec<usize>>,
}

impl<'a> Presorted<'a> {
    fn new(rows: &'a [&'a [f64]]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let order = (0..d)
            .map(|j| {
                let mut idx: Vec<usize> = (0..rows.len()).collect();
                idx.sort_by(|&a, &b| rows[a][j].total_cmp(&rows[b][j]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { rows, order }
    }

    /// Least-squares split of `target` over the rows in `mask`.
    /// Returns `(feature, threshold)`.
    fn best_split(&self, target: &[f64], mask: &[bool], min_leaf: usize) -> Option<(usize, f64)> {
        let (mut total, mut count) = (0.0, 0usize);
        for (t, &m) in target.iter().zip(mask) {
            if m {
                total += t;
                count += 1;
            }
        }
        if count < 2 * min_leaf.max(1) {
            return None;
        }
        let base = total * total / count as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for (j, order) in self.order.iter().enumerate() {
            let (mut left_sum, mut left_n) = (0.0, 0usize);
            let mut prev: Option<usize> = None;
            for &i in order {
                if !mask[i] {
                    continue;
                }
                if let Some(p) = prev {
                    let (a, b) = (self.rows[p][j], self.rows[i][j]);
                    let right_n = count - left_n;
                    if a < b && left_n >= min_leaf && right_n >= min_leaf {
                        let right_sum = total - left_sum;
                        let gain = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64 - base;
                        if best.is_none_or(|(g, _, _)| gain > g) {
                            best = Some((gain, j, 0.5 * (a + b)));
                        }
                    }
                }
                left_sum += target[i];
                left_n += 1;
                prev = Some(i);
            }
        }
        best.filter(|(g, _, _)| *g > 0.0).map(|(_, j, t)| (j, t))
    }
}

fn draw_mask(n: usize, fraction: f64, rng: &mut Stream) -> Vec<bool> {
    let k = ((fraction * n as f64).floor() as usize).clamp(1.min(n), n);
    let mut mask = vec![false; n];
    if k == n {
        mask.fill(true);
    } else {
        for i in sample(rng, n, k) {
            mask[i] = true;
        }
    }
    mask
}

/// Squared-error boosting. Zero rounds give the sample mean.
pub(crate) fn fit_regression(rows: &[&[f64]], y: &[f64], cfg: &StumpConfig, rng: &mut Stream) -> Ensemble {
    let n = rows.len();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut ens = Ensemble {
        init,
        shrinkage: cfg.shrinkage,
        stumps: Vec::with_capacity(cfg.rounds),
    };
    let sorted = Presorted::new(rows);
    let mut fitted = vec![init; n];
    let mut resid = vec![0.0; n];
    for _ in 0..cfg.rounds {
        for i in 0..n {
            resid[i] = y[i] - fitted[i];
        }
        let mask = draw_mask(n, cfg.subsample, rng);
        let Some((feature, threshold)) = sorted.best_split(&resid, &mask, cfg.min_leaf) else {
            continue;
        };
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for i in (0..n).filter(|&i| mask[i]) {
            let side = usize::from(rows[i][feature] > threshold);
            sums[side] += resid[i];
            counts[side] += 1;
        }
        let stump = Stump {
            feature,
            threshold,
            left: sums[0] / counts[0] as f64,
            right: sums[1] / counts[1] as f64,
        };
        for i in 0..n {
            fitted[i] += cfg.shrinkage * stump.eval(rows[i]);
        }
        ens.stumps.push(stump);
    }
    ens
}

/// Deviance boosting for class probabilities: a single logit for two classes,
/// one score per class with a softmax link otherwise. Zero rounds give the
/// class frequencies.
pub(crate) struct Classifier {
    scores: Vec<Ensemble>,
}

impl Classifier {
    pub(crate) fn fit(rows: &[&[f64]], labels: &[usize], m: usize, cfg: &StumpConfig, rng: &mut Stream) -> Self {
        let n = rows.len();
        let mut freq = vec![0.0; m];
        for &y in labels {
            freq[y] += 1.0;
        }
        for f in &mut freq {
            *f /= n as f64;
        }
        let sorted = Presorted::new(rows);
        if m == 2 {
            let init = (freq[1] / freq[0]).ln();
            let targets: Vec<f64> = labels.iter().map(|&y| f64::from(u8::from(y == 1))).collect();
            let ens = boost_logit(&sorted, &targets, init, cfg, rng);
            return Self { scores: vec![ens] };
        }
        // Multiclass: one stump per class per round on the shared softmax.
        let mut ens: Vec<Ensemble> = freq
            .iter()
            .map(|f| Ensemble {
                init: f.ln(),
                shrinkage: cfg.shrinkage,
                stumps: Vec::new(),
            })
            .collect();
        let mut f: Vec<Vec<f64>> = (0..m).map(|c| vec![ens[c].init; n]).collect();
        let factor = (m as f64 - 1.0) / m as f64;
        let mut p = vec![0.0; m];
        let mut resid = vec![vec![0.0; n]; m];
        let mut hess = vec![vec![0.0; n]; m];
        for _ in 0..cfg.rounds {
            for i in 0..n {
                for c in 0..m {
                    p[c] = f[c][i];
                }
                softmax(&mut p);
                for c in 0..m {
                    resid[c][i] = f64::from(u8::from(labels[i] == c)) - p[c];
                    hess[c][i] = p[c] * (1.0 - p[c]);
                }
            }
            let mask = draw_mask(n, cfg.subsample, rng);
            for c in 0..m {
                if let Some(stump) = newton_stump(&sorted, &resid[c], &hess[c], &mask, factor, cfg.min_leaf) {
                    for i in 0..n {
                        f[c][i] += cfg.shrinkage * stump.eval(rows[i]);
                    }
                    ens[c].stumps.push(stump);
                }
            }
        }
        Self { scores: ens }
    }

    pub(crate) fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        if self.scores.len() == 1 {
            let q = sigmoid(self.scores[0].predict(x));
            out[0] = 1.0 - q;
            out[1] = q;
            return;
        }
        for (o, e) in out.iter_mut().zip(&self.scores) {
            *o = e.predict(x);
        }
        softmax(out);
    }
}

fn boost_logit(sorted: &Presorted<'_>, targets: &[f64], init: f64, cfg: &StumpConfig, rng: &mut Stream) -> Ensemble {
    let n = targets.len();
    let mut ens = Ensemble {
        init,
        shrinkage: cfg.shrinkage,
        stumps: Vec::with_capacity(cfg.rounds),
    };
    let mut f = vec![init; n];
    let mut resid = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.rounds {
        for i in 0..n {
            let p = sigmoid(f[i]);
            resid[i] = targets[i] - p;
            hess[i] = p * (1.0 - p);
        }
        let mask = draw_mask(n, cfg.subsample, rng);
        if let Some(stump) = newton_stump(sorted, &resid, &hess, &mask, 1.0, cfg.min_leaf) {
            for i in 0..n {
                f[i] += cfg.shrinkage * stump.eval(sorted.rows[i]);
            }
            ens.stumps.push(stump);
        }
    }
    ens
}

/// Stump split on residuals with Newton leaf values `factor * sum r / sum h`.
fn newton_stump(
    sorted: &Presorted<'_>,
    resid: &[f64],
    hess: &[f64],
    mask: &[bool],
    factor: f64,
    min_leaf: usize,
) -> Option<Stump> {
    let (feature, threshold) = sorted.best_split(resid, mask, min_leaf)?;
    let mut r = [0.0; 2];
    let mut h = [0.0; 2];
    for i in (0..resid.len()).filter(|&i| mask[i]) {
        let side = usize::from(sorted.rows[i][feature] > threshold);
        r[side] += resid[i];
        h[side] += hess[i];
    }
    let leaf = |r: f64, h: f64| factor * r / h.max(1e-12);
    Some(Stump {
        feature,
        threshold,
        left: leaf(r[0], h[0]),
        right: leaf(r[1], h[1]),
    })
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

fn softmax(v: &mut [f64]) {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - top).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;
    use rand::Rng;

    #[test]
    fn zero_rounds_is_the_mean() {
        let xs: Vec<[f64; 1]> = (0..30).map(|i| [i as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| &r[..]).collect();
        let y: Vec<f64> = (0..30).map(|i| (i % 7) as f64 * 0.3).collect();
        let cfg = StumpConfig {
            rounds: 0,
            ..Default::default()
        };
        let e = fit_regression(&rows, &y, &cfg, &mut stream(0));
        assert_eq!(e.predict(&[3.0]), y.iter().sum::<f64>() / 30.0);
    }

    #[test]
    fn learns_a_step() {
        let mut rng = stream(5);
        let xs: Vec<[f64; 1]> = (0..2000).map(|_| [rng.random_range(-1.0..1.0)]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| &r[..]).collect();
        let y: Vec<f64> = xs.iter().map(|x| if x[0] > 0.2 { 2.0 } else { -1.0 }).collect();
        let e = fit_regression(&rows, &y, &StumpConfig::default(), &mut stream(6));
        assert!((e.predict(&[0.8]) - 2.0).abs() < 0.05);
        assert!((e.predict(&[-0.5]) + 1.0).abs() < 0.05);
    }

    #[test]
    fn classifier_probabilities() {
        let mut rng = stream(7);
        let xs: Vec<[f64; 1]> = (0..3000).map(|_| [rng.random_range(-1.0..1.0)]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| &r[..]).collect();
        for m in [2usize, 3] {
            let labels: Vec<usize> = xs
                .iter()
                .map(|x| {
                    if x[0] < 0.0 {
                        0
                    } else {
                        1 + usize::from(m == 3 && x[0] > 0.5)
                    }
                })
                .collect();
            let c = Classifier::fit(&rows, &labels, m, &StumpConfig::default(), &mut stream(8));
            let mut p = vec![0.0; m];
            c.probs_into(&[-0.5], &mut p);
            assert!(p[0] > 0.9, "{m}: {p:?}");
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            c.probs_into(&[0.25], &mut p);
            assert!(p[1] > 0.9, "{m}: {p:?}");
        }
    }

    #[test]
    fn classifier_zero_rounds_gives_frequencies() {
        let xs: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| &r[..]).collect();
        let labels = vec![0, 1, 1, 2, 2, 2, 2, 0, 1, 2];
        let cfg = StumpConfig {
            rounds: 0,
            ..Default::default()
        };
        let c = Classifier::fit(&rows, &labels, 3, &cfg, &mut stream(0));
        let mut p = [0.0; 3];
        c.probs_into(&[1.0], &mut p);
        for (got, want) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
