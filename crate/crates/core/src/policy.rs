//! Decomposed discrete policies.
//!
//! Each of the `M` action dimensions is discretized independently into `N`
//! values, so a state maps to an `M × N` matrix. Row `m` of that matrix is
//! either a vector of logits (actor heads) or of decomposed action values
//! (value heads, turned into a policy by a Boltzmann distribution with
//! temperature `α`).
//!
//! Entropies are reported in normalized form: each discrete action stands
//! for a bin of width `2/N` on `[-1, 1]`, so bin mass `π` becomes density
//! `π·N/2` and
//!
//! ```text
//! H_m = −Σ_n π_{m,n} · ln(π_{m,n} · N / 2)
//! ```
//!
//! which approximates the differential entropy of the implied piecewise
//! constant density. A uniform row scores `ln 2` whatever `N` is, and a
//! one-hot row scores `−ln(N/2)`.

use rand::Rng;

use crate::error::{Error, Result};

/// Where the `N` grid values sit inside `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPlacement {
    /// Centres of `N` equal bins: `−1 + (2n+1)/N` for `n = 0..N`.
    #[default]
    Centered,
    /// Uniform grid including both endpoints: `−1 + 2n/(N−1)`.
    Endpoints,
}

/// Per-dimension map between discrete indices and continuous action values.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    dims: usize,
    bins: usize,
    placement: GridPlacement,
    values: Vec<f64>,
}

impl ActionGrid {
    /// Bin-centred grid with `bins` values on each of `dims` dimensions.
    pub fn new(dims: usize, bins: usize) -> Result<Self> {
        Self::with_placement(dims, bins, GridPlacement::Centered)
    }

    pub fn with_placement(dims: usize, bins: usize, placement: GridPlacement) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Parameter("action grid needs at least one dimension".into()));
        }
        if bins < 2 {
            return Err(Error::Parameter(format!(
                "action grid needs at least 2 values per dimension, got {bins}"
            )));
        }
        let n = bins as f64;
        let values = (0..bins)
            .map(|i| match placement {
                GridPlacement::Centered => -1.0 + (2 * i + 1) as f64 / n,
                GridPlacement::Endpoints => -1.0 + 2.0 * i as f64 / (n - 1.0),
            })
            .collect();
        Ok(Self {
            dims,
            bins,
            placement,
            values,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn placement(&self) -> GridPlacement {
        self.placement
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Index of the grid value closest to `v` (ties toward the lower index).
    pub fn nearest_index(&self, v: f64) -> usize {
        let n = self.bins as f64;
        let guess = match self.placement {
            GridPlacement::Centered => ((v + 1.0) * n / 2.0).floor(),
            GridPlacement::Endpoints => ((v + 1.0) * (n - 1.0) / 2.0).round(),
        };
        let mut best = if guess.is_nan() {
            0
        } else {
            guess.clamp(0.0, n - 1.0) as usize
        };
        // The closed forms can be off by one at bin edges.
        for cand in best.saturating_sub(1)..(best + 2).min(self.bins) {
            if (self.values[cand] - v).abs() < (self.values[best] - v).abs()
                || ((self.values[cand] - v).abs() == (self.values[best] - v).abs() && cand < best)
            {
                best = cand;
            }
        }
        best
    }

    pub fn action_from_indices(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.values[i]).collect()
    }
}

/// How the rows of a [`PolicyMatrix`] are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Logits,
    Advantages,
}

/// The `M × N` output of a decomposed policy head for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrix {
    pub kind: MatrixKind,
    dims: usize,
    bins: usize,
    data: Vec<f64>,
}

impl PolicyMatrix {
    pub fn new(kind: MatrixKind, dims: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims * bins {
            return Err(Error::Shape(format!(
                "{} values cannot form a {dims}x{bins} policy matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("policy matrix entry {i}")));
        }
        Ok(Self {
            kind,
            dims,
            bins,
            data,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.bins..(m + 1) * self.bins]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Independent categorical distributions, one row per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedDistribution {
    dims: usize,
    bins: usize,
    probs: Vec<f64>,
}

impl DecomposedDistribution {
    /// Wraps row-stochastic probabilities, checking non-negativity and row sums.
    pub fn from_probs(dims: usize, bins: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims * bins || dims == 0 || bins == 0 {
            return Err(Error::Shape(format!(
                "{} probabilities cannot form a {dims}x{bins} distribution",
                probs.len()
            )));
        }
        for (m, row) in probs.chunks_exact(bins).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Input(format!("row {m} has a negative or NaN entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Input(format!("row {m} sums to {s}")));
            }
        }
        Ok(Self { dims, bins, probs })
    }

    /// Every row uniform.
    pub fn uniform(dims: usize, bins: usize) -> Self {
        Self {
            dims,
            bins,
            probs: vec![1.0 / bins as f64; dims * bins],
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.probs[m * self.bins..(m + 1) * self.bins]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Numerically stable softmax of `row` into `out`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `ln Σ exp(row)`, stabilized.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn rowwise_softmax(dims: usize, bins: usize, data: &[f64]) -> DecomposedDistribution {
    let mut probs = vec![0.0; data.len()];
    for (src, dst) in data.chunks_exact(bins).zip(probs.chunks_exact_mut(bins)) {
        softmax_into(src, dst);
    }
    DecomposedDistribution { dims, bins, probs }
}

/// Row-wise softmax of a logits matrix.
pub fn policy_from_logits(logits: &PolicyMatrix) -> DecomposedDistribution {
    rowwise_softmax(logits.dims, logits.bins, &logits.data)
}

/// Row-wise Boltzmann distribution `softmax(Q_d / α)`.
pub fn boltzmann_policy(values: &PolicyMatrix, alpha: f64) -> Result<DecomposedDistribution> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {alpha}"
        )));
    }
    let scaled: Vec<f64> = values.data.iter().map(|&d| d / alpha).collect();
    Ok(rowwise_softmax(values.dims, values.bins, &scaled))
}

/// A sampled or greedy joint action.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub action: Vec<f64>,
    pub indices: Vec<usize>,
    /// Product of the per-dimension probabilities of `indices`.
    pub p_joint: f64,
}

/// Draws an index from a categorical row by inverse CDF.
pub fn sample_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // Rounding left the total just under 1.
    last_positive
}

/// Samples every dimension independently.
pub fn sample_action<R: Rng + ?Sized>(
    dist: &DecomposedDistribution,
    grid: &ActionGrid,
    rng: &mut R,
) -> SampledAction {
    let mut indices = Vec::with_capacity(dist.dims);
    let mut p_joint = 1.0;
    for m in 0..dist.dims {
        let row = dist.row(m);
        let i = sample_index(row, rng);
        p_joint *= row[i];
        indices.push(i);
    }
    SampledAction {
        action: grid.action_from_indices(&indices),
        indices,
        p_joint,
    }
}

/// First index of the row maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-dimension argmax; ties go to the lowest index.
pub fn greedy_action(dist: &DecomposedDistribution, grid: &ActionGrid) -> SampledAction {
    let indices: Vec<usize> = (0..dist.dims).map(|m| argmax(dist.row(m))).collect();
    let p_joint = indices
        .iter()
        .enumerate()
        .map(|(m, &i)| dist.row(m)[i])
        .product();
    SampledAction {
        action: grid.action_from_indices(&indices),
        indices,
        p_joint,
    }
}

#[inline]
fn plogp(p: f64, scale: f64) -> f64 {
    if p > 0.0 {
        p * (p * scale).ln()
    } else {
        0.0
    }
}

/// `−Σ π ln π` of one row (`0·ln 0 = 0`).
pub fn discrete_entropy(row: &[f64]) -> f64 {
    -row.iter().map(|&p| plogp(p, 1.0)).sum::<f64>()
}

/// Normalized entropy `−Σ π ln(π·N/2)` of one row.
pub fn normalized_row_entropy(row: &[f64]) -> f64 {
    let scale = row.len() as f64 / 2.0;
    -row.iter().map(|&p| plogp(p, scale)).sum::<f64>()
}

/// Per-dimension normalized entropies and their sum.
pub fn normalized_entropy(dist: &DecomposedDistribution) -> (Vec<f64>, f64) {
    let per_dim: Vec<f64> = (0..dist.dims)
        .map(|m| normalized_row_entropy(dist.row(m)))
        .collect();
    let total = per_dim.iter().sum();
    (per_dim, total)
}

/// `Σ_m ln π_m(indices[m])`.
pub fn joint_log_prob(dist: &DecomposedDistribution, indices: &[usize]) -> Result<f64> {
    if indices.len() != dist.dims {
        return Err(Error::Shape(format!(
            "{} indices for a {}-dimensional distribution",
            indices.len(),
            dist.dims
        )));
    }
    let mut total = 0.0;
    for (m, &i) in indices.iter().enumerate() {
        if i >= dist.bins {
            return Err(Error::Input(format!(
                "index {i} out of range for {} bins",
                dist.bins
            )));
        }
        total += dist.row(m)[i].ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logits(dims: usize, bins: usize, data: Vec<f64>) -> PolicyMatrix {
        PolicyMatrix::new(MatrixKind::Logits, dims, bins, data).unwrap()
    }

    #[test]
    fn centered_grid_values() {
        let g = ActionGrid::new(1, 4).unwrap();
        assert_eq!(g.values(), &[-0.75, -0.25, 0.25, 0.75]);
        let g3 = ActionGrid::new(1, 3).unwrap();
        assert_eq!(g3.value(1), 0.0);
    }

    #[test]
    fn endpoint_grid_values() {
        let g = ActionGrid::with_placement(1, 5, GridPlacement::Endpoints).unwrap();
        assert_eq!(g.values(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_rejects_degenerate_sizes() {
        assert!(ActionGrid::new(0, 5).is_err());
        assert!(ActionGrid::new(2, 1).is_err());
    }

    #[test]
    fn nearest_index_clamps_out_of_range() {
        let g = ActionGrid::new(1, 10).unwrap();
        assert_eq!(g.nearest_index(-3.0), 0);
        assert_eq!(g.nearest_index(7.0), 9);
    }

    #[test]
    fn zero_logits_give_uniform_rows() {
        let d = policy_from_logits(&logits(2, 4, vec![0.0; 8]));
        assert!(d.as_slice().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn two_bin_closed_form() {
        let d = policy_from_logits(&logits(1, 2, vec![0.0, 3f64.ln()]));
        assert!((d.row(0)[0] - 0.25).abs() < 1e-15);
        assert!((d.row(0)[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn boltzmann_closed_form_and_limits() {
        let q = PolicyMatrix::new(MatrixKind::Advantages, 1, 2, vec![1.0, 0.0]).unwrap();
        let d = boltzmann_policy(&q, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((d.row(0)[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((d.row(0)[0] - 0.7311).abs() < 1e-4);

        let hot = boltzmann_policy(&q, 1e9).unwrap();
        assert!(hot.row(0).iter().all(|&p| (p - 0.5).abs() < 1e-8));

        assert!(matches!(boltzmann_policy(&q, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(boltzmann_policy(&q, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn greedy_rules() {
        let g = ActionGrid::new(1, 3).unwrap();
        let d = DecomposedDistribution::from_probs(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(greedy_action(&d, &g).action, vec![0.0]);

        let u = DecomposedDistribution::uniform(2, 3);
        let a = greedy_action(&u, &g);
        assert_eq!(a.indices, vec![0, 0]);
        assert_eq!(a.action, vec![g.value(0); 2]);

        let one_hot = DecomposedDistribution::from_probs(1, 3, vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(greedy_action(&one_hot, &g).indices, vec![2]);
    }

    #[test]
    fn one_hot_sampling_is_deterministic() {
        let g = ActionGrid::new(2, 3).unwrap();
        let d = DecomposedDistribution::from_probs(2, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s = sample_action(&d, &g, &mut rng);
            assert_eq!(s.indices, vec![1, 2]);
            assert_eq!(s.p_joint, 1.0);
        }
        assert_eq!(joint_log_prob(&d, &[1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_joint_probability() {
        let g = ActionGrid::new(2, 10).unwrap();
        let d = DecomposedDistribution::uniform(2, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = sample_action(&d, &g, &mut rng);
            assert!((s.p_joint - 0.01).abs() < 1e-15);
        }
        assert!((joint_log_prob(&d, &[3, 7]).unwrap() - 0.01f64.ln()).abs() < 1e-12);
        assert!(matches!(joint_log_prob(&d, &[3, 10]), Err(Error::Input(_))));
    }

    #[test]
    fn entropy_extremes() {
        for n in [2usize, 5, 20, 100] {
            let u = DecomposedDistribution::uniform(1, n);
            let (h, _) = normalized_entropy(&u);
            assert!((h[0] - std::f64::consts::LN_2).abs() < 1e-12);
        }
        let mut one_hot = vec![0.0; 20];
        one_hot[4] = 1.0;
        let d = DecomposedDistribution::from_probs(1, 20, one_hot).unwrap();
        let (h, total) = normalized_entropy(&d);
        assert!((h[0] + 10f64.ln()).abs() < 1e-12);
        assert_eq!(total, h[0]);
    }

    fn high_precision_softmax(row: &[f64]) -> Vec<f64> {
        // Compensated summation over exps relative to the row max.
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &e in &exps {
            let y = e - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        exps.iter().map(|e| e / sum).collect()
    }

    #[test]
    fn softmax_matches_compensated_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let data: Vec<f64> = (0..15).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let d = policy_from_logits(&logits(3, 5, data.clone()));
            for m in 0..3 {
                let oracle = high_precision_softmax(&data[m * 5..(m + 1) * 5]);
                for (p, q) in d.row(m).iter().zip(&oracle) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        let g = ActionGrid::new(2, 4).unwrap();
        let probs = vec![0.1, 0.2, 0.3, 0.4, 0.55, 0.05, 0.25, 0.15];
        let d = DecomposedDistribution::from_probs(2, 4, probs.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000usize;
        let mut counts = vec![0usize; 8];
        for _ in 0..draws {
            let s = sample_action(&d, &g, &mut rng);
            counts[s.indices[0]] += 1;
            counts[4 + s.indices[1]] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - draws as f64 * p).abs() < 3.0 * sigma + 1.0);
        }
    }

    #[test]
    fn dyadic_shift_is_bit_exact() {
        let base = vec![0.5, -1.25, 2.0, 0.0];
        let shifted: Vec<f64> = base.iter().map(|x| x + 8.0).collect();
        let a = policy_from_logits(&logits(1, 4, base.clone()));
        let b = policy_from_logits(&logits(1, 4, shifted.clone()));
        assert_eq!(a, b);
        let qa = PolicyMatrix::new(MatrixKind::Advantages, 1, 4, base).unwrap();
        let qb = PolicyMatrix::new(MatrixKind::Advantages, 1, 4, shifted).unwrap();
        assert_eq!(
            boltzmann_policy(&qa, 0.5).unwrap(),
            boltzmann_policy(&qb, 0.5).unwrap()
        );
    }

    proptest! {
        #[test]
        fn shift_invariance(row in prop::collection::vec(-30.0f64..30.0, 6), c in -50.0f64..50.0, alpha in 0.05f64..10.0) {
            let shifted: Vec<f64> = row.iter().map(|x| x + c).collect();
            let a = policy_from_logits(&logits(2, 3, row.clone()));
            let b = policy_from_logits(&logits(2, 3, shifted.clone()));
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            let qa = PolicyMatrix::new(MatrixKind::Advantages, 2, 3, row).unwrap();
            let qb = PolicyMatrix::new(MatrixKind::Advantages, 2, 3, shifted).unwrap();
            let ba = boltzmann_policy(&qa, alpha).unwrap();
            let bb = boltzmann_policy(&qb, alpha).unwrap();
            for (p, q) in ba.as_slice().iter().zip(bb.as_slice()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn boltzmann_is_softmax_of_scaled(row in prop::collection::vec(-10.0f64..10.0, 8), alpha in 0.01f64..100.0) {
            let q = PolicyMatrix::new(MatrixKind::Advantages, 2, 4, row.clone()).unwrap();
            let scaled = logits(2, 4, row.iter().map(|d| d / alpha).collect());
            prop_assert_eq!(boltzmann_policy(&q, alpha).unwrap(), policy_from_logits(&scaled));
        }

        #[test]
        fn entropy_bounds_and_row_sums(row in prop::collection::vec(-40.0f64..40.0, 12)) {
            let d = policy_from_logits(&logits(3, 4, row));
            let (h, _) = normalized_entropy(&d);
            for m in 0..3 {
                let s: f64 = d.row(m).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(d.row(m).iter().all(|&p| p >= 0.0));
                prop_assert!(h[m] <= std::f64::consts::LN_2 + 1e-12);
                prop_assert!(h[m] >= -(2f64).ln() - 1e-12);
            }
        }

        #[test]
        fn grid_index_round_trip(bins in 2usize..200, centered in any::<bool>()) {
            let placement = if centered { GridPlacement::Centered } else { GridPlacement::Endpoints };
            let g = ActionGrid::with_placement(1, bins, placement).unwrap();
            for n in 0..bins {
                prop_assert_eq!(g.nearest_index(g.value(n)), n);
                if n > 0 {
                    prop_assert!(g.value(n) > g.value(n - 1));
                }
            }
        }

        #[test]
        fn sampled_probability_matches_log_prob(row in prop::collection::vec(-5.0f64..5.0, 15), seed in any::<u64>()) {
            let d = policy_from_logits(&logits(3, 5, row));
            let g = ActionGrid::new(3, 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_action(&d, &g, &mut rng);
            let direct: f64 = s.indices.iter().enumerate().map(|(m, &i)| d.row(m)[i]).product();
            prop_assert!((joint_log_prob(&d, &s.indices).unwrap().exp() - direct).abs() < 1e-12);
            prop_assert!((s.p_joint - direct).abs() < 1e-15);
        }
    }
}
