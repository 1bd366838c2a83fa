//! Connectionist temporal classification: forward-backward loss with
//! analytic gradients, a brute-force path-enumeration oracle and greedy
//! decoding. The blank symbol is always id 0.

use crate::numerics::{log_softmax_rows, log_sum_exp, NumericsError, Tensor};

pub const BLANK: usize = 0;

/// Largest number of frame-label paths `ctc_brute_force` will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CtcError {
    #[error("infeasible alignment: target needs at least {required} frames, lattice has {frames}")]
    Infeasible { frames: usize, required: usize },
    #[error("label {label} outside [1, {max}]")]
    InvalidLabel { label: usize, max: usize },
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("brute force refused: {paths} paths exceeds the {limit} limit")]
    TooManyPaths { paths: f64, limit: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `T × V` per-frame log-probabilities; each row log-sum-exps to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbLattice {
    inner: Tensor,
}

impl LogProbLattice {
    pub fn new(log_probs: Tensor) -> Result<Self, CtcError> {
        let [_, v] = log_probs.shape() else {
            return Err(CtcError::InvalidLattice(format!("expected T×V, got {:?}", log_probs.shape())));
        };
        if *v < 2 {
            return Err(CtcError::InvalidLattice("vocabulary must hold blank plus one label".into()));
        }
        for t in 0..log_probs.rows() {
            let z = log_sum_exp(log_probs.row(t));
            if z.abs() > 1e-9 {
                return Err(CtcError::InvalidLattice(format!("row {t} log-sum-exp is {z}")));
            }
        }
        Ok(Self { inner: log_probs })
    }

    pub fn from_logits(logits: &Tensor) -> Result<Self, CtcError> {
        Self::new(log_softmax_rows(logits)?)
    }

    pub fn frames(&self) -> usize {
        self.inner.shape()[0]
    }

    pub fn vocab(&self) -> usize {
        self.inner.shape()[1]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.inner
    }
}

/// Target label ids, blank-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    /// Validates every id against a vocabulary of `vocab` symbols.
    pub fn new(ids: Vec<usize>, vocab: usize) -> Result<Self, CtcError> {
        if let Some(&bad) = ids.iter().find(|&&i| i == BLANK || i >= vocab) {
            return Err(CtcError::InvalidLabel { label: bad, max: vocab.saturating_sub(1) });
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Frames needed for any alignment: one per label plus a separating
    /// blank between each pair of equal neighbours.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcOutput {
    pub loss: f64,
    /// d(loss)/d(log-prob), same shape as the lattice.
    pub grad: Tensor,
}

pub fn ctc_loss(lattice: &LogProbLattice, target: &LabelSequence) -> Result<CtcOutput, CtcError> {
    let (t, v) = (lattice.frames(), lattice.vocab());
    check_labels(target, v)?;
    let (loss, grad) = forward_backward(lattice.as_tensor().data(), t, v, target.ids())?;
    Ok(CtcOutput { loss, grad: Tensor::new(vec![t, v], grad)? })
}

fn check_labels(target: &LabelSequence, v: usize) -> Result<(), CtcError> {
    match target.ids().iter().find(|&&i| i == BLANK || i >= v) {
        Some(&bad) => Err(CtcError::InvalidLabel { label: bad, max: v - 1 }),
        None => Ok(()),
    }
}

/// Log-space forward-backward over the blank-extended target. Works on any
/// real `T × V` score matrix; row normalisation is the caller's concern.
pub(crate) fn forward_backward(lp: &[f64], t: usize, v: usize, target: &[usize]) -> Result<(f64, Vec<f64>), CtcError> {
    let required = target.len() + target.windows(2).filter(|w| w[0] == w[1]).count();
    if t < required || t == 0 {
        return Err(CtcError::Infeasible { frames: t, required: required.max(1) });
    }
    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len).map(|s| if s % 2 == 0 { BLANK } else { target[s / 2] }).collect();
    let skip_ok = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;
    let at = |tt: usize, k: usize| lp[tt * v + k];

    let mut alpha = vec![ninf; t * s_len];
    alpha[0] = at(0, ext[0]);
    if s_len > 1 {
        alpha[1] = at(0, ext[1]);
    }
    for tt in 1..t {
        for s in 0..s_len {
            let prev = &alpha[(tt - 1) * s_len..tt * s_len];
            let mut terms = [prev[s], ninf, ninf];
            if s >= 1 {
                terms[1] = prev[s - 1];
            }
            if skip_ok(s) {
                terms[2] = prev[s - 2];
            }
            let acc = log_sum_exp(&terms);
            alpha[tt * s_len + s] = if acc == ninf { ninf } else { acc + at(tt, ext[s]) };
        }
    }

    // beta excludes the emission at its own frame.
    let mut beta = vec![ninf; t * s_len];
    beta[(t - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(t - 1) * s_len + s_len - 2] = 0.0;
    }
    for tt in (0..t - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(tt + 1) * s_len..(tt + 2) * s_len];
            let mut terms = [ninf; 3];
            terms[0] = next[s] + at(tt + 1, ext[s]);
            if s + 1 < s_len {
                terms[1] = next[s + 1] + at(tt + 1, ext[s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                terms[2] = next[s + 2] + at(tt + 1, ext[s + 2]);
            }
            beta[tt * s_len + s] = log_sum_exp(&terms);
        }
    }

    let last = &alpha[(t - 1) * s_len..];
    let log_p = if s_len > 1 { log_sum_exp(&[last[s_len - 1], last[s_len - 2]]) } else { last[0] };
    if !log_p.is_finite() {
        return Err(CtcError::Infeasible { frames: t, required });
    }
    let mut grad = vec![0.0; t * v];
    for tt in 0..t {
        for s in 0..s_len {
            let a = alpha[tt * s_len + s] + beta[tt * s_len + s];
            if a > ninf {
                grad[tt * v + ext[s]] -= (a - log_p).exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// Removes repeats, then blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Reference loss obtained by enumerating all `V^T` paths.
pub fn ctc_brute_force(lattice: &LogProbLattice, target: &LabelSequence) -> Result<f64, CtcError> {
    let (t, v) = (lattice.frames(), lattice.vocab());
    check_labels(target, v)?;
    let paths = (v as f64).powi(t as i32);
    if paths > BRUTE_FORCE_LIMIT as f64 {
        return Err(CtcError::TooManyPaths { paths, limit: BRUTE_FORCE_LIMIT });
    }
    let lp = lattice.as_tensor().data();
    let mut path = vec![0usize; t];
    let mut log_terms = Vec::new();
    for code in 0..paths as usize {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % v;
            c /= v;
        }
        if collapse(&path) == target.ids() {
            log_terms.push(path.iter().enumerate().map(|(tt, &k)| lp[tt * v + k]).sum::<f64>());
        }
    }
    if log_terms.is_empty() {
        return Err(CtcError::Infeasible { frames: t, required: target.min_frames() });
    }
    Ok(-log_sum_exp(&log_terms))
}

/// Per-frame argmax (ties to the lower id), collapse repeats, drop blanks.
pub fn greedy_decode_scores(scores: &Tensor) -> Vec<usize> {
    let best: Vec<usize> = (0..scores.rows())
        .map(|t| {
            let row = scores.row(t);
            let mut arg = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[arg] {
                    arg = k;
                }
            }
            arg
        })
        .collect();
    collapse(&best)
}

pub fn ctc_greedy_decode(lattice: &LogProbLattice) -> LabelSequence {
    LabelSequence(greedy_decode_scores(lattice.as_tensor()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rel_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lattice(probs: &[&[f64]]) -> LogProbLattice {
        let rows: Vec<Vec<f64>> = probs.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        LogProbLattice::new(Tensor::from_rows(&rows).unwrap()).unwrap()
    }

    fn labels(ids: &[usize], v: usize) -> LabelSequence {
        LabelSequence::new(ids.to_vec(), v).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        let out = ctc_loss(&lattice(&[&[0.4, 0.6]]), &labels(&[1], 2)).unwrap();
        assert!((out.loss - (-(0.6f64).ln())).abs() < 1e-12);
        assert!((out.loss - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn two_uniform_frames() {
        let lat = lattice(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let out = ctc_loss(&lat, &labels(&[1], 2)).unwrap();
        assert!((out.loss - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((out.loss - 0.2877).abs() < 1e-4);
        assert!((ctc_brute_force(&lat, &labels(&[1], 2)).unwrap() - out.loss).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separator() {
        let lat = lattice(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let t = labels(&[1, 1], 2);
        assert_eq!(t.min_frames(), 3);
        assert_eq!(ctc_loss(&lat, &t), Err(CtcError::Infeasible { frames: 2, required: 3 }));
        assert!(matches!(ctc_brute_force(&lat, &t), Err(CtcError::Infeasible { .. })));
    }

    #[test]
    fn empty_target_is_all_blank() {
        let lat = lattice(&[&[0.3, 0.7]]);
        let t = labels(&[], 2);
        let bf = ctc_brute_force(&lat, &t).unwrap();
        assert!((bf + 0.3f64.ln()).abs() < 1e-12);
        assert!((ctc_loss(&lat, &t).unwrap().loss - bf).abs() < 1e-12);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let rows = vec![vec![(0.25f64).ln(); 4]; 11];
        let lat = LogProbLattice::new(Tensor::from_rows(&rows).unwrap()).unwrap();
        assert!(matches!(ctc_brute_force(&lat, &labels(&[1], 4)), Err(CtcError::TooManyPaths { .. })));
    }

    #[test]
    fn invalid_labels_and_lattice() {
        assert!(LabelSequence::new(vec![0], 3).is_err());
        assert!(LabelSequence::new(vec![3], 3).is_err());
        assert!(LogProbLattice::new(Tensor::zeros(&[2, 3])).is_err());
    }

    fn random_lattice(rng: &mut ChaCha8Rng, t: usize, v: usize) -> (Tensor, LogProbLattice) {
        let logits = Tensor::new(vec![t, v], (0..t * v).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let lat = LogProbLattice::from_logits(&logits).unwrap();
        (logits, lat)
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 100 {
            let t = rng.gen_range(1..=6);
            let v = rng.gen_range(2..=4);
            let l = rng.gen_range(0..=3);
            let target = labels(&(0..l).map(|_| rng.gen_range(1..v)).collect::<Vec<_>>(), v);
            if target.min_frames() > t {
                continue;
            }
            let (_, lat) = random_lattice(&mut rng, t, v);
            let a = ctc_loss(&lat, &target).unwrap().loss;
            let b = ctc_brute_force(&lat, &target).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            assert!(a >= 0.0);
            checked += 1;
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_raw_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (t, v) = (rng.gen_range(3..=7), rng.gen_range(2..=5));
            let target: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(1..v)).collect();
            let (_, lat) = random_lattice(&mut rng, t, v);
            let lp = lat.as_tensor().data().to_vec();
            let Ok((_, grad)) = forward_backward(&lp, t, v, &target) else { continue };
            let eps = 1e-6;
            for i in 0..lp.len() {
                let mut up = lp.clone();
                up[i] += eps;
                let mut dn = lp.clone();
                dn[i] -= eps;
                let num = (forward_backward(&up, t, v, &target).unwrap().0
                    - forward_backward(&dn, t, v, &target).unwrap().0)
                    / (2.0 * eps);
                assert!(rel_error(grad[i], num) < 1e-5, "entry {i}: {} vs {num}", grad[i]);
            }
        }
    }

    /// Perturbing logits keeps every row on the simplex; the chain rule
    /// through log-softmax must agree with differences of the loss.
    #[test]
    fn gradient_through_normalisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (t, v) = (5, 4);
        let target = labels(&[2, 3, 2], v);
        let (logits, lat) = random_lattice(&mut rng, t, v);
        let out = ctc_loss(&lat, &target).unwrap();
        let loss_of = |z: &Tensor| ctc_loss(&LogProbLattice::from_logits(z).unwrap(), &target).unwrap().loss;
        let probs = lat.as_tensor().map(f64::exp).unwrap();
        for i in 0..t * v {
            let (r, _) = (i / v, i % v);
            let row_sum: f64 = out.grad.row(r).iter().sum();
            let analytic = out.grad.data()[i] - probs.data()[i] * row_sum;
            let eps = 1e-6;
            let mut up = logits.data().to_vec();
            up[i] += eps;
            let mut dn = logits.data().to_vec();
            dn[i] -= eps;
            let num = (loss_of(&Tensor::new(vec![t, v], up).unwrap()) - loss_of(&Tensor::new(vec![t, v], dn).unwrap()))
                / (2.0 * eps);
            assert!(rel_error(analytic, num) < 1e-5, "{analytic} vs {num}");
        }
    }

    #[test]
    fn moving_mass_to_a_valid_path_lowers_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (t, v) = (4, 3);
        let target = labels(&[1, 2], v);
        let (logits, lat) = random_lattice(&mut rng, t, v);
        let base = ctc_loss(&lat, &target).unwrap().loss;
        // Path 1,1,0,2 collapses to the target; boost its logits.
        let path = [1, 1, 0, 2];
        let mut z = logits.data().to_vec();
        for (tt, &k) in path.iter().enumerate() {
            z[tt * v + k] += 0.5;
        }
        let moved = ctc_loss(&LogProbLattice::from_logits(&Tensor::new(vec![t, v], z).unwrap()).unwrap(), &target)
            .unwrap()
            .loss;
        assert!(moved <= base);
    }

    #[test]
    fn greedy_examples() {
        // a=1, b=2
        let one_hot = |seq: &[usize]| {
            let rows: Vec<Vec<f64>> = seq
                .iter()
                .map(|&k| (0..3).map(|j| if j == k { 0.9f64.ln() } else { 0.05f64.ln() }).collect())
                .collect();
            LogProbLattice::new(Tensor::from_rows(&rows).unwrap()).unwrap()
        };
        assert_eq!(ctc_greedy_decode(&one_hot(&[1, 1, 0, 2])).ids(), &[1, 2]);
        assert!(ctc_greedy_decode(&one_hot(&[0, 0, 0])).is_empty());
        assert_eq!(ctc_greedy_decode(&one_hot(&[1, 0, 1])).ids(), &[1, 1]);
    }

    #[test]
    fn greedy_ties_pick_lower_id() {
        let s = Tensor::from_rows(&[vec![0.0, 1.0, 1.0], vec![2.0, 2.0, 0.0]]).unwrap();
        assert_eq!(greedy_decode_scores(&s), vec![1]);
    }

    #[test]
    fn decoding_one_hot_collapsed_sequence_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let seq: Vec<usize> = (0..rng.gen_range(0..6)).map(|_| rng.gen_range(1..5)).collect();
            // Lay out with blanks between equal neighbours, as the one-hot path.
            let mut path = vec![];
            for (i, &k) in seq.iter().enumerate() {
                if i > 0 && seq[i - 1] == k {
                    path.push(0);
                }
                path.push(k);
            }
            if path.is_empty() {
                path.push(0);
            }
            let rows: Vec<Vec<f64>> = path
                .iter()
                .map(|&k| (0..5).map(|j| if j == k { 0.0 } else { -50.0 }).collect())
                .collect();
            let lat = LogProbLattice::from_logits(&Tensor::from_rows(&rows).unwrap()).unwrap();
            let once = ctc_greedy_decode(&lat);
            assert_eq!(once.ids(), &seq[..]);
        }
    }
}
