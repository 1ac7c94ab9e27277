//! Linear-chain CRF: log-partition by the forward algorithm, negative
//! log-likelihood with exact gradients from forward-backward marginals, and
//! Viterbi decoding.
//!
//! The score of a tag path `y` over `T` tokens is
//!
//! ```text
//! start[y0] + Σ_t e[t, y_t] + Σ_{t>0} A[y_{t-1}, y_t] + stop[y_{T-1}]
//! ```
//!
//! All chain quantities are kept in log space with max-shifted log-sum-exp.

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, Matrix};

/// `T × K` per-token tag scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionScores(pub Matrix);

impl EmissionScores {
    pub fn new(scores: Matrix) -> Self {
        Self(scores)
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn num_tags(&self) -> usize {
        self.0.cols()
    }
}

/// Tag bigram scores `A[prev, next]` plus start and stop scores.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub transitions: Matrix,
    pub start: Matrix,
    pub stop: Matrix,
}

impl TransitionTable {
    pub fn zeros(num_tags: usize) -> Self {
        Self {
            transitions: Matrix::zeros(num_tags, num_tags),
            start: Matrix::zeros(num_tags, 1),
            stop: Matrix::zeros(num_tags, 1),
        }
    }

    pub fn num_tags(&self) -> usize {
        self.transitions.rows()
    }

    /// Score of one complete tag path.
    pub fn path_score(&self, e: &EmissionScores, path: &[usize]) -> Result<f64> {
        self.check(e)?;
        check_path(e, path)?;
        let s = &self.start.as_slice();
        let mut score = s[path[0]] + self.stop.as_slice()[path[path.len() - 1]];
        for (t, &y) in path.iter().enumerate() {
            score += e.0.get(t, y);
            if t > 0 {
                score += self.transitions.get(path[t - 1], y);
            }
        }
        Ok(score)
    }

    fn check(&self, e: &EmissionScores) -> Result<()> {
        if e.is_empty() {
            return Err(Error::Empty("emission scores"));
        }
        let k = self.num_tags();
        if self.transitions.cols() != k || self.start.len() != k || self.stop.len() != k {
            return Err(Error::invalid(
                "transition table is not square over the tag set",
            ));
        }
        if e.num_tags() != k {
            return Err(Error::dims("CRF emission columns", k, e.num_tags()));
        }
        Ok(())
    }
}

/// Allowed tag bigrams for constrained decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMask {
    allowed: Vec<bool>,
    start_allowed: Vec<bool>,
    num_tags: usize,
}

impl TransitionMask {
    /// `allowed(None, k)` decides whether a path may start with `k`.
    pub fn from_fn(num_tags: usize, mut allowed: impl FnMut(Option<usize>, usize) -> bool) -> Self {
        let start_allowed = (0..num_tags).map(|k| allowed(None, k)).collect();
        let mut grid = Vec::with_capacity(num_tags * num_tags);
        for j in 0..num_tags {
            for k in 0..num_tags {
                grid.push(allowed(Some(j), k));
            }
        }
        Self {
            allowed: grid,
            start_allowed,
            num_tags,
        }
    }

    fn start(&self, k: usize) -> bool {
        self.start_allowed[k]
    }

    fn bigram(&self, j: usize, k: usize) -> bool {
        self.allowed[j * self.num_tags + k]
    }
}

fn check_path(e: &EmissionScores, path: &[usize]) -> Result<()> {
    if path.len() != e.len() {
        return Err(Error::dims("CRF gold sequence length", e.len(), path.len()));
    }
    if let Some(&bad) = path.iter().find(|&&y| y >= e.num_tags()) {
        return Err(Error::invalid(format!(
            "tag index {bad} out of range 0..{}",
            e.num_tags()
        )));
    }
    Ok(())
}

/// Forward log-messages `alpha[t][k]` (log score of all prefixes ending in `k`).
fn forward(e: &EmissionScores, tr: &TransitionTable) -> Vec<Vec<f64>> {
    let (t_len, k) = (e.len(), e.num_tags());
    let mut alpha = vec![vec![0.0; k]; t_len];
    for y in 0..k {
        alpha[0][y] = tr.start.as_slice()[y] + e.0.get(0, y);
    }
    let mut scratch = vec![0.0; k];
    for t in 1..t_len {
        for y in 0..k {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = alpha[t - 1][j] + tr.transitions.get(j, y);
            }
            alpha[t][y] = log_sum_exp(&scratch) + e.0.get(t, y);
        }
    }
    alpha
}

/// Backward log-messages `beta[t][k]` (log score of all suffixes after `k`).
fn backward(e: &EmissionScores, tr: &TransitionTable) -> Vec<Vec<f64>> {
    let (t_len, k) = (e.len(), e.num_tags());
    let mut beta = vec![vec![0.0; k]; t_len];
    beta[t_len - 1].copy_from_slice(tr.stop.as_slice());
    let mut scratch = vec![0.0; k];
    for t in (0..t_len - 1).rev() {
        for j in 0..k {
            for (y, s) in scratch.iter_mut().enumerate() {
                *s = tr.transitions.get(j, y) + e.0.get(t + 1, y) + beta[t + 1][y];
            }
            beta[t][j] = log_sum_exp(&scratch);
        }
    }
    beta
}

fn finish(alpha_last: &[f64], tr: &TransitionTable) -> f64 {
    let terminal: Vec<f64> = alpha_last
        .iter()
        .zip(tr.stop.as_slice())
        .map(|(a, s)| a + s)
        .collect();
    log_sum_exp(&terminal)
}

/// `log Σ_y exp(score(y))` over all `K^T` tag paths.
pub fn log_partition(e: &EmissionScores, tr: &TransitionTable) -> Result<f64> {
    tr.check(e)?;
    let alpha = forward(e, tr);
    Ok(finish(&alpha[alpha.len() - 1], tr))
}

/// `logZ − score(gold)`.
pub fn nll(e: &EmissionScores, tr: &TransitionTable, gold: &[usize]) -> Result<f64> {
    let gold_score = tr.path_score(e, gold)?;
    Ok(log_partition(e, tr)? - gold_score)
}

/// Gradients of [`nll`] with respect to emissions and transition parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradients {
    pub nll: f64,
    pub emissions: Matrix,
    pub transitions: TransitionTable,
}

/// Exact gradients of the NLL: expected feature counts under the model
/// (forward-backward marginals) minus the gold counts.
pub fn gradients(e: &EmissionScores, tr: &TransitionTable, gold: &[usize]) -> Result<CrfGradients> {
    let gold_score = tr.path_score(e, gold)?;
    let (t_len, k) = (e.len(), e.num_tags());
    let alpha = forward(e, tr);
    let beta = backward(e, tr);
    let log_z = finish(&alpha[t_len - 1], tr);

    let mut d_emit = Matrix::zeros(t_len, k);
    let mut d_tr = TransitionTable::zeros(k);
    for t in 0..t_len {
        for y in 0..k {
            let marginal = (alpha[t][y] + beta[t][y] - log_z).exp();
            d_emit.set(t, y, marginal);
            if t == 0 {
                d_tr.start.as_mut_slice()[y] += marginal;
            }
            if t == t_len - 1 {
                d_tr.stop.as_mut_slice()[y] += marginal;
            }
        }
        if t > 0 {
            for j in 0..k {
                for y in 0..k {
                    let pair =
                        alpha[t - 1][j] + tr.transitions.get(j, y) + e.0.get(t, y) + beta[t][y]
                            - log_z;
                    let cur = d_tr.transitions.get(j, y);
                    d_tr.transitions.set(j, y, cur + pair.exp());
                }
            }
        }
    }
    for (t, &y) in gold.iter().enumerate() {
        d_emit.set(t, y, d_emit.get(t, y) - 1.0);
        if t > 0 {
            let prev = gold[t - 1];
            let cur = d_tr.transitions.get(prev, y);
            d_tr.transitions.set(prev, y, cur - 1.0);
        }
    }
    d_tr.start.as_mut_slice()[gold[0]] -= 1.0;
    d_tr.stop.as_mut_slice()[gold[t_len - 1]] -= 1.0;

    Ok(CrfGradients {
        nll: log_z - gold_score,
        emissions: d_emit,
        transitions: d_tr,
    })
}

/// Highest-scoring tag path and its score. Ties go to the lowest tag index,
/// both for the final tag and for every back-pointer.
pub fn viterbi_decode(e: &EmissionScores, tr: &TransitionTable) -> Result<(Vec<usize>, f64)> {
    viterbi_decode_masked(e, tr, None)
}

/// Viterbi restricted to the bigrams allowed by `mask`. The returned score is
/// the unmasked path score.
pub fn viterbi_decode_masked(
    e: &EmissionScores,
    tr: &TransitionTable,
    mask: Option<&TransitionMask>,
) -> Result<(Vec<usize>, f64)> {
    tr.check(e)?;
    let (t_len, k) = (e.len(), e.num_tags());
    if let Some(m) = mask {
        if m.num_tags != k {
            return Err(Error::dims("transition mask", k, m.num_tags));
        }
    }
    let start_ok = |y: usize| mask.map_or(true, |m| m.start(y));
    let bigram_ok = |j: usize, y: usize| mask.map_or(true, |m| m.bigram(j, y));

    let mut delta: Vec<f64> = (0..k)
        .map(|y| {
            if start_ok(y) {
                tr.start.as_slice()[y] + e.0.get(0, y)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut back = vec![vec![0usize; k]; t_len];
    let mut next = vec![0.0; k];
    for t in 1..t_len {
        for y in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (j, &d) in delta.iter().enumerate() {
                if !bigram_ok(j, y) {
                    continue;
                }
                let s = d + tr.transitions.get(j, y);
                if s > best {
                    best = s;
                    arg = j;
                }
            }
            next[y] = best + e.0.get(t, y);
            back[t][y] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut best = f64::NEG_INFINITY;
    for (y, &d) in delta.iter().enumerate() {
        let s = d + tr.stop.as_slice()[y];
        if s > best {
            best = s;
            last = y;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::invalid("no tag path satisfies the transition mask"));
    }
    let mut path = vec![last; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    let score = if mask.is_some() {
        tr.path_score(e, &path)?
    } else {
        best
    };
    Ok((path, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_check, SeededRng};

    fn random_instance(
        t: usize,
        k: usize,
        rng: &mut SeededRng,
    ) -> (EmissionScores, TransitionTable) {
        let mut m = |r, c| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-5.0, 5.0)).collect()).unwrap()
        };
        let e = EmissionScores::new(m(t, k));
        let tr = TransitionTable {
            transitions: m(k, k),
            start: m(k, 1),
            stop: m(k, 1),
        };
        (e, tr)
    }

    /// Every tag path of length `t` over `k` tags, in lexicographic order.
    fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..t {
            out = out
                .into_iter()
                .flat_map(|p| (0..k).map(move |y| [p.clone(), vec![y]].concat()))
                .collect();
        }
        out
    }

    fn brute_force(e: &EmissionScores, tr: &TransitionTable) -> (f64, Vec<usize>, f64) {
        let scores: Vec<(Vec<usize>, f64)> = all_paths(e.len(), e.num_tags())
            .into_iter()
            .map(|p| {
                let s = tr.path_score(e, &p).unwrap();
                (p, s)
            })
            .collect();
        let log_z = log_sum_exp(&scores.iter().map(|(_, s)| *s).collect::<Vec<_>>());
        // first maximum in lexicographic order = lowest-index tie-break
        let mut best = &scores[0];
        for cand in &scores {
            if cand.1 > best.1 {
                best = cand;
            }
        }
        (log_z, best.0.clone(), best.1)
    }

    #[test]
    fn single_tag_chain() {
        let mut rng = SeededRng::new(3);
        let (e, tr) = random_instance(4, 1, &mut rng);
        let expected = tr.start.as_slice()[0]
            + e.0.as_slice().iter().sum::<f64>()
            + 3.0 * tr.transitions.get(0, 0)
            + tr.stop.as_slice()[0];
        assert!((log_partition(&e, &tr).unwrap() - expected).abs() < 1e-12);
        assert!(nll(&e, &tr, &[0, 0, 0, 0]).unwrap().abs() < 1e-12);
        let g = gradients(&e, &tr, &[0, 0, 0, 0]).unwrap();
        assert!(g.emissions.as_slice().iter().all(|v| v.abs() < 1e-12));
        assert!(g
            .transitions
            .transitions
            .as_slice()
            .iter()
            .all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_transitions_factorize() {
        let mut rng = SeededRng::new(4);
        let (e, _) = random_instance(5, 4, &mut rng);
        let tr = TransitionTable::zeros(4);
        let expected: f64 = (0..5).map(|t| log_sum_exp(e.0.row(t))).sum();
        assert!((log_partition(&e, &tr).unwrap() - expected).abs() < 1e-12);
        let (path, _) = viterbi_decode(&e, &tr).unwrap();
        let argmax: Vec<usize> = (0..5).map(|t| crate::numeric::argmax(e.0.row(t))).collect();
        assert_eq!(path, argmax);
    }

    #[test]
    fn uniform_nll_is_t_ln_k() {
        let e = EmissionScores::new(Matrix::filled(6, 5, 0.7));
        let tr = TransitionTable::zeros(5);
        let v = nll(&e, &tr, &[0, 1, 2, 3, 4, 0]).unwrap();
        assert!((v - 6.0 * 5f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn matches_enumeration_t4_k3() {
        let mut rng = SeededRng::new(11);
        for _ in 0..20 {
            let (e, tr) = random_instance(4, 3, &mut rng);
            let (log_z, _, _) = brute_force(&e, &tr);
            assert!((log_partition(&e, &tr).unwrap() - log_z).abs() < 1e-8);
            let gold = [2, 0, 1, 1];
            let expected = log_z - tr.path_score(&e, &gold).unwrap();
            assert!((nll(&e, &tr, &gold).unwrap() - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn viterbi_matches_enumeration_t5_k4() {
        let mut rng = SeededRng::new(12);
        for _ in 0..20 {
            let (e, tr) = random_instance(5, 4, &mut rng);
            let (_, best_path, best_score) = brute_force(&e, &tr);
            let (path, score) = viterbi_decode(&e, &tr).unwrap();
            assert_eq!(path, best_path);
            assert!((score - best_score).abs() < 1e-10);
        }
    }

    #[test]
    fn viterbi_ties_pick_lowest_index() {
        let e = EmissionScores::new(Matrix::zeros(3, 3));
        let tr = TransitionTable::zeros(3);
        assert_eq!(viterbi_decode(&e, &tr).unwrap().0, vec![0, 0, 0]);
    }

    #[test]
    fn forbidden_bigram_is_avoided() {
        // tags: 0 = O, 1 = B-brand, 2 = I-group
        let e = EmissionScores::new(
            Matrix::from_vec(2, 3, vec![0.0, 5.0, 0.0, 0.0, 0.0, 4.0]).unwrap(),
        );
        let mut tr = TransitionTable::zeros(3);
        tr.transitions.set(1, 2, -1e6);
        let (path, score) = viterbi_decode(&e, &tr).unwrap();
        let (_, oracle_path, oracle_score) = brute_force(&e, &tr);
        assert_ne!(path, vec![1, 2]);
        assert_eq!(path, oracle_path);
        assert!((score - oracle_score).abs() < 1e-10);
    }

    #[test]
    fn masked_decoding_respects_mask() {
        let mut rng = SeededRng::new(13);
        let (e, tr) = random_instance(6, 3, &mut rng);
        // forbid ever entering tag 2
        let mask = TransitionMask::from_fn(3, |_, k| k != 2);
        let (path, score) = viterbi_decode_masked(&e, &tr, Some(&mask)).unwrap();
        assert!(path.iter().all(|&y| y != 2));
        let best_allowed = all_paths(6, 3)
            .into_iter()
            .filter(|p| !p.contains(&2))
            .map(|p| tr.path_score(&e, &p).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((score - best_allowed).abs() < 1e-10);
        let none = TransitionMask::from_fn(3, |_, _| false);
        assert!(viterbi_decode_masked(&e, &tr, Some(&none)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(14);
        let (mut e, mut tr) = random_instance(4, 3, &mut rng);
        // keep marginals away from 0 so roundoff stays below the tolerance
        e.0.scale(0.2);
        for m in [&mut tr.transitions, &mut tr.start, &mut tr.stop] {
            m.scale(0.2);
        }
        let gold = [1, 1, 0, 2];
        let g = gradients(&e, &tr, &gold).unwrap();
        for t in 0..4 {
            let row_sum: f64 = g.emissions.row(t).iter().sum();
            assert!(row_sum.abs() < 1e-12);
        }
        let pack = |e: &Matrix, tr: &TransitionTable| -> Vec<f64> {
            [
                e.as_slice(),
                tr.transitions.as_slice(),
                tr.start.as_slice(),
                tr.stop.as_slice(),
            ]
            .concat()
        };
        let unpack = |p: &[f64]| -> (EmissionScores, TransitionTable) {
            let e = Matrix::from_vec(4, 3, p[..12].to_vec()).unwrap();
            let tr = TransitionTable {
                transitions: Matrix::from_vec(3, 3, p[12..21].to_vec()).unwrap(),
                start: Matrix::column(p[21..24].to_vec()),
                stop: Matrix::column(p[24..27].to_vec()),
            };
            (EmissionScores::new(e), tr)
        };
        let params = pack(&e.0, &tr);
        let analytic = pack(&g.emissions, &g.transitions);
        let err = finite_diff_check(
            |p| {
                let (e, tr) = unpack(p);
                nll(&e, &tr, &gold).unwrap()
            },
            &params,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn invariants_on_random_instances() {
        let mut rng = SeededRng::new(15);
        for _ in 0..30 {
            let t = 1 + rng.below(5);
            let k = 1 + rng.below(4);
            let (e, tr) = random_instance(t, k, &mut rng);
            let log_z = log_partition(&e, &tr).unwrap();
            let total: f64 = all_paths(t, k)
                .iter()
                .map(|p| (tr.path_score(&e, p).unwrap() - log_z).exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-8);

            let gold: Vec<usize> = (0..t).map(|_| rng.below(k)).collect();
            let v = nll(&e, &tr, &gold).unwrap();
            assert!(v >= -1e-10);
            let lik = (-v).exp();
            assert!(lik > 0.0 && lik <= 1.0 + 1e-12);

            let (path, score) = viterbi_decode(&e, &tr).unwrap();
            for _ in 0..50 {
                let p: Vec<usize> = (0..t).map(|_| rng.below(k)).collect();
                assert!(score >= tr.path_score(&e, &p).unwrap() - 1e-12);
            }

            let row = rng.below(t);
            let c = rng.uniform(-3.0, 3.0);
            let mut shifted = e.clone();
            shifted.0.row_mut(row).iter_mut().for_each(|v| *v += c);
            assert!((log_partition(&shifted, &tr).unwrap() - log_z - c).abs() < 1e-10);
            assert_eq!(viterbi_decode(&shifted, &tr).unwrap().0, path);
        }
    }

    #[test]
    fn error_paths() {
        let tr = TransitionTable::zeros(3);
        let empty = EmissionScores::new(Matrix::zeros(0, 3));
        assert!(matches!(log_partition(&empty, &tr), Err(Error::Empty(_))));
        assert!(viterbi_decode(&empty, &tr).is_err());
        let e = EmissionScores::new(Matrix::zeros(2, 3));
        assert!(nll(&e, &tr, &[0]).is_err());
        assert!(nll(&e, &tr, &[0, 3]).is_err());
        let wrong_k = EmissionScores::new(Matrix::zeros(2, 4));
        assert!(log_partition(&wrong_k, &tr).is_err());
    }
}
