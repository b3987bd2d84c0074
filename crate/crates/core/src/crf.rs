//! Linear-chain CRF.
//!
//! The score of labels `y` for emissions `u` (`n × L`) is
//!
//! ```text
//! s(y) = start[y_0] + Σ_i u[i][y_i] + Σ_{i≥1} T[y_{i-1}][y_i] + end[y_{n-1}]
//! ```
//!
//! Emissions are unnormalized scores; normalization is global through the
//! log-partition. With zero start/end vectors the score reduces to emissions
//! plus transitions only.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{CustomOp, Graph, ParamId, ParamStore, Tensor, Var};

/// Brute-force search refuses more than this many label sequences.
pub const BRUTE_FORCE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    num_labels: usize,
    /// Row-major `L × L`; `transitions[i * L + j]` scores label `i` followed by `j`.
    transitions: Vec<f64>,
    start: Vec<f64>,
    end: Vec<f64>,
}

impl CrfParams {
    pub fn zeros(num_labels: usize) -> Self {
        CrfParams {
            num_labels,
            transitions: vec![0.0; num_labels * num_labels],
            start: vec![0.0; num_labels],
            end: vec![0.0; num_labels],
        }
    }

    pub fn new(num_labels: usize, transitions: Vec<f64>, start: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        if num_labels == 0
            || transitions.len() != num_labels * num_labels
            || start.len() != num_labels
            || end.len() != num_labels
        {
            return Err(Error::Shape(format!(
                "crf with {num_labels} labels: transitions {}, start {}, end {}",
                transitions.len(),
                start.len(),
                end.len()
            )));
        }
        if transitions.iter().chain(&start).chain(&end).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("crf parameters must be finite".into()));
        }
        Ok(CrfParams {
            num_labels,
            transitions,
            start,
            end,
        })
    }

    pub fn random(num_labels: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut draw = |k: usize| (0..k).map(|_| rng.gen_range(-scale..scale)).collect::<Vec<_>>();
        let transitions = draw(num_labels * num_labels);
        let start = draw(num_labels);
        let end = draw(num_labels);
        CrfParams {
            num_labels,
            transitions,
            start,
            end,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.num_labels + to]
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn end(&self) -> &[f64] {
        &self.end
    }

    fn check_emissions(&self, emissions: &Tensor) -> Result<usize> {
        match emissions.dims2() {
            Some((n, l)) if n >= 1 && l == self.num_labels => Ok(n),
            _ => Err(Error::Shape(format!(
                "emissions {:?} for a crf with {} labels",
                emissions.shape(),
                self.num_labels
            ))),
        }
    }
}

/// Decode-time transition constraints. `allowed[i * L + j]` permits `i → j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMask {
    pub allowed: Vec<bool>,
    pub allowed_start: Vec<bool>,
}

impl TransitionMask {
    /// Forbids `O → I` and a sequence starting with `I` (label order B, I, O).
    pub fn iob() -> Self {
        let mut allowed = vec![true; 9];
        allowed[2 * 3 + 1] = false;
        TransitionMask {
            allowed,
            allowed_start: vec![true, false, true],
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn score_sequence(emissions: &Tensor, labels: &[usize], params: &CrfParams) -> Result<f64> {
    let n = params.check_emissions(emissions)?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} positions", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= params.num_labels) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} labels",
            params.num_labels
        )));
    }
    let mut score = params.start[labels[0]] + params.end[labels[n - 1]];
    for (i, &y) in labels.iter().enumerate() {
        score += emissions.get2(i, y);
        if i > 0 {
            score += params.transition(labels[i - 1], y);
        }
    }
    Ok(score)
}

/// Forward recursion: `alpha[i][j]` is the log-sum of all prefixes ending in `j`.
fn forward_table(emissions: &Tensor, params: &CrfParams, n: usize) -> Vec<Vec<f64>> {
    let l = params.num_labels;
    let mut alpha = vec![vec![0.0; l]; n];
    for j in 0..l {
        alpha[0][j] = params.start[j] + emissions.get2(0, j);
    }
    for i in 1..n {
        for j in 0..l {
            let prev = &alpha[i - 1];
            alpha[i][j] = emissions.get2(i, j) + log_sum_exp((0..l).map(|k| prev[k] + params.transition(k, j)));
        }
    }
    alpha
}

fn backward_table(emissions: &Tensor, params: &CrfParams, n: usize) -> Vec<Vec<f64>> {
    let l = params.num_labels;
    let mut beta = vec![vec![0.0; l]; n];
    beta[n - 1].copy_from_slice(&params.end);
    for i in (0..n - 1).rev() {
        for j in 0..l {
            let next = &beta[i + 1];
            beta[i][j] = log_sum_exp((0..l).map(|k| params.transition(j, k) + emissions.get2(i + 1, k) + next[k]));
        }
    }
    beta
}

pub fn log_partition(emissions: &Tensor, params: &CrfParams) -> Result<f64> {
    let n = params.check_emissions(emissions)?;
    let alpha = forward_table(emissions, params, n);
    Ok(log_sum_exp((0..params.num_labels).map(|j| alpha[n - 1][j] + params.end[j])))
}

/// Negative log-likelihood `log Z − s(gold)` as a plain number.
pub fn nll(emissions: &Tensor, gold: &[usize], params: &CrfParams) -> Result<f64> {
    Ok(log_partition(emissions, params)? - score_sequence(emissions, gold, params)?)
}

/// Unary and pairwise posterior marginals.
pub struct Marginals {
    pub log_partition: f64,
    /// `n × L`
    pub unary: Vec<Vec<f64>>,
    /// Summed over positions, `L × L` row-major.
    pub pairwise: Vec<f64>,
}

pub fn marginals(emissions: &Tensor, params: &CrfParams) -> Result<Marginals> {
    let n = params.check_emissions(emissions)?;
    let l = params.num_labels;
    let alpha = forward_table(emissions, params, n);
    let beta = backward_table(emissions, params, n);
    let log_z = log_sum_exp((0..l).map(|j| alpha[n - 1][j] + params.end[j]));
    let unary = (0..n)
        .map(|i| (0..l).map(|j| (alpha[i][j] + beta[i][j] - log_z).exp()).collect())
        .collect();
    let mut pairwise = vec![0.0; l * l];
    for i in 0..n.saturating_sub(1) {
        for a in 0..l {
            for b in 0..l {
                pairwise[a * l + b] += (alpha[i][a] + params.transition(a, b) + emissions.get2(i + 1, b)
                    + beta[i + 1][b]
                    - log_z)
                    .exp();
            }
        }
    }
    Ok(Marginals {
        log_partition: log_z,
        unary,
        pairwise,
    })
}

/// Highest-scoring label sequence. Ties go to the lower label index at each
/// step. The returned score is recomputed with [`score_sequence`].
pub fn viterbi_decode(emissions: &Tensor, params: &CrfParams) -> Result<(Vec<usize>, f64)> {
    viterbi_decode_masked(emissions, params, None)
}

pub fn viterbi_decode_masked(
    emissions: &Tensor,
    params: &CrfParams,
    mask: Option<&TransitionMask>,
) -> Result<(Vec<usize>, f64)> {
    let n = params.check_emissions(emissions)?;
    let l = params.num_labels;
    let trans = |a: usize, b: usize| match mask {
        Some(m) if !m.allowed[a * l + b] => f64::NEG_INFINITY,
        _ => params.transition(a, b),
    };
    let mut delta: Vec<f64> = (0..l)
        .map(|j| match mask {
            Some(m) if !m.allowed_start[j] => f64::NEG_INFINITY,
            _ => params.start[j] + emissions.get2(0, j),
        })
        .collect();
    let mut backptr = vec![vec![0usize; l]; n];
    for i in 1..n {
        let mut next = vec![0.0; l];
        for j in 0..l {
            let mut best_k = 0;
            let mut best = delta[0] + trans(0, j);
            for k in 1..l {
                let v = delta[k] + trans(k, j);
                if v > best {
                    best = v;
                    best_k = k;
                }
            }
            next[j] = best + emissions.get2(i, j);
            backptr[i][j] = best_k;
        }
        delta = next;
    }
    let mut last = 0;
    let mut best = delta[0] + params.end[0];
    for (j, d) in delta.iter().enumerate().skip(1) {
        if d + params.end[j] > best {
            best = d + params.end[j];
            last = j;
        }
    }
    let mut labels = vec![0; n];
    labels[n - 1] = last;
    for i in (1..n).rev() {
        labels[i - 1] = backptr[i][labels[i]];
    }
    let score = score_sequence(emissions, &labels, params)?;
    Ok((labels, score))
}

/// Exhaustive argmax over all `Lⁿ` sequences; ties go to the
/// lexicographically smallest sequence.
pub fn brute_force_decode(emissions: &Tensor, params: &CrfParams) -> Result<(Vec<usize>, f64)> {
    let n = params.check_emissions(emissions)?;
    let l = params.num_labels;
    let total = (0..n).try_fold(1usize, |acc, _| acc.checked_mul(l).filter(|&t| t <= BRUTE_FORCE_LIMIT));
    let total = total.ok_or_else(|| {
        Error::InvalidArgument(format!("{l}^{n} sequences exceed the brute-force limit"))
    })?;
    let mut labels = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..total {
        let s = score_sequence(emissions, &labels, params)?;
        if best.as_ref().map_or(true, |(_, b)| s > *b) {
            best = Some((labels.clone(), s));
        }
        // Increment as a base-L counter, most significant digit first.
        for pos in (0..n).rev() {
            labels[pos] += 1;
            if labels[pos] < l {
                break;
            }
            labels[pos] = 0;
        }
    }
    Ok(best.expect("at least one sequence"))
}

/// CRF parameters living in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrfLayer {
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
    pub num_labels: usize,
}

impl CrfLayer {
    /// Zero-initialized transitions and boundary scores.
    pub fn new(store: &mut ParamStore, name: &str, num_labels: usize) -> Result<Self> {
        Ok(CrfLayer {
            transitions: store.add(&format!("{name}.transitions"), Tensor::zeros(&[num_labels, num_labels]))?,
            start: store.add_vector(&format!("{name}.start"), vec![0.0; num_labels])?,
            end: store.add_vector(&format!("{name}.end"), vec![0.0; num_labels])?,
            num_labels,
        })
    }

    pub fn params(&self, store: &ParamStore) -> Result<CrfParams> {
        CrfParams::new(
            self.num_labels,
            store.get(self.transitions).tensor.data().to_vec(),
            store.get(self.start).tensor.data().to_vec(),
            store.get(self.end).tensor.data().to_vec(),
        )
    }

    /// Differentiable NLL of `gold` given `emissions` (an `[n, L]` node).
    pub fn nll(&self, g: &mut Graph, store: &ParamStore, emissions: Var, gold: &[usize]) -> Result<Var> {
        let t = g.param(store, self.transitions);
        let s = g.param(store, self.start);
        let e = g.param(store, self.end);
        nll_loss(g, emissions, t, s, e, gold)
    }
}

fn params_from_tensors(transitions: &Tensor, start: &Tensor, end: &Tensor) -> Result<CrfParams> {
    CrfParams::new(
        start.len(),
        transitions.data().to_vec(),
        start.data().to_vec(),
        end.data().to_vec(),
    )
}

struct CrfNll {
    gold: Vec<usize>,
}

impl CustomOp for CrfNll {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        let (emissions, trans, start, end) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let params = params_from_tensors(trans, start, end).expect("validated in forward");
        let m = marginals(emissions, &params).expect("validated in forward");
        let (n, l) = emissions.dims2().unwrap();
        let go = grad_output.item();
        let gold = &self.gold;

        let mut d_em = vec![0.0; n * l];
        for i in 0..n {
            for j in 0..l {
                d_em[i * l + j] = m.unary[i][j];
            }
            d_em[i * l + gold[i]] -= 1.0;
        }
        let mut d_trans = m.pairwise.clone();
        for i in 1..n {
            d_trans[gold[i - 1] * l + gold[i]] -= 1.0;
        }
        let mut d_start = m.unary[0].clone();
        d_start[gold[0]] -= 1.0;
        let mut d_end = m.unary[n - 1].clone();
        d_end[gold[n - 1]] -= 1.0;

        let scaled = |v: Vec<f64>, shape: &[usize]| Tensor::new(shape.to_vec(), v.into_iter().map(|x| x * go).collect()).unwrap();
        vec![
            scaled(d_em, emissions.shape()),
            scaled(d_trans, trans.shape()),
            scaled(d_start, start.shape()),
            scaled(d_end, end.shape()),
        ]
    }
}

/// Graph node for `log Z − s(gold)`, differentiable w.r.t. emissions and
/// all three parameter tensors.
pub fn nll_loss(g: &mut Graph, emissions: Var, transitions: Var, start: Var, end: Var, gold: &[usize]) -> Result<Var> {
    let params = params_from_tensors(g.value(transitions), g.value(start), g.value(end))?;
    let value = nll(g.value(emissions), gold, &params)?;
    Ok(g.custom(
        &[emissions, transitions, start, end],
        Tensor::scalar(value),
        Box::new(CrfNll { gold: gold.to_vec() }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_store;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn em(rows: &[&[f64]]) -> Tensor {
        let l = rows[0].len();
        Tensor::matrix(rows.len(), l, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn random_emissions(n: usize, l: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(n, l, (0..n * l).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    /// Independent enumeration of all label sequences.
    fn all_sequences(n: usize, l: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| (0..l).map(move |y| [p.clone(), vec![y]].concat()))
                .collect();
        }
        out
    }

    fn formula_score(u: &Tensor, y: &[usize], p: &CrfParams) -> f64 {
        let mut s: f64 = y.iter().enumerate().map(|(i, &yi)| u.get2(i, yi)).sum();
        s += y.windows(2).map(|w| p.transition(w[0], w[1])).sum::<f64>();
        s + p.start()[y[0]] + p.end()[*y.last().unwrap()]
    }

    #[test]
    fn score_examples() {
        let zero = CrfParams::zeros(2);
        assert_eq!(score_sequence(&em(&[&[0.0, 0.0]]), &[0], &zero).unwrap(), 0.0);
        assert_eq!(score_sequence(&em(&[&[1.0, 0.0], &[0.0, 2.0]]), &[0, 1], &zero).unwrap(), 3.0);
        assert!(score_sequence(&em(&[&[1.0, 0.0]]), &[2], &zero).is_err());
        assert!(score_sequence(&em(&[&[1.0, 0.0]]), &[0, 0], &zero).is_err());
    }

    #[test]
    fn score_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = CrfParams::random(3, 1.0, &mut rng);
            let u = random_emissions(4, 3, &mut rng);
            let y: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
            let s = score_sequence(&u, &y, &p).unwrap();
            assert!((s - formula_score(&u, &y, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn log_partition_examples() {
        let zero = CrfParams::zeros(2);
        assert!((log_partition(&em(&[&[0.0, 0.0]]), &zero).unwrap() - 2f64.ln()).abs() < 1e-15);
        let (a, b): (f64, f64) = (0.7, -1.3);
        let expected = (a.exp() + b.exp()).ln();
        assert!((log_partition(&em(&[&[a, b]]), &zero).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let l = rng.gen_range(1..=4);
            let p = CrfParams::random(l, 1.5, &mut rng);
            let u = random_emissions(n, l, &mut rng);
            let brute: f64 = all_sequences(n, l).iter().map(|y| formula_score(&u, y, &p).exp()).sum::<f64>().ln();
            let z = log_partition(&u, &p).unwrap();
            assert!((z - brute).abs() < 1e-9, "{z} vs {brute}");
            for y in all_sequences(n, l) {
                assert!(z >= score_sequence(&u, &y, &p).unwrap() - 1e-12);
            }
        }
    }

    #[test]
    fn nll_examples() {
        let zero = CrfParams::zeros(2);
        let uniform = em(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert!((nll(&uniform, &[1, 0], &zero).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        let peaked = em(&[&[100.0, 0.0], &[0.0, 100.0], &[100.0, 0.0]]);
        assert!(nll(&peaked, &[0, 1, 0], &zero).unwrap() < 1e-6);
    }

    #[test]
    fn viterbi_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_emissions(6, 3, &mut rng);
        let (labels, _) = viterbi_decode(&u, &CrfParams::zeros(3)).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            let row = u.row(i);
            let arg = (0..3).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            assert_eq!(y, arg);
        }

        // Fig. 1 labels with +10 oracle emissions: O O O O B I I I I O
        let gold = [2, 2, 2, 2, 0, 1, 1, 1, 1, 2];
        let mut data = vec![0.0; 30];
        for (i, &y) in gold.iter().enumerate() {
            data[i * 3 + y] = 10.0;
        }
        let u = Tensor::matrix(10, 3, data).unwrap();
        let p = CrfParams::random(3, 0.5, &mut rng);
        assert_eq!(viterbi_decode(&u, &p).unwrap().0, gold);
        assert_eq!(brute_force_decode(&u, &p).unwrap().0, gold);
    }

    #[test]
    fn viterbi_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = rng.gen_range(1..=8);
            let p = CrfParams::random(3, 1.0, &mut rng);
            let u = random_emissions(n, 3, &mut rng);
            let (vl, vs) = viterbi_decode(&u, &p).unwrap();
            let (bl, bs) = brute_force_decode(&u, &p).unwrap();
            assert_eq!(vs, bs);
            assert_eq!(vl, bl);
            assert_eq!(vs, score_sequence(&u, &vl, &p).unwrap());
        }
    }

    #[test]
    fn ties_prefer_lower_labels() {
        let u = em(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let zero = CrfParams::zeros(2);
        assert_eq!(viterbi_decode(&u, &zero).unwrap().0, vec![0, 0]);
        assert_eq!(brute_force_decode(&u, &zero).unwrap().0, vec![0, 0]);
    }

    #[test]
    fn brute_force_limit() {
        let p = CrfParams::zeros(3);
        assert!(brute_force_decode(&Tensor::zeros(&[12, 3]), &p).is_ok());
        assert!(brute_force_decode(&Tensor::zeros(&[13, 3]), &p).is_err());
    }

    #[test]
    fn iob_mask_forbids_o_to_i() {
        // Emissions prefer O then I; the mask forces a legal continuation.
        let u = em(&[&[0.0, 0.0, 5.0], &[0.0, 5.0, 0.0]]);
        let p = CrfParams::zeros(3);
        assert_eq!(viterbi_decode(&u, &p).unwrap().0, vec![2, 1]);
        let masked = viterbi_decode_masked(&u, &p, Some(&TransitionMask::iob())).unwrap().0;
        assert_ne!(masked, vec![2, 1]);
        assert_ne!(masked[0], 1);
    }

    #[test]
    fn constant_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = CrfParams::random(3, 1.0, &mut rng);
        let u = random_emissions(5, 3, &mut rng);
        let mut shifted = u.clone();
        for j in 0..3 {
            shifted.data_mut()[2 * 3 + j] += 4.25;
        }
        assert_eq!(viterbi_decode(&u, &p).unwrap().0, viterbi_decode(&shifted, &p).unwrap().0);
        let dz = log_partition(&shifted, &p).unwrap() - log_partition(&u, &p).unwrap();
        assert!((dz - 4.25).abs() < 1e-12);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.gen_range(1..=5);
            let mut store = ParamStore::new();
            let layer = CrfLayer::new(&mut store, "crf", 3).unwrap();
            for id in store.ids().collect::<Vec<_>>() {
                store.get_mut(id).tensor.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            }
            let em_id = store.add("emissions", random_emissions(n, 3, &mut rng)).unwrap();
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let report = check_store(&store, 1e-5, |s| {
                let mut g = Graph::new();
                let e = g.param(s, em_id);
                let loss = layer.nll(&mut g, s, e, &gold)?;
                Ok((g, loss))
            })
            .unwrap();
            assert!(report.relative_error < 1e-6, "{report:?}");
        }
    }
}
