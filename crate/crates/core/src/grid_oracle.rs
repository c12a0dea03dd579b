//! Exact blockwise posteriors on finite grids.
//!
//! Block `k` has `n_k` atoms. Every table attached to block `k` has one row
//! per joint configuration of the earlier blocks, flattened row-major, and one
//! column per atom of block `k`. The child row of `(row, j)` is
//! `row * n_k + j`, so the last block's rows times its atoms enumerate the
//! full product grid.
//!
//! Loss entries may be `+∞`; they receive zero weight. In JSON an infinite
//! loss is written as `null`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest total number of atoms (sum over blocks of the table sizes) the
/// oracle accepts.
pub const MAX_ATOMS: usize = 1_000_000;

const ROW_SUM_TOL: f64 = 1e-12;

/// Prior, loss and confidence weights on a finite product grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteBlockProblem {
    /// Atom labels per block. Only the lengths matter to the recursion.
    pub blocks: Vec<Vec<f64>>,
    /// `prior[k][row][j]` = π_k(atom j | ancestors `row`).
    pub prior: Vec<Vec<Vec<f64>>>,
    /// Loss indexed like the last block's tables.
    #[serde(with = "infinite_as_null")]
    pub loss: Vec<Vec<f64>>,
    pub gammas: Vec<f64>,
}

/// A distribution given by a marginal for block 1 and conditional kernels for
/// the later blocks, stored in the same layout as the prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockwiseDistribution {
    pub kernels: Vec<Vec<Vec<f64>>>,
    /// V_k in the layout of block k: `values[K-1]` is the loss.
    #[serde(default, skip_serializing_if = "Vec::is_empty", with = "nested_infinite_as_null")]
    pub values: Vec<Vec<Vec<f64>>>,
    /// log Z_k per ancestor row of block k.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_normalisers: Vec<Vec<f64>>,
}

impl FiniteBlockProblem {
    pub fn new(
        blocks: Vec<Vec<f64>>,
        prior: Vec<Vec<Vec<f64>>>,
        loss: Vec<Vec<f64>>,
        gammas: Vec<f64>,
    ) -> Result<Self> {
        let problem = FiniteBlockProblem { blocks, prior, loss, gammas };
        problem.validate()?;
        Ok(problem)
    }

    /// Independent priors per block and a loss equal to the sum of per-block
    /// losses.
    pub fn product(marginals: Vec<Vec<f64>>, block_losses: Vec<Vec<f64>>, gammas: Vec<f64>) -> Result<Self> {
        if marginals.len() != block_losses.len() {
            return Err(Error::Dimension("one loss vector per block is required".into()));
        }
        let sizes: Vec<usize> = marginals.iter().map(Vec::len).collect();
        let blocks = sizes.iter().map(|&n| (0..n).map(|j| j as f64).collect()).collect();
        let mut prior = Vec::with_capacity(sizes.len());
        let mut rows = 1usize;
        for (k, marginal) in marginals.iter().enumerate() {
            prior.push(vec![marginal.clone(); rows]);
            if k + 1 < sizes.len() {
                rows *= sizes[k];
            }
        }
        let last = sizes.len().saturating_sub(1);
        let mut loss = vec![vec![0.0; sizes.get(last).copied().unwrap_or(0)]; rows];
        for (row, out) in loss.iter_mut().enumerate() {
            let mut ancestors = decode(row, &sizes[..last]);
            ancestors.push(0);
            for (j, v) in out.iter_mut().enumerate() {
                ancestors[last] = j;
                *v = ancestors.iter().enumerate().map(|(k, &a)| block_losses[k][a]).sum();
            }
        }
        FiniteBlockProblem::new(blocks, prior, loss, gammas)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn with_gammas(&self, gammas: Vec<f64>) -> Result<Self> {
        FiniteBlockProblem::new(self.blocks.clone(), self.prior.clone(), self.loss.clone(), gammas)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.blocks.len();
        if k == 0 {
            return Err(Error::InvalidProblem("at least one block is required".into()));
        }
        if self.prior.len() != k || self.gammas.len() != k {
            return Err(Error::Dimension(format!(
                "{k} blocks but {} prior tables and {} gammas",
                self.prior.len(),
                self.gammas.len()
            )));
        }
        for (i, g) in self.gammas.iter().enumerate() {
            if !(g.is_finite() && *g > 0.0) {
                return Err(Error::InvalidProblem(format!("gamma[{i}] = {g} must be positive")));
            }
        }
        let sizes = self.sizes();
        if sizes.contains(&0) {
            return Err(Error::InvalidProblem("every block needs at least one atom".into()));
        }
        let mut rows = 1usize;
        let mut atoms = 0usize;
        for (b, table) in self.prior.iter().enumerate() {
            atoms = atoms.saturating_add(rows.saturating_mul(sizes[b]));
            if atoms > MAX_ATOMS {
                return Err(Error::GridTooLarge { atoms, limit: MAX_ATOMS });
            }
            check_table(table, rows, sizes[b], "prior")?;
            for (r, row) in table.iter().enumerate() {
                if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
                    return Err(Error::InvalidProblem(format!("prior[{b}][{r}] has a negative or non-finite entry")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidProblem(format!("prior[{b}][{r}] sums to {total}")));
                }
            }
            if b + 1 < k {
                rows *= sizes[b];
            }
        }
        check_table(&self.loss, rows, sizes[k - 1], "loss")?;
        if self.loss.iter().flatten().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::InvalidProblem("loss table contains NaN or -inf".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::InvalidProblem(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let problem: FiniteBlockProblem =
            serde_json::from_str(text).map_err(|e| Error::InvalidProblem(e.to_string()))?;
        problem.validate()?;
        Ok(problem)
    }

    /// Smallest loss value over the grid.
    pub fn min_loss(&self) -> f64 {
        self.loss.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    fn rows(&self, block: usize) -> usize {
        self.blocks[..block].iter().map(Vec::len).product()
    }
}

impl BlockwiseDistribution {
    /// The prior itself, viewed as a blockwise distribution.
    pub fn from_prior(problem: &FiniteBlockProblem) -> Self {
        BlockwiseDistribution { kernels: problem.prior.clone(), values: Vec::new(), log_normalisers: Vec::new() }
    }

    pub fn new(problem: &FiniteBlockProblem, kernels: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let q = BlockwiseDistribution { kernels, values: Vec::new(), log_normalisers: Vec::new() };
        q.validate(problem)?;
        Ok(q)
    }

    pub fn validate(&self, problem: &FiniteBlockProblem) -> Result<()> {
        let sizes = problem.sizes();
        if self.kernels.len() != sizes.len() {
            return Err(Error::Dimension(format!("{} kernels for {} blocks", self.kernels.len(), sizes.len())));
        }
        for (b, table) in self.kernels.iter().enumerate() {
            check_table(table, problem.rows(b), sizes[b], "kernel")?;
            for (r, row) in table.iter().enumerate() {
                if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
                    return Err(Error::InvalidProblem(format!("kernel[{b}][{r}] has a negative or non-finite entry")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidProblem(format!("kernel[{b}][{r}] sums to {total}")));
                }
            }
        }
        Ok(())
    }

    /// Probability of each prefix θ_{≤k}, in the layout of block k.
    pub fn prefix_masses(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.kernels.len());
        let mut parent = vec![1.0];
        for table in &self.kernels {
            let n = table.first().map_or(0, Vec::len);
            let mut mass = Vec::with_capacity(parent.len() * n);
            for (r, row) in table.iter().enumerate() {
                mass.extend(row.iter().map(|q| parent[r] * q));
            }
            out.push(mass.clone());
            parent = mass;
        }
        out
    }

    /// Joint probability over the full grid, flattened row-major.
    pub fn joint(&self) -> Vec<f64> {
        self.prefix_masses().pop().unwrap_or_default()
    }
}

/// Exact minimiser of the blockwise objective, built from the last block to
/// the first.
pub fn backward_recursion(problem: &FiniteBlockProblem) -> Result<BlockwiseDistribution> {
    problem.validate()?;
    let sizes = problem.sizes();
    let k_total = sizes.len();
    let mut values = vec![Vec::new(); k_total];
    let mut log_z = vec![Vec::new(); k_total];
    let mut kernels = vec![Vec::new(); k_total];

    let mut v: Vec<f64> = problem.loss.iter().flatten().copied().collect();
    for k in (0..k_total).rev() {
        let n = sizes[k];
        let rows = problem.rows(k);
        let gamma = problem.gammas[k];
        let mut table = Vec::with_capacity(rows);
        let mut parent_v = Vec::with_capacity(rows);
        let mut lz_row = Vec::with_capacity(rows);
        for r in 0..rows {
            let lw: Vec<f64> = (0..n)
                .map(|j| {
                    let p = problem.prior[k][r][j];
                    let vj = v[r * n + j];
                    if p == 0.0 || vj == f64::INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        -vj / gamma + p.ln()
                    }
                })
                .collect();
            let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return Err(Error::DegenerateSlice { block: k, ancestors: decode(r, &sizes[..k]) });
            }
            let w: Vec<f64> = lw.iter().map(|&l| (l - m).exp()).collect();
            let sum: f64 = w.iter().sum();
            let lz = m + sum.ln();
            table.push(w.iter().map(|x| x / sum).collect());
            parent_v.push(-gamma * lz);
            lz_row.push(lz);
        }
        values[k] = v.chunks(n).map(<[f64]>::to_vec).collect();
        kernels[k] = table;
        log_z[k] = lz_row;
        v = parent_v;
    }
    Ok(BlockwiseDistribution { kernels, values, log_normalisers: log_z })
}

/// Optimal objective value −γ₁ log Z₁ recorded by the recursion.
pub fn optimal_value(problem: &FiniteBlockProblem, q: &BlockwiseDistribution) -> Option<f64> {
    q.log_normalisers.first().and_then(|lz| lz.first()).map(|lz| -problem.gammas[0] * lz)
}

/// KL(q‖p) with 0·log 0 = 0 and +∞ when q charges an atom p does not.
pub fn discrete_kl(q: &[f64], p: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi > 0.0 {
            if pi == 0.0 {
                return f64::INFINITY;
            }
            kl += qi * (qi / pi).ln();
        }
    }
    kl
}

fn entropy(q: &[f64]) -> f64 {
    -q.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// (E_q[L], E_q-weighted KL of each block against its prior).
pub fn objective_parts(problem: &FiniteBlockProblem, q: &BlockwiseDistribution) -> Result<(f64, Vec<f64>)> {
    q.validate(problem)?;
    let masses = q.prefix_masses();
    let mut kls = Vec::with_capacity(q.kernels.len());
    for (k, table) in q.kernels.iter().enumerate() {
        let mut total = 0.0;
        for (r, row) in table.iter().enumerate() {
            let w = if k == 0 { 1.0 } else { masses[k - 1][r] };
            if w > 0.0 {
                total += w * discrete_kl(row, &problem.prior[k][r]);
            }
        }
        kls.push(total);
    }
    let joint = &masses[masses.len() - 1];
    let mut expected_loss = 0.0;
    for (w, l) in joint.iter().zip(problem.loss.iter().flatten()) {
        if *w > 0.0 {
            expected_loss += w * l;
        }
    }
    Ok((expected_loss, kls))
}

/// E_q[L] + Σ_k γ_k E[KL(q_k‖π_k)].
pub fn evaluate_objective(problem: &FiniteBlockProblem, q: &BlockwiseDistribution) -> Result<f64> {
    let (expected_loss, kls) = objective_parts(problem, q)?;
    Ok(expected_loss + kls.iter().zip(&problem.gammas).map(|(kl, g)| g * kl).sum::<f64>())
}

/// M(q) − H(q) with log P's normaliser dropped. Evaluated on the full joint,
/// independently of [`evaluate_objective`].
pub fn location_minus_dispersion(problem: &FiniteBlockProblem, q: &BlockwiseDistribution) -> Result<f64> {
    q.validate(problem)?;
    let sizes = problem.sizes();
    let k_total = sizes.len();
    let joint = q.joint();
    let mut m = 0.0;
    for (idx, (&w, &l)) in joint.iter().zip(problem.loss.iter().flatten()).enumerate() {
        if w == 0.0 {
            continue;
        }
        let atoms = decode(idx, &sizes);
        let mut row = 0usize;
        let mut neg_log_p = l;
        for k in 0..k_total {
            let p = problem.prior[k][row][atoms[k]];
            if p == 0.0 {
                return Ok(f64::INFINITY);
            }
            neg_log_p -= problem.gammas[k] * p.ln();
            row = row * sizes[k] + atoms[k];
        }
        m += w * neg_log_p;
    }
    let masses = q.prefix_masses();
    let mut h = 0.0;
    for (k, table) in q.kernels.iter().enumerate() {
        for (r, row) in table.iter().enumerate() {
            let w = if k == 0 { 1.0 } else { masses[k - 1][r] };
            h += problem.gammas[k] * w * entropy(row);
        }
    }
    Ok(m - h)
}

/// |(M−H)(qA) − (M−H)(qB) − (J̃(qA) − J̃(qB))|.
pub fn decomposition_check(
    problem: &FiniteBlockProblem,
    qa: &BlockwiseDistribution,
    qb: &BlockwiseDistribution,
) -> Result<f64> {
    let ja = evaluate_objective(problem, qa)?;
    let jb = evaluate_objective(problem, qb)?;
    let da = location_minus_dispersion(problem, qa)?;
    let db = location_minus_dispersion(problem, qb)?;
    Ok(((da - db) - (ja - jb)).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapsePoint {
    pub scale: f64,
    pub expected_loss: f64,
    pub weighted_kl: f64,
    /// Mass on atoms at least half the loss gap above the minimum.
    pub suboptimal_mass: f64,
}

/// Solves the problem with every γ_k multiplied by each scale in turn.
pub fn collapse_sweep(problem: &FiniteBlockProblem, scales: &[f64]) -> Result<Vec<CollapsePoint>> {
    if scales.windows(2).any(|w| w[1] >= w[0]) || scales.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidProblem("scales must be positive and strictly decreasing".into()));
    }
    let eps = 0.5 * loss_gap(problem);
    let threshold = problem.min_loss() + eps;
    let mut out = Vec::with_capacity(scales.len());
    for &c in scales {
        let scaled = problem.with_gammas(problem.gammas.iter().map(|g| c * g).collect())?;
        let q = backward_recursion(&scaled)?;
        let (expected_loss, kls) = objective_parts(&scaled, &q)?;
        let weighted_kl = kls.iter().zip(&scaled.gammas).map(|(kl, g)| g * kl).sum();
        let suboptimal_mass =
            q.joint().iter().zip(problem.loss.iter().flatten()).filter(|(_, &l)| l >= threshold).map(|(w, _)| w).sum();
        out.push(CollapsePoint { scale: c, expected_loss, weighted_kl, suboptimal_mass });
    }
    Ok(out)
}

/// Difference between the two smallest distinct finite loss values, or +∞
/// when the loss is constant.
pub fn loss_gap(problem: &FiniteBlockProblem) -> f64 {
    let min = problem.min_loss();
    let second = problem.loss.iter().flatten().copied().filter(|&l| l > min).fold(f64::INFINITY, f64::min);
    second - min
}

/// Random problems and candidate distributions, for self-checks.
pub mod sample {
    use rand::Rng;

    use super::{BlockwiseDistribution, FiniteBlockProblem};
    use crate::error::Result;

    fn simplex<R: Rng>(rng: &mut R, n: usize, sharpness: f64) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powf(sharpness) + 1e-300).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    }

    /// Random tables with `blocks` blocks of 2..=`max_atoms` atoms each.
    pub fn problem<R: Rng>(rng: &mut R, blocks: usize, max_atoms: usize) -> Result<FiniteBlockProblem> {
        let sizes: Vec<usize> = (0..blocks).map(|_| rng.random_range(2..=max_atoms.max(2))).collect();
        let mut prior = Vec::with_capacity(blocks);
        let mut rows = 1;
        for (k, &n) in sizes.iter().enumerate() {
            prior.push((0..rows).map(|_| simplex(rng, n, 1.0)).collect());
            if k + 1 < blocks {
                rows *= n;
            }
        }
        let last = sizes[blocks - 1];
        let loss = (0..rows).map(|_| (0..last).map(|_| 5.0 * rng.random::<f64>()).collect()).collect();
        let gammas = (0..blocks).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
        let atoms = sizes.iter().map(|&n| (0..n).map(|j| j as f64).collect()).collect();
        FiniteBlockProblem::new(atoms, prior, loss, gammas)
    }

    /// Random kernels of varying concentration in the problem's layout.
    pub fn distribution<R: Rng>(rng: &mut R, problem: &FiniteBlockProblem) -> BlockwiseDistribution {
        let sharpness = 10f64.powf(rng.random_range(-1.0..1.5));
        let kernels =
            problem.prior.iter().map(|t| t.iter().map(|row| simplex(rng, row.len(), sharpness)).collect()).collect();
        BlockwiseDistribution { kernels, values: Vec::new(), log_normalisers: Vec::new() }
    }
}

/// Mixed-radix digits of a flattened index, most significant first.
pub fn decode(mut index: usize, sizes: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; sizes.len()];
    for (d, &n) in digits.iter_mut().zip(sizes).rev() {
        *d = index % n;
        index /= n;
    }
    digits
}

fn check_table(table: &[Vec<f64>], rows: usize, cols: usize, what: &str) -> Result<()> {
    if table.len() != rows || table.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension(format!("{what} table must be {rows}x{cols}")));
    }
    Ok(())
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(table: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Vec<Option<f64>>> =
            table.iter().map(|r| r.iter().map(|&v| v.is_finite().then_some(v)).collect()).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let opt: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect()).collect())
    }
}

mod nested_infinite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(tables: &[Vec<Vec<f64>>], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Vec<Vec<Option<f64>>>> = tables
            .iter()
            .map(|t| t.iter().map(|r| r.iter().map(|&v| v.is_finite().then_some(v)).collect()).collect())
            .collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Vec<f64>>>, D::Error> {
        let opt: Vec<Vec<Vec<Option<f64>>>> = Vec::deserialize(d)?;
        Ok(opt
            .into_iter()
            .map(|t| t.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect()).collect())
            .collect())
    }
}
