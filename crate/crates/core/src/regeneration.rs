//! Structural diagnostics behind the long-run risk theory: cluster detection,
//! the pointwise-dominance check, barrier stopping times, and empirical
//! prefix fixation of the Viterbi path.
//!
//! A *cluster* is a state subset whose emission densities overlap on a common
//! observation set while every other state's density vanishes there, and
//! whose restricted transition matrix is primitive. Runs of r+1 observations
//! inside the barrier set pin the Viterbi path down; the stopping times
//! locate the nearest such runs around each position.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::alignment::viterbi_states_len;
use crate::error::{Error, Result};
use crate::model::{primitive_index, EmissionFamily, HmmModel, LogEmissions, ObsSeq};

/// Observation set on which a cluster's densities are sandwiched in
/// `[eps, m_bound]` and all other densities vanish.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierSet {
    Symbols(Vec<usize>),
    Interval { lo: f64, hi: f64 },
}

impl BarrierSet {
    pub fn contains(&self, x: &ObsSeq, t: usize) -> bool {
        match (self, x) {
            (Self::Symbols(set), ObsSeq::Symbols(xs)) => set.contains(&xs[t]),
            (Self::Interval { lo, hi }, ObsSeq::Reals(xs)) => *lo <= xs[t] && xs[t] <= *hi,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterInfo {
    /// States of the chosen cluster, ascending.
    pub cluster: Vec<usize>,
    /// Smallest power making the restricted transition matrix entrywise
    /// positive.
    pub r: usize,
    pub barrier_set: BarrierSet,
    /// Minimum cluster density on the barrier set.
    pub eps: f64,
    /// Maximum cluster density on the barrier set.
    pub m_bound: f64,
    /// `P_s(barrier)` for each cluster state, in cluster order.
    pub barrier_mass: Vec<f64>,
    /// Other maximal primitive clusters that were not chosen.
    pub alternates: Vec<Vec<usize>>,
}

/// A maximal candidate cluster that failed primitivity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedCluster {
    pub states: Vec<usize>,
    /// Transition matrix restricted to `states`.
    pub submatrix: Vec<Vec<f64>>,
    pub why: String,
}

/// No candidate cluster has a primitive restricted transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSearchFailure {
    pub rejected: Vec<RejectedCluster>,
}

impl std::fmt::Display for ClusterSearchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.rejected.is_empty() {
            return write!(f, "no state subset has overlapping supports shielded from the rest");
        }
        write!(f, "no primitive cluster;")?;
        for r in &self.rejected {
            write!(f, " {:?}: {};", r.states, r.why)?;
        }
        Ok(())
    }
}

/// Outcome of the cluster search: the structural assumption either holds with
/// a witness or fails with the rejected candidates.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterOutcome {
    Found(ClusterInfo),
    Failed(ClusterSearchFailure),
}

impl ClusterOutcome {
    pub fn found(&self) -> Option<&ClusterInfo> {
        match self {
            Self::Found(info) => Some(info),
            Self::Failed(_) => None,
        }
    }

    pub fn into_found(self) -> Option<ClusterInfo> {
        match self {
            Self::Found(info) => Some(info),
            Self::Failed(_) => None,
        }
    }
}

/// Search for a cluster.
///
/// Categorical models: enumerate state subsets whose supports intersect and
/// outside whose support-intersection every other state's density is zero;
/// among the maximal ones keep those with a primitive restricted transition
/// matrix, preferring larger then lexicographically smaller clusters.
///
/// Gaussian models: every density is positive everywhere, so the cluster is
/// the whole state set and the barrier is an interval. With `eps = None` the
/// interval spans all per-state central intervals of probability one half;
/// with `eps = Some(e)` it is the intersection of the per-state superlevel
/// sets `{x : f_s(x) >= e}`, and an empty intersection is an error.
pub fn detect_cluster(model: &HmmModel, eps: Option<f64>) -> Result<ClusterOutcome> {
    detect_cluster_parts(model.transition(), model.emission(), eps)
}

pub(crate) fn detect_cluster_parts(
    transition: &[Vec<f64>],
    emission: &EmissionFamily,
    eps: Option<f64>,
) -> Result<ClusterOutcome> {
    match emission {
        EmissionFamily::Categorical { probs } => Ok(detect_categorical(transition, probs)),
        EmissionFamily::Gaussian { means, stds } => {
            detect_gaussian(transition, means, stds, eps)
        }
    }
}

fn restrict(transition: &[Vec<f64>], states: &[usize]) -> Vec<Vec<f64>> {
    states
        .iter()
        .map(|&i| states.iter().map(|&j| transition[i][j]).collect())
        .collect()
}

fn detect_categorical(transition: &[Vec<f64>], probs: &[Vec<f64>]) -> ClusterOutcome {
    let s_count = probs.len();
    let alphabet = probs[0].len();

    // Maximal subsets whose common support is shielded from all other states.
    let mut candidates: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for mask in 1u32..(1 << s_count) {
        let members: Vec<usize> = (0..s_count).filter(|&s| mask & (1 << s) != 0).collect();
        let common: Vec<usize> = (0..alphabet)
            .filter(|&x| members.iter().all(|&s| probs[s][x] > 0.0))
            .collect();
        if common.is_empty() {
            continue;
        }
        let shielded = (0..s_count)
            .filter(|s| !members.contains(s))
            .all(|s| common.iter().all(|&x| probs[s][x] == 0.0));
        if shielded {
            candidates.push((members, common));
        }
    }
    let mut candidates: Vec<(Vec<usize>, Vec<usize>)> = candidates
        .iter()
        .filter(|(members, _)| {
            !candidates.iter().any(|(other, _)| {
                other.len() > members.len() && members.iter().all(|s| other.contains(s))
            })
        })
        .cloned()
        .collect();
    // Larger clusters first, lexicographic among equals.
    candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    let mut rejected = Vec::new();
    let mut chosen: Option<ClusterInfo> = None;
    let mut alternates: Vec<Vec<usize>> = Vec::new();
    for (members, common) in &candidates {
        let sub = restrict(transition, members);
        match primitive_index(&sub) {
            Some(r) => {
                if chosen.is_none() {
                    let densities: Vec<f64> = members
                        .iter()
                        .flat_map(|&s| common.iter().map(move |&x| probs[s][x]))
                        .collect();
                    let eps = densities.iter().copied().fold(f64::INFINITY, f64::min);
                    let m_bound = densities.iter().copied().fold(0.0f64, f64::max);
                    let barrier_mass = members
                        .iter()
                        .map(|&s| common.iter().map(|&x| probs[s][x]).sum())
                        .collect();
                    chosen = Some(ClusterInfo {
                        cluster: members.clone(),
                        r,
                        barrier_set: BarrierSet::Symbols(common.clone()),
                        eps,
                        m_bound,
                        barrier_mass,
                        alternates: Vec::new(),
                    });
                } else {
                    alternates.push(members.clone());
                }
            }
            None => rejected.push(RejectedCluster {
                states: members.clone(),
                submatrix: sub,
                why: "no entrywise-positive power up to the Wielandt bound".into(),
            }),
        }
    }
    match chosen {
        Some(mut info) => {
            info.alternates = alternates;
            ClusterOutcome::Found(info)
        }
        None => ClusterOutcome::Failed(ClusterSearchFailure { rejected }),
    }
}

fn gaussian_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * std::f64::consts::TAU.sqrt())
}

/// Central z such that the interval mean +- z*std carries mass one half.
const HALF_MASS_Z: f64 = 0.674_489_750_196_081_7;

fn detect_gaussian(
    transition: &[Vec<f64>],
    means: &[f64],
    stds: &[f64],
    eps: Option<f64>,
) -> Result<ClusterOutcome> {
    let s_count = means.len();
    let members: Vec<usize> = (0..s_count).collect();
    let (lo, hi) = match eps {
        None => {
            let lo = means
                .iter()
                .zip(stds)
                .map(|(&m, &s)| m - HALF_MASS_Z * s)
                .fold(f64::INFINITY, f64::min);
            let hi = means
                .iter()
                .zip(stds)
                .map(|(&m, &s)| m + HALF_MASS_Z * s)
                .fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
        Some(e) => {
            if !(e > 0.0) {
                return Err(Error::BadConfig { reason: format!("eps = {e} must be > 0") });
            }
            // Intersection of the superlevel sets {f_s >= e}.
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for (&m, &s) in means.iter().zip(stds) {
                let peak = gaussian_density(m, m, s);
                if e > peak {
                    return Err(Error::EmptyBarrier {
                        reason: format!("eps = {e} exceeds the peak density {peak:.6} of a state"),
                    });
                }
                let w = s * (-2.0 * (e * s * std::f64::consts::TAU.sqrt()).ln()).sqrt();
                lo = lo.max(m - w);
                hi = hi.min(m + w);
            }
            if lo >= hi {
                return Err(Error::EmptyBarrier {
                    reason: format!("superlevel sets at eps = {e} do not intersect"),
                });
            }
            (lo, hi)
        }
    };

    match primitive_index(transition) {
        Some(r) => {
            // On an interval a normal density attains its extremes at the
            // endpoint farthest from the mean and at the point nearest it.
            let mut eps_val = f64::INFINITY;
            let mut m_val = 0.0f64;
            let mut mass = Vec::with_capacity(s_count);
            for (&m, &s) in means.iter().zip(stds) {
                let at_lo = gaussian_density(lo, m, s);
                let at_hi = gaussian_density(hi, m, s);
                eps_val = eps_val.min(at_lo.min(at_hi));
                let nearest = m.clamp(lo, hi);
                m_val = m_val.max(gaussian_density(nearest, m, s));
                let dist = Normal::new(m, s).expect("validated std");
                mass.push(dist.cdf(hi) - dist.cdf(lo));
            }
            Ok(ClusterOutcome::Found(ClusterInfo {
                cluster: members,
                r,
                barrier_set: BarrierSet::Interval { lo, hi },
                eps: eps_val,
                m_bound: m_val,
                barrier_mass: mass,
                alternates: Vec::new(),
            }))
        }
        None => Ok(ClusterOutcome::Failed(ClusterSearchFailure {
            rejected: vec![RejectedCluster {
                states: members,
                submatrix: transition.to_vec(),
                why: "no entrywise-positive power up to the Wielandt bound".into(),
            }],
        })),
    }
}

/// Per-state witness of the pointwise-dominance check: is there a positive-
/// probability observation region where this state wins the weighted density
/// comparison `f_l(x) p*_l > max_{s != l} f_s(x) p*_s`, `p*_l = max_j P(j,l)`?
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceWitness {
    pub state: usize,
    pub holds: bool,
    /// Winning symbol (categorical), with both sides of the inequality.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbol: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs: Option<f64>,
    /// Winning region (Gaussian) as disjoint open intervals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<(f64, f64)>>,
    /// Probability of the winning region under the state's own emission law.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub holds: bool,
    /// `p*_l = max_j P(j, l)` per state.
    pub p_star: Vec<f64>,
    pub witnesses: Vec<DominanceWitness>,
    /// For two-state models the condition is only ever needed for one state;
    /// set when the check fails, naming the failing states.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_state_advisory: Option<String>,
}

/// Decide, for every state, whether it wins the dominance comparison on a
/// set of positive probability (`check_a2` in the command-line surface).
pub fn check_a2(model: &HmmModel) -> DominanceReport {
    let s_count = model.num_states();
    let p_star: Vec<f64> = (0..s_count)
        .map(|l| (0..s_count).map(|j| model.transition_prob(j, l)).fold(0.0f64, f64::max))
        .collect();

    let witnesses: Vec<DominanceWitness> = match model.emission() {
        EmissionFamily::Categorical { probs } => (0..s_count)
            .map(|l| {
                let alphabet = probs[0].len();
                let win = (0..alphabet).find_map(|x| {
                    let lhs = probs[l][x] * p_star[l];
                    let rhs = (0..s_count)
                        .filter(|&s| s != l)
                        .map(|s| probs[s][x] * p_star[s])
                        .fold(0.0f64, f64::max);
                    // lhs > rhs >= 0 forces f_l(x) > 0, so the winning symbol
                    // automatically has positive mass under P_l.
                    (lhs > rhs).then_some((x, lhs, rhs))
                });
                DominanceWitness {
                    state: l,
                    holds: win.is_some(),
                    symbol: win.map(|w| w.0),
                    lhs: win.map(|w| w.1),
                    rhs: win.map(|w| w.2),
                    region: None,
                    mass: None,
                }
            })
            .collect(),
        EmissionFamily::Gaussian { means, stds } => (0..s_count)
            .map(|l| {
                let mut region = vec![(f64::NEG_INFINITY, f64::INFINITY)];
                for s in 0..s_count {
                    if s == l {
                        continue;
                    }
                    // ln f_l + ln p*_l > ln f_s + ln p*_s as a quadratic in x.
                    let a = 0.5 / (stds[s] * stds[s]) - 0.5 / (stds[l] * stds[l]);
                    let b = means[l] / (stds[l] * stds[l]) - means[s] / (stds[s] * stds[s]);
                    let c = -0.5 * means[l] * means[l] / (stds[l] * stds[l])
                        + 0.5 * means[s] * means[s] / (stds[s] * stds[s])
                        + (stds[s] / stds[l]).ln()
                        + (p_star[l] / p_star[s]).ln();
                    region = intersect_intervals(&region, &quadratic_positive_set(a, b, c));
                    if region.is_empty() {
                        break;
                    }
                }
                let holds = region.iter().any(|&(lo, hi)| lo < hi);
                let dist = Normal::new(means[l], stds[l]).expect("validated std");
                let mass: f64 = region
                    .iter()
                    .map(|&(lo, hi)| {
                        let top = if hi == f64::INFINITY { 1.0 } else { dist.cdf(hi) };
                        let bot = if lo == f64::NEG_INFINITY { 0.0 } else { dist.cdf(lo) };
                        top - bot
                    })
                    .sum();
                DominanceWitness {
                    state: l,
                    holds,
                    symbol: None,
                    lhs: None,
                    rhs: None,
                    region: Some(region),
                    mass: Some(mass),
                }
            })
            .collect(),
    };

    let holds = witnesses.iter().all(|w| w.holds);
    let two_state_advisory = (!holds && s_count == 2).then(|| {
        let failing: Vec<usize> =
            witnesses.iter().filter(|w| !w.holds).map(|w| w.state).collect();
        format!(
            "with two states the dominance condition is only ever needed for one of them; \
             failing state(s): {failing:?}"
        )
    });
    DominanceReport { holds, p_star, witnesses, two_state_advisory }
}

/// Open solution set of `a x^2 + b x + c > 0` as sorted disjoint intervals.
fn quadratic_positive_set(a: f64, b: f64, c: f64) -> Vec<(f64, f64)> {
    const INF: f64 = f64::INFINITY;
    if a == 0.0 {
        return if b == 0.0 {
            if c > 0.0 {
                vec![(-INF, INF)]
            } else {
                vec![]
            }
        } else if b > 0.0 {
            vec![(-c / b, INF)]
        } else {
            vec![(-INF, -c / b)]
        };
    }
    let disc = b * b - 4.0 * a * c;
    if a > 0.0 {
        if disc <= 0.0 {
            // Positive everywhere except possibly one touching root; that
            // single point has measure zero either way.
            vec![(-INF, INF)]
        } else {
            let sq = disc.sqrt();
            let r1 = (-b - sq) / (2.0 * a);
            let r2 = (-b + sq) / (2.0 * a);
            vec![(-INF, r1.min(r2)), (r1.max(r2), INF)]
        }
    } else if disc <= 0.0 {
        vec![]
    } else {
        let sq = disc.sqrt();
        let r1 = (-b - sq) / (2.0 * a);
        let r2 = (-b + sq) / (2.0 * a);
        vec![(r1.min(r2), r1.max(r2))]
    }
}

fn intersect_intervals(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(alo, ahi) in a {
        for &(blo, bhi) in b {
            let lo = alo.max(blo);
            let hi = ahi.min(bhi);
            if lo < hi {
                out.push((lo, hi));
            }
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

/// Stopping times and fixation structure around a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalDiagnostics {
    /// `U_t`: last position `tau <= t-r-1` starting a run of r+1 barrier
    /// observations; `None` where no such run exists.
    pub stopping_u: Vec<Option<usize>>,
    /// `W_t`: first position `tau >= t+r+1` ending a run of r+1 barrier
    /// observations; `None` where no such run exists.
    pub stopping_w: Vec<Option<usize>>,
    /// Positions whose Viterbi prefix is identical under every sufficiently
    /// long probe; strictly increasing.
    pub fixation_points: Vec<usize>,
    /// Gaps between consecutive fixation points.
    pub cycle_lengths: Vec<usize>,
    /// Mean gap; `None` with fewer than two fixation points.
    pub mean_cycle: Option<f64>,
}

/// Locate, for every position, the nearest barrier runs of length `r + 1` on
/// each side (`W_t` to the right by run end, `U_t` to the left by run start).
pub fn stopping_times(x: &ObsSeq, info: &ClusterInfo) -> RenewalDiagnostics {
    let n = x.len();
    let r = info.r;
    let barrier: Vec<bool> = (0..n).map(|t| info.barrier_set.contains(x, t)).collect();

    // qualifies_end[tau]: positions tau-r..=tau all in the barrier.
    let mut run = 0usize;
    let mut qualifies_end = vec![false; n];
    for t in 0..n {
        run = if barrier[t] { run + 1 } else { 0 };
        qualifies_end[t] = run >= r + 1;
    }

    let mut next_end = vec![None; n + 1];
    for t in (0..n).rev() {
        next_end[t] = if qualifies_end[t] { Some(t) } else { next_end[t + 1] };
    }
    let mut prev_start = vec![None; n];
    for t in 0..n {
        let starts_here = t + r < n && qualifies_end[t + r];
        prev_start[t] = if starts_here {
            Some(t)
        } else if t > 0 {
            prev_start[t - 1]
        } else {
            None
        };
    }

    let stopping_w = (0..n)
        .map(|t| {
            let from = t + r + 1;
            if from < n {
                next_end[from]
            } else {
                None
            }
        })
        .collect();
    let stopping_u = (0..n)
        .map(|t| {
            if t >= r + 1 {
                prev_start[t - r - 1]
            } else {
                None
            }
        })
        .collect();

    RenewalDiagnostics {
        stopping_u,
        stopping_w,
        fixation_points: Vec::new(),
        cycle_lengths: Vec::new(),
        mean_cycle: None,
    }
}

/// Empirical prefix fixation: position `t` is a fixation point when the
/// Viterbi paths of all probe prefixes of length `>= t + 1 + m_pad` agree
/// through `t`. Requires at least three such probes per assessed position;
/// positions with fewer probes are not assessed at all.
///
/// Probes run in increasing order and only consecutive-path common-prefix
/// lengths are kept, so memory stays at two paths regardless of grid size.
pub fn fixation_points(
    model: &HmmModel,
    x: &ObsSeq,
    m_pad: usize,
    probe_grid: &[usize],
) -> Result<RenewalDiagnostics> {
    let le = model.log_emission_matrix(x)?;
    fixation_from(model, &le, m_pad, probe_grid)
}

pub(crate) fn fixation_from(
    model: &HmmModel,
    le: &LogEmissions,
    m_pad: usize,
    probe_grid: &[usize],
) -> Result<RenewalDiagnostics> {
    let n = le.n();
    if probe_grid.is_empty() || probe_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadConfig {
            reason: "probe grid must be nonempty and strictly increasing".into(),
        });
    }
    if probe_grid[0] < 1 || *probe_grid.last().unwrap() > n {
        return Err(Error::BadConfig {
            reason: format!("probe grid must lie within [1, {n}]"),
        });
    }
    let k = probe_grid.len();
    if k < 3 || probe_grid[k - 3] < m_pad + 1 {
        return Err(Error::GridTooSparse { probes: k, m_pad });
    }
    // Largest position with at least three probes of length >= t + 1 + m_pad.
    let t_max = probe_grid[k - 3] - m_pad - 1;

    let mut lcp = Vec::with_capacity(k - 1);
    let mut prev = viterbi_states_len(model, le, probe_grid[0]);
    for &len in &probe_grid[1..] {
        let cur = viterbi_states_len(model, le, len);
        let common = prev.iter().zip(&cur).take_while(|(a, b)| a == b).count();
        lcp.push(common);
        prev = cur;
    }
    // suffix_min[i] = min over pair LCPs from probe i onward.
    let mut suffix_min = vec![usize::MAX; k];
    for i in (0..k - 1).rev() {
        suffix_min[i] = lcp[i].min(suffix_min[i + 1]);
    }

    let mut fixation = Vec::new();
    let mut i_min = 0usize;
    for t in 0..=t_max {
        while probe_grid[i_min] < t + 1 + m_pad {
            i_min += 1;
        }
        if suffix_min[i_min] >= t + 1 {
            fixation.push(t);
        }
    }

    let cycle_lengths: Vec<usize> = fixation.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_cycle = if cycle_lengths.is_empty() {
        None
    } else {
        Some(cycle_lengths.iter().sum::<usize>() as f64 / cycle_lengths.len() as f64)
    };

    Ok(RenewalDiagnostics {
        stopping_u: Vec::new(),
        stopping_w: Vec::new(),
        fixation_points: fixation,
        cycle_lengths,
        mean_cycle,
    })
}
