//! The `Aut(F_n)` action in motion: product-replacement walks with
//! equidistribution diagnostics, approximation of targets by words in a dense
//! subgroup, and orbit steering.

use std::collections::HashSet;
use std::io;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::density::{certify_dense, DensityError, DensityVerdict, SearchBudget, WitnessPolicy};
use crate::freegroup::{nielsen_generators, whitehead_automorphisms, FreeAutomorphism, FreeGroupError, Letter, Word};
use crate::sl2::{number17, operator_norm, Field, GroupElement, Representation, Sl2Error, Tolerance, C64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    FreeGroup(#[from] FreeGroupError),
    #[error(transparent)]
    Sl2(#[from] Sl2Error),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("expected rank {expected}, got {found}")]
    Rank { expected: usize, found: usize },
    #[error("invalid walk configuration: {0}")]
    Config(&'static str),
    #[error("non-finite entries at step {step}")]
    NonFinite { step: u64 },
    #[error("no word within {epsilon}; best distance {}", best.distance)]
    ApproximationBudget { epsilon: f64, best: Box<Approximation> },
    #[error("stage {stage}: the other coordinates are not certified dense ({})", verdict.label())]
    StageNotDense { stage: usize, verdict: Box<DensityVerdict> },
    #[error("target coordinate {coordinate} has norm {norm}, outside the steering region")]
    TargetOutOfRegion { coordinate: usize, norm: f64 },
    #[error("malformed input: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveSet {
    #[default]
    Nielsen,
    Whitehead,
}

impl std::str::FromStr for MoveSet {
    type Err = String;

    fn from_str(s: &str) -> Result<MoveSet, String> {
        match s {
            "nielsen" => Ok(MoveSet::Nielsen),
            "whitehead" => Ok(MoveSet::Whitehead),
            _ => Err(format!("unknown move set {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub steps: u64,
    pub seed: u64,
    pub moves: MoveSet,
    /// A sample is recorded every `stride` steps, and at step 0.
    pub stride: u64,
    /// Largest entry modulus tolerated before the walk restarts from the
    /// initial tuple.
    pub overflow_guard: f64,
    /// Rescale every image to determinant 1 after each move.
    pub renormalize: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig { steps: 1000, seed: 0, moves: MoveSet::Nielsen, stride: 1, overflow_guard: 1e12, renormalize: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkSample {
    pub step: u64,
    /// Restarts so far.
    pub excursion: u32,
    /// `tr ρ(x_i)` for each `i`, then `tr ρ(x_i x_j)` for `i < j`.
    pub traces: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkRun {
    pub field: Field,
    pub labels: Vec<String>,
    pub samples: Vec<WalkSample>,
    /// Steps at which the overflow guard fired.
    pub restarts: Vec<u64>,
}

/// Column labels `x1, …, xn, x1x2, …`.
pub fn trace_labels(rank: usize) -> Vec<String> {
    let mut out: Vec<String> = (1..=rank).map(|i| format!("x{i}")).collect();
    for i in 1..=rank {
        for j in i + 1..=rank {
            out.push(format!("x{i}x{j}"));
        }
    }
    out
}

fn trace_vector(rep: &Representation) -> Vec<C64> {
    let g = rep.images();
    let mut out: Vec<C64> = g.iter().map(GroupElement::trace).collect();
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            out.push(g[i].mul(&g[j]).trace());
        }
    }
    out
}

fn move_list(moves: MoveSet, rank: usize) -> Result<Vec<FreeAutomorphism>, FreeGroupError> {
    match moves {
        MoveSet::Nielsen => nielsen_generators(rank),
        MoveSet::Whitehead => Ok(whitehead_automorphisms(rank)?.into_iter().map(|w| w.automorphism).collect()),
    }
}

/// A product-replacement walk, yielding samples as they are recorded.
pub struct Walk {
    initial: Representation,
    current: Representation,
    cfg: WalkConfig,
    moves: Vec<FreeAutomorphism>,
    rng: ChaCha8Rng,
    step: u64,
    excursion: u32,
    restarts: Vec<u64>,
    started: bool,
}

impl Walk {
    pub fn new(rep: &Representation, cfg: WalkConfig) -> Result<Walk, DynamicsError> {
        if cfg.stride == 0 {
            return Err(DynamicsError::Config("stride must be positive"));
        }
        if !(cfg.overflow_guard > 1.0) {
            return Err(DynamicsError::Config("overflow guard must exceed 1"));
        }
        Ok(Walk {
            initial: rep.clone(),
            current: rep.clone(),
            cfg,
            moves: move_list(cfg.moves, rep.rank())?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            step: 0,
            excursion: 0,
            restarts: Vec::new(),
            started: false,
        })
    }

    pub fn restarts(&self) -> &[u64] {
        &self.restarts
    }

    pub fn current(&self) -> &Representation {
        &self.current
    }

    fn advance(&mut self) -> Result<(), DynamicsError> {
        self.step += 1;
        let a = &self.moves[self.rng.random_range(0..self.moves.len())];
        let mut next = self.current.act(a)?;
        let mut worst = next.images().iter().map(GroupElement::max_abs_entry).fold(0.0, f64::max);
        if !worst.is_finite() {
            return Err(DynamicsError::NonFinite { step: self.step });
        }
        if self.cfg.renormalize && worst <= self.cfg.overflow_guard {
            // A determinant that can no longer be rescaled counts as blow-up.
            match next.images().iter().map(GroupElement::renormalized).collect::<Result<Vec<_>, _>>() {
                Ok(images) => next = Representation::new(images)?,
                Err(_) => worst = f64::INFINITY,
            }
        }
        if worst > self.cfg.overflow_guard {
            self.restarts.push(self.step);
            self.excursion += 1;
            next = self.initial.clone();
        }
        self.current = next;
        Ok(())
    }
}

impl Iterator for Walk {
    type Item = Result<WalkSample, DynamicsError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.started {
            if self.step >= self.cfg.steps {
                return None;
            }
            let target = (self.step + self.cfg.stride).min(self.cfg.steps);
            while self.step < target {
                if let Err(e) = self.advance() {
                    self.step = self.cfg.steps;
                    return Some(Err(e));
                }
            }
        }
        self.started = true;
        Some(Ok(WalkSample { step: self.step, excursion: self.excursion, traces: trace_vector(&self.current) }))
    }
}

/// Runs a walk to completion. With `steps = 0` only the initial sample is
/// recorded; the last step is always sampled.
pub fn random_walk(rep: &Representation, cfg: WalkConfig) -> Result<WalkRun, DynamicsError> {
    let mut walk = Walk::new(rep, cfg)?;
    let samples = walk.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(WalkRun { field: rep.field(), labels: trace_labels(rep.rank()), samples, restarts: walk.restarts })
}

impl WalkRun {
    /// Real parts of one trace column.
    pub fn marginal(&self, column: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.traces[column].re).collect()
    }

    /// Real parts of one trace column, split by excursion.
    pub fn excursions(&self, column: usize) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for s in &self.samples {
            let e = s.excursion as usize;
            if out.len() <= e {
                out.resize(e + 1, Vec::new());
            }
            out[e].push(s.traces[column].re);
        }
        out
    }

    /// One row per sample: `step, excursion`, then one column per trace, or
    /// `_re`/`_im` pairs over ℂ.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let complex = self.field == Field::Complex;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string(), "excursion".to_string()];
        for l in &self.labels {
            if complex {
                header.push(format!("tr_{l}_re"));
                header.push(format!("tr_{l}_im"));
            } else {
                header.push(format!("tr_{l}"));
            }
        }
        out.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.step.to_string(), s.excursion.to_string()];
            for t in &s.traces {
                row.push(t.re.to_string());
                if complex {
                    row.push(t.im.to_string());
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads the samples back from [`WalkRun::write_csv`] output.
pub fn read_walk_csv<R: io::Read>(r: R) -> Result<(Vec<String>, Vec<WalkSample>), DynamicsError> {
    let bad = |e: &dyn std::fmt::Display| DynamicsError::Malformed(e.to_string());
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers().map_err(|e| bad(&e))?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "step" || header[1] != "excursion" {
        return Err(DynamicsError::Malformed("missing step/excursion columns".into()));
    }
    let complex = header.get(2).is_some_and(|h| h.ends_with("_re"));
    let labels: Vec<String> = header[2..]
        .iter()
        .filter(|h| !h.ends_with("_im"))
        .map(|h| h.trim_start_matches("tr_").trim_end_matches("_re").to_string())
        .collect();
    let mut samples = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let num = |i: usize| -> Result<f64, DynamicsError> { rec.get(i).unwrap_or("").parse::<f64>().map_err(|e| bad(&e)) };
        let step = rec.get(0).unwrap_or("").parse::<u64>().map_err(|e| bad(&e))?;
        let excursion = rec.get(1).unwrap_or("").parse::<u32>().map_err(|e| bad(&e))?;
        let traces = (0..labels.len())
            .map(|k| if complex { Ok(C64::new(num(2 + 2 * k)?, num(3 + 2 * k)?)) } else { Ok(C64::new(num(2 + k)?, 0.0)) })
            .collect::<Result<Vec<_>, DynamicsError>>()?;
        samples.push(WalkSample { step, excursion, traces });
    }
    Ok((labels, samples))
}

/// `tr ρ([x₁, x₂])`, an `Aut(F₂)` invariant.
pub fn commutator_trace(rep: &Representation) -> Result<C64, DynamicsError> {
    if rep.rank() != 2 {
        return Err(DynamicsError::Rank { expected: 2, found: rep.rank() });
    }
    let c = Word::commutator(&Word::generator(2, 1), &Word::generator(2, 2));
    Ok(rep.evaluate(&c)?.trace())
}

/// Density of `tr g` for Haar-random `g ∈ SU(2)` on `[-2, 2]`.
pub fn haar_trace_density(t: f64) -> f64 {
    if t.abs() >= 2.0 {
        return 0.0;
    }
    (4.0 - t * t).sqrt() / (2.0 * std::f64::consts::PI)
}

pub fn haar_trace_cdf(t: f64) -> f64 {
    use std::f64::consts::PI;
    if t <= -2.0 {
        return 0.0;
    }
    if t >= 2.0 {
        return 1.0;
    }
    0.5 + t * (4.0 - t * t).sqrt() / (4.0 * PI) + (t / 2.0).asin() / PI
}

/// Traces of Haar-random SU(2) elements, drawn as uniform unit quaternions by
/// rejection from the cube.
pub fn rejection_haar_traces<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let r2: f64 = q.iter().map(|x| x * x).sum();
        if !(1e-12..=1.0).contains(&r2) {
            continue;
        }
        out.push(2.0 * q[0] / r2.sqrt());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

impl KsTest {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Asymptotic Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_survival((s + 0.12 + 0.11 / s) * d)
}

pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsTest {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    KsTest { n: x.len(), statistic: d, p_value: ks_p_value(d, n) }
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsTest { n: a.len().min(b.len()), statistic: d, p_value: ks_p_value(d, na * nb / (na + nb)) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxBudget {
    /// Longest word returned.
    pub max_length: usize,
    /// Words kept in the half-length table.
    pub table_size: usize,
}

impl Default for ApproxBudget {
    fn default() -> Self {
        ApproxBudget { max_length: 20, table_size: 20_000 }
    }
}

/// A word over the generating list together with its claimed distance to
/// the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Approximation {
    pub word: Word,
    pub distance: f64,
}

impl Approximation {
    /// Re-evaluates the word and checks the stored claim.
    pub fn verify(&self, s: &[GroupElement], target: &GroupElement) -> Result<bool, DynamicsError> {
        let rep = Representation::new(s.to_vec())?;
        Ok(rep.evaluate(&self.word)?.distance(target) <= self.distance)
    }
}

fn half_table(rep: &Representation, half: usize, cap: usize) -> Vec<(Word, GroupElement)> {
    let rank = rep.rank();
    let mut seen = HashSet::new();
    let key = |g: &GroupElement| g.entries().map(|z| ((z.re * 1e12).round() as i64, (z.im * 1e12).round() as i64));
    let id = GroupElement::identity(rep.field());
    seen.insert(key(&id));
    let mut table = vec![(Word::identity(rank), id)];
    let mut sphere = vec![0usize];
    for _ in 0..half {
        let mut next = Vec::new();
        for &k in &sphere {
            for l in Letter::all(rank) {
                if table.len() >= cap {
                    return table;
                }
                let (w, g) = &table[k];
                if w.letters().last() == Some(&l.inverse()) {
                    continue;
                }
                let gen = rep.image(l.index());
                let h = if l.is_inverse() { g.mul(&gen.inverse()) } else { g.mul(gen) };
                if seen.insert(key(&h)) {
                    table.push((w.mul_letter(l), h));
                    next.push(table.len() - 1);
                }
            }
        }
        sphere = next;
    }
    table
}

fn nearest_pairs<const K: usize>(
    table: &[(Word, GroupElement)],
    target: &GroupElement,
    coords: impl Fn(&GroupElement) -> [f64; K] + Sync,
) -> Vec<(usize, usize)> {
    let points: Vec<[f64; K]> = table.iter().map(|(_, g)| coords(g)).collect();
    let tree: ImmutableKdTree<f64, K> = ImmutableKdTree::new_from_slice(&points).expect("finite coordinates");
    (0..table.len())
        .into_par_iter()
        .map(|j| {
            let r = target.mul(&table[j].1.inverse());
            (tree.query(&coords(&r)).nearest_one::<SquaredEuclidean<f64>>().execute().item as usize, j)
        })
        .collect()
}

/// Finds a word `w` over `s` with `‖w(s) − target‖ < epsilon` by a
/// meet-in-the-middle search: every `u · v` with `u`, `v` of length at most
/// half the budget is considered, with `u` located by nearest-neighbour
/// lookup against `target · v⁻¹`. Among the candidates the closest wins,
/// ties going to the shorter word.
pub fn approximate_element(
    s: &[GroupElement],
    target: &GroupElement,
    epsilon: f64,
    budget: &ApproxBudget,
) -> Result<Approximation, DynamicsError> {
    if s.is_empty() {
        return Err(DynamicsError::Malformed("empty generating list".into()));
    }
    let rep = Representation::new(s.to_vec())?;
    if target.field() != rep.field() {
        return Err(Sl2Error::FieldMismatch(rep.field(), target.field()).into());
    }
    let table = half_table(&rep, budget.max_length / 2, budget.table_size.max(1));
    let pairs = match rep.field() {
        Field::Complex => nearest_pairs::<8>(&table, target, |g| {
            let m = g.entries();
            [m[0].re, m[0].im, m[1].re, m[1].im, m[2].re, m[2].im, m[3].re, m[3].im]
        }),
        Field::Unitary => nearest_pairs::<4>(&table, target, |g| {
            let m = g.entries();
            [m[0].re, m[0].im, m[1].re, m[1].im]
        }),
        Field::Real => nearest_pairs::<4>(&table, target, |g| g.entries().map(|z| z.re)),
    };
    let best = pairs
        .into_par_iter()
        .map(|(i, j)| {
            let word = table[i].0.mul(&table[j].0);
            let distance = rep.evaluate(&word).map(|g| g.distance(target)).unwrap_or(f64::INFINITY);
            Approximation { word, distance }
        })
        .min_by(|a, b| a.distance.total_cmp(&b.distance).then(a.word.len().cmp(&b.word.len())).then_with(|| a.word.cmp(&b.word)))
        .expect("table contains the empty word");
    if best.distance < epsilon {
        Ok(best)
    } else {
        Err(DynamicsError::ApproximationBudget { epsilon, best: Box::new(best) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerBudget {
    pub approx: ApproxBudget,
    pub density: SearchBudget,
    /// Largest operator norm allowed for a target image outside SU(2).
    pub target_bound: f64,
    /// Retries of a stage whose approximation missed, each after first
    /// multiplying a not yet fixed coordinate by a short word.
    pub premix_attempts: usize,
    /// Other stage orders tried when the order `n, …, 1` ends incomplete.
    pub stage_orders: usize,
}

impl Default for SteerBudget {
    fn default() -> Self {
        SteerBudget { approx: ApproxBudget::default(), density: SearchBudget::default(), target_bound: 10.0, premix_attempts: 16, stage_orders: 23 }
    }
}

/// One stage: `x_k ↦ word⁻¹ · x_k`, so the image of `x_k` becomes
/// `ρ(word) ρ(x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteerStage {
    pub coordinate: usize,
    pub word: Word,
    pub distance: f64,
    pub converged: bool,
    /// Set on a move that only changes a coordinate fixed by a later stage,
    /// to give the next stage a better spread generating pair.
    pub preparatory: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteerResult {
    pub automorphism: FreeAutomorphism,
    /// `‖act(automorphism, φ)(x_i) − ψ(x_i)‖` for each `i`.
    pub distances: Vec<f64>,
    pub stages: Vec<SteerStage>,
    /// Every stage met its target; otherwise the result is partial.
    pub complete: bool,
}

impl SteerResult {
    pub fn max_distance(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }

    /// Recomputes the distances from scratch and compares them with the
    /// recorded ones.
    pub fn replay(&self, phi: &Representation, psi: &Representation) -> Result<Vec<f64>, DynamicsError> {
        let moved = phi.act(&self.automorphism)?;
        let found: Vec<f64> = moved.images().iter().zip(psi.images()).map(|(a, b)| a.distance(b)).collect();
        for (i, (&f, &r)) in found.iter().zip(&self.distances).enumerate() {
            if f > r * (1.0 + 1e-9) + 1e-15 {
                return Err(DynamicsError::Malformed(format!("coordinate {} is at {f}, recorded {r}", i + 1)));
            }
        }
        Ok(found)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "automorphism": self.automorphism,
            "distances": self.distances.iter().map(|&d| number17(d)).collect::<Vec<_>>(),
            "stages": self.stages.iter().map(|s| json!({
                "coordinate": s.coordinate, "word": s.word.to_string(),
                "distance": number17(s.distance), "converged": s.converged, "preparatory": s.preparatory,
            })).collect::<Vec<_>>(),
            "complete": self.complete,
        })
    }

    pub fn from_json(v: &Value) -> Result<SteerResult, DynamicsError> {
        let bad = |m: &str| DynamicsError::Malformed(m.to_string());
        let automorphism: FreeAutomorphism =
            serde_json::from_value(v.get("automorphism").cloned().ok_or_else(|| bad("missing automorphism"))?)
                .map_err(|e| DynamicsError::Malformed(e.to_string()))?;
        let rank = automorphism.rank();
        let distances = v
            .get("distances")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing distances"))?
            .iter()
            .map(|d| d.as_f64().ok_or_else(|| bad("distance")))
            .collect::<Result<Vec<_>, _>>()?;
        let stages = v
            .get("stages")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing stages"))?
            .iter()
            .map(|s| {
                Ok(SteerStage {
                    coordinate: s.get("coordinate").and_then(Value::as_u64).ok_or_else(|| bad("coordinate"))? as usize,
                    word: Word::parse(s.get("word").and_then(Value::as_str).ok_or_else(|| bad("word"))?, rank)?,
                    distance: s.get("distance").and_then(Value::as_f64).ok_or_else(|| bad("stage distance"))?,
                    converged: s.get("converged").and_then(Value::as_bool).ok_or_else(|| bad("converged"))?,
                    preparatory: s.get("preparatory").and_then(Value::as_bool).unwrap_or(false),
                })
            })
            .collect::<Result<Vec<_>, DynamicsError>>()?;
        let complete = v.get("complete").and_then(Value::as_bool).ok_or_else(|| bad("missing complete"))?;
        Ok(SteerResult { automorphism, distances, stages, complete })
    }
}

fn stage_automorphism(rank: usize, k: usize, w: &Word) -> Result<FreeAutomorphism, FreeGroupError> {
    let mut images: Vec<Word> = (1..=rank).map(|i| Word::generator(rank, i)).collect();
    let mut inverse_images = images.clone();
    let x = Word::generator(rank, k);
    images[k - 1] = w.inverse().mul(&x);
    inverse_images[k - 1] = w.mul(&x);
    FreeAutomorphism::new(images, inverse_images)
}

/// Short words over the coordinates other than `j`, used to perturb a
/// coordinate that a later stage overwrites anyway.
fn premix_candidates(n: usize, free: &[usize], limit: usize) -> Vec<(usize, Word)> {
    let mut out = Vec::new();
    for len in 1..=2 {
        for &j in free {
            let letters: Vec<Letter> = Letter::all(n).filter(|l| l.index() != j).collect();
            let mut words: Vec<Vec<Letter>> = vec![vec![]];
            for _ in 0..len {
                words = words
                    .iter()
                    .flat_map(|w| letters.iter().filter(move |&&l| w.last() != Some(&l.inverse())).map(move |&l| [w.as_slice(), &[l]].concat()))
                    .collect();
            }
            out.extend(words.into_iter().map(|w| (j, crate::freegroup::reduce(n, w).expect("rank matches"))));
        }
    }
    out.truncate(limit);
    out
}

struct StageTry {
    current: Representation,
    automorphism: FreeAutomorphism,
    stages: Vec<SteerStage>,
    distance: f64,
    converged: bool,
}

fn try_stage(
    start: &Representation,
    k: usize,
    premix: Option<&(usize, Word)>,
    psi: &Representation,
    epsilon: f64,
    budget: &SteerBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<Result<StageTry, DensityVerdict>, DynamicsError> {
    let n = start.rank();
    let mut current = start.clone();
    let mut automorphism = FreeAutomorphism::identity(n);
    let mut stages = Vec::new();
    if let Some((j, w)) = premix {
        let a = stage_automorphism(n, *j, w)?;
        current = current.act(&a)?;
        automorphism = a;
        let distance = current.image(*j).distance(psi.image(*j));
        stages.push(SteerStage { coordinate: *j, word: w.clone(), distance, converged: true, preparatory: true });
    }
    let others: Vec<usize> = (1..=n).filter(|&i| i != k).collect();
    let s: Vec<GroupElement> = others.iter().map(|&i| *current.image(i)).collect();
    let verdict = certify_dense(&s, &budget.density, tol, policy)?;
    if !verdict.is_dense() {
        return Ok(Err(verdict));
    }
    let target = psi.image(k).mul(&current.image(k).inverse());
    let (local, converged) = match approximate_element(&s, &target, epsilon, &budget.approx) {
        Ok(a) => (a.word, true),
        Err(DynamicsError::ApproximationBudget { best, .. }) => (best.word, false),
        Err(e) => return Err(e),
    };
    let letters = local.letters().iter().map(|l| Letter::new(others[l.index() - 1], l.is_inverse()));
    let word = crate::freegroup::reduce(n, letters)?;
    let a = stage_automorphism(n, k, &word)?;
    current = current.act(&a)?;
    automorphism = a.compose(&automorphism)?;
    let distance = current.image(k).distance(psi.image(k));
    stages.push(SteerStage { coordinate: k, word, distance, converged, preparatory: false });
    Ok(Ok(StageTry { current, automorphism, stages, distance, converged }))
}

/// Moves `phi` towards `psi` one coordinate at a time, from `x_n` down to
/// `x_1`, falling back to other orders when that one ends incomplete. Stage `k` multiplies `x_k` on the left by a word in the other
/// current coordinates approximating `ψ(x_k) φ_k(x_k)⁻¹`, after certifying
/// that those coordinates generate a dense subgroup.
///
/// Some dense pairs are close to a finite subgroup and need very long words.
/// When stage `k` misses, it is retried after multiplying some `x_j` that a
/// later stage overwrites by a short word.
pub fn steer(
    phi: &Representation,
    psi: &Representation,
    epsilon: f64,
    budget: &SteerBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<SteerResult, DynamicsError> {
    let n = phi.rank();
    if psi.rank() != n {
        return Err(DynamicsError::Rank { expected: n, found: psi.rank() });
    }
    if psi.field() != phi.field() {
        return Err(Sl2Error::FieldMismatch(phi.field(), psi.field()).into());
    }
    if phi.field() != Field::Unitary {
        for (i, g) in psi.images().iter().enumerate() {
            let norm = operator_norm(&g.entries());
            if norm > budget.target_bound {
                return Err(DynamicsError::TargetOutOfRegion { coordinate: i + 1, norm });
            }
        }
    }
    let default_order: Vec<usize> = (1..=n).rev().collect();
    let mut best = steer_in_order(phi, psi, &default_order, epsilon, budget, tol, policy)?;
    if !best.complete {
        for order in permutations(n).into_iter().filter(|o| *o != default_order).take(budget.stage_orders) {
            // a dense-stage failure in another order only rules that order out
            if let Ok(r) = steer_in_order(phi, psi, &order, epsilon, budget, tol, policy) {
                let done = r.complete;
                if done || r.max_distance() < best.max_distance() {
                    best = r;
                }
                if done {
                    break;
                }
            }
        }
    }
    Ok(best)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n);
            out.push(q);
        }
    }
    out.sort_by(|a, b| b.cmp(a));
    out
}

fn steer_in_order(
    phi: &Representation,
    psi: &Representation,
    order: &[usize],
    epsilon: f64,
    budget: &SteerBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<SteerResult, DynamicsError> {
    let n = phi.rank();
    let mut current = phi.clone();
    let mut total = FreeAutomorphism::identity(n);
    let mut stages = Vec::with_capacity(n);
    for (pos, &k) in order.iter().enumerate() {
        if current.image(k) == psi.image(k) {
            stages.push(SteerStage { coordinate: k, word: Word::identity(n), distance: 0.0, converged: true, preparatory: false });
            continue;
        }
        let mut best = match try_stage(&current, k, None, psi, epsilon, budget, tol, policy)? {
            Ok(t) => t,
            Err(verdict) => return Err(DynamicsError::StageNotDense { stage: k, verdict: Box::new(verdict) }),
        };
        if !best.converged {
            for premix in premix_candidates(n, &order[pos + 1..], budget.premix_attempts) {
                if let Ok(t) = try_stage(&current, k, Some(&premix), psi, epsilon, budget, tol, policy)? {
                    let done = t.converged;
                    if done || t.distance < best.distance {
                        best = t;
                    }
                    if done {
                        break;
                    }
                }
            }
        }
        current = best.current;
        total = best.automorphism.compose(&total)?;
        stages.extend(best.stages);
    }
    let moved = phi.act(&total)?;
    let distances: Vec<f64> = moved.images().iter().zip(psi.images()).map(|(a, b)| a.distance(b)).collect();
    let complete = stages.iter().all(|s| s.converged) && distances.iter().all(|&d| d < epsilon);
    Ok(SteerResult { automorphism: total, distances, stages, complete })
}
