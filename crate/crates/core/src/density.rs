//! Certificate-producing density tests for finitely generated subgroups of
//! SL₂(ℝ), SL₂(ℂ) and SU(2).
//!
//! A subgroup is dense when it is nondiscrete and its adjoint image spans the
//! whole algebra generated by `Ad(G)`. The span is checked numerically on
//! explicit words. Nondiscreteness is not decidable, so a [`Witness`] stands
//! in for it: an elliptic word with a rotation angle far from every rational
//! multiple of π with small denominator, a word very close to `±I` that
//! does not commute with some other word, or a non-elementary pair of words
//! violating Jørgensen's inequality `|tr²u − 4| + |tr[u,v] − 2| ≥ 1`. Every `Dense` verdict carries a
//! certificate that [`DensityCertificate::replay`] re-derives from the raw
//! matrices.

use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use crate::freegroup::{nielsen_generators, FreeAutomorphism, FreeGroupError, Letter, Word};
use crate::sl2::{
    ad_algebra_dim, ad_real_span_rank, ad_span_rank, number17, operator_norm, rational_gap, Field, GroupElement, IsometryKind, Representation,
    Sl2Error, Tolerance, C64,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("generating set is empty")]
    Empty,
    #[error(transparent)]
    Sl2(#[from] Sl2Error),
    #[error(transparent)]
    FreeGroup(#[from] FreeGroupError),
    #[error("need at least {min} elements, got {found}")]
    TooFewElements { min: usize, found: usize },
    #[error("rank mismatch: {0} vs {1}")]
    RankMismatch(usize, usize),
    #[error("malformed certificate: {0}")]
    Malformed(String),
}

/// Caps for one certificate search. `seed` drives the per-length
/// subsampling and all candidate sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_word_length: usize,
    pub max_candidates: usize,
    #[serde(with = "millis")]
    pub time_cap: Duration,
    pub seed: u64,
    /// Candidates tried by [`omega_tilde_search`].
    pub omega_attempts: usize,
    /// Size of the identity perturbation used by [`omega_tilde_search`].
    pub sampling_radius: f64,
    /// Depth of Nielsen chains tried by [`redundant_heuristic`].
    pub nielsen_depth: usize,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_word_length: 8,
            max_candidates: 4000,
            time_cap: Duration::from_secs(30),
            seed: 0,
            omega_attempts: 64,
            sampling_radius: 0.3,
            nielsen_depth: 2,
        }
    }
}

impl SearchBudget {
    pub fn with_seed(self, seed: u64) -> SearchBudget {
        SearchBudget { seed, ..self }
    }
}

/// Numeric thresholds for nondiscreteness witnesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessPolicy {
    /// Required distance of `θ/π` from every `p/q` with `q ≤ q_max`.
    pub irrational_gap: f64,
    pub q_max: u32,
    /// Open interval for the distance of a small word from `±I`.
    pub small_lo: f64,
    pub small_hi: f64,
    /// Relative size of `gh − hg` below which two words count as commuting.
    pub commute_tol: f64,
    /// Non-central words never got closer than this to `±I`: evidence of
    /// discreteness.
    pub discrete_gap: f64,
    /// Required slack below 1 in Jørgensen's inequality.
    pub jorgensen_margin: f64,
}

impl Default for WitnessPolicy {
    fn default() -> Self {
        WitnessPolicy {
            irrational_gap: 1e-6,
            q_max: 64,
            small_lo: 1e-9,
            small_hi: 1e-3,
            commute_tol: 1e-9,
            discrete_gap: 1e-2,
            jorgensen_margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    Elliptic { word: Word, angle: f64, gap: f64, denominator: u32 },
    Small { word: Word, distance: f64, companion: Word, commutator: f64 },
    /// `u` non-elliptic, words of length ≤ 3 in `u, v` span `Ad`, and
    /// `trace_term + commutator_term < 1`. Discrete non-elementary groups
    /// satisfy Jørgensen's inequality, so `⟨u, v⟩` is not discrete.
    Jorgensen { word: Word, companion: Word, trace_term: f64, commutator_term: f64 },
}

impl Witness {
    pub fn word(&self) -> &Word {
        match self {
            Witness::Elliptic { word, .. } | Witness::Small { word, .. } | Witness::Jorgensen { word, .. } => word,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Witness::Elliptic { word, angle, gap, denominator } => json!({
                "kind": "elliptic", "word": word.to_string(), "angle": number17(*angle),
                "gap": number17(*gap), "denominator": denominator,
            }),
            Witness::Small { word, distance, companion, commutator } => json!({
                "kind": "small", "word": word.to_string(), "distance": number17(*distance),
                "companion": companion.to_string(), "commutator": number17(*commutator),
            }),
            Witness::Jorgensen { word, companion, trace_term, commutator_term } => json!({
                "kind": "jorgensen", "word": word.to_string(), "companion": companion.to_string(),
                "trace_term": number17(*trace_term), "commutator_term": number17(*commutator_term),
            }),
        }
    }

    fn from_json(v: &Value, rank: usize) -> Result<Witness, DensityError> {
        let word = |k: &str| -> Result<Word, DensityError> {
            let s = v.get(k).and_then(Value::as_str).ok_or_else(|| DensityError::Malformed(format!("missing {k}")))?;
            Ok(Word::parse(s, rank)?)
        };
        let num = |k: &str| -> Result<f64, DensityError> {
            v.get(k).and_then(Value::as_f64).ok_or_else(|| DensityError::Malformed(format!("missing {k}")))
        };
        match v.get("kind").and_then(Value::as_str) {
            Some("elliptic") => Ok(Witness::Elliptic {
                word: word("word")?,
                angle: num("angle")?,
                gap: num("gap")?,
                denominator: v.get("denominator").and_then(Value::as_u64).unwrap_or(0) as u32,
            }),
            Some("small") => Ok(Witness::Small {
                word: word("word")?,
                distance: num("distance")?,
                companion: word("companion")?,
                commutator: num("commutator")?,
            }),
            Some("jorgensen") => Ok(Witness::Jorgensen {
                word: word("word")?,
                companion: word("companion")?,
                trace_term: num("trace_term")?,
                commutator_term: num("commutator_term")?,
            }),
            other => Err(DensityError::Malformed(format!("unknown witness kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayFailure {
    #[error("spanning words reach rank {found}, need {required}")]
    NotSpanning { found: usize, required: usize },
    #[error("recorded rank {recorded} but replay measures {found}")]
    RankMismatch { recorded: usize, found: usize },
    #[error("witness word is not elliptic")]
    NotElliptic,
    #[error("witness angle is within {gap:e} of a rational multiple of π (q = {q})")]
    RationalAngle { gap: f64, q: u32 },
    #[error("small witness distance {0:e} outside the accepted band")]
    NotSmall(f64),
    #[error("small witness commutes with its companion")]
    Commutes,
    #[error("small-element witnesses are not accepted for SU(2)")]
    SmallInCompact,
    #[error("Jørgensen witness fails: {0}")]
    Jorgensen(&'static str),
    #[error("recorded value {field} = {recorded} but replay gives {found}")]
    ValueMismatch { field: &'static str, recorded: f64, found: f64 },
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// Evidence that `⟨generators⟩` is dense.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCertificate {
    pub field: Field,
    pub generators: Vec<GroupElement>,
    pub spanning_words: Vec<Word>,
    pub rank: usize,
    pub witness: Witness,
}

impl DensityCertificate {
    /// Re-evaluates every word from the stored generators and checks the
    /// span rank, the witness predicate and every recorded number.
    pub fn replay(&self, tol: &Tolerance, policy: &WitnessPolicy) -> Result<(), ReplayFailure> {
        let rep = Representation::new(self.generators.clone()).map_err(DensityError::from)?;
        let images = self
            .spanning_words
            .iter()
            .map(|w| rep.evaluate(w))
            .collect::<Result<Vec<_>, _>>()
            .map_err(DensityError::from)?;
        let found = ad_real_span_rank(&images, tol);
        let required = ad_algebra_dim(self.field);
        if found != self.rank {
            return Err(ReplayFailure::RankMismatch { recorded: self.rank, found });
        }
        if found < required {
            return Err(ReplayFailure::NotSpanning { found, required });
        }
        match &self.witness {
            Witness::Elliptic { word, angle, gap, denominator } => {
                let g = rep.evaluate(word).map_err(DensityError::from)?;
                let a = g.rotation_angle(tol).map_err(|_| ReplayFailure::NotElliptic)?;
                let (gp, q) = rational_gap(a, policy.q_max);
                if gp <= policy.irrational_gap {
                    return Err(ReplayFailure::RationalAngle { gap: gp, q });
                }
                check_value("angle", *angle, a)?;
                check_value("gap", *gap, gp)?;
                check_value("denominator", *denominator as f64, q as f64)?;
            }
            Witness::Small { word, distance, companion, commutator } => {
                if self.field == Field::Unitary {
                    return Err(ReplayFailure::SmallInCompact);
                }
                let g = rep.evaluate(word).map_err(DensityError::from)?;
                let h = rep.evaluate(companion).map_err(DensityError::from)?;
                let d = g.distance_from_center();
                if !(d > policy.small_lo && d < policy.small_hi) {
                    return Err(ReplayFailure::NotSmall(d));
                }
                let c = commutator_size(&g, &h);
                if c <= policy.commute_tol {
                    return Err(ReplayFailure::Commutes);
                }
                check_value("distance", *distance, d)?;
                check_value("commutator", *commutator, c)?;
            }
            Witness::Jorgensen { word, companion, trace_term, commutator_term } => {
                let u = rep.evaluate(word).map_err(DensityError::from)?;
                let v = rep.evaluate(companion).map_err(DensityError::from)?;
                let (a, b) = jorgensen_terms(&u, &v, tol, policy).map_err(ReplayFailure::Jorgensen)?;
                check_value("trace_term", *trace_term, a)?;
                check_value("commutator_term", *commutator_term, b)?;
            }
        }
        Ok(())
    }

    /// The same certificate for a larger generating set whose first
    /// elements are `self.generators`.
    pub fn extend(&self, generators: &[GroupElement]) -> Result<DensityCertificate, DensityError> {
        let k = self.generators.len();
        if generators.len() < k || generators[..k] != self.generators[..] {
            return Err(DensityError::Malformed("generators do not extend the certified set".into()));
        }
        let n = generators.len();
        let lift = |w: &Word| w.with_rank(n);
        let witness = match &self.witness {
            Witness::Elliptic { word, angle, gap, denominator } => {
                Witness::Elliptic { word: lift(word)?, angle: *angle, gap: *gap, denominator: *denominator }
            }
            Witness::Small { word, distance, companion, commutator } => Witness::Small {
                word: lift(word)?,
                distance: *distance,
                companion: lift(companion)?,
                commutator: *commutator,
            },
            Witness::Jorgensen { word, companion, trace_term, commutator_term } => Witness::Jorgensen {
                word: lift(word)?,
                companion: lift(companion)?,
                trace_term: *trace_term,
                commutator_term: *commutator_term,
            },
        };
        Ok(DensityCertificate {
            field: self.field,
            generators: generators.to_vec(),
            spanning_words: self.spanning_words.iter().map(lift).collect::<Result<_, _>>()?,
            rank: self.rank,
            witness,
        })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "field": self.field,
            "generators": Representation::new(self.generators.clone()).map(|r| r.to_json()).unwrap_or(Value::Null),
            "spanning_words": self.spanning_words.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
            "rank": self.rank,
            "witness": self.witness.to_json(),
        })
    }

    pub fn from_json(v: &Value) -> Result<DensityCertificate, DensityError> {
        let gens = v.get("generators").ok_or_else(|| DensityError::Malformed("missing generators".into()))?;
        let rep = Representation::from_json(gens, &Tolerance::default())?;
        let n = rep.rank();
        let words = v
            .get("spanning_words")
            .and_then(Value::as_array)
            .ok_or_else(|| DensityError::Malformed("missing spanning_words".into()))?
            .iter()
            .map(|s| {
                let s = s.as_str().ok_or_else(|| DensityError::Malformed("word is not a string".into()))?;
                Ok(Word::parse(s, n)?)
            })
            .collect::<Result<Vec<_>, DensityError>>()?;
        let rank = v.get("rank").and_then(Value::as_u64).ok_or_else(|| DensityError::Malformed("missing rank".into()))?;
        let witness = Witness::from_json(v.get("witness").unwrap_or(&Value::Null), n)?;
        Ok(DensityCertificate { field: rep.field(), generators: rep.into_images(), spanning_words: words, rank: rank as usize, witness })
    }
}

fn check_value(field: &'static str, recorded: f64, found: f64) -> Result<(), ReplayFailure> {
    if recorded.to_bits() != found.to_bits() {
        return Err(ReplayFailure::ValueMismatch { field, recorded, found });
    }
    Ok(())
}

/// Reduced words of length at most `len` in two letters.
fn short_words(len: usize) -> Vec<Word> {
    let mut out = vec![Word::identity(2)];
    let mut sphere = out.clone();
    for _ in 0..len {
        sphere = sphere
            .iter()
            .flat_map(|w| Letter::all(2).filter(|l| w.letters().last() != Some(&l.inverse())).map(|l| w.mul_letter(l)))
            .collect();
        out.extend(sphere.iter().cloned());
    }
    out
}

/// The two terms of Jørgensen's inequality, after checking that `u` is
/// neither central nor elliptic, that `⟨u, v⟩` is non-elementary (short
/// words span `Ad`), and that the sum is below `1 − jorgensen_margin`.
fn jorgensen_terms(
    u: &GroupElement,
    v: &GroupElement,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<(f64, f64), &'static str> {
    if u.field() == Field::Unitary {
        return Err("not applicable to SU(2)");
    }
    if !matches!(u.classify(tol).kind, IsometryKind::Hyperbolic | IsometryKind::Parabolic) {
        return Err("first word is elliptic or central");
    }
    let t = u.trace();
    let a = (t * t - 4.0).norm();
    let comm = u.mul(v).mul(&u.inverse()).mul(&v.inverse());
    let b = (comm.trace() - 2.0).norm();
    if a + b >= 1.0 - policy.jorgensen_margin {
        return Err("inequality holds");
    }
    let pair = Representation::new(vec![*u, *v]).map_err(|_| "field mismatch")?;
    let short: Vec<GroupElement> = short_words(3).iter().map(|w| pair.evaluate_unchecked(w)).collect();
    if ad_span_rank(&short, tol) < 9 {
        return Err("pair is elementary");
    }
    Ok((a, b))
}

/// `‖gh − hg‖ / (‖g‖ ‖h‖)`.
fn commutator_size(g: &GroupElement, h: &GroupElement) -> f64 {
    g.mul(h).distance(&h.mul(g)) / (operator_norm(&g.entries()) * operator_norm(&h.entries()))
}

impl Serialize for DensityCertificate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityCertificate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        DensityCertificate::from_json(&Value::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonDensityReason {
    /// Central, abelian, or with a common fixed point on the sphere at
    /// infinity.
    Elementary,
    /// Span of `Ad` stalled below full dimension.
    ReducibleSpan,
    /// Full span, every elliptic word has a rational angle, no word came
    /// near `±I`, and near-identity quotients were absent or had commutators
    /// collapsing onto `±I`.
    DiscreteSchottkyLike,
}

/// What a failed or inconclusive search saw.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchReport {
    pub candidates: usize,
    pub max_length: usize,
    pub rank: usize,
    /// Largest rational gap over elliptic words (0 when none were seen).
    pub best_angle_gap: f64,
    /// Smallest distance from `±I` over non-central words.
    pub min_center_distance: Option<f64>,
    pub timed_out: bool,
    /// Quotients `u⁻¹v` of searched words within 0.5 of `±I`.
    pub near_identity_quotients: usize,
    /// Commutator chains that collapsed onto `±I`, as they must in a
    /// discrete group.
    pub commutator_collapses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum DensityVerdict {
    Dense { certificate: DensityCertificate },
    LikelyNotDense { reason: NonDensityReason, report: SearchReport },
    Unknown { report: SearchReport },
}

impl DensityVerdict {
    pub fn is_dense(&self) -> bool {
        matches!(self, DensityVerdict::Dense { .. })
    }

    pub fn certificate(&self) -> Option<&DensityCertificate> {
        match self {
            DensityVerdict::Dense { certificate } => Some(certificate),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DensityVerdict::Dense { .. } => "dense",
            DensityVerdict::LikelyNotDense { reason: NonDensityReason::Elementary, .. } => "likely-not-dense (elementary)",
            DensityVerdict::LikelyNotDense { reason: NonDensityReason::ReducibleSpan, .. } => {
                "likely-not-dense (reducible-span)"
            }
            DensityVerdict::LikelyNotDense { reason: NonDensityReason::DiscreteSchottkyLike, .. } => {
                "likely-not-dense (discrete-schottky-like)"
            }
            DensityVerdict::Unknown { .. } => "unknown",
        }
    }
}

fn shared_field(s: &[GroupElement]) -> Result<Field, DensityError> {
    let field = s.first().ok_or(DensityError::Empty)?.field();
    if let Some(g) = s.iter().find(|g| g.field() != field) {
        return Err(Sl2Error::FieldMismatch(field, g.field()).into());
    }
    Ok(field)
}

/// Eigenvectors of a non-central element (one for parabolics).
fn eigenvectors(g: &GroupElement) -> Vec<[C64; 2]> {
    let [a, b, c, d] = g.entries();
    let t = g.trace();
    let s = (t * t - 4.0).sqrt();
    let mut out = Vec::new();
    for lambda in [(t + s) / 2.0, (t - s) / 2.0] {
        let v1 = [b, lambda - a];
        let v2 = [lambda - d, c];
        let n1 = v1[0].norm() + v1[1].norm();
        let n2 = v2[0].norm() + v2[1].norm();
        let v = if n1 >= n2 { v1 } else { v2 };
        let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        if n > 0.0 {
            out.push([v[0] / n, v[1] / n]);
        }
    }
    out
}

fn fixes_line(h: &GroupElement, v: &[C64; 2], tol: f64) -> bool {
    let [a, b, c, d] = h.entries();
    let w = [a * v[0] + b * v[1], c * v[0] + d * v[1]];
    let wedge = (w[0] * v[1] - w[1] * v[0]).norm();
    wedge <= tol * (w[0].norm_sqr() + w[1].norm_sqr()).sqrt()
}

/// Central elements only, or a common eigenline (so a common fixed point on
/// the boundary sphere). Abelian groups fall under the second case.
pub fn is_elementary(s: &[GroupElement], tol: &Tolerance) -> bool {
    let Some(g) = s.iter().find(|g| g.distance_from_center() > tol.par) else {
        return true;
    };
    eigenvectors(g).iter().any(|v| s.iter().all(|h| fixes_line(h, v, 1e-9)))
}

#[derive(Clone)]
struct Candidate {
    word: Word,
    value: GroupElement,
}

/// Searches words in `S` for a density certificate. If the full set fails,
/// the search is repeated without the last element, so a certified set stays
/// certified when elements are appended.
pub fn certify_dense(
    s: &[GroupElement],
    budget: &SearchBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<DensityVerdict, DensityError> {
    shared_field(s)?;
    let started = Instant::now();
    let first = search(s, budget, tol, policy, started)?;
    if first.is_dense() || s.len() == 1 {
        return Ok(first);
    }
    if let DensityVerdict::Dense { certificate } = certify_dense(&s[..s.len() - 1], budget, tol, policy)? {
        return Ok(DensityVerdict::Dense { certificate: certificate.extend(s)? });
    }
    Ok(first)
}

fn search(
    s: &[GroupElement],
    budget: &SearchBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
    started: Instant,
) -> Result<DensityVerdict, DensityError> {
    let field = shared_field(s)?;
    let n = s.len();
    let required = ad_algebra_dim(field);
    let mut report = SearchReport::default();
    if is_elementary(s, tol) {
        return Ok(DensityVerdict::LikelyNotDense { reason: NonDensityReason::Elementary, report });
    }
    let rep = Representation::new(s.to_vec())?;
    let letters: Vec<(Letter, GroupElement)> = Letter::all(n)
        .map(|l| {
            let g = rep.image(l.index());
            (l, if l.is_inverse() { g.inverse() } else { *g })
        })
        .collect();
    let per_length = (budget.max_candidates / budget.max_word_length.max(1)).max(2 * n);
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);

    let mut spanning: Vec<Word> = Vec::new();
    let mut spanning_values: Vec<GroupElement> = Vec::new();
    let mut rank = 0;
    let mut witness: Option<Witness> = None;
    let mut rational_only = true;
    let mut sphere = vec![Candidate { word: Word::identity(n), value: GroupElement::identity(field) }];
    let mut pool: Vec<Candidate> = Vec::new();

    for len in 1..=budget.max_word_length {
        if started.elapsed() > budget.time_cap {
            report.timed_out = true;
            break;
        }
        let mut next: Vec<Candidate> = sphere
            .par_iter()
            .flat_map_iter(|c| {
                let last = c.word.letters().last().copied();
                letters.iter().filter(move |(l, _)| Some(l.inverse()) != last).map(move |(l, g)| Candidate {
                    word: c.word.mul_letter(*l),
                    value: c.value.mul(g),
                })
            })
            .collect();
        if next.len() > per_length {
            let mut keep: Vec<usize> = sample(&mut rng, next.len(), per_length).into_vec();
            keep.sort_unstable();
            let mut slots: Vec<Option<Candidate>> = next.into_iter().map(Some).collect();
            next = keep.into_iter().map(|i| slots[i].take().expect("distinct indices")).collect();
        }
        report.max_length = len;
        report.candidates += next.len();

        let stats: Vec<(f64, Option<f64>)> = next
            .par_iter()
            .map(|c| {
                let d = c.value.distance_from_center();
                let gap = c.value.rotation_angle(tol).ok().map(|a| rational_gap(a, policy.q_max).0);
                (d, gap)
            })
            .collect();
        for (c, &(d, gap)) in next.iter().zip(&stats) {
            if d > policy.small_lo {
                report.min_center_distance = Some(report.min_center_distance.map_or(d, |m| m.min(d)));
            }
            if let Some(gap) = gap {
                report.best_angle_gap = report.best_angle_gap.max(gap);
                if gap > policy.irrational_gap {
                    rational_only = false;
                }
            }
            if rank < required {
                let mut trial = spanning_values.clone();
                trial.push(c.value);
                let r = ad_real_span_rank(&trial, tol);
                if r > rank {
                    rank = r;
                    spanning.push(c.word.clone());
                    spanning_values = trial;
                }
            }
            if witness.is_none() {
                witness = witness_for(c, d, gap, field, s, &spanning, &rep, tol, policy);
            }
        }
        report.rank = rank;
        if rank >= required {
            if let Some(w) = witness.take() {
                let certificate =
                    DensityCertificate { field, generators: s.to_vec(), spanning_words: spanning, rank, witness: w };
                debug_assert!(certificate.replay(tol, policy).is_ok());
                return Ok(DensityVerdict::Dense { certificate });
            }
        }
        pool.extend(next.iter().cloned());
        sphere = next;
    }
    if rank >= required && field != Field::Unitary && !report.timed_out {
        let (w, quotients, collapses) = commutator_descent(&pool, s, &rep, policy);
        report.near_identity_quotients = quotients;
        report.commutator_collapses = collapses;
        if let Some(w) = w {
            let certificate = DensityCertificate { field, generators: s.to_vec(), spanning_words: spanning, rank, witness: w };
            debug_assert!(certificate.replay(tol, policy).is_ok());
            return Ok(DensityVerdict::Dense { certificate });
        }
    }
    if rank < required {
        return Ok(DensityVerdict::LikelyNotDense { reason: NonDensityReason::ReducibleSpan, report });
    }
    let separated = report.min_center_distance.is_none_or(|m| m >= policy.discrete_gap);
    let collapsing = report.near_identity_quotients == 0 || report.commutator_collapses > 0;
    if !report.timed_out && rational_only && separated && collapsing {
        return Ok(DensityVerdict::LikelyNotDense { reason: NonDensityReason::DiscreteSchottkyLike, report });
    }
    Ok(DensityVerdict::Unknown { report })
}

#[allow(clippy::too_many_arguments)]
fn witness_for(
    c: &Candidate,
    d: f64,
    gap: Option<f64>,
    field: Field,
    s: &[GroupElement],
    spanning: &[Word],
    rep: &Representation,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Option<Witness> {
    if let Some(gap) = gap {
        if gap > policy.irrational_gap {
            let angle = c.value.rotation_angle(tol).ok()?;
            let (gap, q) = rational_gap(angle, policy.q_max);
            return Some(Witness::Elliptic { word: c.word.clone(), angle, gap, denominator: q });
        }
    }
    if field != Field::Unitary && d > policy.small_lo && d < policy.small_hi {
        for (i, h) in s.iter().enumerate() {
            let comm = commutator_size(&c.value, h);
            if comm > policy.commute_tol {
                let companion = Word::generator(rep.rank(), i + 1);
                return Some(Witness::Small { word: c.word.clone(), distance: d, companion, commutator: comm });
            }
        }
    }
    if field != Field::Unitary {
        let t = c.value.trace();
        if (t * t - 4.0).norm() < 1.0 {
            let companions = (1..=rep.rank()).map(|i| Word::generator(rep.rank(), i)).chain(spanning.iter().cloned());
            for v in companions {
                let h = rep.evaluate_unchecked(&v);
                if let Ok((a, b)) = jorgensen_terms(&c.value, &h, tol, policy) {
                    return Some(Witness::Jorgensen { word: c.word.clone(), companion: v, trace_term: a, commutator_term: b });
                }
            }
        }
    }
    None
}

/// Zassenhaus-style search for a small element. Quotients `u⁻¹v` of
/// nearby words give elements near `±I`; iterated commutators `[g, h]` with
/// such an `h` then shrink geometrically if the group is nondiscrete, and
/// reach `±I` exactly if it is discrete.
fn commutator_descent(
    pool: &[Candidate],
    s: &[GroupElement],
    rep: &Representation,
    policy: &WitnessPolicy,
) -> (Option<Witness>, usize, usize) {
    const POOL: usize = 600;
    const SEEDS: usize = 6;
    const MAX_LETTERS: usize = 1 << 14;
    let mut bounded: Vec<&Candidate> = pool.iter().collect();
    bounded.sort_by(|a, b| operator_norm(&a.value.entries()).total_cmp(&operator_norm(&b.value.entries())));
    bounded.truncate(POOL);
    let mut near: Vec<(f64, Word, GroupElement)> = (0..bounded.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let ui = bounded[i].value.inverse();
            let bounded = &bounded;
            (i + 1..bounded.len()).filter_map(move |j| {
                let g = ui.mul(&bounded[j].value);
                let d = g.distance_from_center();
                (d > policy.small_lo && d < 0.5).then_some((d, i, j, g))
            })
        })
        .map(|(d, i, j, g)| (d, bounded[i].word.inverse().mul(&bounded[j].word), g))
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    near.dedup_by(|a, b| a.1 == b.1);
    let quotients = near.len();
    near.truncate(SEEDS);

    let mut collapses = 0;
    for (a, (_, gw, g0)) in near.iter().enumerate() {
        for (b, (_, hw, h)) in near.iter().enumerate() {
            if a == b {
                continue;
            }
            let (mut word, mut g) = (gw.clone(), *g0);
            let mut d = g.distance_from_center();
            while word.len() < MAX_LETTERS {
                let next = g.mul(h).mul(&g.inverse()).mul(&h.inverse());
                let nd = next.distance_from_center();
                if nd <= policy.small_lo {
                    collapses += 1;
                    break;
                }
                if nd >= d {
                    break;
                }
                word = Word::commutator(&word, hw);
                g = next;
                d = nd;
                if d < policy.small_hi {
                    let exact = rep.evaluate_unchecked(&word);
                    let de = exact.distance_from_center();
                    if de > policy.small_lo && de < policy.small_hi {
                        for (i, gen) in s.iter().enumerate() {
                            let comm = commutator_size(&exact, gen);
                            if comm > policy.commute_tol {
                                let companion = Word::generator(rep.rank(), i + 1);
                                return (Some(Witness::Small { word, distance: de, companion, commutator: comm }), quotients, collapses);
                            }
                        }
                    }
                    break;
                }
            }
        }
    }
    (None, quotients, collapses)
}

/// `⟨S, g⟩` dense?
pub fn omega_member(
    s: &[GroupElement],
    g: &GroupElement,
    budget: &SearchBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<DensityVerdict, DensityError> {
    let mut all = s.to_vec();
    all.push(*g);
    certify_dense(&all, budget, tol, policy)
}

/// `g` together with one certificate per dropped index: certificate `i`
/// covers `(S ∖ {gᵢ}) ∪ {g}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaTildeWitness {
    pub element: GroupElement,
    pub attempts: usize,
    pub certificates: Vec<DensityCertificate>,
}

impl OmegaTildeWitness {
    pub fn replay(&self, s: &[GroupElement], tol: &Tolerance, policy: &WitnessPolicy) -> Result<(), ReplayFailure> {
        if self.certificates.len() != s.len() {
            return Err(DensityError::RankMismatch(self.certificates.len(), s.len()).into());
        }
        for (i, cert) in self.certificates.iter().enumerate() {
            if cert.generators != drop_one_with(s, i, &self.element) {
                return Err(DensityError::Malformed(format!("certificate {i} covers a different tuple")).into());
            }
            cert.replay(tol, policy)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "failure", rename_all = "kebab-case")]
pub enum OmegaTildeFailure {
    /// `S ∖ {gᵢ}` consists of central elements, so adding one element
    /// generates an abelian group and no `g` can work.
    Obstruction { dropped: usize },
    /// Every sampled candidate failed; `blocking` counts, per dropped index,
    /// the candidates rejected there first.
    BudgetExhausted { attempts: usize, blocking: Vec<usize>, sampling_radius: f64 },
}

fn drop_one_with(s: &[GroupElement], i: usize, g: &GroupElement) -> Vec<GroupElement> {
    let mut v: Vec<GroupElement> = s.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, h)| *h).collect();
    v.push(*g);
    v
}

/// Looks for `g ∈ Ω̃(S) = ⋂ᵢ Ω(S ∖ {gᵢ})`. Candidates are products of
/// elements of `S` perturbed by random elements of size
/// `budget.sampling_radius`.
pub fn omega_tilde_search(
    s: &[GroupElement],
    budget: &SearchBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<Result<OmegaTildeWitness, OmegaTildeFailure>, DensityError> {
    if s.len() < 2 {
        return Err(DensityError::TooFewElements { min: 2, found: s.len() });
    }
    let field = shared_field(s)?;
    for i in 0..s.len() {
        if s.iter().enumerate().all(|(j, h)| j == i || h.distance_from_center() <= tol.par) {
            return Ok(Err(OmegaTildeFailure::Obstruction { dropped: i + 1 }));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ 0x006f_6d65_6761);
    let mut blocking = vec![0; s.len()];
    for attempt in 1..=budget.omega_attempts {
        let len = rng.random_range(1..=3);
        let mut g = GroupElement::identity(field);
        for _ in 0..len {
            let h = s[rng.random_range(0..s.len())];
            g = g.mul(&if rng.random_bool(0.5) { h } else { h.inverse() });
        }
        g = g.mul(&GroupElement::random_near_identity(field, budget.sampling_radius, &mut rng));
        let sub_budget = budget.with_seed(budget.seed.wrapping_add(attempt as u64));
        let mut certs = Vec::with_capacity(s.len());
        for i in 0..s.len() {
            match certify_dense(&drop_one_with(s, i, &g), &sub_budget, tol, policy)? {
                DensityVerdict::Dense { certificate } => certs.push(certificate),
                _ => {
                    blocking[i] += 1;
                    break;
                }
            }
        }
        if certs.len() == s.len() {
            return Ok(Ok(OmegaTildeWitness { element: g, attempts: attempt, certificates: certs }));
        }
    }
    Ok(Err(OmegaTildeFailure::BudgetExhausted {
        attempts: budget.omega_attempts,
        blocking,
        sampling_radius: budget.sampling_radius,
    }))
}

/// Per-subtuple verdicts; `subtuples[i]` drops coordinate `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongRedundancyReport {
    pub strongly_redundant: bool,
    /// Some subtuple ended `Unknown`, so `false` is not conclusive.
    pub inconclusive: bool,
    pub subtuples: Vec<DensityVerdict>,
}

pub fn strongly_redundant(
    rep: &Representation,
    budget: &SearchBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<StrongRedundancyReport, DensityError> {
    if rep.rank() < 2 {
        return Err(DensityError::TooFewElements { min: 2, found: rep.rank() });
    }
    let subtuples = (0..rep.rank())
        .map(|i| {
            let sub: Vec<GroupElement> =
                rep.images().iter().enumerate().filter(|&(j, _)| j != i).map(|(_, g)| *g).collect();
            certify_dense(&sub, budget, tol, policy)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StrongRedundancyReport {
        strongly_redundant: subtuples.iter().all(DensityVerdict::is_dense),
        inconclusive: subtuples.iter().any(|v| matches!(v, DensityVerdict::Unknown { .. })),
        subtuples,
    })
}

/// A proper free factor with dense image: after acting by `automorphism`,
/// the coordinates other than `dropped` generate a dense subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum RedundancyVerdict {
    Redundant { automorphism: FreeAutomorphism, dropped: usize, certificate: DensityCertificate },
    NotFound { automorphisms_tried: usize },
}

impl RedundancyVerdict {
    pub fn replay(&self, rep: &Representation, tol: &Tolerance, policy: &WitnessPolicy) -> Result<(), ReplayFailure> {
        let RedundancyVerdict::Redundant { automorphism, dropped, certificate } = self else {
            return Ok(());
        };
        let moved = rep.act(automorphism).map_err(DensityError::from)?;
        let sub: Vec<GroupElement> =
            moved.images().iter().enumerate().filter(|&(j, _)| j + 1 != *dropped).map(|(_, g)| *g).collect();
        if sub.len() != certificate.generators.len()
            || sub.iter().zip(&certificate.generators).any(|(a, b)| a.distance(b) > 1e-12 * (1.0 + a.max_abs_entry()))
        {
            return Err(DensityError::Malformed("certificate does not match the moved subtuple".into()).into());
        }
        certificate.replay(tol, policy)
    }
}

/// Tries every subtuple of `rep`, then of `act(a, rep)` for compositions `a`
/// of up to `budget.nielsen_depth` Nielsen generators. Redundancy quantifies
/// over all bases, so `NotFound` is inconclusive.
pub fn redundant_heuristic(
    rep: &Representation,
    budget: &SearchBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<RedundancyVerdict, DensityError> {
    let n = rep.rank();
    if n < 2 {
        return Err(DensityError::TooFewElements { min: 2, found: n });
    }
    let gens = nielsen_generators(n)?;
    let mut frontier = vec![FreeAutomorphism::identity(n)];
    let mut seen = std::collections::HashSet::new();
    seen.insert(FreeAutomorphism::identity(n));
    let mut tried = 0;
    for depth in 0..=budget.nielsen_depth {
        for a in &frontier {
            tried += 1;
            let moved = rep.act(a)?;
            for k in 1..=n {
                let sub: Vec<GroupElement> =
                    moved.images().iter().enumerate().filter(|&(j, _)| j + 1 != k).map(|(_, g)| *g).collect();
                if let DensityVerdict::Dense { certificate } = certify_dense(&sub, budget, tol, policy)? {
                    return Ok(RedundancyVerdict::Redundant { automorphism: a.clone(), dropped: k, certificate });
                }
            }
        }
        if depth == budget.nielsen_depth {
            break;
        }
        let mut next = Vec::new();
        for a in &frontier {
            for g in &gens {
                let b = g.compose(a)?;
                if seen.insert(b.clone()) {
                    next.push(b);
                }
            }
        }
        frontier = next;
    }
    Ok(RedundancyVerdict::NotFound { automorphisms_tried: tried })
}

/// Per-`k` verdicts for `⟨φ(x₁),…,φ(x_{k−1}), ψ(x_{k+1}),…,ψ(xₙ)⟩`,
/// `k = 1..n−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub links: bool,
    pub per_k: Vec<DensityVerdict>,
}

/// The mixed tuple tested at index `k` (1-based).
pub fn mixed_tuple(phi: &Representation, psi: &Representation, k: usize) -> Vec<GroupElement> {
    phi.images()[..k - 1].iter().chain(&psi.images()[k..]).copied().collect()
}

/// Does `psi` link `phi`?
pub fn links(
    phi: &Representation,
    psi: &Representation,
    budget: &SearchBudget,
    tol: &Tolerance,
    policy: &WitnessPolicy,
) -> Result<LinkReport, DensityError> {
    if phi.rank() != psi.rank() {
        return Err(DensityError::RankMismatch(phi.rank(), psi.rank()));
    }
    if phi.field() != psi.field() {
        return Err(Sl2Error::FieldMismatch(phi.field(), psi.field()).into());
    }
    let n = phi.rank();
    let per_k = (1..n)
        .map(|k| certify_dense(&mixed_tuple(phi, psi, k), budget, tol, policy))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LinkReport { links: per_k.iter().all(DensityVerdict::is_dense), per_k })
}
