//! Twisted punctured-sphere representations and primitive-stable pair probes.
//!
//! The base representation sends the free group on `x1, x2, x3` onto a
//! discrete subgroup of `SL₂(ℤ)` in which `x1`, `x2`, `x3` and `x1x2x3` are
//! parabolic: it is the holonomy of a four-punctured sphere. Twisting by
//! `Φ` and precomposing with `Φ⁻¹` moves the parabolics onto classes whose
//! Whitehead graphs contain a fixed 2-connected graph. Two such twists with
//! different distinguished generators give a pair whose primitive classes
//! all have positive translation length in at least one slot.
//!
//! Everything integral is computed exactly with `BigInt`.

use std::collections::BTreeSet;
use std::f64::consts::LN_2;
use std::io;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::freegroup::{ConjClass, FreeAutomorphism, FreeGroupError, Letter, Word};
use crate::sl2::{number17, Field, GroupElement, Representation, Sl2Error, Tolerance};
use crate::whitehead::{enumerate_primitive_classes, WhiteheadBudget, WhiteheadError, WhiteheadGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NonmixingError {
    #[error(transparent)]
    FreeGroup(#[from] FreeGroupError),
    #[error(transparent)]
    Whitehead(#[from] WhiteheadError),
    #[error(transparent)]
    Sl2(#[from] Sl2Error),
    #[error("twisting exponent must be at least 1")]
    ZeroExponent,
    #[error("variant must be 1 or 2, got {0}")]
    Variant(usize),
    #[error("input {input}: {reason}")]
    Precondition { input: usize, reason: String },
    #[error("punctures of the variant-{variant} twist with m = {m} miss edges of the target graph")]
    Containment { variant: usize, m: u32 },
    #[error("no m in 1..={max} gives containment for both variants")]
    NoExponent { max: u32 },
    #[error("rank or field mismatch between the two representations")]
    Mismatch,
    #[error("twisted puncture {class} has trace {trace}, not ±2")]
    NotParabolic { class: String, trace: String },
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// An element of `SL₂(ℤ)`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntMatrix(pub [BigInt; 4]);

impl IntMatrix {
    pub fn identity() -> IntMatrix {
        IntMatrix([BigInt::one(), BigInt::zero(), BigInt::zero(), BigInt::one()])
    }

    pub fn from_i64(m: [i64; 4]) -> IntMatrix {
        IntMatrix(m.map(BigInt::from))
    }

    pub fn mul(&self, o: &IntMatrix) -> IntMatrix {
        let [a, b, c, d] = &self.0;
        let [e, f, g, h] = &o.0;
        IntMatrix([a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h])
    }

    /// Adjugate, the inverse for determinant 1.
    pub fn inverse(&self) -> IntMatrix {
        let [a, b, c, d] = &self.0;
        IntMatrix([d.clone(), -b, -c, a.clone()])
    }

    pub fn det(&self) -> BigInt {
        let [a, b, c, d] = &self.0;
        a * d - b * c
    }

    pub fn trace(&self) -> BigInt {
        &self.0[0] + &self.0[3]
    }

    pub fn frobenius_sq(&self) -> BigInt {
        self.0.iter().map(|x| x * x).sum()
    }

    /// Nearest `f64` entries; exact below `2^53`.
    pub fn to_element(&self) -> Result<GroupElement, Sl2Error> {
        let f = |x: &BigInt| x.to_f64().unwrap_or(f64::NAN);
        GroupElement::real(f(&self.0[0]), f(&self.0[1]), f(&self.0[2]), f(&self.0[3]))
    }

    /// Exact copy of a real element with integer entries below `2^53`.
    pub fn from_element(g: &GroupElement) -> Option<IntMatrix> {
        if g.field() != Field::Real {
            return None;
        }
        let m = g.entries();
        let ints: Option<Vec<BigInt>> = m
            .iter()
            .map(|z| (z.im == 0.0 && z.re.fract() == 0.0 && z.re.abs() < 9.0e15).then(|| BigInt::from(z.re as i64)))
            .collect();
        let ints = ints?;
        let out = IntMatrix([ints[0].clone(), ints[1].clone(), ints[2].clone(), ints[3].clone()]);
        out.det().is_one().then_some(out)
    }
}

/// A homomorphism `F_n → SL₂(ℤ)` evaluated exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactRep {
    images: Vec<IntMatrix>,
}

impl ExactRep {
    pub fn new(images: Vec<IntMatrix>) -> Result<ExactRep, NonmixingError> {
        if let Some(i) = images.iter().position(|m| !m.det().is_one()) {
            return Err(NonmixingError::Precondition { input: i + 1, reason: "determinant is not 1".into() });
        }
        Ok(ExactRep { images })
    }

    pub fn from_representation(rep: &Representation) -> Option<ExactRep> {
        rep.images().iter().map(IntMatrix::from_element).collect::<Option<Vec<_>>>().map(|images| ExactRep { images })
    }

    pub fn rank(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[IntMatrix] {
        &self.images
    }

    pub fn evaluate(&self, w: &Word) -> Result<IntMatrix, NonmixingError> {
        w.check_rank(self.rank())?;
        let mut acc = IntMatrix::identity();
        for l in w.letters() {
            let g = &self.images[l.index() - 1];
            acc = if l.is_inverse() { acc.mul(&g.inverse()) } else { acc.mul(g) };
        }
        Ok(acc)
    }

    /// Precomposition with `a⁻¹`, as [`Representation::act`].
    pub fn act(&self, a: &FreeAutomorphism) -> Result<ExactRep, NonmixingError> {
        let images = a.inverse_images().iter().map(|w| self.evaluate(w)).collect::<Result<_, _>>()?;
        Ok(ExactRep { images })
    }

    /// Nearest `f64` representation.
    pub fn to_representation(&self) -> Result<Representation, NonmixingError> {
        Ok(Representation::new(self.images.iter().map(IntMatrix::to_element).collect::<Result<_, _>>()?)?)
    }
}

fn big_ln(n: &BigInt) -> f64 {
    let n = n.abs();
    let bits = n.bits();
    if bits <= 1000 {
        return n.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 64;
    (&n >> shift).to_f64().unwrap_or(f64::NAN).ln() + shift as f64 * LN_2
}

/// `acosh(n / 2)`, or 0 when `|n| ≤ 2`.
fn acosh_half(n: &BigInt) -> f64 {
    let n = n.abs();
    if n <= BigInt::from(2) {
        return 0.0;
    }
    if n.bits() <= 1000 {
        return (n.to_f64().unwrap_or(f64::INFINITY) / 2.0).acosh();
    }
    // acosh(y) = ln(2y) − O(y⁻²).
    big_ln(&n)
}

/// Translation length `2 acosh(|tr|/2)` of an integral element.
pub fn exact_translation_length(m: &IntMatrix) -> f64 {
    2.0 * acosh_half(&m.trace())
}

/// Hyperbolic distance from the basepoint to its image, via
/// `cosh d = ‖m‖²_F / 2`.
pub fn exact_displacement(m: &IntMatrix) -> f64 {
    let bits = m.0.iter().map(BigInt::bits).max().unwrap_or(0);
    if bits <= 500 {
        let f: f64 = m.0.iter().map(|x| x.to_f64().unwrap_or(f64::INFINITY).powi(2)).sum();
        return (f / 2.0).max(1.0).acosh();
    }
    // Leading 60 bits of each entry; acosh(y) = ln(2y) − O(y⁻²).
    let shift = bits - 60;
    let f: f64 = m.0.iter().map(|x| (x >> shift).to_f64().unwrap_or(f64::NAN).powi(2)).sum();
    f.ln() + 2.0 * shift as f64 * LN_2
}

/// Holonomy of a four-punctured sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct PuncturedSphereRep {
    pub rep: Representation,
    pub exact: ExactRep,
    /// `x1, …, xn` and `x1 ⋯ xn`.
    pub punctures: Vec<Word>,
}

impl PuncturedSphereRep {
    pub fn puncture_classes(&self) -> Vec<ConjClass> {
        self.punctures.iter().map(ConjClass::of).collect()
    }
}

/// `x1 = [[1,2],[0,1]]`, `x2 = [[1,0],[-4,1]]`, `x3 = [[-3,2],[-8,5]]`. These
/// are `A`, `B⁻²` and `BAB⁻¹` for `A = [[1,2],[0,1]]`, `B = [[1,0],[2,1]]`,
/// a basis of an index-2 subgroup of the free group `⟨A, B⟩`. All three and
/// `x1x2x3 = [[5,-4],[4,-3]]` have trace 2.
pub fn build_fuchsian_4punctured() -> PuncturedSphereRep {
    let exact = ExactRep {
        images: vec![IntMatrix::from_i64([1, 2, 0, 1]), IntMatrix::from_i64([1, 0, -4, 1]), IntMatrix::from_i64([-3, 2, -8, 5])],
    };
    let rep = exact.to_representation().expect("small integer entries");
    let mut punctures: Vec<Word> = (1..=3).map(|i| Word::generator(3, i)).collect();
    punctures.push(Word::parse("x1 x2 x3", 3).expect("valid word"));
    PuncturedSphereRep { rep, exact, punctures }
}

fn check_twisting_word(g: &Word, distinguished: usize, input: usize) -> Result<Vec<usize>, NonmixingError> {
    let fail = |reason: &str| NonmixingError::Precondition { input, reason: reason.to_string() };
    if g.is_empty() || !g.is_cyclically_reduced() {
        return Err(fail("word must be nonempty and cyclically reduced"));
    }
    if g.support().contains(&distinguished) {
        return Err(fail(&format!("word must avoid x{distinguished}")));
    }
    let others: Vec<usize> = (1..=g.rank()).filter(|&i| i != distinguished).collect();
    if !WhiteheadGraph::of_word(g).restrict(&others).is_connected_without_cutpoints() {
        return Err(fail("Whitehead graph on the remaining generators is disconnected or has a cutpoint"));
    }
    Ok(others)
}

/// `Φ` for distinguished generator `d = variant`: `x_d ↦ x_d g^m` and
/// `x_i ↦ x_i x_d g^m` for `i ≠ d`. Built as Nielsen moves: `x_d` is
/// multiplied on the right by the letters of `g^m`, then every other `x_i`
/// by the new `x_d`.
pub fn build_phi(m: u32, variant: usize, g: &Word) -> Result<FreeAutomorphism, NonmixingError> {
    if m < 1 {
        return Err(NonmixingError::ZeroExponent);
    }
    if variant != 1 && variant != 2 {
        return Err(NonmixingError::Variant(variant));
    }
    let n = g.rank();
    if n < 2 {
        return Err(FreeGroupError::RankTooSmall { rank: n, min: 2 }.into());
    }
    let others = check_twisting_word(g, variant, 1)?;
    let gm = g.pow(m as i64);
    let mut alpha = FreeAutomorphism::identity(n);
    for &y in gm.letters() {
        alpha = alpha.compose(&FreeAutomorphism::right_multiply(n, variant, y))?;
    }
    let mut beta = FreeAutomorphism::identity(n);
    for &i in &others {
        beta = beta.compose(&FreeAutomorphism::right_multiply(n, i, Letter::generator(variant)))?;
    }
    let phi = alpha.compose(&beta)?;

    let xd = Word::generator(n, variant).mul(&gm);
    for i in 1..=n {
        let expected = if i == variant { xd.clone() } else { Word::generator(n, i).mul(&xd) };
        if phi.images()[i - 1] != expected {
            return Err(FreeGroupError::NotInvertible(format!("image of x{i} is {}", phi.images()[i - 1])).into());
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PunctureContainment {
    pub puncture: Word,
    pub image: Word,
    pub missing: Vec<(Letter, Letter)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub contained: bool,
    pub punctures: Vec<PunctureContainment>,
}

/// Whether `Wh(Φ(c)) ⊇ W` edgewise for every puncture `c`.
pub fn puncture_whitehead_containment(
    phi: &FreeAutomorphism,
    punctures: &[Word],
    w: &WhiteheadGraph,
) -> Result<ContainmentReport, NonmixingError> {
    if w.rank() != phi.rank() {
        return Err(FreeGroupError::RankMismatch { expected: phi.rank(), found: w.rank() }.into());
    }
    let punctures = punctures
        .iter()
        .map(|c| {
            let image = phi.apply(c)?.cyclic_core();
            let missing = WhiteheadGraph::of_word(&image).missing_edges(w);
            Ok(PunctureContainment { puncture: c.clone(), image, missing })
        })
        .collect::<Result<Vec<_>, NonmixingError>>()?;
    Ok(ContainmentReport { contained: punctures.iter().all(|p| p.missing.is_empty()), punctures })
}

/// Smallest `m ≤ max_m` for which the punctures of the twist by
/// `build_phi(m, variant, g)` contain `Wh(g)`.
pub fn smallest_twist(variant: usize, g: &Word, punctures: &[Word], max_m: u32) -> Result<Option<u32>, NonmixingError> {
    let w = WhiteheadGraph::of_word(g);
    for m in 1..=max_m {
        if puncture_whitehead_containment(&build_phi(m, variant, g)?, punctures, &w)?.contained {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

/// Whether `Wh(g1) ∪ Wh(g2)` is connected without cutpoints on all `2n`
/// vertices. `g1` must avoid `x1` and `g2` must avoid `x2`, each with a
/// 2-connected graph on its remaining generators.
pub fn pair_graph_check(g1: &Word, g2: &Word) -> Result<bool, NonmixingError> {
    if g1.rank() != g2.rank() {
        return Err(FreeGroupError::RankMismatch { expected: g1.rank(), found: g2.rank() }.into());
    }
    check_twisting_word(g1, 1, 1)?;
    check_twisting_word(g2, 2, 2)?;
    Ok(WhiteheadGraph::of_word(g1).union(&WhiteheadGraph::of_word(g2))?.is_connected_without_cutpoints())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwistedPair {
    pub m: u32,
    pub phi: [FreeAutomorphism; 2],
    pub rho: [ExactRep; 2],
}

/// `ρᵢ = ρ₀ ∘ Φᵢ⁻¹` for the two variants with twisting words `g1`, `g2`.
/// Checks containment for both variants and that each twisted puncture
/// `Φᵢ(c)` has trace exactly ±2 under `ρᵢ`.
pub fn twisted_pair(rho0: &PuncturedSphereRep, m: u32, g1: &Word, g2: &Word) -> Result<TwistedPair, NonmixingError> {
    let mut phis = Vec::with_capacity(2);
    let mut rhos = Vec::with_capacity(2);
    for (variant, g) in [(1, g1), (2, g2)] {
        let phi = build_phi(m, variant, g)?;
        if !puncture_whitehead_containment(&phi, &rho0.punctures, &WhiteheadGraph::of_word(g))?.contained {
            return Err(NonmixingError::Containment { variant, m });
        }
        let rho = rho0.exact.act(&phi)?;
        for c in &rho0.punctures {
            let t = rho.evaluate(&phi.apply(c)?)?.trace();
            if t.abs() != BigInt::from(2) {
                return Err(NonmixingError::NotParabolic { class: phi.apply(c)?.to_string(), trace: t.to_string() });
            }
        }
        phis.push(phi);
        rhos.push(rho);
    }
    let [p1, p2]: [FreeAutomorphism; 2] = phis.try_into().expect("two variants");
    let [r1, r2]: [ExactRep; 2] = rhos.try_into().expect("two variants");
    Ok(TwistedPair { m, phi: [p1, p2], rho: [r1, r2] })
}

/// Input to [`ps2_probe`].
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeRep {
    Exact(ExactRep),
    Numeric(Representation),
}

/// Float product of integral matrices carried with `2^exp` scaling and a
/// running entrywise bound on its distance from the exact product.
#[derive(Clone, Copy)]
struct Scaled {
    m: [f64; 4],
    err: [f64; 4],
    exp: i32,
}

fn mul4(a: &[f64; 4], g: &[f64; 4]) -> [f64; 4] {
    [a[0] * g[0] + a[1] * g[2], a[0] * g[1] + a[1] * g[3], a[2] * g[0] + a[3] * g[2], a[2] * g[1] + a[3] * g[3]]
}

/// Relative accuracy required of the Frobenius norm before a float
/// displacement is trusted.
const DISPLACEMENT_REL: f64 = 1e-6;

impl Scaled {
    const IDENTITY: Scaled = Scaled { m: [1.0, 0.0, 0.0, 1.0], err: [0.0; 4], exp: 0 };

    /// With `|m − P| ≤ E`, `|g − G| ≤ u|G|` and one rounding per entry of
    /// `m·g`: `|fl(m·g) − P·G| ≤ (1 + 4u)(E|g|) + 4u|m||g|`.
    fn mul(&mut self, g: &[f64; 4]) {
        let u = f64::EPSILON;
        let ga = g.map(f64::abs);
        let prop = mul4(&self.err, &ga);
        let fresh = mul4(&self.m.map(f64::abs), &ga);
        self.m = mul4(&self.m, g);
        self.err = [0, 1, 2, 3].map(|i| (1.0 + 4.0 * u) * prop[i] + 4.0 * u * fresh[i]);
        let big = self.m.iter().chain(&self.err).fold(0.0f64, |x, y| x.max(y.abs()));
        if big > 1e150 {
            let e = big.log2().floor() as i32;
            let s = 2f64.powi(-e);
            self.m = self.m.map(|x| x * s);
            self.err = self.err.map(|x| x * s);
            self.exp += e;
        }
    }

    /// `acosh(‖m‖²_F / 2)`, or `None` when the error bound is too loose.
    fn displacement(&self) -> Option<f64> {
        let f: f64 = self.m.iter().map(|x| x * x).sum();
        let err: f64 = self.err.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(err <= DISPLACEMENT_REL * f.sqrt()) {
            return None;
        }
        Some(if self.exp == 0 { (f / 2.0).max(1.0).acosh() } else { f.ln() + 2.0 * self.exp as f64 * LN_2 })
    }
}

/// Per-letter images, indexed by letter code.
struct Letters {
    exact: Vec<IntMatrix>,
    float: Vec<[f64; 4]>,
}

impl Letters {
    fn of(r: &ExactRep) -> Letters {
        let exact: Vec<IntMatrix> = r.images.iter().flat_map(|g| [g.clone(), g.inverse()]).collect();
        let float = exact.iter().map(|g| g.0.clone().map(|x| x.to_f64().unwrap_or(f64::NAN))).collect();
        Letters { exact, float }
    }

    fn product(&self, letters: &[Letter]) -> IntMatrix {
        letters.iter().fold(IntMatrix::identity(), |acc, l| acc.mul(&self.exact[l.code()]))
    }
}

impl ProbeRep {
    fn rank(&self) -> usize {
        match self {
            ProbeRep::Exact(r) => r.rank(),
            ProbeRep::Numeric(r) => r.rank(),
        }
    }

    fn kind(&self) -> Option<Field> {
        match self {
            ProbeRep::Exact(_) => None,
            ProbeRep::Numeric(r) => Some(r.field()),
        }
    }

    fn letters(&self) -> Option<Letters> {
        match self {
            ProbeRep::Exact(r) => Some(Letters::of(r)),
            ProbeRep::Numeric(_) => None,
        }
    }

    /// Translation length of the class, whether it is parabolic, and the
    /// basepoint displacements `d(P_s x, P_t x)` for the prefixes `P_s` of
    /// `core^window`. Segments are multiplied out directly since
    /// `P_s⁻¹ P_t` cancels badly in floating point.
    fn measure(&self, letters: Option<&Letters>, core: &Word, window: usize, tol: &Tolerance) -> (f64, bool, Vec<Vec<f64>>) {
        let axis = core.pow(window as i64);
        let axis = axis.letters();
        let len = axis.len();
        match (self, letters) {
            (ProbeRep::Exact(_), Some(lt)) => {
                let c = lt.product(core.letters());
                let parabolic = c.trace().abs() == BigInt::from(2);
                let dist = (0..=len)
                    .map(|s| {
                        let mut seg = Scaled::IDENTITY;
                        let mut exact: Option<IntMatrix> = None;
                        (s..len)
                            .map(|t| {
                                let l = axis[t].code();
                                if let Some(e) = exact.as_mut() {
                                    *e = e.mul(&lt.exact[l]);
                                    return exact_displacement(e);
                                }
                                seg.mul(&lt.float[l]);
                                seg.displacement().unwrap_or_else(|| {
                                    let e = lt.product(&axis[s..=t]);
                                    let d = exact_displacement(&e);
                                    exact = Some(e);
                                    d
                                })
                            })
                            .collect()
                    })
                    .collect();
                (exact_translation_length(&c), parabolic, dist)
            }
            (ProbeRep::Exact(r), None) => self.measure(Some(&Letters::of(r)), core, window, tol),
            (ProbeRep::Numeric(r), _) => {
                let letters: Vec<GroupElement> =
                    axis.iter().map(|l| if l.is_inverse() { r.image(l.index()).inverse() } else { *r.image(l.index()) }).collect();
                let c = r.evaluate(core).expect("rank checked");
                let parabolic = (c.trace().norm() - 2.0).abs() <= tol.par && c.distance_from_center() > tol.par;
                let displacement = |g: &GroupElement| {
                    let f: f64 = g.entries().iter().map(|z| z.norm_sqr()).sum();
                    (f / 2.0).max(1.0).acosh()
                };
                let dist = (0..=len)
                    .map(|s| {
                        let mut seg = GroupElement::identity(r.field());
                        (s..len)
                            .map(|t| {
                                seg = seg.mul(&letters[t]);
                                displacement(&seg)
                            })
                            .collect()
                    })
                    .collect();
                (c.translation_length(tol), parabolic, dist)
            }
        }
    }
}

impl From<ExactRep> for ProbeRep {
    fn from(r: ExactRep) -> ProbeRep {
        ProbeRep::Exact(r)
    }
}

impl From<Representation> for ProbeRep {
    fn from(r: Representation) -> ProbeRep {
        match ExactRep::from_representation(&r) {
            Some(e) => ProbeRep::Exact(e),
            None => ProbeRep::Numeric(r),
        }
    }
}

/// Smallest `K` with `Δ/K − K ≤ d ≤ KΔ + K` for every sampled pair at index
/// distance `Δ` and hyperbolic distance `d`.
pub fn best_fit_k(dist: &[Vec<f64>]) -> f64 {
    let mut k = 1.0f64;
    for row in dist {
        for (off, &d) in row.iter().enumerate() {
            let delta = (off + 1) as f64;
            k = k.max(d / (delta + 1.0)).max((-d + (d * d + 4.0 * delta).sqrt()) / 2.0);
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeParams {
    pub max_length: usize,
    pub k: f64,
    /// Axis sample covers `window` periods.
    pub window: usize,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams { max_length: 12, k: 32.0, window: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecord {
    pub class: ConjClass,
    pub length: usize,
    pub translation: [f64; 2],
    pub ratio: [f64; 2],
    pub max_ratio: f64,
    /// Best-fitting quasi-geodesic constant along the sampled axis.
    pub best_k: [f64; 2],
    pub axis_pass: [bool; 2],
    pub parabolic: [bool; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PS2Report {
    pub rank: usize,
    pub max_length: usize,
    pub k: f64,
    pub window: usize,
    /// Sorted by class.
    pub records: Vec<ClassRecord>,
    /// Minimum over classes of the larger ratio, with the minimizing class.
    pub min_max_ratio: f64,
    pub argmin: Option<ConjClass>,
    /// Classes with ratio exactly 0 in each slot.
    pub zero_witnesses: [Vec<ConjClass>; 2],
    /// Records where the axis check passed yet the ratio is below
    /// `1/K − K/‖c‖`.
    pub consistency_violations: usize,
}

/// For every primitive class `c` with `‖c‖ ≤ max_length`: translation-length
/// ratios `ℓ_{ρᵢ}(c)/‖c‖`, and the two-sided quasi-geodesic inequalities with
/// constant `K` checked on the basepoint orbit of the axis prefixes.
pub fn ps2_probe(rho1: &ProbeRep, rho2: &ProbeRep, params: &ProbeParams, tol: &Tolerance) -> Result<PS2Report, NonmixingError> {
    let n = rho1.rank();
    if rho2.rank() != n || rho1.kind() != rho2.kind() {
        return Err(NonmixingError::Mismatch);
    }
    if params.window == 0 || !(params.k > 0.0) {
        return Err(NonmixingError::Malformed("window and K must be positive".into()));
    }
    let classes: Vec<ConjClass> = enumerate_primitive_classes(n, params.max_length, &WhiteheadBudget::default())?.into_iter().collect();
    let letters = [rho1.letters(), rho2.letters()];
    let records: Vec<ClassRecord> = classes
        .into_par_iter()
        .map(|class| {
            let core = class.canonical().clone();
            let length = core.len();
            let mut rec = ClassRecord {
                class,
                length,
                translation: [0.0; 2],
                ratio: [0.0; 2],
                max_ratio: 0.0,
                best_k: [0.0; 2],
                axis_pass: [false; 2],
                parabolic: [false; 2],
            };
            for (i, rho) in [rho1, rho2].into_iter().enumerate() {
                let (ell, parabolic, dist) = rho.measure(letters[i].as_ref(), &core, params.window, tol);
                rec.translation[i] = ell;
                rec.ratio[i] = ell / length as f64;
                rec.best_k[i] = best_fit_k(&dist);
                rec.axis_pass[i] = rec.best_k[i] <= params.k;
                rec.parabolic[i] = parabolic;
            }
            rec.max_ratio = rec.ratio[0].max(rec.ratio[1]);
            rec
        })
        .collect();
    Ok(summarize(n, params, records))
}

fn summarize(rank: usize, params: &ProbeParams, mut records: Vec<ClassRecord>) -> PS2Report {
    records.sort_by(|a, b| a.class.cmp(&b.class));
    let argmin = records.iter().min_by(|a, b| a.max_ratio.total_cmp(&b.max_ratio)).map(|r| r.class.clone());
    let min_max_ratio = records.iter().map(|r| r.max_ratio).fold(f64::INFINITY, f64::min);
    let zero = |i: usize| records.iter().filter(|r| r.ratio[i] == 0.0).map(|r| r.class.clone()).collect::<Vec<_>>();
    let zero_witnesses = [zero(0), zero(1)];
    let consistency_violations = records
        .iter()
        .map(|r| (0..2).filter(|&i| r.axis_pass[i] && r.ratio[i] < 1.0 / params.k - params.k / r.length as f64).count())
        .sum();
    PS2Report {
        rank,
        max_length: params.max_length,
        k: params.k,
        window: params.window,
        records,
        min_max_ratio,
        argmin,
        zero_witnesses,
        consistency_violations,
    }
}

impl PS2Report {
    fn summary_json(&self) -> Value {
        json!({
            "rank": self.rank,
            "max_length": self.max_length,
            "k": number17(self.k),
            "window": self.window,
            "min_max_ratio": number17(self.min_max_ratio),
            "argmin": self.argmin.as_ref().map(|c| c.canonical().to_string()),
            "zero_witnesses": self.zero_witnesses.iter().map(|v| v.iter().map(|c| c.canonical().to_string()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "consistency_violations": self.consistency_violations,
        })
    }

    fn record_json(r: &ClassRecord) -> Value {
        let pair = |x: [f64; 2]| json!([number17(x[0]), number17(x[1])]);
        json!({
            "class": r.class.canonical().to_string(),
            "length": r.length,
            "translation": pair(r.translation),
            "ratio": pair(r.ratio),
            "max_ratio": number17(r.max_ratio),
            "best_k": pair(r.best_k),
            "axis_pass": r.axis_pass,
            "parabolic": r.parabolic,
        })
    }

    pub fn to_json(&self) -> Value {
        let mut v = self.summary_json();
        v["records"] = self.records.iter().map(PS2Report::record_json).collect();
        v
    }

    /// The document of [`PS2Report::to_json`], written one record at a time.
    pub fn write_json<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        let head = serde_json::to_string(&self.summary_json())?;
        write!(w, "{},\"records\":[", &head[..head.len() - 1])?;
        for (i, r) in self.records.iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            serde_json::to_writer(&mut w, &PS2Report::record_json(r))?;
        }
        w.write_all(b"]}\n")
    }

    pub fn from_json(v: &Value) -> Result<PS2Report, NonmixingError> {
        let bad = |m: &str| NonmixingError::Malformed(m.to_string());
        let uint = |v: &Value, k: &str| v.get(k).and_then(Value::as_u64).map(|x| x as usize).ok_or_else(|| bad(k));
        let num = |v: &Value, k: &str| v.get(k).and_then(Value::as_f64).ok_or_else(|| bad(k));
        let rank = uint(v, "rank")?;
        let class = |s: &Value| -> Result<ConjClass, NonmixingError> {
            Ok(ConjClass::of(&Word::parse(s.as_str().ok_or_else(|| bad("class"))?, rank)?))
        };
        let pair_f = |r: &Value, k: &str| -> Result<[f64; 2], NonmixingError> {
            let a = r.get(k).and_then(Value::as_array).filter(|a| a.len() == 2).ok_or_else(|| bad(k))?;
            Ok([a[0].as_f64().ok_or_else(|| bad(k))?, a[1].as_f64().ok_or_else(|| bad(k))?])
        };
        let pair_b = |r: &Value, k: &str| -> Result<[bool; 2], NonmixingError> {
            let a = r.get(k).and_then(Value::as_array).filter(|a| a.len() == 2).ok_or_else(|| bad(k))?;
            Ok([a[0].as_bool().ok_or_else(|| bad(k))?, a[1].as_bool().ok_or_else(|| bad(k))?])
        };
        let records = v
            .get("records")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("records"))?
            .iter()
            .map(|r| {
                Ok(ClassRecord {
                    class: class(r.get("class").ok_or_else(|| bad("class"))?)?,
                    length: uint(r, "length")?,
                    translation: pair_f(r, "translation")?,
                    ratio: pair_f(r, "ratio")?,
                    max_ratio: num(r, "max_ratio")?,
                    best_k: pair_f(r, "best_k")?,
                    axis_pass: pair_b(r, "axis_pass")?,
                    parabolic: pair_b(r, "parabolic")?,
                })
            })
            .collect::<Result<Vec<_>, NonmixingError>>()?;
        let witnesses = v.get("zero_witnesses").and_then(Value::as_array).filter(|a| a.len() == 2).ok_or_else(|| bad("zero_witnesses"))?;
        let list = |w: &Value| -> Result<Vec<ConjClass>, NonmixingError> {
            w.as_array().ok_or_else(|| bad("zero_witnesses"))?.iter().map(class).collect()
        };
        Ok(PS2Report {
            rank,
            max_length: uint(v, "max_length")?,
            k: num(v, "k")?,
            window: uint(v, "window")?,
            min_max_ratio: num(v, "min_max_ratio")?,
            argmin: match v.get("argmin") {
                Some(Value::Null) | None => None,
                Some(s) => Some(class(s)?),
            },
            zero_witnesses: [list(&witnesses[0])?, list(&witnesses[1])?],
            consistency_violations: uint(v, "consistency_violations")?,
            records,
        })
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "class", "length", "ell1", "ell2", "ratio1", "ratio2", "max_ratio", "best_k1", "best_k2", "pass1", "pass2", "parabolic1",
            "parabolic2",
        ])?;
        for r in &self.records {
            out.write_record([
                r.class.canonical().to_string(),
                r.length.to_string(),
                r.translation[0].to_string(),
                r.translation[1].to_string(),
                r.ratio[0].to_string(),
                r.ratio[1].to_string(),
                r.max_ratio.to_string(),
                r.best_k[0].to_string(),
                r.best_k[1].to_string(),
                r.axis_pass[0].to_string(),
                r.axis_pass[1].to_string(),
                r.parabolic[0].to_string(),
                r.parabolic[1].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rebuilds the per-class records from [`PS2Report::write_csv`] output;
    /// the summary is recomputed.
    pub fn read_csv<R: io::Read>(r: R, rank: usize, params: &ProbeParams) -> Result<PS2Report, NonmixingError> {
        let bad = |e: &dyn std::fmt::Display| NonmixingError::Malformed(e.to_string());
        let mut rd = csv::Reader::from_reader(r);
        let mut records = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| bad(&e))?;
            let f = |i: usize| rec.get(i).unwrap_or("").parse::<f64>().map_err(|e| bad(&e));
            let b = |i: usize| rec.get(i).unwrap_or("").parse::<bool>().map_err(|e| bad(&e));
            records.push(ClassRecord {
                class: ConjClass::of(&Word::parse(rec.get(0).unwrap_or(""), rank)?),
                length: rec.get(1).unwrap_or("").parse::<usize>().map_err(|e| bad(&e))?,
                translation: [f(2)?, f(3)?],
                ratio: [f(4)?, f(5)?],
                max_ratio: f(6)?,
                best_k: [f(7)?, f(8)?],
                axis_pass: [b(9)?, b(10)?],
                parabolic: [b(11)?, b(12)?],
            });
        }
        Ok(summarize(rank, params, records))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub g1: Word,
    pub g2: Word,
    pub m: u32,
    pub pair: TwistedPair,
    pub report: PS2Report,
}

/// `[x_i, x_j] = x_i x_j x_i⁻¹ x_j⁻¹`.
pub fn commutator(rank: usize, i: usize, j: usize) -> Word {
    Word::commutator(&Word::generator(rank, i), &Word::generator(rank, j))
}

/// Default twisting words `[x2, x3]` and `[x1, x3]`.
pub fn default_twisting_words() -> (Word, Word) {
    (commutator(3, 2, 3), commutator(3, 1, 3))
}

/// The whole construction: base representation, the smallest `m ≤ max_m`
/// with containment for both variants, the twisted pair, and the probe.
pub fn nonmixing_demo(params: &ProbeParams, max_m: u32, tol: &Tolerance) -> Result<DemoReport, NonmixingError> {
    let rho0 = build_fuchsian_4punctured();
    let (g1, g2) = default_twisting_words();
    let mut m = None;
    for k in 1..=max_m {
        let w1 = puncture_whitehead_containment(&build_phi(k, 1, &g1)?, &rho0.punctures, &WhiteheadGraph::of_word(&g1))?;
        let w2 = puncture_whitehead_containment(&build_phi(k, 2, &g2)?, &rho0.punctures, &WhiteheadGraph::of_word(&g2))?;
        if w1.contained && w2.contained {
            m = Some(k);
            break;
        }
    }
    let m = m.ok_or(NonmixingError::NoExponent { max: max_m })?;
    let pair = twisted_pair(&rho0, m, &g1, &g2)?;
    let report = ps2_probe(&ProbeRep::Exact(pair.rho[0].clone()), &ProbeRep::Exact(pair.rho[1].clone()), params, tol)?;
    Ok(DemoReport { g1, g2, m, pair, report })
}

/// Classes among `words` whose Whitehead graph contains `union`.
pub fn words_containing(words: impl IntoIterator<Item = Word>, union: &WhiteheadGraph) -> BTreeSet<ConjClass> {
    words.into_iter().filter(|w| WhiteheadGraph::of_word(w).contains(union)).map(|w| ConjClass::of(&w)).collect()
}
