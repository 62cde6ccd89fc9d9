//! Unit-determinant 2×2 matrices over ℝ, ℂ, and the compact subgroup SU(2),
//! together with the hyperbolic geometry they act on.
//!
//! Entries are always stored as `Complex64`; the [`Field`] tag records which
//! subgroup an element is meant to live in. Real elements have zero
//! imaginary parts throughout, since real products never create them.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Number, Value};
use thiserror::Error;

use crate::freegroup::{FreeAutomorphism, FreeGroupError, Word};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Sl2Error {
    #[error("field mismatch: {0} vs {1}")]
    FieldMismatch(Field, Field),
    #[error("determinant {det} differs from 1 by more than {tol:e}")]
    DetDrift { det: C64, tol: f64 },
    #[error("entries are not valid for the {0} field")]
    NotInField(Field),
    #[error("element is not elliptic (trace {0})")]
    NotElliptic(C64),
    #[error("height must be positive, got {0}")]
    NonPositiveHeight(f64),
    #[error("representation must have at least one image")]
    EmptyRepresentation,
    #[error(transparent)]
    FreeGroup(#[from] FreeGroupError),
    #[error("malformed JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Real,
    Complex,
    /// The compact subgroup SU(2) ⊂ SL₂(ℂ).
    #[serde(rename = "su2")]
    Unitary,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Real => "real",
            Field::Complex => "complex",
            Field::Unitary => "su2",
        })
    }
}

impl std::str::FromStr for Field {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" | "sl2r" => Ok(Field::Real),
            "complex" | "sl2c" => Ok(Field::Complex),
            "su2" | "unitary" => Ok(Field::Unitary),
            other => Err(format!("unknown field {other:?}; expected real, complex or su2")),
        }
    }
}

/// Numerical thresholds shared by every predicate in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub det: f64,
    pub par: f64,
    /// Singular values below `rank_rel * σ_max` count as zero.
    pub rank_rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { det: 1e-9, par: 1e-8, rank_rel: 1e-8 }
    }
}

#[derive(Clone, Copy, PartialEq)]
pub struct GroupElement {
    field: Field,
    m: [C64; 4],
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.field, self)
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = |z: C64| {
            if self.field == Field::Real {
                format!("{}", z.re)
            } else {
                format!("{}", z)
            }
        };
        write!(f, "[[{}, {}], [{}, {}]]", e(self.m[0]), e(self.m[1]), e(self.m[2]), e(self.m[3]))
    }
}

fn mul2(x: &[C64; 4], y: &[C64; 4]) -> [C64; 4] {
    [
        x[0] * y[0] + x[1] * y[2],
        x[0] * y[1] + x[1] * y[3],
        x[2] * y[0] + x[3] * y[2],
        x[2] * y[1] + x[3] * y[3],
    ]
}

/// Largest singular value of a 2×2 complex matrix.
pub fn operator_norm(m: &[C64; 4]) -> f64 {
    let f2: f64 = m.iter().map(|z| z.norm_sqr()).sum();
    let det = (m[0] * m[3] - m[1] * m[2]).norm();
    let disc = (f2 * f2 - 4.0 * det * det).max(0.0);
    ((f2 + disc.sqrt()) / 2.0).sqrt()
}

impl GroupElement {
    /// Validates field membership and `|det − 1| ≤ tol.det`.
    pub fn new(field: Field, m: [C64; 4], tol: &Tolerance) -> Result<GroupElement, Sl2Error> {
        let g = GroupElement { field, m };
        match field {
            Field::Real if m.iter().any(|z| z.im != 0.0) => return Err(Sl2Error::NotInField(field)),
            Field::Unitary => {
                let scale = 1.0 + operator_norm(&m);
                let t = tol.det * scale;
                if (m[3] - m[0].conj()).norm() > t || (m[2] + m[1].conj()).norm() > t {
                    return Err(Sl2Error::NotInField(field));
                }
            }
            _ => {}
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Sl2Error::NotInField(field));
        }
        g.check_det(tol)?;
        Ok(g)
    }

    pub fn real(a: f64, b: f64, c: f64, d: f64) -> Result<GroupElement, Sl2Error> {
        GroupElement::new(Field::Real, [a, b, c, d].map(|x| C64::new(x, 0.0)), &Tolerance::default())
    }

    pub fn complex(a: C64, b: C64, c: C64, d: C64) -> Result<GroupElement, Sl2Error> {
        GroupElement::new(Field::Complex, [a, b, c, d], &Tolerance::default())
    }

    /// `[[α, β], [−β̄, ᾱ]]` with `|α|² + |β|² = 1`.
    pub fn su2(alpha: C64, beta: C64) -> Result<GroupElement, Sl2Error> {
        GroupElement::new(Field::Unitary, [alpha, beta, -beta.conj(), alpha.conj()], &Tolerance::default())
    }

    /// Element from a unit quaternion `q0 + q1 i + q2 j + q3 k`.
    pub fn su2_from_quaternion(q: [f64; 4]) -> Result<GroupElement, Sl2Error> {
        GroupElement::su2(C64::new(q[0], q[3]), C64::new(q[2], q[1]))
    }

    /// Skips every check. For hot loops whose inputs are already valid.
    pub fn from_entries_unchecked(field: Field, m: [C64; 4]) -> GroupElement {
        GroupElement { field, m }
    }

    pub fn identity(field: Field) -> GroupElement {
        GroupElement { field, m: [ONE, ZERO, ZERO, ONE] }
    }

    pub fn minus_identity(field: Field) -> GroupElement {
        GroupElement { field, m: [-ONE, ZERO, ZERO, -ONE] }
    }

    /// `[[cos θ, −sin θ], [sin θ, cos θ]]`, valid in every field.
    pub fn rotation(field: Field, theta: f64) -> GroupElement {
        let (s, c) = theta.sin_cos();
        GroupElement { field, m: [C64::new(c, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0), C64::new(c, 0.0)] }
    }

    /// `diag(λ, 1/λ)` for real `λ ≠ 0`; not unitary unless `|λ| = 1`.
    pub fn diagonal(field: Field, lambda: C64) -> GroupElement {
        GroupElement { field, m: [lambda, ZERO, ZERO, lambda.inv()] }
    }

    /// Sample: Haar measure for `Unitary`, otherwise a normalized Gaussian
    /// matrix (entries of order one).
    pub fn random<R: Rng + ?Sized>(field: Field, rng: &mut R) -> GroupElement {
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        match field {
            Field::Unitary => loop {
                let q = [normal(), normal(), normal(), normal()];
                let r = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r > 1e-6 {
                    let q = q.map(|x| x / r);
                    return GroupElement::from_entries_unchecked(
                        Field::Unitary,
                        [C64::new(q[0], q[3]), C64::new(q[2], q[1]), C64::new(-q[2], q[1]), C64::new(q[0], -q[3])],
                    );
                }
            },
            Field::Real => loop {
                let mut m = [normal(), normal(), normal(), normal()];
                let mut det = m[0] * m[3] - m[1] * m[2];
                if det.abs() < 1e-3 {
                    continue;
                }
                if det < 0.0 {
                    m.swap(0, 2);
                    m.swap(1, 3);
                    det = -det;
                }
                let s = det.sqrt();
                return GroupElement::from_entries_unchecked(Field::Real, m.map(|x| C64::new(x / s, 0.0)));
            },
            Field::Complex => loop {
                let m = [0; 4].map(|_| C64::new(normal(), normal()));
                let det = m[0] * m[3] - m[1] * m[2];
                if det.norm() < 1e-3 {
                    continue;
                }
                let s = det.sqrt();
                return GroupElement::from_entries_unchecked(Field::Complex, m.map(|x| x / s));
            },
        }
    }

    /// `exp(X)` for a trace-zero `X`, via `exp X = cosh s · I + (sinh s / s) X`
    /// with `s² = −det X`.
    pub fn exp_traceless(field: Field, x: [C64; 4]) -> GroupElement {
        let s2 = x[0] * x[0] + x[1] * x[2];
        let s = s2.sqrt();
        let (c, k) = if s.norm() < 1e-4 {
            (ONE + s2 / 2.0 + s2 * s2 / 24.0, ONE + s2 / 6.0 + s2 * s2 / 120.0)
        } else {
            (s.cosh(), s.sinh() / s)
        };
        let mut m = [c + k * x[0], k * x[1], k * x[2], c - k * x[0]];
        if field == Field::Real {
            m = m.map(|z| C64::new(z.re, 0.0));
        }
        GroupElement { field, m }
    }

    /// `exp(X)` for a random Lie algebra element `X` of Frobenius norm
    /// `radius`, uniformly oriented.
    pub fn random_near_identity<R: Rng + ?Sized>(field: Field, radius: f64, rng: &mut R) -> GroupElement {
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let x = match field {
            Field::Real => {
                let (a, b, c) = (normal(), normal(), normal());
                [C64::new(a, 0.0), C64::new(b, 0.0), C64::new(c, 0.0), C64::new(-a, 0.0)]
            }
            Field::Complex => {
                let a = C64::new(normal(), normal());
                [a, C64::new(normal(), normal()), C64::new(normal(), normal()), -a]
            }
            Field::Unitary => {
                let (p, q, r) = (normal(), normal(), normal());
                [C64::new(0.0, r), C64::new(q, p), C64::new(-q, p), C64::new(0.0, -r)]
            }
        };
        let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
        GroupElement::exp_traceless(field, x.map(|z| z * (radius / norm)))
    }

    pub fn field(&self) -> Field {
        self.field
    }

    /// Row-major entries `[a, b, c, d]`.
    pub fn entries(&self) -> [C64; 4] {
        self.m
    }

    pub fn det(&self) -> C64 {
        self.m[0] * self.m[3] - self.m[1] * self.m[2]
    }

    pub fn check_det(&self, tol: &Tolerance) -> Result<(), Sl2Error> {
        let det = self.det();
        if (det - ONE).norm() > tol.det {
            return Err(Sl2Error::DetDrift { det, tol: tol.det });
        }
        Ok(())
    }

    /// Divides by a square root of the determinant. Real elements with
    /// negative determinant are reported. Over SU(2) the element is rebuilt
    /// from its normalized first row.
    pub fn renormalized(&self) -> Result<GroupElement, Sl2Error> {
        let det = self.det();
        if self.field == Field::Unitary {
            let [a, b, _, _] = self.m;
            let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
            if !(r > 0.0) {
                return Err(Sl2Error::DetDrift { det, tol: 0.0 });
            }
            let (a, b) = (a / r, b / r);
            return Ok(GroupElement { field: self.field, m: [a, b, -b.conj(), a.conj()] });
        }
        let s = match self.field {
            Field::Real if det.re <= 0.0 => return Err(Sl2Error::DetDrift { det, tol: 0.0 }),
            Field::Real => C64::new(det.re.sqrt(), 0.0),
            _ => det.sqrt(),
        };
        Ok(GroupElement { field: self.field, m: self.m.map(|z| z / s) })
    }

    pub fn trace(&self) -> C64 {
        self.m[0] + self.m[3]
    }

    /// Inverse via the adjugate; exact for determinant one.
    pub fn inverse(&self) -> GroupElement {
        let [a, b, c, d] = self.m;
        GroupElement { field: self.field, m: [d, -b, -c, a] }
    }

    /// Product without a determinant check.
    ///
    /// # Panics
    /// On mismatched fields.
    pub fn mul(&self, other: &GroupElement) -> GroupElement {
        assert_eq!(self.field, other.field, "field mismatch in product");
        GroupElement { field: self.field, m: mul2(&self.m, &other.m) }
    }

    /// Product with field and determinant checks.
    pub fn try_mul(&self, other: &GroupElement, tol: &Tolerance) -> Result<GroupElement, Sl2Error> {
        if self.field != other.field {
            return Err(Sl2Error::FieldMismatch(self.field, other.field));
        }
        let p = GroupElement { field: self.field, m: mul2(&self.m, &other.m) };
        p.check_det(tol)?;
        Ok(p)
    }

    pub fn pow(&self, k: i64) -> GroupElement {
        let mut base = if k < 0 { self.inverse() } else { *self };
        let mut e = k.unsigned_abs();
        let mut acc = GroupElement::identity(self.field);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    pub fn conjugate_by(&self, h: &GroupElement) -> GroupElement {
        h.mul(self).mul(&h.inverse())
    }

    /// Operator-norm distance `‖self − other‖`.
    pub fn distance(&self, other: &GroupElement) -> f64 {
        let d = [0, 1, 2, 3].map(|k| self.m[k] - other.m[k]);
        operator_norm(&d)
    }

    /// Operator-norm distance to the nearer of `±I`.
    pub fn distance_from_center(&self) -> f64 {
        self.distance(&GroupElement::identity(self.field)).min(self.distance(&GroupElement::minus_identity(self.field)))
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `‖gh − hg‖` relative to `‖g‖‖h‖`, compared against `tol`.
    pub fn commutes_with(&self, other: &GroupElement, tol: f64) -> bool {
        let gh = mul2(&self.m, &other.m);
        let hg = mul2(&other.m, &self.m);
        let diff = [0, 1, 2, 3].map(|k| gh[k] - hg[k]);
        operator_norm(&diff) <= tol * operator_norm(&self.m) * operator_norm(&other.m)
    }

    pub fn classify(&self, tol: &Tolerance) -> IsometryType {
        let t = self.trace();
        let kind = if self.distance_from_center() <= tol.par {
            IsometryKind::Central
        } else {
            match self.field {
                Field::Real | Field::Unitary => {
                    let tr = t.re;
                    if (tr.abs() - 2.0).abs() <= tol.par {
                        IsometryKind::Parabolic
                    } else if tr.abs() < 2.0 {
                        IsometryKind::Elliptic
                    } else {
                        IsometryKind::Hyperbolic
                    }
                }
                Field::Complex => {
                    if (t - 2.0).norm() <= tol.par || (t + 2.0).norm() <= tol.par {
                        IsometryKind::Parabolic
                    } else if t.im.abs() <= tol.par && t.re.abs() < 2.0 {
                        IsometryKind::Elliptic
                    } else {
                        IsometryKind::Hyperbolic
                    }
                }
            }
        };
        IsometryType { kind, trace: t }
    }

    /// Eigenvalue of largest modulus.
    pub fn dominant_eigenvalue(&self) -> C64 {
        let t = self.trace();
        let s = (t * t - 4.0).sqrt();
        // pick the sign avoiding cancellation
        
        if (t + s).norm() >= (t - s).norm() { (t + s) / 2.0 } else { (t - s) / 2.0 }
    }

    /// `2 ln |λ|max`: the minimal displacement on ℍ³. Exactly zero for
    /// elements classified elliptic, parabolic or central.
    pub fn translation_length(&self, tol: &Tolerance) -> f64 {
        match self.classify(tol).kind {
            IsometryKind::Hyperbolic => 2.0 * self.dominant_eigenvalue().norm().ln().max(0.0),
            _ => 0.0,
        }
    }

    /// `2 |Re arccosh(tr/2)|`, an independent formula for the same quantity.
    pub fn translation_length_acosh(&self) -> f64 {
        2.0 * (self.trace() / 2.0).acosh().re.abs()
    }

    /// θ ∈ (0, π] with `tr = 2 cos θ`.
    pub fn rotation_angle(&self, tol: &Tolerance) -> Result<f64, Sl2Error> {
        if self.classify(tol).kind != IsometryKind::Elliptic {
            return Err(Sl2Error::NotElliptic(self.trace()));
        }
        Ok((self.trace().re / 2.0).clamp(-1.0, 1.0).acos())
    }

    /// Matrix of `v ↦ g v g⁻¹` on the trace-zero matrices. The basis is
    /// `H, E, F` for the real and complex fields and `iσ₁, iσ₂, iσ₃` for SU(2),
    /// so real and unitary elements give real matrices.
    pub fn adjoint(&self) -> [[C64; 3]; 3] {
        let basis = adjoint_basis(self.field);
        let ginv = self.inverse().m;
        let mut out = [[ZERO; 3]; 3];
        for (j, b) in basis.iter().enumerate() {
            let x = mul2(&mul2(&self.m, b), &ginv);
            let c = adjoint_coords(self.field, &x);
            for i in 0..3 {
                out[i][j] = c[i];
            }
        }
        out
    }

    /// Point `g·p` in the upper half-space model.
    pub fn mobius_act(&self, p: &H3Point) -> H3Point {
        let [a, b, c, d] = self.m;
        let (z, t) = (p.z, p.t);
        let czd = c * z + d;
        let denom = czd.norm_sqr() + c.norm_sqr() * t * t;
        let zz = ((a * z + b) * czd.conj() + a * c.conj() * t * t) / denom;
        H3Point { z: zz, t: t / denom }
    }

    pub fn to_json(&self) -> Value {
        json!({ "field": self.field, "entries": self.m.iter().map(|&z| scalar_json(self.field, z)).collect::<Vec<_>>() })
    }

    pub fn from_json(v: &Value, tol: &Tolerance) -> Result<GroupElement, Sl2Error> {
        let field: Field = serde_json::from_value(v.get("field").cloned().unwrap_or(Value::Null))
            .map_err(|e| Sl2Error::Json(e.to_string()))?;
        let entries = v.get("entries").and_then(Value::as_array).ok_or_else(|| Sl2Error::Json("missing entries".into()))?;
        GroupElement::from_entry_list(field, entries, tol)
    }

    fn from_entry_list(field: Field, entries: &[Value], tol: &Tolerance) -> Result<GroupElement, Sl2Error> {
        if entries.len() != 4 {
            return Err(Sl2Error::Json(format!("expected 4 entries, found {}", entries.len())));
        }
        let mut m = [ZERO; 4];
        for (k, e) in entries.iter().enumerate() {
            m[k] = scalar_from_json(e)?;
        }
        GroupElement::new(field, m, tol)
    }
}

fn adjoint_basis(field: Field) -> [[C64; 4]; 3] {
    match field {
        Field::Unitary => [[ZERO, I, I, ZERO], [ZERO, ONE, -ONE, ZERO], [I, ZERO, ZERO, -I]],
        _ => [[ONE, ZERO, ZERO, -ONE], [ZERO, ONE, ZERO, ZERO], [ZERO, ZERO, ONE, ZERO]],
    }
}

fn adjoint_coords(field: Field, x: &[C64; 4]) -> [C64; 3] {
    match field {
        // x = x1·iσ1 + x2·iσ2 + x3·iσ3 = [[i x3, i x1 + x2], [i x1 − x2, −i x3]]
        Field::Unitary => [(x[1] + x[2]) / (2.0 * I), (x[1] - x[2]) / 2.0, -I * x[0]],
        _ => [x[0], x[1], x[2]],
    }
}

/// Fixed-width rendering with 17 significant digits.
pub fn number17(x: f64) -> Value {
    match format!("{x:.16e}").parse::<Number>() {
        Ok(n) if x.is_finite() => Value::Number(n),
        _ => Value::Null,
    }
}

fn scalar_json(field: Field, z: C64) -> Value {
    match field {
        Field::Real => number17(z.re),
        _ => Value::Array(vec![number17(z.re), number17(z.im)]),
    }
}

fn scalar_from_json(v: &Value) -> Result<C64, Sl2Error> {
    let num = |v: &Value| v.as_f64().ok_or_else(|| Sl2Error::Json(format!("not a number: {v}")));
    match v {
        Value::Array(pair) if pair.len() == 2 => Ok(C64::new(num(&pair[0])?, num(&pair[1])?)),
        other => Ok(C64::new(num(other)?, 0.0)),
    }
}

impl Serialize for GroupElement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupElement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        GroupElement::from_json(&v, &Tolerance::default()).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsometryKind {
    /// Within tolerance of `±I`.
    Central,
    Elliptic,
    Parabolic,
    /// Hyperbolic in the real case, loxodromic in the complex case.
    Hyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsometryType {
    pub kind: IsometryKind,
    pub trace: C64,
}

/// Numerical dimension of `span{Ad(g)}` inside the 9-dimensional
/// endomorphism algebra. Real field and SU(2): rank over ℝ; complex field:
/// rank over ℂ.
pub fn ad_span_rank(elements: &[GroupElement], tol: &Tolerance) -> usize {
    if elements.is_empty() {
        return 0;
    }
    let field = elements[0].field;
    let cols: Vec<[C64; 9]> = elements.iter().map(ad_vector).collect();
    let sv: Vec<f64> = match field {
        Field::Complex => {
            let m = DMatrix::from_fn(9, cols.len(), |i, j| cols[j][i]);
            m.singular_values().iter().copied().collect()
        }
        _ => {
            let m = DMatrix::from_fn(9, cols.len(), |i, j| cols[j][i].re);
            m.singular_values().iter().copied().collect()
        }
    };
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol.rank_rel * smax).count()
}

/// Real dimension of the algebra spanned by `Ad(G)`: 9 for SL₂(ℝ) and SU(2),
/// 18 for SL₂(ℂ) viewed as a real Lie group.
pub fn ad_algebra_dim(field: Field) -> usize {
    match field {
        Field::Complex => 18,
        _ => 9,
    }
}

/// Real dimension of the real span of `{Ad(g)}`. For the complex field the
/// 9 complex coordinates are split into 18 real ones, so a subgroup
/// conjugate into SL₂(ℝ) or SU(2) stays at 9 while a dense one reaches 18.
pub fn ad_real_span_rank(elements: &[GroupElement], tol: &Tolerance) -> usize {
    if elements.is_empty() {
        return 0;
    }
    let field = elements[0].field;
    if field != Field::Complex {
        return ad_span_rank(elements, tol);
    }
    let cols: Vec<[C64; 9]> = elements.iter().map(ad_vector).collect();
    let m = DMatrix::from_fn(18, cols.len(), |i, j| if i < 9 { cols[j][i].re } else { cols[j][i - 9].im });
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol.rank_rel * smax).count()
}

pub(crate) fn ad_vector(g: &GroupElement) -> [C64; 9] {
    let a = g.adjoint();
    let mut v = [ZERO; 9];
    for i in 0..3 {
        for j in 0..3 {
            v[3 * i + j] = a[i][j];
        }
    }
    v
}

/// A point `z + t·j` of the upper half-space, `t > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H3Point {
    pub z: C64,
    pub t: f64,
}

impl H3Point {
    pub fn new(z: C64, t: f64) -> Result<H3Point, Sl2Error> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Sl2Error::NonPositiveHeight(t));
        }
        Ok(H3Point { z, t })
    }

    /// The point `j`, fixed by SU(2).
    pub fn basepoint() -> H3Point {
        H3Point { z: ZERO, t: 1.0 }
    }
}

/// Hyperbolic distance, `cosh d = 1 + (|z₁−z₂|² + (t₁−t₂)²)/(2 t₁ t₂)`,
/// evaluated through `asinh` for accuracy at short range.
pub fn h3_distance(p: &H3Point, q: &H3Point) -> f64 {
    let r = ((p.z - q.z).norm_sqr() + (p.t - q.t).powi(2)).sqrt();
    2.0 * (r / (2.0 * (p.t * q.t).sqrt())).asinh()
}

/// An `n`-tuple of elements of one field, identified with a homomorphism
/// from the free group of rank `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    field: Field,
    images: Vec<GroupElement>,
}

impl Representation {
    pub fn new(images: Vec<GroupElement>) -> Result<Representation, Sl2Error> {
        let field = images.first().ok_or(Sl2Error::EmptyRepresentation)?.field;
        if let Some(bad) = images.iter().find(|g| g.field != field) {
            return Err(Sl2Error::FieldMismatch(field, bad.field));
        }
        Ok(Representation { field, images })
    }

    pub fn random<R: Rng + ?Sized>(field: Field, rank: usize, rng: &mut R) -> Representation {
        Representation { field, images: (0..rank).map(|_| GroupElement::random(field, rng)).collect() }
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn rank(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[GroupElement] {
        &self.images
    }

    /// Image of `x_i`, 1-based.
    pub fn image(&self, i: usize) -> &GroupElement {
        &self.images[i - 1]
    }

    pub fn into_images(self) -> Vec<GroupElement> {
        self.images
    }

    /// Replaces the image of `x_i`, 1-based.
    pub fn set_image(&mut self, i: usize, g: GroupElement) -> Result<(), Sl2Error> {
        if g.field != self.field {
            return Err(Sl2Error::FieldMismatch(self.field, g.field));
        }
        self.images[i - 1] = g;
        Ok(())
    }

    pub fn evaluate(&self, w: &Word) -> Result<GroupElement, Sl2Error> {
        w.check_rank(self.rank())?;
        Ok(self.evaluate_unchecked(w))
    }

    pub(crate) fn evaluate_unchecked(&self, w: &Word) -> GroupElement {
        let mut acc = GroupElement::identity(self.field);
        for l in w.letters() {
            let g = &self.images[l.index() - 1];
            acc = if l.is_inverse() { acc.mul(&g.inverse()) } else { acc.mul(g) };
        }
        acc
    }

    /// Precomposition with `a⁻¹`: the image of `x_i` becomes
    /// `ρ(a⁻¹(x_i))`. This is a left action, `act(a∘b) = act(a)∘act(b)`.
    pub fn act(&self, a: &FreeAutomorphism) -> Result<Representation, Sl2Error> {
        if a.rank() != self.rank() {
            return Err(FreeGroupError::RankMismatch { expected: self.rank(), found: a.rank() }.into());
        }
        Ok(Representation { field: self.field, images: a.inverse_images().iter().map(|w| self.evaluate_unchecked(w)).collect() })
    }

    /// Largest coordinatewise operator-norm distance.
    pub fn distance(&self, other: &Representation) -> f64 {
        self.images.iter().zip(&other.images).map(|(a, b)| a.distance(b)).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "field": self.field,
            "rank": self.rank(),
            "entries": self.images.iter().map(|g| g.m.iter().map(|&z| scalar_json(self.field, z)).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value, tol: &Tolerance) -> Result<Representation, Sl2Error> {
        let field: Field = serde_json::from_value(v.get("field").cloned().unwrap_or(Value::Null))
            .map_err(|e| Sl2Error::Json(e.to_string()))?;
        let rows = v.get("entries").and_then(Value::as_array).ok_or_else(|| Sl2Error::Json("missing entries".into()))?;
        if let Some(rank) = v.get("rank").and_then(Value::as_u64) {
            if rank as usize != rows.len() {
                return Err(Sl2Error::Json(format!("rank {rank} but {} images", rows.len())));
            }
        }
        let images = rows
            .iter()
            .map(|r| {
                let e = r.as_array().ok_or_else(|| Sl2Error::Json("image is not an array".into()))?;
                GroupElement::from_entry_list(field, e, tol)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Representation::new(images)
    }
}

impl Serialize for Representation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Representation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Representation::from_json(&v, &Tolerance::default()).map_err(serde::de::Error::custom)
    }
}

/// Distance from `θ/π` to the nearest rational with denominator ≤ `q_max`.
pub fn rational_gap(theta: f64, q_max: u32) -> (f64, u32) {
    let x = theta / PI;
    let mut best = (f64::INFINITY, 1);
    for q in 1..=q_max {
        let p = (x * q as f64).round();
        let gap = (x - p / q as f64).abs();
        if gap < best.0 {
            best = (gap, q);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freegroup::{nielsen_generators, Word};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn r(a: f64, b: f64, c: f64, d: f64) -> GroupElement {
        GroupElement::real(a, b, c, d).unwrap()
    }

    fn close(a: &GroupElement, b: &GroupElement, eps: f64) -> bool {
        a.distance(b) <= eps
    }

    #[test]
    fn arithmetic_examples() {
        let a = r(1.0, 1.0, 0.0, 1.0);
        let b = r(1.0, 0.0, 1.0, 1.0);
        assert_eq!(a.mul(&b), r(2.0, 1.0, 1.0, 1.0));
        assert_eq!(GroupElement::identity(Field::Real).mul(&a), a);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for field in [Field::Real, Field::Complex, Field::Unitary] {
            let g = GroupElement::random(field, &mut rng);
            assert!(close(&g.mul(&g.inverse()), &GroupElement::identity(field), 1e-12));
        }
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(GroupElement::real(2.0, 0.0, 0.0, 1.0), Err(Sl2Error::DetDrift { .. })));
        assert!(GroupElement::new(Field::Real, [I, ZERO, ZERO, -I], &tol()).is_err());
        assert!(GroupElement::su2(C64::new(2.0, 0.0), ZERO).is_err());
        let a = r(1.0, 1.0, 0.0, 1.0);
        let z = GroupElement::identity(Field::Complex);
        assert!(matches!(a.try_mul(&z, &tol()), Err(Sl2Error::FieldMismatch(..))));
        assert!(Representation::new(vec![a, z]).is_err());
    }

    #[test]
    fn renormalization_is_explicit() {
        let g = GroupElement::from_entries_unchecked(Field::Real, [2.0, 0.0, 0.0, 2.0].map(|x| C64::new(x, 0.0)));
        assert!(g.check_det(&tol()).is_err());
        let h = g.renormalized().unwrap();
        assert!(close(&h, &GroupElement::identity(Field::Real), 1e-15));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(r(1.0, 1.0, 0.0, 1.0).classify(&tol()).kind, IsometryKind::Parabolic);
        assert_eq!(r(-1.0, 5.0, 0.0, -1.0).classify(&tol()).kind, IsometryKind::Parabolic);
        let rot = GroupElement::rotation(Field::Real, PI / 8.0);
        assert_eq!(rot.classify(&tol()).kind, IsometryKind::Elliptic);
        assert_eq!(r(2.0, 0.0, 0.0, 0.5).classify(&tol()).kind, IsometryKind::Hyperbolic);
        assert_eq!(GroupElement::identity(Field::Real).classify(&tol()).kind, IsometryKind::Central);
        let lox = GroupElement::diagonal(Field::Complex, C64::from_polar(1.5, 0.3));
        assert_eq!(lox.classify(&tol()).kind, IsometryKind::Hyperbolic);
        let ell = GroupElement::diagonal(Field::Complex, C64::from_polar(1.0, 0.3));
        assert_eq!(ell.classify(&tol()).kind, IsometryKind::Elliptic);
    }

    #[test]
    fn translation_length_examples() {
        let e = std::f64::consts::E;
        assert!((r(e, 0.0, 0.0, 1.0 / e).translation_length(&tol()) - 2.0).abs() < 1e-14);
        assert_eq!(r(1.0, 1.0, 0.0, 1.0).translation_length(&tol()), 0.0);
        let expect = 2.0 * ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert!((r(2.0, 1.0, 1.0, 1.0).translation_length(&tol()) - expect).abs() < 1e-14);
        assert!((expect - 1.9248473002384139).abs() < 1e-12);
        assert_eq!(GroupElement::rotation(Field::Real, 0.7).translation_length(&tol()), 0.0);
    }

    #[test]
    fn rotation_angle_examples() {
        let a = GroupElement::rotation(Field::Real, PI / 3.0).rotation_angle(&tol()).unwrap();
        assert!((a - PI / 3.0).abs() < 1e-12);
        let near = GroupElement::rotation(Field::Real, PI - 1e-3).rotation_angle(&tol()).unwrap();
        assert!((near - PI).abs() < 2e-3);
        let h = r(2.0, 1.0, 1.0, 1.0);
        let c = GroupElement::rotation(Field::Real, 0.9).conjugate_by(&h).rotation_angle(&tol()).unwrap();
        assert!((c - 0.9).abs() < 1e-12);
        assert!(r(2.0, 0.0, 0.0, 0.5).rotation_angle(&tol()).is_err());
    }

    fn identity3(a: &[[C64; 3]; 3]) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { ONE } else { ZERO };
                err = err.max((a[i][j] - e).norm());
            }
        }
        err
    }

    fn mat3(a: &[[C64; 3]; 3], b: &[[C64; 3]; 3]) -> [[C64; 3]; 3] {
        let mut out = [[ZERO; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    fn det3(a: &[[C64; 3]; 3]) -> C64 {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    #[test]
    fn adjoint_examples() {
        for field in [Field::Real, Field::Complex, Field::Unitary] {
            assert!(identity3(&GroupElement::identity(field).adjoint()) < 1e-15);
            assert!(identity3(&GroupElement::minus_identity(field).adjoint()) < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for field in [Field::Real, Field::Complex, Field::Unitary] {
            for _ in 0..50 {
                let g = GroupElement::random(field, &mut rng);
                let h = GroupElement::random(field, &mut rng);
                let lhs = g.mul(&h).adjoint();
                let rhs = mat3(&g.adjoint(), &h.adjoint());
                let scale = 1.0 + g.max_abs_entry().powi(2) * h.max_abs_entry().powi(2);
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((lhs[i][j] - rhs[i][j]).norm() < 1e-10 * scale);
                    }
                }
                assert!((det3(&g.adjoint()) - ONE).norm() < 1e-9 * scale);
                if field != Field::Complex {
                    assert!(g.adjoint().iter().flatten().all(|z| z.im.abs() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn ad_span_rank_examples() {
        assert_eq!(ad_span_rank(&[GroupElement::identity(Field::Real)], &tol()), 1);
        let a = r(1.0, 1.0, 0.0, 1.0);
        let b = r(1.0, 0.0, 1.0, 1.0);
        let rep = Representation::new(vec![a, b]).unwrap();
        let words = crate::whitehead::reduced_words(2, 4);
        let images: Vec<_> = words.iter().map(|w| rep.evaluate(w).unwrap()).collect();
        assert_eq!(ad_span_rank(&images, &tol()), 9);
        let g = r(2.0, 0.0, 0.0, 0.5);
        let powers: Vec<_> = (0..8).map(|k| g.pow(k)).collect();
        assert!(ad_span_rank(&powers, &tol()) <= 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let su: Vec<_> = (0..20).map(|_| GroupElement::random(Field::Unitary, &mut rng)).collect();
        assert_eq!(ad_span_rank(&su, &tol()), 9);
    }

    /// Rank of explicitly assembled Ad matrices via Gaussian elimination,
    /// independent of the SVD path.
    fn elimination_rank(vectors: &[[C64; 9]]) -> usize {
        let mut rows: Vec<Vec<C64>> = vectors.iter().map(|v| v.to_vec()).collect();
        let mut rank = 0;
        for col in 0..9 {
            let Some(p) = (rank..rows.len()).max_by(|&i, &j| rows[i][col].norm().total_cmp(&rows[j][col].norm())) else {
                break;
            };
            if rows[p][col].norm() < 1e-9 {
                continue;
            }
            rows.swap(rank, p);
            for i in 0..rows.len() {
                if i != rank {
                    let f = rows[i][col] / rows[rank][col];
                    for k in 0..9 {
                        let sub = f * rows[rank][k];
                        rows[i][k] -= sub;
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn span_rank_matches_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for field in [Field::Real, Field::Complex, Field::Unitary] {
            for k in 1..12 {
                let els: Vec<_> = (0..k).map(|_| GroupElement::random(field, &mut rng)).collect();
                let vecs: Vec<_> = els.iter().map(ad_vector).collect();
                assert_eq!(ad_span_rank(&els, &tol()), elimination_rank(&vecs));
            }
        }
    }

    #[test]
    fn realified_rank_separates_real_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lift = |g: GroupElement| GroupElement::from_entries_unchecked(Field::Complex, g.entries());
        let real: Vec<_> = (0..30).map(|_| lift(GroupElement::random(Field::Real, &mut rng))).collect();
        let unit: Vec<_> = (0..30).map(|_| lift(GroupElement::random(Field::Unitary, &mut rng))).collect();
        let cplx: Vec<_> = (0..30).map(|_| GroupElement::random(Field::Complex, &mut rng)).collect();
        assert_eq!(ad_span_rank(&real, &tol()), 9);
        assert_eq!(ad_real_span_rank(&real, &tol()), 9);
        assert_eq!(ad_real_span_rank(&unit, &tol()), 9);
        assert_eq!(ad_real_span_rank(&cplx, &tol()), 18);
    }

    #[test]
    fn exp_matches_power_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for field in [Field::Real, Field::Complex, Field::Unitary] {
            for radius in [1e-6, 0.1, 1.3] {
                let g = GroupElement::random_near_identity(field, radius, &mut rng);
                assert!((g.det() - ONE).norm() < 1e-12);
                let x = [0.3, -0.2, 0.5].map(|v| C64::new(v, 0.1 * v));
                let x = [x[0], x[1], x[2], -x[0]];
                let e = GroupElement::exp_traceless(Field::Complex, x);
                let mut series = [ONE, ZERO, ZERO, ONE];
                let mut term = [ONE, ZERO, ZERO, ONE];
                for k in 1..30 {
                    term = mul2(&term, &x).map(|z| z / k as f64);
                    for i in 0..4 {
                        series[i] += term[i];
                    }
                }
                assert!(operator_norm(&[0, 1, 2, 3].map(|i| e.m[i] - series[i])) < 1e-14);
            }
            let u = GroupElement::random_near_identity(Field::Unitary, 0.5, &mut rng);
            assert!(GroupElement::new(Field::Unitary, u.entries(), &tol()).is_ok());
            assert!((u.distance(&GroupElement::identity(Field::Unitary)) - 2.0 * (0.5f64 / 2f64.sqrt() / 2.0).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_examples() {
        let a = r(1.0, 1.0, 0.0, 1.0);
        let b = r(1.0, 0.0, 1.0, 1.0);
        let rep = Representation::new(vec![a, b]).unwrap();
        assert_eq!(rep.evaluate(&Word::identity(2)).unwrap(), GroupElement::identity(Field::Real));
        assert_eq!(rep.evaluate(&Word::generator(2, 1)).unwrap(), a);
        let c = rep.evaluate(&Word::parse("x1 x2 x1^-1 x2^-1", 2).unwrap()).unwrap();
        assert_eq!(c, r(3.0, -1.0, 1.0, 0.0));
        assert!(rep.evaluate(&Word::generator(3, 3)).is_err());
    }

    #[test]
    fn act_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rep = Representation::random(Field::Complex, 3, &mut rng);
        assert_eq!(rep.act(&FreeAutomorphism::identity(3)).unwrap(), rep);
        let swap = FreeAutomorphism::transposition(3, 1, 2);
        let s = rep.act(&swap).unwrap();
        assert_eq!(s.images()[0], rep.images()[1]);
        assert_eq!(s.images()[1], rep.images()[0]);
        for a in nielsen_generators(3).unwrap() {
            let back = rep.act(&a.inverse()).unwrap().act(&a).unwrap();
            assert!(back.distance(&rep) < 1e-10);
        }
    }

    #[test]
    fn h3_examples() {
        let p = H3Point::new(C64::new(0.3, -1.0), 0.7).unwrap();
        assert_eq!(h3_distance(&p, &p), 0.0);
        let e = std::f64::consts::E;
        let d = h3_distance(&H3Point::basepoint(), &H3Point::new(ZERO, e).unwrap());
        assert!((d - 1.0).abs() < 1e-15);
        let s = r(e.sqrt(), 0.0, 0.0, 1.0 / e.sqrt());
        let q = s.mobius_act(&H3Point::basepoint());
        assert!(q.z.norm() < 1e-15 && (q.t - e).abs() < 1e-14);
        assert!(H3Point::new(ZERO, 0.0).is_err());
        assert!(H3Point::new(ZERO, -1.0).is_err());
    }

    #[test]
    fn su2_fixes_basepoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let g = GroupElement::random(Field::Unitary, &mut rng);
            let q = g.mobius_act(&H3Point::basepoint());
            assert!(h3_distance(&q, &H3Point::basepoint()) < 1e-7);
        }
    }

    #[test]
    fn displacement_approaches_translation_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for field in [Field::Real, Field::Complex] {
            for _ in 0..20 {
                let g = GroupElement::random(field, &mut rng);
                let ell = g.translation_length(&tol());
                let mut best = f64::INFINITY;
                for _ in 0..4000 {
                    let z = C64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                    let p = H3Point::new(z, rng.random_range(0.05..4.0)).unwrap();
                    let d = h3_distance(&p, &g.mobius_act(&p));
                    assert!(d >= ell - 1e-9);
                    best = best.min(d);
                }
                // the sampled infimum is within sampling resolution of ℓ
                assert!(best - ell < 1.5, "field {field}: best {best}, ell {ell}");
            }
        }
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for field in [Field::Real, Field::Complex, Field::Unitary] {
            let rep = Representation::random(field, 3, &mut rng);
            let text = serde_json::to_string(&rep).unwrap();
            let back: Representation = serde_json::from_str(&text).unwrap();
            assert_eq!(back, rep);
            let g: GroupElement = serde_json::from_str(&serde_json::to_string(&rep.images()[0]).unwrap()).unwrap();
            assert_eq!(g, rep.images()[0]);
        }
        let text = serde_json::to_string(&r(1.0, 2.0, 0.0, 1.0).to_json()).unwrap();
        assert!(text.contains("1.0000000000000000e"), "{text}");
    }

    #[test]
    fn rational_gap_examples() {
        let (gap, q) = rational_gap(PI / 3.0, 64);
        assert!(gap < 1e-15 && q == 3);
        assert!(rational_gap(1.0, 64).0 > 1e-6);
    }

    fn arb_field() -> impl Strategy<Value = Field> {
        prop_oneof![Just(Field::Real), Just(Field::Complex), Just(Field::Unitary)]
    }

    proptest! {
        #[test]
        fn translation_length_identities(seed in any::<u64>(), field in arb_field(), k in 1i64..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = GroupElement::random(field, &mut rng);
            let h = GroupElement::random(field, &mut rng);
            let t = tol();
            let ell = g.translation_length(&t);
            prop_assert!((g.conjugate_by(&h).translation_length(&t) - ell).abs() < 1e-9);
            prop_assert!((g.pow(k).translation_length(&t) - k as f64 * ell).abs() < 1e-8);
            prop_assert!((g.translation_length_acosh() - ell).abs() < 1e-8);
        }

        #[test]
        fn mobius_is_an_isometry(seed in any::<u64>(), field in arb_field()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = GroupElement::random(field, &mut rng);
            let p = H3Point::new(C64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)), rng.random_range(0.1..3.0)).unwrap();
            let q = H3Point::new(C64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)), rng.random_range(0.1..3.0)).unwrap();
            prop_assert!((h3_distance(&g.mobius_act(&p), &g.mobius_act(&q)) - h3_distance(&p, &q)).abs() < 1e-9);
        }

        #[test]
        fn mobius_is_an_action(seed in any::<u64>(), field in arb_field()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = GroupElement::random(field, &mut rng);
            let h = GroupElement::random(field, &mut rng);
            let p = H3Point::new(C64::new(0.2, 0.1), 0.9).unwrap();
            let lhs = g.mul(&h).mobius_act(&p);
            let rhs = g.mobius_act(&h.mobius_act(&p));
            prop_assert!(h3_distance(&lhs, &rhs) < 1e-8);
        }

        #[test]
        fn metric_axioms(a in -2.0f64..2.0, b in -2.0f64..2.0, t1 in 0.1f64..3.0, c in -2.0f64..2.0, t2 in 0.1f64..3.0, t3 in 0.1f64..3.0) {
            let p = H3Point::new(C64::new(a, b), t1).unwrap();
            let q = H3Point::new(C64::new(c, a), t2).unwrap();
            let s = H3Point::new(C64::new(b, c), t3).unwrap();
            prop_assert!(h3_distance(&p, &q) >= 0.0);
            prop_assert!((h3_distance(&p, &q) - h3_distance(&q, &p)).abs() < 1e-12);
            prop_assert!(h3_distance(&p, &s) <= h3_distance(&p, &q) + h3_distance(&q, &s) + 1e-12);
        }

        #[test]
        fn evaluate_is_multiplicative(seed in any::<u64>(), u in prop::collection::vec(-3i32..=3, 0..8), v in prop::collection::vec(-3i32..=3, 0..8)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rep = Representation::random(Field::Complex, 3, &mut rng);
            let mk = |s: &[i32]| Word::from_signed(3, &s.iter().copied().filter(|&x| x != 0).collect::<Vec<_>>()).unwrap();
            let (u, v) = (mk(&u), mk(&v));
            let lhs = rep.evaluate(&u.mul(&v)).unwrap();
            let rhs = rep.evaluate(&u).unwrap().mul(&rep.evaluate(&v).unwrap());
            prop_assert!(lhs.distance(&rhs) < 1e-9 * (1.0 + lhs.max_abs_entry()));
        }

        #[test]
        fn act_is_a_left_action(seed in any::<u64>(), i in 0usize..30, j in 0usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rep = Representation::random(Field::Real, 3, &mut rng);
            let gens = nielsen_generators(3).unwrap();
            let (a, b) = (&gens[i], &gens[j]);
            let lhs = rep.act(&a.compose(b).unwrap()).unwrap();
            let rhs = rep.act(b).unwrap().act(a).unwrap();
            prop_assert!(lhs.distance(&rhs) < 1e-10);
        }
    }
}
