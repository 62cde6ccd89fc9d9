//! Words in a free group of finite rank and automorphisms acting on them.
//!
//! A [`Word`] is always stored freely reduced. Generators are numbered from
//! 1, and the text syntax is whitespace-separated tokens `x3` and `x3^-1`,
//! with `1` standing for the empty word.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FreeGroupError {
    #[error("generator index {index} outside 1..={rank}")]
    IndexOutOfRange { index: usize, rank: usize },
    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("rank must be at least {min}, got {rank}")]
    RankTooSmall { rank: usize, min: usize },
    #[error("cannot parse token `{token}` in word `{text}`")]
    Parse { text: String, token: String },
    #[error("images do not define an automorphism: {0}")]
    NotInvertible(String),
}

/// A generator or inverse generator, `x_i^{±1}`.
///
/// Letters are totally ordered by `x1 < x1^-1 < x2 < x2^-1 < ...`; this is
/// the order used for canonical conjugacy representatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter(u8);

impl Letter {
    /// `x_index` (or its inverse). `index` is 1-based.
    pub fn new(index: usize, inverse: bool) -> Letter {
        assert!((1..=128).contains(&index), "generator index {index} unsupported");
        Letter((2 * (index - 1) + usize::from(inverse)) as u8)
    }

    pub fn generator(index: usize) -> Letter {
        Letter::new(index, false)
    }

    /// Letter with the given position in the ordering above.
    pub fn from_code(code: usize) -> Letter {
        assert!(code < 256);
        Letter(code as u8)
    }

    pub fn code(self) -> usize {
        self.0 as usize
    }

    pub fn index(self) -> usize {
        (self.0 >> 1) as usize + 1
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    pub fn sign(self) -> i64 {
        if self.is_inverse() {
            -1
        } else {
            1
        }
    }

    pub fn inverse(self) -> Letter {
        Letter(self.0 ^ 1)
    }

    /// Letter from a signed index: `3` is `x3`, `-3` is `x3^-1`.
    pub fn from_signed(signed: i32) -> Letter {
        assert!(signed != 0, "signed letter index must be nonzero");
        Letter::new(signed.unsigned_abs() as usize, signed < 0)
    }

    /// All `2 * rank` letters in order.
    pub fn all(rank: usize) -> impl Iterator<Item = Letter> {
        (0..2 * rank).map(Letter::from_code)
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_inverse() {
            write!(f, "x{}^-1", self.index())
        } else {
            write!(f, "x{}", self.index())
        }
    }
}

/// A freely reduced word in the free group of rank `rank`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    rank: usize,
    letters: Vec<Letter>,
}

/// Freely reduces a raw letter sequence.
pub fn reduce(rank: usize, letters: impl IntoIterator<Item = Letter>) -> Result<Word, FreeGroupError> {
    let mut out: Vec<Letter> = Vec::new();
    for l in letters {
        if l.index() > rank {
            return Err(FreeGroupError::IndexOutOfRange { index: l.index(), rank });
        }
        push_reduced(&mut out, l);
    }
    Ok(Word { rank, letters: out })
}

#[inline]
fn push_reduced(buf: &mut Vec<Letter>, l: Letter) {
    if buf.last() == Some(&l.inverse()) {
        buf.pop();
    } else {
        buf.push(l);
    }
}

impl Word {
    pub fn identity(rank: usize) -> Word {
        Word { rank, letters: Vec::new() }
    }

    pub fn generator(rank: usize, index: usize) -> Word {
        assert!(index >= 1 && index <= rank, "generator x{index} not in rank {rank}");
        Word { rank, letters: vec![Letter::generator(index)] }
    }

    pub fn letter(rank: usize, l: Letter) -> Word {
        assert!(l.index() <= rank);
        Word { rank, letters: vec![l] }
    }

    /// Builds a word from signed generator indices, reducing as it goes.
    pub fn from_signed(rank: usize, signed: &[i32]) -> Result<Word, FreeGroupError> {
        reduce(rank, signed.iter().map(|&s| Letter::from_signed(s)))
    }

    /// Parses the `x1 x2^-1` syntax. The result is reduced.
    pub fn parse(text: &str, rank: usize) -> Result<Word, FreeGroupError> {
        let mut letters = Vec::new();
        let bad = |token: &str| FreeGroupError::Parse { text: text.to_string(), token: token.to_string() };
        for token in text.split_whitespace() {
            if token == "1" {
                continue;
            }
            let body = token.strip_prefix('x').ok_or_else(|| bad(token))?;
            let (digits, inverse) = match body.strip_suffix("^-1") {
                Some(d) => (d, true),
                None => (body, false),
            };
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad(token));
            }
            let index: usize = digits.parse().map_err(|_| bad(token))?;
            if index == 0 || index > 128 {
                return Err(bad(token));
            }
            letters.push(Letter::new(index, inverse));
        }
        reduce(rank, letters)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn inverse(&self) -> Word {
        Word { rank: self.rank, letters: self.letters.iter().rev().map(|l| l.inverse()).collect() }
    }

    /// Reduced product `self · other`.
    pub fn mul(&self, other: &Word) -> Word {
        assert_eq!(self.rank, other.rank, "multiplying words of different rank");
        let mut letters = self.letters.clone();
        for &l in &other.letters {
            push_reduced(&mut letters, l);
        }
        Word { rank: self.rank, letters }
    }

    /// Reduced product with a single letter appended.
    pub fn mul_letter(&self, l: Letter) -> Word {
        let mut letters = self.letters.clone();
        push_reduced(&mut letters, l);
        Word { rank: self.rank, letters }
    }

    pub fn pow(&self, k: i64) -> Word {
        let base = if k < 0 { self.inverse() } else { self.clone() };
        let mut out = Word::identity(self.rank);
        for _ in 0..k.unsigned_abs() {
            out = out.mul(&base);
        }
        out
    }

    /// `u · self · u⁻¹`.
    pub fn conjugate_by(&self, u: &Word) -> Word {
        u.mul(self).mul(&u.inverse())
    }

    /// `[a, b] = a b a⁻¹ b⁻¹`.
    pub fn commutator(a: &Word, b: &Word) -> Word {
        a.mul(b).mul(&a.inverse()).mul(&b.inverse())
    }

    pub fn is_cyclically_reduced(&self) -> bool {
        match (self.letters.first(), self.letters.last()) {
            (Some(&f), Some(&l)) => self.letters.len() == 1 || f != l.inverse(),
            _ => true,
        }
    }

    /// Splits `self = conjugator · core · conjugator⁻¹` with `core`
    /// cyclically reduced.
    pub fn cyclic_reduce(&self) -> (Word, Word) {
        let n = self.letters.len();
        let mut k = 0;
        while 2 * k + 1 < n && self.letters[k] == self.letters[n - 1 - k].inverse() {
            k += 1;
        }
        let core = Word { rank: self.rank, letters: self.letters[k..n - k].to_vec() };
        let conjugator = Word { rank: self.rank, letters: self.letters[..k].to_vec() };
        (core, conjugator)
    }

    pub fn cyclic_core(&self) -> Word {
        self.cyclic_reduce().0
    }

    /// Length of a cyclically reduced representative of the conjugacy class.
    pub fn cyclic_length(&self) -> usize {
        let n = self.letters.len();
        let mut k = 0;
        while 2 * k + 1 < n && self.letters[k] == self.letters[n - 1 - k].inverse() {
            k += 1;
        }
        n - 2 * k
    }

    /// Image in the abelianization ℤⁿ.
    pub fn exponent_sums(&self) -> Vec<i64> {
        let mut v = vec![0i64; self.rank];
        for l in &self.letters {
            v[l.index() - 1] += l.sign();
        }
        v
    }

    /// Generators (1-based) that occur in the word.
    pub fn support(&self) -> Vec<usize> {
        let mut seen = vec![false; self.rank];
        for l in &self.letters {
            seen[l.index() - 1] = true;
        }
        (1..=self.rank).filter(|&i| seen[i - 1]).collect()
    }

    /// The same letters viewed in a free group of larger rank.
    pub fn with_rank(&self, rank: usize) -> Result<Word, FreeGroupError> {
        reduce(rank, self.letters.iter().copied())
    }

    /// Rotation of a cyclically reduced word starting at position `start`.
    pub fn rotate(&self, start: usize) -> Word {
        let n = self.letters.len();
        if n == 0 {
            return self.clone();
        }
        let s = start % n;
        let mut letters = Vec::with_capacity(n);
        letters.extend_from_slice(&self.letters[s..]);
        letters.extend_from_slice(&self.letters[..s]);
        Word { rank: self.rank, letters }
    }

    pub fn check_rank(&self, rank: usize) -> Result<(), FreeGroupError> {
        if self.rank == rank {
            Ok(())
        } else {
            Err(FreeGroupError::RankMismatch { expected: rank, found: self.rank })
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return f.write_str("1");
        }
        for (i, l) in self.letters.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A conjugacy class of `F_n` modulo inversion, keyed by its canonical
/// representative: the lexicographically least rotation of the cyclically
/// reduced word or of its inverse.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConjClass {
    canonical: Word,
}

impl ConjClass {
    pub fn of(w: &Word) -> ConjClass {
        let core = w.cyclic_core();
        let n = core.len();
        if n == 0 {
            return ConjClass { canonical: core };
        }
        let inv = core.inverse();
        let mut best: Vec<Letter> = core.letters.clone();
        let mut scratch: Vec<Letter> = Vec::with_capacity(n);
        for src in [&core, &inv] {
            for s in 0..n {
                scratch.clear();
                scratch.extend_from_slice(&src.letters[s..]);
                scratch.extend_from_slice(&src.letters[..s]);
                if scratch < best {
                    best.clone_from(&scratch);
                }
            }
        }
        ConjClass { canonical: Word { rank: w.rank, letters: best } }
    }

    pub fn canonical(&self) -> &Word {
        &self.canonical
    }

    /// Cyclic length `||c||`.
    pub fn length(&self) -> usize {
        self.canonical.len()
    }
}

impl Ord for ConjClass {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical
            .len()
            .cmp(&other.canonical.len())
            .then_with(|| self.canonical.letters.cmp(&other.canonical.letters))
            .then_with(|| self.canonical.rank.cmp(&other.canonical.rank))
    }
}

impl PartialOrd for ConjClass {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ConjClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.canonical)
    }
}

impl Serialize for ConjClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&self.canonical)
    }
}

/// An automorphism of `F_n` given by the images of the generators together
/// with the images under its inverse. The pair is checked to be mutually
/// inverse whenever it is built.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FreeAutomorphism {
    rank: usize,
    images: Vec<Word>,
    inverse_images: Vec<Word>,
}

fn substitute(images: &[Word], rank: usize, w: &Word) -> Word {
    let mut letters: Vec<Letter> = Vec::with_capacity(w.len() * 2);
    for &l in &w.letters {
        let img = &images[l.index() - 1];
        if l.is_inverse() {
            for &m in img.letters.iter().rev() {
                push_reduced(&mut letters, m.inverse());
            }
        } else {
            for &m in &img.letters {
                push_reduced(&mut letters, m);
            }
        }
    }
    Word { rank, letters }
}

impl FreeAutomorphism {
    /// Builds an automorphism, verifying that `images` and `inverse_images`
    /// compose to the identity in both orders.
    pub fn new(images: Vec<Word>, inverse_images: Vec<Word>) -> Result<FreeAutomorphism, FreeGroupError> {
        let rank = images.len();
        if inverse_images.len() != rank {
            return Err(FreeGroupError::RankMismatch { expected: rank, found: inverse_images.len() });
        }
        for w in images.iter().chain(&inverse_images) {
            w.check_rank(rank)?;
        }
        let a = FreeAutomorphism { rank, images, inverse_images };
        a.verify()?;
        Ok(a)
    }

    fn verify(&self) -> Result<(), FreeGroupError> {
        for i in 1..=self.rank {
            let x = Word::generator(self.rank, i);
            if substitute(&self.images, self.rank, &substitute(&self.inverse_images, self.rank, &x)) != x
                || substitute(&self.inverse_images, self.rank, &substitute(&self.images, self.rank, &x)) != x
            {
                return Err(FreeGroupError::NotInvertible(format!("generator x{i}")));
            }
        }
        Ok(())
    }

    pub fn identity(rank: usize) -> FreeAutomorphism {
        let gens: Vec<Word> = (1..=rank).map(|i| Word::generator(rank, i)).collect();
        FreeAutomorphism { rank, images: gens.clone(), inverse_images: gens }
    }

    /// Swaps `x_i` and `x_j`.
    pub fn transposition(rank: usize, i: usize, j: usize) -> FreeAutomorphism {
        let mut images: Vec<Word> = (1..=rank).map(|k| Word::generator(rank, k)).collect();
        images.swap(i - 1, j - 1);
        FreeAutomorphism { rank, inverse_images: images.clone(), images }
    }

    /// `x_i ↦ x_i⁻¹`.
    pub fn inversion(rank: usize, i: usize) -> FreeAutomorphism {
        let mut images: Vec<Word> = (1..=rank).map(|k| Word::generator(rank, k)).collect();
        images[i - 1] = images[i - 1].inverse();
        FreeAutomorphism { rank, inverse_images: images.clone(), images }
    }

    /// `x_i ↦ x_i · y` for a letter `y` of a different generator.
    pub fn right_multiply(rank: usize, i: usize, y: Letter) -> FreeAutomorphism {
        assert_ne!(y.index(), i, "Nielsen multiplier must be another generator");
        let x = Word::generator(rank, i);
        let mut images: Vec<Word> = (1..=rank).map(|k| Word::generator(rank, k)).collect();
        let mut inverse_images = images.clone();
        images[i - 1] = x.mul_letter(y);
        inverse_images[i - 1] = x.mul_letter(y.inverse());
        FreeAutomorphism { rank, images, inverse_images }
    }

    /// `x_i ↦ y · x_i` for a letter `y` of a different generator.
    pub fn left_multiply(rank: usize, i: usize, y: Letter) -> FreeAutomorphism {
        assert_ne!(y.index(), i, "Nielsen multiplier must be another generator");
        let x = Word::generator(rank, i);
        let mut images: Vec<Word> = (1..=rank).map(|k| Word::generator(rank, k)).collect();
        let mut inverse_images = images.clone();
        images[i - 1] = Word::letter(rank, y).mul(&x);
        inverse_images[i - 1] = Word::letter(rank, y.inverse()).mul(&x);
        FreeAutomorphism { rank, images, inverse_images }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn images(&self) -> &[Word] {
        &self.images
    }

    pub fn inverse_images(&self) -> &[Word] {
        &self.inverse_images
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(k, w)| w.letters == [Letter::generator(k + 1)])
    }

    pub fn inverse(&self) -> FreeAutomorphism {
        FreeAutomorphism { rank: self.rank, images: self.inverse_images.clone(), inverse_images: self.images.clone() }
    }

    /// Image of `w`, reduced.
    pub fn apply(&self, w: &Word) -> Result<Word, FreeGroupError> {
        w.check_rank(self.rank)?;
        Ok(substitute(&self.images, self.rank, w))
    }

    /// Image of `w` under the inverse automorphism.
    pub fn apply_inverse(&self, w: &Word) -> Result<Word, FreeGroupError> {
        w.check_rank(self.rank)?;
        Ok(substitute(&self.inverse_images, self.rank, w))
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &FreeAutomorphism) -> Result<FreeAutomorphism, FreeGroupError> {
        if self.rank != other.rank {
            return Err(FreeGroupError::RankMismatch { expected: self.rank, found: other.rank });
        }
        let images = other.images.iter().map(|w| substitute(&self.images, self.rank, w)).collect();
        let inverse_images =
            self.inverse_images.iter().map(|w| substitute(&other.inverse_images, self.rank, w)).collect();
        let a = FreeAutomorphism { rank: self.rank, images, inverse_images };
        debug_assert!(a.verify().is_ok());
        Ok(a)
    }
}

impl fmt::Display for FreeAutomorphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, w) in self.images.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "x{} -> {}", k + 1, w)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct AutomorphismRepr {
    rank: usize,
    images: Vec<String>,
    inverse_images: Vec<String>,
}

impl Serialize for FreeAutomorphism {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        AutomorphismRepr {
            rank: self.rank,
            images: self.images.iter().map(|w| w.to_string()).collect(),
            inverse_images: self.inverse_images.iter().map(|w| w.to_string()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FreeAutomorphism {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = AutomorphismRepr::deserialize(d)?;
        let parse = |v: &[String]| -> Result<Vec<Word>, FreeGroupError> {
            v.iter().map(|t| Word::parse(t, r.rank)).collect()
        };
        let images = parse(&r.images).map_err(serde::de::Error::custom)?;
        let inverse_images = parse(&r.inverse_images).map_err(serde::de::Error::custom)?;
        if images.len() != r.rank {
            return Err(serde::de::Error::custom("image count differs from rank"));
        }
        FreeAutomorphism::new(images, inverse_images).map_err(serde::de::Error::custom)
    }
}

/// The standard finite generating set of `Aut(F_n)`: transpositions,
/// single-generator inversions, and the `4n(n-1)` left and right
/// multiplications `x_i ↦ x_i x_j^{±1}`, `x_i ↦ x_j^{±1} x_i`.
pub fn nielsen_generators(n: usize) -> Result<Vec<FreeAutomorphism>, FreeGroupError> {
    if n < 2 {
        return Err(FreeGroupError::RankTooSmall { rank: n, min: 2 });
    }
    let mut out = Vec::with_capacity(n * (n - 1) / 2 + n + 4 * n * (n - 1));
    for i in 1..=n {
        for j in i + 1..=n {
            out.push(FreeAutomorphism::transposition(n, i, j));
        }
    }
    for i in 1..=n {
        out.push(FreeAutomorphism::inversion(n, i));
    }
    for i in 1..=n {
        for j in 1..=n {
            if i == j {
                continue;
            }
            for inv in [false, true] {
                let y = Letter::new(j, inv);
                out.push(FreeAutomorphism::right_multiply(n, i, y));
                out.push(FreeAutomorphism::left_multiply(n, i, y));
            }
        }
    }
    Ok(out)
}

/// Description of a Whitehead automorphism.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WhiteheadMove {
    /// First kind: `x_i ↦ x_{perm[i]}^{±1}` (1-based targets).
    Permutation { perm: Vec<usize>, inverted: Vec<bool> },
    /// Second kind, `(A, a)`: each generator `x ≠ a^{±1}` becomes
    /// `a^{-[x⁻¹ ∈ A]} · x · a^{[x ∈ A]}`. `subset` lists `A \ {a}` by letter
    /// code.
    Multiplier { multiplier: usize, subset: Vec<usize> },
}

impl WhiteheadMove {
    pub fn to_automorphism(&self, rank: usize) -> Result<FreeAutomorphism, FreeGroupError> {
        match self {
            WhiteheadMove::Permutation { perm, inverted } => {
                if perm.len() != rank || inverted.len() != rank {
                    return Err(FreeGroupError::RankMismatch { expected: rank, found: perm.len() });
                }
                let images = perm
                    .iter()
                    .zip(inverted)
                    .map(|(&p, &inv)| {
                        if p == 0 || p > rank {
                            return Err(FreeGroupError::IndexOutOfRange { index: p, rank });
                        }
                        Ok(Word::letter(rank, Letter::new(p, inv)))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let mut inverse_images = vec![Word::identity(rank); rank];
                for (i, (&p, &inv)) in perm.iter().zip(inverted).enumerate() {
                    inverse_images[p - 1] = Word::letter(rank, Letter::new(i + 1, inv));
                }
                FreeAutomorphism::new(images, inverse_images)
            }
            WhiteheadMove::Multiplier { multiplier, subset } => {
                let a = Letter::from_code(*multiplier);
                if a.index() > rank {
                    return Err(FreeGroupError::IndexOutOfRange { index: a.index(), rank });
                }
                let mut member = vec![false; 2 * rank];
                for &c in subset {
                    if c >= 2 * rank || Letter::from_code(c).index() == a.index() {
                        return Err(FreeGroupError::NotInvertible(format!("bad subset letter code {c}")));
                    }
                    member[c] = true;
                }
                let build = |a: Letter, member: &[bool]| -> Vec<Word> {
                    (1..=rank)
                        .map(|i| {
                            let x = Letter::generator(i);
                            if i == a.index() {
                                return Word::letter(rank, x);
                            }
                            let mut letters = Vec::with_capacity(3);
                            if member[x.inverse().code()] {
                                letters.push(a.inverse());
                            }
                            letters.push(x);
                            if member[x.code()] {
                                letters.push(a);
                            }
                            Word { rank, letters }
                        })
                        .collect()
                };
                // (A, a)⁻¹ = (A - a + a⁻¹, a⁻¹)
                let images = build(a, &member);
                let inverse_images = build(a.inverse(), &member);
                FreeAutomorphism::new(images, inverse_images)
            }
        }
    }
}

impl fmt::Display for WhiteheadMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WhiteheadMove::Permutation { perm, inverted } => {
                f.write_str("perm(")?;
                for (i, (&p, &inv)) in perm.iter().zip(inverted).enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "x{} -> {}", i + 1, Letter::new(p, inv))?;
                }
                f.write_str(")")
            }
            WhiteheadMove::Multiplier { multiplier, subset } => {
                write!(f, "mult({}; {{", Letter::from_code(*multiplier))?;
                for (i, &c) in subset.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", Letter::from_code(c))?;
                }
                f.write_str("})")
            }
        }
    }
}

/// A Whitehead automorphism with its description.
#[derive(Debug, Clone)]
pub struct WhiteheadAutomorphism {
    pub kind: WhiteheadMove,
    pub automorphism: FreeAutomorphism,
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
    out.sort();
    out
}

/// All nontrivial Whitehead automorphisms of `F_n`, first kind (signed
/// permutations) before second kind. Second-kind moves are ordered by
/// multiplier letter and then by subset bitmask; the trivial subset `{a}` is
/// left out, as is the identity permutation.
pub fn whitehead_automorphisms(n: usize) -> Result<Vec<WhiteheadAutomorphism>, FreeGroupError> {
    if n < 2 {
        return Err(FreeGroupError::RankTooSmall { rank: n, min: 2 });
    }
    let mut out = Vec::new();
    for perm in permutations(n) {
        for signs in 0u32..(1 << n) {
            let inverted: Vec<bool> = (0..n).map(|k| signs >> k & 1 == 1).collect();
            let identity = signs == 0 && perm.iter().enumerate().all(|(k, &p)| p == k + 1);
            if identity {
                continue;
            }
            let kind = WhiteheadMove::Permutation { perm: perm.clone(), inverted };
            let automorphism = kind.to_automorphism(n)?;
            out.push(WhiteheadAutomorphism { kind, automorphism });
        }
    }
    for a in Letter::all(n) {
        let others: Vec<usize> = Letter::all(n).filter(|l| l.index() != a.index()).map(|l| l.code()).collect();
        for mask in 1u64..(1u64 << others.len()) {
            let subset: Vec<usize> =
                others.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &c)| c).collect();
            let kind = WhiteheadMove::Multiplier { multiplier: a.code(), subset };
            let automorphism = kind.to_automorphism(n)?;
            out.push(WhiteheadAutomorphism { kind, automorphism });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(text: &str, rank: usize) -> Word {
        Word::parse(text, rank).unwrap()
    }

    #[test]
    fn reduce_examples() {
        let raw = [1, 2, -2, 1].map(Letter::from_signed);
        assert_eq!(reduce(2, raw).unwrap(), w("x1 x1", 2));
        assert!(reduce(2, []).unwrap().is_empty());
        assert!(reduce(2, [1, -1].map(Letter::from_signed)).unwrap().is_empty());
        assert_eq!(
            reduce(2, [Letter::generator(3)]),
            Err(FreeGroupError::IndexOutOfRange { index: 3, rank: 2 })
        );
    }

    #[test]
    fn cyclic_reduce_examples() {
        let (core, conj) = w("x1 x2 x1^-1", 2).cyclic_reduce();
        assert_eq!((core, conj), (w("x2", 2), w("x1", 2)));
        let (core, conj) = w("x1 x2", 2).cyclic_reduce();
        assert_eq!((core, conj), (w("x1 x2", 2), Word::identity(2)));
        let src = w("x1 x2 x2 x1^-1", 2);
        let (core, conj) = src.cyclic_reduce();
        assert_eq!(core, w("x2 x2", 2));
        assert_eq!(conj, w("x1", 2));
        assert_eq!(core.conjugate_by(&conj), src);
    }

    #[test]
    fn parse_and_print() {
        let word = w("x1 x2^-1 x10", 10);
        assert_eq!(word.to_string(), "x1 x2^-1 x10");
        assert_eq!(Word::identity(3).to_string(), "1");
        assert_eq!(Word::parse("1", 3).unwrap(), Word::identity(3));
        assert_eq!(Word::parse("", 3).unwrap(), Word::identity(3));
        for bad in ["y1", "x", "x0", "x1^2", "x1^-", "x-1", "xx1"] {
            assert!(matches!(Word::parse(bad, 3), Err(FreeGroupError::Parse { .. })), "{bad}");
        }
        assert!(matches!(Word::parse("x4", 3), Err(FreeGroupError::IndexOutOfRange { .. })));
    }

    #[test]
    fn apply_examples() {
        let id = FreeAutomorphism::identity(2);
        assert_eq!(id.apply(&w("x1 x2^-1 x1", 2)).unwrap(), w("x1 x2^-1 x1", 2));
        let a = FreeAutomorphism::right_multiply(2, 1, Letter::generator(2));
        assert_eq!(a.apply(&w("x1", 2)).unwrap(), w("x1 x2", 2));
        assert_eq!(a.apply(&w("x1^-1", 2)).unwrap(), w("x2^-1 x1^-1", 2));
        assert!(a.apply(&w("x1", 3)).is_err());
    }

    #[test]
    fn compose_examples() {
        let a = FreeAutomorphism::right_multiply(2, 1, Letter::generator(2));
        let b = FreeAutomorphism::right_multiply(2, 2, Letter::generator(1));
        assert!(a.compose(&a.inverse()).unwrap().is_identity());
        assert_eq!(FreeAutomorphism::identity(2).compose(&b).unwrap(), b);
        let ab = a.compose(&b).unwrap();
        assert_eq!(ab.images(), &[w("x1 x2", 2), w("x2 x1 x2", 2)]);
        assert!(a.compose(&FreeAutomorphism::identity(3)).is_err());
    }

    #[test]
    fn nonautomorphism_is_rejected() {
        // x1 -> x1^2 is an endomorphism but not onto.
        let r = FreeAutomorphism::new(vec![w("x1 x1", 2), w("x2", 2)], vec![w("x1", 2), w("x2", 2)]);
        assert!(matches!(r, Err(FreeGroupError::NotInvertible(_))));
    }

    #[test]
    fn nielsen_generator_counts() {
        let g2 = nielsen_generators(2).unwrap();
        let target = FreeAutomorphism::right_multiply(2, 1, Letter::generator(2));
        assert!(g2.contains(&target));
        assert!(g2.iter().all(|a| a.verify().is_ok()));
        // 3 transpositions + 3 inversions + 4·3·2 multiplications
        assert_eq!(nielsen_generators(3).unwrap().len(), 30);
        assert!(nielsen_generators(1).is_err());
    }

    #[test]
    fn whitehead_counts_match_subset_enumeration() {
        for n in 2..=3usize {
            let all = whitehead_automorphisms(n).unwrap();
            let second = all.iter().filter(|m| matches!(m.kind, WhiteheadMove::Multiplier { .. })).count();
            // brute force: (a, A) with a ∈ A ⊆ X±, a⁻¹ ∉ A, A ≠ {a}
            let mut brute = 0;
            for a in 0..2 * n {
                for mask in 0u32..(1 << (2 * n)) {
                    let has = |c: usize| mask >> c & 1 == 1;
                    if has(a) && !has(a ^ 1) && mask != 1 << a {
                        brute += 1;
                    }
                }
            }
            assert_eq!(second, brute);
            let factorial: usize = (1..=n).product();
            assert_eq!(all.len() - second, (1 << n) * factorial - 1);
        }
        let target = FreeAutomorphism::right_multiply(2, 1, Letter::generator(2));
        assert!(whitehead_automorphisms(2).unwrap().iter().any(|m| m.automorphism == target
            && matches!(m.kind, WhiteheadMove::Multiplier { .. })));
    }

    #[test]
    fn conj_class_examples() {
        let c = ConjClass::of(&w("x2 x1 x2^-1", 2));
        assert_eq!(c.canonical(), &w("x1", 2));
        assert_eq!(ConjClass::of(&w("x1^-1", 2)).canonical(), &w("x1", 2));
        let comm = ConjClass::of(&w("x2 x1 x2^-1 x1^-1", 2));
        assert_eq!(comm.canonical(), &w("x1 x2 x1^-1 x2^-1", 2));
        assert_eq!(comm.length(), 4);
    }

    #[test]
    fn automorphism_json_roundtrip() {
        let a = FreeAutomorphism::right_multiply(3, 1, Letter::generator(2))
            .compose(&FreeAutomorphism::left_multiply(3, 3, Letter::new(1, true)))
            .unwrap();
        let text = serde_json::to_string(&a).unwrap();
        let back: FreeAutomorphism = serde_json::from_str(&text).unwrap();
        assert_eq!(a, back);
        let broken = text.replace("x1 x2", "x1 x1");
        assert!(serde_json::from_str::<FreeAutomorphism>(&broken).is_err());
    }

    fn arb_letters(rank: usize, max_len: usize) -> impl Strategy<Value = Vec<Letter>> {
        prop::collection::vec((0..2 * rank).prop_map(Letter::from_code), 0..max_len)
    }

    fn arb_auto(rank: usize) -> impl Strategy<Value = FreeAutomorphism> {
        let gens = nielsen_generators(rank).unwrap();
        let m = gens.len();
        prop::collection::vec(0..m, 0..6).prop_map(move |idx| {
            idx.iter().fold(FreeAutomorphism::identity(rank), |acc, &k| acc.compose(&gens[k]).unwrap())
        })
    }

    proptest! {
        #[test]
        fn reduce_is_idempotent(raw in arb_letters(3, 24)) {
            let once = reduce(3, raw).unwrap();
            let twice = reduce(3, once.letters().iter().copied()).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn parse_print_roundtrip(raw in arb_letters(4, 20)) {
            let word = reduce(4, raw).unwrap();
            prop_assert_eq!(Word::parse(&word.to_string(), 4).unwrap(), word);
        }

        #[test]
        fn apply_respects_composition(a in arb_auto(3), b in arb_auto(3), raw in arb_letters(3, 12)) {
            let word = reduce(3, raw).unwrap();
            let lhs = a.compose(&b).unwrap().apply(&word).unwrap();
            let rhs = a.apply(&b.apply(&word).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn apply_is_a_homomorphism(a in arb_auto(3), u in arb_letters(3, 10), v in arb_letters(3, 10)) {
            let u = reduce(3, u).unwrap();
            let v = reduce(3, v).unwrap();
            let lhs = a.apply(&u.mul(&v)).unwrap();
            let rhs = a.apply(&u).unwrap().mul(&a.apply(&v).unwrap());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn canonical_form_is_conjugation_and_inversion_invariant(raw in arb_letters(3, 14), u in arb_letters(3, 8)) {
            let word = reduce(3, raw).unwrap();
            let u = reduce(3, u).unwrap();
            let c = ConjClass::of(&word);
            prop_assert_eq!(&ConjClass::of(&word.conjugate_by(&u)), &c);
            prop_assert_eq!(&ConjClass::of(&word.inverse()), &c);
            prop_assert!(c.canonical().is_cyclically_reduced());
        }

        #[test]
        fn cyclic_length_is_a_class_function(a in arb_auto(3), raw in arb_letters(3, 12), u in arb_letters(3, 6)) {
            let word = reduce(3, raw).unwrap();
            let u = reduce(3, u).unwrap();
            let l1 = a.apply(&word).unwrap().cyclic_length();
            let l2 = a.apply(&word.conjugate_by(&u)).unwrap().cyclic_length();
            prop_assert_eq!(l1, l2);
        }

        #[test]
        fn cyclic_reduce_reassembles(raw in arb_letters(3, 16)) {
            let word = reduce(3, raw).unwrap();
            let (core, conj) = word.cyclic_reduce();
            prop_assert!(core.is_cyclically_reduced());
            prop_assert_eq!(core.len(), word.cyclic_length());
            prop_assert_eq!(core.conjugate_by(&conj), word);
        }
    }
}
