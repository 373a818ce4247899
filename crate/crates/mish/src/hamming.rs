//! Packed binary hash codes, Hamming distance, and substring extraction.
//!
//! A code of `n` bits stores logical values in `{-1, +1}`: a set storage bit
//! means `+1`, a clear bit means `-1`. Codes span `ceil(n/64)` little-endian
//! words; padding bits in the last word are always zero, so XOR/popcount
//! distances need no masking.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};

const CODE_FILE_MAGIC: &[u8; 4] = b"MIHC";
const CODE_FILE_VERSION: u8 = 1;

/// A packed `n`-bit hash code. Bit `i` lives at bit `i % 64` of word `i / 64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    n: u16,
    words: Vec<u64>,
}

#[inline]
pub(crate) fn words_per_code(n: usize) -> usize {
    n.div_ceil(64)
}

#[inline]
fn padding_mask(n: usize) -> u64 {
    let rem = n % 64;
    if rem == 0 {
        u64::MAX
    } else {
        (1u64 << rem) - 1
    }
}

impl HashCode {
    /// All bits `-1` (all storage bits clear).
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1 && n <= u16::MAX as usize, "code length out of range");
        HashCode {
            n: n as u16,
            words: vec![0; words_per_code(n)],
        }
    }

    /// Builds a code from raw words; padding bits are cleared.
    pub fn from_words(n: usize, mut words: Vec<u64>) -> Self {
        assert_eq!(words.len(), words_per_code(n), "word count mismatch");
        if let Some(last) = words.last_mut() {
            *last &= padding_mask(n);
        }
        HashCode { n: n as u16, words }
    }

    /// Builds a code from real-valued signs: `+1` iff `v[i] > 0`.
    pub fn from_signs(signs: &[f64]) -> Self {
        let mut code = HashCode::zeros(signs.len());
        for (i, &v) in signs.iter().enumerate() {
            if v > 0.0 {
                code.set(i, true);
            }
        }
        code
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let words = (0..words_per_code(n)).map(|_| rng.gen::<u64>()).collect();
        HashCode::from_words(n, words)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n as usize
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Logical bit `i`: `true` encodes `+1`.
    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.n(), "bit index {i} out of range");
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.n(), "bit index {i} out of range");
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    /// The code as a `±1` real vector.
    pub fn to_signs(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| if self.get(i) { 1.0 } else { -1.0 })
            .collect()
    }
}

/// Hamming distance: the number of differing bits, computed word-wise as the
/// population count of XOR.
///
/// Panics if the codes have different lengths.
#[inline]
pub fn hamming_distance(a: &HashCode, b: &HashCode) -> u32 {
    assert_eq!(a.n, b.n, "hamming_distance on codes of different length");
    hamming_distance_words(&a.words, &b.words)
}

#[inline]
pub(crate) fn hamming_distance_words(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Differentiable Hamming surrogate: `(n - <a, b>) / 2`.
///
/// Exact on `±1` inputs, where it equals [`hamming_distance`].
pub fn surrogate_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "surrogate_distance on unequal lengths");
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    (a.len() as f64 - dot) / 2.0
}

/// Partition of `n` bit positions into `m` disjoint substrings of
/// `chunk_len = n / m` bits each.
///
/// `assignment` is a permutation of `0..n`: substring `i` holds the original
/// bit positions `assignment[i * chunk_len .. (i + 1) * chunk_len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstringLayout {
    n: usize,
    m: usize,
    chunk_len: usize,
    assignment: Vec<u32>,
}

impl SubstringLayout {
    /// The default layout: contiguous chunks in bit order.
    pub fn contiguous(n: usize, m: usize) -> Self {
        SubstringLayout::from_permutation(n, m, (0..n as u32).collect())
            .expect("contiguous layout is always valid")
    }

    pub fn from_permutation(n: usize, m: usize, assignment: Vec<u32>) -> Result<Self> {
        if n == 0 || m == 0 || n % m != 0 {
            return Err(Error::Layout(format!(
                "n = {n} must be a positive multiple of m = {m}"
            )));
        }
        let chunk_len = n / m;
        if chunk_len > 32 {
            return Err(Error::Layout(format!(
                "substring length {chunk_len} exceeds 32 bits"
            )));
        }
        if assignment.len() != n {
            return Err(Error::Layout(format!(
                "permutation has {} entries, expected {n}",
                assignment.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in &assignment {
            let p = p as usize;
            if p >= n || seen[p] {
                return Err(Error::Layout(format!(
                    "assignment is not a permutation of 0..{n}"
                )));
            }
            seen[p] = true;
        }
        Ok(SubstringLayout {
            n,
            m,
            chunk_len,
            assignment,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    /// Original bit positions held by substring `i`.
    pub fn positions(&self, i: usize) -> &[u32] {
        assert!(i < self.m, "substring index {i} out of range");
        &self.assignment[i * self.chunk_len..(i + 1) * self.chunk_len]
    }

    /// True if the layout is the identity on contiguous chunks.
    pub fn is_contiguous(&self) -> bool {
        self.assignment.iter().enumerate().all(|(i, &p)| i == p as usize)
    }

    /// Text form: first line `n m`, second line the permutation.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.n, self.m)?;
        let perm: Vec<String> = self.assignment.iter().map(|p| p.to_string()).collect();
        writeln!(w, "{}", perm.join(" "))?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut nums = text.split_whitespace().map(|t| {
            t.parse::<u32>()
                .map_err(|_| Error::Format(format!("layout file: bad integer {t:?}")))
        });
        let n = nums
            .next()
            .ok_or_else(|| Error::Format("layout file: missing n".into()))?? as usize;
        let m = nums
            .next()
            .ok_or_else(|| Error::Format("layout file: missing m".into()))?? as usize;
        let perm: Vec<u32> = nums.collect::<Result<_>>()?;
        SubstringLayout::from_permutation(n, m, perm)
    }
}

/// Integer key of substring `i` of `code` under `layout`: bit `j` of the key
/// is the code bit at the layout position for slot `j`.
pub fn extract_substring(code: &HashCode, layout: &SubstringLayout, i: usize) -> u32 {
    assert_eq!(code.n(), layout.n(), "code length does not match layout");
    let mut key = 0u32;
    for (j, &pos) in layout.positions(i).iter().enumerate() {
        if code.get(pos as usize) {
            key |= 1 << j;
        }
    }
    key
}

/// A collection of equal-length codes in contiguous storage, indexed by
/// document id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSet {
    n: u16,
    wpc: usize,
    words: Vec<u64>,
    len: usize,
}

impl CodeSet {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1 && n <= u16::MAX as usize, "code length out of range");
        CodeSet {
            n: n as u16,
            wpc: words_per_code(n),
            words: Vec::new(),
            len: 0,
        }
    }

    pub fn push(&mut self, code: &HashCode) {
        assert_eq!(
            code.n(),
            self.n as usize,
            "mixed code lengths in one collection"
        );
        self.words.extend_from_slice(code.words());
        self.len += 1;
    }

    pub fn from_codes<'a>(n: usize, codes: impl IntoIterator<Item = &'a HashCode>) -> Self {
        let mut set = CodeSet::new(n);
        for c in codes {
            set.push(c);
        }
        set
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n as usize
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn code_words(&self, id: usize) -> &[u64] {
        &self.words[id * self.wpc..(id + 1) * self.wpc]
    }

    pub fn code(&self, id: usize) -> HashCode {
        HashCode::from_words(self.n(), self.code_words(id).to_vec())
    }

    pub fn iter(&self) -> impl Iterator<Item = HashCode> + '_ {
        (0..self.len).map(|i| self.code(i))
    }

    /// Distance from a query code to the code at `id`.
    #[inline]
    pub fn distance_to(&self, q: &HashCode, id: usize) -> u32 {
        debug_assert_eq!(q.n(), self.n());
        hamming_distance_words(q.words(), self.code_words(id))
    }

    pub fn random<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Self {
        let mut set = CodeSet::new(n);
        for _ in 0..count {
            set.push(&HashCode::random(n, rng));
        }
        set
    }

    /// Binary code file: header `{magic "MIHC", version u8, n u16, count u64}`
    /// little-endian, then `count` codes of `ceil(n/64)` words each.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CODE_FILE_MAGIC)?;
        w.write_all(&[CODE_FILE_VERSION])?;
        w.write_all(&self.n.to_le_bytes())?;
        w.write_all(&(self.len as u64).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CODE_FILE_MAGIC {
            return Err(Error::Format("not a code file (bad magic)".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != CODE_FILE_VERSION {
            return Err(Error::Format(format!(
                "unsupported code file version {}",
                version[0]
            )));
        }
        let mut n_bytes = [0u8; 2];
        r.read_exact(&mut n_bytes)?;
        let n = u16::from_le_bytes(n_bytes);
        if n == 0 {
            return Err(Error::Format("code file with n = 0".into()));
        }
        let mut count_bytes = [0u8; 8];
        r.read_exact(&mut count_bytes)?;
        let count = u64::from_le_bytes(count_bytes) as usize;
        let wpc = words_per_code(n as usize);
        let mut words = vec![0u64; count * wpc];
        let mut buf = [0u8; 8];
        for word in words.iter_mut() {
            r.read_exact(&mut buf)?;
            *word = u64::from_le_bytes(buf);
        }
        let mask = padding_mask(n as usize);
        for i in 0..count {
            if words[i * wpc + wpc - 1] & !mask != 0 {
                return Err(Error::Format(format!("code {i} has nonzero padding bits")));
            }
        }
        Ok(CodeSet {
            n,
            wpc,
            words,
            len: count,
        })
    }
}
