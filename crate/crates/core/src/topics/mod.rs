//! Topic space: sparse PPMI co-occurrence matrix, its NMF factorization, topic
//! vectors of utterances and the scaled topic KL divergence.

mod nmf;
mod ppmi;
mod stopwords;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

pub use nmf::{nmf_factorize, NmfConfig, NmfReport, NmfSolver, DEFAULT_ITERS, DEFAULT_RANK, DEFAULT_TOL};
pub use ppmi::{PpmiMatrix, DEFAULT_WINDOW};
pub use stopwords::Stopwords;

use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Smoothing added to both topic vectors before the divergence.
pub const DEFAULT_KL_EPS: f64 = 1e-8;

const TOPIC_MAGIC: &[u8; 4] = b"TPMX";
const TOPIC_VERSION: u32 = 1;

/// Dense word-topic factors `W` (`|V_w| x p`) and `H` (`p x |V_w|`).
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    words: Vec<String>,
    index: HashMap<String, usize>,
    w: Tensor,
    h: Tensor,
}

/// Length-`d_t` topic summary of a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicVector {
    pub values: Vec<f64>,
    pub matched_tokens: usize,
}

impl TopicVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            matched_tokens: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl TopicModel {
    pub fn new(words: Vec<String>, w: Tensor, h: Tensor) -> Result<Self> {
        let n = words.len();
        let p = w.cols();
        if w.rows() != n || h.rows() != p || h.cols() != n {
            return Err(Error::Contract(format!(
                "topic factors {:?} / {:?} do not fit {n} words",
                w.dims(),
                h.dims()
            )));
        }
        if p == 0 || p > n {
            return Err(Error::Contract(format!("topic rank {p} must be in 1..={n}")));
        }
        if w.data().iter().chain(h.data()).any(|&v| !(v >= 0.0)) {
            return Err(Error::Domain("topic factors must be nonnegative".into()));
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Self { words, index, w, h })
    }

    /// Uses the sparse PPMI rows directly as topic vectors (`W = M`, `H = I`).
    pub fn from_ppmi_rows(m: &PpmiMatrix) -> Result<Self> {
        Self::new(m.words().to_vec(), m.to_dense(), Tensor::identity(m.dim()))
    }

    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    pub fn h(&self) -> &Tensor {
        &self.h
    }

    pub fn row(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.w.row_slice(i))
    }

    /// Mean of the `W` rows of the content words present; zero when none match.
    pub fn topic_vector_words<S: AsRef<str>>(&self, words: &[S]) -> TopicVector {
        let mut out = TopicVector::zeros(self.rank());
        for w in words {
            if let Some(row) = self.row(w.as_ref()) {
                for (o, v) in out.values.iter_mut().zip(row) {
                    *o += v;
                }
                out.matched_tokens += 1;
            }
        }
        if out.matched_tokens > 0 {
            let n = out.matched_tokens as f64;
            out.values.iter_mut().for_each(|v| *v /= n);
        }
        out
    }

    pub fn topic_vector(&self, tokens: &[TokenId], vocab: &Vocabulary) -> TopicVector {
        let words: Vec<&str> = tokens
            .iter()
            .filter(|&&t| !Vocabulary::is_special(t))
            .map(|&t| vocab.token(t))
            .collect();
        self.topic_vector_words(&words)
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(TOPIC_MAGIC)?;
        out.write_all(&TOPIC_VERSION.to_le_bytes())?;
        out.write_all(&(self.words.len() as u64).to_le_bytes())?;
        out.write_all(&(self.rank() as u64).to_le_bytes())?;
        for w in &self.words {
            out.write_all(&(w.len() as u32).to_le_bytes())?;
            out.write_all(w.as_bytes())?;
        }
        for v in self.w.data().iter().chain(self.h.data()) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            what: "topic model file",
            reason,
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|e| fmt(e.to_string()))?;
        if &magic != TOPIC_MAGIC {
            return Err(fmt(format!("bad magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b4).map_err(|e| fmt(e.to_string()))?;
        let version = u32::from_le_bytes(b4);
        if version != TOPIC_VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        input.read_exact(&mut b8).map_err(|e| fmt(e.to_string()))?;
        let n = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b8).map_err(|e| fmt(e.to_string()))?;
        let p = u64::from_le_bytes(b8) as usize;
        let mut words = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut b4).map_err(|e| fmt(e.to_string()))?;
            let mut buf = vec![0u8; u32::from_le_bytes(b4) as usize];
            input.read_exact(&mut buf).map_err(|e| fmt(e.to_string()))?;
            words.push(String::from_utf8(buf).map_err(|e| fmt(e.to_string()))?);
        }
        let mut read_floats = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            input.read_exact(&mut buf).map_err(|e| fmt(e.to_string()))?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let w = Tensor::new(vec![n, p], read_floats(n * p)?)?;
        let h = Tensor::new(vec![p, n], read_floats(p * n)?)?;
        Self::new(words, w, h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

/// `(1/d_t) * sum_i tc~_i * ln(tc~_i / tr~_i)` on eps-smoothed, renormalized vectors.
pub fn topic_kl(tc: &TopicVector, tr: &TopicVector, eps: f64) -> Result<f64> {
    topic_kl_values(&tc.values, &tr.values, eps)
}

pub fn topic_kl_values(tc: &[f64], tr: &[f64], eps: f64) -> Result<f64> {
    if tc.len() != tr.len() || tc.is_empty() {
        return Err(Error::shape("topic_kl", &[1, tc.len()], &[1, tr.len()]));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("topic smoothing must be > 0, got {eps}")));
    }
    let p = smooth(tc, eps);
    let q = smooth(tr, eps);
    let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(kl / tc.len() as f64)
}

fn smooth(v: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = v.iter().map(|x| x + eps).sum();
    v.iter().map(|x| (x + eps) / total).collect()
}

/// Topic factors laid out by vocabulary ID: row `id` is the `W` row of that
/// token (zero for functional and special tokens), plus a content mask.
#[derive(Debug, Clone)]
pub struct TopicProjection {
    matrix: Tensor,
    mask: Tensor,
}

impl TopicProjection {
    pub fn new(model: &TopicModel, vocab: &Vocabulary) -> Self {
        let p = model.rank();
        let mut matrix = Tensor::zeros(vocab.size(), p);
        let mut mask = Tensor::zeros(vocab.size(), 1);
        for (id, tok) in vocab.words() {
            if let Some(row) = model.row(tok) {
                let id = id as usize;
                matrix.data_mut()[id * p..(id + 1) * p].copy_from_slice(row);
                mask.set(id, 0, 1.0);
            }
        }
        Self { matrix, mask }
    }

    pub fn rank(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    /// Same as [`TopicModel::topic_vector`], read from the ID-indexed layout.
    pub fn topic_vector(&self, tokens: &[TokenId]) -> TopicVector {
        let p = self.rank();
        let mut out = TopicVector::zeros(p);
        for &t in tokens {
            let t = t as usize;
            if t < self.vocab_size() && self.mask.get(t, 0) > 0.0 {
                for (o, v) in out.values.iter_mut().zip(self.matrix.row_slice(t)) {
                    *o += v;
                }
                out.matched_tokens += 1;
            }
        }
        if out.matched_tokens > 0 {
            let n = out.matched_tokens as f64;
            out.values.iter_mut().for_each(|v| *v /= n);
        }
        out
    }

    /// Expected topic vector under per-step token distributions (`T x |V|`):
    /// `sum_t P_t W / sum_t P_t(content)`; zero when no content mass.
    pub fn soft_topic_vector(&self, dists: &Tensor) -> Result<TopicVector> {
        let num = dists.matmul(&self.matrix)?;
        let mass = dists.matmul(&self.mask)?.sum();
        if mass <= f64::MIN_POSITIVE {
            return Ok(TopicVector::zeros(self.rank()));
        }
        let mut values = vec![0.0; self.rank()];
        for r in 0..num.rows() {
            for (v, x) in values.iter_mut().zip(num.row_slice(r)) {
                *v += x;
            }
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(TopicVector {
            values,
            matched_tokens: (mass.round() as usize).max(1),
        })
    }

    /// Graph version of [`TopicProjection::soft_topic_vector`] over a `T x |V|` node.
    pub fn soft_topic_var<'p>(&'p self, g: &mut Graph<'p>, dists: Var) -> Result<Var> {
        let matrix = g.constant_ref(&self.matrix);
        let mask = g.constant_ref(&self.mask);
        let num = g.matmul(dists, matrix)?;
        let num = g.sum_rows(num)?;
        let mass = g.matmul(dists, mask)?;
        let mass = g.sum(mass);
        if g.value(mass).item()? <= f64::MIN_POSITIVE {
            return Ok(g.constant(Tensor::zeros(1, self.rank())));
        }
        g.div(num, mass)
    }
}

/// Graph version of [`topic_kl`] with a constant context vector.
pub fn topic_kl_var(g: &mut Graph<'_>, tc: &TopicVector, tr: Var, eps: f64) -> Result<Var> {
    let d = tc.dim();
    if g.value(tr).numel() != d {
        return Err(Error::shape("topic_kl", &[1, d], g.dims(tr)));
    }
    let p = Tensor::row(smooth(&tc.values, eps));
    let log_p = p.map(f64::ln);
    let p = g.constant(p);
    let log_p = g.constant(log_p);
    let shifted = g.add_scalar(tr, eps);
    let total = g.sum(shifted);
    let q = g.div(shifted, total)?;
    let log_q = g.log(q);
    let diff = g.sub(log_p, log_q)?;
    let terms = g.mul(p, diff)?;
    let kl = g.sum(terms);
    Ok(g.scale(kl, 1.0 / d as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> TopicModel {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![0.5, 0.5]]).unwrap();
        let h = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        TopicModel::new(vec!["a".into(), "b".into(), "c".into()], w, h).unwrap()
    }

    #[test]
    fn no_content_words_gives_zero_vector() {
        let v = toy_model().topic_vector_words(&["the", "of"]);
        assert_eq!(v, TopicVector::zeros(2));
    }

    #[test]
    fn single_word_is_its_row() {
        let v = toy_model().topic_vector_words(&["the", "b"]);
        assert_eq!(v.values, vec![0.0, 2.0]);
        assert_eq!(v.matched_tokens, 1);
    }

    #[test]
    fn two_words_average() {
        let v = toy_model().topic_vector_words(&["a", "b"]);
        assert_eq!(v.values, vec![0.5, 1.0]);
    }

    #[test]
    fn kl_of_identical_vectors_is_zero() {
        let v = TopicVector {
            values: vec![0.3, 0.0, 1.2],
            matched_tokens: 2,
        };
        assert_eq!(topic_kl(&v, &v, DEFAULT_KL_EPS).unwrap(), 0.0);
    }

    #[test]
    fn kl_worked_example() {
        let tc = TopicVector {
            values: vec![1.0, 0.0],
            matched_tokens: 1,
        };
        let tr = TopicVector {
            values: vec![0.5, 0.5],
            matched_tokens: 1,
        };
        // direct evaluation of the smoothed formula
        let p: [f64; 2] = [1.0 + 1e-8, 1e-8].map(|x| x / (1.0 + 2e-8));
        let q: [f64; 2] = [0.5, 0.5];
        let expected = 0.5 * (p[0] * (p[0] / q[0]).ln() + p[1] * (p[1] / q[1]).ln());
        let got = topic_kl(&tc, &tr, 1e-8).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.3466).abs() < 5e-5);
    }

    #[test]
    fn kl_length_mismatch_is_shape_error() {
        let a = TopicVector::zeros(2);
        let b = TopicVector::zeros(3);
        assert!(matches!(topic_kl(&a, &b, 1e-8), Err(Error::Shape { .. })));
    }

    #[test]
    fn file_roundtrip_is_exact() {
        let m = toy_model();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"TPMX");
        assert_eq!(TopicModel::read_from(buf.as_slice()).unwrap(), m);
        assert!(TopicModel::read_from(&buf[..10]).is_err());
    }

    #[test]
    fn negative_factors_rejected() {
        let w = Tensor::from_rows(&[vec![-1.0]]).unwrap();
        let h = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert!(TopicModel::new(vec!["a".into()], w, h).is_err());
    }
}
