use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding service: {0}")]
    Service(String),
}

/// Maps text to a unit-norm vector of fixed dimension.
///
/// Implementations must be deterministic per text.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Hashed character-trigram frequencies, L2-normalized.
///
/// Text is lowercased and runs of non-alphanumeric characters collapse to a
/// single space before trigrams are taken over the space-padded string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbeddingProvider for TrigramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut cleaned = String::with_capacity(text.len() + 2);
        cleaned.push(' ');
        for c in text.chars().flat_map(char::to_lowercase) {
            if c.is_alphanumeric() {
                cleaned.push(c);
            } else if !cleaned.ends_with(' ') {
                cleaned.push(' ');
            }
        }
        if !cleaned.ends_with(' ') {
            cleaned.push(' ');
        }
        let chars: Vec<char> = cleaned.chars().collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut n = 0;
            for c in w {
                n += c.encode_utf8(&mut buf[n..]).len();
            }
            v[(fnv1a(&buf[..n]) % self.dim as u64) as usize] += 1.0;
        }
        normalize(v)
    }
}

/// Scales `v` to unit length; the zero vector maps to the first basis vector.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        v.iter_mut().for_each(|x| *x = 0.0);
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Dot product of unit vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
}

/// Embedding service client: POSTs `{"text": ...}` and expects
/// `{"embedding": [...]}`. The returned vector is re-normalized.
#[cfg(feature = "http-embedding")]
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    url: String,
    dim: usize,
}

#[cfg(feature = "http-embedding")]
impl HttpEmbeddingProvider {
    /// Probes the service once to learn its dimension.
    pub fn connect(url: impl Into<String>) -> Result<Self, EmbeddingError> {
        let url = url.into();
        let probe = Self::request(&url, "probe")?;
        Ok(Self { url, dim: probe.len() })
    }

    fn request(url: &str, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        #[derive(serde::Deserialize)]
        struct Reply {
            embedding: Vec<f64>,
        }
        let mut resp = ureq::post(url)
            .send_json(serde_json::json!({ "text": text }))
            .map_err(|e| EmbeddingError::Service(e.to_string()))?;
        let reply: Reply = resp.body_mut().read_json().map_err(|e| EmbeddingError::Service(e.to_string()))?;
        if reply.embedding.is_empty() {
            return Err(EmbeddingError::Service("empty embedding".into()));
        }
        Ok(normalize(reply.embedding))
    }

    pub fn try_embed(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let v = Self::request(&self.url, text)?;
        if v.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { left: self.dim, right: v.len() });
        }
        Ok(v)
    }
}

#[cfg(feature = "http-embedding")]
impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Service failures degrade to the zero-text embedding so scoring stays
    /// total; use [`HttpEmbeddingProvider::try_embed`] to observe errors.
    fn embed(&self, text: &str) -> Vec<f64> {
        self.try_embed(text).unwrap_or_else(|_| normalize(vec![0.0; self.dim]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_norm_and_deterministic() {
        let e = TrigramEmbedder::default();
        let a = e.embed("Add a constant to the value");
        assert_eq!(a.len(), 256);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a, e.embed("Add a constant to the value"));
        assert_eq!(e.embed("ADD  a constant, to the value!"), a);
        let empty = e.embed("");
        assert_eq!(empty[0], 1.0);
    }

    #[test]
    fn cosine_endpoints() {
        let e = TrigramEmbedder::default();
        let a = e.embed("reverse digits");
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((cosine(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&a, &[1.0]), Err(EmbeddingError::DimensionMismatch { left: 256, right: 1 }));
    }

    proptest! {
        #[test]
        fn cosine_in_range(a in ".{0,40}", b in ".{0,40}") {
            let e = TrigramEmbedder::new(64);
            let (x, y) = (e.embed(&a), e.embed(&b));
            prop_assert!((x.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
            let c = cosine(&x, &y).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }
}
