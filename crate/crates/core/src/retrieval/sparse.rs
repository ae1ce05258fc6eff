use std::collections::BTreeMap;

use crate::memory::{NodeId, ToolGraph};

/// Lowercased alphanumeric runs of length at least 2.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| t.chars().count() > 1).map(str::to_lowercase).collect()
}

/// Tf-idf index over tool text (`name` + `description`).
///
/// Term frequency is the raw count, idf is `ln((1 + N) / (1 + df)) + 1`, and
/// every document vector is L2-normalized. Query terms missing from the
/// vocabulary carry no weight.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseIndex {
    vocabulary: BTreeMap<String, usize>,
    document_frequency: Vec<usize>,
    idf: Vec<f64>,
    documents: BTreeMap<NodeId, Vec<(usize, f64)>>,
}

impl SparseIndex {
    /// Builds the index from `(id, text)` documents.
    pub fn build<'a>(docs: impl IntoIterator<Item = (NodeId, &'a str)>) -> Self {
        let mut vocabulary = BTreeMap::new();
        let mut document_frequency: Vec<usize> = Vec::new();
        let mut counted: Vec<(NodeId, BTreeMap<usize, f64>)> = Vec::new();
        for (id, text) in docs {
            let mut tf = BTreeMap::new();
            for tok in tokenize(text) {
                let next = vocabulary.len();
                let ti = *vocabulary.entry(tok).or_insert(next);
                if ti == document_frequency.len() {
                    document_frequency.push(0);
                }
                *tf.entry(ti).or_insert(0.0) += 1.0;
            }
            for ti in tf.keys() {
                document_frequency[*ti] += 1;
            }
            counted.push((id, tf));
        }
        let n = counted.len() as f64;
        let idf: Vec<f64> = document_frequency.iter().map(|&df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0).collect();
        let documents = counted
            .into_iter()
            .map(|(id, tf)| (id, unit(tf.into_iter().map(|(ti, c)| (ti, c * idf[ti])).collect())))
            .collect();
        Self { vocabulary, document_frequency, idf, documents }
    }

    pub fn from_graph(g: &ToolGraph) -> Self {
        let texts: Vec<(NodeId, String)> = g.nodes().map(|n| (n.id, format!("{} {}", n.name, n.description))).collect();
        Self::build(texts.iter().map(|(id, t)| (*id, t.as_str())))
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.vocabulary.get(term).map_or(0, |&i| self.document_frequency[i])
    }

    /// L2-normalized (term index, weight) pairs of a document.
    pub fn document(&self, id: NodeId) -> Option<&[(usize, f64)]> {
        self.documents.get(&id).map(Vec::as_slice)
    }

    /// L2-normalized tf-idf vector of `query`, sorted by term index.
    pub fn query_vector(&self, query: &str) -> Vec<(usize, f64)> {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize(query) {
            if let Some(&ti) = self.vocabulary.get(&tok) {
                *tf.entry(ti).or_insert(0.0) += 1.0;
            }
        }
        unit(tf.into_iter().map(|(ti, c)| (ti, c * self.idf[ti])).collect())
    }

    /// Cosine between a prepared query vector and a document; 0 for unknown
    /// documents or empty vectors.
    pub fn score_vector(&self, query: &[(usize, f64)], id: NodeId) -> f64 {
        let Some(doc) = self.documents.get(&id) else { return 0.0 };
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < query.len() && j < doc.len() {
            match query[i].0.cmp(&doc[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += query[i].1 * doc[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        dot.clamp(0.0, 1.0)
    }

    /// σ^text of `query` against document `id`, in [0, 1].
    pub fn score(&self, query: &str, id: NodeId) -> f64 {
        self.score_vector(&self.query_vector(query), id)
    }
}

fn unit(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|(_, w)| *w /= norm);
    }
    v
}
