//! Concept vocabulary and the trainable embedding table — the prompt-encoder
//! stand-in. Each concept id maps to one learned d-dimensional row; a
//! reserved null row provides the unconditional branch for classifier-free
//! guidance and is trained through condition dropout rather than fixed at
//! zero (the oracle table is the exception: there the null must decompose to
//! "no concept", which the zero vector does).

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Precision, Tensor};

/// Reserved id for the unconditional embedding row.
pub const NULL_CONCEPT: &str = "<null>";

/// A concept's latent representation: one row of the table.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Embedding {
        Embedding { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Ordered concept ids with the null id at row 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptVocab {
    ids: Vec<String>,
}

impl ConceptVocab {
    /// Builds a vocabulary from experiment concept ids; the null id is
    /// inserted at row 0 and cannot be used as an experiment concept.
    pub fn new<S: AsRef<str>>(concepts: &[S]) -> Result<ConceptVocab> {
        let mut ids = vec![NULL_CONCEPT.to_owned()];
        for c in concepts {
            let c = c.as_ref();
            if c == NULL_CONCEPT {
                return Err(Error::Config(format!(
                    "{NULL_CONCEPT:?} is reserved for the unconditional row"
                )));
            }
            if ids.iter().any(|e| e == c) {
                return Err(Error::Config(format!("duplicate concept id {c:?}")));
            }
            ids.push(c.to_owned());
        }
        Ok(ConceptVocab { ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All ids including the null row.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Experiment concepts (everything but the null row).
    pub fn concepts(&self) -> &[String] {
        &self.ids[1..]
    }

    pub fn index_of(&self, concept: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|c| c == concept)
            .ok_or_else(|| Error::Lookup(format!("unknown concept {concept:?}")))
    }
}

/// `|vocab| x d` table of trainable embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: ConceptVocab,
    rows: Tensor,
}

impl EmbeddingTable {
    /// Random init: rows ~ N(0, 1), including the null row. Unit-scale rows
    /// keep the conditioning pathway's gradients comparable to the time
    /// features from the first step.
    pub fn init(vocab: ConceptVocab, dim: usize, stream: &mut RngStream) -> Result<EmbeddingTable> {
        if dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        let n = vocab.len() * dim;
        let data: Vec<f64> = (0..n).map(|_| stream.next_gaussian()).collect();
        let rows = Tensor::from_vec(vec![vocab.len(), dim], data, Precision::F32)?;
        Ok(EmbeddingTable { vocab, rows })
    }

    /// Fixed orthonormal table for the oracle domain: concept k gets the
    /// k-th standard basis vector, the null row is zero. Blended queries
    /// then decompose exactly into per-concept weights.
    pub fn one_hot(vocab: ConceptVocab) -> EmbeddingTable {
        let dim = vocab.len() - 1;
        let mut data = vec![0.0f64; vocab.len() * dim];
        for k in 0..dim {
            data[(k + 1) * dim + k] = 1.0;
        }
        let rows = Tensor::from_vec(vec![vocab.len(), dim], data, Precision::F32)
            .expect("consistent table shape");
        EmbeddingTable { vocab, rows }
    }

    pub fn from_rows(vocab: ConceptVocab, rows: Tensor) -> Result<EmbeddingTable> {
        if rows.rank() != 2 || rows.shape()[0] != vocab.len() {
            return Err(Error::Shape {
                op: "embedding_table",
                detail: format!(
                    "need one row per vocab entry ({}), got {:?}",
                    vocab.len(),
                    rows.shape()
                ),
            });
        }
        if !rows.all_finite() {
            return Err(Error::Numeric("embedding table contains non-finite values".into()));
        }
        Ok(EmbeddingTable { vocab, rows })
    }

    pub fn vocab(&self) -> &ConceptVocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut Tensor {
        &mut self.rows
    }

    /// The row for a concept id.
    pub fn encode(&self, concept: &str) -> Result<Embedding> {
        let idx = self.vocab.index_of(concept)?;
        let d = self.dim();
        Ok(Embedding::new(self.rows.data()[idx * d..(idx + 1) * d].to_vec()))
    }

    pub fn null_embedding(&self) -> Embedding {
        self.encode(NULL_CONCEPT).expect("null row always exists")
    }
}

/// Linear interpolation `w*e1 + (1-w)*e2`.
///
/// Exactness guarantees used by the reduction suite: `w == 1` returns `e1`
/// verbatim, `w == 0` returns `e2` verbatim, and equal operands return
/// themselves for any `w`. At `w = 0.5` the result is bit-identical under
/// operand swap because IEEE addition and multiplication commute.
pub fn blend_embeddings(e1: &Embedding, e2: &Embedding, w: f64) -> Result<Embedding> {
    if e1.dim() != e2.dim() {
        return Err(Error::Shape {
            op: "blend_embeddings",
            detail: format!("{} vs {}", e1.dim(), e2.dim()),
        });
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Config(format!("blend weight must lie in [0,1], got {w}")));
    }
    if w == 1.0 || e1 == e2 {
        return Ok(e1.clone());
    }
    if w == 0.0 {
        return Ok(e2.clone());
    }
    let values = e1
        .values()
        .iter()
        .zip(e2.values())
        .map(|(&a, &b)| w * a + (1.0 - w) * b)
        .collect();
    Ok(Embedding::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn table() -> EmbeddingTable {
        let vocab = ConceptVocab::new(&["A", "B", "C"]).unwrap();
        let mut s = derive_stream(10, "embed-init").unwrap();
        EmbeddingTable::init(vocab, 16, &mut s).unwrap()
    }

    #[test]
    fn vocab_reserves_null_row() {
        let vocab = ConceptVocab::new(&["A", "B"]).unwrap();
        assert_eq!(vocab.ids()[0], NULL_CONCEPT);
        assert_eq!(vocab.concepts(), &["A".to_owned(), "B".to_owned()]);
        assert!(ConceptVocab::new(&["A", "A"]).is_err());
        assert!(ConceptVocab::new(&[NULL_CONCEPT]).is_err());
    }

    #[test]
    fn encode_is_stable_and_null_accessible() {
        let t = table();
        assert_eq!(t.encode("A").unwrap(), t.encode("A").unwrap());
        assert_eq!(t.null_embedding().dim(), 16);
        assert!(matches!(t.encode("Z"), Err(Error::Lookup(_))));
    }

    #[test]
    fn blend_arithmetic_mean() {
        let e1 = Embedding::new(vec![1.0, 2.0]);
        let e2 = Embedding::new(vec![3.0, 4.0]);
        let b = blend_embeddings(&e1, &e2, 0.5).unwrap();
        assert_eq!(b.values(), &[2.0, 3.0]);
    }

    #[test]
    fn blend_reductions_are_bit_exact() {
        let e1 = Embedding::new(vec![0.1, -2.5, 3.3]);
        let e2 = Embedding::new(vec![-0.7, 0.2, 9.9]);
        assert_eq!(blend_embeddings(&e1, &e2, 1.0).unwrap(), e1);
        assert_eq!(blend_embeddings(&e1, &e2, 0.0).unwrap(), e2);
        // blend(e, e, w) = e for any w
        assert_eq!(blend_embeddings(&e1, &e1, 0.37).unwrap(), e1);
    }

    #[test]
    fn blend_symmetric_at_half() {
        let t = table();
        let a = t.encode("A").unwrap();
        let b = t.encode("B").unwrap();
        let ab = blend_embeddings(&a, &b, 0.5).unwrap();
        let ba = blend_embeddings(&b, &a, 0.5).unwrap();
        let bits = |e: &Embedding| e.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ab), bits(&ba));
    }

    #[test]
    fn blend_validates_inputs() {
        let e1 = Embedding::new(vec![1.0]);
        let e2 = Embedding::new(vec![1.0, 2.0]);
        assert!(matches!(blend_embeddings(&e1, &e2, 0.5), Err(Error::Shape { .. })));
        let e2 = Embedding::new(vec![2.0]);
        assert!(matches!(blend_embeddings(&e1, &e2, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn one_hot_table_is_orthonormal_with_zero_null() {
        let vocab = ConceptVocab::new(&["A", "B", "C"]).unwrap();
        let t = EmbeddingTable::one_hot(vocab);
        assert_eq!(t.dim(), 3);
        assert!(t.null_embedding().values().iter().all(|&v| v == 0.0));
        assert_eq!(t.encode("A").unwrap().values(), &[1.0, 0.0, 0.0]);
        assert_eq!(t.encode("C").unwrap().values(), &[0.0, 0.0, 1.0]);
    }
}
