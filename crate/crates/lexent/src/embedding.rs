//! Loading, generating, preprocessing, and persisting word-embedding
//! matrices.
//!
//! The on-disk format is GloVe-style text: one record per line, the token
//! followed by `d` decimal floats, single-space separated, UTF-8 with LF
//! line endings. [`EmbeddingMatrix::save`] emits 9 significant digits so a
//! save/load cycle reproduces the file byte for byte.
//!
//! Matrices are immutable after construction; every operation returns a new
//! matrix, so values can be shared freely across threads.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Token used for out-of-vocabulary lookups by downstream consumers.
pub const UNK_TOKEN: &str = "<unk>";

/// Errors from constructing, loading, or transforming an embedding matrix.
#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("no rows: embedding source is empty")]
    NoRows,
    #[error("line {line}: expected {expected} dimensions, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate token `{token}`")]
    DuplicateToken { line: usize, token: String },
    #[error("line {line}: cannot parse `{value}` as a float")]
    ParseFloat { line: usize, value: String },
    #[error("line {line}: missing token")]
    MissingToken { line: usize },
    #[error("token `{token}` contains whitespace")]
    TokenWhitespace { token: String },
    #[error("non-finite value in row for `{token}`")]
    NonFinite { token: String },
    #[error("vocabulary and matrix disagree: {vocab} tokens, {rows} rows")]
    ShapeMismatch { vocab: usize, rows: usize },
    #[error("negative scale {0} for random embeddings")]
    NegativeScale(f64),
    #[error("rescaling needs at least two rows, got {0}")]
    FewerThanTwoRows(usize),
    #[error("token `{token}` not in vocabulary")]
    UnknownToken { token: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A vocabulary-indexed `|vocab| x d` real matrix of word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from an ordered vocabulary and its row vectors.
    ///
    /// Tokens must be unique, whitespace-free, and each row finite.
    pub fn from_rows(vocab: Vec<String>, vectors: Array2<f64>) -> Result<Self, EmbeddingError> {
        if vocab.len() != vectors.nrows() {
            return Err(EmbeddingError::ShapeMismatch {
                vocab: vocab.len(),
                rows: vectors.nrows(),
            });
        }
        if vocab.is_empty() {
            return Err(EmbeddingError::NoRows);
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, token) in vocab.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(EmbeddingError::TokenWhitespace {
                    token: token.clone(),
                });
            }
            if index.insert(token.clone(), i).is_some() {
                return Err(EmbeddingError::DuplicateToken {
                    line: i + 1,
                    token: token.clone(),
                });
            }
            if vectors.row(i).iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite {
                    token: token.clone(),
                });
            }
        }
        Ok(Self {
            vocab,
            index,
            vectors,
        })
    }

    /// Reads GloVe-style text: `token v1 v2 ... vd` per line.
    ///
    /// Rows keep file order. If `expected_dim` is given, every line must
    /// match it; otherwise the first line fixes `d`.
    pub fn load<R: BufRead>(
        reader: R,
        expected_dim: Option<usize>,
    ) -> Result<Self, EmbeddingError> {
        let mut vocab = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        let mut dim = expected_dim;
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields
                .next()
                .ok_or(EmbeddingError::MissingToken { line: lineno })?;
            let mut row = Vec::new();
            for field in fields {
                let value: f64 =
                    field
                        .parse()
                        .map_err(|_| EmbeddingError::ParseFloat {
                            line: lineno,
                            value: field.to_string(),
                        })?;
                row.push(value);
            }
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(EmbeddingError::DimensionMismatch {
                        line: lineno,
                        expected: d,
                        found: row.len(),
                    })
                }
                Some(_) => {}
            }
            vocab.push(token.to_string());
            data.extend_from_slice(&row);
        }
        if vocab.is_empty() {
            return Err(EmbeddingError::NoRows);
        }
        let d = dim.unwrap_or(0);
        let vectors = Array2::from_shape_vec((vocab.len(), d), data)
            .expect("row lengths validated above");
        // Re-validate duplicates with line numbers matching the file.
        Self::from_rows(vocab, vectors)
    }

    /// Writes the matrix in the text format read by [`EmbeddingMatrix::load`],
    /// with 9 significant digits per value.
    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), EmbeddingError> {
        for (token, row) in self.vocab.iter().zip(self.vectors.rows()) {
            write!(writer, "{token}")?;
            for v in row.iter() {
                write!(writer, " {v:.8e}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }

    /// Draws a `|vocab| x d` matrix with i.i.d. Gaussian entries of mean 0
    /// and standard deviation `kappa`, deterministically from `seed`.
    pub fn random(
        vocab: Vec<String>,
        d: usize,
        kappa: f64,
        seed: u64,
    ) -> Result<Self, EmbeddingError> {
        if !(kappa >= 0.0) {
            return Err(EmbeddingError::NegativeScale(kappa));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, kappa).expect("kappa validated non-negative");
        let vectors = Array2::from_shape_simple_fn((vocab.len(), d), || normal.sample(&mut rng));
        Self::from_rows(vocab, vectors)
    }

    /// Subtracts each dimension's mean across the vocabulary.
    pub fn mean_center(&self) -> Result<Self, EmbeddingError> {
        if self.vectors.nrows() == 0 {
            return Err(EmbeddingError::NoRows);
        }
        let means = self.vectors.mean_axis(Axis(0)).expect("nonempty");
        let vectors = &self.vectors - &means;
        Ok(Self {
            vocab: self.vocab.clone(),
            index: self.index.clone(),
            vectors,
        })
    }

    /// Rescales each dimension to population standard deviation 1.
    ///
    /// Zero-variance columns are left unchanged with a warning; pretrained
    /// files occasionally ship padding dimensions.
    pub fn rescale_unit_std(&self) -> Result<Self, EmbeddingError> {
        let n = self.vectors.nrows();
        if n < 2 {
            return Err(EmbeddingError::FewerThanTwoRows(n));
        }
        let mut vectors = self.vectors.clone();
        for (k, mut col) in vectors.columns_mut().into_iter().enumerate() {
            let mean = col.mean().expect("nonempty");
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            if std == 0.0 {
                log::warn!("dimension {k} has zero variance; left unscaled");
                continue;
            }
            col.mapv_inplace(|v| v / std);
        }
        Self::from_rows(self.vocab.clone(), vectors)
    }

    /// Mean-centers then rescales, so every output dimension has mean 0 and
    /// standard deviation 1.
    pub fn preprocess(&self) -> Result<Self, EmbeddingError> {
        self.mean_center()?.rescale_unit_std()
    }

    /// Restricts the matrix to `tokens`, in the order given.
    ///
    /// Errors on tokens absent from the vocabulary.
    pub fn subset<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Self, EmbeddingError> {
        let mut vocab = Vec::with_capacity(tokens.len());
        let mut vectors = Array2::zeros((tokens.len(), self.dim()));
        for (i, token) in tokens.iter().enumerate() {
            let token = token.as_ref();
            let row = self
                .index
                .get(token)
                .ok_or_else(|| EmbeddingError::UnknownToken {
                    token: token.to_string(),
                })?;
            vocab.push(token.to_string());
            vectors.row_mut(i).assign(&self.vectors.row(*row));
        }
        Self::from_rows(vocab, vectors)
    }

    /// Returns a copy with an [`UNK_TOKEN`] row appended when missing.
    ///
    /// The row is drawn by [`EmbeddingMatrix::random`] with unit scale from
    /// the run's seed, so out-of-vocabulary lookups are reproducible.
    pub fn with_unk(&self, seed: u64) -> Result<Self, EmbeddingError> {
        if self.index.contains_key(UNK_TOKEN) {
            return Ok(self.clone());
        }
        let unk = Self::random(vec![UNK_TOKEN.to_string()], self.dim(), 1.0, seed)?;
        let mut vocab = self.vocab.clone();
        vocab.push(UNK_TOKEN.to_string());
        let mut vectors = Array2::zeros((self.len() + 1, self.dim()));
        vectors
            .slice_mut(ndarray::s![..self.len(), ..])
            .assign(&self.vectors);
        vectors.row_mut(self.len()).assign(&unk.vectors.row(0));
        Self::from_rows(vocab, vectors)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    /// Number of words.
    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    /// Vector dimensionality `d`.
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Row index of `token`, if present.
    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// The vector for `token`, if present.
    pub fn lookup(&self, token: &str) -> Option<ArrayView1<'_, f64>> {
        self.position(token).map(|i| self.vectors.row(i))
    }

    /// Row `i` of the matrix.
    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn matrix(vocab: &[&str], rows: Array2<f64>) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(vocab.iter().map(|s| s.to_string()).collect(), rows).unwrap()
    }

    #[test]
    fn load_two_line_file() {
        let text = "a 1.0 0.0\nb 0.0 1.0\n";
        let e = EmbeddingMatrix::load(text.as_bytes(), None).unwrap();
        assert_eq!(e.vocab(), ["a".to_string(), "b".to_string()]);
        assert_eq!(e.vectors(), &array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn load_empty_stream_errors() {
        let err = EmbeddingMatrix::load("".as_bytes(), None).unwrap_err();
        assert!(matches!(err, EmbeddingError::NoRows));
    }

    #[test]
    fn load_dimension_mismatch_reports_line() {
        let err = EmbeddingMatrix::load("a 1.0\nb 1.0 2.0\n".as_bytes(), None).unwrap_err();
        match err {
            EmbeddingError::DimensionMismatch {
                line,
                expected,
                found,
            } => {
                assert_eq!((line, expected, found), (2, 1, 2));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_duplicate_token_errors() {
        let err = EmbeddingMatrix::load("a 1.0\na 2.0\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, EmbeddingError::DuplicateToken { .. }));
    }

    #[test]
    fn load_bad_float_reports_line_number() {
        let err = EmbeddingMatrix::load("a 1.0\nb x\n".as_bytes(), None).unwrap_err();
        match err {
            EmbeddingError::ParseFloat { line, value } => {
                assert_eq!(line, 2);
                assert_eq!(value, "x");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_respects_expected_dim() {
        let err = EmbeddingMatrix::load("a 1.0 2.0\n".as_bytes(), Some(3)).unwrap_err();
        assert!(matches!(
            err,
            EmbeddingError::DimensionMismatch { line: 1, .. }
        ));
    }

    #[test]
    fn save_load_round_trips_bytes() {
        let e = EmbeddingMatrix::random(
            vec!["a".into(), "b".into(), "c".into()],
            4,
            0.7,
            9,
        )
        .unwrap();
        let mut first = Vec::new();
        e.save(&mut first).unwrap();
        let reloaded = EmbeddingMatrix::load(first.as_slice(), Some(4)).unwrap();
        let mut second = Vec::new();
        reloaded.save(&mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn random_is_deterministic() {
        let vocab: Vec<String> = vec!["a".into(), "b".into()];
        let x = EmbeddingMatrix::random(vocab.clone(), 8, 1.3, 77).unwrap();
        let y = EmbeddingMatrix::random(vocab, 8, 1.3, 77).unwrap();
        assert_eq!(x.vectors(), y.vectors());
    }

    #[test]
    fn random_zero_scale_is_all_zero() {
        let e = EmbeddingMatrix::random(vec!["a".into()], 5, 0.0, 1).unwrap();
        assert!(e.vectors().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_unit_scale_empirical_std() {
        // Sample-statistics oracle: direct two-pass standard deviation over
        // a million entries must land within 1% of the requested scale.
        let e = EmbeddingMatrix::random(vec!["w".into()], 1_000_000, 1.0, 123).unwrap();
        let values: Vec<f64> = e.vectors().iter().copied().collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        let std = var.sqrt();
        assert!((std - 1.0).abs() < 0.01, "std {std}");
    }

    #[test]
    fn mean_center_leaves_zero_mean_input() {
        let e = matrix(&["a", "b"], array![[1.0, 0.0], [-1.0, 0.0]]);
        let centered = e.mean_center().unwrap();
        assert_eq!(centered.vectors(), e.vectors());
    }

    #[test]
    fn mean_center_subtracts_column_means() {
        // Hand oracle: column means are (1, 2).
        let e = matrix(&["a", "b"], array![[2.0, 4.0], [0.0, 0.0]]);
        let centered = e.mean_center().unwrap();
        assert_eq!(centered.vectors(), &array![[1.0, 2.0], [-1.0, -2.0]]);
    }

    #[test]
    fn mean_center_single_row_is_zero() {
        let e = matrix(&["a"], array![[3.0, 3.0]]);
        let centered = e.mean_center().unwrap();
        assert_eq!(centered.vectors(), &array![[0.0, 0.0]]);
    }

    #[test]
    fn rescale_divides_by_population_std() {
        // Population std of {+2, -2} is 2, so the column maps to {+1, -1}.
        let e = matrix(&["a", "b"], array![[2.0], [-2.0]]);
        let scaled = e.rescale_unit_std().unwrap();
        assert_eq!(scaled.vectors(), &array![[1.0], [-1.0]]);
        let col: Vec<f64> = scaled.vectors().column(0).to_vec();
        let std = population_std(&col);
        assert_abs_diff_eq!(std, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn rescale_is_idempotent_on_unit_std() {
        let e = matrix(&["a", "b"], array![[1.0], [-1.0]]);
        let scaled = e.rescale_unit_std().unwrap();
        for (x, y) in scaled.vectors().iter().zip(e.vectors().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rescale_leaves_constant_column() {
        let e = matrix(&["a", "b", "c"], array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]);
        let scaled = e.rescale_unit_std().unwrap();
        assert_eq!(scaled.vectors().column(0).to_vec(), vec![5.0, 5.0, 5.0]);
        assert_abs_diff_eq!(
            population_std(&scaled.vectors().column(1).to_vec()),
            1.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn preprocess_produces_standard_columns() {
        let e = EmbeddingMatrix::random(
            (0..20).map(|i| format!("w{i}")).collect(),
            6,
            2.5,
            5,
        )
        .unwrap();
        let p = e.preprocess().unwrap();
        for col in p.vectors().columns() {
            let values: Vec<f64> = col.to_vec();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert_abs_diff_eq!(population_std(&values), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn preprocess_is_idempotent() {
        let e = EmbeddingMatrix::random(
            (0..10).map(|i| format!("w{i}")).collect(),
            4,
            0.3,
            11,
        )
        .unwrap();
        let once = e.preprocess().unwrap();
        let twice = once.preprocess().unwrap();
        for (x, y) in once.vectors().iter().zip(twice.vectors().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        assert_eq!(once.vocab(), twice.vocab());
    }

    #[test]
    fn preprocess_maps_linear_columns_to_same_pattern() {
        // Hand linear-transform oracle: both columns are affine images of
        // (1, 2, 3), so both standardize to (-c, 0, +c) with c = sqrt(3/2).
        let e = matrix(&["a", "b", "c"], array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]);
        let p = e.preprocess().unwrap();
        let c = (1.5f64).sqrt();
        for col in p.vectors().columns() {
            assert_abs_diff_eq!(col[0], -c, epsilon = 1e-12);
            assert_abs_diff_eq!(col[1], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(col[2], c, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_center_commutes_with_row_permutation() {
        let e = matrix(
            &["a", "b", "c"],
            array![[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]],
        );
        let permuted = matrix(
            &["c", "a", "b"],
            array![[0.5, 0.0], [1.0, 2.0], [3.0, -4.0]],
        );
        let centered = e.mean_center().unwrap();
        let centered_permuted = permuted.mean_center().unwrap();
        for (token, row) in centered.vocab().iter().zip(centered.vectors().rows()) {
            let other = centered_permuted.lookup(token).unwrap();
            for (x, y) in row.iter().zip(other.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn subset_keeps_requested_order() {
        let e = matrix(&["a", "b", "c"], array![[1.0], [2.0], [3.0]]);
        let s = e.subset(&["c", "a"]).unwrap();
        assert_eq!(s.vocab(), ["c".to_string(), "a".to_string()]);
        assert_eq!(s.vectors(), &array![[3.0], [1.0]]);
    }

    #[test]
    fn with_unk_appends_deterministic_row() {
        let e = matrix(&["a"], array![[1.0, 2.0]]);
        let x = e.with_unk(3).unwrap();
        let y = e.with_unk(3).unwrap();
        assert_eq!(x.vectors(), y.vectors());
        assert_eq!(x.position(UNK_TOKEN), Some(1));
        assert_eq!(x.with_unk(99).unwrap().vectors(), x.vectors());
    }

    fn population_std(values: &[f64]) -> f64 {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
    }
}
