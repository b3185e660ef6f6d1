//! Pretrained word-vector table plus the class-name and noun-lexicon files.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Word → unit-normalized vector map loaded from a `word v1 … vd` text file.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn from_vectors(dim: usize, raw: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (word, mut v) in raw {
            if v.len() != dim {
                return Err(Error::Format {
                    path: "<memory>".into(),
                    line: None,
                    detail: format!("vector for `{}` has {} dims, expected {}", word, v.len(), dim),
                });
            }
            normalize(&word, &mut v)?;
            if vectors.insert(word.clone(), v).is_some() {
                return Err(Error::Format {
                    path: "<memory>".into(),
                    line: None,
                    detail: format!("duplicate word `{}`", word),
                });
            }
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(|v| v.as_slice())
    }

    /// Deterministic dump for file writing: words in sorted order.
    pub fn sorted_entries(&self) -> Vec<(&str, &[f64])> {
        let mut entries: Vec<(&str, &[f64])> = self
            .vectors
            .iter()
            .map(|(w, v)| (w.as_str(), v.as_slice()))
            .collect();
        entries.sort_by_key(|(w, _)| *w);
        entries
    }
}

fn normalize(word: &str, v: &mut [f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numeric(format!(
            "embedding for `{}` has zero or non-finite norm",
            word
        )));
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

/// Load embeddings from `word v1 … vd` lines; vectors are unit-normalized.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut dim: Option<usize> = None;
    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let word = parts.next().expect("non-empty line").to_string();
        let values: std::result::Result<Vec<f64>, _> =
            parts.map(|p| p.parse::<f64>()).collect();
        let mut values = values.map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: Some(line_no),
            detail: format!("bad number: {}", e),
        })?;
        if values.is_empty() {
            return Err(Error::Format {
                path: path.display().to_string(),
                line: Some(line_no),
                detail: format!("no vector components for `{}`", word),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: Some(line_no),
                    detail: format!(
                        "vector for `{}` has {} dims, previous lines have {}",
                        word,
                        values.len(),
                        d
                    ),
                })
            }
            _ => {}
        }
        normalize(&word, &mut values).map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: Some(line_no),
            detail: e.to_string(),
        })?;
        if vectors.insert(word.clone(), values).is_some() {
            return Err(Error::Format {
                path: path.display().to_string(),
                line: Some(line_no),
                detail: format!("duplicate word `{}`", word),
            });
        }
    }
    let dim = dim.ok_or_else(|| Error::Format {
        path: path.display().to_string(),
        line: Some(1),
        detail: "empty embedding file".into(),
    })?;
    Ok(EmbeddingTable { dim, vectors })
}

pub fn save_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    use std::io::Write;
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for (word, vec) in table.sorted_entries() {
        let comps: Vec<String> = vec.iter().map(|v| format!("{}", v)).collect();
        writeln!(w, "{} {}", word, comps.join(" "))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Class-name file: one name per line, line number = class index.
pub fn load_class_names(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut names = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let name = line.trim().to_string();
        if name.is_empty() {
            return Err(Error::Format {
                path: path.display().to_string(),
                line: Some(idx + 1),
                detail: "blank class name".into(),
            });
        }
        names.push(name);
    }
    if names.is_empty() {
        return Err(Error::Format {
            path: path.display().to_string(),
            line: Some(1),
            detail: "empty class-name file".into(),
        });
    }
    Ok(names)
}

pub fn save_lines(path: &Path, lines: impl IntoIterator<Item = impl AsRef<str>>) -> Result<()> {
    use std::io::Write;
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for line in lines {
        writeln!(w, "{}", line.as_ref()).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Noun lexicon: one word per line.
pub fn load_lexicon(path: &Path) -> Result<BTreeSet<String>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut words = BTreeSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let word = line.trim().to_string();
        if !word.is_empty() {
            words.insert(word);
        }
    }
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_two_words_with_dim_three() {
        let f = write_temp("dog 1 0 0\ncat 0 2 0\n");
        let table = load_embeddings(f.path()).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.dim(), 3);
        assert_eq!(table.get("cat").unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn vectors_are_unit_normalized() {
        let f = write_temp("w 3 4 0\n");
        let table = load_embeddings(f.path()).unwrap();
        let norm: f64 = table.get("w").unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn absent_word_is_none() {
        let f = write_temp("w 1 0\n");
        let table = load_embeddings(f.path()).unwrap();
        assert!(table.get("missing").is_none());
    }

    #[test]
    fn ragged_dimensions_are_a_format_error() {
        let f = write_temp("a 1 0\nb 1 0 0\n");
        let err = load_embeddings(f.path()).unwrap_err();
        assert!(matches!(err, Error::Format { line: Some(2), .. }));
    }

    #[test]
    fn duplicate_word_is_a_format_error() {
        let f = write_temp("a 1 0\na 0 1\n");
        assert!(matches!(
            load_embeddings(f.path()).unwrap_err(),
            Error::Format { line: Some(2), .. }
        ));
    }

    #[test]
    fn zero_vector_is_rejected() {
        let f = write_temp("a 0 0 0\n");
        assert!(load_embeddings(f.path()).is_err());
    }

    #[test]
    fn class_names_by_line_number() {
        let f = write_temp("person\ndog\ntraffic light\n");
        let names = load_class_names(f.path()).unwrap();
        assert_eq!(names, vec!["person", "dog", "traffic light"]);
    }
}
