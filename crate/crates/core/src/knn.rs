//! Exact k-nearest-neighbour search by exhaustive scan.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embed::dot;
use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Score is a distance; smaller is closer.
    Euclidean,
    /// Score is a similarity; larger is closer.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    metric: Metric,
    ids: Vec<String>,
    data: Vec<f64>,
    position: HashMap<String, usize>,
}

impl VectorIndex {
    /// Cosine indexes store unit-normalised copies so ranking reduces to a
    /// dot product.
    pub fn build<I, S, V>(entries: I, metric: Metric) -> Result<Self>
    where
        I: IntoIterator<Item = (S, V)>,
        S: Into<String>,
        V: AsRef<[f64]>,
    {
        let mut dim = None;
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut position = HashMap::new();
        for (id, v) in entries {
            let id = id.into();
            let v = v.as_ref();
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    id: Some(id),
                    expected: d,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(Some(id)));
            }
            if position.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId(id));
            }
            match metric {
                Metric::Euclidean => data.extend_from_slice(v),
                Metric::Cosine => {
                    let n = dot(v, v).sqrt();
                    if n == 0.0 {
                        return Err(Error::ZeroVector(Some(id)));
                    }
                    data.extend(v.iter().map(|x| x / n));
                }
            }
            ids.push(id);
        }
        let dim = dim.ok_or_else(|| Error::InvalidParameter("empty index".into()))?;
        Ok(VectorIndex {
            dim,
            metric,
            ids,
            data,
            position,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.position.contains_key(id)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Stored vector (normalised for cosine indexes).
    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.position.get(id).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Orders two scores best-first under this index's metric.
    pub fn compare_scores(&self, a: f64, b: f64) -> Ordering {
        match self.metric {
            Metric::Euclidean => a.total_cmp(&b),
            Metric::Cosine => b.total_cmp(&a),
        }
    }

    pub fn query(&self, q: &[f64], k: usize, exclude: &[&str]) -> Result<Vec<Neighbor>> {
        self.query_with(Execution::Auto, q, k, exclude)
    }

    /// Exact top-`k`, best first, equal scores by ascending id. Ids in
    /// `exclude` are never returned.
    pub fn query_with(
        &self,
        exec: Execution,
        q: &[f64],
        k: usize,
        exclude: &[&str],
    ) -> Result<Vec<Neighbor>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                id: None,
                expected: self.dim,
                found: q.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let query: Vec<f64> = match self.metric {
            Metric::Euclidean => q.to_vec(),
            Metric::Cosine => {
                let n = dot(q, q).sqrt();
                if n == 0.0 {
                    return Err(Error::ZeroVector(None));
                }
                q.iter().map(|x| x / n).collect()
            }
        };
        let scores: Vec<f64> = exec.map_range(self.len(), |i| {
            let row = self.row(i);
            match self.metric {
                Metric::Euclidean => row
                    .iter()
                    .zip(&query)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                Metric::Cosine => dot(row, &query),
            }
        });
        let mut cand: Vec<usize> = (0..self.len())
            .filter(|&i| !exclude.contains(&self.ids[i].as_str()))
            .collect();
        let cmp = |&a: &usize, &b: &usize| {
            self.compare_scores(scores[a], scores[b])
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        };
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        Ok(cand
            .into_iter()
            .map(|i| Neighbor {
                id: self.ids[i].clone(),
                score: scores[i],
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VectorIndex {
        VectorIndex::build(
            [("a", vec![0.0, 0.0]), ("b", vec![1.0, 0.0]), ("c", vec![5.0, 0.0])],
            Metric::Euclidean,
        )
        .unwrap()
    }

    fn ids(n: &[Neighbor]) -> Vec<&str> {
        n.iter().map(|x| x.id.as_str()).collect()
    }

    #[test]
    fn nearest_and_clamped_k() {
        let idx = small();
        assert_eq!(idx.len(), 3);
        assert_eq!(ids(&idx.query(&[0.9, 0.0], 1, &[]).unwrap()), ["b"]);
        assert_eq!(ids(&idx.query(&[0.9, 0.0], 5, &[]).unwrap()), ["b", "a", "c"]);
        assert_eq!(ids(&idx.query(&[0.9, 0.0], 5, &["b"]).unwrap()), ["a", "c"]);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            VectorIndex::build([("a", vec![0.0]), ("a", vec![1.0])], Metric::Euclidean),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            VectorIndex::build([("a", vec![0.0]), ("b", vec![1.0, 2.0])], Metric::Euclidean),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            VectorIndex::build([("a", vec![0.0, 0.0])], Metric::Cosine),
            Err(Error::ZeroVector(_))
        ));
        assert!(small().query(&[1.0], 1, &[]).is_err());
    }

    #[test]
    fn ties_broken_by_id() {
        let idx = VectorIndex::build(
            [("z", vec![1.0, 0.0]), ("m", vec![-1.0, 0.0]), ("a", vec![0.0, 1.0])],
            Metric::Euclidean,
        )
        .unwrap();
        assert_eq!(ids(&idx.query(&[0.0, 0.0], 3, &[]).unwrap()), ["a", "m", "z"]);
    }

    #[test]
    fn cosine_ranks_by_similarity() {
        let idx = VectorIndex::build(
            [("x", vec![1.0, 0.0]), ("y", vec![1.0, 1.0]), ("w", vec![0.0, 3.0])],
            Metric::Cosine,
        )
        .unwrap();
        let r = idx.query(&[0.0, 2.0], 3, &[]).unwrap();
        assert_eq!(ids(&r), ["w", "y", "x"]);
        assert!((r[0].score - 1.0).abs() < 1e-15);
    }
}
