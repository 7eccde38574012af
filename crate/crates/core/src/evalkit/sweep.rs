use std::fmt::Write as _;

use serde::Serialize;

use super::{evaluate, EvalQuery, PairMode, SimilarityContext};
use crate::blend::BlendParams;
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::par::Execution;

/// Mean AILS for every (n1, n2) grid point; `cells[i][j]` belongs to
/// `n1[i]`, `n2[j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMatrix {
    pub n1: Vec<usize>,
    pub n2: Vec<usize>,
    pub n3: usize,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl SweepMatrix {
    /// Rows are n1 values, columns n2 values; the corner cell is `n1\n2`.
    /// Cells where every query was skipped are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n1\\n2");
        for c in &self.n2 {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (r, row) in self.n1.iter().zip(&self.cells) {
            write!(out, "{r}").unwrap();
            for cell in row {
                match cell {
                    Some(v) => write!(out, ",{v}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates `run` at every grid point with `k = n3`. Grid points run under
/// `exec`; queries within a point run sequentially.
#[allow(clippy::too_many_arguments)]
pub fn sweep_n1_n2<F>(
    n1_values: &[usize],
    n2_values: &[usize],
    n3: usize,
    queries: &[EvalQuery],
    ctx: &SimilarityContext,
    catalog: &Catalog,
    mode: PairMode,
    exec: Execution,
    run: F,
) -> Result<SweepMatrix>
where
    F: Fn(BlendParams, &EvalQuery) -> Result<Vec<String>> + Sync,
{
    if n1_values.is_empty() || n2_values.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    let grid: Vec<BlendParams> = n1_values
        .iter()
        .flat_map(|&n1| n2_values.iter().map(move |&n2| BlendParams { n1, n2, n3 }))
        .collect();
    for p in &grid {
        p.validate()?;
    }
    let means = exec.map(&grid, |&p| {
        evaluate(
            |q, _k| run(p, q),
            queries,
            n3,
            ctx,
            catalog,
            mode,
            Execution::Sequential,
        )
        .mean_ails
    });
    let cells = means.chunks(n2_values.len()).map(<[_]>::to_vec).collect();
    Ok(SweepMatrix {
        n1: n1_values.to_vec(),
        n2: n2_values.to_vec(),
        n3,
        cells,
    })
}
