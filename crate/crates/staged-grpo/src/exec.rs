//! Execution mode: sequential or rayon data-parallel.
//!
//! All fan-outs in the crate (rollout batches, per-task evaluation, per-output
//! gradient accumulation) go through [`map_indexed`]: an index range is mapped
//! to results and the reduction happens afterwards in index order. Because
//! every worker derives its own RNG stream from its index, the parallel path
//! produces bit-identical results to the sequential one; `Parallel` only
//! changes wall-clock time. Without the `parallel` feature the parallel mode
//! degrades to sequential execution.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        matches!(self, ExecMode::Parallel) && cfg!(feature = "parallel")
    }

    /// Label recorded in run metadata.
    pub fn label(self) -> &'static str {
        if self.is_parallel() {
            "parallel"
        } else {
            "sequential"
        }
    }
}

impl std::str::FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(ExecMode::Sequential),
            "parallel" => Ok(ExecMode::Parallel),
            other => Err(format!("unknown mode `{other}` (sequential|parallel)")),
        }
    }
}

/// Map `0..n` through `f`, in parallel when the mode and feature allow it.
/// Results come back in index order either way.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let seq = map_indexed(ExecMode::Sequential, 64, |i| i * i);
        let par = map_indexed(ExecMode::Parallel, 64, |i| i * i);
        assert_eq!(seq, par);
    }
}
