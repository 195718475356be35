//! Row-parallel execution helpers.
//!
//! Every kernel in the crate works on row-major grids and splits work by grid
//! row. With the `parallel` feature the rows are distributed over the rayon
//! pool; without it (or with [`Exec::Serial`]) the same closures run in a plain
//! loop. Reductions always sum per-row partials in row order, so serial and
//! parallel runs produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for grid kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Serial,
    /// Falls back to serial execution when the `parallel` feature is disabled.
    Parallel,
}

impl Default for Exec {
    /// Parallel when the feature is on and the pool has more than one thread.
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        if rayon::current_num_threads() > 1 {
            return Exec::Parallel;
        }
        Exec::Serial
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Calls `f(j, row)` for every row `j` of a row-major buffer with `nx` columns.
pub fn for_each_row<F>(exec: Exec, out: &mut [f64], nx: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        out.par_chunks_mut(nx)
            .enumerate()
            .for_each(|(j, row)| f(j, row));
        return;
    }
    let _ = exec;
    for (j, row) in out.chunks_mut(nx).enumerate() {
        f(j, row);
    }
}

/// Like [`for_each_row`] but over two output buffers at once.
pub fn for_each_row2<F>(exec: Exec, a: &mut [f64], b: &mut [f64], nx: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        a.par_chunks_mut(nx)
            .zip(b.par_chunks_mut(nx))
            .enumerate()
            .for_each(|(j, (ra, rb))| f(j, ra, rb));
        return;
    }
    let _ = exec;
    for (j, (ra, rb)) in a.chunks_mut(nx).zip(b.chunks_mut(nx)).enumerate() {
        f(j, ra, rb);
    }
}

/// Like [`for_each_row`] but over three output buffers at once.
pub fn for_each_row3<F>(exec: Exec, a: &mut [f64], b: &mut [f64], c: &mut [f64], nx: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64], &mut [f64]) + Sync + Send,
{
    debug_assert!(a.len() == b.len() && b.len() == c.len());
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        a.par_chunks_mut(nx)
            .zip(b.par_chunks_mut(nx))
            .zip(c.par_chunks_mut(nx))
            .enumerate()
            .for_each(|(j, ((ra, rb), rc))| f(j, ra, rb, rc));
        return;
    }
    let _ = exec;
    for (j, ((ra, rb), rc)) in a
        .chunks_mut(nx)
        .zip(b.chunks_mut(nx))
        .zip(c.chunks_mut(nx))
        .enumerate()
    {
        f(j, ra, rb, rc);
    }
}

/// Sums `f(j)` over `0..rows` with a fixed association order.
pub fn sum_rows<F>(exec: Exec, rows: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        let partials: Vec<f64> = (0..rows).into_par_iter().map(&f).collect();
        return partials.iter().sum();
    }
    let _ = exec;
    let mut total = 0.0;
    for j in 0..rows {
        total += f(j);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_parallel_sums_agree_bitwise() {
        let data: Vec<f64> = (0..10_000).map(|k| ((k as f64) * 0.37).sin() * 1e3).collect();
        let nx = 100;
        let row = |j: usize| data[j * nx..(j + 1) * nx].iter().map(|v| v * v).sum::<f64>();
        let a = sum_rows(Exec::Serial, 100, row);
        let b = sum_rows(Exec::Parallel, 100, row);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn rows_are_visited_once() {
        for exec in [Exec::Serial, Exec::Parallel] {
            let mut buf = vec![0.0; 12];
            for_each_row(exec, &mut buf, 4, |j, row| {
                for v in row.iter_mut() {
                    *v += j as f64;
                }
            });
            assert_eq!(buf, vec![0., 0., 0., 0., 1., 1., 1., 1., 2., 2., 2., 2.]);
        }
    }
}
