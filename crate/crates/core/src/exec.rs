//! Execution policy for the data-parallel inner loops.
//!
//! With the `parallel` feature (default) [`Exec::Parallel`] fans work out over
//! rayon; without it both variants run sequentially. Results are always
//! returned in input order so the two modes are interchangeable.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Runs `f` on each `chunk`-sized piece of `out` together with the index
    /// of the piece.
    pub fn for_each_chunk_mut<T, F>(self, out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = Exec::Sequential.map_range(1000, |i| i * i);
        let par = Exec::Parallel.map_range(1000, |i| i * i);
        assert_eq!(seq, par);

        let mut a = vec![0usize; 100];
        let mut b = vec![0usize; 100];
        Exec::Sequential.for_each_chunk_mut(&mut a, 7, |i, c| c.iter_mut().for_each(|x| *x = i));
        Exec::Parallel.for_each_chunk_mut(&mut b, 7, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(a, b);
    }
}
