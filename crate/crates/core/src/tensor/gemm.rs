use rayon::prelude::*;

use super::Scalar;

/// Read-only strided view of a matrix stored in a slice.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        MatRef {
            data,
            rs: cols,
            cs: 1,
        }
    }

    /// The transpose of a row-major `[rows, cols]` matrix.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        MatRef {
            data,
            rs: 1,
            cs: cols,
        }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "gemm operand out of bounds");
        }
    }
}

// Rows of C per parallel task. Fixed so results never depend on the thread count.
const ROW_BLOCK: usize = 32;
const PAR_THRESHOLD: usize = 1 << 18;

/// `c[m, n] = a[m, k] · b[k, n]`, with `c` contiguous row-major.
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<T>,
    b: MatRef<T>,
    c: &mut [T],
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    a.check(m, k);
    b.check(k, n);
    let run = |row0: usize, rows: usize, c_block: &mut [T]| unsafe {
        T::gemm_raw(
            rows,
            k,
            n,
            a.data.as_ptr().add(row0 * a.rs),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            T::zero(),
            c_block.as_mut_ptr(),
            n as isize,
            1,
        )
    };
    if m * n * k < PAR_THRESHOLD || m <= ROW_BLOCK || rayon::current_num_threads() == 1 {
        run(0, m, c);
    } else {
        c.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(i, block)| run(i * ROW_BLOCK, block.len() / n, block));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // [2,3]
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // [3,4]
        let mut c = vec![0.0; 8];
        gemm(
            2,
            3,
            4,
            MatRef::row_major(&a, 3),
            MatRef::row_major(&b, 4),
            &mut c,
        );
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // aᵀ·a through a transposed view: [3,2]·[2,3]
        let mut ata = vec![0.0; 9];
        gemm(
            3,
            2,
            3,
            MatRef::transposed(&a, 3),
            MatRef::row_major(&a, 3),
            &mut ata,
        );
        assert_eq!(ata[0], a[0] * a[0] + a[3] * a[3]);
        assert_eq!(ata[5], a[1] * a[2] + a[4] * a[5]);
    }
}
