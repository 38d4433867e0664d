use dekan_core::scalar::*;

fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

#[test]
fn matmul_matches_naive_with_transposes() {
    let (m, k, n) = (3, 4, 5);
    let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
    let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
    let expect = naive(m, k, n, &a, &b);

    let mut c = vec![0.0; m * n];
    matmul(false, false, m, k, n, &a, &b, 0.0, &mut c);
    for (x, y) in c.iter().zip(&expect) {
        assert!((x - y).abs() < 1e-12);
    }

    let mut at = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            at[p * m + i] = a[i * k + p];
        }
    }
    let mut bt = vec![0.0; k * n];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    let mut c2 = vec![1.0; m * n];
    matmul(true, true, m, k, n, &at, &bt, 0.0, &mut c2);
    for (x, y) in c2.iter().zip(&expect) {
        assert!((x - y).abs() < 1e-12);
    }
}
