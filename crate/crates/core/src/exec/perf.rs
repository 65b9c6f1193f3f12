use super::ExecError;
use crate::scalar::Scalar;

/// Dense GEMM operation count, `2 * M * N * K`.
pub fn gemm_flops(m: u64, n: u64, k: u64) -> Result<u64, ExecError> {
    if m == 0 || n == 0 || k == 0 {
        return Err(ExecError::NonPositiveDim);
    }
    2u64.checked_mul(m)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_mul(k))
        .ok_or(ExecError::NonPositiveDim)
}

pub fn gflops<T: Scalar>(flops: u64, seconds: T) -> T {
    T::from_f64_lossy(flops as f64) / seconds / T::from_f64_lossy(1e9)
}

/// `100 * gflops / peak`.
pub fn efficiency_pct<T: Scalar>(gflops: T, peak_gflops: T) -> Result<T, ExecError> {
    if !(peak_gflops > T::zero()) {
        return Err(ExecError::NonPositivePeak);
    }
    Ok(T::from_f64_lossy(100.0) * gflops / peak_gflops)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flop_counts() {
        assert_eq!(gemm_flops(1, 1, 1).unwrap(), 2);
        assert_eq!(gemm_flops(1024, 1024, 1024).unwrap(), 2_147_483_648);
        assert_eq!(gemm_flops(0, 3, 3), Err(ExecError::NonPositiveDim));
    }

    #[test]
    fn efficiency_examples() {
        let e = efficiency_pct(1803.7_f64, 7800.0).unwrap();
        assert!((e - 23.10).abs() <= 0.05, "{e}");
        assert_eq!(efficiency_pct(0.0_f64, 7800.0).unwrap(), 0.0);
        assert_eq!(efficiency_pct(7800.0_f64, 7800.0).unwrap(), 100.0);
        assert_eq!(efficiency_pct(1.0_f32, 0.0), Err(ExecError::NonPositivePeak));
    }

    #[test]
    fn gflops_from_seconds() {
        let flops = gemm_flops(1024, 1024, 1024).unwrap();
        assert!((gflops(flops, 1.0_f64) - 2.147483648).abs() < 1e-12);
    }
}
