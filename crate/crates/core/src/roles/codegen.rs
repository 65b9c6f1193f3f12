//! Source text for scripted candidates. The simulated backend only reads the
//! label and parameters; the text exists for linting, review and publishing.

use crate::exec::SourceFile;
use crate::tuning::Params;

pub const KERNEL_FILE: &str = "gemm.cu";
pub const MAKEFILE: &str = "Makefile";

fn p(params: &Params, name: &str, default: u32) -> u32 {
    params.get(name).copied().unwrap_or(default)
}

fn tiled_kernel(label: &str, params: &Params) -> String {
    let (bm, bn, bk) = (p(params, "BLOCK_M", 64), p(params, "BLOCK_N", 64), p(params, "BLOCK_K", 16));
    let (tm, tn) = (p(params, "THREAD_M", 4), p(params, "THREAD_N", 4));
    let buffers = if label == "Double buffering" || label == "Read-only cache" { 2 } else { 1 };
    let load = if label == "Read-only cache" { "__ldg(&A[a_idx])" } else { "A[a_idx]" };
    let guard = if label == "Boundary condition" {
        "        /* full tiles only */\n".to_string()
    } else {
        "        if (k0 + kk >= K) break;\n".to_string()
    };
    format!(
        "// {label}
#define BLOCK_M {bm}
#define BLOCK_N {bn}
#define BLOCK_K {bk}
#define THREAD_M {tm}
#define THREAD_N {tn}
#define NBUF {buffers}

__global__ void dgemm_tiled(int M, int N, int K, double alpha,
                            const double *A, int lda, const double *B, int ldb,
                            double beta, double *C, int ldc)
{{
    __shared__ double As[NBUF][BLOCK_K][BLOCK_M];
    __shared__ double Bs[NBUF][BLOCK_K][BLOCK_N];
    double acc[THREAD_M][THREAD_N] = {{{{0.0}}}};
    const int row0 = blockIdx.y * BLOCK_M + threadIdx.y * THREAD_M;
    const int col0 = blockIdx.x * BLOCK_N + threadIdx.x * THREAD_N;
    for (int k0 = 0; k0 < K; k0 += BLOCK_K) {{
        const int buf = (k0 / BLOCK_K) % NBUF;
        for (int kk = 0; kk < BLOCK_K; kk++) {{
            int a_idx = (blockIdx.y * BLOCK_M + threadIdx.y) * lda + k0 + kk;
            As[buf][kk][threadIdx.y] = {load};
            Bs[buf][kk][threadIdx.x] = B[(k0 + kk) * ldb + blockIdx.x * BLOCK_N + threadIdx.x];
        }}
        __syncthreads();
        for (int kk = 0; kk < BLOCK_K; kk++) {{
{guard}            for (int i = 0; i < THREAD_M; i++)
                for (int j = 0; j < THREAD_N; j++)
                    acc[i][j] += As[buf][kk][threadIdx.y * THREAD_M + i] * Bs[buf][kk][threadIdx.x * THREAD_N + j];
        }}
        __syncthreads();
    }}
    for (int i = 0; i < THREAD_M; i++)
        for (int j = 0; j < THREAD_N; j++)
            if (row0 + i < M && col0 + j < N)
                C[(row0 + i) * ldc + col0 + j] = alpha * acc[i][j] + beta * C[(row0 + i) * ldc + col0 + j];
}}
"
    )
}

fn library_kernel() -> String {
    "// cuBLAS+Tensor Core
#include <cublas_v2.h>

void dgemm_tuned(int M, int N, int K, double alpha,
                 const double *A, int lda, const double *B, int ldb,
                 double beta, double *C, int ldc)
{
    cublasHandle_t handle;
    cublasCreate(&handle);
    cublasSetMathMode(handle, CUBLAS_TENSOR_OP_MATH);
    cublasDgemm(handle, CUBLAS_OP_N, CUBLAS_OP_N, N, M, K, &alpha, B, ldb, A, lda, &beta, C, ldc);
    cublasDestroy(handle);
}
"
    .to_string()
}

fn makefile(library: bool) -> String {
    let libs = if library { " -lcublas" } else { "" };
    format!("NVCC ?= nvcc\nNVFLAGS = -O3 -arch=sm_70\n\ngemm: gemm.cu main.cu\n\t$(NVCC) $(NVFLAGS) -o $@ $^{libs}\n")
}

/// Kernel and makefile for a candidate. The library label produces a
/// cuBLAS call; every other label a tiled kernel.
pub fn candidate_sources(label: &str, params: &Params) -> Vec<SourceFile> {
    let library = label.to_ascii_lowercase().contains("cublas");
    let kernel = if library { library_kernel() } else { tiled_kernel(label, params) };
    vec![SourceFile::new(KERNEL_FILE, kernel), SourceFile::new(MAKEFILE, makefile(library))]
}
