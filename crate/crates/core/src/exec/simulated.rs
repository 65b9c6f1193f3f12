//! Deterministic in-process backend with a closed-form performance model.

use std::collections::BTreeMap;

use rust_decimal::prelude::FromPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{
    check_kernel, finalize_job, format_metric, gemm_flops, Backend, Capabilities, ExecError, JobCompletion, JobId,
    JobPoll, JobRecord, JobRequest, TileShape,
};
use crate::telemetry::Tick;
use crate::tuning::Params;

/// How a family of kernels behaves on the modelled GPU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    /// Fraction of peak reached at the optimal tile parameters.
    pub base_eff: f64,
    /// Tiled kernels are sensitive to tile parameters and shared memory.
    pub tiled: bool,
    /// Kernel carries a boundary defect and produces wrong results.
    pub faulty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfModel {
    pub peak_gflops: f64,
    pub labels: BTreeMap<String, LabelModel>,
    pub fallback: LabelModel,
    pub optimum: Params,
    /// Efficiency lost per octave away from the optimum in each parameter.
    pub sensitivity: f64,
    pub smem_limit_bytes: u64,
    pub element_bytes: u64,
    pub buffers: u64,
    pub problem: [u64; 3],
    pub repeats: u32,
    pub setup_s: f64,
    pub seconds_per_tick: f64,
    pub queue_ticks: Tick,
    pub verify_shape: [usize; 3],
}

pub const LABEL_LADDER: [&str; 6] = [
    "Baseline",
    "Warp optimization",
    "Register blocking",
    "Double buffering",
    "Read-only cache",
    "Boundary condition",
];

pub const LIBRARY_LABEL: &str = "cuBLAS+Tensor Core";

impl PerfModel {
    /// A DGEMM on one A100-class GPU (7.8 TFLOPS FP64), 8192 cubed.
    pub fn case_study() -> Self {
        let tiled = |base_eff| LabelModel { base_eff, tiled: true, faulty: false };
        let mut labels = BTreeMap::new();
        labels.insert("Baseline".to_string(), tiled(0.2310));
        labels.insert("Warp optimization".to_string(), tiled(0.2421));
        labels.insert("Register blocking".to_string(), tiled(0.2802));
        labels.insert("Double buffering".to_string(), tiled(0.4314));
        labels.insert("Read-only cache".to_string(), tiled(0.4550));
        labels.insert(
            "Boundary condition".to_string(),
            LabelModel { base_eff: 0.4600, tiled: true, faulty: true },
        );
        labels.insert(LIBRARY_LABEL.to_string(), LabelModel { base_eff: 0.7524, tiled: false, faulty: false });
        let optimum = [("BLOCK_M", 64), ("BLOCK_N", 64), ("BLOCK_K", 16), ("THREAD_M", 4), ("THREAD_N", 4)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            peak_gflops: 7800.0,
            labels,
            fallback: tiled(0.2000),
            optimum,
            sensitivity: 0.25,
            smem_limit_bytes: 49152,
            element_bytes: 8,
            buffers: 2,
            problem: [8192, 8192, 8192],
            repeats: 5,
            setup_s: 240.0,
            seconds_per_tick: 60.0,
            queue_ticks: 1,
            verify_shape: [7, 5, 3],
        }
    }

    pub fn label(&self, label: &str) -> LabelModel {
        self.labels.get(label).copied().unwrap_or(self.fallback)
    }

    fn param(&self, params: &Params, name: &str) -> u64 {
        u64::from(params.get(name).or_else(|| self.optimum.get(name)).copied().unwrap_or(1))
    }

    /// Shared-memory bytes the tile configuration needs.
    pub fn smem_footprint(&self, params: &Params) -> u64 {
        let (bm, bn, bk) = (self.param(params, "BLOCK_M"), self.param(params, "BLOCK_N"), self.param(params, "BLOCK_K"));
        self.buffers * (bm * bk + bk * bn) * self.element_bytes
    }

    /// 1 at the optimum, decaying with each octave of distance.
    pub fn tile_match(&self, params: &Params) -> Result<f64, ExecError> {
        if let Some(unknown) = params.keys().find(|k| !self.optimum.contains_key(*k)) {
            return Err(ExecError::UnknownParams(unknown.clone()));
        }
        let mut factor = 1.0;
        for (name, &opt) in &self.optimum {
            let v = params.get(name).copied().unwrap_or(opt).max(1);
            let octaves = (f64::from(v) / f64::from(opt)).log2().abs();
            factor *= 1.0 / (1.0 + self.sensitivity * octaves);
        }
        Ok(factor)
    }

    pub fn gflops(&self, label: &str, params: &Params) -> Result<f64, ExecError> {
        let model = self.label(label);
        if !model.tiled {
            return Ok(self.peak_gflops * model.base_eff);
        }
        let bytes = self.smem_footprint(params);
        if bytes > self.smem_limit_bytes {
            return Err(ExecError::ResourceOverflow { bytes, limit: self.smem_limit_bytes });
        }
        Ok(self.peak_gflops * model.base_eff * self.tile_match(params)?)
    }

    pub fn kernel_seconds(&self, gflops: f64) -> Result<f64, ExecError> {
        let [m, n, k] = self.problem;
        Ok(gemm_flops(m, n, k)? as f64 / (gflops * 1e9))
    }

    /// Wall time billed for a run, in whole milliseconds.
    pub fn elapsed_s(&self, kernel_s: f64) -> Decimal {
        let s = self.setup_s + f64::from(self.repeats) * kernel_s;
        Decimal::from_f64(s).unwrap_or_default().round_dp(3)
    }

    pub fn ticks_for(&self, elapsed_s: Decimal) -> Tick {
        let secs = elapsed_s.to_string().parse::<f64>().unwrap_or(0.0);
        ((secs / self.seconds_per_tick).ceil() as Tick).max(1)
    }

    /// Runs the model for one request. Failures that happen "on the device"
    /// become an error completion; bad requests are rejected outright.
    pub fn run(&self, request: &JobRequest, seed: u64) -> Result<(JobCompletion, Tick), ExecError> {
        let model = self.label(&request.label);
        if model.tiled {
            self.tile_match(&request.params)?;
        }
        let started = request.submitted + self.queue_ticks;
        match self.gflops(&request.label, &request.params) {
            Err(ExecError::ResourceOverflow { bytes, limit }) => {
                let elapsed = self.elapsed_s(0.0);
                let ticks = self.ticks_for(elapsed);
                let msg = ExecError::ResourceOverflow { bytes, limit }.to_string();
                Ok((
                    JobCompletion {
                        started,
                        ended: started + ticks,
                        elapsed_s: elapsed,
                        stdout: String::new(),
                        stderr: format!("kernel launch failed: too many resources requested ({bytes} > {limit})\n"),
                        error: Some(msg),
                        charge: true,
                    },
                    started + ticks,
                ))
            }
            Err(e) => Err(e),
            Ok(g) => {
                let tiles = TileShape::new(
                    self.param(&request.params, "BLOCK_M") as usize,
                    self.param(&request.params, "BLOCK_N") as usize,
                    self.param(&request.params, "BLOCK_K") as usize,
                );
                let [vm, vn, vk] = self.verify_shape;
                let rel: f64 = check_kernel(vm, vn, vk, tiles, model.faulty, seed ^ request.id)?;
                let kernel_s = self.kernel_seconds(g)?;
                let elapsed = self.elapsed_s(kernel_s);
                let ticks = self.ticks_for(elapsed);
                let stdout = [
                    format_metric("gflops", g),
                    format_metric("kernel_s", kernel_s),
                    format_metric("error_norm", rel),
                ]
                .join("\n");
                Ok((
                    JobCompletion {
                        started,
                        ended: started + ticks,
                        elapsed_s: elapsed,
                        stdout: stdout + "\n",
                        stderr: String::new(),
                        error: None,
                        charge: true,
                    },
                    started + ticks,
                ))
            }
        }
    }
}

/// Runs a request to completion against the model and bills it.
pub fn submit_simulated(
    model: &PerfModel,
    request: &JobRequest,
    seed: u64,
    rate: Decimal,
) -> Result<JobRecord, ExecError> {
    let (completion, _) = model.run(request, seed)?;
    finalize_job(request, "simulated", completion, rate, None)
}

#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    pub model: PerfModel,
    seed: u64,
    jobs: BTreeMap<JobId, (Tick, JobCompletion)>,
}

impl SimulatedBackend {
    pub fn new(model: PerfModel, seed: u64) -> Self {
        Self { model, seed, jobs: BTreeMap::new() }
    }
}

impl Backend for SimulatedBackend {
    fn tag(&self) -> &'static str {
        "simulated"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { max_gpus: 8, supports_remote: false }
    }

    fn submit(&mut self, request: &JobRequest) -> Result<(), ExecError> {
        let (completion, ready) = self.model.run(request, self.seed)?;
        self.jobs.insert(request.id, (ready, completion));
        Ok(())
    }

    fn poll(&mut self, id: JobId, now: Tick) -> Result<JobPoll, ExecError> {
        let (ready, c) = self.jobs.get(&id).ok_or(ExecError::UnknownJob(id))?;
        if now >= *ready {
            let c = c.clone();
            self.jobs.remove(&id);
            Ok(JobPoll::Finished(c))
        } else if now >= c.started {
            Ok(JobPoll::Running)
        } else {
            Ok(JobPoll::Pending)
        }
    }
}
