"""Run traces: per-step/per-block records of what the sampler did, plus the
offline oracle computed from replayed full-compute runs.

A light trace stores scalars only (delta norms, decisions, eval counts).  A
heavy trace additionally stores every block's residual delta and the model
output at every step, which is what the oracle and the L1-curve analysis
consume.  Heavy mode is guarded by a memory preflight so oversized configs
fail loudly instead of thrashing.

Serialization: scalar records go to a single JSON document; heavy tensors go
to raw little-endian float32 blobs next to it, described by a JSON sidecar
listing {file, shape, dtype, step, block, kind} per tensor.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .diffusion import NoiseSchedule, SamplerRun, sample
from .errors import ConfigError, MissingDataError, ResourceError
from .metrics import kendall_tau
from .numerics import Matrix

HEAVY_TRACE_BYTE_BUDGET = 512 * 2**20


@dataclass
class StepRecord:
    step: int
    timestep: int
    phase: str  # full | ranked | follow | outside
    flags: list[int]  # 1 = block was recomputed this step
    scores: Optional[list[float]]  # similarity scores; ranked steps only
    delta_l1: list[float]  # mean |output - input| per block (served values)
    delta_l2: list[float]  # Frobenius norm of the served delta per block
    evals: int  # block evaluations paid this step
    eval_total: int  # running total after this step
    degenerate_predictions: int = 0  # predictions served as copies (single-compute cache)


@dataclass
class RunTrace:
    steps: list[StepRecord] = field(default_factory=list)
    total_evals: int = 0
    wall_time_s: float = 0.0
    config: dict = field(default_factory=dict)
    heavy: bool = False
    outputs: Optional[list[Matrix]] = None  # model output per step (heavy)
    deltas: Optional[list[list[Matrix]]] = None  # [step][block] residual delta (heavy)
    final_latent: Optional[Matrix] = None  # set by the recording run, not serialized

    def ranked_flag_schedule(self) -> dict[int, list[int]]:
        """Recompute flags of every ranked step, keyed by step index.

        Feeding this to another run as a policy override replays the exact
        block selections (the trace-driven policy simulator).
        """
        return {r.step: list(r.flags) for r in self.steps if r.phase == "ranked"}

    def to_dict(self) -> dict:
        return {
            "steps": [asdict(r) for r in self.steps],
            "total_evals": self.total_evals,
            "wall_time_s": self.wall_time_s,
            "config": self.config,
            "heavy": self.heavy,
        }


class _BaselineRecorder:
    """Hook that computes every block and records the trace."""

    def __init__(self, num_blocks: int, heavy: bool, store_outputs: bool):
        self.num_blocks = num_blocks
        self.heavy = heavy
        self.store_outputs = store_outputs
        self.trace = RunTrace(heavy=heavy)
        if heavy:
            self.trace.deltas = []
        if store_outputs:
            self.trace.outputs = []
        self._step = -1
        self._t = -1
        self._record: Optional[StepRecord] = None

    def begin_step(self, step_index: int, t: int) -> None:
        self._step = step_index
        self._t = int(t)

    def __call__(self, index: int, x: Matrix, compute) -> Matrix:
        if index == 0:
            self._record = StepRecord(
                step=self._step,
                timestep=self._t,
                phase="full",
                flags=[1] * self.num_blocks,
                scores=None,
                delta_l1=[],
                delta_l2=[],
                evals=0,
                eval_total=0,
            )
            self.trace.steps.append(self._record)
            if self.heavy:
                self.trace.deltas.append([])
        io = compute()
        rec = self._record
        rec.evals += 1
        rec.delta_l1.append(float(np.mean(np.abs(io.delta))))
        rec.delta_l2.append(float(np.linalg.norm(io.delta.astype(np.float64))))
        if self.heavy:
            self.trace.deltas[-1].append(io.delta)
        if index == self.num_blocks - 1:
            self.trace.total_evals += rec.evals
            rec.eval_total = self.trace.total_evals
            if self.store_outputs:
                self.trace.outputs.append(io.output)
        return io.output


def estimate_heavy_bytes(num_steps: int, num_blocks: int, elements: int) -> int:
    # one delta per block per step plus one output per step, float32
    return num_steps * (num_blocks + 1) * elements * 4


def record_baseline(
    net,
    run: SamplerRun,
    sched: NoiseSchedule,
    heavy: bool = False,
    store_outputs: Optional[bool] = None,
) -> RunTrace:
    """Full-compute run through the sampler, recording a trace.

    ``store_outputs`` defaults to ``heavy``; the L1-curve analysis needs
    per-step model outputs, so cmd_analyze forces it on even in light mode.
    """
    if store_outputs is None:
        store_outputs = heavy
    if heavy:
        est = estimate_heavy_bytes(len(run.step_list), net.num_blocks, run.z_init.size)
        if est > HEAVY_TRACE_BYTE_BUDGET:
            raise ResourceError(
                f"heavy trace would need ~{est / 2**20:.0f} MiB "
                f"(budget {HEAVY_TRACE_BYTE_BUDGET / 2**20:.0f} MiB)"
            )
    recorder = _BaselineRecorder(net.num_blocks, heavy, store_outputs)
    t0 = time.perf_counter()
    final = sample(net, run, sched, hooks=recorder)
    recorder.trace.wall_time_s = time.perf_counter() - t0
    recorder.trace.config = {
        "mode": "baseline",
        "steps": len(run.step_list),
        "num_blocks": net.num_blocks,
        "seed": run.seed,
    }
    recorder.trace.final_latent = final
    return recorder.trace


def oracle_similarities(trace: RunTrace, step: int) -> list[float]:
    """Per-block cosine similarity between the true residual deltas at `step`
    and `step + 1` of a recorded full-compute run (the ideal-knowledge ranking
    signal, available only offline)."""
    from .engine import cosine_similarity

    if not trace.heavy or trace.deltas is None:
        raise MissingDataError("oracle similarities need a heavy trace with stored deltas")
    if step < 0 or step + 1 >= len(trace.deltas):
        raise ConfigError(f"step {step} has no successor in the trace")
    return [
        cosine_similarity(a, b) for a, b in zip(trace.deltas[step], trace.deltas[step + 1])
    ]


def ranking_fidelity(predicted, oracle_scores) -> float:
    """Kendall tau between the ascending-score block orderings of a policy's
    predicted similarities and the oracle similarities.

    Orderings, not raw values: a proxy may be globally biased yet still rank
    blocks identically, and ranking is all the selector consumes.
    """
    pred_scores = np.asarray(predicted.scores, dtype=np.float64)
    oracle = np.asarray(oracle_scores, dtype=np.float64)
    if pred_scores.shape != oracle.shape:
        raise ConfigError("predicted and oracle score lists differ in length")
    order_pred = list(np.argsort(pred_scores, kind="stable"))
    order_oracle = list(np.argsort(oracle, kind="stable"))
    return kendall_tau([int(i) for i in order_pred], [int(i) for i in order_oracle])


def save_trace(trace: RunTrace, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sidecar = []
    if trace.heavy and trace.deltas is not None:
        for s, per_block in enumerate(trace.deltas):
            for b, delta in enumerate(per_block):
                fname = f"delta_s{s:04d}_b{b:03d}.f32"
                delta.astype("<f4").tofile(directory / fname)
                sidecar.append(
                    {"file": fname, "shape": list(delta.shape), "dtype": "f32le",
                     "step": s, "block": b, "kind": "delta"}
                )
    if trace.outputs is not None:
        for s, out in enumerate(trace.outputs):
            fname = f"output_s{s:04d}.f32"
            out.astype("<f4").tofile(directory / fname)
            sidecar.append(
                {"file": fname, "shape": list(out.shape), "dtype": "f32le",
                 "step": s, "block": None, "kind": "output"}
            )
    doc = trace.to_dict()
    doc["stored_outputs"] = trace.outputs is not None
    (directory / "trace.json").write_text(json.dumps(doc, indent=1))
    if sidecar:
        (directory / "tensors.json").write_text(json.dumps(sidecar, indent=1))


def load_trace(directory) -> RunTrace:
    directory = Path(directory)
    doc = json.loads((directory / "trace.json").read_text())
    trace = RunTrace(
        steps=[StepRecord(**r) for r in doc["steps"]],
        total_evals=doc["total_evals"],
        wall_time_s=doc["wall_time_s"],
        config=doc["config"],
        heavy=doc["heavy"],
    )
    sidecar_path = directory / "tensors.json"
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
        deltas: dict[tuple[int, int], Matrix] = {}
        outputs: dict[int, Matrix] = {}
        for entry in sidecar:
            arr = np.fromfile(directory / entry["file"], dtype="<f4").reshape(entry["shape"])
            if entry["kind"] == "delta":
                deltas[(entry["step"], entry["block"])] = arr
            else:
                outputs[entry["step"]] = arr
        if deltas:
            n_steps = max(s for s, _ in deltas) + 1
            n_blocks = max(b for _, b in deltas) + 1
            trace.deltas = [[deltas[(s, b)] for b in range(n_blocks)] for s in range(n_steps)]
        if outputs:
            trace.outputs = [outputs[s] for s in range(max(outputs) + 1)]
    return trace
