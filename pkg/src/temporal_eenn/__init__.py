"""Early-exit inference with temporally informed termination policies."""

from .bench import (Benchmark, RunMetrics, SweepTable, default_thresholds, evaluate,
                    labeling_comparison, make_benchmark, report_csv, run_sweeps, sweep,
                    tune_confidence)
from .exit_graph import (ExitGraph, Layer, PartialRun, ReplayGraph, build_desk_model,
                         cumulative_cost, run_full, run_to_exit)
from .model_io import load_model, save_model
from .policies import (FULL_VOTE, Policy, PolicyConfig, SceneState, StepResult, confidence_step,
                       dd_step, majority_vote, single_exit_step, tp_select, tp_step)
from .stream_gen import StreamConfig, StreamSample, generate_stream, load_stream, save_stream

__version__ = "0.1.0"
