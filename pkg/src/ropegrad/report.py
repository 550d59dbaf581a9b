"""Result records produced by the gradient pipelines and the benchmark."""

from dataclasses import asdict, dataclass, field

import numpy as np

BENCH_FIELDS = ("n", "d", "mode", "eps", "degree", "rank", "method", "wall_ns", "linf_err")


@dataclass
class GradReport:
    g_exact: np.ndarray = None
    g_approx: np.ndarray = None
    linf_diff: float = None
    stage_timings: dict = field(default_factory=dict)  # stage -> ns
    config_echo: dict = field(default_factory=dict)
    seed: int = None
    stage_errors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.linf_diff is None and self.g_exact is not None and self.g_approx is not None:
            self.linf_diff = float(np.max(np.abs(self.g_exact - self.g_approx)))

    def to_json(self):
        out = {}
        if self.g_exact is not None:
            out["g_exact"] = np.asarray(self.g_exact).tolist()
        if self.g_approx is not None:
            out["g_approx"] = np.asarray(self.g_approx).tolist()
        if self.linf_diff is not None:
            out["linf_diff"] = self.linf_diff
        out["stage_timings"] = {k: int(v) for k, v in self.stage_timings.items()}
        out["seed"] = self.seed
        out["config_echo"] = self.config_echo
        if self.stage_errors:
            out["stage_errors"] = self.stage_errors
        return out


@dataclass
class BenchRow:
    n: int
    d: int
    mode: str
    eps: float
    degree: int
    rank: int
    method: str
    wall_ns: int
    linf_err: float = None

    def as_record(self):
        rec = asdict(self)
        return ["" if rec[k] is None else rec[k] for k in BENCH_FIELDS]
