"""Parameter and multiplication counts for GCN and CARE, the VC-dimension
upper-bound form ``alpha * (d * q)^2`` and the GCN-vs-CARE comparison under
matched parameter counts.

Schedule-form counts are exact Python integers. The constant ``alpha`` is
never given a value: comparisons are reported as alpha-free ratios.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .errors import ConfigError


@dataclass(frozen=True)
class LayerDims:
    h_gcn_in: int
    h_gcn_out: int
    h_set_in: int | None = None
    h_set_out: int | None = None
    h_trans_in: int | None = None
    h_trans_out: int | None = None

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 1):
                raise ConfigError(f"{k} must be a positive integer, got {v!r}")
        if self.h_trans_in is not None and self.h_set_out is not None \
                and self.h_trans_in != self.h_set_out + self.h_gcn_out:
            raise ConfigError(
                f"h_trans_in ({self.h_trans_in}) must equal h_set_out + h_gcn_out "
                f"({self.h_set_out} + {self.h_gcn_out})")

    @property
    def has_care(self) -> bool:
        return None not in (self.h_set_in, self.h_set_out, self.h_trans_in, self.h_trans_out)


@dataclass(frozen=True)
class VcProfile:
    n: int
    layers: tuple[LayerDims, ...]

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError(f"node count must be a positive integer, got {self.n!r}")
        if not self.layers:
            raise ConfigError("profile needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def d(self) -> int:
        return len(self.layers)

    @classmethod
    def gcn(cls, n: int, h1: int, d: int = 1) -> VcProfile:
        return cls(n, tuple(LayerDims(h1, h1) for _ in range(_positive(d, "d"))))

    @classmethod
    def care(cls, n: int, h2: int, d: int = 1) -> VcProfile:
        """Base-width schedule: every dimension ``h2`` except ``h_trans_in = 2 h2``."""
        return cls(n, tuple(LayerDims(h2, h2, h2, h2, 2 * h2, h2) for _ in range(_positive(d, "d"))))


def _positive(v, name: str) -> int:
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    return v


def _care_layers(profile: VcProfile) -> Sequence[LayerDims]:
    for k, layer in enumerate(profile.layers):
        if not layer.has_care:
            raise ConfigError(f"layer {k}: set-encoder and transformation widths are required")
    return profile.layers


def mults_gcn(profile: VcProfile) -> int:
    """Sum over layers of ``n^2 h_in + n h_in h_out``."""
    n = profile.n
    return sum(n * n * l.h_gcn_in + n * l.h_gcn_in * l.h_gcn_out for l in profile.layers)


def mults_care(profile: VcProfile) -> int:
    """Per layer: GCN, scoring layer, set encoder and transformation multiplications.

    Comparisons inside top-k are not multiplications and are not counted.
    """
    n = profile.n
    total = 0
    for l in _care_layers(profile):
        q_gcn = n * n * l.h_gcn_in + n * l.h_gcn_in * l.h_gcn_out
        q_sub = n * n * l.h_gcn_out + n * l.h_gcn_out
        q_set = n * l.h_set_in * l.h_set_out
        q_trans = n * l.h_trans_in * l.h_trans_out
        total += q_gcn + q_sub + q_set + q_trans
    return total


def params_gcn(profile: VcProfile) -> int:
    return sum(l.h_gcn_in * l.h_gcn_out for l in profile.layers)


def params_care(profile: VcProfile) -> int:
    return sum(
        l.h_gcn_in * l.h_gcn_out + l.h_gcn_out + l.h_set_in * l.h_set_out + l.h_trans_in * l.h_trans_out
        for l in _care_layers(profile)
    )


def param_counts(gcn: VcProfile, care: VcProfile) -> tuple[int, int]:
    return params_gcn(gcn), params_care(care)


# closed base-width forms

def q1_base(n: int, h1: float) -> float:
    return n * h1 * h1 + n * n * h1


def q2_base(n: int, h2: int) -> int:
    return 4 * n * h2 * h2 + (2 * n * n + n) * h2


def t1_base(h1: float) -> float:
    return h1 * h1


def t2_base(h2: int) -> int:
    return 4 * h2 * h2 + h2


def match_parameters(h2: int) -> float:
    """GCN width with as many parameters as a width-``h2`` CARE layer: ``sqrt(4 h2^2 + h2)``."""
    if h2 < 1:
        raise ConfigError(f"h2 must be >= 1, got {h2}")
    return math.sqrt(t2_base(h2))


def _radical_gap(h2: int) -> float:
    """``sqrt(4 h2^2 + h2) - 2 h2`` without cancellation."""
    return h2 / (math.sqrt(t2_base(h2)) + 2 * h2)


@dataclass(frozen=True)
class BoundExpr:
    """``alpha * value``; only ratios of two expressions are numbers."""

    value: float

    def __str__(self) -> str:
        v = int(self.value) if float(self.value).is_integer() else self.value
        return f"α·{v}"

    def ratio(self, other: BoundExpr) -> float:
        return self.value / other.value


def vc_upper_bound_expr(q: float, d: int) -> BoundExpr:
    if q < 1 or d < 1:
        raise ConfigError(f"q and d must be >= 1, got q={q}, d={d}")
    return BoundExpr((d * q) ** 2)


@dataclass(frozen=True)
class Theorem1Report:
    n: int
    h2: int
    d: int
    h1: float
    t1: float
    t2: int
    q1: float
    q2: int
    difference: float
    bound_ratio: float
    verdict: bool

    def to_dict(self) -> dict:
        return asdict(self)


def theorem1_check(n: int, h2: int, d: int = 1) -> Theorem1Report:
    """Compare GCN and CARE multiplication counts at equal parameter counts.

    Layers are identical, so ``q(d) = d * q(1)``. The verdict is decided
    exactly: ``q1 > q2`` iff ``4 h2^2 + h2 > (2 h2)^2``.
    """
    for v, name in ((n, "n"), (h2, "h2"), (d, "d")):
        _positive(v, name)
    h1 = match_parameters(h2)
    q1 = d * q1_base(n, h1)
    q2 = d * q2_base(n, h2)
    difference = d * n * n * _radical_gap(h2)
    verdict = t2_base(h2) > (2 * h2) ** 2
    ratio = vc_upper_bound_expr(q1, d).ratio(vc_upper_bound_expr(q2, d))
    return Theorem1Report(n, h2, d, h1, t1_base(h1), t2_base(h2), q1, q2, difference, ratio, verdict)


def sweep(ns: Iterable[int] = range(1, 101), h2s: Iterable[int] = range(1, 257),
          ds: Iterable[int] = (1,)) -> list[Theorem1Report]:
    h2s = list(h2s)
    ds = list(ds)
    return [theorem1_check(n, h2, d) for n in ns for h2 in h2s for d in ds]


TABLE_COLUMNS = ("n", "h2", "d", "t1", "t2", "q1", "q2", "diff", "verdict")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6g}" if not v.is_integer() else f"{v:.1f}"
    return str(v)


def format_table(reports: Sequence[Theorem1Report]) -> str:
    rows = [[_fmt(v) for v in (r.n, r.h2, r.d, r.t1, r.t2, r.q1, r.q2, r.difference, r.verdict)]
            for r in reports]
    widths = [max(len(c), *(len(row[i]) for row in rows)) for i, c in enumerate(TABLE_COLUMNS)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(TABLE_COLUMNS, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)


def reports_json(reports: Sequence[Theorem1Report]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)
