"""Stratum keys and the canonical cell encoding.

A full cell is a flat tuple of tokens in temporal order::

    (z_1, x_1, z_2, x_2, ..., x_{T-1}, z_T)

where each ``z_t`` is an ``int`` and each ``x_t`` is a tuple of ints (the
covariate vector at time ``t``, treated as one atomic value).  Treatment
``z_t`` sits at index ``2*(t-1)`` and covariate ``x_t`` at ``2*t - 1``.
Every full-history stratum is a prefix of this tuple, so counting and
conditioning reduce to prefix sums.

Canonical key strings
---------------------
Vectors are written with ``:`` between components, sequences with ``,``::

    FullHistory               t=2|z=1|x=0
    FullHistoryWithTreatment  t=2|z=1|x=0|zt=1
    CovariateKey              t=1|z=1|x=|xt=1
    Markov                    t=3|zp=1|xp=0
    MarkovWithTreatment       t=3|zp=1|xp=0|zt=1
    FullCell                  z=1,0,1|x=0,1

An empty history is written as ``z=|x=``; at ``t=1`` a Markov key has
``zp=|xp=``.  A covariate vector with no components is written ``-``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

Cov = tuple[int, ...]
Cell = tuple

__all__ = [
    "FullHistory",
    "FullHistoryWithTreatment",
    "CovariateKey",
    "Markov",
    "MarkovWithTreatment",
    "FullCell",
    "StratumKey",
    "interleave",
    "split_tokens",
    "cell_treatments",
    "cell_covariates",
    "prefix_variables",
    "parse_key",
]


def interleave(z, x) -> tuple:
    """Merge treatment and covariate sequences into temporal token order."""
    z = tuple(z)
    x = tuple(tuple(v) for v in x)
    if not (len(x) == len(z) or len(x) == len(z) - 1):
        raise ValueError(f"cannot interleave {len(z)} treatments with {len(x)} covariates")
    out = []
    for i, zt in enumerate(z):
        out.append(int(zt))
        if i < len(x):
            out.append(x[i])
    return tuple(out)


def split_tokens(tokens) -> tuple[tuple[int, ...], tuple[Cov, ...]]:
    return tuple(tokens[0::2]), tuple(tokens[1::2])


def cell_treatments(cell) -> tuple[int, ...]:
    return tuple(cell[0::2])


def cell_covariates(cell) -> tuple[Cov, ...]:
    return tuple(cell[1::2])


def prefix_variables(tokens) -> dict[str, int]:
    """Named variables (``z1``, ``x1_2``...) available in a token prefix."""
    out = {}
    for i, tok in enumerate(tokens):
        s = i // 2 + 1
        if i % 2 == 0:
            out[f"z{s}"] = tok
        else:
            for j, v in enumerate(tok, start=1):
                out[f"x{s}_{j}"] = v
    return out


def _fmt_cov(v: Cov) -> str:
    return ":".join(str(c) for c in v) if v else "-"


def _fmt_z(z) -> str:
    return ",".join(str(v) for v in z)


def _fmt_x(x) -> str:
    return ",".join(_fmt_cov(v) for v in x)


@dataclass(frozen=True, order=True)
class FullHistory:
    """Stratum ``(z_1^{t-1}, x_1^{t-1})``: the history before treatment ``z_t``."""

    t: int
    z: tuple[int, ...] = ()
    x: tuple[Cov, ...] = ()

    def __post_init__(self):
        if len(self.z) != self.t - 1 or len(self.x) != self.t - 1:
            raise ValueError(f"history at t={self.t} needs {self.t - 1} treatments and covariates")

    @classmethod
    def from_tokens(cls, tokens) -> "FullHistory":
        z, x = split_tokens(tokens)
        return cls(len(z) + 1, z, x)

    @property
    def tokens(self) -> tuple:
        return interleave(self.z, self.x) if self.t > 1 else ()

    def matches(self, cell) -> bool:
        p = self.tokens
        return cell[: len(p)] == p

    def with_treatment(self, zt: int) -> "FullHistoryWithTreatment":
        return FullHistoryWithTreatment(self.t, self.z, self.x, zt)

    def variables(self) -> dict[str, int]:
        out = prefix_variables(self.tokens)
        out["t"] = self.t
        _add_prev(out, self.t)
        return out

    def __str__(self):
        return f"t={self.t}|z={_fmt_z(self.z)}|x={_fmt_x(self.x)}"


@dataclass(frozen=True, order=True)
class FullHistoryWithTreatment:
    """Stratum ``(z_1^{t-1}, x_1^{t-1}, z_t)``."""

    t: int
    z: tuple[int, ...]
    x: tuple[Cov, ...]
    zt: int

    def __post_init__(self):
        if len(self.z) != self.t - 1 or len(self.x) != self.t - 1:
            raise ValueError(f"history at t={self.t} needs {self.t - 1} treatments and covariates")

    @classmethod
    def from_tokens(cls, tokens) -> "FullHistoryWithTreatment":
        z, x = split_tokens(tokens[:-1])
        return cls(len(z) + 1, z, x, tokens[-1])

    @property
    def history(self) -> FullHistory:
        return FullHistory(self.t, self.z, self.x)

    @property
    def control(self) -> "FullHistoryWithTreatment":
        return FullHistoryWithTreatment(self.t, self.z, self.x, 0)

    @property
    def tokens(self) -> tuple:
        return self.history.tokens + (self.zt,)

    def matches(self, cell) -> bool:
        p = self.tokens
        return cell[: len(p)] == p

    def variables(self) -> dict[str, int]:
        out = self.history.variables()
        out["z"] = self.zt
        out[f"z{self.t}"] = self.zt
        return out

    def __str__(self):
        return f"{self.history}|zt={self.zt}"


@dataclass(frozen=True, order=True)
class CovariateKey:
    """Stratum ``(z_1^t, x_1^{t-1}, x_t)`` indexing a covariate point effect."""

    t: int
    z: tuple[int, ...]
    x: tuple[Cov, ...]
    xt: Cov

    def __post_init__(self):
        if len(self.z) != self.t or len(self.x) != self.t - 1:
            raise ValueError(f"covariate stratum at t={self.t} needs {self.t} treatments")

    @property
    def prefix(self) -> tuple:
        return interleave(self.z, self.x)

    @property
    def reference(self) -> "CovariateKey":
        return CovariateKey(self.t, self.z, self.x, tuple(0 for _ in self.xt))

    @property
    def tokens(self) -> tuple:
        return self.prefix + (self.xt,)

    def matches(self, cell) -> bool:
        p = self.tokens
        return cell[: len(p)] == p

    def variables(self) -> dict[str, int]:
        out = prefix_variables(self.tokens)
        out["t"] = self.t
        out["z"] = self.z[-1]
        for j, v in enumerate(self.xt, start=1):
            out[f"x_{j}"] = v
        return out

    def __str__(self):
        return f"t={self.t}|z={_fmt_z(self.z)}|x={_fmt_x(self.x)}|xt={_fmt_cov(self.xt)}"


def _add_prev(out: dict, t: int):
    if t > 1:
        out["zprev"] = out[f"z{t - 1}"]
        j = 1
        while f"x{t - 1}_{j}" in out:
            out[f"xprev_{j}"] = out[f"x{t - 1}_{j}"]
            j += 1


@dataclass(frozen=True, order=True)
class Markov:
    """Collapsed stratum ``(z_{t-1}, x_{t-1})``; empty at ``t=1``."""

    t: int
    zp: Optional[int] = None
    xp: Optional[Cov] = None

    def __post_init__(self):
        if (self.t == 1) != (self.zp is None) or (self.zp is None) != (self.xp is None):
            raise ValueError("Markov key carries (z_{t-1}, x_{t-1}) exactly when t > 1")

    def matches(self, cell) -> bool:
        if self.t == 1:
            return True
        i = 2 * (self.t - 2)
        return cell[i] == self.zp and cell[i + 1] == self.xp

    def with_treatment(self, zt: int) -> "MarkovWithTreatment":
        return MarkovWithTreatment(self.t, self.zp, self.xp, zt)

    def variables(self) -> dict[str, int]:
        out = {"t": self.t}
        if self.t > 1:
            s = self.t - 1
            out[f"z{s}"] = out["zprev"] = self.zp
            for j, v in enumerate(self.xp, start=1):
                out[f"x{s}_{j}"] = out[f"xprev_{j}"] = v
        return out

    def __str__(self):
        zp = "" if self.zp is None else str(self.zp)
        xp = "" if self.xp is None else _fmt_cov(self.xp)
        return f"t={self.t}|zp={zp}|xp={xp}"


@dataclass(frozen=True, order=True)
class MarkovWithTreatment:
    """Collapsed stratum ``(z_{t-1}, x_{t-1}, z_t)``."""

    t: int
    zp: Optional[int]
    xp: Optional[Cov]
    zt: int

    def __post_init__(self):
        Markov(self.t, self.zp, self.xp)

    @classmethod
    def of_cell(cls, cell, t: int) -> "MarkovWithTreatment":
        if t == 1:
            return cls(1, None, None, cell[0])
        i = 2 * (t - 2)
        return cls(t, cell[i], cell[i + 1], cell[i + 2])

    @property
    def history(self) -> Markov:
        return Markov(self.t, self.zp, self.xp)

    @property
    def control(self) -> "MarkovWithTreatment":
        return MarkovWithTreatment(self.t, self.zp, self.xp, 0)

    def matches(self, cell) -> bool:
        return cell[2 * (self.t - 1)] == self.zt and self.history.matches(cell)

    def variables(self) -> dict[str, int]:
        out = self.history.variables()
        out["z"] = self.zt
        out[f"z{self.t}"] = self.zt
        return out

    def __str__(self):
        return f"{self.history}|zt={self.zt}"


@dataclass(frozen=True, order=True)
class FullCell:
    """A complete record ``(z_1^T, x_1^{T-1})``."""

    z: tuple[int, ...]
    x: tuple[Cov, ...]

    def __post_init__(self):
        if len(self.x) != len(self.z) - 1:
            raise ValueError("a full cell has T treatments and T-1 covariates")

    @classmethod
    def from_tokens(cls, tokens) -> "FullCell":
        return cls(*split_tokens(tokens))

    @property
    def t(self) -> int:
        return len(self.z)

    @property
    def tokens(self) -> tuple:
        return interleave(self.z, self.x)

    def matches(self, cell) -> bool:
        return tuple(cell) == self.tokens

    def __str__(self):
        return f"z={_fmt_z(self.z)}|x={_fmt_x(self.x)}"


StratumKey = Union[
    FullHistory, FullHistoryWithTreatment, CovariateKey, Markov, MarkovWithTreatment, FullCell
]

_FIELD = re.compile(r"^(t|z|x|zt|xt|zp|xp)=(.*)$")


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",")) if s else ()


def _parse_cov(s: str) -> Cov:
    return () if s == "-" else tuple(int(v) for v in s.split(":"))


def _parse_covs(s: str) -> tuple[Cov, ...]:
    return tuple(_parse_cov(v) for v in s.split(",")) if s else ()


def parse_key(text: str) -> StratumKey:
    """Inverse of ``str(key)`` for every key type."""
    fields = {}
    for part in text.strip().split("|"):
        m = _FIELD.match(part)
        if not m or m.group(1) in fields:
            raise ValueError(f"malformed stratum key {text!r}")
        fields[m.group(1)] = m.group(2)
    names = set(fields)
    try:
        if names == {"z", "x"}:
            return FullCell(_parse_ints(fields["z"]), _parse_covs(fields["x"]))
        t = int(fields["t"])
        if names <= {"t", "z", "x", "zt"} and {"t", "z", "x"} <= names:
            z, x = _parse_ints(fields["z"]), _parse_covs(fields["x"])
            if "zt" in names:
                return FullHistoryWithTreatment(t, z, x, int(fields["zt"]))
            return FullHistory(t, z, x)
        if names == {"t", "z", "x", "xt"}:
            return CovariateKey(
                t, _parse_ints(fields["z"]), _parse_covs(fields["x"]), _parse_cov(fields["xt"])
            )
        if names in ({"t", "zp", "xp"}, {"t", "zp", "xp", "zt"}):
            zp = int(fields["zp"]) if fields["zp"] else None
            xp = _parse_cov(fields["xp"]) if fields["xp"] else None
            if "zt" in names:
                return MarkovWithTreatment(t, zp, xp, int(fields["zt"]))
            return Markov(t, zp, xp)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed stratum key {text!r}: {exc}") from None
    raise ValueError(f"malformed stratum key {text!r}")
