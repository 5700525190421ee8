"""Plain-text experiment configuration.

Configs are TOML: nested key-value tables with a [model] table and,
for kernel-consuming commands, a [kernel] table. Function-valued model
parameters (the AR(1)/ARCH drift and scale maps) are named built-ins with
scalar parameters, so every config is fully serializable and a run is
reproducible from its echoed resolved config alone.

Model table:
    kind = "finite"            matrix = [[...], ...]   (row-stochastic)
                               states = ["a", ...]     (optional labels)
                               initial = [...]         (optional law)
    kind = "ar1"               map = {kind=..., ...}, noise_std, dim
    kind = "arch"              h = {kind=...}, g = {kind=...}, sigma

Named maps: {kind="zero"}, {kind="const", value=v},
{kind="tanh", amp=a} (a tanh x), {kind="sin", amp=a},
{kind="cos-band", low=a, high=c} (oscillates inside [a, c]).

Kernel table:
    kind = "table"             values = [[...], ...]
    kind = "product"           f = [...] or f = {kind=..., ...}
    kind = "cosine"
    kind = "indicator"
    kind = "weighted"          base = {kind=..., ...},
                               weights = "inverse-gap" | "inverse-offset"
                                         | <constant number>
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .chain import AR1Model, ARCHModel, ChainModel, FiniteChain
from .kernels import CosineKernel, IndicatorKernel, KernelFamily, PairKernel, \
    ProductKernel, TableKernel, constant_weights, kernel_family, resolve_weights


class ConfigError(ValueError):
    """Malformed configuration."""


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from None


def named_map(spec: dict) -> Tuple:
    """(callable, sup bound, inf |value| bound) for a named scalar map."""
    kind = spec.get("kind")
    if kind == "zero":
        return (lambda x: np.zeros_like(np.asarray(x, dtype=float)), 0.0, 0.0)
    if kind == "const":
        v = float(spec["value"])
        return (lambda x, _v=v: np.full_like(np.asarray(x, dtype=float), _v),
                abs(v), abs(v))
    if kind == "tanh":
        a = float(spec["amp"])
        return (lambda x, _a=a: _a * np.tanh(np.asarray(x, dtype=float)), abs(a), 0.0)
    if kind == "sin":
        a = float(spec["amp"])
        return (lambda x, _a=a: _a * np.sin(np.asarray(x, dtype=float)), abs(a), 0.0)
    if kind == "cos-band":
        lo, hi = float(spec["low"]), float(spec["high"])
        if not (0.0 < lo <= hi):
            raise ConfigError("cos-band needs 0 < low <= high")
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        return (lambda x, _m=mid, _h=half: _m + _h * np.cos(np.asarray(x, dtype=float)),
                hi, lo)
    raise ConfigError(f"unknown map kind {kind!r}")


def build_model(spec: dict) -> ChainModel:
    kind = spec.get("kind")
    if kind == "finite":
        if "matrix" not in spec:
            raise ConfigError("finite model needs a 'matrix'")
        kwargs = {"P": np.asarray(spec["matrix"], dtype=float)}
        if "states" in spec:
            kwargs["states"] = tuple(spec["states"])
        if "initial" in spec:
            kwargs["initial"] = np.asarray(spec["initial"], dtype=float)
        return FiniteChain(**kwargs)
    if kind == "ar1":
        fn, bound, _ = named_map(spec.get("map", {"kind": "zero"}))
        return AR1Model(H=fn, H_bound=bound,
                        noise_std=float(spec.get("noise_std", 1.0)),
                        dim=int(spec.get("dim", 1)))
    if kind == "arch":
        h_fn, b, _ = named_map(spec.get("h", {"kind": "zero"}))
        g_spec = spec.get("g", {"kind": "const", "value": 1.0})
        g_fn, c, a = named_map(g_spec)
        if a <= 0:
            raise ConfigError("the ARCH scale map must be bounded away from 0 "
                              "(use const or cos-band)")
        return ARCHModel(H=h_fn, G=g_fn, a=a, b=b, c=c,
                         sigma=float(spec.get("sigma", 1.0)))
    raise ConfigError(f"unknown model kind {kind!r}")


def _build_base(spec: dict) -> PairKernel:
    kind = spec.get("kind")
    if kind == "table":
        return TableKernel(np.asarray(spec["values"], dtype=float))
    if kind == "product":
        f = spec["f"]
        if isinstance(f, dict):
            fn, bound, _ = named_map(f)
            return ProductKernel(f=fn, f_bound=bound)
        return ProductKernel(f=np.asarray(f, dtype=float))
    if kind == "cosine":
        return CosineKernel()
    if kind == "indicator":
        return IndicatorKernel()
    if kind == "weighted":
        raise ConfigError("weighted kernels cannot nest inside 'base'")
    raise ConfigError(f"unknown kernel kind {kind!r}")


def build_kernel(spec: dict, n: int) -> KernelFamily:
    kind = spec.get("kind")
    if kind == "weighted":
        if "base" not in spec:
            raise ConfigError("weighted kernel needs a 'base' table")
        base = _build_base(spec["base"])
        w = spec.get("weights", "inverse-gap")
        if isinstance(w, (int, float)):
            if not math.isfinite(float(w)):
                raise ConfigError("constant weight must be finite")
            weights = constant_weights(float(w))
        else:
            weights = resolve_weights(str(w))
        return kernel_family(base, n, weights)
    return kernel_family(_build_base(spec), n)


def model_spec_echo(spec: dict) -> dict:
    """Copy of the model table with defaults filled, for provenance echoes."""
    out = dict(spec)
    kind = spec.get("kind")
    if kind == "ar1":
        out.setdefault("map", {"kind": "zero"})
        out.setdefault("noise_std", 1.0)
        out.setdefault("dim", 1)
    elif kind == "arch":
        out.setdefault("h", {"kind": "zero"})
        out.setdefault("g", {"kind": "const", "value": 1.0})
        out.setdefault("sigma", 1.0)
    return out


def kernel_spec_echo(spec: Optional[dict]) -> Optional[dict]:
    if spec is None:
        return None
    out = dict(spec)
    if spec.get("kind") == "weighted":
        out.setdefault("weights", "inverse-gap")
    return out
