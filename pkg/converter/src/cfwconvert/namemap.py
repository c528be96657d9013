"""Name-map documents: ordered rules translating source tensor names into
canonical engine names, with optional transpose and batch-norm folding.

A map is YAML:

    variant: pwcnet_small
    rules:
      - kind: copy
        target: est.l2.pred.weight
        shape: [2, 32, 3, 3]          # canonical target shape
        source: decoder.level2.predict.weight
        transpose: [1, 0, 2, 3]        # optional axis permutation
      - kind: fold_batchnorm
        target: bb.stem                # emits bb.stem.weight + bb.stem.bias
        weight_shape: [16, 3, 3, 3]
        conv_weight: backbone.stem.conv.weight
        conv_bias: null                # optional
        gamma: backbone.stem.bn.weight
        beta: backbone.stem.bn.bias
        mean: backbone.stem.bn.running_mean
        var: backbone.stem.bn.running_var
        eps: 1.0e-5

Rules execute in order; their emitted targets define the container order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml


class NameMapError(ValueError):
    pass


@dataclass(frozen=True)
class CopyRule:
    target: str
    shape: tuple[int, ...]
    source: str
    transpose: tuple[int, ...] | None = None

    @property
    def sources(self) -> list[str]:
        return [self.source]

    def source_shape(self) -> tuple[int, ...]:
        """Shape the source tensor must have (inverse of the transpose)."""
        if self.transpose is None:
            return self.shape
        inv = np.argsort(self.transpose)
        return tuple(self.shape[i] for i in inv)


@dataclass(frozen=True)
class FoldRule:
    target: str  # block prefix; emits <target>.weight and <target>.bias
    weight_shape: tuple[int, ...]
    conv_weight: str
    gamma: str
    beta: str
    mean: str
    var: str
    conv_bias: str | None = None
    eps: float = 1e-5

    @property
    def sources(self) -> list[str]:
        names = [self.conv_weight, self.gamma, self.beta, self.mean, self.var]
        if self.conv_bias:
            names.append(self.conv_bias)
        return names


@dataclass
class NameMap:
    variant: str
    rules: list = field(default_factory=list)

    def targets(self) -> list[str]:
        out = []
        for rule in self.rules:
            if isinstance(rule, CopyRule):
                out.append(rule.target)
            else:
                out += [f"{rule.target}.weight", f"{rule.target}.bias"]
        return out


def load_name_map(path: str) -> NameMap:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as e:
        raise NameMapError(f"cannot read map {path!r}: {e.strerror}") from None
    if not isinstance(doc, dict) or "variant" not in doc or "rules" not in doc:
        raise NameMapError(f"map {path!r} must declare 'variant' and 'rules'")
    rules = []
    for i, raw in enumerate(doc["rules"]):
        kind = raw.get("kind", "copy")
        try:
            if kind == "copy":
                transpose = raw.get("transpose")
                rules.append(CopyRule(
                    target=raw["target"],
                    shape=tuple(int(d) for d in raw["shape"]),
                    source=raw["source"],
                    transpose=tuple(transpose) if transpose else None,
                ))
            elif kind == "fold_batchnorm":
                rules.append(FoldRule(
                    target=raw["target"],
                    weight_shape=tuple(int(d) for d in raw["weight_shape"]),
                    conv_weight=raw["conv_weight"],
                    gamma=raw["gamma"],
                    beta=raw["beta"],
                    mean=raw["mean"],
                    var=raw["var"],
                    conv_bias=raw.get("conv_bias"),
                    eps=float(raw.get("eps", 1e-5)),
                ))
            else:
                raise NameMapError(f"rule {i}: unknown kind {kind!r}")
        except KeyError as e:
            raise NameMapError(f"rule {i}: missing field {e.args[0]!r}") from None
    nm = NameMap(variant=str(doc["variant"]), rules=rules)
    targets = nm.targets()
    dupes = {t for t in targets if targets.count(t) > 1}
    if dupes:
        raise NameMapError(f"duplicate mapping for target {sorted(dupes)[0]!r}")
    return nm


def fold_batchnorm(conv_weight, conv_bias, gamma, beta, mean, var, eps):
    """Fold normalization statistics into conv weights (float64 math,
    float32 results); must agree with the engine's fold to 1e-6."""
    w = np.asarray(conv_weight, dtype=np.float64)
    out_ch = w.shape[0]
    gamma, beta, mean, var = (np.asarray(v, dtype=np.float64).reshape(-1)
                              for v in (gamma, beta, mean, var))
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if v.shape != (out_ch,):
            raise NameMapError(f"{name} length {v.shape[0]} != out_ch {out_ch}")
    if np.any(var + eps <= 0):
        raise NameMapError("var + eps must be positive")
    scale = gamma / np.sqrt(var + eps)
    bias0 = (np.asarray(conv_bias, dtype=np.float64).reshape(-1)
             if conv_bias is not None else np.zeros(out_ch))
    folded_w = (w * scale.reshape((-1,) + (1,) * (w.ndim - 1))).astype(np.float32)
    folded_b = ((bias0 - mean) * scale + beta).astype(np.float32)
    return folded_w, folded_b


def apply_rule(rule, tensors: dict) -> list[tuple[str, np.ndarray]]:
    """Emitted (target, array) pairs for one rule; raises on any mismatch."""
    for name in rule.sources:
        if name not in tensors:
            raise NameMapError(
                f"checkpoint is missing source tensor {name!r} "
                f"(needed for {rule.target!r})"
            )
    if isinstance(rule, CopyRule):
        arr = np.asarray(tensors[rule.source])
        if rule.transpose is not None:
            if sorted(rule.transpose) != list(range(arr.ndim)):
                raise NameMapError(
                    f"{rule.target!r}: transpose {rule.transpose} does not "
                    f"permute a rank-{arr.ndim} tensor"
                )
            arr = np.transpose(arr, rule.transpose)
        if tuple(arr.shape) != rule.shape:
            raise NameMapError(
                f"{rule.target!r}: shape {tuple(arr.shape)} after transform "
                f"does not match canonical {rule.shape}"
            )
        return [(rule.target, np.ascontiguousarray(arr, dtype=np.float32))]
    w, b = fold_batchnorm(
        tensors[rule.conv_weight],
        tensors[rule.conv_bias] if rule.conv_bias else None,
        tensors[rule.gamma], tensors[rule.beta],
        tensors[rule.mean], tensors[rule.var], rule.eps,
    )
    if tuple(w.shape) != rule.weight_shape:
        raise NameMapError(
            f"{rule.target!r}: folded weight shape {tuple(w.shape)} does not "
            f"match canonical {rule.weight_shape}"
        )
    return [(f"{rule.target}.weight", w), (f"{rule.target}.bias", b)]
