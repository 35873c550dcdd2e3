"""Central-difference gradient checking.

Compares the analytic gradient of a scalar-valued function of named
parameters against (f(x+eps) - f(x-eps)) / 2eps, entry by entry.  Meant to
run in float64 with dropout disabled; callers hold both ends of that
contract.  Large tensors can be spot-checked with a deterministic subsample
of entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Relative-error denominator floor.  Central differences in float64 with
# eps=1e-5 carry ~1e-11 absolute noise, so entries where both gradients are
# below 1e-6 compare at worst ~1e-5 relative, safely under the usual 1e-4.
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.per_tensor.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"gradient check: {status} (max rel err {self.max_rel_err:.3e}, tol {self.tol:.1e})"]
        for name in sorted(self.per_tensor):
            lines.append(
                f"  {name}: max rel err {self.per_tensor[name]:.3e} "
                f"({self.checked[name]} entries)"
            )
        return "\n".join(lines)


def grad_check(
    fn,
    params,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries_per_tensor: int | None = None,
    rng=None,
) -> GradCheckReport:
    """Check analytic gradients of ``fn(params)`` by central differences.

    ``fn`` maps the parameter store (or a name->Tensor mapping) to a scalar
    loss Tensor and must be deterministic.  Raises ArithmeticError if the
    loss is non-finite.  When ``max_entries_per_tensor`` is set, tensors
    larger than that are checked on a subsample drawn from ``rng``
    (default_rng(0) if omitted).
    """
    tensors = dict(params.items()) if hasattr(params, "items") else dict(params)
    if rng is None:
        rng = np.random.default_rng(0)

    def evaluate() -> float:
        loss = fn(params)
        value = float(loss.data.reshape(()))
        if not np.isfinite(value):
            raise ArithmeticError("loss is not finite")
        return value

    for t in tensors.values():
        t.grad = None
    loss = fn(params)
    if not np.isfinite(float(loss.data.reshape(()))):
        raise ArithmeticError("loss is not finite")
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
    }

    report = GradCheckReport(tol=tol, eps=eps)
    for name in sorted(tensors):
        flat = tensors[name].data.reshape(-1)
        an = analytic[name].reshape(-1)
        n = flat.size
        if max_entries_per_tensor is not None and n > max_entries_per_tensor:
            idx = rng.choice(n, size=max_entries_per_tensor, replace=False)
            idx.sort()
        else:
            idx = np.arange(n)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = evaluate()
            flat[i] = orig - eps
            f_minus = evaluate()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(fd - an[i]) / max(abs(fd), abs(an[i]), REL_FLOOR)
            if rel > worst:
                worst = rel
        report.per_tensor[name] = worst
        report.checked[name] = int(len(idx))
    return report
