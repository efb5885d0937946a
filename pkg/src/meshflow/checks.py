"""Self-check suites behind the gradcheck and flowcheck CLI subcommands."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flow as F
from . import tensor as T
from .config import TrainConfig
from .model import Model
from .tensor import Tensor, grad_check
from .training import make_scene


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.value < self.threshold


def format_results(results: list[CheckResult]) -> str:
    lines = [f"{'check':<32}{'value':>14}{'threshold':>12}{'status':>8}"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<32}{r.value:>14.3e}{r.threshold:>12.0e}{status:>8}")
    return "\n".join(lines)


def tiny_config() -> TrainConfig:
    """Smallest full-pipeline configuration, used for gradient suites."""
    return TrainConfig(
        height=8, width=8, patch_size=4, d_model=8, heads=2,
        v_coarse=8, v_full=10, flow_layers=2, flow_hidden=6,
        num_scenes=1, batch_size=1, epochs=1, mask_ratio=0.25,
    ).validate()


def _sum_readout(op, tensors, rng) -> Tensor:
    out = op(*tensors)
    probe = rng.normal(size=out.shape)
    return T.tsum(T.mul(out, probe))


def _primitive_cases(rng):
    """(name, op, input builder) for every primitive with a backward rule."""
    def normal(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    def positive(*shape):
        return Tensor(rng.uniform(0.5, 2.0, size=shape), requires_grad=True)

    def away_from_zero(*shape):
        sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        return Tensor(sign * rng.uniform(0.5, 2.0, size=shape), requires_grad=True)

    return [
        ("add", T.add, lambda: (normal(4, 5), normal(4, 5))),
        ("sub", T.sub, lambda: (normal(4, 5), normal(4, 5))),
        ("mul", T.mul, lambda: (normal(4, 5), normal(4, 5))),
        ("div", T.div, lambda: (normal(4, 5), positive(4, 5))),
        ("neg", T.neg, lambda: (normal(4, 5),)),
        ("exp", T.exp, lambda: (normal(4, 5),)),
        ("log", T.log, lambda: (positive(4, 5),)),
        ("sqrt", T.sqrt, lambda: (positive(4, 5),)),
        ("tanh", T.tanh, lambda: (normal(4, 5),)),
        ("absolute", T.absolute, lambda: (away_from_zero(4, 5),)),
        ("relu", T.relu, lambda: (away_from_zero(4, 5),)),
        ("sigmoid", T.sigmoid, lambda: (normal(4, 5),)),
        ("clamp", lambda x: T.clamp(x, -10.0, 10.0), lambda: (normal(4, 5),)),
        ("gelu", T.gelu, lambda: (normal(4, 5),)),
        ("softmax", lambda x: T.softmax(x, axis=-1), lambda: (normal(4, 5),)),
        ("sum", lambda x: T.tsum(x, axis=1), lambda: (normal(4, 5),)),
        ("mean", lambda x: T.tmean(x, axis=0), lambda: (normal(4, 5),)),
        ("matmul", T.matmul, lambda: (normal(4, 3), normal(3, 5))),
        ("reshape", lambda x: T.reshape(x, (2, 10)), lambda: (normal(4, 5),)),
        ("permute", lambda x: T.permute(x, (1, 0)), lambda: (normal(4, 5),)),
        ("concat", lambda a, b: T.concat([a, b], axis=1),
         lambda: (normal(4, 2), normal(4, 3))),
        ("getitem", lambda x: x[1:3, 0:4], lambda: (normal(4, 5),)),
        ("take_columns", lambda x: T.take_columns(x, [0, 2, 3]),
         lambda: (normal(4, 5),)),
        ("scatter_columns", lambda x: T.scatter_columns(x, [1, 4], 6),
         lambda: (normal(4, 2),)),
        ("conv_transpose2d",
         lambda x, w: T.conv_transpose2d(x, w, stride=2, padding=1),
         lambda: (normal(2, 3, 3), normal(2, 2, 4, 4))),
        ("linear", T.linear, lambda: (normal(4, 3), normal(3, 5), normal(5))),
        ("layer_norm", lambda x, g, b: T.layer_norm(x, g, b, eps=1e-5),
         lambda: (normal(4, 5), normal(5), normal(5))),
    ]


def primitive_grad_checks(seeds: int = 10) -> list[CheckResult]:
    """grad_check every primitive over random small inputs."""
    rng = np.random.default_rng(1234)
    results = []
    for name, op, build in _primitive_cases(rng):
        worst = 0.0
        for _ in range(seeds):
            tensors = build()
            worst = max(worst, grad_check(
                lambda: _sum_readout(op, tensors, np.random.default_rng(7)),
                tensors, eps=1e-5))
        results.append(CheckResult(f"primitive.{name}", worst, 1e-6))
    return results


def pipeline_grad_check(cfg: TrainConfig | None = None) -> CheckResult:
    """grad_check every trained parameter through the full training loss."""
    cfg = tiny_config() if cfg is None else cfg
    model = Model(cfg)
    rng = np.random.default_rng(99)
    for p in model.parameters().values():
        if not p.data.any():
            p.data = rng.normal(0.0, 0.05, p.shape)  # move off exact-zero kinks
    scene = make_scene(5, cfg)
    params = list(model.parameters().values())

    def loss() -> Tensor:
        total, _ = model.scene_loss(scene, train_mode=True, step=1, scene_index=0)
        return total

    return CheckResult("pipeline.full_loss",
                       grad_check(loss, params, eps=1e-5), 1e-4)


def flow_roundtrip_check(dim: int = 16, count: int = 100) -> CheckResult:
    rng = np.random.default_rng(11)
    model = F.build_flow(dim, n_layers=6, hidden=32, rng=rng, init_std=0.1)
    worst = 0.0
    for _ in range(count):
        x = Tensor(rng.standard_normal(dim))
        y, _ = F.flow_forward(x, model)
        back = F.flow_invert(y, model)
        worst = max(worst, float(np.abs(back.data - x.data).max()))
    return CheckResult("flow.roundtrip", worst, 1e-9)


def flow_logdet_checks(dims=(2, 4, 6), layers_per_dim: int = 20) -> list[CheckResult]:
    """Analytic coupling log-det versus a finite-difference Jacobian."""
    results = []
    eps = 1e-5
    for dim in dims:
        rng = np.random.default_rng(100 + dim)
        worst = 0.0
        for _ in range(layers_per_dim):
            layer = F.build_flow(dim, 1, hidden=8, rng=rng, init_std=0.4).layers[0]
            x = rng.standard_normal(dim)
            _, logdet = F.coupling_forward(Tensor(x), layer)
            jac = np.empty((dim, dim))
            for j in range(dim):
                bump = np.zeros(dim)
                bump[j] = eps
                hi, _ = F.coupling_forward(Tensor(x + bump), layer)
                lo, _ = F.coupling_forward(Tensor(x - bump), layer)
                jac[:, j] = (hi.data - lo.data) / (2 * eps)
            _, fd_logdet = np.linalg.slogdet(jac)
            err = abs(logdet.item() - fd_logdet) / max(1.0, abs(fd_logdet))
            worst = max(worst, err)
        results.append(CheckResult(f"flow.logdet.d{dim}", worst, 1e-5))
    return results


def flow_normalization_check(grid: int = 400, extent: float = 8.0) -> CheckResult:
    # moderate random couplings keep essentially all mass inside the box
    rng = np.random.default_rng(7)
    model = F.build_flow(2, n_layers=2, hidden=16, rng=rng,
                         scale_bound=1.0, init_std=0.25)
    cell = 2.0 * extent / grid
    centers = -extent + (np.arange(grid) + 0.5) * cell
    gx, gy = np.meshgrid(centers, centers)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    log_p = F.flow_log_density(Tensor(points), model).data
    mass = float(np.exp(log_p).sum() * cell * cell)
    return CheckResult("flow.normalization", abs(mass - 1.0), 1e-2)


def gradcheck_suite() -> list[CheckResult]:
    return primitive_grad_checks() + [pipeline_grad_check()]


def flowcheck_suite() -> list[CheckResult]:
    return ([flow_roundtrip_check()] + flow_logdet_checks()
            + [flow_normalization_check()])
