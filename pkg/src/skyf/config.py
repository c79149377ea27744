"""Flat ``key = value`` run configuration with documented defaults."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from skyf.errors import ConfigError


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# key -> (default, parser, help); the single source of truth for valid keys
KEYS: dict[str, tuple[object, object, str]] = {
    "domain.shape": ("disk", str, "disk | rectangle | strip | bitmap"),
    "domain.radius": (20.0, float, "disk radius"),
    "domain.width": (8.0, float, "rectangle/strip width"),
    "domain.height": (8.0, float, "rectangle height"),
    "domain.length": (64.0, float, "strip length"),
    "domain.bitmap": ("", str, "path to a .npy boolean mask (bitmap shape)"),
    "domain.h": (0.25, float, "grid spacing"),
    "params.kappa": (0.5, float, "DMI strength"),
    "params.Q": (1.5, float, "quality factor (>= 1)"),
    "params.Q_list": ((4.0, 16.0, 64.0, 256.0), _floats, "increasing Q values for sweep"),
    "params.lambda0": (None, _opt_float, "override for the Dirichlet eigenvalue (auto = computed)"),
    "target.d": (1, int, "target degree"),
    "init.kind": ("bp", str, "down | bp | random (minimize without --init)"),
    "init.rho": (1.0, float, "profile scale for init.kind = bp"),
    "solve.max_iters": (20000, int, "iteration cap"),
    "solve.grad_tol": (1e-6, float, "max projected-gradient norm"),
    "solve.step_rule": ("adaptive-curvature", str, "fixed | adaptive-curvature | backtracking"),
    "solve.initial_step": (0.05, float, "first step length"),
    "solve.degree_guard": (True, _bool, "stop when the degree changes"),
    "solve.snapshot_every": (0, int, "write snapshots every N iterations (0 = never)"),
    "solve.repair_cap": (5, int, "maximum degree repairs"),
    "insert.epsilon": (0.01, float, "quiet-site threshold factor (times kappa^2)"),
    "insert.delta": (None, _opt_float, "ball radius override (auto = default rule)"),
    "insert.rho_rule": ("calibrated", str, "calibrated (kappa delta^2 / 2 C2) | delta2"),
    "insert.c2": (22.0, float, "calibrated constant C2"),
    "insert.refine": (0.0, float, "grid points per core on a refined window (0 = paste on the grid)"),
    "table.kappa_list": ((0.25, 0.5), _floats, "kappa values for existence-table"),
    "table.lengths": ((), _floats, "strip lengths for existence-table (empty = configured domain)"),
    "table.d_max": (3, int, "largest degree for existence-table"),
    "output.dir": ("out", str, "output directory"),
    "seed": (0, int, "seed for randomized initialization"),
    "workers": (None, lambda t: None if t.strip().lower() in ("", "none", "auto") else int(t), "worker cap"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[0] for k, v in KEYS.items()})
    source: str = "<defaults>"

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, pairs) -> "RunConfig":
        vals = dict(self.values)
        for n, text in enumerate(pairs, 1):
            if "=" not in text:
                raise ConfigError(f"override {n}: expected key=value, got {text!r}")
            key, raw = (s.strip() for s in text.split("=", 1))
            vals[key] = _parse(key, raw, f"override {n}")
        return replace(self, values=vals)

    def dump(self) -> str:
        lines = []
        for key, (_, _, help_) in KEYS.items():
            v = self.values[key]
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{key} = {'auto' if v is None else v}  # {help_}")
        return "\n".join(lines) + "\n"


def _parse(key: str, raw: str, where: str):
    if key not in KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return KEYS[key][1](raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    vals = {k: v[0] for k, v in KEYS.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        vals[key] = _parse(key, raw, f"{source}:{lineno}")
    return RunConfig(vals, source)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))


def domain_geometry(cfg: RunConfig) -> tuple[str, object]:
    shape = cfg["domain.shape"]
    if shape == "disk":
        return shape, {"radius": cfg["domain.radius"]}
    if shape == "rectangle":
        return shape, {"width": cfg["domain.width"], "height": cfg["domain.height"]}
    if shape == "strip":
        return shape, {"length": cfg["domain.length"], "width": cfg["domain.width"]}
    if shape == "bitmap":
        import numpy as np

        path = cfg["domain.bitmap"]
        if not path:
            raise ConfigError("domain.bitmap must name a .npy mask for shape = bitmap")
        return shape, np.load(path).astype(bool)
    raise ConfigError(f"unknown domain.shape {shape!r}")


def solver_options(cfg: RunConfig, snapshot_dir: str | None = None):
    from skyf.solver import SolverOptions

    try:
        return SolverOptions(
            max_iters=cfg["solve.max_iters"],
            grad_tol=cfg["solve.grad_tol"],
            step_rule=cfg["solve.step_rule"],
            initial_step=cfg["solve.initial_step"],
            degree_guard=cfg["solve.degree_guard"],
            seed=cfg["seed"],
            snapshot_every=cfg["solve.snapshot_every"],
            snapshot_dir=snapshot_dir,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def rho_for(cfg: RunConfig, kappa: float, delta: float) -> float:
    if cfg["insert.rho_rule"] == "delta2" or kappa == 0:
        return delta * delta
    if cfg["insert.rho_rule"] != "calibrated":
        raise ConfigError(f"unknown insert.rho_rule {cfg['insert.rho_rule']!r}")
    return kappa * delta * delta / (2.0 * cfg["insert.c2"])

