"""Command-line interface.

Commands: ``rate``, ``verify``, ``keyrate`` and ``sweep``. Protocol and grid
settings come from a flat ``key = value`` file given with ``--config``.
"""
from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import entropy_oracle as eo
from . import finite_size as fs
from .numerics import DomainError
from .rate_functions import rate

SWEEP_HEADER = ["n", "gamma", "alpha", "h_alpha", "delta_low_perp", "ell_ec", "ell_key", "rate", "asymptotic_rate"]


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    parts = [t for t in text.replace(",", " ").split() if t]
    return tuple(float(t) for t in parts)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


@dataclass
class RunConfig:
    """All settings of a run. Defaults reproduce the experimental setting."""

    n: int = 1_500_000
    omega_hon: float = 0.83
    qerr_hon: float = 0.018
    gamma: float = 13 / 256
    eps_sound: float = 1e-10
    eps_corr: float = 2.0**-61
    eps_com_at: float = 1e-3
    ell_ev: float = 64.0
    alpha: float = 1.0005
    optimize_alpha: bool = False
    optimize_gamma: bool = False
    gamma_max: float = 0.25
    beta: float = 1.0
    npp_q: float = 0.0
    out: str = ""
    n_min: float = 1e5
    n_max: float = 1e10
    points: int = 30
    spacing: str = "log"
    workers: int = 1
    seed: int = 0
    verify_alphas: tuple = (1.1, 1.5, 2.0, 3.0, 10.0)
    verify_betas: tuple = (1.0, 1.2, 2.0)
    verify_qs: tuple = (0.0, 0.05, 0.25)
    verify_scores: int = 11
    verify_tolerance: float = 1e-9


_PARSERS = {
    "n": _int,
    "points": _int,
    "workers": _int,
    "seed": _int,
    "verify_scores": _int,
    "optimize_alpha": _bool,
    "optimize_gamma": _bool,
    "out": str.strip,
    "spacing": str.strip,
    "verify_alphas": _floats,
    "verify_betas": _floats,
    "verify_qs": _floats,
}


def load_config(path: str | None) -> RunConfig:
    """Read a flat ``key = value`` file; unknown keys are an error."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[run]\n" + fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for key, raw in parser["run"].items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _PARSERS.get(key, float)(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return replace(cfg, **values)


def protocol_params(cfg: RunConfig) -> fs.ProtocolParams:
    return fs.ProtocolParams(
        n=cfg.n,
        honest=fs.HonestModel(cfg.omega_hon, cfg.qerr_hon, cfg.gamma),
        eps_sound=cfg.eps_sound,
        eps_corr=cfg.eps_corr,
        eps_com_at=cfg.eps_com_at,
        ell_ev=cfg.ell_ev,
        alpha=cfg.alpha,
        optimize_alpha=cfg.optimize_alpha,
        optimize_gamma=cfg.optimize_gamma,
        gamma_max=cfg.gamma_max,
        beta=cfg.beta,
        npp_q=cfg.npp_q,
    )


def sweep_grid(cfg: RunConfig) -> list:
    if cfg.points < 1 or cfg.n_min < 1 or cfg.n_max < cfg.n_min:
        raise ConfigError("sweep needs points >= 1 and 1 <= n_min <= n_max")
    if cfg.spacing == "log":
        raw = np.geomspace(cfg.n_min, cfg.n_max, cfg.points)
    elif cfg.spacing == "linear":
        raw = np.linspace(cfg.n_min, cfg.n_max, cfg.points)
    else:
        raise ConfigError(f"spacing must be 'log' or 'linear', not {cfg.spacing!r}")
    ns = sorted(set(int(round(x)) for x in raw))
    return ns


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if getattr(args, "optimize_alpha", False):
        updates["optimize_alpha"] = True
    if getattr(args, "optimize_gamma", False):
        updates["optimize_gamma"] = True
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None):
        updates["out"] = args.out
    return replace(cfg, **updates)


def _write_lines(path: str, lines) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc.strerror}") from None


def _result_row(r: fs.KeyRateResult) -> list:
    return [str(r.n)] + [repr(float(getattr(r, k))) for k in SWEEP_HEADER[1:]]


def cmd_rate(args) -> int:
    value = rate(args.score, args.family, args.alpha, args.beta, args.q)
    print(f"{value:.12f}")
    return 0


def cmd_verify(args) -> int:
    cfg = _apply_flags(load_config(args.config), args)
    if not (cfg.verify_alphas and cfg.verify_betas and cfg.verify_qs) or cfg.verify_scores < 1:
        raise ConfigError("verification grid is empty")
    points = eo.default_grid(cfg.verify_alphas, cfg.verify_betas, cfg.verify_qs, cfg.verify_scores)
    if not points:
        raise ConfigError("verification grid is empty")
    report = eo.verify_tightness(points, cfg.verify_tolerance, seed=cfg.seed)
    lines = report.lines()
    if cfg.out:
        _write_lines(cfg.out, lines)
    print(lines[-1])
    return 0 if report.ok else 1


def cmd_keyrate(args) -> int:
    cfg = _apply_flags(load_config(args.config), args)
    res = fs.key_length(protocol_params(cfg))
    for k, v in asdict(res).items():
        print(f"{k}: {v!r}")
    if cfg.out:
        _write_lines(cfg.out, [",".join(SWEEP_HEADER), ",".join(_result_row(res))])
    return 0


def cmd_sweep(args) -> int:
    cfg = _apply_flags(load_config(args.config), args)
    if not cfg.out:
        raise ConfigError("sweep needs an output path (--out or 'out' in the config)")
    ns = sweep_grid(cfg)
    # fail on an unwritable path before the expensive part
    _write_lines(cfg.out, [",".join(SWEEP_HEADER)])
    results = fs.sweep(protocol_params(cfg), ns, workers=max(1, cfg.workers))
    _write_lines(cfg.out, [",".join(SWEEP_HEADER)] + [",".join(_result_row(r)) for r in results])
    print(f"wrote {len(results)} rows to {cfg.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chsh-renyi", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rate", help="evaluate a rate function")
    r.add_argument("--family", required=True)
    r.add_argument("--alpha", type=float, default=None)
    r.add_argument("--score", type=float, required=True)
    r.add_argument("--beta", type=float, default=1.0)
    r.add_argument("--q", type=float, default=0.0, help="noisy-preprocessing flip probability")
    r.set_defaults(func=cmd_rate)

    for name, func, hlp in (
        ("verify", cmd_verify, "compare closed forms with the matrix oracle"),
        ("keyrate", cmd_keyrate, "finite-size key rate"),
        ("sweep", cmd_sweep, "key rates over a grid of n, as CSV"),
    ):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        if name != "verify":
            p.add_argument("--optimize-alpha", action="store_true")
            p.add_argument("--optimize-gamma", action="store_true")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
