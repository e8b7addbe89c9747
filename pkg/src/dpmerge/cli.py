"""Command-line front end.

Subcommands: curve, feasible, experiment, compare.  Every command reads
one JSON config (schema-validated, unknown keys rejected), derives all
randomness from the single configured seed, and writes CSV/JSON outputs
atomically, so a rerun with the same config is byte-identical.

Exit codes: 0 success (an empty feasible set is a success), 2 for
configuration or validation errors, 3 for numeric or capacity failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import __version__
from .baselines import compare_prop10
from .core import (
    ConfigError,
    CorrelatedInputs,
    DeltaTooLarge,
    DpGuarantee,
    DpMergeError,
    DpSgdMechanism,
    EnumerationCapExceeded,
    GaussianMechanism,
    OrderGrid,
    Unreachable,
    validate_weights,
)
from .experiments import (
    MeanEstConfig,
    Method,
    dpsgd_train,
    gen_blobs,
    holdout_accuracy,
    mean_est_frontier,
    merged_eval,
)
from .merge_lc import align_virtual_steps, lc_dp_eps, lc_feasible_set
from .merge_rs import (
    Accountant,
    rs_feasible_candidates,
)
from .pld import DEFAULT_SPACING, pld_delta, pld_for_spec
from .rdp import curve_for_spec, rdp_to_dp

_EXIT_CONFIG = 2
_EXIT_NUMERIC = 3


def _fmt(x: float) -> str:
    """Round-trip decimal text: full precision, '.' separator."""
    return repr(float(x))


def _fmt_alpha(a: float) -> str:
    return f"{a:g}"


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-dpmerge-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Config parsing.
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "schema", "seed", "mechanisms", "target", "accountant", "merge",
    "resolution", "orders", "pld_spacing", "eps_grid", "max_terms", "out",
    "compare", "experiment",
}
_MECH_GAUSS_KEYS = {"kind", "sensitivity", "noise_std"}
_MECH_DPSGD_KEYS = {
    "kind", "steps", "sampling_rate", "clip_norm", "noise_multiplier",
    "learning_rate", "independent_noise",
}
_TARGET_KEYS = {"eps", "delta"}
_COMPARE_KEYS = {"per_release_delta", "slack_delta"}
_EPS_GRID_KEYS = {"max", "count"}
_MEAN_EST_KEYS = {
    "n", "clip_range", "sensitivity", "noise_stds", "resolution", "trials",
}
_DPSGD_SIM_KEYS = {
    "n", "dim", "separation", "holdout_n", "steps", "models", "clip_norm",
    "learning_rate", "resolution", "correlated", "target_delta",
}


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    for key in d:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _require(d: dict, key: str, where: str) -> Any:
    if key not in d:
        raise ConfigError(f"missing key {key!r} in {where}")
    return d[key]


def _parse_mechanism(d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    kind = _require(d, "kind", where)
    try:
        if kind == "gaussian":
            _reject_unknown(d, _MECH_GAUSS_KEYS, where)
            return GaussianMechanism(
                float(_require(d, "sensitivity", where)),
                float(_require(d, "noise_std", where)),
            )
        if kind == "dpsgd":
            _reject_unknown(d, _MECH_DPSGD_KEYS, where)
            steps = int(_require(d, "steps", where))

            def per_step(key):
                v = _require(d, key, where)
                if isinstance(v, (int, float)):
                    return (float(v),) * steps
                if len(v) != steps:
                    raise ConfigError(
                        f"{where}.{key} must have length {steps}"
                    )
                return tuple(float(x) for x in v)

            return DpSgdMechanism(
                per_step("sampling_rate"),
                per_step("clip_norm"),
                per_step("noise_multiplier"),
                per_step("learning_rate"),
                bool(d.get("independent_noise", True)),
            )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad mechanism in {where}: {exc}") from exc
    raise ConfigError(f"unknown mechanism kind {kind!r} in {where}")


@dataclass
class RunConfig:
    raw: dict
    seed: int
    mechanisms: list
    target: DpGuarantee | None
    accountant: Accountant
    merge: str
    resolution: float
    orders: OrderGrid | None
    pld_spacing: float
    eps_grid: tuple[float, int]
    max_terms: int | None
    out: str | None
    compare: dict | None
    experiment: dict

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()
        ).hexdigest()


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown(raw, _TOP_KEYS, "config")
    if raw.get("schema") != 1:
        raise ConfigError("config must declare \"schema\": 1")

    mechanisms = [
        _parse_mechanism(m, f"mechanisms[{i}]")
        for i, m in enumerate(raw.get("mechanisms", []))
    ]
    target = None
    if "target" in raw:
        tgt = raw["target"]
        if not isinstance(tgt, dict):
            raise ConfigError("target must be an object")
        _reject_unknown(tgt, _TARGET_KEYS, "target")
        try:
            target = DpGuarantee(
                float(_require(tgt, "eps", "target")),
                float(_require(tgt, "delta", "target")),
            )
        except ValueError as exc:
            raise ConfigError(f"bad target: {exc}") from exc

    accountant_raw = raw.get("accountant", "rdp")
    if accountant_raw not in ("rdp", "pld"):
        raise ConfigError("accountant must be 'rdp' or 'pld'")
    merge = raw.get("merge", "rs")
    if merge not in ("rs", "lc"):
        raise ConfigError("merge must be 'rs' or 'lc'")

    orders = None
    if "orders" in raw:
        try:
            vals = tuple(float(a) for a in raw["orders"])
            orders = OrderGrid(vals, all(a == int(a) for a in vals))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad orders grid: {exc}") from exc

    eps_grid_raw = raw.get("eps_grid", {})
    if not isinstance(eps_grid_raw, dict):
        raise ConfigError("eps_grid must be an object")
    _reject_unknown(eps_grid_raw, _EPS_GRID_KEYS, "eps_grid")
    eps_grid = (
        float(eps_grid_raw.get("max", 10.0)),
        int(eps_grid_raw.get("count", 101)),
    )
    if eps_grid[0] <= 0 or eps_grid[1] < 2:
        raise ConfigError("eps_grid needs max > 0 and count >= 2")

    compare = raw.get("compare")
    if compare is not None:
        if not isinstance(compare, dict):
            raise ConfigError("compare must be an object")
        _reject_unknown(compare, _COMPARE_KEYS, "compare")

    experiment = raw.get("experiment", {})
    if not isinstance(experiment, dict):
        raise ConfigError("experiment must be an object")

    try:
        resolution = float(raw.get("resolution", 0.02))
        pld_spacing = float(raw.get("pld_spacing", DEFAULT_SPACING))
        seed = int(raw.get("seed", 0))
        max_terms = raw.get("max_terms")
        if max_terms is not None:
            max_terms = int(max_terms)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scalar option: {exc}") from exc
    if pld_spacing <= 0:
        raise ConfigError("pld_spacing must be > 0")

    return RunConfig(
        raw=raw,
        seed=seed,
        mechanisms=mechanisms,
        target=target,
        accountant=Accountant(accountant_raw),
        merge=merge,
        resolution=resolution,
        orders=orders,
        pld_spacing=pld_spacing,
        eps_grid=eps_grid,
        max_terms=max_terms,
        out=raw.get("out"),
        compare=compare,
        experiment=experiment,
    )


def _out_dir(config: RunConfig, args) -> str:
    out = args.out or config.out
    if not out:
        raise ConfigError("no output directory: pass --out or set \"out\"")
    return out


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "accountant", None):
        config.accountant = Accountant(args.accountant)
    if getattr(args, "merge", None):
        config.merge = args.merge
    if getattr(args, "resolution", None) is not None:
        config.resolution = args.resolution
    return config


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_curve(config: RunConfig, out_dir: str) -> int:
    """One CSV per mechanism: (alpha, eps) rows under the Renyi
    accountant, or (eps, delta) rows under the loss-distribution one."""
    if not config.mechanisms:
        raise ConfigError("curve needs at least one mechanism")
    for i, mech in enumerate(config.mechanisms):
        name = "gaussian" if isinstance(mech, GaussianMechanism) else "dpsgd"
        path = os.path.join(out_dir, f"curve_{i}_{name}.csv")
        if config.accountant is Accountant.RDP:
            grid = config.orders
            if grid is None:
                from .merge_rs import _grid_for

                grid = _grid_for([mech], None)
            curve = curve_for_spec(mech, grid)
            lines = ["alpha,eps"]
            lines += [
                f"{_fmt_alpha(a)},{_fmt(v)}"
                for a, v in zip(grid.orders, curve.values)
            ]
        else:
            pair = pld_for_spec(mech, config.pld_spacing)
            hi, count = config.eps_grid
            lines = ["eps,delta"]
            for eps in np.linspace(0.0, hi, count):
                lines.append(f"{_fmt(eps)},{_fmt(pld_delta(pair, float(eps)))}")
        _atomic_write(path, "\n".join(lines) + "\n")
    return 0


def cmd_feasible(config: RunConfig, out_dir: str) -> int:
    """JSON array of feasible merge weights with certified (eps, delta)."""
    if config.target is None:
        raise ConfigError("feasible needs a target")
    if not config.mechanisms:
        raise ConfigError("feasible needs mechanisms")
    entries = []
    if config.merge == "rs":
        cands = rs_feasible_candidates(
            config.mechanisms,
            config.target,
            config.resolution,
            config.accountant,
            grid=config.orders,
            spacing=config.pld_spacing,
        )
        for c in cands:
            entries.append(
                {
                    "weights": list(c.weights.values),
                    "eps": c.eps,
                    "delta": config.target.delta,
                    "accountant": c.accountant.value,
                }
            )
    else:
        specs = align_virtual_steps(config.mechanisms)
        feas = lc_feasible_set(
            specs,
            config.target,
            config.resolution,
            config.accountant,
            grid=config.orders,
            max_terms=config.max_terms,
            spacing=config.pld_spacing,
        )
        for lam in feas:
            if config.accountant is Accountant.RDP:
                eps = lc_dp_eps(
                    specs, lam, config.target.delta, config.orders,
                    config.max_terms,
                )
            else:
                eps = config.target.eps
            entries.append(
                {
                    "weights": list(lam.values),
                    "eps": eps,
                    "delta": config.target.delta,
                    "accountant": config.accountant.value,
                }
            )
    path = os.path.join(out_dir, "feasible.json")
    _atomic_write(path, json.dumps(entries, indent=2, sort_keys=True) + "\n")
    return 0


def _manifest(config: RunConfig, name: str) -> str:
    return json.dumps(
        {
            "experiment": name,
            "seed": config.seed,
            "config_sha256": config.digest(),
            "dpmerge_version": __version__,
        },
        indent=2,
        sort_keys=True,
    )


def _frontier_csv(points) -> str:
    lines = ["method,weight_0,weight_1,eps,delta,utility,utility_stderr"]
    for p in points:
        lines.append(
            ",".join(
                [
                    p.method.value,
                    _fmt(p.weights[0]),
                    _fmt(p.weights[1]),
                    _fmt(p.eps),
                    _fmt(p.delta),
                    _fmt(p.utility),
                    _fmt(p.utility_stderr),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _run_mean_est(config: RunConfig, out_dir: str) -> int:
    opts = dict(config.experiment.get("mean_est", {}))
    _reject_unknown(opts, _MEAN_EST_KEYS, "experiment.mean_est")
    if "clip_range" in opts:
        opts["clip_range"] = tuple(float(v) for v in opts["clip_range"])
    if "noise_stds" in opts:
        opts["noise_stds"] = tuple(float(v) for v in opts["noise_stds"])
    cfg = MeanEstConfig(
        target_delta=(
            config.target.delta if config.target is not None else 1e-5
        ),
        seed=config.seed,
        pld_spacing=config.pld_spacing,
        **opts,
    )
    points = mean_est_frontier(cfg)
    _atomic_write(
        os.path.join(out_dir, "mean_est_frontier.csv"), _frontier_csv(points)
    )
    _atomic_write(
        os.path.join(out_dir, "mean_est_manifest.json"),
        _manifest(config, "mean-est") + "\n",
    )
    return 0


def _run_dpsgd_sim(config: RunConfig, out_dir: str) -> int:
    opts = dict(config.experiment.get("dpsgd_sim", {}))
    _reject_unknown(opts, _DPSGD_SIM_KEYS, "experiment.dpsgd_sim")
    n = int(opts.get("n", 1200))
    dim = int(opts.get("dim", 5))
    separation = float(opts.get("separation", 3.0))
    holdout_n = int(opts.get("holdout_n", 1000))
    steps = int(opts.get("steps", 30))
    clip = float(opts.get("clip_norm", 1.0))
    lr = float(opts.get("learning_rate", 0.05))
    resolution = float(opts.get("resolution", config.resolution))
    correlated = bool(opts.get("correlated", False))
    delta = float(
        opts.get(
            "target_delta",
            config.target.delta if config.target is not None else 1e-5,
        )
    )
    models_raw = opts.get(
        "models",
        [
            {"sampling_rate": 0.05, "noise_multiplier": 2.0},
            {"sampling_rate": 0.10, "noise_multiplier": 0.8},
        ],
    )
    specs = [
        DpSgdMechanism.constant(
            steps,
            float(m["sampling_rate"]),
            clip,
            float(m["noise_multiplier"]),
            lr,
            independent_noise=not correlated,
        )
        for m in models_raw
    ]

    train = gen_blobs(n, dim, separation, seed=config.seed)
    holdout = gen_blobs(holdout_n, dim, separation, seed=config.seed + 1)
    params = [
        dpsgd_train(spec, train, seed=config.seed + 100 + i)[-1]
        for i, spec in enumerate(specs)
    ]
    grid = config.orders
    standalone = [
        rdp_to_dp(
            curve_for_spec(s, grid) if grid is not None else curve_for_spec(
                s, _default_int_grid()
            ),
            delta,
        ).eps
        for s in specs
    ]
    target = DpGuarantee(
        float(config.target.eps)
        if config.target is not None
        else 0.5 * (min(standalone) + max(standalone)),
        delta,
    )

    rs_cands = rs_feasible_candidates(
        specs, target, resolution, config.accountant,
        grid=config.orders, spacing=config.pld_spacing,
    )
    aligned = align_virtual_steps(specs)
    lc_feas = lc_feasible_set(
        aligned, target, resolution, config.accountant,
        grid=config.orders, max_terms=config.max_terms,
        spacing=config.pld_spacing,
    )

    lines = [
        "method,weight_0,weight_1,eps,delta,utility,utility_stderr",
    ]
    for c in rs_cands:
        util = merged_eval(params, c.weights, "rs", holdout)
        lines.append(
            ",".join(
                [
                    f"RS-{config.accountant.value.upper()}",
                    _fmt(c.weights[0]),
                    _fmt(c.weights[1]),
                    _fmt(c.eps),
                    _fmt(delta),
                    _fmt(util),
                    _fmt(0.0),
                ]
            )
        )
    for lam in lc_feas:
        if config.accountant is Accountant.RDP:
            eps = lc_dp_eps(aligned, lam, delta, config.orders, config.max_terms)
        else:
            eps = target.eps
        util = merged_eval(params, lam, "lc", holdout)
        lines.append(
            ",".join(
                [
                    f"LC-{config.accountant.value.upper()}",
                    _fmt(lam[0]),
                    _fmt(lam[1]),
                    _fmt(eps),
                    _fmt(delta),
                    _fmt(util),
                    _fmt(0.0),
                ]
            )
        )
    _atomic_write(
        os.path.join(out_dir, "dpsgd_sim_frontier.csv"),
        "\n".join(lines) + "\n",
    )
    summary = {
        "standalone_eps": standalone,
        "target_eps": target.eps,
        "target_delta": delta,
        "rs_feasible": len(rs_cands),
        "lc_feasible": len(lc_feas),
        "holdout_accuracy": [
            holdout_accuracy(p, holdout) for p in params
        ],
    }
    _atomic_write(
        os.path.join(out_dir, "dpsgd_sim_summary.json"),
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )
    _atomic_write(
        os.path.join(out_dir, "dpsgd_sim_manifest.json"),
        _manifest(config, "dpsgd-sim") + "\n",
    )
    return 0


def _default_int_grid():
    from .core import integer_order_grid

    return integer_order_grid()


def cmd_experiment(name: str, config: RunConfig, out_dir: str) -> int:
    if name == "mean-est":
        return _run_mean_est(config, out_dir)
    if name == "dpsgd-sim":
        return _run_dpsgd_sim(config, out_dir)
    raise ConfigError(f"unknown experiment {name!r}")


def cmd_compare(config: RunConfig, out_dir: str) -> int:
    """Renyi-vs-advanced-composition report for N identical Gaussians."""
    if not config.mechanisms:
        raise ConfigError("compare needs gaussian mechanisms")
    ratios = set()
    for mech in config.mechanisms:
        if not isinstance(mech, GaussianMechanism):
            raise ConfigError("compare requires gaussian mechanisms only")
        ratios.add(mech.sensitivity / mech.noise_std)
    if len(ratios) != 1:
        raise ConfigError("compare requires identical Delta/sigma ratios")
    if config.compare is None:
        raise ConfigError("compare needs a \"compare\" section")
    try:
        per_delta = float(
            _require(config.compare, "per_release_delta", "compare")
        )
        slack = float(_require(config.compare, "slack_delta", "compare"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad compare section: {exc}") from exc
    try:
        report = compare_prop10(
            ratios.pop(), per_delta, len(config.mechanisms), slack
        )
    except DeltaTooLarge as exc:
        raise ConfigError(f"delta must be < 1/2: {exc}") from exc
    _atomic_write(
        os.path.join(out_dir, "compare.json"), report.to_json() + "\n"
    )
    return 0


# ---------------------------------------------------------------------------
# Entry point.
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpmerge",
        description="Accounting and sweeps for merging private models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--accountant", choices=["rdp", "pld"])
        p.add_argument("--merge", choices=["rs", "lc"])
        p.add_argument("--resolution", type=float)

    common(sub.add_parser("curve", help="per-mechanism privacy curves"))
    common(sub.add_parser("feasible", help="feasible merge-weight sweep"))
    exp = sub.add_parser("experiment", help="run a named experiment")
    exp.add_argument("name", choices=["mean-est", "dpsgd-sim"])
    common(exp)
    common(sub.add_parser("compare", help="composition baselines report"))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _apply_overrides(load_config(args.config), args)
        out_dir = _out_dir(config, args)
        if args.command == "curve":
            return cmd_curve(config, out_dir)
        if args.command == "feasible":
            return cmd_feasible(config, out_dir)
        if args.command == "experiment":
            return cmd_experiment(args.name, config, out_dir)
        if args.command == "compare":
            return cmd_compare(config, out_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"dpmerge: config error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except (
        CorrelatedInputs,
        EnumerationCapExceeded,
        Unreachable,
        MemoryError,
        DpMergeError,
    ) as exc:
        print(f"dpmerge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
