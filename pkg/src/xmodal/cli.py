"""Command-line entry points: scenario generation, training, evaluation,
ablation sweeps, and success-rate plots.

Configuration comes from an optional JSON file plus ``--key value``
overrides (nested keys use dots, e.g. ``--model.d_z 8``); the environment
variable ``XMODAL_SEED``, when set, wins over both. Exit codes: 0 on
success, 2 for configuration errors, 3 when training diverges.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .autodiff import load_checkpoint
from .metrics import load_report, save_report
from .scenario import ScenarioError, load_scenarios, save_scenarios
from .training import ConfigError, RunConfig, ablate, evaluate, generate_dataset, train

__all__ = ["main", "build_config", "plot_sr"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _coerce(text):
    """Interpret an override value the way JSON would."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_overrides(tokens):
    """Turn trailing ``--key value`` pairs into a nested dict."""
    out = {}
    i = 0
    while i < len(tokens):
        key = tokens[i]
        if not key.startswith("--") or i + 1 >= len(tokens):
            raise ConfigError(f"expected --key value pairs, got {tokens[i:]}")
        node = out
        parts = key[2:].replace("-", "_").split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot nest override under scalar key {part!r}")
        node[parts[-1]] = _coerce(tokens[i + 1])
        i += 2
    return out


def build_config(config_path, overrides, env=None) -> RunConfig:
    """Merge config file, command-line overrides, and XMODAL_SEED."""
    data = {}
    if config_path is not None:
        try:
            with open(config_path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for key, value in _parse_overrides(overrides).items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    env = os.environ if env is None else env
    if "XMODAL_SEED" in env:
        try:
            data["seed"] = int(env["XMODAL_SEED"])
        except ValueError as exc:
            raise ConfigError(f"XMODAL_SEED must be an integer: {exc}") from exc
    return RunConfig.from_dict(data)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_gen(args, overrides):
    config = build_config(args.config, overrides)
    train_set, eval_set = generate_dataset(config)
    save_scenarios(args.out_train, train_set)
    save_scenarios(args.out_eval, eval_set)
    print(f"wrote {len(train_set)} train -> {args.out_train}, "
          f"{len(eval_set)} eval -> {args.out_eval}")
    return EXIT_OK


def _cmd_train(args, overrides):
    config = build_config(args.config, overrides)
    scenarios = load_scenarios(args.scenarios) if args.scenarios else None
    store, log = train(config, scenarios, checkpoint_path=args.checkpoint)
    if args.log:
        with open(args.log, "w") as fh:
            json.dump({"epochs": log.epochs, "aborted": log.aborted,
                       "abort_epoch": log.abort_epoch}, fh, indent=2)
    if log.aborted:
        print(f"training diverged at epoch {log.abort_epoch}; "
              f"checkpoint holds the last finite parameters", file=sys.stderr)
        return EXIT_DIVERGED
    totals = log.totals()
    print(f"trained {config.epochs} epochs; loss {totals[0]:.4f} -> {totals[-1]:.4f}")
    return EXIT_OK


def _cmd_eval(args, overrides):
    config = build_config(args.config, overrides)
    store = load_checkpoint(args.checkpoint)
    if args.scenarios:
        scenarios = load_scenarios(args.scenarios)
    else:
        _, scenarios = generate_dataset(config)
    report = evaluate(store, config, scenarios, args.modality)
    save_report(args.report, report)
    print(f"{args.modality}: ADE@4s {report['horizons']['4.0']['ade']:.4f} "
          f"FDE@4s {report['horizons']['4.0']['fde']:.4f} -> {args.report}")
    return EXIT_OK


def _cmd_ablate(args, overrides):
    config = build_config(args.config, overrides)
    rows = ablate(config)
    with open(args.out, "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
    width = max(len(r["name"]) for r in rows)
    print(f"{'variant'.ljust(width)}  minADE   FDE@4s   SR@1.5")
    for r in rows:
        flag = "  (diverged)" if r["aborted"] else ""
        print(f"{r['name'].ljust(width)}  {r['min_ade']:.4f}   "
              f"{r['fde_4s']:.4f}   {r['sr_at_1p5']:.4f}{flag}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# success-rate plots
# ---------------------------------------------------------------------------


def _svg_polyline(points, color):
    path = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{path}"/>')


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def plot_sr(reports, csv_path, svg_path, labels=None):
    """Write one success-rate curve per report as CSV and a standalone SVG.

    All reports must share a unit system (and hence a threshold grid);
    mixing meter and pixel curves on one axis is rejected.
    """
    if not reports:
        raise ConfigError("need at least one report")
    units = {r["units"] for r in reports}
    if len(units) > 1:
        raise ConfigError(f"cannot plot curves with mixed units: {sorted(units)}")
    grids = [r["sr_curve"]["thresholds"] for r in reports]
    if any(g != grids[0] for g in grids[1:]):
        raise ConfigError("reports use different threshold grids")
    labels = labels or [f"{r['modality']} seed {r['seed']}" for r in reports]
    thresholds = grids[0]

    with open(csv_path, "w") as fh:
        fh.write("threshold," + ",".join(labels) + "\n")
        for i, eps in enumerate(thresholds):
            row = [repr(float(eps))] + [
                repr(float(r["sr_curve"]["rates"][i])) for r in reports
            ]
            fh.write(",".join(row) + "\n")

    # fixed 480x320 canvas with a 60/20 px margin box
    w, h, ml, mt, mr, mb = 480, 320, 60, 20, 20, 50
    x0, x1 = thresholds[0], thresholds[-1]
    px = lambda eps: ml + (eps - x0) / (x1 - x0) * (w - ml - mr)
    py = lambda r: h - mb - r * (h - mt - mb)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{ml}" y1="{h - mb}" x2="{w - mr}" y2="{h - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h - mb}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        eps = x0 + frac * (x1 - x0)
        parts.append(f'<text x="{px(eps):.1f}" y="{h - mb + 16}" font-size="10" '
                     f'text-anchor="middle">{eps:g}</text>')
        parts.append(f'<text x="{ml - 6}" y="{py(frac) + 3:.1f}" font-size="10" '
                     f'text-anchor="end">{frac:g}</text>')
    unit = reports[0]["units"]
    parts.append(f'<text x="{(ml + w - mr) / 2}" y="{h - 8}" font-size="11" '
                 f'text-anchor="middle">threshold ({unit})</text>')
    parts.append(f'<text x="14" y="{(mt + h - mb) / 2}" font-size="11" '
                 f'text-anchor="middle" transform="rotate(-90 14 '
                 f'{(mt + h - mb) / 2})">success rate</text>')
    for k, (rep, label) in enumerate(zip(reports, labels)):
        color = _COLORS[k % len(_COLORS)]
        pts = [(px(t), py(r)) for t, r in zip(thresholds, rep["sr_curve"]["rates"])]
        parts.append(_svg_polyline(pts, color))
        ly = mt + 14 + 14 * k
        parts.append(f'<line x1="{w - mr - 110}" y1="{ly - 4}" x2="{w - mr - 90}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{w - mr - 84}" y="{ly}" font-size="10">{label}</text>')
    parts.append("</svg>")
    with open(svg_path, "w") as fh:
        fh.write("\n".join(parts))


def _cmd_plot_sr(args, overrides):
    if overrides:
        raise ConfigError(f"plot-sr takes no config overrides, got {overrides}")
    reports = [load_report(p) for p in args.reports]
    plot_sr(reports, args.csv, args.svg, labels=args.labels)
    print(f"wrote {args.csv} and {args.svg} ({len(reports)} curve(s))")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="xmodal",
        description="Shared cross-modal trajectory prediction experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate train/eval scenario files")
    gen.add_argument("--config")
    gen.add_argument("--out-train", default="scenarios_train.json")
    gen.add_argument("--out-eval", default="scenarios_eval.json")

    tr = sub.add_parser("train", help="train all enabled modality branches")
    tr.add_argument("--config")
    tr.add_argument("--scenarios", help="training scenario file (default: regenerate)")
    tr.add_argument("--checkpoint", default="checkpoint.json")
    tr.add_argument("--log", help="optional JSON training-log path")

    ev = sub.add_parser("eval", help="evaluate one modality of a checkpoint")
    ev.add_argument("--config")
    ev.add_argument("--checkpoint", default="checkpoint.json")
    ev.add_argument("--modality", default="topdown")
    ev.add_argument("--scenarios", help="eval scenario file (default: regenerate)")
    ev.add_argument("--report", default="report.json")

    ab = sub.add_parser("ablate", help="run the component toggle grid")
    ab.add_argument("--config")
    ab.add_argument("--out", default="ablation.json")

    ps = sub.add_parser("plot-sr", help="plot success-rate curves from reports")
    ps.add_argument("reports", nargs="+")
    ps.add_argument("--csv", default="sr.csv")
    ps.add_argument("--svg", default="sr.svg")
    ps.add_argument("--labels", nargs="*")
    return parser


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "plot-sr": _cmd_plot_sr,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return _COMMANDS[args.command](args, extra)
    except (ConfigError, ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
