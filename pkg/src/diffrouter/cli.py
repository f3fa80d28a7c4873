"""Command-line front end: config parsing, subcommand dispatch, ablation
sweeps, artifact layout, and deterministic SVG plots.

Every run resolves an INI config, hashes it, and owns
<outdir>/<config-hash>/{datasets,checkpoints,logs,reports,plots}. Re-running a
subcommand with the same config and seed reproduces byte-identical CSV and SVG
outputs. The output root can be overridden with DIFFROUTER_OUTPUT_ROOT.
"""

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, datagen, metrics
from . import router as router_mod
from .datagen import FAMILIES
from .netcore import DivergenceError
from .sample import TranslationRequest, route_path, translate
from .schedules import PROFILES, build_bridge_schedule, build_diffusion_schedule
from .train import REGIMES, VARIANTS, TrainConfig, train

SUBDIRS = ("datasets", "checkpoints", "logs", "reports", "plots")

REFINE_SWEEP = (0, 1, 3, 5)
LAMBDA2_SWEEP = (0.0, 0.3, 1.0, 3.0)

_DEFAULTS = {
    "instance": {"family": "gaussian-affine", "topology": "star", "k": "3",
                 "d": "2", "n_train": "20000", "n_eval_tuples": "5000",
                 "central": "0", "edge_shift": "0.0"},
    "schedule": {"t": "100", "profile": "linear", "eta": "0.0",
                 "variant": "diffusion", "bridge_scale": "1.0"},
    "network": {"hidden": "128,128,128", "time_dim": "16", "emb_dim": "8",
                "activation": "silu"},
    "train": {"steps": "20000", "finetune_steps": "6000", "scratch_steps": "6000",
              "batch_size": "128", "lr": "1e-4", "finetune_lr": "5e-5",
              "warmup_steps": "3000", "lambda1": "1.0", "lambda2": "1.0",
              "n_refine": "5", "log_window": "100", "curriculum": "true"},
    "eval": {"n_eval": "500", "steps": "0", "projections": "128"},
    "output": {"dir": "runs"},
    "run": {"seed": "0"},
}


class CliError(RuntimeError):
    """User-facing configuration or input error."""


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    topology: str
    K: int
    d: int
    n_train: int
    n_eval_tuples: int
    central: int
    edge_shift: float
    T: int
    profile: str
    eta: float
    variant: str
    bridge_scale: float
    hidden: tuple[int, ...]
    time_dim: int
    emb_dim: int
    activation: str
    steps: int
    finetune_steps: int
    scratch_steps: int
    batch_size: int
    lr: float
    finetune_lr: float
    warmup_steps: int
    lambda1: float
    lambda2: float
    n_refine: int
    log_window: int
    curriculum: bool
    n_eval: int
    eval_steps: int
    projections: int
    outdir: str
    seed: int


def _resolved_items(parser: configparser.ConfigParser) -> dict[str, str]:
    items = {}
    for section, defaults in _DEFAULTS.items():
        for key, default in defaults.items():
            val = parser.get(section, key, fallback=default)
            items[f"{section}.{key}"] = val
    # reject unknown keys early so typos do not silently fall back to defaults
    for section in parser.sections():
        if section not in _DEFAULTS:
            raise CliError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _DEFAULTS[section]:
                raise CliError(f"unknown config key {section}.{key}")
    return items


def load_config(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise CliError(f"config file not found: {path}")
        parser.read(path)
    for ov in overrides or []:
        key, sep, val = ov.partition("=")
        if not sep or "." not in key:
            raise CliError(f"override must look like section.key=value, got {ov!r}")
        section, _, name = key.partition(".")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, val)
    items = _resolved_items(parser)

    def geti(k):
        return int(items[k])

    def getf(k):
        return float(items[k])

    cfg = ExperimentConfig(
        family=items["instance.family"],
        topology=items["instance.topology"],
        K=geti("instance.k"),
        d=geti("instance.d"),
        n_train=geti("instance.n_train"),
        n_eval_tuples=geti("instance.n_eval_tuples"),
        central=geti("instance.central"),
        edge_shift=getf("instance.edge_shift"),
        T=geti("schedule.t"),
        profile=items["schedule.profile"],
        eta=getf("schedule.eta"),
        variant=items["schedule.variant"],
        bridge_scale=getf("schedule.bridge_scale"),
        hidden=tuple(int(w) for w in items["network.hidden"].split(",")),
        time_dim=geti("network.time_dim"),
        emb_dim=geti("network.emb_dim"),
        activation=items["network.activation"],
        steps=geti("train.steps"),
        finetune_steps=geti("train.finetune_steps"),
        scratch_steps=geti("train.scratch_steps"),
        batch_size=geti("train.batch_size"),
        lr=getf("train.lr"),
        finetune_lr=getf("train.finetune_lr"),
        warmup_steps=geti("train.warmup_steps"),
        lambda1=getf("train.lambda1"),
        lambda2=getf("train.lambda2"),
        n_refine=geti("train.n_refine"),
        log_window=geti("train.log_window"),
        curriculum=items["train.curriculum"].lower() in ("1", "true", "yes"),
        n_eval=geti("eval.n_eval"),
        eval_steps=geti("eval.steps"),
        projections=geti("eval.projections"),
        outdir=items["output.dir"],
        seed=geti("run.seed"),
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.family not in FAMILIES:
        raise CliError(f"unknown instance family {cfg.family!r}")
    if cfg.topology not in ("star", "chain"):
        raise CliError(f"unknown topology {cfg.topology!r}")
    if cfg.topology == "star" and cfg.K < 2:
        raise CliError("star topology needs at least 2 domains")
    if cfg.topology == "chain" and cfg.K < 3:
        raise CliError("chain topology needs at least 3 domains")
    if not 0 <= cfg.central < cfg.K:
        raise CliError(f"central domain {cfg.central} out of range")
    if cfg.profile not in PROFILES:
        raise CliError(f"unknown schedule profile {cfg.profile!r}")
    if cfg.variant not in VARIANTS:
        raise CliError(f"unknown schedule variant {cfg.variant!r}")
    for name in ("n_train", "n_eval_tuples", "T", "steps", "batch_size",
                 "time_dim", "emb_dim", "d"):
        if getattr(cfg, name) <= 0:
            raise CliError(f"{name} must be positive")
    if cfg.n_refine < 0 or cfg.lambda1 < 0 or cfg.lambda2 < 0:
        raise CliError("n_refine and loss coefficients must be nonnegative")


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable under key reordering; ignores the output directory so a run can
    be relocated without changing its identity."""
    parts = [f"{k}={v}" for k, v in sorted(vars(cfg).items()) if k != "outdir"]
    return hashlib.sha1("\n".join(parts).encode()).hexdigest()[:12]


def run_dir(cfg: ExperimentConfig) -> Path:
    root = os.environ.get("DIFFROUTER_OUTPUT_ROOT", cfg.outdir)
    run = Path(root) / config_hash(cfg)
    for sub in SUBDIRS:
        (run / sub).mkdir(parents=True, exist_ok=True)
    cfg_copy = run / "config.ini"
    if not cfg_copy.exists():
        lines = []
        for section, defaults in _DEFAULTS.items():
            lines.append(f"[{section}]")
            for key in defaults:
                lines.append(f"{key} = {_cfg_item(cfg, section, key)}")
            lines.append("")
        cfg_copy.write_text("\n".join(lines), encoding="utf-8")
    return run


_FIELD_BY_KEY = {
    "instance.family": "family", "instance.topology": "topology", "instance.k": "K",
    "instance.d": "d", "instance.n_train": "n_train",
    "instance.n_eval_tuples": "n_eval_tuples", "instance.central": "central",
    "instance.edge_shift": "edge_shift",
    "schedule.t": "T", "schedule.profile": "profile", "schedule.eta": "eta",
    "schedule.variant": "variant", "schedule.bridge_scale": "bridge_scale",
    "network.hidden": "hidden", "network.time_dim": "time_dim",
    "network.emb_dim": "emb_dim", "network.activation": "activation",
    "train.steps": "steps", "train.finetune_steps": "finetune_steps",
    "train.scratch_steps": "scratch_steps", "train.batch_size": "batch_size",
    "train.lr": "lr", "train.finetune_lr": "finetune_lr",
    "train.warmup_steps": "warmup_steps", "train.lambda1": "lambda1",
    "train.lambda2": "lambda2", "train.n_refine": "n_refine",
    "train.log_window": "log_window", "train.curriculum": "curriculum",
    "eval.n_eval": "n_eval", "eval.steps": "eval_steps",
    "eval.projections": "projections",
    "output.dir": "outdir", "run.seed": "seed",
}


def _cfg_item(cfg: ExperimentConfig, section: str, key: str) -> str:
    val = getattr(cfg, _FIELD_BY_KEY[f"{section}.{key}"])
    if isinstance(val, tuple):
        return ",".join(str(v) for v in val)
    if isinstance(val, bool):
        return "true" if val else "false"
    return str(val)


def child_seed(master: int, component: str) -> int:
    digest = hashlib.sha256(f"{master}/{component}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def update_manifest(run: Path, cfg: ExperimentConfig, artifacts: dict[str, str]) -> None:
    path = run / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {
        "config_hash": config_hash(cfg), "tool_version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"), "artifacts": {}}
    for name, rel in artifacts.items():
        if not (run / rel).exists():
            raise CliError(f"manifest artifact missing on disk: {rel}")
        manifest["artifacts"][name] = rel
    manifest["updated"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# ---------------------------------------------------------------------------
# instance / schedule plumbing

def build_instance(cfg: ExperimentConfig):
    seed = child_seed(cfg.seed, "datagen")
    if cfg.topology == "star":
        return datagen.make_star_instance(cfg.K, cfg.d, cfg.n_train, seed,
                                          family=cfg.family, M=cfg.n_eval_tuples,
                                          central=cfg.central,
                                          edge_shift=cfg.edge_shift)
    return datagen.make_chain_instance(cfg.K, cfg.d, cfg.n_train, seed,
                                       M=cfg.n_eval_tuples, family=cfg.family)


def build_schedule(cfg: ExperimentConfig):
    if cfg.variant == "bridge":
        return build_bridge_schedule(cfg.T, scale=cfg.bridge_scale, eta=cfg.eta)
    return build_diffusion_schedule(cfg.T, profile=cfg.profile, eta=cfg.eta)


def _edge_file(a: int, b: int) -> str:
    return f"datasets/edge_{a}-{b}.bin"


def load_run_data(cfg: ExperimentConfig, run: Path):
    """Load datasets written by gen-data; raises if they are missing."""
    topo = build_instance_topology(cfg)
    datasets = []
    for a, b in topo.edges:
        path = run / _edge_file(a, b)
        if not path.exists():
            raise CliError(f"missing dataset {path}; run gen-data first")
        datasets.append(datagen.load_paired_dataset(path))
    tuples = datagen.load_eval_tuples(run / "datasets/eval.bin")
    inst = None
    inst_path = run / "datasets/instance.json"
    if inst_path.exists():
        inst = datagen.instance_from_dict(json.loads(inst_path.read_text()))
    return topo, datasets, tuples, inst


def build_instance_topology(cfg: ExperimentConfig) -> datagen.Topology:
    if cfg.topology == "star":
        edges = tuple((k, cfg.central) for k in range(cfg.K) if k != cfg.central)
        return datagen.Topology(K=cfg.K, edges=edges, central=cfg.central)
    edges = tuple((k, k + 1) for k in range(cfg.K - 1))
    return datagen.Topology(K=cfg.K, edges=edges, central=None)


def all_directions(topo: datagen.Topology) -> list[tuple[int, int]]:
    return [(i, j) for i in range(topo.K) for j in range(topo.K) if i != j]


def edge_directions(topo: datagen.Topology) -> list[tuple[int, int]]:
    return [(i, j) for i, j in all_directions(topo) if topo.is_edge(i, j)]


def nonedge_directions(topo: datagen.Topology) -> list[tuple[int, int]]:
    return [(i, j) for i, j in all_directions(topo) if not topo.is_edge(i, j)]


# ---------------------------------------------------------------------------
# deterministic SVG plots

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_open(width: int, height: int) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>']


def _fit(vals, lo_pix, hi_pix):
    vmin, vmax = float(np.min(vals)), float(np.max(vals))
    if vmax - vmin < 1e-12:
        vmin, vmax = vmin - 1.0, vmax + 1.0
    span = vmax - vmin

    def to_pix(v):
        return lo_pix + (np.asarray(v, dtype=np.float64) - vmin) / span * (hi_pix - lo_pix)

    return to_pix, vmin, vmax


def emit_scatter_svg(path, groups: list[tuple[str, np.ndarray]], title: str = "") -> None:
    """groups: (label, (n, >=2) points); only the first two coordinates are
    drawn. Deterministic output, no timestamps."""
    if not groups or all(len(g[1]) == 0 for g in groups):
        raise CliError("empty plot input")
    W, H, pad = 480, 480, 45
    pts = np.concatenate([np.atleast_2d(g[1])[:, :2] for g in groups])
    fx, xmin, xmax = _fit(pts[:, 0], pad, W - pad)
    fy, ymin, ymax = _fit(pts[:, 1], H - pad, pad)
    out = _svg_open(W, H)
    out.append(f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" '
               f'height="{H - 2 * pad}" fill="none" stroke="#888"/>')
    if title:
        out.append(f'<text x="{W // 2}" y="20" text-anchor="middle" '
                   f'font-size="13">{title}</text>')
    for gi, (label, arr) in enumerate(groups):
        color = _PALETTE[gi % len(_PALETTE)]
        arr = np.atleast_2d(arr)[:, :2]
        for x, y in zip(fx(arr[:, 0]), fy(arr[:, 1])):
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2" fill="{color}" '
                       f'fill-opacity="0.55"/>')
        out.append(f'<text x="{pad + 4}" y="{pad + 14 + 14 * gi}" font-size="11" '
                   f'fill="{color}">{label}</text>')
    out.append(f'<text x="{pad}" y="{H - 8}" font-size="10">[{xmin:.3g}, {xmax:.3g}] x '
               f'[{ymin:.3g}, {ymax:.3g}]</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def emit_line_svg(path, series: list[tuple[str, np.ndarray, np.ndarray]],
                  title: str = "", log_y: bool = False) -> None:
    """series: (label, xs, ys) line plots sharing one axis box."""
    series = [(lbl, np.asarray(xs, float), np.asarray(ys, float))
              for lbl, xs, ys in series if len(xs)]
    if not series:
        raise CliError("empty plot input")
    W, H, pad = 520, 360, 45
    all_x = np.concatenate([xs for _, xs, _ in series])
    all_y = np.concatenate([ys for _, _, ys in series])
    if log_y:
        all_y = np.log10(np.maximum(all_y, 1e-12))
    fx, xmin, xmax = _fit(all_x, pad, W - pad)
    fy, ymin, ymax = _fit(all_y, H - pad, pad)
    out = _svg_open(W, H)
    out.append(f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" '
               f'height="{H - 2 * pad}" fill="none" stroke="#888"/>')
    if title:
        out.append(f'<text x="{W // 2}" y="20" text-anchor="middle" '
                   f'font-size="13">{title}</text>')
    for si, (label, xs, ys) in enumerate(series):
        color = _PALETTE[si % len(_PALETTE)]
        if log_y:
            ys = np.log10(np.maximum(ys, 1e-12))
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(fx(xs), fy(ys)))
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"/>')
        out.append(f'<text x="{W - pad - 4}" y="{pad + 14 + 14 * si}" font-size="11" '
                   f'text-anchor="end" fill="{color}">{label}</text>')
    axis = "log10(y)" if log_y else "y"
    out.append(f'<text x="{pad}" y="{H - 8}" font-size="10">x in [{xmin:.3g}, '
               f'{xmax:.3g}], {axis} in [{ymin:.3g}, {ymax:.3g}]</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def plot_training_log(log_rows, path, title: str) -> None:
    by_dir: dict[str, tuple[list, list]] = {}
    for step, direction, loss, _lr in log_rows:
        xs, ys = by_dir.setdefault(direction, ([], []))
        xs.append(step)
        ys.append(loss)
    series = [(d, np.array(xs), np.array(ys)) for d, (xs, ys) in sorted(by_dir.items())]
    emit_line_svg(path, series, title=title, log_y=True)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.override)
    run = run_dir(cfg)
    topo, datasets, tuples, inst = build_instance(cfg)
    meta = {"family": cfg.family, "seed": cfg.seed, "config_hash": config_hash(cfg)}
    artifacts = {}
    for ds in datasets:
        rel = _edge_file(*ds.edge)
        datagen.save_paired_dataset(run / rel, ds, meta)
        artifacts[f"dataset-{ds.edge[0]}-{ds.edge[1]}"] = rel
    datagen.save_eval_tuples(run / "datasets/eval.bin", tuples, meta)
    artifacts["eval-tuples"] = "datasets/eval.bin"
    if inst is not None:
        (run / "datasets/instance.json").write_text(
            json.dumps(datagen.instance_to_dict(inst), sort_keys=True) + "\n")
        artifacts["instance"] = "datasets/instance.json"
    update_manifest(run, cfg, artifacts)
    print(f"gen-data: wrote {len(datasets)} edge datasets + eval tuples to {run}")
    return 0


def _train_common(args, regime: str, ckpt_name: str, steps_field: str) -> int:
    cfg = load_config(args.config, args.override)
    run = run_dir(cfg)
    topo, datasets, _tuples, _inst = load_run_data(cfg, run)
    sch = build_schedule(cfg)
    init_params = None
    if regime == "finetune":
        paired_path = run / "checkpoints/paired.ckpt"
        if args.init_checkpoint:
            paired_path = Path(args.init_checkpoint)
        if not paired_path.exists():
            raise CliError(f"missing pretrained checkpoint {paired_path}; "
                           "run train-paired first")
        init_params, _ = router_mod.load_checkpoint(paired_path)
    tcfg = TrainConfig(
        lambda1=cfg.lambda1, lambda2=cfg.lambda2, n_refine=cfg.n_refine,
        regime=regime, variant=cfg.variant, steps=getattr(cfg, steps_field),
        batch_size=cfg.batch_size, seed=child_seed(cfg.seed, regime),
        lr=cfg.lr, finetune_lr=cfg.finetune_lr, warmup_steps=cfg.warmup_steps,
        log_window=cfg.log_window, hidden=cfg.hidden, time_dim=cfg.time_dim,
        emb_dim=cfg.emb_dim, activation=cfg.activation, curriculum=cfg.curriculum)
    log_rel = f"logs/{regime}.csv"
    result = train(tcfg, topo, datasets, sch, init_params=init_params,
                   log_path=run / log_rel)
    ckpt_rel = f"checkpoints/{ckpt_name}"
    router_mod.save_checkpoint(run / ckpt_rel, result.params,
                               extra_header={"config_hash": config_hash(cfg)})
    plot_rel = f"plots/{regime}-loss.svg"
    plot_training_log(result.log_rows, run / plot_rel, title=f"{regime} loss")
    update_manifest(run, cfg, {f"checkpoint-{regime}": ckpt_rel,
                               f"log-{regime}": log_rel,
                               f"plot-{regime}": plot_rel})
    final = result.log_rows[-1][2] if result.log_rows else float("nan")
    print(f"{regime}: {tcfg.steps} steps, final windowed loss {final:.4g}, "
          f"checkpoint {run / ckpt_rel}")
    return 0


def cmd_train_paired(args) -> int:
    return _train_common(args, "paired-only", "paired.ckpt", "steps")


def cmd_finetune_direct(args) -> int:
    return _train_common(args, "finetune", "direct.ckpt", "finetune_steps")


def cmd_train_scratch(args) -> int:
    return _train_common(args, "from-scratch", "scratch.ckpt", "scratch_steps")


def _load_predictor(run: Path, checkpoint: str | None, default: str):
    path = Path(checkpoint) if checkpoint else run / "checkpoints" / default
    if not path.exists():
        raise CliError(f"checkpoint not found: {path}")
    params, header = router_mod.load_checkpoint(path)
    return params, header


def cmd_translate(args) -> int:
    cfg = load_config(args.config, args.override)
    run = run_dir(cfg)
    topo, _datasets, tuples, inst = load_run_data(cfg, run)
    params, _ = _load_predictor(run, args.checkpoint, "paired.ckpt")
    sch = build_schedule(cfg)
    n = args.n or cfg.n_eval
    x_src = tuples.domain(args.src)[:n]
    req = TranslationRequest(x_src=x_src, src=args.src, tgt=args.tgt,
                             mode=args.mode, steps=args.steps, eta=args.eta,
                             seed=args.seed)
    result = translate(params, req, topo, sch, variant=cfg.variant)
    rel = f"reports/translate-{args.src}-{args.tgt}-{args.mode}.csv"
    with open(run / rel, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{k}" for k in range(x_src.shape[1])])
        for row in np.atleast_2d(result.x_tgt):
            writer.writerow([f"{v:.6g}" for v in row])
    artifacts = {f"translate-{args.src}-{args.tgt}-{args.mode}": rel}
    if args.plot:
        groups = [("source", x_src), ("output", np.atleast_2d(result.x_tgt))]
        if inst is not None:
            ref = datagen.sample_conditional(inst, args.src, args.tgt, x_src,
                                             np.random.default_rng(args.seed))
            groups.append(("target-conditional", ref))
        else:
            groups.append(("target-aligned", tuples.domain(args.tgt)[:n]))
        plot_rel = f"plots/translate-{args.src}-{args.tgt}-{args.mode}.svg"
        emit_scatter_svg(run / plot_rel, groups,
                         title=f"{args.src}->{args.tgt} ({args.mode})")
        artifacts[f"plot-translate-{args.src}-{args.tgt}"] = plot_rel
    update_manifest(run, cfg, artifacts)
    print(f"translate: {args.src}->{args.tgt} mode={args.mode} "
          f"steps={result.total_steps} wrote {run / rel}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.override)
    run = run_dir(cfg)
    topo, _datasets, tuples, inst = load_run_data(cfg, run)
    default_ckpt = "direct.ckpt" if args.mode == "direct" else "paired.ckpt"
    params, _ = _load_predictor(run, args.checkpoint, default_ckpt)
    sch = build_schedule(cfg)
    if args.directions == "edges":
        directions = edge_directions(topo)
    elif args.directions == "nonedges":
        directions = nonedge_directions(topo)
    else:
        directions = all_directions(topo)
    report = metrics.evaluate_checkpoint(
        params, tuples, topo, directions, args.mode, sch, inst=inst,
        n_eval=cfg.n_eval, seed=child_seed(cfg.seed, "eval"),
        steps=cfg.eval_steps, eta=cfg.eta, variant=cfg.variant,
        projections=cfg.projections, config_hash=config_hash(cfg))
    rel = f"reports/eval-{args.mode}-{args.directions}.csv"
    metrics.write_report_csv(run / rel, report)
    update_manifest(run, cfg, {f"eval-{args.mode}-{args.directions}": rel})
    for rec in report.records:
        print(f"eval: {rec.src}->{rec.tgt} mode={rec.mode} "
              f"sliced_w2={rec.sliced_w2:.4g} mmd={rec.mmd:.4g} "
              f"rmse={rec.rmse:.4g} steps={rec.steps}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.override)
    run = run_dir(cfg)
    topo, datasets, tuples, inst = load_run_data(cfg, run)
    sch = build_schedule(cfg)
    paired_path = run / "checkpoints/paired.ckpt"
    if not paired_path.exists():
        raise CliError(f"missing pretrained checkpoint {paired_path}; "
                       "run train-paired first")
    init_params, _ = router_mod.load_checkpoint(paired_path)

    if args.sweep == "refine-steps":
        cells = [("n_refine", n, cfg.lambda2, n) for n in REFINE_SWEEP]
        directions = nonedge_directions(topo)
    else:
        cells = [("lambda2", lam, lam, 0) for lam in LAMBDA2_SWEEP]
        directions = edge_directions(topo)

    rows = []
    for name, value, lam2, n_ref in cells:
        try:
            tcfg = TrainConfig(
                lambda1=cfg.lambda1, lambda2=lam2, n_refine=n_ref,
                regime="finetune", variant=cfg.variant, steps=cfg.finetune_steps,
                batch_size=cfg.batch_size,
                seed=child_seed(cfg.seed, f"ablate-{name}-{value}"),
                lr=cfg.lr, finetune_lr=cfg.finetune_lr,
                warmup_steps=cfg.warmup_steps, log_window=cfg.log_window,
                hidden=cfg.hidden, curriculum=cfg.curriculum)
            result = train(tcfg, topo, datasets, sch, init_params=init_params)
            report = metrics.evaluate_checkpoint(
                result.params, tuples, topo, directions, "direct", sch,
                inst=inst, n_eval=cfg.n_eval, seed=child_seed(cfg.seed, "eval"),
                steps=cfg.eval_steps, eta=cfg.eta, variant=cfg.variant,
                projections=cfg.projections, config_hash=config_hash(cfg))
            sw = float(np.mean([r.sliced_w2 for r in report.records]))
            rows.append((name, value, f"{sw:.6g}", "ok"))
        except (CliError, DivergenceError, ValueError) as exc:
            rows.append((name, value, "", f"failed: {exc}"))
    rel = f"reports/ablate-{args.sweep}.csv"
    with open(run / rel, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep", "value", "mean_sliced_w2", "status"])
        writer.writerows(rows)
    ok = [(float(v), float(sw)) for _, v, sw, st in rows if st == "ok"]
    artifacts = {f"ablate-{args.sweep}": rel}
    if ok:
        xs = np.array([x for x, _ in ok])
        ys = np.array([y for _, y in ok])
        plot_rel = f"plots/ablate-{args.sweep}.svg"
        emit_line_svg(run / plot_rel, [(args.sweep, xs, ys)],
                      title=f"sliced W2 vs {args.sweep}")
        artifacts[f"plot-ablate-{args.sweep}"] = plot_rel
    update_manifest(run, cfg, artifacts)
    for row in rows:
        print(f"ablate: {row[0]}={row[1]} sliced_w2={row[2] or 'n/a'} [{row[3]}]")
    return 0


def cmd_verify_oracle(args) -> int:
    rng = np.random.default_rng(args.seed)
    # a 1-D instance with a near-deterministic central domain, where the
    # conditional-independence assumption behind the decomposition is tightest
    inst = datagen._make_gaussian_instance(3, 1, rng, central=0,
                                           central_noise=1e-3)
    nested, direct = metrics.nested_vs_direct_kl(inst, central=0, src=1, tgt=2)
    diff = abs(nested - direct)
    ok_a = diff < 1e-3
    print(f"decomposition-check nested={nested:.6f} direct={direct:.6f} "
          f"diff={diff:.2e} {'PASS' if ok_a else 'FAIL'}")

    trial_rng = np.random.default_rng(args.seed + 1)
    holds = 0
    for _ in range(100):
        step_sum, endpoint, se = metrics.pathwise_kl_bound_trial(trial_rng)
        if step_sum >= endpoint - 2.0 * se:
            holds += 1
    ok_b = holds >= 95
    print(f"pathwise-bound-check holds in {holds}/100 trials "
          f"{'PASS' if ok_b else 'FAIL'}")
    return 0 if (ok_a and ok_b) else 1


# ---------------------------------------------------------------------------
# dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffrouter",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        return p

    def add_cfg(p):
        p.add_argument("--config", default=None, help="INI config path")
        p.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")

    p = add("gen-data", cmd_gen_data, help="generate edge datasets and eval tuples")
    add_cfg(p)

    for name, fn in (("train-paired", cmd_train_paired),
                     ("finetune-direct", cmd_finetune_direct),
                     ("train-scratch", cmd_train_scratch)):
        p = add(name, fn, help=f"run the {name} training regime")
        add_cfg(p)
        p.add_argument("--init-checkpoint", default=None,
                       help="pretrained checkpoint (finetune only)")

    p = add("translate", cmd_translate, help="translate eval sources")
    add_cfg(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--src", type=int, required=True)
    p.add_argument("--tgt", type=int, required=True)
    p.add_argument("--mode", choices=("indirect", "direct"), default="indirect")
    p.add_argument("--steps", type=int, default=0, help="0 uses the full schedule")
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=0, help="number of sources (0: eval.n_eval)")
    p.add_argument("--plot", action="store_true")

    p = add("eval", cmd_eval, help="metric report over translation directions")
    add_cfg(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--mode", choices=("indirect", "direct"), default="indirect")
    p.add_argument("--directions", choices=("all", "edges", "nonedges"),
                   default="all")

    p = add("ablate", cmd_ablate, help="finetune sweep grids")
    add_cfg(p)
    p.add_argument("sweep", choices=("refine-steps", "lambda2"))

    p = add("verify-oracle", cmd_verify_oracle,
            help="numerical decomposition and pathwise-bound checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, DivergenceError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
