"""Command-line front end tying data generation, training, sampling,
rendering and evaluation into one reproducible binary.

Every command reads a structured key-value config plus a seed, writes its
artifacts to files, and keeps progress chatter on stderr, so re-running a
command with the same inputs reproduces the same bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import verify
from .actiontext import AggregatorConfig, Vocabulary
from .animator import (
    AnimationModel,
    ConditioningBundle,
    EpisodeData,
    TemporalModelConfig,
    TrainConfig,
    autoregressive_extend,
    build_schedule,
    sample_many,
    train,
    upsample_framerate,
)
from .animator.model import CONFIG_NAME
from .evalkit import TaskSpec, run_eval
from .numerics import make_rng
from .renderer import fit_scene, load_camera, load_scene, read_image, render, save_scene, write_image
from .stateseq import ActionTrack, MaskPair, PropertyLayout, StateSequence
from .toyworld import ToyWorldConfig, read_dataset, simulate_episode, write_dataset

SAMPLES_NAME = "samples.jsonl"


@dataclass
class RunConfig:
    """Flat run settings shared by all subcommands.

    Path-like fields stay empty until a config provides them; each command
    checks the ones it needs before doing any work.
    """

    seed: int = 0
    dataset: str = ""
    checkpoint: str = ""
    input: str = ""
    output: str = ""
    episodes: int = 100
    frames: int = 64
    framerate: float = 20.0
    layers: int = 4
    heads: int = 4
    width: int = 256
    k_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.0
    seq_len: int = 16
    lr: float = 1e-4
    warmup: int = 1000
    steps: int = 20000
    batch_size: int = 8
    sampler: str = "ddpm"
    task: str = "unconditional"
    num_samples: int = 8
    conditioning: str = ""
    rate_to: float = 0.0
    extend_frames: int = 0
    scene: str = ""
    camera: str = ""
    views: str = ""
    fit_steps: int = 2000
    patch_size: int = 32
    fit_lr: float = 5e-3


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_run_config(text: str, source: str = "config") -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment, unknown keys fail."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source} line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"{source} line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"{source} line {lineno}: duplicate key {key!r}")
        kind = _FIELD_TYPES[key]
        try:
            if kind in ("int", int):
                values[key] = int(val)
            elif kind in ("float", float):
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError:
            raise ValueError(f"{source} line {lineno}: bad value {val!r} for {key!r}") from None
    return RunConfig(**values)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"config file not found: {path}")
    return parse_run_config(path.read_text(), source=str(path))


def _require_path(cfg: RunConfig, key: str, command: str, kind: str = "dir") -> Path:
    """Fetch a path-valued config key and check it exists before any work."""
    value = getattr(cfg, key)
    if not value:
        raise ValueError(f"{command}: config key {key!r} is required")
    path = Path(value)
    if kind == "dir" and not path.is_dir():
        raise ValueError(f"{command}: {key} not found: {path}")
    if kind == "file" and not path.is_file():
        raise ValueError(f"{command}: {key} not found: {path}")
    return path


def _output_dir(cfg: RunConfig, command: str) -> Path:
    if not cfg.output:
        raise ValueError(f"{command}: config key 'output' is required")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_sampler(spec: str) -> tuple[str, int]:
    """Split 'ddpm' or 'ddim:<n>' into (name, ddim step count)."""
    if spec == "ddpm":
        return "ddpm", 50
    if spec.startswith("ddim:"):
        _, _, n = spec.partition(":")
        try:
            steps = int(n)
        except ValueError:
            steps = 0
        if steps < 1:
            raise ValueError(f"sampler: bad ddim step count in {spec!r}")
        return "ddim", steps
    raise ValueError(f"sampler: expected 'ddpm' or 'ddim:<n>', got {spec!r}")


def _schedule_from(cfg: RunConfig):
    beta_end = cfg.beta_end if cfg.beta_end > 0 else None
    return build_schedule(cfg.k_steps, cfg.beta_start, beta_end)


def _load_model(cfg: RunConfig, command: str) -> AnimationModel:
    path = Path(cfg.checkpoint)
    if not cfg.checkpoint or not (path / CONFIG_NAME).is_file():
        raise ValueError(f"{command}: checkpoint not found: {path}")
    return AnimationModel.load(path)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def conditioning_file_load(
    path: str | Path, layout: PropertyLayout, t: int, framerate: float
) -> ConditioningBundle:
    """Read conditioning entries from a structured text file.

    Lines are `state <t> <property> <v1> ... <vk>` or
    `action <t> <agent> <text...>`; anything not listed stays masked out, so
    an empty file yields a fully generated sequence.
    """
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"conditioning file not found: {path}")
    slices = layout.slices()
    dims = {p.name: p.dim for p in layout.properties}
    agents = {name: i for i, name in enumerate(layout.actionable)}
    s_c = np.zeros((t, layout.state_dim), dtype=np.float32)
    m_state = np.zeros((layout.num_properties, t), dtype=np.float32)
    m_action = np.zeros((layout.num_actionable, t), dtype=np.float32)
    labels = [[""] * t for _ in layout.actionable]
    seen_state: set[tuple[int, str]] = set()
    seen_action: set[tuple[int, str]] = set()
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        where = f"conditioning line {lineno}"
        if len(parts) < 4:
            raise ValueError(f"{where}: expected 'state|action <t> <name> <values...>'")
        kind, t_raw, name = parts[0], parts[1], parts[2]
        try:
            ti = int(t_raw)
        except ValueError:
            raise ValueError(f"{where}: bad timestep {t_raw!r}") from None
        if not 0 <= ti < t:
            raise ValueError(f"{where}: timestep {ti} outside [0, {t})")
        if kind == "state":
            if name not in dims:
                raise ValueError(f"{where}: unknown property {name!r}")
            if (ti, name) in seen_state:
                raise ValueError(f"{where}: duplicate entry for cell (t={ti}, {name})")
            seen_state.add((ti, name))
            try:
                vals = [float(v) for v in parts[3:]]
            except ValueError:
                raise ValueError(f"{where}: bad value in {parts[3:]!r}") from None
            if len(vals) != dims[name]:
                raise ValueError(
                    f"{where}: property {name!r} takes {dims[name]} values, got {len(vals)}"
                )
            s_c[ti, slices[name]] = np.asarray(vals, dtype=np.float32)
            m_state[layout.property_index(name), ti] = 1.0
        elif kind == "action":
            if name not in agents:
                raise ValueError(f"{where}: unknown agent {name!r}")
            if (ti, name) in seen_action:
                raise ValueError(f"{where}: duplicate entry for cell (t={ti}, {name})")
            seen_action.add((ti, name))
            labels[agents[name]][ti] = " ".join(parts[3:])
            m_action[agents[name], ti] = 1.0
        else:
            raise ValueError(f"{where}: unknown entry kind {kind!r}")
    return ConditioningBundle(
        s_c=StateSequence(layout, s_c, framerate),
        a_c=ActionTrack(layout, labels),
        masks=MaskPair(m_state, m_action),
        framerate=framerate,
    )


def _write_samples(path: Path, sequences: list[StateSequence]) -> None:
    with path.open("w") as fh:
        for i, s in enumerate(sequences):
            row = {
                "index": i,
                "framerate": s.framerate,
                "states": [[float(v) for v in step] for step in s.values],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_samples(path: Path, layout: PropertyLayout) -> list[StateSequence]:
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            values = np.asarray(row["states"], dtype=np.float32)
            fr = float(row["framerate"])
        except (ValueError, KeyError, TypeError):
            raise ValueError(f"samples {path} line {lineno}: bad record") from None
        if values.ndim != 2 or values.shape[1] != layout.state_dim:
            raise ValueError(
                f"samples {path} line {lineno}: state rows must have {layout.state_dim} values"
            )
        out.append(StateSequence(layout, values, fr))
    if not out:
        raise ValueError(f"samples {path}: no records")
    return out


def _cmd_gen_data(cfg: RunConfig) -> int:
    out = _output_dir(cfg, "gen-data")
    if cfg.episodes < 1:
        raise ValueError(f"gen-data: episodes must be >= 1, got {cfg.episodes}")
    world = ToyWorldConfig(frames=cfg.frames, framerate=cfg.framerate)
    records = [simulate_episode(world, cfg.seed + i) for i in range(cfg.episodes)]
    write_dataset(out, world, records)
    _log(f"gen-data: wrote {len(records)} episodes to {out}")
    return 0


def _cmd_train(cfg: RunConfig) -> int:
    data_dir = _require_path(cfg, "dataset", "train")
    out = _output_dir(cfg, "train")
    world, layout, vocab_lines, records = read_dataset(data_dir)
    episodes = [
        EpisodeData(states=r.states.values, labels=r.actions.labels, framerate=r.states.framerate)
        for r in records
    ]
    schedule = _schedule_from(cfg)
    model_cfg = TemporalModelConfig(layers=cfg.layers, heads=cfg.heads, width=cfg.width)
    tcfg = TrainConfig(
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        base_lr=cfg.lr,
        warmup=cfg.warmup,
        seq_len=cfg.seq_len,
        seed=cfg.seed,
    )
    vocab = Vocabulary.from_corpus(vocab_lines) if vocab_lines else None
    model = train(episodes, layout, schedule, model_cfg, AggregatorConfig(), tcfg, vocab=vocab, log=_log)
    model.save(out / "model")
    _log(f"train: saved checkpoint to {out / 'model'}")
    return 0


def _cmd_sample(cfg: RunConfig) -> int:
    out = _output_dir(cfg, "sample")
    model = _load_model(cfg, "sample")
    if cfg.num_samples < 1:
        raise ValueError(f"sample: num_samples must be >= 1, got {cfg.num_samples}")
    if cfg.conditioning:
        bundle = conditioning_file_load(cfg.conditioning, model.layout, cfg.seq_len, cfg.framerate)
    else:
        bundle = ConditioningBundle.empty(model.layout, cfg.seq_len, cfg.framerate)
    name, ddim_steps = _parse_sampler(cfg.sampler)
    rng = make_rng(cfg.seed, stream=11)
    sequences = sample_many(
        model, [bundle] * cfg.num_samples, _schedule_from(cfg), rng, sampler=name, ddim_steps=ddim_steps
    )
    _write_samples(out / SAMPLES_NAME, sequences)
    _log(f"sample: wrote {len(sequences)} sequences to {out / SAMPLES_NAME}")
    return 0


def _cmd_upsample(cfg: RunConfig) -> int:
    src = _require_path(cfg, "input", "upsample", kind="file")
    out = _output_dir(cfg, "upsample")
    model = _load_model(cfg, "upsample")
    if cfg.rate_to <= 0:
        raise ValueError(f"upsample: config key 'rate_to' must be positive, got {cfg.rate_to}")
    name, ddim_steps = _parse_sampler(cfg.sampler)
    rng = make_rng(cfg.seed, stream=12)
    schedule = _schedule_from(cfg)
    results = [
        upsample_framerate(model, s, cfg.rate_to, None, schedule, rng, sampler=name, ddim_steps=ddim_steps)
        for s in _read_samples(src, model.layout)
    ]
    _write_samples(out / SAMPLES_NAME, results)
    _log(f"upsample: wrote {len(results)} sequences at {cfg.rate_to} Hz to {out / SAMPLES_NAME}")
    return 0


def _cmd_extend(cfg: RunConfig) -> int:
    src = _require_path(cfg, "input", "extend", kind="file")
    out = _output_dir(cfg, "extend")
    model = _load_model(cfg, "extend")
    if cfg.extend_frames < 1:
        raise ValueError(f"extend: config key 'extend_frames' must be >= 1, got {cfg.extend_frames}")
    name, ddim_steps = _parse_sampler(cfg.sampler)
    rng = make_rng(cfg.seed, stream=13)
    schedule = _schedule_from(cfg)
    results = [
        autoregressive_extend(
            model, s, cfg.extend_frames, None, schedule, rng, sampler=name, ddim_steps=ddim_steps
        )
        for s in _read_samples(src, model.layout)
    ]
    _write_samples(out / SAMPLES_NAME, results)
    _log(f"extend: advanced {len(results)} sequences by {cfg.extend_frames} steps")
    return 0


def _load_views(views_dir: Path):
    """Load (camera_NNN.txt, view_NNN.ppm) pairs from one directory."""
    cams = sorted(views_dir.glob("camera_*.txt"))
    if not cams:
        raise ValueError(f"fit-scene: no camera_*.txt files in {views_dir}")
    cameras, images = [], []
    for cam_path in cams:
        img_path = views_dir / cam_path.name.replace("camera_", "view_").replace(".txt", ".ppm")
        if not img_path.is_file():
            raise ValueError(f"fit-scene: missing image for {cam_path.name}: {img_path}")
        cameras.append(load_camera(cam_path))
        images.append(read_image(img_path))
    return cameras, images


def _cmd_fit_scene(cfg: RunConfig) -> int:
    scene_dir = _require_path(cfg, "scene", "fit-scene")
    views_dir = _require_path(cfg, "views", "fit-scene")
    out = _output_dir(cfg, "fit-scene")
    scene = load_scene(scene_dir)
    cameras, images = _load_views(views_dir)
    losses = fit_scene(
        scene,
        cameras,
        images,
        steps=cfg.fit_steps,
        patch_size=cfg.patch_size,
        lr=cfg.fit_lr,
        seed=cfg.seed,
        log=_log,
    )
    save_scene(scene, out / "scene")
    (out / "loss.txt").write_text("".join(f"{v:.8e}\n" for v in losses))
    _log(f"fit-scene: saved fitted scene to {out / 'scene'}")
    return 0


def _cmd_render(cfg: RunConfig) -> int:
    scene_dir = _require_path(cfg, "scene", "render")
    camera_path = _require_path(cfg, "camera", "render", kind="file")
    out = _output_dir(cfg, "render")
    scene = load_scene(scene_dir)
    camera = load_camera(camera_path)
    _, rgb = render(scene, camera)
    write_image(rgb, out / "render.ppm")
    _log(f"render: wrote {camera.width}x{camera.height} image to {out / 'render.ppm'}")
    return 0


def _cmd_eval(cfg: RunConfig) -> int:
    data_dir = _require_path(cfg, "dataset", "eval")
    out = _output_dir(cfg, "eval")
    model = _load_model(cfg, "eval")
    _, _, _, records = read_dataset(data_dir)
    episodes = [(r.states, r.actions) for r in records]
    name, ddim_steps = _parse_sampler(cfg.sampler)
    report = run_eval(
        model,
        episodes,
        TaskSpec(cfg.task),
        make_rng(cfg.seed, stream=14),
        schedule=_schedule_from(cfg),
        sampler=name,
        ddim_steps=ddim_steps,
        seq_len=cfg.seq_len,
        batch_size=cfg.batch_size,
    )
    (out / "eval.tsv").write_text(report.text())
    (out / "eval.jsonl").write_text(report.jsonl())
    _log(f"eval: wrote {len(report.rows)} rows for task {cfg.task!r} to {out / 'eval.tsv'}")
    return 0


def _cmd_verify(cfg: RunConfig) -> int:
    results = verify.run_all(log=print)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"verify: {len(failed)} of {len(results)} suites failed", file=sys.stderr)
        return 1
    return 0


_COMMANDS = {
    "gen-data": (_cmd_gen_data, "simulate rally episodes into a dataset directory"),
    "train": (_cmd_train, "train a sequence model on a dataset"),
    "sample": (_cmd_sample, "generate sequences from a checkpoint"),
    "upsample": (_cmd_upsample, "raise the framerate of sampled sequences"),
    "extend": (_cmd_extend, "continue sampled sequences autoregressively"),
    "fit-scene": (_cmd_fit_scene, "optimize a voxel scene against posed views"),
    "render": (_cmd_render, "render one camera view of a scene"),
    "eval": (_cmd_eval, "score a checkpoint on held-out episodes"),
    "verify": (_cmd_verify, "run the numeric invariant suites"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="courtside", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="path to a key = value run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ValueError(f"seed must be in [0, 2^64), got {args.seed}")
            cfg.seed = args.seed
        handler, _ = _COMMANDS[args.command]
        return handler(cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
