import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from courtside import cli
from courtside.renderer import (
    Camera,
    demo_camera,
    render,
    save_camera,
    save_scene,
    three_box_scene,
    write_image,
)
from courtside.toyworld import court_layout

LAYOUT = court_layout()


def write_cfg(path, **kv):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))
    return path


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "courtside.cli", *map(str, args)],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny gen-data -> train -> sample chain shared across tests."""
    tmp = tmp_path_factory.mktemp("cli")
    data = tmp / "data"
    gen = write_cfg(tmp / "gen.cfg", seed=5, episodes=3, frames=16, output=data)
    assert cli.main(["gen-data", "--config", str(gen)]) == 0
    train = write_cfg(
        tmp / "train.cfg",
        seed=1,
        dataset=data,
        output=tmp / "run",
        layers=1,
        heads=2,
        width=32,
        k_steps=8,
        steps=12,
        batch_size=2,
        warmup=4,
        seq_len=8,
    )
    assert cli.main(["train", "--config", str(train)]) == 0
    ckpt = tmp / "run" / "model"
    samp = write_cfg(
        tmp / "sample.cfg",
        seed=2,
        checkpoint=ckpt,
        output=tmp / "samples",
        k_steps=8,
        seq_len=8,
        num_samples=2,
        sampler="ddim:4",
    )
    assert cli.main(["sample", "--config", str(samp)]) == 0
    return {
        "tmp": tmp,
        "data": data,
        "gen_cfg": gen,
        "ckpt": ckpt,
        "sample_cfg": samp,
        "samples": tmp / "samples" / "samples.jsonl",
    }


def test_parse_run_config_values_and_comments():
    cfg = cli.parse_run_config(
        "# run\nseed = 9\nwidth = 64  # model size\n\nsampler = ddim:5\ndataset = /tmp/x\n"
    )
    assert cfg.seed == 9
    assert cfg.width == 64
    assert cfg.sampler == "ddim:5"
    assert cfg.dataset == "/tmp/x"
    assert cfg.heads == 4


def test_parse_run_config_rejects_bad_lines():
    with pytest.raises(ValueError, match="unknown key 'sneed'"):
        cli.parse_run_config("sneed = 3\n")
    with pytest.raises(ValueError, match="duplicate key"):
        cli.parse_run_config("seed = 1\nseed = 2\n")
    with pytest.raises(ValueError, match="bad value"):
        cli.parse_run_config("steps = soon\n")
    with pytest.raises(ValueError, match="key = value"):
        cli.parse_run_config("just some words\n")


def test_parse_sampler_specs():
    assert cli._parse_sampler("ddpm") == ("ddpm", 50)
    assert cli._parse_sampler("ddim:12") == ("ddim", 12)
    for bad in ("ddim", "ddim:0", "ddim:x", "euler"):
        with pytest.raises(ValueError):
            cli._parse_sampler(bad)


def test_conditioning_empty_file_masks_everything(tmp_path):
    path = tmp_path / "cond.txt"
    path.write_text("# nothing pinned\n\n")
    bundle = cli.conditioning_file_load(path, LAYOUT, 8, 20.0)
    assert bundle.masks.m_state.sum() == 0
    assert bundle.masks.m_action.sum() == 0
    assert np.all(bundle.s_c.values == 0)


def test_conditioning_entries_land_in_bundle(tmp_path):
    path = tmp_path / "cond.txt"
    path.write_text(
        "state 0 ball.position 1.0 2.0 0.5\n"
        "state 3 ball.speed 30.0\n"
        "action 1 agent-a agent moves left\n"
    )
    bundle = cli.conditioning_file_load(path, LAYOUT, 8, 20.0)
    ms = bundle.masks.m_state
    assert ms.sum() == 2
    assert ms[LAYOUT.property_index("ball.position"), 0] == 1
    assert ms[LAYOUT.property_index("ball.speed"), 3] == 1
    sl = LAYOUT.slices()
    assert bundle.s_c.values[0, sl["ball.position"]].tolist() == [1.0, 2.0, 0.5]
    assert bundle.s_c.values[3, sl["ball.speed"]].tolist() == [30.0]
    a = list(LAYOUT.actionable).index("agent-a")
    assert bundle.a_c.labels[a][1] == "agent moves left"
    assert bundle.masks.m_action[a, 1] == 1
    assert bundle.masks.m_action.sum() == 1


def test_conditioning_rejects_bad_entries(tmp_path):
    def load(text):
        path = tmp_path / "bad.txt"
        path.write_text(text)
        return cli.conditioning_file_load(path, LAYOUT, 8, 20.0)

    with pytest.raises(ValueError, match="unknown property 'ball.spin'"):
        load("state 0 ball.spin 1.0\n")
    with pytest.raises(ValueError, match="takes 3 values, got 2"):
        load("state 0 ball.position 1.0 2.0\n")
    with pytest.raises(ValueError, match=r"duplicate entry for cell \(t=2, ball.speed\)"):
        load("state 2 ball.speed 5.0\nstate 2 ball.speed 6.0\n")
    with pytest.raises(ValueError, match=r"duplicate entry for cell \(t=1, agent-b\)"):
        load("action 1 agent-b agent moves left\naction 1 agent-b agent moves right\n")
    with pytest.raises(ValueError, match="unknown agent"):
        load("action 0 referee agent moves left\n")
    with pytest.raises(ValueError, match=r"timestep 8 outside \[0, 8\)"):
        load("state 8 ball.speed 5.0\n")
    with pytest.raises(ValueError, match="unknown entry kind"):
        load("pose 0 ball.speed 5.0\n")
    with pytest.raises(ValueError, match="not found"):
        cli.conditioning_file_load(tmp_path / "absent.txt", LAYOUT, 8, 20.0)


def test_unknown_subcommand_and_flag_exit_2():
    assert run_cli("bogus").returncode == 2
    assert run_cli("gen-data", "--frobnicate").returncode == 2


def test_missing_config_file_exits_1(tmp_path, capsys):
    assert cli.main(["gen-data", "--config", str(tmp_path / "absent.cfg")]) == 1
    assert "config file not found" in capsys.readouterr().err


def test_sample_missing_checkpoint_names_path(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path / "s.cfg",
        checkpoint=tmp_path / "nope",
        output=tmp_path / "out",
        conditioning=tmp_path / "cond.txt",
    )
    (tmp_path / "cond.txt").write_text("")
    assert cli.main(["sample", "--config", str(cfg)]) == 1
    assert f"checkpoint not found: {tmp_path / 'nope'}" in capsys.readouterr().err


def test_gen_data_writes_dataset_and_reruns_identically(pipeline):
    data = pipeline["data"]
    names = sorted(p.name for p in data.iterdir())
    assert names == ["episodes.jsonl", "manifest.txt", "vocabulary.txt"]
    before = {n: (data / n).read_bytes() for n in names}
    assert cli.main(["gen-data", "--config", str(pipeline["gen_cfg"])]) == 0
    assert {n: (data / n).read_bytes() for n in names} == before


def test_train_saves_loadable_checkpoint(pipeline):
    from courtside.animator import AnimationModel

    model = AnimationModel.load(pipeline["ckpt"])
    assert model.layout == LAYOUT
    assert model.cfg.layers == 1
    assert model.cfg.width == 32


def test_sample_respects_conditioning_and_seed(pipeline, tmp_path):
    cond = tmp_path / "cond.txt"
    cond.write_text("state 0 ball.position 1.0 2.0 0.5\naction 0 agent-a agent moves left\n")
    cfg = write_cfg(
        tmp_path / "s.cfg",
        seed=2,
        checkpoint=pipeline["ckpt"],
        output=tmp_path / "out",
        conditioning=cond,
        k_steps=8,
        seq_len=8,
        num_samples=2,
        sampler="ddim:4",
    )
    assert cli.main(["sample", "--config", str(cfg)]) == 0
    out = tmp_path / "out" / "samples.jsonl"
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 2
    sl = LAYOUT.slices()["ball.position"]
    for row in rows:
        states = np.asarray(row["states"], dtype=np.float32)
        assert states.shape == (8, LAYOUT.state_dim)
        assert states[0, sl].tolist() == [1.0, 2.0, 0.5]
    first = out.read_bytes()
    assert cli.main(["sample", "--config", str(cfg)]) == 0
    assert out.read_bytes() == first
    assert cli.main(["sample", "--config", str(cfg), "--seed", "3"]) == 0
    assert out.read_bytes() != first


def test_upsample_preserves_keyframes(pipeline, tmp_path):
    cfg = write_cfg(
        tmp_path / "up.cfg",
        seed=3,
        checkpoint=pipeline["ckpt"],
        input=pipeline["samples"],
        output=tmp_path / "up",
        k_steps=8,
        rate_to=40.0,
        sampler="ddim:4",
    )
    assert cli.main(["upsample", "--config", str(cfg)]) == 0
    fine = [json.loads(line) for line in (tmp_path / "up" / "samples.jsonl").read_text().splitlines()]
    coarse = [json.loads(line) for line in pipeline["samples"].read_text().splitlines()]
    for lo, hi in zip(coarse, fine):
        assert hi["framerate"] == 40.0
        lo_states = np.asarray(lo["states"], dtype=np.float32)
        hi_states = np.asarray(hi["states"], dtype=np.float32)
        assert hi_states.shape[0] == 2 * lo_states.shape[0] - 1
        assert np.array_equal(hi_states[::2], lo_states)


def test_extend_keeps_retained_tail(pipeline, tmp_path):
    cfg = write_cfg(
        tmp_path / "ext.cfg",
        seed=3,
        checkpoint=pipeline["ckpt"],
        input=pipeline["samples"],
        output=tmp_path / "ext",
        k_steps=8,
        extend_frames=4,
        sampler="ddim:4",
    )
    assert cli.main(["extend", "--config", str(cfg)]) == 0
    longer = [json.loads(line) for line in (tmp_path / "ext" / "samples.jsonl").read_text().splitlines()]
    orig = [json.loads(line) for line in pipeline["samples"].read_text().splitlines()]
    for a, b in zip(orig, longer):
        sa = np.asarray(a["states"], dtype=np.float32)
        sb = np.asarray(b["states"], dtype=np.float32)
        assert sb.shape[0] == sa.shape[0]
        assert np.array_equal(sb[: sa.shape[0] - 4], sa[4:])


def test_eval_writes_report_pair(pipeline, tmp_path):
    cfg = write_cfg(
        tmp_path / "eval.cfg",
        seed=4,
        checkpoint=pipeline["ckpt"],
        dataset=pipeline["data"],
        output=tmp_path / "eval",
        k_steps=8,
        seq_len=8,
        task="unconditional",
        sampler="ddim:4",
    )
    assert cli.main(["eval", "--config", str(cfg)]) == 0
    tsv = (tmp_path / "eval" / "eval.tsv").read_text().splitlines()
    assert tsv[0] == "task\tproperty\tl2\tfd"
    assert len(tsv) == 1 + LAYOUT.num_properties
    assert all(line.startswith("unconditional\t") for line in tsv[1:])
    rows = [json.loads(line) for line in (tmp_path / "eval" / "eval.jsonl").read_text().splitlines()]
    assert [r["property"] for r in rows] == [p.name for p in LAYOUT.properties]
    before = (tmp_path / "eval" / "eval.tsv").read_bytes()
    assert cli.main(["eval", "--config", str(cfg)]) == 0
    assert (tmp_path / "eval" / "eval.tsv").read_bytes() == before


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("scene")
    scene = three_box_scene(seed=0)
    save_scene(scene, tmp / "scene")
    save_camera(demo_camera(height=24, width=24, focal=24.0), tmp / "cam.txt")
    views = tmp / "views"
    views.mkdir()
    for i, dx in enumerate((-0.15, 0.15)):
        cam = Camera(
            fx=24.0,
            fy=24.0,
            cx=11.5,
            cy=11.5,
            rotation=np.eye(3),
            translation=np.array([dx, 0.0, 0.0]),
            height=24,
            width=24,
        )
        save_camera(cam, views / f"camera_{i:03d}.txt")
        _, rgb = render(scene, cam)
        write_image(rgb, views / f"view_{i:03d}.ppm")
    return tmp


def test_render_writes_deterministic_ppm(scene_dir, tmp_path):
    cfg = write_cfg(
        tmp_path / "r.cfg",
        scene=scene_dir / "scene",
        camera=scene_dir / "cam.txt",
        output=tmp_path / "out",
    )
    assert cli.main(["render", "--config", str(cfg)]) == 0
    out = tmp_path / "out" / "render.ppm"
    first = out.read_bytes()
    assert first.startswith(b"P6\n24 24\n255\n")
    assert cli.main(["render", "--config", str(cfg)]) == 0
    assert out.read_bytes() == first


def test_fit_scene_writes_scene_and_loss_trace(scene_dir, tmp_path):
    cfg = write_cfg(
        tmp_path / "f.cfg",
        seed=0,
        scene=scene_dir / "scene",
        views=scene_dir / "views",
        output=tmp_path / "fit",
        fit_steps=3,
        patch_size=8,
    )
    assert cli.main(["fit-scene", "--config", str(cfg)]) == 0
    losses = (tmp_path / "fit" / "loss.txt").read_text().splitlines()
    assert len(losses) == 3
    assert all(float(v) >= 0 for v in losses)
    assert (tmp_path / "fit" / "scene" / "scene.txt").is_file()


def test_verify_command_reports_all_suites(capsys):
    from courtside.verify import CHECKS

    assert cli.main(["verify"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == len(CHECKS)
    assert all("checks passed" in line for line in out)
