import io
import json
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from qd_forge.containers import GridContainer, Individual, UnstructuredArchive
from qd_forge.harness import artifacts, render
from qd_forge.harness.cli import main
from qd_forge.harness.config import dump_config, preset_config
from qd_forge.harness.runner import OUT_ENV, default_run_dir, run_experiment
from qd_forge.harness.summarize import AlignmentError, summarize, write_summary
from qd_forge.vqvae import Architecture, VqVaeModel

from oracles import quantile_sorted

SVG = "{http://www.w3.org/2000/svg}"
SMOKE = """\
experiment = mobile_free
seed = 2
[algorithm]
iterations = 10
population = 16
archive_size = 40
bootstrap_epochs = 10
epochs = 2
[metrics]
bins = 15, 15
interval = 5
"""


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg_path = root / "smoke.ini"
    cfg_path.write_text(SMOKE)
    start = time.perf_counter()
    assert main(["run", str(cfg_path), "--out", str(root / "a")]) == 0
    elapsed = time.perf_counter() - start
    return root, cfg_path, elapsed


def cells(svg_text):
    root = ET.fromstring(svg_text)
    return [r for r in root.iter(f"{SVG}rect") if r.get("class") == "cell"]


# ------------------------------------------------------------------ runs


class TestRun:
    def test_smoke_is_fast_and_complete(self, smoke_run):
        root, _, elapsed = smoke_run
        assert elapsed < 10.0
        names = {p.name for p in (root / "a").iterdir()}
        assert {"metrics.csv", "archive.bin", "model.npz", "manifest.json", "config.ini"} <= names

    def test_csv_schema(self, smoke_run):
        header, data = artifacts.read_metrics(smoke_run[0] / "a" / "metrics.csv")
        assert header == ["iteration", "coverage", "pqd", "edr", "cds", "archive_size", "valid_size"]
        assert data[:, 0].tolist() == [0, 5, 10]

    def test_manifest_hash_matches_config(self, smoke_run):
        d = smoke_run[0] / "a"
        man = json.loads((d / "manifest.json").read_text())
        cfg = preset_config("mobile_free")  # any config; recompute from the echoed file instead
        from qd_forge.harness.config import parse_config_text

        echoed = parse_config_text((d / "config.ini").read_text())
        assert man["config_hash"] == echoed.config_hash() != cfg.config_hash()
        assert man["seed"] == 2 and man["model_updates"] == 2 and man["mismatched_cells"] == 0

    def test_rerun_is_byte_identical_across_workers(self, smoke_run):
        root, cfg_path, _ = smoke_run
        assert main(["run", str(cfg_path), "--out", str(root / "b"), "--eval-workers", "3"]) == 0
        for name in ("metrics.csv", "archive.bin"):
            assert (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes()

    def test_seed_flag_changes_run(self, smoke_run):
        root, cfg_path, _ = smoke_run
        assert main(["run", str(cfg_path), "--out", str(root / "c"), "--seed", "9"]) == 0
        assert (root / "a" / "archive.bin").read_bytes() != (root / "c" / "archive.bin").read_bytes()
        assert json.loads((root / "c" / "manifest.json").read_text())["seed"] == 9

    def test_default_dir_uses_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUT_ENV, str(tmp_path))
        cfg = preset_config("mobile_free", experiment={"seed": 4})
        assert default_run_dir(cfg) == tmp_path / "mobile_free-vq-elites-seed4"

    def test_map_elites_ignores_model(self, tmp_path, caplog):
        cfg = preset_config("mobile_free", algorithm={"algorithm": "map-elites", "iterations": 3, "population": 8},
                            metrics={"bins": (15, 15), "interval": 3})
        with caplog.at_level("INFO"):
            art = run_experiment(cfg, tmp_path / "me")
        assert art.model is None and "model] section is ignored" in caplog.text


# ------------------------------------------------------------- snapshots


def individual(rng, latent=True, gt=True):
    return Individual(
        genome=rng.normal(size=5), fitness=float(rng.normal()), raw_bd=rng.uniform(size=4),
        latent_bd=rng.normal(size=2) if latent else None, ground_truth_bd=rng.uniform(size=2) if gt else None,
        generation=int(rng.integers(0, 9)),
    )


class TestSnapshot:
    def test_grid_round_trip(self):
        rng = np.random.default_rng(0)
        g = GridContainer(rng.normal(size=(6, 2)))
        for _ in range(10):
            g.insert(individual(rng))
        snap = artifacts.snapshot_of(g)
        back = artifacts.decode_snapshot(artifacts.encode_snapshot(snap))
        assert back == snap
        for a, b in zip(snap.members, back.members):
            assert np.array_equal(a.genome, b.genome) and np.array_equal(a.raw_bd, b.raw_bd)
            assert a.cell == b.cell and a.fitness == b.fitness

    def test_unstructured_and_missing_vectors(self, tmp_path):
        rng = np.random.default_rng(1)
        a = UnstructuredArchive(2, target_size=5, max_size=10, d_init=0.01, d_min=0.01)
        for _ in range(6):
            a.insert(individual(rng, gt=False))
        snap = artifacts.write_archive(tmp_path / "u.bin", a)
        back = artifacts.read_archive(tmp_path / "u.bin")
        assert back == snap and back.d_current == a.d_current
        assert all(m.ground_truth_bd is None for m in back.members)

    def test_empty_archive(self):
        snap = artifacts.snapshot_of(GridContainer(np.zeros((3, 2))))
        assert artifacts.decode_snapshot(artifacts.encode_snapshot(snap)).members == []

    def test_truncated(self):
        g = GridContainer(np.zeros((1, 2)))
        g.insert(individual(np.random.default_rng(2)))
        data = artifacts.encode_snapshot(artifacts.snapshot_of(g))
        with pytest.raises(artifacts.SnapshotError):
            artifacts.decode_snapshot(data[:-3])
        with pytest.raises(artifacts.SnapshotError):
            artifacts.decode_snapshot(data + b"\0")
        with pytest.raises(artifacts.SnapshotError):
            artifacts.decode_snapshot(b"NOPE" + data[4:])

    def test_model_round_trip(self, tmp_path):
        m = VqVaeModel(Architecture(4, 2, 5, encoder_hidden=(6,), decoder_hidden=(6,), input_norm="feature"), seed=3)
        m.input_shift = np.arange(4.0)
        artifacts.save_model(tmp_path / "m.npz", m)
        back = artifacts.load_model(tmp_path / "m.npz")
        x = np.random.default_rng(0).normal(size=(3, 4))
        assert np.array_equal(back.encode(x), m.encode(x))
        assert np.array_equal(back.codebook_array, m.codebook_array)
        assert back.arch == m.arch


# --------------------------------------------------------------- renders


def gt_member(x, y, f):
    p = np.array([x, y], dtype=float)
    return Individual(np.zeros(1), f, p, p, p)


class TestRender:
    def test_empty_archive_all_empty(self, tmp_path):
        render.render_elite_grid([], [(0, 1), (0, 1)], tmp_path / "e.svg", bins=(4, 4))
        cs = cells((tmp_path / "e.svg").read_text())
        assert len(cs) == 16 and {c.get("fill") for c in cs} == {render.EMPTY}

    def test_sixty_four_cells(self, tmp_path):
        ms = [gt_member(x, y, x) for x, y in np.random.default_rng(0).uniform(size=(30, 2))]
        render.render_elite_grid(ms, [(0, 1), (0, 1)], tmp_path / "g.svg", bins=(8, 8))
        assert len(cells((tmp_path / "g.svg").read_text())) == 64

    def test_colormap_endpoints(self, tmp_path):
        ms = [gt_member(0.1, 0.1, -3.0), gt_member(0.9, 0.9, 7.0)]
        render.render_elite_grid(ms, [(0, 1), (0, 1)], tmp_path / "c.svg", bins=(2, 2))
        by_value = {c.get("data-value"): c.get("fill") for c in cells((tmp_path / "c.svg").read_text())}
        assert by_value["0.0000"] == "#2c7bb6"
        assert by_value["1.0000"] == "#d7191c"
        assert by_value["empty"] == "#eeeeee"

    def test_decoded_centers(self, tmp_path):
        m = VqVaeModel(Architecture(16, 2, 3, encoder_hidden=(4,), decoder_hidden=(4,), input_shape=(4, 4)))
        render.render_decoded_centers(m, tmp_path / "d.svg")
        root = ET.fromstring((tmp_path / "d.svg").read_text())
        groups = [g for g in root.iter(f"{SVG}g") if g.get("class") == "center"]
        assert len(groups) == 3 and all(len(list(g)) == 16 for g in groups)

    def test_flat_model_rejected(self, tmp_path):
        from qd_forge.autodiff import ConfigurationError

        with pytest.raises(ConfigurationError, match="image-like"):
            render.render_decoded_centers(VqVaeModel(Architecture(6, 2, 3)), tmp_path / "x.svg")


# --------------------------------------------------------------- summary


def write_run(path, iters, values):
    path.mkdir(parents=True)
    with artifacts.MetricsWriter(path / "metrics.csv") as w:
        from qd_forge.metrics import MetricsRecord

        for it, v in zip(iters, values):
            w.write(MetricsRecord(it, v, 10 * v, v / 2, v * v / 2, 50, int(40 * v)))


class TestSummarize:
    def test_single_run(self, tmp_path):
        write_run(tmp_path / "r", [0, 10], [0.2, 0.4])
        header, rows = summarize([tmp_path / "r"])
        assert header[:4] == ["iteration", "coverage_q25", "coverage_median", "coverage_q75"]
        assert rows[:, 1].tolist() == rows[:, 2].tolist() == rows[:, 3].tolist() == [0.2, 0.4]

    def test_three_runs_median(self, tmp_path):
        for k, v in enumerate((1.0, 3.0, 2.0)):
            write_run(tmp_path / f"r{k}", [0], [v])
        _, rows = summarize([tmp_path / f"r{k}" for k in range(3)])
        assert rows[0, 2] == 2.0

    def test_sort_oracle(self, tmp_path):
        rng = np.random.default_rng(5)
        vals = rng.uniform(size=(5, 4))
        for k in range(5):
            write_run(tmp_path / f"r{k}", [0, 5, 10, 15], vals[k])
        header, rows = summarize([tmp_path / f"r{k}" for k in range(5)])
        col = {name: j for j, name in enumerate(header)}
        for i in range(4):
            for q, name in ((0.25, "coverage_q25"), (0.5, "coverage_median"), (0.75, "coverage_q75")):
                assert rows[i, col[name]] == pytest.approx(quantile_sorted(vals[:, i].tolist(), q), abs=1e-15)

    def test_misaligned(self, tmp_path):
        write_run(tmp_path / "a", [0, 10], [0.1, 0.2])
        write_run(tmp_path / "b", [0, 20], [0.1, 0.2])
        with pytest.raises(AlignmentError, match="b"):
            summarize([tmp_path / "a", tmp_path / "b"])

    def test_write_stream(self, tmp_path):
        write_run(tmp_path / "a", [0], [0.5])
        buf = io.StringIO()
        write_summary(buf, *summarize([tmp_path / "a"]))
        lines = buf.getvalue().splitlines()
        assert lines[0].startswith("iteration,coverage_q25") and lines[1].startswith("0,0.5")


# ------------------------------------------------------------------- CLI


class TestCli:
    def test_validate_prints_canonical(self, tmp_path, capsys):
        p = tmp_path / "c.ini"
        p.write_text("experiment = gridworld\n")
        assert main(["validate-config", str(p)]) == 0
        out = capsys.readouterr().out
        assert out == dump_config(preset_config("gridworld"))

    def test_validate_error_exit_code(self, tmp_path, capsys):
        p = tmp_path / "c.ini"
        p.write_text("[algorithm]\npopulation = 0\n")
        assert main(["validate-config", str(p)]) == 2
        assert "[algorithm] population" in capsys.readouterr().err

    def test_render_both_views(self, smoke_run, tmp_path):
        d = smoke_run[0] / "a"
        assert main(["render", str(d), "--output", str(tmp_path / "g.svg")]) == 0
        assert len(cells((tmp_path / "g.svg").read_text())) == 64
        assert main(["render", str(d), "--what", "decoded-centers", "--output", str(tmp_path / "d.svg")]) == 0
        assert (tmp_path / "d.svg").read_text().count('class="center"') == 40

    def test_render_decoded_centers_arm_rejected(self, tmp_path, capsys):
        d = tmp_path / "armrun"
        d.mkdir()
        (d / "config.ini").write_text(dump_config(preset_config("arm")))
        assert main(["render", str(d), "--what", "decoded-centers"]) == 2
        assert "not supported for the arm" in capsys.readouterr().err

    def test_summarize_command(self, smoke_run, capsys):
        d = smoke_run[0] / "a"
        assert main(["summarize", str(d), str(d)]) == 0
        assert capsys.readouterr().out.splitlines()[0].startswith("iteration,coverage_q25")

    def test_missing_config_file(self, tmp_path):
        assert main(["run", str(tmp_path / "none.ini")]) == 2
