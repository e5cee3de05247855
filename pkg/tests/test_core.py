import numpy as np
import pytest

from qd_forge.autodiff import ConfigurationError
from qd_forge.containers import GridContainer, HardcodedGridSpec, Individual
from qd_forge.core import (
    ContainerParams,
    ExperienceStore,
    QDSetup,
    QDState,
    RunSchedule,
    VariationParams,
    _offer,
    audit_cells,
    bootstrap,
    evolution_step,
    run,
    select,
    update_model_and_archive,
    variation,
)
from qd_forge.environments import MobileWorld
from qd_forge.environments.base import EvalBatch
from qd_forge.metrics import UNIFORM, GroundTruthGrid
from qd_forge.vqvae import Architecture

from oracles import greedy_dedup


class PlaneEnv:
    """Genome (a, b, c): fitness -(a^2+b^2) + c, descriptor (tanh a, tanh b)."""

    n_params = 3
    raw_dim = 2

    def __init__(self, nan_every: int = 0, fail: bool = False):
        self.nan_every, self.fail = nan_every, fail

    def evaluate(self, genomes):
        if self.fail:
            raise OSError("simulator crashed")
        g = np.atleast_2d(genomes)
        bd = np.tanh(g[:, :2])
        fit = -(g[:, :2] ** 2).sum(1) + g[:, 2]
        if self.nan_every:
            fit = fit.copy()
            fit[:: self.nan_every] = np.nan
        return EvalBatch(fit, bd, bd.copy())

    def ground_truth_bounds(self):
        return [(-1.0, 1.0), (-1.0, 1.0)]


PLANE_GT = GroundTruthGrid(UNIFORM, bounds=[(-1, 1), (-1, 1)], bins=[6, 6])


def plane_setup(alg="vq-elites", **sched):
    base = dict(iterations=10, population=8, n_update=5, epochs=2, bootstrap_count=16, bootstrap_epochs=5,
                batch_size=16, metrics_interval=5, seed=3)
    base.update(sched)
    arch = Architecture(2, 2, 9, encoder_hidden=(8,), decoder_hidden=(8,), activation="tanh",
                        output_activation="identity", vector_quantized=(alg == "vq-elites"),
                        bounded=(alg != "aurora"))
    grid = HardcodedGridSpec(bounds=[(-1, 1), (-1, 1)], bins=[3, 3]) if alg == "map-elites" else None
    return QDSetup(alg, RunSchedule(**base), VariationParams(sigma=0.3), architecture=arch,
                   container=ContainerParams(target_size=9, d_init=0.05, d_min=0.01), grid=grid)


class TestSchedule:
    def test_cooperation_counts_first_iterations(self):
        s = RunSchedule(n_cooperation=3)
        assert [s.cooperating(i) for i in range(1, 6)] == [True, True, True, False, False]
        assert not RunSchedule(n_cooperation=0).cooperating(1)

    def test_update_cadence(self):
        s = RunSchedule(n_update=5)
        assert [i for i in range(1, 21) if s.updates_at(i)] == [5, 10, 15, 20]

    @pytest.mark.parametrize("field,value", [("population", 0), ("n_update", 0), ("iterations", -1),
                                             ("n_cooperation", -2), ("batch_size", 0)])
    def test_invalid(self, field, value):
        with pytest.raises(ConfigurationError, match=field):
            RunSchedule(**{field: value}).validate()

    def test_variation_params(self):
        with pytest.raises(ConfigurationError, match="p_mutation"):
            VariationParams(p_mutation=1.5).validate()

    def test_setup_checks(self):
        with pytest.raises(ConfigurationError, match="algorithm"):
            QDSetup("novelty").validate()
        with pytest.raises(ConfigurationError, match="grid"):
            QDSetup("map-elites").validate()
        with pytest.raises(ConfigurationError, match="architecture"):
            QDSetup("aurora").validate()


class TestStore:
    def test_fifo_eviction(self):
        s = ExperienceStore(1, capacity=3)
        s.append(np.arange(5.0)[:, None])
        assert s.records()[:, 0].tolist() == [2.0, 3.0, 4.0]
        s.append(np.array([[9.0]]))
        assert s.records()[:, 0].tolist() == [3.0, 4.0, 9.0]
        assert len(s) == 3

    def test_dedup_matches_greedy_oracle(self):
        w = MobileWorld.preset("free")
        pos = np.random.default_rng(0).uniform(280, 320, size=(60, 2))
        r = w.raster_bd(pos)
        s = ExperienceStore(r.shape[1], dedup=True, dedup_threshold=0.5)
        s.append(r)
        assert np.array_equal(s.records(), r[greedy_dedup(r, 0.5)])
        assert s.dropped == 60 - len(s)

    def test_dedup_against_retained(self):
        r = np.zeros((1, 4))
        r[0, 0] = 1
        s = ExperienceStore(4, dedup=True)
        s.append(r)
        assert s.append(r) == 0 and len(s) == 1

    def test_errors(self):
        with pytest.raises(ConfigurationError):
            ExperienceStore(2, capacity=0)
        with pytest.raises(ValueError, match="store dim"):
            ExperienceStore(2).append(np.zeros((1, 3)))


def members(*genomes):
    out = []
    for g in genomes:
        g = np.asarray(g, dtype=float)
        out.append(Individual(genome=g, fitness=0.0, raw_bd=g[:2], latent_bd=g[:2]))
    return out


class _Members:
    def __init__(self, ms):
        self.ms = ms

    def members(self):
        return self.ms


class TestSelectVariation:
    def test_single_member(self):
        out = select(_Members(members([1, 2, 3])), 10, np.random.default_rng(0), 3)
        assert np.all(out == [1, 2, 3])

    def test_empty_gives_random(self):
        out = select(_Members([]), 7, np.random.default_rng(0), 3, init_range=0.5)
        assert out.shape == (7, 3) and np.all(np.abs(out) <= 0.5)

    def test_uniform_frequencies(self):
        ms = members(*[[i, 0, 0] for i in range(4)])
        out = select(_Members(ms), 100_000, np.random.default_rng(1), 3)
        freq = np.bincount(out[:, 0].astype(int), minlength=4) / 100_000
        assert np.all(np.abs(freq - 0.25) <= 0.01)

    def test_no_variation_is_identity(self):
        p = np.random.default_rng(2).normal(size=(10, 5))
        out = variation(p, np.random.default_rng(3), VariationParams(p_crossover=0.0, sigma=0.0))
        assert np.array_equal(out, p)

    def test_identical_parents_crossover(self):
        p = np.tile(np.arange(6.0), (8, 1))
        out = variation(p, np.random.default_rng(4), VariationParams(p_crossover=1.0, p_mutation=0.0))
        assert np.array_equal(out, p)

    def test_crossover_genes_come_from_parents(self):
        p = np.arange(40.0).reshape(8, 5)
        out = variation(p, np.random.default_rng(5), VariationParams(p_crossover=1.0, p_mutation=0.0))
        for j in range(5):
            assert set(out[:, j]) <= set(p[:, j])

    def test_mutation_variance(self):
        p = np.zeros((2000, 50))
        out = variation(p, np.random.default_rng(6), VariationParams(p_crossover=0.0, p_mutation=1.0, sigma=0.3))
        assert np.mean(out**2) == pytest.approx(0.09, rel=0.02)


class TestOffer:
    def test_cooperation_keeps_later_child(self):
        st = QDState(PlaneEnv(), plane_setup("map-elites"))
        g = np.array([[0.1, 0.1, 5.0], [0.12, 0.1, -5.0]])
        _offer(st, g, st.env.evaluate(g), cooperation=True)
        (m,) = st.archive.members()
        assert m.fitness == pytest.approx(-5.0 - 0.0244)

    def test_weaker_child_rejected(self):
        st = QDState(PlaneEnv(), plane_setup("map-elites"))
        g = np.array([[0.1, 0.1, 5.0], [0.12, 0.1, -5.0]])
        assert _offer(st, g, st.env.evaluate(g), cooperation=False) == (1, 0, 0)
        assert st.archive.members()[0].genome[2] == 5.0

    def test_nan_children_skipped(self):
        st = QDState(PlaneEnv(nan_every=2), plane_setup("map-elites"))
        g = np.random.default_rng(0).normal(size=(6, 3))
        ins, rep, skipped = _offer(st, g, st.env.evaluate(g), cooperation=False)
        assert skipped == 3 and ins + rep <= 3
        assert all(np.isfinite(m.fitness) for m in st.archive.members())


class TestBootstrap:
    def test_zero_count(self):
        st = QDState(PlaneEnv(), plane_setup(bootstrap_count=0))
        assert bootstrap(st) == [] and len(st.store) == 0 and len(st.archive) == 0

    def test_counts(self):
        st = QDState(PlaneEnv(), plane_setup(bootstrap_count=32))
        losses = bootstrap(st)
        assert len(losses) == 5 and len(st.store) == 32 and 0 < len(st.archive) <= 32
        assert np.array_equal(st.archive.centers, st.model.codebook_array)

    def test_failure_has_context(self):
        with pytest.raises(RuntimeError, match="bootstrap evaluation failed: simulator crashed"):
            bootstrap(QDState(PlaneEnv(fail=True), plane_setup()))


class TestUpdate:
    def test_zero_epochs_is_identity(self):
        st = QDState(PlaneEnv(), plane_setup(epochs=0))
        bootstrap(st)
        before = [(m.cell, m.fitness) for m in st.archive.members()]
        rep = update_model_and_archive(st)
        assert [(m.cell, m.fitness) for m in st.archive.members()] == before
        assert rep.before == rep.after and rep.mismatched_cells == 0

    def test_collision_keeps_fitter(self):
        st = QDState(PlaneEnv(), plane_setup(epochs=0))
        raw_a, raw_b = np.array([0.3, 0.0]), np.array([-0.3, 0.0])
        z = st.model.encode(np.stack([raw_a, raw_b]))
        st.archive.set_centers(z)  # one cell each
        for r, lat, f in ((raw_a, z[0], 1.0), (raw_b, z[1], 2.0)):
            st.archive.insert(Individual(np.zeros(3), f, r, lat))
        assert len(st.archive) == 2
        st.model.codebook.data = np.array([[5.0, 5.0], [6.0, 6.0]])  # both now nearest to entry 0
        update_model_and_archive(st)
        (m,) = st.archive.members()
        assert m.fitness == 2.0 and m.cell == 0

    def test_empty_store_skips_training(self, caplog):
        st = QDState(PlaneEnv(), plane_setup())
        cb = st.model.codebook_array.copy()
        rep = update_model_and_archive(st)
        assert rep.losses == [] and np.array_equal(st.model.codebook_array, cb)


class TestRun:
    def test_zero_iterations(self):
        r = run(PlaneEnv(), plane_setup(iterations=0), PLANE_GT)
        assert r.steps == [] and r.updates == [] and [m.iteration for m in r.metrics] == [0]

    def test_update_count_and_audit(self):
        seen = []
        r = run(PlaneEnv(), plane_setup(iterations=10, n_update=5), PLANE_GT,
                on_update=lambda st, rep: seen.append(audit_cells(st)))
        assert [u.iteration for u in r.updates] == [5, 10]
        assert seen == [0, 0]
        assert [m.iteration for m in r.metrics] == [0, 5, 10]

    @pytest.mark.parametrize("alg", ["vq-elites", "map-elites", "aurora", "aurora-dagger"])
    def test_deterministic(self, alg):
        a = run(PlaneEnv(), plane_setup(alg), PLANE_GT)
        b = run(PlaneEnv(), plane_setup(alg), PLANE_GT)
        assert [m.row() for m in a.metrics] == [m.row() for m in b.metrics]
        assert [m.genome.tolist() for m in a.archive.members()] == [m.genome.tolist() for m in b.archive.members()]

    def test_eval_workers_do_not_change_results(self):
        s1, s3 = plane_setup(), plane_setup()
        s3.eval_workers = 3
        a, b = run(PlaneEnv(), s1, PLANE_GT), run(PlaneEnv(), s3, PLANE_GT)
        assert [m.row() for m in a.metrics] == [m.row() for m in b.metrics]

    def test_archive_never_exceeds_k(self):
        r = run(PlaneEnv(), plane_setup(iterations=20), PLANE_GT)
        assert all(rec.valid_size <= 9 for rec in r.metrics)

    def test_fixed_grid_is_globally_monotone(self):
        # model never updates and no cooperation: per-cell fitness never drops
        st = QDState(PlaneEnv(), plane_setup(n_update=1000))
        bootstrap(st)
        prev = {m.cell: m.fitness for m in st.archive.members()}
        for it in range(1, 30):
            evolution_step(st, it)
            now = {m.cell: m.fitness for m in st.archive.members()}
            assert set(prev) <= set(now)
            assert all(now[c] >= f for c, f in prev.items())
            prev = now

    def test_failure_reports_iteration(self):
        class Flaky(PlaneEnv):
            calls = 0

            def evaluate(self, genomes):
                Flaky.calls += 1
                if Flaky.calls == 4:
                    raise OSError("boom")
                return super().evaluate(genomes)

        with pytest.raises(RuntimeError, match="iteration 3: boom"):
            run(Flaky(), plane_setup(), PLANE_GT)

    def test_aurora_uses_csc(self):
        st = QDState(PlaneEnv(), plane_setup("aurora"))
        bootstrap(st)
        d0 = st.archive.d_current
        for it in range(1, 6):
            evolution_step(st, it)
        assert st.archive.d_current != d0

    def test_wrong_input_dim(self):
        setup = plane_setup()
        setup.architecture = Architecture(5, 2, 4)
        with pytest.raises(ConfigurationError, match="input_dim"):
            QDState(PlaneEnv(), setup)
