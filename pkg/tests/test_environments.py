import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qd_forge.autodiff import ConfigurationError
from qd_forge.environments import (
    ArmChain,
    GridWorld,
    MobileWorld,
    eval_arm,
    eval_gridworld,
    eval_mobile,
    filter_duplicates,
    load_map_text,
    random_genomes,
    raster_iou,
)

from oracles import greedy_dedup


def bias_only(n_params: int, out_bias) -> np.ndarray:
    g = np.zeros(n_params)
    g[-len(out_bias):] = out_bias
    return g


# ------------------------------------------------------------------- mobile


class TestMobile:
    def test_still_policy(self):
        w = MobileWorld.preset("free")
        out = eval_mobile(w, np.zeros(w.n_params))
        assert out.fitness == pytest.approx(400.0, abs=1e-12)
        assert out.ground_truth_bd.tolist() == [300.0, 300.0]

    def test_straight_line_scalar_replay(self):
        w = MobileWorld.preset("free")
        c = 0.1
        out = eval_mobile(w, bias_only(w.n_params, [math.atanh(c)] * 2))
        step = c * w.v_max * w.dt  # both wheels equal, heading 0: pure +x motion
        xs = [300.0 + step * i for i in range(1, 401)]
        f = sum(math.exp(-abs(x - xs[-1]) / 600.0) for x in xs)
        assert out.fitness == pytest.approx(f, rel=1e-9)
        assert out.ground_truth_bd[0] == pytest.approx(xs[-1], abs=1e-9)
        assert out.ground_truth_bd[1] == pytest.approx(300.0, abs=1e-9)

    def test_border_stops_robot(self):
        w = MobileWorld.preset("free")
        out = eval_mobile(w, bias_only(w.n_params, [5.0, 5.0]))
        assert out.ground_truth_bd[0] <= 600 - w.robot_radius
        assert out.ground_truth_bd[0] > 560

    def test_raster_pixels_within_radius(self):
        w = MobileWorld.preset("free")
        pos = np.array([123.4, 456.7])
        img = w.full_image(pos)
        ys, xs = np.nonzero(img)
        for y, x in zip(ys[::7], xs[::7]):
            assert (x + 0.5 - pos[0]) ** 2 + (y + 0.5 - pos[1]) ** 2 <= 100.0
        assert img.sum() == sum(
            1 for y in range(440, 475) for x in range(105, 140)
            if (x + 0.5 - pos[0]) ** 2 + (y + 0.5 - pos[1]) ** 2 <= 100.0
        )

    @pytest.mark.parametrize("pos", [(300.0, 300.0), (10.0, 10.0), (589.9, 12.3), (77.7, 401.2)])
    def test_pooled_raster_matches_full_image(self, pos):
        w = MobileWorld.preset("free")
        fast = w.raster_bd(np.array([pos]))[0].reshape(16, 16)
        np.testing.assert_allclose(fast, w.pool_image(w.full_image(np.array(pos))), atol=1e-12)
        assert fast.min() >= 0 and fast.max() <= 1

    def test_wall_and_border_invariant(self):
        w = MobileWorld.preset("l_shape")
        g = random_genomes(40, w.n_params, np.random.default_rng(0))
        traj = w.rollout(g)
        assert np.all(w.is_free(traj[..., 0], traj[..., 1]))
        assert not np.any(w.inside_wall(traj[..., 0], traj[..., 1]))

    def test_fitness_bounds(self):
        w = MobileWorld.preset("free")
        b = w.evaluate(random_genomes(30, w.n_params, np.random.default_rng(1)))
        assert np.all(b.fitness >= 1.0) and np.all(b.fitness <= 400.0)

    def test_batch_is_row_independent(self):
        w = MobileWorld.preset("l_shape")
        g = random_genomes(9, w.n_params, np.random.default_rng(2))
        full = w.evaluate(g)
        part = w.evaluate(g[3:5])
        assert np.array_equal(full.fitness[3:5], part.fitness)
        assert np.array_equal(full.raw_bd[3:5], part.raw_bd)

    def test_bad_presets(self):
        with pytest.raises(ConfigurationError):
            MobileWorld.preset("maze")
        with pytest.raises(ConfigurationError):
            MobileWorld(raster=0)
        with pytest.raises(ConfigurationError):
            MobileWorld.preset("l_shape", start=(400.0, 400.0, 0.0))

    def test_genome_length_checked(self):
        with pytest.raises(ValueError, match="genome length"):
            eval_mobile(MobileWorld(), np.zeros(3))


class TestDuplicates:
    def test_identical_dropped(self):
        r = np.zeros((2, 16))
        r[:, 3] = 1
        assert filter_duplicates(r, 0.5).tolist() == [0]

    def test_disjoint_retained(self):
        r = np.zeros((2, 16))
        r[0, 0] = r[1, 5] = 1
        assert filter_duplicates(r, 0.0).tolist() == [0, 1]

    def test_iou_values(self):
        a = np.array([[1, 1, 0, 0]], dtype=float)
        b = np.array([[0, 1, 1, 0]], dtype=float)
        assert raster_iou(a, b)[0, 0] == pytest.approx(1 / 3)

    @pytest.mark.parametrize("threshold", [0.2, 0.5, 0.9])
    def test_greedy_oracle(self, threshold):
        w = MobileWorld.preset("free")
        pos = np.random.default_rng(3).uniform(200, 260, size=(100, 2))
        r = w.raster_bd(pos)
        assert filter_duplicates(r, threshold).tolist() == greedy_dedup(r, threshold)


# ---------------------------------------------------------------------- arm


class TestArm:
    def test_planar_two_link_fk(self):
        chain = ArmChain(axes=("y", "y"), limits=np.full((2, 2), [-3.0, 3.0]), start=np.zeros(2))
        for q1, q2 in [(0.3, -1.1), (1.2, 0.4), (-2.0, 2.5)]:
            tip = chain.forward_kinematics(np.array([q1, q2]))
            L = 0.2
            expected = [L * math.sin(q1) + L * math.sin(q1 + q2), 0.0, L * math.cos(q1) + L * math.cos(q1 + q2)]
            np.testing.assert_allclose(tip, expected, atol=1e-9)

    def test_zero_velocity_policy(self):
        chain = ArmChain.preset()
        out = eval_arm(chain, np.zeros(chain.n_params))
        tip = chain.forward_kinematics(np.zeros(6))
        assert tip.tolist() == pytest.approx([0.0, 0.0, 1.2])
        assert out.fitness == pytest.approx(math.exp(-math.dist((0.3, 0.0, 0.5), tip)), rel=1e-12)

    def test_goal_reached_gives_one(self):
        start = np.array([0.1, 0.7, -0.3, 1.1, 0.0, 0.5])
        probe = ArmChain.preset()
        chain = ArmChain.preset(start=start, goal=tuple(probe.forward_kinematics(start)))
        assert eval_arm(chain, np.zeros(chain.n_params)).fitness == 1.0

    @pytest.mark.parametrize("constrained", [False, True])
    def test_limits_hold_every_step(self, constrained):
        chain = ArmChain.preset(constrained=constrained)
        g = random_genomes(20, chain.n_params, np.random.default_rng(4), init_range=3.0)
        _, hist = chain.rollout(g, record=True)
        assert hist.shape == (300, 20, 6)
        assert np.all(hist >= chain.limits[:, 0]) and np.all(hist <= chain.limits[:, 1])

    def test_constrained_preset_limits(self):
        lim = ArmChain.preset(constrained=True).limits
        assert lim[0].tolist() == [-0.5, 0.5] and lim[1].tolist() == [-0.5, 0.5]
        assert lim[2].tolist() == [-2.967, 2.967]

    def test_fitness_range_and_purity(self):
        chain = ArmChain.preset()
        g = random_genomes(15, chain.n_params, np.random.default_rng(5))
        a, b = chain.evaluate(g), chain.evaluate(g)
        assert np.all(a.fitness > 0) and np.all(a.fitness <= 1)
        assert np.array_equal(a.fitness, b.fitness) and np.array_equal(a.raw_bd, b.raw_bd)


# ---------------------------------------------------------------- gridworld

STAY = [0, 0, 0, 0, 5.0]
RIGHT = [0, 5.0, 0, 0, 0]


def world(text: str) -> GridWorld:
    return GridWorld(grid=load_map_text(text), steps=20)


class TestGridWorld:
    def test_stay_still(self):
        w = GridWorld()
        out = eval_gridworld(w, bias_only(w.n_params, STAY))
        assert out.fitness == 0.0
        assert tuple(out.ground_truth_bd) == w.grid.start

    def test_walk_onto_key(self):
        w = world("#####\n#@a.#\n#####")
        out = eval_gridworld(w, bias_only(w.n_params, RIGHT))
        assert out.fitness == 10.0
        assert out.ground_truth_bd.tolist() == [1.0, 3.0]

    def test_key_then_door(self):
        w = world("######\n#@aA.#\n######")
        out = eval_gridworld(w, bias_only(w.n_params, RIGHT))
        assert out.fitness == 30.0
        assert out.ground_truth_bd.tolist() == [1.0, 4.0]

    def test_locked_door_blocks(self):
        w = world("#####\n#@A.#\n#####")
        out = eval_gridworld(w, bias_only(w.n_params, RIGHT))
        assert out.fitness == 0.0 and out.ground_truth_bd.tolist() == [1.0, 1.0]

    def test_wrong_key_does_not_open(self):
        w = world("######\n#@bA.#\n######")
        assert eval_gridworld(w, bias_only(w.n_params, RIGHT)).fitness == 10.0

    def test_mask_and_invariants(self):
        w = GridWorld()
        g = random_genomes(40, w.n_params, np.random.default_rng(6))
        b = w.evaluate(g)
        h, wd = w.grid.shape
        img = b.raw_bd.reshape(len(g), 3, h, wd)
        rr, cc = np.meshgrid(np.arange(h), np.arange(wd), indexing="ij")
        trav = {tuple(t) for t in w.grid.traversable().tolist()}
        for k, (r, c) in enumerate(b.ground_truth_bd.astype(int)):
            far = np.maximum(abs(rr - r), abs(cc - c)) > 3
            assert np.all(img[k][:, far] == 0)
            assert (r, c) in trav
        assert np.all(b.fitness % 10 == 0)
        assert np.all((b.fitness >= 0) & (b.fitness <= w.max_fitness))

    @pytest.mark.parametrize(
        "text,msg",
        [("##\n#", "rectangle"), ("###\n#x#\n###", "unknown map character"), ("###\n#.#\n###", "no start"),
         ("####\n#@@#\n####", "second start")],
    )
    def test_malformed_maps(self, text, msg):
        with pytest.raises(ConfigurationError, match=msg):
            load_map_text(text)

    def test_default_map_shape(self):
        g = GridWorld().grid
        assert g.shape == (18, 18) and g.n_keys() == 3 and g.n_doors() == 3

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_pure(self, seed):
        w = GridWorld()
        g = random_genomes(3, w.n_params, np.random.default_rng(seed))
        a, b = w.evaluate(g), w.evaluate(g)
        assert np.array_equal(a.raw_bd, b.raw_bd) and np.array_equal(a.fitness, b.fitness)
