import itertools
from fractions import Fraction

import numpy as np
import pytest

from fa1f import (
    Configuration,
    Volume,
    canonical_path,
    cone,
    config_path,
    constraint,
    floor_alpha,
    sample_config,
)
from fa1f.errors import PreconditionError


def nonneg_ball(ell, d, min_norm=1):
    for z in itertools.product(range(ell + 1), repeat=d):
        if min_norm <= sum(z) <= ell:
            yield z


class TestCanonicalPath:
    def test_single_axis(self):
        p = canonical_path((3, 0))
        assert p.steps == ((0, 0), (1, 0), (2, 0), (3, 0))

    def test_two_axes(self):
        # witnesses {(1/2,1), (1,1), (1,2)} sorted, then walked
        p = canonical_path((2, 1))
        assert p.steps == ((0, 0), (1, 0), (2, 0), (2, 1))
        assert p.witnesses == (
            (Fraction(1, 2), 1),
            (Fraction(1, 1), 1),
            (Fraction(1, 1), 2),
        )

    def test_reflection(self):
        p = canonical_path((-2, 1))
        assert p.steps == ((0, 0), (-1, 0), (-2, 0), (-2, 1))

    def test_zero_target_rejected(self):
        with pytest.raises(ValueError):
            canonical_path((0, 0))

    def test_witness_structure(self):
        for z in [(3, 2), (1, 4), (2, 2, 3), (-3, 5)]:
            p = canonical_path(z)
            n = sum(abs(c) for c in z)
            assert len(p.witnesses) == n
            assert all(
                Fraction(0) < s <= 1 and 1 <= a <= len(z) for s, a in p.witnesses
            )
            assert all(
                p.witnesses[i] < p.witnesses[i + 1] for i in range(n - 1)
            )

    def test_norm_indexing_with_signs(self):
        # |gamma_i|_1 = i, including reflected targets
        signs = [(1, 1), (-1, 1), (1, -1), (-1, -1)]
        for base in nonneg_ball(10, 2):
            for sx, sy in signs:
                z = (base[0] * sx, base[1] * sy)
                if z == (0, 0):
                    continue
                p = canonical_path(z)
                for i, step in enumerate(p.steps):
                    assert sum(abs(c) for c in step) == i


class TestFloorAlpha:
    def test_examples(self):
        assert floor_alpha((1.5, 2.0), 1) == (1, 1)
        assert floor_alpha((1.5, 2.0), 2) == (1, 2)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            floor_alpha((1.0, 2.0), 0)
        with pytest.raises(ValueError):
            floor_alpha((1.0, 2.0), 3)

    def test_represents_path_steps_small(self):
        # gamma_i(z) = floor_alpha(s_i z, alpha_i); on axes where z vanishes
        # the path never moves and the formula's ceil-1 artifact is ignored
        for z in nonneg_ball(8, 2):
            live = [a for a, c in enumerate(z) if c != 0]
            p = canonical_path(z)
            for i, (s, a) in enumerate(p.witnesses, start=1):
                y = tuple(s * c for c in z)
                got = floor_alpha(y, a)
                assert all(got[a] == p.steps[i][a] for a in live), (z, i)
                if len(live) == len(z):
                    assert got == p.steps[i]


class TestCone:
    def test_origin_cone(self):
        assert cone((0, 0), 1) == [(0, 1), (1, 0)]

    def test_unit_apex(self):
        assert cone((1, 0), 2) == [(1, 1), (2, 0)]

    def test_apex_too_far(self):
        with pytest.raises(ValueError):
            cone((2, 1), 2)

    def test_negative_apex(self):
        with pytest.raises(ValueError):
            cone((-1, 0), 3)

    def test_partition_fixed_norm(self):
        # cones over apexes of norm m partition the deeper shell
        ell, m, d = 6, 2, 2
        shell = set(z for z in nonneg_ball(ell, d, min_norm=m + 1))
        cones = {}
        for y in nonneg_ball(ell, d, min_norm=m):
            if sum(y) == m:
                cones[y] = set(cone(y, ell))
        seen = set()
        for y, members in cones.items():
            assert not (members & seen)
            seen |= members
        assert seen == shell


from conftest import check_path_properties  # noqa: E402


class TestConfigPath:
    def test_origin_already_empty(self):
        vol = Volume.box((4,))
        occ = np.ones(4, dtype=np.uint8)
        occ[0] = 0
        assert config_path(Configuration(vol, occ), 4) == []

    def test_one_dimensional_example(self):
        # single vacancy at 2: flip sites (1, 2, 0)
        vol = Volume.box((5,))
        occ = np.ones(5, dtype=np.uint8)
        occ[2] = 0
        steps = config_path(Configuration(vol, occ), 4)
        assert [s.site for s in steps] == [1, 2, 0]
        assert steps[-1].after.occupancy[0] == 0

    def test_requires_window_vacancy(self):
        vol = Volume.box((4,))
        eta = Configuration(vol, np.ones(4, dtype=np.uint8))
        with pytest.raises(PreconditionError):
            config_path(eta, 4)

    def test_properties_on_random_configs(self):
        rng = np.random.default_rng(7)
        vol = Volume.box((5, 5))
        done = 0
        while done < 500:
            eta = sample_config(vol, 0.3, rng)
            if not (eta.occupancy[vol.window_box(5)] == 0).any():
                continue
            check_path_properties(eta, 5)
            done += 1

    def test_injectivity_small(self):
        # (eta, i) -> (eta^(i), x_i, z) has no collisions on a 3x3 box
        vol = Volume.box((3, 3))
        seen = {}
        for code in range(1 << 9):
            occ = np.array([(code >> k) & 1 for k in range(9)], dtype=np.uint8)
            if occ.all():
                continue
            eta = Configuration(vol, occ)
            steps = config_path(eta, 3)
            empties = np.flatnonzero(occ == 0)
            coords = vol.coords[empties]
            norms = np.abs(coords).sum(axis=1)
            order = np.lexsort((coords[:, 1], coords[:, 0], norms))
            z = tuple(int(c) for c in coords[order[0]])
            for i, s in enumerate(steps):
                key = (s.before.occupancy.tobytes(), s.site, z)
                assert key not in seen, (code, i, seen[key])
                seen[key] = (code, i)
