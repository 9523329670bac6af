import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectrum_mac.allocators import hungarian
from spectrum_mac.core import (
    UNASSIGNED,
    ContractViolation,
    ProtocolParams,
    Resource,
    UtilityMatrix,
    WelfareSeries,
    cumulative_regret,
    discrete_levels,
    is_orthogonal,
    regret,
    resource_index,
    resource_of,
    utilities,
    utility,
    welfare,
)

Q2 = [[3, 1], [2, 4]]


def test_defaults_are_setup_table():
    p = ProtocolParams()
    assert (p.n_users, p.n_channels, p.n_slots, p.n_resources) == (32, 8, 4, 32)
    assert p.eps_init == 1 and p.eps_final == 1 / 32 and p.zeta == 0.9808
    assert p.b_star == 4 and p.i_max == 500 and p.lam == 1
    assert p.delta == 1 / 8 and p.d_max == 1 / 256 and p.quant_resolution == 2


def test_m_must_be_integer():
    assert ProtocolParams(n_users=32, n_channels=8).n_slots == 4
    with pytest.raises(ContractViolation, match="multiple"):
        ProtocolParams(n_users=30, n_channels=8)


@pytest.mark.parametrize("kw", [
    dict(delta_min=0), dict(delta_min=9), dict(zeta=0), dict(zeta=1.5), dict(beta=1), dict(b_star=0.5),
    dict(eps_final=2.0), dict(i_max=0), dict(rng_seed=-1), dict(rng_seed=2**64),
    dict(strict_optimality=True),
])
def test_invalid_params(kw):
    with pytest.raises(ContractViolation):
        ProtocolParams(**kw)


def test_theory_preset():
    p = ProtocolParams.theory(16, 4)
    assert p.eps_final == 1 / 128 and p.b_star == 1024 and p.strict_optimality
    assert p.lam == 5  # 4**5 = 1024


@pytest.mark.parametrize("b_star,beta,lam", [(1, 4, 1), (4, 4, 1), (5, 4, 2), (16, 4, 2), (256, 4, 4),
                                             (1024, 2, 10), (1025, 2, 11)])
def test_discrete_levels(b_star, beta, lam):
    assert discrete_levels(b_star, beta) == lam


def test_resource_linearisation_roundtrip():
    for k in range(3):
        for m in range(4):
            a = resource_index(k, m, 4)
            assert a == k * 4 + m
            assert resource_of(a, 4) == Resource(k, m)
            assert Resource(k, m).index(4) == a
    with pytest.raises(ContractViolation):
        resource_index(0, 4, 4)


def test_utility_matrix_contract():
    q = UtilityMatrix([[0, 1.0], [8, 2]])
    assert q.units.tolist() == [[0, 1], [8, 2]]
    assert not q.values.flags.writeable
    with pytest.raises(ContractViolation):
        UtilityMatrix([[9.0]])
    with pytest.raises(ContractViolation):
        UtilityMatrix([[0.5]])
    assert UtilityMatrix([[1.5]], delta_min=0.5).units.tolist() == [[3]]


def test_utility_orthogonal_lookup():
    assert utility(Q2, [0, 1], 0) == 3
    assert utility(Q2, [0, 1], 1) == 4


def test_utility_collision_zeroes_both():
    assert utility(Q2, [0, 0], 0) == 0
    assert utility(Q2, [0, 0], 1) == 0


def test_unassigned_contributes_zero():
    assert utilities(Q2, [UNASSIGNED, 1]).tolist() == [0, 4]
    assert utilities(Q2, [UNASSIGNED, UNASSIGNED]).tolist() == [0, 0]


def test_utility_errors():
    with pytest.raises(ContractViolation):
        utility(Q2, [0, 1], 2)
    with pytest.raises(ContractViolation):
        utility(Q2, [0, 1, 1], 0)
    with pytest.raises(ContractViolation):
        utilities(Q2, [0, 2])


def test_seeded_three_user_oracle_profile():
    # integers(0, 9) from seed 7; the optimum 18 and (1, 2, 0) come from a
    # brute force over all 3! profiles.
    q = np.random.default_rng(7).integers(0, 9, size=(3, 3))
    assert q.tolist() == [[8, 5, 6], [8, 5, 6], [7, 2, 0]]
    profile, w = hungarian(q)
    assert is_orthogonal(profile) and w == 18
    for n in range(3):
        assert utility(q, profile, n) == q[n, profile[n]]


def test_welfare_examples():
    assert welfare(Q2, [0, 1]) == 7
    assert welfare(Q2, [1, 1]) == 0
    assert welfare(np.full((4, 4), 5.0), [2, 2, 2, 2]) == 0


def test_welfare_of_optimum_seed11():
    # integers(0, 9) from seed 11; brute force over 4! profiles gives 24.
    q = np.random.default_rng(11).integers(0, 9, size=(4, 4))
    assert hungarian(q)[1] == 24
    assert welfare(q, [2, 1, 3, 0]) == 24


def test_regret_examples():
    assert regret(WelfareSeries(np.array([10, 10, 10.0]), 10)) == 0
    assert regret(WelfareSeries(np.array([0, 5, 10.0]), 10)) == 15
    assert regret(WelfareSeries(np.zeros(0), 10)) == 0
    assert cumulative_regret(WelfareSeries(np.array([0, 5, 10.0]), 10)).tolist() == [10, 15, 15]
    # per-slot optimum for channels that change
    assert regret(WelfareSeries(np.array([1.0, 2.0]), np.array([3.0, 2.0]))) == 2


matrices = st.integers(2, 6).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, 8), min_size=n, max_size=n), min_size=n, max_size=n))


@settings(max_examples=60, deadline=None)
@given(matrices, st.randoms(use_true_random=False))
def test_welfare_permutation_equivariant(q, rnd):
    q = np.array(q, dtype=float)
    n = q.shape[0]
    profile = np.array([rnd.randrange(-1, n) for _ in range(n)])
    perm = np.array(rnd.sample(range(n), n))
    assert welfare(q[perm], profile[perm]) == welfare(q, profile)


@settings(max_examples=60, deadline=None)
@given(matrices, st.randoms(use_true_random=False))
def test_orthogonal_welfare_is_plain_sum_and_on_grid(q, rnd):
    q = UtilityMatrix(np.array(q, dtype=float))
    n = q.shape[0]
    profile = np.array(rnd.sample(range(n), n))
    w = welfare(q, profile)
    assert w == sum(q.values[i, profile[i]] for i in range(n))
    assert w == int(w)
    assert regret(WelfareSeries(np.array([w]), hungarian(q)[1])) >= 0
