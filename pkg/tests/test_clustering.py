import numpy as np
import pytest
from hypothesis import given, strategies as st

from critscen.clustering import (APRIORI_INFEASIBLE, MIXED, NOISE, NOMINAL, OFF_ROAD,
                                 ClusterLabeling, DbscanSettings, cluster_report, dbscan, failure_mode,
                                 label_modes)
from critscen.simulator import SimOutcome

from reference import brute_dbscan, partition


def random_points(rng, n=200):
    pts = rng.random((n, 2))
    # a few exact duplicates and a tight clump exercise the multiplicity path
    pts[rng.integers(0, n, 15)] = pts[rng.integers(0, n, 15)]
    pts[:20] = pts[0] + 1e-3 * rng.standard_normal((20, 2))
    return pts[rng.permutation(n)]


def test_matches_brute_force_on_random_datasets():
    rng = np.random.default_rng(7)
    for _ in range(50):
        pts = random_points(rng)
        eps = float(rng.uniform(0.02, 0.15))
        min_pts = int(rng.integers(1, 9))
        ours = dbscan(pts, DbscanSettings(eps, min_pts)).labels
        ref = brute_dbscan(pts, eps, min_pts)
        assert np.array_equal(ours, ref)


@given(st.integers(0, 2**32 - 1), st.floats(0.02, 0.2), st.integers(1, 8))
def test_permutation_keeps_cores_and_noise(seed, eps, min_pts):
    rng = np.random.default_rng(seed)
    pts = random_points(rng, 120)
    perm = rng.permutation(len(pts))
    a = dbscan(pts, DbscanSettings(eps, min_pts)).labels
    b = np.empty_like(a)
    b[perm] = dbscan(pts[perm], DbscanSettings(eps, min_pts)).labels
    assert partition(a)[1] == partition(b)[1]
    assert len(partition(a)[0]) == len(partition(b)[0])
    # core points form the same components regardless of order
    lo, span = pts.min(0), np.ptp(pts, 0)
    dn = np.sqrt(((((pts - lo) / span)[:, None] - ((pts - lo) / span)[None]) ** 2).sum(-1))
    core = np.flatnonzero((dn <= eps).sum(1) >= min_pts)
    assert partition(a[core])[0] == partition(b[core])[0]


def test_permutation_without_border_ambiguity_is_exact():
    rng = np.random.default_rng(3)
    pts = np.vstack([rng.normal(0, 0.01, (30, 2)), rng.normal(1, 0.01, (30, 2)),
                     rng.normal((0, 1), 0.01, (30, 2))])
    for _ in range(5):
        perm = rng.permutation(len(pts))
        a = dbscan(pts, DbscanSettings(0.05, 4)).labels
        b = np.empty_like(a)
        b[perm] = dbscan(pts[perm], DbscanSettings(0.05, 4)).labels
        assert partition(a) == partition(b)


def test_two_tight_groups():
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.uniform(-1e-3, 1e-3, (10, 2)), 1 + rng.uniform(-1e-3, 1e-3, (10, 2))])
    lab = dbscan(pts, DbscanSettings(0.05, 4))
    assert lab.n_clusters == 2 and lab.noise_count == 0
    assert lab.cluster_sizes == {0: 10, 1: 10}


def test_single_point_is_noise():
    lab = dbscan([[1.0, 2.0]], DbscanSettings(0.05, 2))
    assert lab.labels.tolist() == [NOISE] and lab.n_clusters == 0


def test_inclusive_radius_and_self_count():
    # without normalization the spacing is exactly eps
    pts = [[0.0], [0.5], [1.0]]
    lab = dbscan(pts, DbscanSettings(0.5, 3, normalization="none"))
    assert lab.labels.tolist() == [0, 0, 0]
    assert dbscan(pts, DbscanSettings(0.4999, 1, normalization="none")).n_clusters == 3


def test_dimension_mismatch_and_empty():
    with pytest.raises(ValueError):
        dbscan([[0.0, 1.0], [1.0]])
    with pytest.raises(ValueError):
        dbscan(np.empty((0, 2)))


def test_settings_validation():
    for bad in (dict(eps=0.0), dict(min_pts=0), dict(normalization="zscore")):
        with pytest.raises(ValueError):
            DbscanSettings(**bad)


def test_sizes_and_noise_account_for_every_point():
    rng = np.random.default_rng(11)
    for _ in range(10):
        lab = dbscan(rng.random((150, 3)), DbscanSettings(0.1, 5))
        assert sum(lab.cluster_sizes.values()) + lab.noise_count == 150
        assert sorted(lab.cluster_sizes) == list(range(lab.n_clusters))
        # ids appear in order of first discovery
        first = [int(np.flatnonzero(lab.labels == c)[0]) for c in range(lab.n_clusters)]
        assert first == sorted(first)


def test_failure_mode_boundaries():
    assert failure_mode(SimOutcome(4, 1.75, False)) == APRIORI_INFEASIBLE
    assert failure_mode(SimOutcome(0, 3.51, True)) == OFF_ROAD
    assert failure_mode(SimOutcome(0, 3.5, False)) == NOMINAL
    assert failure_mode(SimOutcome(0, 3.0, False), threshold=2.9) == OFF_ROAD


def test_label_modes_majority_and_mixed():
    outs = [SimOutcome(4, 1.75, False)] * 5 + [SimOutcome(0, 2.0, False)] * 9 + \
        [SimOutcome(0, 3.6, True)] + [SimOutcome(0, 3.6, True)] * 3 + [SimOutcome(0, 2.0, False)] * 2
    labels = np.array([0] * 5 + [1] * 10 + [2] * 5)
    lab = label_modes(ClusterLabeling(labels, {0: 5, 1: 10, 2: 5}), outs)
    assert lab.mode_map == {0: APRIORI_INFEASIBLE, 1: NOMINAL, 2: MIXED}
    with pytest.raises(ValueError):
        label_modes(lab, outs[:-1])


def test_no_critical_outcomes_gives_one_nominal_cluster():
    rng = np.random.default_rng(2)
    outs = [SimOutcome(0, float(c), False) for c in rng.permutation(np.linspace(1.0, 3.0, 60))]
    lab = label_modes(dbscan([[o.c_lat, o.status] for o in outs]), outs)
    assert lab.n_clusters == 1 and lab.mode_map == {0: NOMINAL}
    assert not lab.clusters_with_mode(OFF_ROAD) and not lab.clusters_with_mode(APRIORI_INFEASIBLE)


def test_cluster_report_shape():
    pts = np.array([[0.0, 0.0]] * 4 + [[1.0, 4.0]] * 4 + [[0.5, 2.0]])
    outs = [SimOutcome(0, 0.0, False)] * 4 + [SimOutcome(4, 1.0, False)] * 4 + [SimOutcome(0, 0.5, False)]
    lab = label_modes(dbscan(pts), outs)
    rep = cluster_report(lab, pts)
    assert rep["n_points"] == 9 and rep["n_clusters"] == 2 and rep["noise"] == 1
    assert rep["clusters"][1] == {"id": 1, "size": 4, "mode": APRIORI_INFEASIBLE,
                                  "centroid": [1.0, 4.0]}
