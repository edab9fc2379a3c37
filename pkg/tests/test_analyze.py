from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from channeltopo import fixtures
from channeltopo.analyze import (
    ClusterComponent,
    DominanceLevel,
    classify_mean,
    dominant_features,
    evolution_report,
    popularity_groups,
    rank_components,
    render_components,
    render_popularity_csv,
    render_popularity_table,
)
from channeltopo.ingest import slice_by_year
from channeltopo.mapper import ClusterNode, NerveGraph
from channeltopo.normalize import FeatureMatrix, normalize_features

from oracles import sorted_median, union_find_components


def graph_of(member_lists, edges=()):
    nodes = tuple(
        ClusterNode(k, k, tuple(sorted(m)), len(m), {}, 0.0) for k, m in enumerate(member_lists)
    )
    return NerveGraph(nodes, tuple((a, b, len(set(member_lists[a]) & set(member_lists[b]))) for a, b in edges))


def matrix_of(ids, columns, values):
    return FeatureMatrix(np.asarray(values, dtype=float), tuple(ids), tuple(columns), ("npm",) * len(ids))


def test_published_cluster_sizes_rank_in_order():
    sizes = [5138, 16906, 15638]
    members, start = [], 0
    for s in sizes:
        members.append([f"p{k:06d}" for k in range(start, start + s)])
        start += s
    comps = rank_components(graph_of(members))
    assert [c.total_points for c in comps] == [16906, 15638, 5138]
    assert [c.rank for c in comps] == [1, 2, 3]


def test_empty_and_single_component():
    assert rank_components(graph_of([])) == []
    (c,) = rank_components(graph_of([["a", "b"], ["b", "c"]], [(0, 1)]))
    assert c.rank == 1 and c.point_ids == ("a", "b", "c") and c.total_points == 3


def test_tie_goes_to_smaller_smallest_id():
    comps = rank_components(graph_of([["q", "z"], ["b", "y"]]))
    assert [c.point_ids for c in comps] == [("b", "y"), ("q", "z")]


@given(st.integers(0, 100_000), st.integers(1, 30), st.floats(0.0, 0.2))
def test_components_match_union_find(seed, n, density):
    rng = np.random.default_rng(seed)
    members = [[f"p{int(x):03d}" for x in rng.choice(200, rng.integers(1, 6), replace=False)] for _ in range(n)]
    edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < density]
    comps = rank_components(graph_of(members, edges))
    assert {frozenset(c.node_ids) for c in comps} == set(union_find_components(n, edges))
    # nodes are partitioned; points may be shared through unmodelled overlap
    assert sorted(i for c in comps for i in c.node_ids) == list(range(n))
    sizes = [c.total_points for c in comps]
    assert sizes == sorted(sizes, reverse=True)
    assert sum(sizes) >= max(sizes)
    for c in comps:
        assert c.total_points == len({p for i in c.node_ids for p in members[i]})


def test_classify_examples():
    assert classify_mean(1.0) is DominanceLevel.STRONGLY_DOMINANT
    assert classify_mean(0.0) is DominanceLevel.ABSENT
    assert classify_mean(0.5) is DominanceLevel.DOMINANT
    assert classify_mean(0.8) is DominanceLevel.STRONGLY_DOMINANT
    assert DominanceLevel.DOMINANT.symbol == "✓" and DominanceLevel.STRONGLY_DOMINANT.symbol == "✓✓"


def test_license_in_sixty_percent_is_dominant():
    ids = [f"p{k}" for k in range(10)]
    lic = [1.0] * 6 + [0.0] * 4
    m = matrix_of(ids, ["License", "Wiki"], np.column_stack([lic, np.ones(10)]))
    assert sum(lic) / len(lic) == 0.6
    levels = dominant_features(ids, m)
    assert levels == {"License": DominanceLevel.DOMINANT, "Wiki": DominanceLevel.STRONGLY_DOMINANT}


def test_dominant_features_errors():
    m = matrix_of(["a"], ["License"], [[1.0]])
    with pytest.raises(ValueError):
        dominant_features([], m)
    with pytest.raises(ValueError):
        dominant_features(["a"], m, theta1=0.8, theta2=0.5)
    with pytest.raises(ValueError):
        dominant_features(["a"], m, theta1=0.0, theta2=0.5)


@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=20),
    st.floats(0.01, 0.9), st.floats(0.0, 0.5), st.floats(0.0, 0.5),
)
def test_dominance_monotone_in_thresholds(column, t1, d1, d2):
    t2 = t1 + 0.05 + d2
    ids = [f"p{k}" for k in range(len(column))]
    m = matrix_of(ids, ["c"], np.array(column)[:, None])
    low = dominant_features(ids, m, t1, t2)["c"]
    high = dominant_features(ids, m, t1 + d1, t2 + d1 + 0.01)["c"]
    assert high <= low


def _year_slices(per_year=300, seed=0):
    table, _ = fixtures.generate(fixtures.decline_groups(per_year), seed=seed)
    reg = fixtures.registry_default()
    slices = {}
    for year in (2015, 2016, 2017):
        t = slice_by_year(table, year)
        m = normalize_features(t, reg, reg.names)
        slices[year] = (graph_of([t.ids]), m)
    return slices


def test_evolution_decline_and_stable_channel():
    report = evolution_report(_year_slices())
    assert report.periods == [2015, 2016, 2017]
    cg = [report.row(y, 1).levels["Contributing Guidelines"] for y in report.periods]
    assert cg[0].present and not cg[-1].present
    assert all(r.levels["Issue Tracker"] is DominanceLevel.STRONGLY_DOMINANT for r in report.rows)
    assert "only 1 component" in report.notes[0]
    text = report.render_text()
    assert text.index("Issue Tracker") < text.index("License")  # Externalization columns first
    assert report.render_csv().splitlines()[0].startswith("period,cluster,nodes,points")


def test_evolution_single_period_and_k():
    slices = _year_slices(60)
    report = evolution_report({2016: slices[2016]})
    assert report.periods == [2016] and len(report.rows) == 1
    with pytest.raises(ValueError):
        evolution_report(slices, k=0)


def _three_groups(medians, sizes=(5, 4, 3)):
    members, stars, start = [], {}, 0
    for med, size in zip(medians, sizes):
        ids = [f"p{k:03d}" for k in range(start, start + size)]
        start += size
        members.append(ids)
        for i in ids:
            stars[i] = med
    ids = [i for g in members for i in g]
    m = matrix_of(ids, ["License"], np.ones((len(ids), 1)))
    return graph_of(members), m, stars


def test_max_median_is_popular():
    g, m, stars = _three_groups([100, 5, 3])
    rep = popularity_groups(g, m, stars)
    assert [x.label for x in rep.groups] == ["Popular", "NonPopular1", "NonPopular2"]
    assert [x.star_median for x in rep.groups] == [100, 5, 3]
    g, m, stars = _three_groups([3, 5, 100])
    rep = popularity_groups(g, m, stars)
    assert rep.popular.rank == 3 and rep.group("NonPopular1").rank == 2


def test_equal_medians_keep_candidate_order():
    g, m, stars = _three_groups([7, 7, 7])
    assert [x.rank for x in popularity_groups(g, m, stars).groups] == [1, 2, 3]


# integer multipliers keep medians exact; float scaling can split exact median ties
@given(st.integers(0, 100_000), st.integers(1, 10**6))
def test_labels_match_median_oracle_and_scale(seed, scale):
    rng = np.random.default_rng(seed)
    members, stars, start = [], {}, 0
    for size in rng.integers(1, 12, 3):
        ids = [f"p{k:03d}" for k in range(start, start + int(size))]
        start += int(size)
        members.append(ids)
        for i in ids:
            stars[i] = int(rng.integers(0, 1000))
    ids = [i for g in members for i in g]
    m = matrix_of(ids, ["Wiki"], rng.random((len(ids), 1)))
    g = graph_of(members)
    rep = popularity_groups(g, m, stars)
    comps = rank_components(g)
    oracle = sorted(range(3), key=lambda r: (-sorted_median([stars[p] for p in comps[r].point_ids]), r))
    assert [x.rank - 1 for x in rep.groups] == oracle
    scaled = popularity_groups(g, m, {p: s * scale for p, s in stars.items()})
    assert [(x.label, x.rank) for x in scaled.groups] == [(x.label, x.rank) for x in rep.groups]


def test_single_component_warns():
    g, m, stars = _three_groups([10], sizes=(4,))
    rep = popularity_groups(g, m, stars)
    assert len(rep.groups) == 1 and rep.warning and "warning:" in rep.render_text()


def test_neighbourhood_fallback_on_giant_component():
    # a path of five nodes carrying all points: one component, three neighbourhoods
    members = [[f"p{k:02d}", f"p{k + 1:02d}"] for k in range(0, 20, 2)]
    members = [a + b for a, b in zip(members[::2], members[1::2])]
    chain = [members[i] + [members[i + 1][0]] for i in range(len(members) - 1)] + [members[-1]]
    edges = [(i, i + 1) for i in range(len(chain) - 1)]
    ids = sorted({p for c in chain for p in c})
    stars = {p: int(p[1:]) for p in ids}
    m = matrix_of(ids, ["Wiki"], np.ones((len(ids), 1)))
    rep = popularity_groups(graph_of(chain, edges), m, stars)
    assert rep.fallback and {x.source for x in rep.groups} == {"neighborhood"}
    assert len(rep.groups) >= 2
    covered = [set(x.node_ids) for x in rep.groups]
    assert all(not (a & b) for i, a in enumerate(covered) for b in covered[i + 1:])
    off = popularity_groups(graph_of(chain, edges), m, stars, fallback=False)
    assert not off.fallback and len(off.groups) == 1


def test_popularity_fixture_popular_row_pattern():
    table, labels = fixtures.generate(fixtures.popularity_groups(150, ["Bower"]), seed=3)
    reg = fixtures.registry_default()
    m = normalize_features(table, reg, reg.names)
    by_label: dict[str, list[str]] = {}
    for pid, lab in zip(table.ids, labels):
        by_label.setdefault(lab, []).append(pid)
    g = graph_of(list(by_label.values()))
    rep = popularity_groups(g, m, table.stars_by_id(), label="Bower")
    assert set(rep.popular.point_ids) == set(by_label["Popular"])
    for ch in fixtures.POPULAR_CHANNELS:
        assert rep.popular.levels[ch].present
    text = render_popularity_table([rep])
    assert "Bower" in text and text == render_popularity_table([rep])
    assert render_popularity_csv([rep]).count("\n") == 1 + 3 * len(m.col_index)


def test_render_components_rows():
    g, m, stars = _three_groups([9, 8, 7])
    out = render_components(rank_components(g, stars), m).splitlines()
    assert out[0] == "rank,nodes,points,star_median,License"
    assert out[1] == "1,1,5,9,✓✓"


def test_component_record_is_frozen():
    c = ClusterComponent(1, (0,), ("a",), 1, 1.0)
    with pytest.raises(Exception):
        c.rank = 2
