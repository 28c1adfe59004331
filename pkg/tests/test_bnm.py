import itertools

import numpy as np
import pytest

from jamdetect.bnm import (
    Bnm,
    NodeSpec,
    absorb_root,
    build_bnm,
    default_network,
    fuse,
    jam_probability,
    joint,
    load_network,
    parse_evidence,
    posterior_root,
    query,
    sample,
    save_network,
    side_evidence,
)
from jamdetect.errors import DataError, NetworkError, ZeroProbabilityError
from jamdetect.telemetry import CLEAN
from jamdetect.simulator import jam_label


def joint_table(net):
    """Dense joint over all nodes, axes in ``net.names`` order, built by broadcasting CPTs."""
    names = list(net.names)
    shape = [len(net.node(n).states) for n in names]
    table = np.ones(shape)
    for node in net.nodes:
        axes = [names.index(p) for p in node.parents] + [names.index(node.name)]
        cpt = np.zeros([shape[a] for a in axes])
        for key, row in node.cpt.items():
            idx = tuple(net.node(p).states.index(s) for p, s in zip(node.parents, key))
            cpt[idx] = row
        # move the CPT into the full table's axis layout
        order = np.argsort(axes)
        view = np.transpose(cpt, order).reshape([shape[a] if a in axes else 1 for a in range(len(names))])
        table = table * view
    return table


def table_query(net, name, state, evidence):
    names = list(net.names)
    table = joint_table(net)
    sel = [slice(None)] * len(names)
    for n, s in evidence.items():
        sel[names.index(n)] = net.node(n).states.index(s)
    num_sel = list(sel)
    num_sel[names.index(name)] = net.node(name).states.index(state)
    return table[tuple(num_sel)].sum() / table[tuple(sel)].sum()


def random_binary_dag(rng, n_nodes):
    specs = []
    for i in range(n_nodes):
        k = int(rng.integers(0, min(i, 3) + 1))
        parents = tuple(f"N{j}" for j in sorted(rng.choice(i, size=k, replace=False))) if k else ()
        cpt = {}
        for combo in itertools.product("FT", repeat=len(parents)):
            p = float(rng.uniform(0.05, 0.95))
            cpt[combo] = (1 - p, p)
        specs.append(NodeSpec(f"N{i}", ("F", "T"), parents, cpt))
    rng.shuffle(specs)
    return build_bnm(specs, root="N0", sentinel=f"N{n_nodes - 1}")


def test_default_network_shape():
    net = default_network()
    assert set(net.names) == {"Jamming", "InaccurateCQI", "DataChannelJamming", "McsVarianceIncrease",
                              "ThroughputDecrease"}
    assert net.names[0] == "Jamming"
    assert net.node("McsVarianceIncrease").prob("T", ("CCH", "T")) == 0.845
    assert net.node("InaccurateCQI").prob("T", ("CCH",)) == 0.503
    assert "InaccurateCQI" in net.node("McsVarianceIncrease").parents
    assert set(net.node("ThroughputDecrease").parents) == {"McsVarianceIncrease", "DataChannelJamming"}


def test_cycle_is_named():
    a = NodeSpec("A", ("F", "T"), ("B",), {("F",): (0.5, 0.5), ("T",): (0.5, 0.5)})
    b = NodeSpec("B", ("F", "T"), ("A",), {("F",): (0.5, 0.5), ("T",): (0.5, 0.5)})
    with pytest.raises(NetworkError, match="cycle: .*A.*B"):
        build_bnm([a, b], root="A", sentinel="B")


def test_incomplete_cpt_names_node():
    a = NodeSpec("A", ("F", "T"), (), {(): (0.5, 0.5)})
    b = NodeSpec("B", ("F", "T"), ("A",), {("F",): (0.5, 0.5)})
    with pytest.raises(NetworkError, match="node B"):
        build_bnm([a, b], root="A", sentinel="B")


def test_bad_row_sum_and_unknown_parent():
    with pytest.raises(NetworkError):
        NodeSpec("A", ("F", "T"), (), {(): (0.5, 0.6)})
    with pytest.raises(NetworkError, match="unknown parent"):
        build_bnm([NodeSpec("A", ("F", "T"), ("Z",), {("F",): (1, 0), ("T",): (1, 0)})], root="A", sentinel="A")


def test_single_root_joint():
    net = build_bnm([NodeSpec("R", ("F", "T"), (), {(): (0.7, 0.3)})], root="R", sentinel="R")
    assert joint(net, {"R": "T"}) == pytest.approx(0.3, abs=1e-15)


def test_default_joint_sums_to_one_and_matches_hand_product():
    net = default_network()
    total = sum(joint(net, dict(zip(net.names, combo)))
                for combo in itertools.product(*(net.node(n).states for n in net.names)))
    assert total == pytest.approx(1.0, abs=1e-9)
    a = {"Jamming": "CCH", "InaccurateCQI": "T", "DataChannelJamming": "F", "McsVarianceIncrease": "T",
         "ThroughputDecrease": "T"}
    hand = 0.05 * 0.503 * (1 - 0.1) * 0.845 * 0.7
    assert joint(net, a) == pytest.approx(hand, rel=1e-12)


def test_joint_needs_every_node():
    with pytest.raises(DataError):
        joint(default_network(), {"Jamming": "CCH"})


def test_full_parent_evidence_returns_cpt_row():
    net = default_network()
    p = query(net, "ThroughputDecrease=T", {"McsVarianceIncrease": "T", "DataChannelJamming": "F"})
    assert p == pytest.approx(0.7, abs=1e-12)


def test_default_query_matches_joint_table():
    net = default_network()
    got = query(net, "ThroughputDecrease=T", {"Jamming": "CCH"})
    assert abs(got - table_query(net, "ThroughputDecrease", "T", {"Jamming": "CCH"})) < 1e-12


def test_random_dags_match_joint_table():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        net = random_binary_dag(rng, n)
        names = list(net.names)
        target = names[int(rng.integers(n))]
        others = [x for x in names if x != target]
        k = int(rng.integers(0, len(others) + 1))
        ev = {x: str(rng.choice(["F", "T"])) for x in rng.choice(others, size=k, replace=False)}
        worst = max(worst, abs(query(net, (target, "T"), ev) - table_query(net, target, "T", ev)))
    assert worst < 1e-12


def _with_unobserved_cause(net):
    td = net.node("ThroughputDecrease")
    u = NodeSpec("Unobserved", ("F", "T"), (), {(): (0.6, 0.4)})
    cpt = {}
    for key, row in td.cpt.items():
        cpt[key + ("F",)] = row
        p = min(0.99, row[1] + 0.2)
        cpt[key + ("T",)] = (1 - p, p)
    td2 = NodeSpec(td.name, td.states, td.parents + ("Unobserved",), cpt)
    specs = [td2 if n.name == td.name else n for n in net.nodes] + [u]
    return build_bnm(specs)


def test_marginalizing_unobserved_cause_is_exact():
    net = _with_unobserved_cause(default_network())
    absorbed = absorb_root(net, "Unobserved")
    assert "Unobserved" not in absorbed.names
    for combo in itertools.product(("None", "CCH", "DCH"), "FT", "FT", "FT"):
        ev = dict(zip(("Jamming", "InaccurateCQI", "DataChannelJamming", "McsVarianceIncrease"), combo))
        full = query(net, "ThroughputDecrease=T", ev)
        assert abs(full - query(absorbed, "ThroughputDecrease=T", ev)) < 1e-12
        assert abs(full - table_query(net, "ThroughputDecrease", "T", ev)) < 1e-12


def test_posterior_root_direction_and_normalization():
    net = default_network()
    prior = posterior_root(net)
    post = posterior_root(net, {"McsVarianceIncrease": "T"})
    assert post["CCH"] > prior["CCH"]
    assert sum(post.values()) == pytest.approx(1.0, abs=1e-9)
    assert prior == pytest.approx({"None": 0.9, "CCH": 0.05, "DCH": 0.05}, abs=1e-12)


def test_independent_evidence_leaves_uniform_prior():
    r = NodeSpec("R", ("a", "b"), (), {(): (0.5, 0.5)})
    e = NodeSpec("E", ("F", "T"), (), {(): (0.2, 0.8)})
    net = build_bnm([r, e], root="R", sentinel="E")
    assert posterior_root(net, {"E": "T"}) == pytest.approx({"a": 0.5, "b": 0.5}, abs=1e-15)


def test_impossible_evidence():
    r = NodeSpec("R", ("F", "T"), (), {(): (1.0, 0.0)})
    s = NodeSpec("S", ("F", "T"), ("R",), {("F",): (1.0, 0.0), ("T",): (0.0, 1.0)})
    net = build_bnm([r, s], root="R", sentinel="S")
    with pytest.raises(ZeroProbabilityError):
        posterior_root(net, {"S": "T"})
    with pytest.raises(ZeroProbabilityError):
        query(net, "R=T", {"S": "T"})


def test_fuse_identity_and_odds_doubling():
    net = default_network()
    assert fuse(0.37, net, {}) == pytest.approx(0.37, abs=1e-12)
    # root prior P(jam)=0.5 and evidence doubling the odds to 2:1
    r = NodeSpec("R", ("None", "Jam"), (), {(): (0.5, 0.5)})
    e = NodeSpec("E", ("F", "T"), ("R",), {("None",): (0.7, 0.3), ("Jam",): (0.4, 0.6)})
    toy = build_bnm([r, e], root="R", sentinel="E")
    assert jam_probability(posterior_root(toy, {"E": "T"}), toy) == pytest.approx(2 / 3)
    assert fuse(0.5, toy, {"E": "T"}) == pytest.approx(2 / 3, abs=1e-12)


def test_fuse_degenerate_prior():
    r = NodeSpec("R", ("None", "Jam"), (), {(): (1.0, 0.0)})
    e = NodeSpec("E", ("F", "T"), ("R",), {("None",): (0.5, 0.5), ("Jam",): (0.5, 0.5)})
    with pytest.raises(DataError):
        fuse(0.5, build_bnm([r, e], root="R", sentinel="E"), {})


def test_fuse_stays_in_unit_interval():
    net = default_network()
    for s in (0.0, 1e-9, 0.3, 0.999999, 1.0):
        for ev in ({"McsVarianceIncrease": "T"}, {"McsVarianceIncrease": "F"}):
            assert 0.0 <= fuse(s, net, ev) <= 1.0


def test_json_round_trip(tmp_path):
    net = default_network()
    path = tmp_path / "net.json"
    save_network(net, path)
    again = load_network(path)
    assert again.to_dict() == net.to_dict()
    assert isinstance(again, Bnm)


def test_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(NetworkError):
        load_network(bad)
    with pytest.raises(DataError):
        load_network(tmp_path / "missing.json")


def test_parse_evidence():
    assert parse_evidence(["A=x", "B = y"]) == {"A": "x", "B": "y"}
    assert parse_evidence("A=x,B=y") == {"A": "x", "B": "y"}
    with pytest.raises(DataError):
        parse_evidence(["A=x", "A=y"])


def test_sampling_frequencies_follow_cpt():
    net = default_network()
    rng = np.random.default_rng(0)
    draws = [sample(net, rng, {"Jamming": "CCH"})["InaccurateCQI"] for _ in range(4000)]
    assert np.mean([d == "T" for d in draws]) == pytest.approx(0.503, abs=0.03)


def test_side_evidence_is_seeded():
    net = default_network()
    labels = [CLEAN] * 50 + [jam_label(2140.0, -12.0, channel="CCH")] * 50
    a = side_evidence(net, labels, seed=1)
    assert a == side_evidence(net, labels, seed=1)
    assert a[50:].count("T") > a[:50].count("T")
