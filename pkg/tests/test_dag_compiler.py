import json
from fractions import Fraction

import numpy as np
import pytest

from frobnet.dag_compiler import (
    DagSpec,
    allocate_budgets,
    check_node_ranges,
    compile_dag,
    effective_regularity,
    load_dag_spec,
    rate_table,
    worst_effective_regularity,
)
from frobnet.errors import BudgetInfeasible, OracleInconsistency, ParseError, RejectedInput
from frobnet.gallery import binary_tree_d4, constant_level_l3, multi_index_s2
from frobnet.net_ir import evaluate, kappa
from frobnet.oracles import mean_oracle, product_oracle

BOX2 = [(-1.0, 1.0)] * 2


def _tiny():
    return DagSpec(levels=(("a", "b"), ("f",)), parents={"f": ("a", "b")},
                   oracles={"f": product_oracle(2, 1.0, 2.0, BOX2)}, range_bounds={"f": 1.0}, name="tiny")


BINARY_JSON = {
    "name": "bt",
    "levels": [["x1", "x2", "x3", "x4"], ["v1", "v2"], ["f"]],
    "edges": [{"child": "v1", "parents": ["x1", "x2"]}, {"child": "v2", "parents": ["x3", "x4"]},
              {"child": "f", "parents": ["v1", "v2"]}],
    "nodes": {"v1": {"oracle": "mean", "alpha": 2, "range_bound": 1},
              "v2": {"oracle": "mean", "alpha": 2, "range_bound": 1},
              "f": {"oracle": "product", "alpha": 2, "r": 1, "range_bound": 1}},
}


class TestValidation:
    def test_root_must_be_single(self):
        with pytest.raises(RejectedInput, match="exactly one node"):
            DagSpec((("a", "b"), ("f", "g")), {"f": ("a",), "g": ("b",)},
                    {"f": mean_oracle(1), "g": mean_oracle(1)}, {"f": 1, "g": 1})

    def test_parent_on_wrong_level(self):
        with pytest.raises(RejectedInput, match="not on level"):
            DagSpec((("a", "b"), ("v",), ("f",)), {"v": ("a", "b"), "f": ("a",)},
                    {"v": mean_oracle(2), "f": mean_oracle(1)}, {"v": 1, "f": 1})

    def test_oracle_dimension(self):
        with pytest.raises(RejectedInput, match="oracle dimension"):
            DagSpec((("a", "b"), ("f",)), {"f": ("a", "b")}, {"f": mean_oracle(3)}, {"f": 1})

    def test_dead_node(self):
        with pytest.raises(RejectedInput, match="do not feed"):
            DagSpec((("a", "b"), ("v", "w"), ("f",)), {"v": ("a",), "w": ("b",), "f": ("v",)},
                    {"v": mean_oracle(1), "w": mean_oracle(1), "f": mean_oracle(1)}, {"v": 1, "w": 1, "f": 1})


class TestStructure:
    @pytest.mark.parametrize("factory,D", [(binary_tree_d4, 12), (constant_level_l3, 18), (multi_index_s2, 16)])
    def test_depth_formula(self, factory, D):
        assert factory().depth == D

    def test_paths(self):
        assert binary_tree_d4().paths() == [("v1", "f"), ("v2", "f")]
        assert len(constant_level_l3().paths()) == 3

    def test_effective_regularity(self):
        spec = constant_level_l3()
        assert effective_regularity(spec, ("v2", "w2", "f")) == {"v2": 1.0, "w2": 0.5, "f": 2.0}
        assert worst_effective_regularity(spec)["v2"] == 1.0

    def test_bad_path(self):
        with pytest.raises(RejectedInput):
            effective_regularity(constant_level_l3(), ("v1", "w2", "f"))

    def test_reference(self):
        x = np.array([[0.2, 0.4, -0.6, 1.0]])
        assert binary_tree_d4().reference(x)[0] == pytest.approx(0.3 * 0.2)


class TestRateTable:
    def test_binary_tree(self):
        t = rate_table(binary_tree_d4())
        assert t.worst_case_exponent == pytest.approx(0.125)
        assert t.closed_forms["binary-tree"]["constant"] == 8
        assert t.closed_forms["binary-tree"]["exponent"] == Fraction(1, 8)
        assert t.closed_forms["constant-level"]["constant"] == Fraction(13, 2)

    def test_multi_index(self):
        cf = rate_table(multi_index_s2()).closed_forms
        assert cf["multi-index"]["constant"] == 9 and cf["multi-index"]["exponent"] == Fraction(1, 9)
        assert "binary-tree" not in cf

    def test_constant_level(self):
        cf = rate_table(constant_level_l3()).closed_forms
        assert cf["constant-level"]["constant"] == Fraction(17, 2)
        assert cf["constant-level"]["exponent"] == Fraction(1, 17)

    def test_worst_is_minimum_over_paths(self):
        t = rate_table(constant_level_l3())
        assert t.worst_case_exponent == min(p[2] for p in t.paths)


class TestSpecFile:
    def test_load_matches_gallery(self, tmp_path):
        p = tmp_path / "bt.json"
        p.write_text(json.dumps(BINARY_JSON))
        spec = load_dag_spec(p)
        x = np.random.default_rng(0).uniform(-1, 1, (50, 4))
        assert np.allclose(spec.reference(x), binary_tree_d4().reference(x))
        assert spec.name == "bt" and spec.depth == 12

    @pytest.mark.parametrize("mutate", [
        lambda d: d.update(extra=1),
        lambda d: d["nodes"]["v1"].update(colour="red"),
        lambda d: d["nodes"]["f"].update(r=0),
        lambda d: d["edges"].append({"child": "v1", "parents": ["x1"]}),
    ])
    def test_strict(self, tmp_path, mutate):
        data = json.loads(json.dumps(BINARY_JSON))
        mutate(data)
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(data))
        with pytest.raises(RejectedInput):
            load_dag_spec(p)

    def test_malformed(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text('{"levels": [')
        with pytest.raises(ParseError):
            load_dag_spec(p)


class TestRanges:
    def test_consistent_gallery(self):
        for f in (binary_tree_d4, constant_level_l3, multi_index_s2):
            check_node_ranges(f())

    def test_violation_names_node(self):
        spec = DagSpec((("a", "b"), ("f",)), {"f": ("a", "b")}, {"f": mean_oracle(2, 2.0, BOX2)}, {"f": 0.4})
        with pytest.raises(OracleInconsistency, match="'f'"):
            check_node_ranges(spec)

    def test_compile_checks_ranges(self):
        spec = DagSpec((("a", "b"), ("f",)), {"f": ("a", "b")}, {"f": mean_oracle(2, 2.0, BOX2)}, {"f": 0.4})
        with pytest.raises(OracleInconsistency):
            compile_dag(spec, 1e30)


class TestBudgets:
    def test_infeasible_reports_minimum(self):
        with pytest.raises(BudgetInfeasible) as info:
            allocate_budgets(binary_tree_d4(), 1e6)
        assert info.value.minimal_K == pytest.approx(5.0854e26, rel=1e-4)

    def test_feasible(self):
        a = allocate_budgets(binary_tree_d4(), 1e33)
        assert a.global_bound <= 1e33
        assert all(k >= 1 for k in a.node_k.values())
        assert a.node_k["v1"] == a.node_k["v2"]

    def test_more_budget_never_lowers_k(self):
        lo = allocate_budgets(binary_tree_d4(), 1e30).node_k
        hi = allocate_budgets(binary_tree_d4(), 1e34).node_k
        assert all(hi[v] >= lo[v] for v in lo)

    def test_override_unknown_node(self):
        with pytest.raises(RejectedInput):
            allocate_budgets(binary_tree_d4(), 1e33, k_overrides={"zz": 2})


class TestCompile:
    def test_single_level(self):
        spec = _tiny()
        res = compile_dag(spec, 1e14)
        x = np.random.default_rng(1).uniform(-1, 1, (500, 2))
        err = np.max(np.abs(evaluate(res.network, x)[:, 0] - spec.reference(x)))
        assert err <= res.rate_certificate.total_error_bound
        assert kappa(res.network) <= 1e14
        assert res.network.depth == spec.depth

    def test_binary_tree(self):
        spec = binary_tree_d4()
        net, cert, rc = compile_dag(spec, 1e30)
        x = np.random.default_rng(2).uniform(-1, 1, (300, 4))
        err = np.max(np.abs(evaluate(net, x)[:, 0] - spec.reference(x)))
        assert net.depth == 12
        assert cert.kappa <= 1e30
        assert err <= rc.total_error_bound
        assert rc.recompute_worst_exponent() == pytest.approx(rate_table(spec).worst_case_exponent)

    def test_node_inputs_agree_at_level_one(self):
        res = compile_dag(binary_tree_d4(), 1e30)
        x = np.random.default_rng(3).uniform(-1, 1, (20, 4))
        inputs = res.node_inputs(x)
        for v in ("v1", "v2"):
            assert np.allclose(*inputs[v])
        u_true, u_net = inputs["f"]
        assert u_true.shape == u_net.shape == (20, 2)

    def test_level_networks_compose_to_whole(self):
        res = compile_dag(binary_tree_d4(), 1e28)
        x = np.random.default_rng(4).uniform(-1, 1, (30, 4))
        h = x
        for net in res.level_networks:
            h = evaluate(net, h)
        assert np.allclose(h, evaluate(res.network, x), atol=1e-9)
