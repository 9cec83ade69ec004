"""Graph checks on a small confounded graph: d-separation, adjustment, duplicate graph."""
import warnings

from cip.graph import Dag, build_duplicate_graph, check_ci_criterion, d_separated, is_valid_adjustment

g = Dag(["Z", "A", "X", "Y"], [("Z", "A"), ("Z", "X"), ("Z", "Y"), ("A", "X"), ("A", "Y"), ("X", "Y")])

print("A _||_ Y | Z:", d_separated(g, ["A"], ["Y"], ["Z"]))
print("{Z} adjusts A -> Y:", is_valid_adjustment(g, ["A"], ["Y"], ["Z"]))

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    for proper in (False, True):
        rep = check_ci_criterion(g, ["A"], ["A", "X", "Z"], ["Y"], ["Z"], proper=proper)
        print(f"criterion (proper={proper}):", rep.graphical_ok, rep.violations)

dup, mapping = build_duplicate_graph(g, ["A"], ["X"])
print("duplicate nodes:", dup.nodes)
print("mapping:", mapping)
