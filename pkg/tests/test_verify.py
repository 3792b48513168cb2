import numpy as np
import pytest

from sgol import geometry
from sgol import verify as V


def names(results):
    return {r.name for r in results}


class TestSuitesPass:
    def test_assignment(self):
        res = V.assignment_suite(seed=1, n_matrices=30)
        assert res and not V.failures(res)

    def test_gradients_without_model(self):
        res = V.gradient_suite(seed=1, include_model=False)
        assert res and not V.failures(res)

    def test_ap(self):
        res = V.ap_suite(seed=1, n_instances=20)
        assert names(res) == {"hand_tp_fp_tp", "no_ground_truth", "brute_force_agreement"}
        assert not V.failures(res)

    def test_geometry(self):
        res = V.geometry_suite()
        assert names(res) == {n for n, *_ in V.GIOU_CASES} | {"mask_iou_cases"}
        assert not V.failures(res)


class TestSuitesCatchFaults:
    def test_negated_giou_fails_and_names_cases(self):
        res = V.geometry_suite(giou_fn=lambda a, b: -geometry.giou(a, b))
        bad = V.failures(res)
        # touching boxes have GIoU 0, so negation leaves that case passing
        assert {b.split(":")[0] for b in bad} == {"geometry/giou_disjoint", "geometry/giou_containment", "geometry/giou_identity"}

    def test_off_by_tolerance_iou(self):
        res = V.geometry_suite(iou_fn=lambda a, b: geometry.iou(a, b) + 1e-8)
        assert [r.name for r in res if not r.passed] == ["iou_partial"]

    def test_crashing_case_is_a_failure(self):
        def boom(a, b):
            raise RuntimeError("broken")

        res = V.geometry_suite(giou_fn=boom)
        failed = [r for r in res if not r.passed]
        assert len(failed) == 4 and all("RuntimeError: broken" in r.detail for r in failed)

    def test_run_suites_threads_fault_through(self):
        res = V.run_suites(suites=("geometry",), giou_fn=lambda a, b: np.float64(0.5))
        assert not all(r.passed for r in res)

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            V.run_suites(suites=("nope",))


def test_results_are_deterministic():
    a = [r.as_dict() for r in V.ap_suite(seed=2, n_instances=10)]
    b = [r.as_dict() for r in V.ap_suite(seed=2, n_instances=10)]
    assert a == b and all("seconds" not in d for d in a)
