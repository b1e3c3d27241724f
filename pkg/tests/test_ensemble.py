import itertools

import pytest

from refexpgen.backends import (
    BackendClient,
    BackendKind,
    BackendSpec,
    KindMismatch,
    make_mock_spec,
    mock_description,
)
from refexpgen.ensemble import (
    AllBackendsFailed,
    CandidateSet,
    MergeFailed,
    NoCandidates,
    baseline_merge,
    default_quorum,
    generate_candidates,
    merge_candidates,
)
from refexpgen.geometry import BBox, Instance
from refexpgen.ingest import CropSpec

CAR_CANDIDATES = [
    "a white car with plate",
    "a white car with taillights",
    "a car with plate and taillights",
]


class TestBaselineMerge:
    def test_majority_keeps_common_words_in_order(self):
        merged = baseline_merge(CAR_CANDIDATES, quorum=2)
        assert merged == "a white car plate taillights"

    def test_quorum_one_is_union(self):
        merged = baseline_merge(["a red box", "a blue box"], quorum=1)
        assert merged == "a red box blue"

    def test_identical_candidates_reduce_to_content_words(self):
        text = "a small dog with floppy ears"
        for quorum in (1, 2, 3):
            merged = baseline_merge([text] * 3, quorum=quorum)
            assert merged == "a small dog floppy ears"

    def test_singletons_dropped_at_quorum_two(self):
        candidates = CAR_CANDIDATES[:2] + ["a car with plate, taillights and license ABC123"]
        merged = baseline_merge(candidates, quorum=2)
        words = set(merged.split())
        assert "license" not in words and "abc123" not in words
        assert {"white", "car", "plate", "taillights"} <= words

    def test_full_quorum_is_intersection(self):
        merged = baseline_merge(CAR_CANDIDATES, quorum=3)
        words = set(merged.split()) - {"a"}
        for cand in CAR_CANDIDATES:
            assert words <= set(cand.split())

    def test_membership_is_permutation_invariant(self):
        base = set(baseline_merge(CAR_CANDIDATES, 2).split())
        for perm in itertools.permutations(CAR_CANDIDATES):
            assert set(baseline_merge(list(perm), 2).split()) == base

    def test_article_prefix_requires_agreement(self):
        merged = baseline_merge(["the red hat", "a red hat"], quorum=2)
        assert merged == "red hat"

    def test_validation(self):
        with pytest.raises(ValueError):
            baseline_merge([], 1)
        with pytest.raises(ValueError):
            baseline_merge(["x"], 2)
        with pytest.raises(ValueError):
            baseline_merge(["x"], 0)

    def test_default_quorum_is_majority(self):
        assert default_quorum(1) == 1
        assert default_quorum(2) == 1
        assert default_quorum(3) == 2
        assert default_quorum(4) == 2
        assert default_quorum(5) == 3


def make_instance(i=0, category="car"):
    return Instance(f"img1#{i}", "img1", BBox(10, 10, 30, 30), category, 0.9)


def crop():
    return CropSpec(image_path="unused.png", bbox=BBox(10, 10, 30, 30))


def failing_spec(name):
    return BackendSpec(
        name=name,
        kind=BackendKind.VISION_DESCRIBER,
        endpoint="http://example.test/down",
        timeout=1.0,
        max_retries=0,
        rate_limit=1000.0,
    )


class FailingClient:
    def __init__(self, spec):
        self.spec = spec

    def query(self, prompt):
        from refexpgen.backends import RemoteError

        raise RemoteError(503, "down")


def client_map(specs, failing=()):
    clients = {}
    for spec in specs:
        if spec.name in failing:
            clients[spec] = FailingClient(spec)
        else:
            clients[spec] = BackendClient(spec)
    return clients.__getitem__


class TestGenerateCandidates:
    def test_three_mocks_deterministic_config_order(self):
        specs = [make_mock_spec(f"m{i}", 7) for i in range(3)]
        cs = generate_candidates(make_instance(), crop(), specs)
        assert len(cs.candidates) == 3
        for spec, cand in zip(specs, cs.candidates):
            assert cand.backend_name == spec.name
            assert cand.text == mock_description(7, spec.name, "img1#0", "car")

    def test_order_is_config_not_completion(self):
        specs = [make_mock_spec(name, 7) for name in ("zeta", "alpha", "mid")]
        cs = generate_candidates(make_instance(), crop(), specs)
        assert [c.backend_name for c in cs.candidates] == ["zeta", "alpha", "mid"]

    def test_single_describer(self):
        cs = generate_candidates(make_instance(), crop(), [make_mock_spec("only", 7)])
        assert len(cs.candidates) == 1

    def test_all_failed(self):
        specs = [failing_spec(f"f{i}") for i in range(3)]
        with pytest.raises(AllBackendsFailed):
            generate_candidates(
                make_instance(), crop(), specs, client_for=client_map(specs, failing={"f0", "f1", "f2"})
            )

    def test_partial_failure_leaves_gap(self):
        specs = [make_mock_spec("good", 7), failing_spec("bad")]
        cs = generate_candidates(
            make_instance(), crop(), specs, client_for=client_map(specs, failing={"bad"})
        )
        assert cs.candidates[0] is not None
        assert cs.candidates[1] is None
        assert len(cs.non_gap()) == 1

    def test_unreadable_crop_becomes_gap_for_live_describer(self):
        # The live describer needs the crop encoded before posting; a missing
        # image file degrades to a gap while the mock describer still answers.
        live = BackendSpec("live", BackendKind.VISION_DESCRIBER,
                           "http://example.test/describe", max_retries=0, rate_limit=1000.0)
        specs = [make_mock_spec("good", 7), live]
        cs = generate_candidates(
            make_instance(), crop(), specs, client_for=client_map(specs)
        )
        assert cs.candidates[0] is not None
        assert cs.candidates[1] is None

    def test_empty_describers(self):
        with pytest.raises(ValueError):
            generate_candidates(make_instance(), crop(), [])

    def test_merger_kind_rejected(self):
        bad = BackendSpec("m", BackendKind.TEXT_MERGER, "http://x", rate_limit=1.0)
        with pytest.raises(KindMismatch):
            generate_candidates(make_instance(), crop(), [bad])


def candidate_set(texts, category="car"):
    from refexpgen.backends import TimedDescription

    cands = tuple(
        None if t is None else TimedDescription.from_text(f"m{i}", t, 1.0)
        for i, t in enumerate(texts)
    )
    return CandidateSet(instance_id="img1#0", category=category, candidates=cands)


class TestMergeCandidates:
    def test_mock_merger_majority(self):
        cs = candidate_set(CAR_CANDIDATES)
        merged = merge_candidates(cs, make_mock_spec("judge", 7))
        assert merged.text == "a white car plate taillights"
        assert merged.source_count == 3
        assert merged.merger_name == "judge"
        assert merged.elapsed >= 0

    def test_single_candidate_passthrough(self):
        cs = candidate_set(["a lone description"])
        merged = merge_candidates(cs, make_mock_spec("judge", 7))
        assert merged.text == "a lone description"
        assert merged.source_count == 1

    def test_gaps_are_skipped(self):
        cs = candidate_set([None, "a white car with plate", None])
        merged = merge_candidates(cs, make_mock_spec("judge", 7))
        assert merged.text == "a white car with plate"
        assert merged.source_count == 1

    def test_no_candidates(self):
        cs = candidate_set([None, None])
        with pytest.raises(NoCandidates):
            merge_candidates(cs, make_mock_spec("judge", 7))

    def test_merger_failure_wrapped(self):
        cs = candidate_set(["a white car"])
        spec = BackendSpec("judge", BackendKind.TEXT_MERGER, "http://example.test/x",
                           max_retries=0, rate_limit=1000.0)
        with pytest.raises(MergeFailed):
            merge_candidates(cs, spec, client_for=client_map([spec], failing={"judge"}))

    def test_describer_kind_rejected_as_merger(self):
        cs = candidate_set(["a white car"])
        spec = BackendSpec("v", BackendKind.VISION_DESCRIBER, "http://x", rate_limit=1.0)
        with pytest.raises(KindMismatch):
            merge_candidates(cs, spec)
