"""Unimodal similarities, top-K retrieval and MIS re-ranking."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freshcontract.rerank import (
    COSINE_ONLY,
    FeatureRecord,
    SimilarityConfigError,
    SimilaritySpec,
    component_scores,
    cosine_similarity,
    load_records,
    mis_score,
    ncc,
    rerank,
    retrieve_top_k,
    save_records,
    search,
    ssim,
)
from oracles import cosine_reference, ssim_reference


def rec(id_, vector, matrix=None, modality="image"):
    return FeatureRecord(id_, modality, vector, matrix)


def random_db(rng, n, dim=6, with_matrix=True):
    return [rec(f"r{i:03d}", rng.standard_normal(dim),
                rng.uniform(size=(4, 4)) if with_matrix else None) for i in range(n)]


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestCosine:
    def test_identity(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_positive_scaling(self):
        assert cosine_similarity([1, 2], [2, 4]) == pytest.approx(1.0, abs=1e-15)

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            cosine_similarity([0, 0], [1, 0])

    def test_scaled_copies_score_exactly_one(self):
        rng = np.random.default_rng(20)
        for _ in range(1000):
            a = rng.standard_normal(int(rng.integers(2, 20))) * 10 ** rng.uniform(-3, 3)
            assert cosine_similarity(a, a * rng.uniform(0.1, 10)) == 1.0

    def test_extreme_magnitudes(self):
        assert cosine_similarity([1e200, 1.0], [1e200, 1.0]) == 1.0
        assert cosine_similarity([1e-300, 0.0], [0.0, 3e-310]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cosine_similarity([1, 2], [1, 2, 3])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=12))
    def test_matches_reference(self, pairs):
        a = [p[0] for p in pairs]
        b = [p[1] for p in pairs]
        if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
            return
        assert cosine_similarity(a, b) == pytest.approx(cosine_reference(a, b), abs=1e-12)
        assert -1.0 <= cosine_similarity(a, b) <= 1.0


class TestNcc:
    x = np.array([[1.0, 4.0], [2.0, -3.0]])

    def test_identity(self):
        assert ncc(self.x, self.x) == pytest.approx(1.0, abs=1e-15)

    def test_affine_invariance(self):
        assert ncc(self.x, 2 * self.x + 3) == pytest.approx(1.0, abs=1e-15)

    def test_sign_flip(self):
        assert ncc(self.x, -self.x) == pytest.approx(-1.0, abs=1e-15)

    def test_constant_input(self):
        with pytest.raises(ValueError):
            ncc(np.ones((2, 2)), self.x)

    def test_random_affine_maps(self):
        rng = np.random.default_rng(21)
        for _ in range(1000):
            a = rng.standard_normal(int(rng.integers(2, 20)))
            s, c = rng.uniform(0.1, 10), rng.uniform(-5, 5)
            assert ncc(a, s * a + c) == 1.0
            assert ncc(a, -s * a + c) == -1.0

    def test_agrees_with_pearson(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(30), rng.standard_normal(30)
        assert ncc(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-12)


class TestSsim:
    def test_identity(self):
        x = np.random.default_rng(1).uniform(size=(5, 7))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-15)

    def test_zero_images(self):
        assert ssim(np.zeros((3, 3)), np.zeros((3, 3)), 1.0) == 1.0

    def test_matches_reference(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
            assert ssim(a, b) == pytest.approx(ssim_reference(a.tolist(), b.tolist()), abs=1e-10)

    def test_dynamic_range(self):
        rng = np.random.default_rng(3)
        a, b = rng.uniform(0, 255, (8, 8)), rng.uniform(0, 255, (8, 8))
        assert ssim(a, b, 255.0) == pytest.approx(
            ssim_reference(a.tolist(), b.tolist(), 255.0), abs=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((2, 2)), np.zeros((2, 3)))

    @pytest.mark.parametrize("L", [0.0, -1.0])
    def test_bad_range(self, L):
        with pytest.raises(ValueError):
            ssim(np.zeros((2, 2)), np.zeros((2, 2)), L)


class TestRecords:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        db = random_db(rng, 5) + [rec("t", [1.0, 2.0], modality="text")]
        path = tmp_path / "db.jsonl"
        save_records(db, path)
        back = load_records(path)
        assert [r.id for r in back] == [r.id for r in db]
        for a, b in zip(back, db):
            np.testing.assert_array_equal(a.vector, b.vector)
            assert (a.matrix is None) == (b.matrix is None)

    @pytest.mark.parametrize("kwargs", [dict(vector=[]), dict(vector=[np.nan]),
                                        dict(vector=[1.0], modality="audio"),
                                        dict(vector=[1.0], matrix=[1.0, 2.0])])
    def test_invalid(self, kwargs):
        args = dict(id_="x", vector=[1.0])
        args.update(kwargs)
        with pytest.raises(ValueError):
            rec(**args)

    def test_bad_line_names_its_location(self, tmp_path):
        path = tmp_path / "db.jsonl"
        path.write_text('{"id": "a", "modality": "text", "vector": [1]}\n{"id": "b"}\n')
        with pytest.raises(ValueError, match=":2:"):
            load_records(path)


class TestSpec:
    @pytest.mark.parametrize("comps", [(), (("cosine", 0.5),), (("cosine", 1.5), ("ncc", -0.5)),
                                       (("bertscore", 1.0),)])
    def test_invalid(self, comps):
        with pytest.raises(SimilarityConfigError):
            SimilaritySpec(comps)

    def test_tolerates_rounding_in_the_weights(self):
        SimilaritySpec((("cosine", 1 / 3), ("ncc", 1 / 3), ("ssim", 1 / 3)))

    def test_from_file(self, tmp_path):
        p = tmp_path / "spec.json"
        p.write_text(json.dumps({"components": {"cosine": 0.25, "ssim": 0.75}}))
        assert SimilaritySpec.load(p).components == (("cosine", 0.25), ("ssim", 0.75))
        p.write_text(json.dumps({"components": [{"function": "ncc", "weight": 1.0}]}))
        assert SimilaritySpec.load(p).components == (("ncc", 1.0),)


class TestMisScore:
    def test_identical_payloads_score_one(self):
        rng = np.random.default_rng(5)
        r = random_db(rng, 1)[0]
        assert mis_score(r, r, COSINE_ONLY) == pytest.approx(1.0)
        for w in rng.dirichlet([1, 1, 1], size=10):
            spec = SimilaritySpec(tuple(zip(("cosine", "ncc", "ssim"), w)))
            assert mis_score(r, r, spec) == pytest.approx(1.0, abs=1e-12)

    def test_weighted_sum(self):
        # cosine 0.8 on vectors, ncc 0.6 on matrices
        q = rec("q", [1.0, 0.0], [[0.0, 1.0, 2.0]])
        c_vec = [0.8, 0.6]
        spec = SimilaritySpec((("cosine", 0.5), ("ncc", 0.5)))
        # centred unit-scale directions: 0.6 along the query, 0.8 orthogonal to it
        base = np.array([-1.0, 0.0, 1.0])
        orth = np.array([1.0, -2.0, 1.0]) / np.sqrt(3)
        c_mat = (0.6 * base + 0.8 * orth)[None, :]
        c = rec("c", c_vec, c_mat)
        assert component_scores(q, c, spec) == pytest.approx([0.8, 0.6], abs=1e-12)
        assert mis_score(q, c, spec) == pytest.approx(0.7, abs=1e-12)

    def test_missing_matrix(self):
        spec = SimilaritySpec((("ssim", 1.0),))
        with pytest.raises(SimilarityConfigError):
            mis_score(rec("a", [1.0]), rec("b", [1.0]), spec)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_convex_mixture_stays_in_range(self, seed):
        rng = np.random.default_rng(seed)
        q, c = random_db(rng, 2)
        spec = SimilaritySpec(tuple(zip(("cosine", "ncc", "ssim"), rng.dirichlet([1, 1, 1]))))
        assert -1.0 - 1e-12 <= mis_score(q, c, spec) <= 1.0 + 1e-12


class TestRetrieval:
    def test_identical_record_first(self):
        rng = np.random.default_rng(6)
        db = random_db(rng, 20)
        q = rec("q", db[7].vector * 3.0)
        assert retrieve_top_k(q, db, 5)[0][0].id == db[7].id

    def test_k_beyond_db(self):
        db = random_db(np.random.default_rng(7), 4)
        out = retrieve_top_k(rec("q", np.ones(6)), db, 10)
        assert len(out) == 4
        assert all(a[1] >= b[1] for a, b in zip(out, out[1:]))

    def test_hand_computed_order(self):
        q = rec("q", [1.0, 0.0])
        cosines = {"a": 0.1, "b": 0.9, "c": 0.5}
        db = [rec(k, [v, np.sqrt(1 - v * v)]) for k, v in cosines.items()]
        out = retrieve_top_k(q, db, 3)
        oracle = sorted(cosines, key=lambda k: -cosines[k])
        assert [r.id for r, _ in out] == oracle
        np.testing.assert_allclose([s for _, s in out], [0.9, 0.5, 0.1], atol=1e-15)

    def test_ties_break_by_id(self):
        db = [rec(i, [1.0, 1.0]) for i in ("z", "m", "a")]
        assert [r.id for r, _ in retrieve_top_k(rec("q", [1.0, 0.0]), db, 3)] == ["a", "m", "z"]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            retrieve_top_k(rec("q", [1.0, 0.0]), [rec("a", [1.0, 0.0, 0.0])], 1)

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            retrieve_top_k(rec("q", [1.0]), [rec("a", [1.0])], 0)


class TestRerank:
    def test_cosine_only_keeps_the_retrieval_order(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            db = random_db(rng, 15, with_matrix=False)
            q = rec("q", rng.standard_normal(6))
            top = retrieve_top_k(q, db, 10)
            assert [r.id for r, _ in rerank(q, top, COSINE_ONLY, 10)] == [r.id for r, _ in top]

    def test_p_one_is_the_argmax(self):
        rng = np.random.default_rng(9)
        db = random_db(rng, 12)
        q = random_db(rng, 1)[0]
        spec = SimilaritySpec((("cosine", 0.2), ("ssim", 0.8)))
        best = max(db, key=lambda r: mis_score(q, r, spec))
        assert rerank(q, db, spec, 1)[0][0].id == best.id

    @pytest.mark.parametrize("fn", ["cosine", "ncc", "ssim"])
    def test_degenerate_weights_sort_by_one_function(self, fn):
        rng = np.random.default_rng(10)
        db = random_db(rng, 12)
        q = random_db(rng, 1)[0]
        others = [n for n in ("cosine", "ncc", "ssim") if n != fn]
        spec = SimilaritySpec(((others[0], 0.0), (others[1], 0.0), (fn, 1.0)))
        single = SimilaritySpec(((fn, 1.0),))
        oracle = sorted(db, key=lambda r: (-component_scores(q, r, single)[0], r.id))
        assert [r.id for r, _ in rerank(q, db, spec, 12)] == [r.id for r in oracle]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        db = random_db(rng, 10)
        q = random_db(rng, 1)[0]
        spec = SimilaritySpec((("cosine", 0.3), ("ncc", 0.3), ("ssim", 0.4)))
        shuffled = [db[i] for i in rng.permutation(len(db))]
        a = rerank(q, db, spec, 6)
        b = rerank(q, shuffled, spec, 6)
        assert [(r.id, s) for r, s in a] == [(r.id, s) for r, s in b]

    def test_p_must_be_positive(self):
        with pytest.raises(ValueError):
            rerank(rec("q", [1.0]), [rec("a", [1.0])], COSINE_ONLY, 0)

    def test_search_pipeline(self):
        rng = np.random.default_rng(11)
        db = random_db(rng, 30)
        q = random_db(rng, 1)[0]
        spec = SimilaritySpec((("cosine", 0.5), ("ssim", 0.5)))
        out = search(q, db, 10, 3, spec)
        top_ids = {r.id for r, _ in retrieve_top_k(q, db, 10)}
        assert len(out) == 3 and {r.id for r, _ in out} <= top_ids
