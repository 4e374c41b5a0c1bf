import json
import urllib.error
import urllib.request

import numpy as np
import pytest

from talentrank.corpus import (
    EntityId,
    Impression,
    MemberProfile,
    ProfileStore,
    Query,
    Session,
    SessionStore,
    SynthConfig,
    synth_corpus,
)
from talentrank.graph_embed import EmbeddingTable, pool
from talentrank.neural import TrainConfig
from talentrank.ranker import FeatureSchema, make_scorer, train_ranker
from talentrank.search_service import (
    SearchHTTPServer,
    SearchService,
    ServiceError,
    build_index,
    query_embedding,
    retrieve,
    second_pass_rank,
)


def sk(i):
    return EntityId("skill", i)


def ti(i):
    return EntityId("title", i)


def member(mid, skills=(), titles=(), headline=""):
    return MemberProfile(
        member_id=mid,
        skills=frozenset(sk(i) for i in skills),
        titles=frozenset(ti(i) for i in titles),
        companies=frozenset(),
        headline_text=headline,
    )


def skill_table(vectors):
    dim = len(next(iter(vectors.values())))
    return EmbeddingTable(dim, "concat", {sk(i): np.array(v, float) for i, v in vectors.items()})


def fixture_world():
    profiles = ProfileStore([
        member(0, skills=[1, 2], titles=[7]),
        member(1, skills=[1], titles=[7]),
        member(2, skills=[2], titles=[8]),
        member(3, skills=[1, 2], titles=[8]),
    ])
    tables = {"skill": skill_table({1: [1.0, 0.0], 2: [0.0, 1.0]})}
    index = build_index(profiles, tables)
    return profiles, tables, index


def trained_model(profiles, tables):
    schema = FeatureSchema(embedding_namespaces=("skill",))
    q = Query(facet_skills=frozenset({sk(1)}))
    sessions = SessionStore([
        Session(1, 100, q, (Impression(0, 1, 0), Impression(2, 0, 1))),
        Session(2, 200, q, (Impression(3, 1, 0), Impression(1, 0, 1))),
    ])
    config = TrainConfig(objective="pointwise", epochs=3, seed=1, hidden_layers=(6,))
    return train_ranker(sessions, SessionStore(), profiles, tables, schema, config)


class TestBuildIndex:
    def test_postings_membership(self):
        profiles, tables, index = fixture_world()
        assert index.posting(sk(1)) == [0, 1, 3]
        assert index.posting(sk(2)) == [0, 2, 3]
        assert index.posting(ti(7)) == [0, 1]

    def test_empty_store(self):
        index = build_index(ProfileStore([]), {})
        assert index.member_ids() == []

    def test_forward_pool_matches_offline_pool(self):
        profiles, tables, index = fixture_world()
        for mid in index.member_ids():
            vec, cov = index.forward[mid].pools["skill"]
            expected_vec, expected_cov = pool(profiles[mid].skills, tables["skill"], "mean")
            assert np.array_equal(vec, expected_vec)
            assert cov == expected_cov


class TestRetrieve:
    def test_and_across_namespaces(self):
        _, _, index = fixture_world()
        q = Query(facet_skills=frozenset({sk(1)}), facet_titles=frozenset({ti(7)}))
        got = {mid for mid, _ in retrieve(index, q, limit=10)}
        assert got == {0, 1}

    def test_or_within_namespace_and_match_fraction(self):
        _, _, index = fixture_world()
        q = Query(facet_skills=frozenset({sk(1), sk(2)}))
        scored = dict(retrieve(index, q, limit=10))
        assert scored[0] == 1.0 and scored[3] == 1.0
        assert scored[1] == 0.5 and scored[2] == 0.5

    def test_tie_breaks_by_member_id(self):
        _, _, index = fixture_world()
        q = Query(facet_skills=frozenset({sk(1), sk(2)}))
        top = retrieve(index, q, limit=1)
        assert top[0][0] == 0

    def test_keywords_only_scans_all(self):
        _, _, index = fixture_world()
        got = retrieve(index, Query(keywords="java"), limit=10)
        assert [mid for mid, _ in got] == [0, 1, 2, 3]
        assert all(score == 0.0 for _, score in got)

    def test_unconstrained_refused(self):
        _, _, index = fixture_world()
        bogus = object.__new__(Query)
        object.__setattr__(bogus, "keywords", "")
        object.__setattr__(bogus, "facet_skills", frozenset())
        object.__setattr__(bogus, "facet_titles", frozenset())
        object.__setattr__(bogus, "facet_companies", frozenset())
        with pytest.raises(ServiceError, match="unconstrained"):
            retrieve(index, bogus, limit=10)

    def test_soundness_and_completeness_on_random_corpora(self):
        rng = np.random.RandomState(0)
        for seed in range(20):
            profiles, _, _ = synth_corpus(
                SynthConfig(members=40, sessions=5, entities_per_cluster=5), seed=seed)
            index = build_index(profiles, {})
            facet = frozenset({sk(int(rng.randint(10))), sk(int(rng.randint(10)))})
            title_facet = frozenset({ti(int(rng.randint(10)))})
            q = Query(facet_skills=facet, facet_titles=title_facet)
            got = {mid for mid, _ in retrieve(index, q, limit=len(profiles))}
            expected = {
                p.member_id for p in profiles
                if p.skills & facet and p.titles & title_facet
            }
            assert got == expected
            for mid in got:
                assert profiles[mid].skills & facet
                assert profiles[mid].titles & title_facet


class TestQueryEmbedding:
    def test_single_entity_facet(self):
        profiles, tables, index = fixture_world()
        q = Query(facet_skills=frozenset({sk(1)}))
        vec, cov = query_embedding(q, tables)["skill"]
        assert np.array_equal(vec, tables["skill"][sk(1)])
        assert cov == 1.0

    def test_empty_facet_zero_vector(self):
        profiles, tables, index = fixture_world()
        q = Query(keywords="x")
        vec, cov = query_embedding(q, tables)["skill"]
        assert not vec.any() and cov == 0.0

    def test_matches_offline_pool_bit_exact(self):
        profiles, tables, index = fixture_world()
        q = Query(facet_skills=frozenset({sk(1), sk(2)}))
        vec, cov = query_embedding(q, tables)["skill"]
        expected_vec, expected_cov = pool(q.facet_skills, tables["skill"], "mean")
        assert np.array_equal(vec, expected_vec) and cov == expected_cov


class TestSecondPass:
    def test_single_candidate_returned(self):
        profiles, tables, index = fixture_world()
        model = trained_model(profiles, tables)
        q = Query(facet_skills=frozenset({sk(1)}))
        results = second_pass_rank([(1, 1.0)], q, model, index)
        assert len(results) == 1 and results[0][0] == 1

    def test_matches_offline_scoring_bit_exact(self):
        profiles, tables, index = fixture_world()
        model = trained_model(profiles, tables)
        scorer = make_scorer(model, tables)
        q = Query(facet_skills=frozenset({sk(1), sk(2)}))
        candidates = retrieve(index, q, limit=10)
        for mid, second, first in second_pass_rank(candidates, q, model, index):
            assert second == scorer(q, profiles[mid])

    def test_equal_scores_order_by_member_id(self):
        profiles, tables, index = fixture_world()
        model = trained_model(profiles, tables)
        q = Query(facet_skills=frozenset({sk(1), sk(2)}))
        # members 0 and 3 have identical skill sets, so identical features
        results = second_pass_rank([(0, 1.0), (3, 1.0)], q, model, index)
        assert results[0][1] == results[1][1]
        assert [r[0] for r in results] == [0, 3]

    def test_schema_mismatch_errors(self):
        profiles, tables, index = fixture_world()
        model = trained_model(profiles, tables)
        bare_index = build_index(profiles, {})
        q = Query(facet_skills=frozenset({sk(1)}))
        with pytest.raises(ServiceError, match="skill"):
            second_pass_rank([(0, 1.0)], q, model, bare_index)


class TestHandleSearch:
    def make_service(self):
        profiles, tables, index = fixture_world()
        model = trained_model(profiles, tables)
        return profiles, tables, SearchService(index, model)

    def test_valid_request(self):
        _, _, service = self.make_service()
        status, body = service.handle_search(
            {"keywords": "", "facet_skills": [1, 2], "facet_titles": [],
             "facet_companies": [], "k": 25})
        assert status == 200
        results = body["results"]
        assert 0 < len(results) <= 25
        scores = [r["score"] for r in results]
        assert scores == sorted(scores, reverse=True)
        assert set(results[0]) == {"member_id", "score", "first_pass_score"}

    def test_k_larger_than_candidates(self):
        _, _, service = self.make_service()
        status, body = service.handle_search({"facet_skills": [1], "k": 100})
        assert status == 200
        assert len(body["results"]) == 3  # members 0, 1, 3 hold skill 1

    def test_k_truncates(self):
        _, _, service = self.make_service()
        status, body = service.handle_search({"facet_skills": [1, 2], "k": 1})
        assert status == 200 and len(body["results"]) == 1

    def test_no_match_is_success_with_empty_results(self):
        _, _, service = self.make_service()
        status, body = service.handle_search({"facet_skills": [999], "k": 5})
        assert status == 200 and body["results"] == []

    def test_unconstrained_is_error_response(self):
        _, _, service = self.make_service()
        status, body = service.handle_search(
            {"keywords": "", "facet_skills": [], "k": 5})
        assert status == 400 and "error" in body

    def test_malformed_requests(self):
        _, _, service = self.make_service()
        assert service.handle_search({"facet_skills": [1]})[0] == 400  # missing k
        assert service.handle_search({"facet_skills": [1], "k": 0})[0] == 400
        assert service.handle_search({"facet_skills": "oops", "k": 5})[0] == 400
        assert service.handle_search({"facet_skills": [1], "k": 5, "zzz": 1})[0] == 400
        assert service.handle_search([1, 2])[0] == 400

    def test_parity_with_offline_replay_scores(self):
        profiles, tables, service = self.make_service()
        status, body = service.handle_search({"facet_skills": [1, 2], "k": 10})
        assert status == 200
        scorer = make_scorer(service.model, tables)
        q = Query(facet_skills=frozenset({sk(1), sk(2)}))
        for row in body["results"]:
            assert row["score"] == scorer(q, profiles[row["member_id"]])


class TestHttpServer:
    @pytest.fixture()
    def server(self):
        profiles, tables, index = fixture_world()
        model = trained_model(profiles, tables)
        server = SearchHTTPServer(SearchService(index, model), port=0)
        server.start_background()
        yield server
        server.shutdown()
        server.server_close()

    def post(self, server, payload, path="/search"):
        req = urllib.request.Request(
            f"http://127.0.0.1:{server.port}{path}",
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req) as resp:
                return resp.status, json.loads(resp.read())
        except urllib.error.HTTPError as e:
            return e.code, json.loads(e.read())

    def test_health(self, server):
        with urllib.request.urlopen(f"http://127.0.0.1:{server.port}/health") as resp:
            assert resp.status == 200
            assert json.loads(resp.read()) == {"status": "ok"}

    def test_search_round_trip_preserves_scores(self, server):
        status, body = self.post(server, {"facet_skills": [1, 2], "k": 3})
        assert status == 200
        profiles, tables, _ = fixture_world()
        scorer = make_scorer(server.service.model, tables)
        q = Query(facet_skills=frozenset({sk(1), sk(2)}))
        for row in body["results"]:
            # JSON float round-trip is exact for repr-printed doubles
            assert row["score"] == scorer(q, profiles[row["member_id"]])

    def test_error_paths(self, server):
        status, body = self.post(server, {"k": 5})
        assert status == 400 and "error" in body
        status, body = self.post(server, {"facet_skills": [1], "k": 5}, path="/nope")
        assert status == 404 and "error" in body
        req = urllib.request.Request(
            f"http://127.0.0.1:{server.port}/search", data=b"not json", method="POST")
        try:
            with urllib.request.urlopen(req) as resp:
                status = resp.status
        except urllib.error.HTTPError as e:
            status = e.code
        assert status == 400
