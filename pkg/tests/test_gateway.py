import socket
from concurrent.futures import ThreadPoolExecutor

import pytest

from guideqa.gateway import (
    ChatRequest,
    EndpointConfig,
    ExhaustedRetries,
    Gateway,
    HttpError,
    DimensionMismatch,
    MissingCredentials,
    MockLLMServer,
    MockRule,
    PortUnavailable,
    start_mock,
)


def req(user="hello", system="sys"):
    return ChatRequest(system=system, user=user)


class TestChat:
    def test_scripted_ok(self, gw):
        with start_mock({"*": "OK"}) as mock:
            assert gw.chat(mock.endpoint(), req()) == "OK"
            assert len(mock.requests) == 1

    def test_substring_matcher(self, gw):
        script = {"Rate the following question": "7", "*": "other"}
        with start_mock(script) as mock:
            assert gw.chat(mock.endpoint(), req("Rate the following question: Q?")) == "7"
            assert gw.chat(mock.endpoint(), req("unrelated")) == "other"

    def test_two_failures_then_success(self, gw):
        rules = [MockRule("*", [500, 500, "recovered"])]
        with MockLLMServer(rules=rules) as mock:
            endpoint = mock.endpoint(max_retries=3)
            assert gw.chat(endpoint, req()) == "recovered"
            assert len(mock.requests) == 3

    def test_exhausted_retries(self, gw):
        rules = [MockRule("*", [500])]
        with MockLLMServer(rules=rules) as mock:
            endpoint = mock.endpoint(max_retries=2)
            with pytest.raises(ExhaustedRetries):
                gw.chat(endpoint, req())
            # at most max_retries + 1 attempts
            assert len(mock.requests) == 3

    def test_non_retryable_status_raises_immediately(self, gw):
        rules = [MockRule("*", [400])]
        with MockLLMServer(rules=rules) as mock:
            with pytest.raises(HttpError) as err:
                gw.chat(mock.endpoint(max_retries=3), req())
            assert err.value.status == 400
            assert len(mock.requests) == 1

    def test_missing_credentials(self, gw, monkeypatch):
        monkeypatch.delenv("ABSENT_KEY_VAR", raising=False)
        with start_mock({"*": "OK"}) as mock:
            endpoint = mock.endpoint(api_key_env="ABSENT_KEY_VAR")
            with pytest.raises(MissingCredentials):
                gw.chat(endpoint, req())
            assert mock.requests == []

    def test_credentials_forwarded(self, gw, monkeypatch):
        monkeypatch.setenv("PRESENT_KEY_VAR", "secret")
        with start_mock({"*": "OK"}) as mock:
            endpoint = mock.endpoint(api_key_env="PRESENT_KEY_VAR")
            assert gw.chat(endpoint, req()) == "OK"

    def test_concurrency_bound_respected(self, gw):
        rules = [MockRule("*", ["OK"], delay=0.02)]
        with MockLLMServer(rules=rules) as mock:
            endpoint = mock.endpoint(max_concurrency=4)
            with ThreadPoolExecutor(max_workers=100) as pool:
                results = list(pool.map(lambda _: gw.chat(endpoint, req()), range(100)))
            assert results == ["OK"] * 100
            assert 2 <= mock.high_water_mark <= 4


class TestEmbed:
    def test_equal_dimension_vectors(self, gw):
        script = {"a": [1.0, 0.0], "b": [0.0, 1.0]}
        with MockLLMServer(embed_script=script) as mock:
            vectors = gw.embed(mock.endpoint(), ["a", "b"])
            assert [v.dimension for v in vectors] == [2, 2]
            assert vectors[0].values == [1.0, 0.0]

    def test_empty_texts_rejected(self, gw):
        with start_mock({"*": "OK"}) as mock:
            with pytest.raises(ValueError):
                gw.embed(mock.endpoint(), [])

    def test_batch_order_aligned(self, gw):
        texts = [f"text {i}" for i in range(64)]
        script = {t: [float(i), 1.0] for i, t in enumerate(texts)}
        with MockLLMServer(embed_script=script) as mock:
            vectors = gw.embed(mock.endpoint(), texts)
            assert len(vectors) == 64
            for i, v in enumerate(vectors):
                assert v.values[0] == float(i)

    def test_ragged_vectors_rejected(self, gw):
        script = {"a": [1.0, 0.0], "b": [1.0, 0.0, 0.0]}
        with MockLLMServer(embed_script=script) as mock:
            with pytest.raises(DimensionMismatch):
                gw.embed(mock.endpoint(), ["a", "b"])

    def test_deterministic_default_embeddings(self, gw):
        with MockLLMServer(embed_dimension=6) as mock:
            first = gw.embed(mock.endpoint(), ["same text"])
            second = gw.embed(mock.endpoint(), ["same text"])
            assert first[0].values == second[0].values
            assert first[0].dimension == 6


class TestMockServer:
    def test_port_unavailable(self):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        port = blocker.getsockname()[1]
        try:
            with pytest.raises(PortUnavailable):
                MockLLMServer(port=port).start()
        finally:
            blocker.close()

    def test_reset_rearms_sequences(self, gw):
        rules = [MockRule("*", ["first", "second"])]
        with MockLLMServer(rules=rules) as mock:
            endpoint = mock.endpoint()
            assert gw.chat(endpoint, req()) == "first"
            assert gw.chat(endpoint, req()) == "second"
            mock.reset()
            assert mock.requests == []
            assert gw.chat(endpoint, req()) == "first"


class TestConfigValidation:
    def test_bad_concurrency(self):
        with pytest.raises(ValueError):
            EndpointConfig(name="x", base_url="http://h", model_id="m", max_concurrency=0)

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            ChatRequest(system="s", user="u", temperature=3.0)

    def test_empty_user(self):
        with pytest.raises(ValueError):
            ChatRequest(system="s", user="")
