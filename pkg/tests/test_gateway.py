import json

import httpx
import pytest

from consensus_dx.gateway import (
    API_KEY_ENV,
    AuthenticationError,
    CompletionRequest,
    ConfuserMode,
    Gateway,
    GatewayError,
    HttpProvider,
    RateLimiter,
    ReplayMissError,
    ReplayProvider,
    ResponseCache,
    RetryPolicy,
    SyntheticProvider,
    SyntheticVoterModel,
    TransientError,
    UpstreamExhaustedError,
    cache_key,
    synth_answer,
)


def request(**overrides):
    fields = dict(model_name="m", prompt="hello", temperature=0.5, top_p=0.9, max_output_tokens=64)
    fields.update(overrides)
    return CompletionRequest(**fields)


class CountingProvider:
    kind = "fake"

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def complete(self, req):
        self.calls += 1
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def test_cache_key_canonicalizes_numbers():
    assert cache_key(request(temperature=0.5)) == cache_key(request(temperature=0.50))
    assert cache_key(request(temperature=0.5)) == cache_key(CompletionRequest.from_dict(
        json.loads('{"top_p": 0.9, "prompt": "hello", "model_name": "m", "max_output_tokens": 64, "temperature": 5e-1}')
    ))


def test_cache_key_ignores_metadata_but_not_prompt():
    assert cache_key(request(metadata={"turn_id": 1})) == cache_key(request(metadata={"turn_id": 2}))
    assert cache_key(request(prompt="a")) != cache_key(request(prompt="b"))
    assert cache_key(request(top_p=0.5)) != cache_key(request())


@pytest.mark.parametrize("bad", [dict(temperature=-0.1), dict(temperature=1.1), dict(top_p=0.0), dict(prompt="")])
def test_request_validation(bad):
    with pytest.raises(ValueError):
        request(**bad)


def test_cache_idempotence(tmp_path):
    provider = CountingProvider(["first", "second"])
    gw = Gateway(provider, ResponseCache(tmp_path))
    a = gw.complete(request())
    b = gw.complete(request())
    assert a.text == b.text == "first"
    assert (a.cached, b.cached) == (False, True)
    assert provider.calls == 1 and gw.cache_hits == 1
    stored = json.loads((tmp_path / f"{cache_key(request())}.json").read_text())
    assert set(stored) == {"request", "response_text", "created_at"}
    assert not list(tmp_path.glob(".tmp-*"))


def test_replay_miss_names_digest(tmp_path):
    gw = Gateway(ReplayProvider(tmp_path))
    with pytest.raises(ReplayMissError) as info:
        gw.complete(request())
    assert cache_key(request()) in str(info.value)


def test_replay_serves_recorded(tmp_path):
    ResponseCache(tmp_path).put(request(), "recorded")
    assert Gateway(ReplayProvider(tmp_path)).complete(request()).text == "recorded"


def test_retry_then_success():
    sleeps = []
    provider = CountingProvider([TransientError("429"), TransientError("503"), "ok"])
    gw = Gateway(provider, retry=RetryPolicy(jitter=False), sleep=sleeps.append)
    assert gw.complete(request()).text == "ok"
    assert sleeps == [0.5, 1.0]
    assert gw.upstream_calls == 3


def test_retry_exhaustion():
    sleeps = []
    provider = CountingProvider([TransientError("503")] * 5)
    gw = Gateway(provider, retry=RetryPolicy(jitter=False), sleep=sleeps.append)
    with pytest.raises(UpstreamExhaustedError):
        gw.complete(request())
    assert provider.calls == 5
    assert sleeps == [0.5, 1.0, 2.0, 4.0]


def test_non_transient_errors_are_not_retried():
    provider = CountingProvider([AuthenticationError("no")])
    with pytest.raises(AuthenticationError):
        Gateway(provider, sleep=lambda s: None).complete(request())
    assert provider.calls == 1


def test_jittered_delay_bounds():
    policy = RetryPolicy()
    for attempt in range(1, 6):
        nominal = 0.5 * 2 ** (attempt - 1)
        assert nominal / 2 <= policy.delay(attempt) <= nominal


def test_missing_api_key(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    provider = HttpProvider("http://example.invalid", client=httpx.Client(transport=httpx.MockTransport(lambda r: None)))
    with pytest.raises(AuthenticationError, match=API_KEY_ENV):
        provider.complete(request())


def test_http_wire_format(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "secret")
    seen = {}

    def handler(req):
        seen["url"] = str(req.url)
        seen["auth"] = req.headers["authorization"]
        seen["body"] = json.loads(req.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "Hypertension"}}]})

    provider = HttpProvider("http://api.test/v1/", client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert provider.complete(request(metadata={"turn_id": 3})) == "Hypertension"
    assert seen["url"] == "http://api.test/v1/chat/completions"
    assert seen["auth"] == "Bearer secret"
    assert seen["body"] == {
        "model": "m",
        "messages": [{"role": "user", "content": "hello"}],
        "temperature": 0.5,
        "top_p": 0.9,
        "max_tokens": 64,
    }


@pytest.mark.parametrize("status, error", [(429, TransientError), (503, TransientError), (401, AuthenticationError), (400, GatewayError)])
def test_http_status_mapping(monkeypatch, status, error):
    monkeypatch.setenv(API_KEY_ENV, "k")
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(status, text="x")))
    with pytest.raises(error):
        HttpProvider("http://api.test", client=client).complete(request())


def test_rate_limiter_spaces_calls():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    limiter = RateLimiter(per_minute=60, clock=lambda: now[0], sleep=sleep)
    for _ in range(4):
        limiter.acquire()
    assert now[0] == pytest.approx(3.0)


def test_synthetic_extremes_and_determinism():
    never = SyntheticVoterModel.uniform(range(1, 4), 0.0)
    always = SyntheticVoterModel.uniform(range(1, 4), 1.0)
    distinct = SyntheticVoterModel.uniform(range(1, 4), 0.0, confuser_mode=ConfuserMode.DISTINCT)
    key = ("n1", "Enalapril")
    assert synth_answer(never, 2, key, "hypertension") == "WRONG"
    assert synth_answer(distinct, 2, key, "hypertension") == "WRONG-2"
    assert synth_answer(always, 2, key, "hypertension") == "hypertension"
    half = SyntheticVoterModel.uniform(range(1, 4), 0.5, seed=11)
    answers = [synth_answer(half, 1, ("n", str(i)), "t") for i in range(200)]
    assert answers == [synth_answer(half, 1, ("n", str(i)), "t") for i in range(200)]
    assert 60 < answers.count("t") < 140


def test_synthetic_provider_uses_metadata():
    model = SyntheticVoterModel.uniform([1], 1.0)
    provider = SyntheticProvider(model, {("n1", "A"): "anemia"}, {"n1": "First. Second sentence."})
    req = request(metadata={"task": "predict", "turn_id": 1, "note_id": "n1", "medication": "A"})
    assert Gateway(provider).complete(req).text == "anemia"
    with pytest.raises(GatewayError):
        provider.complete(request())
