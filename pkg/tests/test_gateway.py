import threading
import time

import pytest

from adsynth.gateway import (
    CompletionRequest,
    ConfigurationError,
    Gateway,
    GatewayConfig,
    ProviderError,
    ProviderReply,
    ReplayMiss,
    RetriesExhausted,
    Timeout,
    TranscriptStore,
    TransientProviderError,
    transcript_key,
)


def req(prompt="hello", tag="t1", temperature=0.0, max_tokens=64):
    return CompletionRequest(
        prompt=prompt, model_id="m", max_output_tokens=max_tokens, temperature=temperature, request_tag=tag
    )


# --- transcript keys ----------------------------------------------------------


def test_key_stable_for_equal_requests():
    assert transcript_key(req()) == transcript_key(req())


def test_key_changes_with_temperature_and_prompt():
    assert transcript_key(req(temperature=0.0)) != transcript_key(req(temperature=0.7))
    assert transcript_key(req(prompt="a")) != transcript_key(req(prompt="b"))
    assert transcript_key(req(max_tokens=64)) != transcript_key(req(max_tokens=65))


def test_key_ignores_request_tag():
    assert transcript_key(req(tag="a")) == transcript_key(req(tag="b"))


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest(prompt="", model_id="m", max_output_tokens=1)
    with pytest.raises(ValueError):
        CompletionRequest(prompt="x", model_id="m", max_output_tokens=0)
    with pytest.raises(ValueError):
        CompletionRequest(prompt="x", model_id="m", max_output_tokens=1, temperature=-1)


# --- replay -------------------------------------------------------------------


def test_replay_hit(tmp_path):
    store = TranscriptStore(tmp_path)
    request = req()
    store.put(transcript_key(request), request, "recorded text", truncated=False)
    gateway = Gateway(GatewayConfig(mode="replay", transcript_dir=tmp_path))
    response = gateway.complete(request)
    assert response.text == "recorded text"
    assert response.attempts == 1


def test_replay_miss(tmp_path):
    gateway = Gateway(GatewayConfig(mode="replay", transcript_dir=tmp_path))
    with pytest.raises(ReplayMiss):
        gateway.complete(req())


def test_replay_requires_store():
    with pytest.raises(ConfigurationError):
        Gateway(GatewayConfig(mode="replay", transcript_dir=None))


def test_replay_never_calls_provider(tmp_path):
    calls = []

    def provider(request):
        calls.append(request)
        return "live"

    store = TranscriptStore(tmp_path)
    request = req()
    store.put(transcript_key(request), request, "stored", truncated=False)
    gateway = Gateway(GatewayConfig(mode="replay", transcript_dir=tmp_path), provider=provider)
    assert gateway.complete(request).text == "stored"
    assert calls == []


# --- retries ------------------------------------------------------------------


class Flaky:
    def __init__(self, failures, error=TransientProviderError):
        self.failures = failures
        self.error = error
        self.calls = 0

    def __call__(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.error(f"boom {self.calls}")
        return ProviderReply(text="ok")


def test_fail_twice_then_succeed():
    provider = Flaky(failures=2)
    gateway = Gateway(GatewayConfig(mode="live", retry_limit=3, backoff=()), provider=provider)
    response = gateway.complete(req())
    assert response.text == "ok"
    assert response.attempts == 3
    assert response.attempts <= 3 + 1


def test_retries_exhausted():
    gateway = Gateway(GatewayConfig(mode="live", retry_limit=1, backoff=()), provider=Flaky(99))
    with pytest.raises(RetriesExhausted):
        gateway.complete(req())


def test_non_transient_not_retried():
    provider = Flaky(99, error=ProviderError)
    gateway = Gateway(GatewayConfig(mode="live", retry_limit=5, backoff=()), provider=provider)
    with pytest.raises(ProviderError):
        gateway.complete(req())
    assert provider.calls == 1


def test_timeout_surfaces_as_timeout():
    gateway = Gateway(GatewayConfig(mode="live", retry_limit=1, backoff=()), provider=Flaky(99, error=Timeout))
    with pytest.raises(Timeout):
        gateway.complete(req())


def test_backoff_schedule_used():
    sleeps = []
    provider = Flaky(failures=3)
    gateway = Gateway(GatewayConfig(mode="live", retry_limit=3, backoff=(0.01, 0.02)), provider=provider)
    gateway._sleep = sleeps.append
    gateway.complete(req())
    assert sleeps == [0.01, 0.02, 0.02]


def test_live_requires_provider():
    with pytest.raises(ConfigurationError):
        Gateway(GatewayConfig(mode="live"))


# --- record -------------------------------------------------------------------


def test_record_persists_and_replays(tmp_path):
    gateway = Gateway(
        GatewayConfig(mode="record", transcript_dir=tmp_path, retry_limit=0, backoff=()),
        provider=lambda request: "live answer",
    )
    request = req()
    assert gateway.complete(request).text == "live answer"
    replayer = Gateway(GatewayConfig(mode="replay", transcript_dir=tmp_path))
    assert replayer.complete(request).text == "live answer"
    stored = TranscriptStore(tmp_path).get(transcript_key(request))
    assert stored["request"]["prompt"] == "hello"
    assert stored["response"]["text"] == "live answer"


# --- in-flight bound ----------------------------------------------------------


def test_max_in_flight_bound():
    lock = threading.Lock()
    state = {"active": 0, "peak": 0}

    def provider(request):
        with lock:
            state["active"] += 1
            state["peak"] = max(state["peak"], state["active"])
        time.sleep(0.01)
        with lock:
            state["active"] -= 1
        return "done"

    gateway = Gateway(GatewayConfig(mode="live", max_in_flight=2, retry_limit=0, backoff=()), provider=provider)
    threads = [threading.Thread(target=gateway.complete, args=(req(tag=f"t{i}"),)) for i in range(8)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    assert state["peak"] <= 2
