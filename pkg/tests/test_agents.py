import json

import httpx
import pytest

from bouncebench.agents import (
    AgentConfig,
    AgentKind,
    AgentTimeout,
    BisectionAgent,
    ChatMessage,
    ExhaustedError,
    NetworkError,
    ProtocolError,
    RandomAgent,
    RemoteChatAgent,
    ReplayAgent,
    complete,
    load_replay,
)
from bouncebench.physics import Simulator
from bouncebench.pipeline import Mode, PipelineConfig, build_query, format_feedback, parse_answer, run_simlm
from bouncebench.terrain import SurfaceSpec

OK_BODY = {"choices": [{"message": {"role": "assistant", "content": "fine"}}]}
MSGS = [{"role": "system", "content": "s"}, {"role": "user", "content": "q"}]


class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def __call__(self):
        return self.now

    def sleep(self, s):
        self.sleeps.append(s)
        self.now += s


def remote(handler, clock=None, **kw):
    clock = clock or FakeClock()
    cfg = AgentConfig(AgentKind.REMOTE, model_id="m", endpoint_url="http://llm.test/v1", **kw)
    return RemoteChatAgent(cfg, transport=httpx.MockTransport(handler), sleep=clock.sleep, clock=clock), clock


# --- config -----------------------------------------------------------------


def test_remote_config_requires_endpoint_and_model():
    with pytest.raises(ValueError):
        AgentConfig(AgentKind.REMOTE, model_id="m")
    with pytest.raises(ValueError):
        AgentConfig(AgentKind.REMOTE, endpoint_url="http://x")


def test_scripted_config_requires_seed():
    with pytest.raises(ValueError):
        AgentConfig(AgentKind.RANDOM, seed=None)


def test_chat_message_validation():
    with pytest.raises(ValueError):
        ChatMessage("user", "")
    with pytest.raises(ValueError):
        ChatMessage("tool", "x")


def test_last_message_must_be_user():
    agent = BisectionAgent(AgentConfig(seed=0))
    with pytest.raises(ValueError):
        agent.complete([{"role": "assistant", "content": "x"}])
    with pytest.raises(ValueError):
        agent.complete([])


# --- remote -----------------------------------------------------------------


def test_remote_wire_format(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekrit")
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=OK_BODY)

    agent, _ = remote(handler, api_key_env="TEST_KEY", temperature=0.2, max_tokens=64)
    assert agent.complete([ChatMessage("user", "hello")]) == "fine"
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer sekrit"
    assert seen["body"] == {"model": "m", "messages": [{"role": "user", "content": "hello"}], "temperature": 0.2, "max_tokens": 64}


def test_remote_retries_5xx_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503) if len(calls) < 3 else httpx.Response(200, json=OK_BODY)

    agent, clock = remote(handler)
    assert agent.complete(MSGS) == "fine"
    assert len(calls) == 3
    assert len(clock.sleeps) == 2
    # exponential with jitter in [0.8, 1.2]
    assert 0.4 <= clock.sleeps[0] <= 0.6 and 0.8 <= clock.sleeps[1] <= 1.2


def test_remote_gives_up_with_network_error():
    agent, clock = remote(lambda r: httpx.Response(500), max_retries=2)
    with pytest.raises(NetworkError):
        agent.complete(MSGS)
    assert len(clock.sleeps) == 2


def test_remote_honours_retry_after():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            return httpx.Response(429, headers={"Retry-After": "3"})
        return httpx.Response(200, json=OK_BODY)

    agent, clock = remote(handler)
    assert agent.complete(MSGS) == "fine"
    assert clock.sleeps == [3.0]


@pytest.mark.parametrize(
    "response",
    [
        httpx.Response(200, text="not json"),
        httpx.Response(200, json={"choices": []}),
        httpx.Response(200, json={"choices": [{"message": {"content": None}}]}),
        httpx.Response(400, json={"error": "bad"}),
    ],
)
def test_remote_protocol_errors(response):
    agent, _ = remote(lambda r: response)
    with pytest.raises(ProtocolError):
        agent.complete(MSGS)


def test_remote_timeout_is_bounded():
    clock = FakeClock()

    def handler(request):
        # each request burns its whole per-request timeout, as a stalled server would
        clock.now += request.extensions["timeout"]["read"]
        raise httpx.ReadTimeout("slow", request=request)

    agent, _ = remote(handler, clock=clock, timeout=10.0, max_retries=3)
    with pytest.raises(AgentTimeout) as info:
        agent.complete(MSGS)
    assert isinstance(info.value, TimeoutError)
    assert clock.now <= 10.0 * 4 + 1e-9


def test_remote_transport_error():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    agent, _ = remote(handler, max_retries=1)
    with pytest.raises(NetworkError):
        agent.complete(MSGS)


def test_backoff_never_exceeds_deadline():
    clock = FakeClock()

    def handler(request):
        clock.now += 0.9
        return httpx.Response(429, headers={"Retry-After": "100"})

    agent, _ = remote(handler, clock=clock, timeout=1.0, max_retries=3)
    with pytest.raises(NetworkError):
        agent.complete(MSGS)
    assert clock.now <= 4.0 + 1e-9


# --- scripted ---------------------------------------------------------------


def flat_task(target=50.0):
    q = build_query(SurfaceSpec.flat().describe(), target, 1.0)
    return [{"role": "system", "content": "s"}, {"role": "user", "content": q}]


def test_bisection_opener():
    reply = BisectionAgent(AgentConfig(seed=0)).complete(flat_task())
    assert parse_answer(reply) == (5.0, 15.0)


def test_bisection_raises_velocity_after_short_miss():
    from bouncebench.pipeline import Attempt

    msgs = flat_task()
    first = '{"height": 5.0, "horizontal_velocity": 10.0}'
    fb = format_feedback(Attempt(5.0, 10.0, 39.7, 10.3, bounces=[10.1, 26.45, 39.7]), 50.0)
    msgs += [{"role": "assistant", "content": first}, {"role": "user", "content": fb}]
    h, v = parse_answer(BisectionAgent(AgentConfig(seed=0)).complete(msgs))
    assert h == 5.0 and v > 10.0


@pytest.mark.parametrize("target", [20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 23.7, 77.3])
def test_bisection_converges_on_flat_ground(target):
    sim = Simulator.for_surface(SurfaceSpec.flat())
    agent = BisectionAgent(AgentConfig(seed=0))
    q = build_query(SurfaceSpec.flat().describe(), target, 1.0)
    ep = run_simlm(q, agent, [], sim, PipelineConfig(Mode.SIMLM, 0, target=target))
    assert ep.success
    assert ep.final_error <= 1.0
    assert len(ep.attempts) <= 5


def test_scripted_agents_are_pure():
    msgs = flat_task()
    for kind in (AgentKind.BISECTION, AgentKind.RANDOM):
        cfg = AgentConfig(kind, seed=11)
        assert complete(cfg, msgs) == complete(cfg, msgs)


def test_random_agent_range_and_seed():
    msgs = flat_task()
    a = RandomAgent(AgentConfig(AgentKind.RANDOM, seed=1))
    b = RandomAgent(AgentConfig(AgentKind.RANDOM, seed=2))
    h, v = parse_answer(a.complete(msgs))
    assert 1.0 <= h <= 20.0 and 1.0 <= v <= 30.0
    assert a.complete(msgs) != b.complete(msgs)


def test_replay_agent_exhausts():
    agent = ReplayAgent(AgentConfig(AgentKind.REPLAY, replay=["one", "two"]))
    msgs = [{"role": "user", "content": "q"}]
    assert agent.complete(msgs) == "one"
    msgs += [{"role": "assistant", "content": "one"}, {"role": "user", "content": "fb"}]
    assert agent.complete(msgs) == "two"
    msgs += [{"role": "assistant", "content": "two"}, {"role": "user", "content": "fb"}]
    with pytest.raises(ExhaustedError):
        agent.complete(msgs)


def test_load_replay_formats(tmp_path):
    p = tmp_path / "r.json"
    p.write_text(json.dumps(["a", "b"]))
    assert load_replay(p) == ("a", "b")
    p.write_text('"a"\n"b"\n')
    assert load_replay(p) == ("a", "b")
    p.write_text(json.dumps({"a": 1}))
    with pytest.raises(ValueError):
        load_replay(p)


def test_in_flight_cap():
    import threading
    import time

    active, peak, lock = [0], [0], threading.Lock()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.02)
        with lock:
            active[0] -= 1
        return httpx.Response(200, json=OK_BODY)

    cfg = AgentConfig(AgentKind.REMOTE, model_id="m", endpoint_url="http://cap.test", max_in_flight=2)
    agents = [RemoteChatAgent(cfg, transport=httpx.MockTransport(handler)) for _ in range(8)]
    threads = [threading.Thread(target=a.complete, args=(MSGS,)) for a in agents]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] == 2
