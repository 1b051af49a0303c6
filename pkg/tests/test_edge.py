import json
import socket
import threading

import numpy as np
import pytest

from mergerl.agent import boltzmann_probs
from mergerl.edge import (
    BAD_REQUEST,
    VERSION_MISMATCH,
    WIDTH_MISMATCH,
    DecisionClient,
    DecisionError,
    DecisionRequest,
    parse_address,
    request_decision,
    serve,
)
from mergerl.neural import forward, init_network, load_weights, save_weights, zero_network


@pytest.fixture
def weights_file(tmp_path):
    path = tmp_path / "w.mrw"
    save_weights(init_network(seed=21), path)
    return path


@pytest.fixture
def server(weights_file):
    srv = serve(weights_file, "127.0.0.1:0", seed=99)
    yield srv
    srv.shutdown()
    srv.server_close()


def test_zero_model_answers_action_zero(tmp_path):
    path = tmp_path / "z.mrw"
    save_weights(zero_network(), path)
    srv = serve(path, "127.0.0.1:0")
    try:
        resp, rtt = request_decision(srv.address, DecisionRequest(1, [0.4]))
        assert resp.action == 0 and resp.q == [0.0] * 12 and rtt > 0
    finally:
        srv.shutdown()
        srv.server_close()


def test_greedy_matches_in_process_inference(server, weights_file):
    w = load_weights(weights_file)
    rng = np.random.default_rng(0)
    with DecisionClient(server.address) as client:
        for i in range(200):
            x = [float(rng.random())]
            resp, _ = client.request(DecisionRequest(i, x))
            q = forward(w, x)
            assert resp.q == q.tolist()
            assert resp.action == int(np.argmax(q))
            assert resp.id == i and resp.v == 1 and resp.t_us >= 0


def test_id_is_echoed(server):
    resp, _ = request_decision(server.address, DecisionRequest(7, [0.5]))
    assert resp.id == 7


def test_wrong_width_names_expected_width(server):
    with pytest.raises(DecisionError) as err:
        request_decision(server.address, DecisionRequest(3, [0.1, 0.2]))
    assert err.value.code == WIDTH_MISMATCH and "expected width 1" in err.value.msg
    assert err.value.request_id == 3


def test_errors_keep_connection_open(server):
    with DecisionClient(server.address) as client:
        bad = client.send_raw(b"{not json\n")
        assert bad["v"] == 1 and bad["error"]["code"] == BAD_REQUEST and bad["error"]["msg"]
        assert client.send_raw(b'{"v":2,"id":4,"obs":[0.1]}\n')["error"]["code"] == VERSION_MISMATCH
        assert client.send_raw(b'{"v":1,"id":"x","obs":[0.1]}\n')["error"]["code"] == BAD_REQUEST
        assert client.send_raw(b'{"v":1,"id":5,"obs":["a"]}\n')["error"]["code"] == BAD_REQUEST
        assert client.send_raw(b'{"v":1,"id":6,"obs":[0.1],"mode":"psychic"}\n')["error"]["code"] == BAD_REQUEST
        assert client.send_raw(b'{"v":1,"id":8,"obs":[0.1],"mode":"boltzmann","tau":0}\n')["error"]["code"] == BAD_REQUEST
        assert client.send_raw(b'[1,2]\n')["error"]["code"] == BAD_REQUEST
        resp, _ = client.request(DecisionRequest(9, [0.3]))
        assert resp.id == 9
    assert server.errors == 7 and server.served == 1


def test_concurrent_clients_get_identical_answers(server):
    results = {}

    def worker(k):
        with DecisionClient(server.address) as client:
            results[k] = [client.request(DecisionRequest(1000 * k + i, [i / 50]))[0] for i in range(50)]

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k in range(8):
        assert [r.id for r in results[k]] == [1000 * k + i for i in range(50)]
        assert [(r.action, r.q) for r in results[k]] == [(r.action, r.q) for r in results[0]]
    assert server.served == 400


def test_boltzmann_mode_is_reproducible_per_connection_seed(server, weights_file):
    def draws(seed):
        with DecisionClient(server.address, seed=seed) as client:
            return [client.request(DecisionRequest(i, [0.5], "boltzmann", 0.05))[0].action for i in range(300)]

    a, b, c = draws(1), draws(1), draws(2)
    assert a == b and a != c
    q = forward(load_weights(weights_file), [0.5])
    p = boltzmann_probs(q, 0.05)
    freq = np.bincount(a, minlength=12) / 300
    assert np.abs(freq - p).max() < 0.1


def test_artificial_delay(weights_file):
    srv = serve(weights_file, "127.0.0.1:0", delay_ms=20.0, jitter_ms=5.0)
    try:
        _, rtt = request_decision(srv.address, DecisionRequest(1, [0.5]))
        assert rtt >= 20_000
    finally:
        srv.shutdown()
        srv.server_close()


def test_client_timeout_and_refused():
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen()
    addr = listener.getsockname()
    try:
        # accepted by the kernel but never answered
        with pytest.raises(TimeoutError):
            request_decision(addr, DecisionRequest(1, [0.5]), timeout=0.2)
    finally:
        listener.close()
    with pytest.raises(ConnectionRefusedError):
        request_decision(addr, DecisionRequest(1, [0.5]))


def test_client_rejects_version_mismatch():
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen()

    def fake():
        conn, _ = listener.accept()
        conn.recv(1024)
        conn.sendall(json.dumps({"v": 2, "id": 1, "action": 0, "q": [], "t_us": 0}).encode() + b"\n")
        conn.close()

    t = threading.Thread(target=fake)
    t.start()
    with pytest.raises(DecisionError) as err:
        request_decision(listener.getsockname(), DecisionRequest(1, [0.5]))
    assert err.value.code == VERSION_MISMATCH
    t.join()
    listener.close()


def test_bad_weights_file(tmp_path):
    path = tmp_path / "bad.mrw"
    path.write_bytes(b"nope")
    with pytest.raises(ValueError):
        serve(path, "127.0.0.1:0")


def test_parse_address():
    assert parse_address("10.0.0.1:80") == ("10.0.0.1", 80)
    assert parse_address(":80") == ("127.0.0.1", 80)
    with pytest.raises(ValueError):
        parse_address("localhost")
