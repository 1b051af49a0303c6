"""
Querying the edge decision service
==================================

Start a decision server on a loopback port, ask it for actions over the
newline-delimited JSON protocol and measure round-trip latency.
"""

import tempfile
from pathlib import Path

import numpy as np

from mergerl.edge import DecisionClient, DecisionError, DecisionRequest, serve
from mergerl.neural import forward, init_network, load_weights, save_weights

# Any weight file works; a freshly initialized network keeps the demo self-contained.
path = Path(tempfile.mkdtemp()) / "demo.mrw"
save_weights(init_network(seed=0), path)
server = serve(path, "127.0.0.1:0")
print("serving on", server.address)

w = load_weights(path)
with DecisionClient(server.address) as client:
    resp, rtt = client.request(DecisionRequest(id=1, obs=[0.8]))
    print(f"action {resp.action}, server {resp.t_us} us, round trip {rtt} us")
    # the server computes exactly what the in-process network does
    assert resp.q == forward(w, [0.8]).tolist()

    # errors come back as structured replies and the connection stays usable
    try:
        client.request(DecisionRequest(id=2, obs=[0.8, 0.1]))
    except DecisionError as err:
        print("error reply:", err.code, err.msg)

    rtts = [client.request(DecisionRequest(i, [float(x)]))[1] for i, x in enumerate(np.linspace(0, 1, 2000))]
    print(f"2000 requests: median {np.median(rtts):.0f} us, p99 {np.percentile(rtts, 99):.0f} us")

# Boltzmann requests draw from a per-connection generator; a seed handshake
# makes the sequence reproducible.
for _ in range(2):
    with DecisionClient(server.address, seed=7) as client:
        print([client.request(DecisionRequest(i, [0.5], "boltzmann", 0.05))[0].action for i in range(10)])

# an artificial delay simulates a relay hop between vehicle and server
slow = serve(path, "127.0.0.1:0", delay_ms=5.0, jitter_ms=2.0)
with DecisionClient(slow.address) as client:
    print("with relay delay:", client.request(DecisionRequest(1, [0.5]))[1], "us")

for s in (server, slow):
    s.shutdown()
    s.server_close()
