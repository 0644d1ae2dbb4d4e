"""Shared protocol-session builders and the acceptance summary hook."""

import numpy as np

from pqbfl import fl, protocol
from pqbfl.crypto import DeterministicRng
from pqbfl.ledger import Ledger, LedgerConfig, SimClock
from pqbfl.protocol import Participant, Server, SignedEnvelope
from pqbfl.ratchet import RatchetConfig

CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)


def rewire(env: SignedEnvelope) -> SignedEnvelope:
    """Force a wire round-trip so handlers see exactly what was sent."""
    return SignedEnvelope.decode(env.encode())


def establish(
    n=1, rounds=4, length=2, seed=b"proto-test", dim=8,
    server_log=None, participant_logs=None, deadline_window=600, capacity=None,
):
    """Registered project with all sessions established; returns the actors."""
    clock = SimClock()
    ledger = Ledger(LedgerConfig(), clock)
    cfg = RatchetConfig(length)
    rng = DeterministicRng(seed)
    server = Server(
        rng.fork("server"), ledger, clock, project_id=1,
        capacity=capacity if capacity is not None else n,
        rounds_planned=rounds, config=cfg, deadline_window=deadline_window,
        key_log=server_log,
    )
    model = fl.ModelVector(np.zeros(dim), 0)
    server.bootstrap(model)
    participants = []
    for i in range(n):
        log = participant_logs[i] if participant_logs is not None else None
        p = Participant(rng.fork(f"part-{i}"), ledger, clock, cfg, key_log=log)
        p.join(1)
        participants.append(p)
    server.admit_clients()
    for p in participants:
        response = p.handle_keys(rewire(server.send_keys(p.address)))
        server.handle_key_response(rewire(response))
    return server, participants, ledger, clock, model


def run_round(server, participants, clock, model, train_seed=77):
    """One full honest round; returns the aggregated next global model."""
    clock.advance(60)
    _, envelopes = server.publish_round(model)
    collected = []
    for p in participants:
        got = p.handle_task(rewire(envelopes[p.address]))
        local = fl.local_train(got, train_seed, 0.01, got.round + 1)
        update = p.send_update(local)
        _, received = server.handle_update(rewire(update))
        collected.append(received)
    new_global = fl.aggregate(collected)
    for p in participants:
        server.feedback(p.address, 1, 1 if server.round == server.rounds_planned else 0, new_global)
    return new_global
