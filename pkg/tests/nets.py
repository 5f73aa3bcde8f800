"""Small hand-built networks shared by the tests."""

from __future__ import annotations

from qnet_mdi.network import from_dict


def single_server(lam: float = 0.5, mu: float = 1.0):
    return from_dict({
        "servers": [{"id": "1", "rate": mu}],
        "edges": [["S", "1"], ["1", "T"]],
        "classes": [{"id": "c", "origin": "S", "destination": "T", "lambda": lam}],
    })


def tandem(lam: float = 0.5, rates=(1.0, 1.0)):
    ids = [str(i + 1) for i in range(len(rates))]
    edges = [["S", ids[0]]] + [[a, b] for a, b in zip(ids, ids[1:])] + [[ids[-1], "T"]]
    return from_dict({
        "servers": [{"id": i, "rate": r} for i, r in zip(ids, rates)],
        "edges": edges,
        "classes": [{"id": "c", "origin": "S", "destination": "T", "lambda": lam}],
    })


def parallel(lam: float = 1.0, rates=(1.0, 2.0)):
    ids = [str(i + 1) for i in range(len(rates))]
    return from_dict({
        "servers": [{"id": i, "rate": r} for i, r in zip(ids, rates)],
        "edges": [["S", i] for i in ids] + [[i, "T"] for i in ids],
        "classes": [{"id": "c", "origin": "S", "destination": "T", "lambda": lam}],
    })
