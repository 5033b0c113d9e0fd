"""Dialogue navigation toolkit: environments, episodes, navigation with
entropy-triggered questions, evaluation metrics and human-oracle sessions.

Structured values (episodes, configs, reports, views) are plain dicts.
"""

import json as _json

from . import _vdn
from ._vdn import (
    NavGraph,
    SESSION_VIEW_SCHEMA,
    bce_loss_and_gradient,
    bleu,
    generate_environment,
    load_environments,
    ndtw,
    rouge_l,
    save_environments,
    spl,
    tokenize,
    train_threshold,
    trigger_probability,
)


# Library error; args are (kind, message), kind being a stable name such as
# "SessionNotFound".
VdnError = _vdn.VdnError


def error_kind(exc):
    """The library error kind carried by an exception raised from the extension."""
    return exc.args[0] if exc.args else None


def synthesize_dataset(environments, count, seed):
    return [_json.loads(e) for e in _vdn.synthesize_dataset(environments, count, seed)]


def split_ndh(episodes, environments, supervision="planner"):
    docs = [_json.dumps(e) for e in episodes]
    return [_json.loads(i) for i in _vdn.split_ndh(docs, environments, supervision)]


def inter_turn_distances(episodes):
    return _vdn.inter_turn_distances([_json.dumps(e) for e in episodes])


def evaluate_text(candidates, references):
    """BLEU-1..4, ROUGE-L and CIDEr over parallel lists of strings."""
    return _json.loads(_vdn.evaluate_text([tokenize(c) for c in candidates], [tokenize(r) for r in references]))


def run_experiment(config, episodes, environments):
    """Runs ``episodes`` under a run-config dict; returns (report, logs)."""
    report, logs = _vdn.run_experiment(_json.dumps(config), [_json.dumps(e) for e in episodes], environments)
    return _json.loads(report), [_json.loads(l) for l in logs]


def train_pipeline(config):
    """Trains dialogue model, navigator and ask threshold; returns artifact paths."""
    return _json.loads(_vdn.train_pipeline(_json.dumps(config)))


class SessionManager:
    """Human-oracle sessions over a fixed set of environments and episodes."""

    def __init__(self, environments, episodes, config, idle_timeout_s=1800):
        self._impl = _vdn.SessionManager(
            environments, [_json.dumps(e) for e in episodes], _json.dumps(config), idle_timeout_s
        )

    def create(self, **request):
        return _json.loads(self._impl.create(_json.dumps(request)))

    def view(self, session_id):
        return _json.loads(self._impl.view(session_id))

    def answer(self, session_id, answer, question_id=None):
        body = {"answer": answer}
        if question_id is not None:
            body["question_id"] = question_id
        return _json.loads(self._impl.answer(session_id, _json.dumps(body)))

    def remove(self, session_id):
        self._impl.remove(session_id)

    def serve(self, host="127.0.0.1", port=0):
        """Starts the HTTP server on a background thread; call ``stop()`` on the result."""
        return _vdn.SessionServer(self._impl, host, port)

    def __len__(self):
        return len(self._impl)


__all__ = [
    "NavGraph",
    "SESSION_VIEW_SCHEMA",
    "SessionManager",
    "VdnError",
    "bce_loss_and_gradient",
    "bleu",
    "error_kind",
    "evaluate_text",
    "generate_environment",
    "inter_turn_distances",
    "load_environments",
    "ndtw",
    "rouge_l",
    "run_experiment",
    "save_environments",
    "spl",
    "split_ndh",
    "synthesize_dataset",
    "tokenize",
    "train_pipeline",
    "train_threshold",
    "trigger_probability",
]
