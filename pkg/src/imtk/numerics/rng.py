"""Counter-based randomness with named streams.

Every consumer of randomness asks for a stream by tag ("init/encoder",
"train/noise", ...). Streams are Philox generators derived from the run seed
plus a hash of the tag, so adding a new consumer never perturbs existing
streams, and the full state serializes for bitwise training resume.
"""

import hashlib

import numpy as np

__all__ = ["RngState"]


def _tag_words(key):
    h = hashlib.sha256(key.encode("utf-8")).digest()
    return tuple(int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


class RngState:
    def __init__(self, seed):
        self.seed = int(seed)
        self._streams = {}

    def stream(self, *tag):
        """Return the Generator for this tag, creating it on first use."""
        key = "/".join(str(t) for t in tag)
        gen = self._streams.get(key)
        if gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_tag_words(key))
            gen = np.random.Generator(np.random.Philox(ss))
            self._streams[key] = gen
        return gen

    def get_state(self):
        return {
            "seed": self.seed,
            "streams": {k: _jsonable(g.bit_generator.state)
                        for k, g in self._streams.items()},
        }

    def set_state(self, state):
        self.seed = int(state["seed"])
        self._streams = {}
        for key, st in state["streams"].items():
            gen = self.stream(key)  # key is already the joined form
            gen.bit_generator.state = _from_jsonable(st)
