"""Flat token-slot serialization of a scene graph, token budgets and the
chat prompt layout.

Triplet layout, per object ``i`` in ascending id order::

    <OBJi>  F2d_i  (Fv_i Fe_ij1 Fv_j1)  (Fv_i Fe_ij2 Fv_j2) ...

Edge-only layout drops the repeated node slots::

    <OBJi>  F2d_i  Fv_i  Fe_ij1  Fe_ij2 ...
"""

import json
from dataclasses import dataclass, field

import numpy as np

IDENTIFIER = "identifier"
FEATURE2D = "feature2d"
NODE = "node"
EDGE = "edge"
SLOT_KINDS = (IDENTIFIER, FEATURE2D, NODE, EDGE)

TRIPLET = "triplet"
EDGE_ONLY = "edge_only"
LAYOUTS = (TRIPLET, EDGE_ONLY)

SYSTEM_PREAMBLE = (
    "A chat between a curious user and an artificial intelligence assistant. "
    "The assistant gives helpful, detailed, and polite answers to the user's questions. "
    "The conversation centers around an indoor scene:"
)


def object_token(i):
    return f"<OBJ{int(i):03d}>"


@dataclass(frozen=True)
class TokenSlot:
    kind: str
    object_ref: object  # int, or (src, dst) for edge slots
    position: int

    @property
    def owner(self):
        """Object whose description this slot belongs to."""
        return self.object_ref[0] if self.kind == EDGE else self.object_ref

    def to_dict(self):
        ref = list(self.object_ref) if self.kind == EDGE else self.object_ref
        return {"position": self.position, "kind": self.kind, "object_ref": ref}

    @classmethod
    def from_dict(cls, d):
        ref = tuple(d["object_ref"]) if d["kind"] == EDGE else int(d["object_ref"])
        return cls(d["kind"], ref, int(d["position"]))


@dataclass(frozen=True, eq=False)
class FlatSequence:
    slots: tuple
    layout: str
    embeddings: np.ndarray | None = None
    # Owner object of each slot's description segment, parallel to ``slots``.
    segments: tuple = field(default=())

    def __len__(self):
        return len(self.slots)

    def with_embeddings(self, emb):
        emb = np.asarray(emb)
        if emb.shape[0] != len(self.slots):
            raise ValueError(f"{emb.shape[0]} embedding rows for {len(self.slots)} slots")
        return FlatSequence(self.slots, self.layout, emb, self.segments)

    def object_ids(self):
        return [s.object_ref for s in self.slots if s.kind == IDENTIFIER]

    def to_dict(self):
        return {"layout": self.layout, "length": len(self.slots),
                "slots": [s.to_dict() for s in self.slots]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d):
        slots = tuple(TokenSlot.from_dict(s) for s in d["slots"])
        return cls(slots, d["layout"], None, _segments_of(slots))


def _segments_of(slots):
    owners = []
    current = None
    for s in slots:
        if s.kind == IDENTIFIER:
            current = s.object_ref
        owners.append(current)
    return tuple(owners)


def _flatten(graph, layout):
    slots = []

    def add(kind, ref):
        slots.append(TokenSlot(kind, ref, len(slots)))

    for i in sorted(graph.surviving_ids):
        add(IDENTIFIER, i)
        add(FEATURE2D, i)
        nbrs = graph.neighbor_lists.get(i, [])
        if layout == TRIPLET:
            for j in nbrs:
                add(NODE, i)
                add(EDGE, (i, j))
                add(NODE, j)
        else:
            add(NODE, i)
            for j in nbrs:
                add(EDGE, (i, j))
    slots = tuple(slots)
    return FlatSequence(slots, layout, None, _segments_of(slots))


def flatten_triplet(graph):
    return _flatten(graph, TRIPLET)


def flatten_edge_only(graph):
    return _flatten(graph, EDGE_ONLY)


def flatten(graph, layout=TRIPLET):
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    return _flatten(graph, layout)


def token_budget(n, k):
    """Slot count of the k-NN triplet layout when every object has k neighbors."""
    return 2 * n + 3 * n * k


def token_budget_full(n):
    """Slot count of the triplet layout over the complete graph."""
    return 2 * n + 3 * n * (n - 1) if n > 0 else 0


# -- prompt ---------------------------------------------------------------------

SYSTEM, USER, ASSISTANT = "system", "user", "assistant"


@dataclass(frozen=True)
class Span:
    role: str
    text: str | None = None
    sequence: tuple | None = None  # (start, stop) slot range

    def to_dict(self):
        d = {"role": self.role}
        if self.sequence is not None:
            d["sequence"] = list(self.sequence)
        else:
            d["text"] = self.text
        return d

    @classmethod
    def from_dict(cls, d):
        if "sequence" in d:
            return cls(d["role"], None, tuple(d["sequence"]))
        return cls(d["role"], d["text"])


@dataclass(frozen=True)
class PromptLayout:
    spans: tuple

    def role_spans(self, role):
        return [s for s in self.spans if s.role == role]

    def role_text(self, role):
        return "".join(s.text for s in self.role_spans(role) if s.text is not None)

    def sequence_span(self):
        (span,) = [s for s in self.spans if s.sequence is not None]
        return span

    def to_dict(self):
        return {"roles": [SYSTEM, USER, ASSISTANT], "spans": [s.to_dict() for s in self.spans]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Span.from_dict(s) for s in d["spans"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def render(self, seq):
        """Readable text with placeholders standing in for embedding slots."""
        names = {FEATURE2D: "F2d_{}", NODE: "Fv_{}"}
        out = []
        for span in self.spans:
            if span.sequence is None:
                out.append(span.text if span.role == SYSTEM else f"\n{span.role.capitalize()}: {span.text}")
                continue
            parts = []
            for s in seq.slots[span.sequence[0]:span.sequence[1]]:
                if s.kind == IDENTIFIER:
                    parts.append(object_token(s.object_ref))
                elif s.kind == EDGE:
                    parts.append("Fe_{}_{}".format(*s.object_ref))
                else:
                    parts.append(names[s.kind].format(s.object_ref))
            out.append(" ".join(parts))
        return "".join(out)


def assemble_prompt(seq, user_query, assistant_target=None):
    """System preamble + bracketed scene sequence, then the user query and
    (for training) the assistant target."""
    answer = ""
    if assistant_target is not None:
        answer = assistant_target if assistant_target.endswith(".") else assistant_target + "."
    return PromptLayout((
        Span(SYSTEM, SYSTEM_PREAMBLE + "["),
        Span(SYSTEM, None, (0, len(seq))),
        Span(SYSTEM, "]"),
        Span(USER, user_query),
        Span(ASSISTANT, answer),
    ))
