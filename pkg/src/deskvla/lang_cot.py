"""Instruction handling: task grammar, rule-based step decomposition, prompting, tokenization."""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# Closed world vocabulary shared with the simulator catalog.
OBJECT_NAMES = [
    "ball",
    "orange",
    "white bowl",
    "black bowl",
    "mug",
    "milk",
    "ketchup",
    "chocolate pudding",
    "red pot",
    "blue pot",
]
LOCATION_NAMES = ["basket", "plate", "stove", "tray"]
KIND_PLURALS = {"pot": "pots", "bowl": "bowls"}

PICK_PLACE_STEPS = ["locate {obj}", "grasp at center", "move over {loc}", "release"]

# Ordered most-specific first; compound forms must match before their prefixes.
TEMPLATES: list[tuple[str, str, dict[str, str], list[str]]] = [
    (
        "put_both_kind",
        r"put both (?P<kind>[a-z ]+?)s on the (?P<loc>[a-z ]+)",
        {"kind": "object", "loc": "location"},
        [
            "grasp first {kind}",
            "place on {loc} leaving some space",
            "grasp second {kind}",
            "place on {loc} next to first {kind}",
        ],
    ),
    (
        "stack_then_place",
        r"stack the (?P<obj>[a-z ]+?) on the (?P<obj2>[a-z ]+?) and put the (?P<obj3>[a-z ]+?) in the (?P<loc>[a-z ]+)",
        {"obj": "object", "obj2": "object", "obj3": "object", "loc": "location"},
        [
            "locate {obj}",
            "grasp at center",
            "move over {obj2}",
            "release",
            "locate {obj3}",
            "grasp at center",
            "move over {loc}",
            "release",
        ],
    ),
    (
        "place_pair_in",
        r"place both the (?P<obj>[a-z ]+?) and the (?P<obj2>[a-z ]+?) in the (?P<loc>[a-z ]+)",
        {"obj": "object", "obj2": "object", "loc": "location"},
        [
            "locate {obj}",
            "grasp at center",
            "move over {loc}",
            "release",
            "locate {obj2}",
            "grasp at center",
            "move over {loc}",
            "release",
        ],
    ),
    (
        "grab_place_in",
        r"grab the (?P<obj>[a-z ]+?) and place it in the (?P<loc>[a-z ]+)",
        {"obj": "object", "loc": "location"},
        PICK_PLACE_STEPS,
    ),
    (
        "put_on",
        r"put the (?P<obj>[a-z ]+?) on the (?P<loc>[a-z ]+)",
        {"obj": "object", "loc": "location"},
        PICK_PLACE_STEPS,
    ),
    (
        "move_into",
        r"move the (?P<obj>[a-z ]+?) into the (?P<loc>[a-z ]+)",
        {"obj": "object", "loc": "location"},
        PICK_PLACE_STEPS,
    ),
    (
        "place_on",
        r"place the (?P<obj>[a-z ]+?) on the (?P<loc>[a-z ]+)",
        {"obj": "object", "loc": "location"},
        PICK_PLACE_STEPS,
    ),
    (
        "stack_on",
        r"stack the (?P<obj>[a-z ]+?) on the (?P<obj2>[a-z ]+)",
        {"obj": "object", "obj2": "object"},
        ["locate {obj}", "grasp at center", "move over {obj2}", "release"],
    ),
]

_COMPILED = [(tid, re.compile(pat), roles, steps) for tid, pat, roles, steps in TEMPLATES]
TEMPLATE_ROLES = {tid: roles for tid, _, roles, _ in TEMPLATES}


@dataclass(frozen=True)
class Instruction:
    raw: str
    task_id: str = ""
    entities: dict = field(default_factory=dict)

    @property
    def matched(self) -> bool:
        return bool(self.task_id)


@dataclass
class CoTPlan:
    steps: list[str]
    rendered: str
    instruction: str = ""
    fallback: bool = False


def normalize_text(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip().lower().rstrip(".")).strip()


def parse_instruction(raw: str) -> Instruction:
    """Match raw text against the grammar; unmatched text keeps an empty task_id."""
    if not raw.strip():
        raise ValueError("instruction text is empty")
    norm = normalize_text(raw)
    for tid, rex, _roles, _steps in _COMPILED:
        m = rex.fullmatch(norm)
        if m:
            return Instruction(raw=raw, task_id=tid, entities=dict(m.groupdict()))
    return Instruction(raw=raw)


def decompose_rule_based(instr: Instruction | str) -> CoTPlan:
    """Expand a grammar-matched instruction into its step skeleton.

    Slot values simply substitute into the skeleton, so unseen objects or
    locations reuse the seen structure. Unmatched text falls back to a single
    step equal to the raw instruction, flagged.
    """
    if isinstance(instr, str):
        instr = parse_instruction(instr)
    if not instr.matched:
        steps = [normalize_text(instr.raw)]
        return CoTPlan(steps=steps, rendered=_render(instr.raw, steps), instruction=instr.raw, fallback=True)
    _, _, _, skeleton = next(t for t in _COMPILED if t[0] == instr.task_id)
    steps = [s.format(**instr.entities) for s in skeleton]
    return CoTPlan(steps=steps, rendered=_render(instr.raw, steps), instruction=instr.raw)


def _render(raw: str, steps: list[str]) -> str:
    return f"{normalize_text(raw)}. Steps: " + " -> ".join(steps)


# ---------------------------------------------------------------------------
# prompting and the optional external decomposition client

PROMPT_PREAMBLE = (
    "You control a robot arm with a parallel gripper working at a tabletop. "
    "Break the given task instruction into short ordered steps that each use "
    "one of: locate, grasp, move, place, release, toggle. Use only objects "
    "named in the instruction or visible in the scene."
)


def format_llm_prompt(instr: Instruction | str, examples: list[CoTPlan] | None = None) -> str:
    raw = instr.raw if isinstance(instr, Instruction) else instr
    blocks = [PROMPT_PREAMBLE, ""]
    if examples:
        blocks.append("Some examples are given below:")
        blocks.append("")
        for ex in examples:
            blocks.append(f"Task Instruction: {ex.instruction}")
            blocks.append("Steps: " + ", ".join(ex.steps) + ".")
            blocks.append("")
        blocks.append("Follow the same format for the instruction below.")
        blocks.append("")
    blocks.append(f"Task Instruction: {normalize_text(raw)}")
    blocks.append("Steps:")
    return "\n".join(blocks)


@dataclass
class LLMEndpoint:
    url: str = ""
    key: str = ""
    model: str = "default"
    timeout_s: float = 5.0

    @classmethod
    def from_env(cls) -> "LLMEndpoint":
        return cls(url=os.environ.get("CAVLA_LLM_URL", ""), key=os.environ.get("CAVLA_LLM_KEY", ""))


def parse_step_text(text: str) -> list[str]:
    """Pull an ordered step list out of free-form model output."""
    if "steps:" in text.lower():
        text = text[text.lower().rindex("steps:") + len("steps:"):]
    parts = re.split(r"->|→|\n|;", text)
    steps = []
    for p in parts:
        p = re.sub(r"^\s*\d+[.)]\s*", "", p).strip().strip(".,")
        if p:
            steps.append(p.lower())
    return steps


def _post_json(url: str, payload: dict, key: str, timeout_s: float) -> dict:
    body = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"})
    if key:
        req.add_header("Authorization", f"Bearer {key}")
    with urllib.request.urlopen(req, timeout=timeout_s) as resp:
        return json.loads(resp.read().decode("utf-8"))


def decompose_external(instr: Instruction | str, rgb: np.ndarray | None = None,
                       endpoint: LLMEndpoint | None = None,
                       examples: list[CoTPlan] | None = None) -> CoTPlan:
    """Ask a remote model for the decomposition; any failure falls back to the rules."""
    if isinstance(instr, str):
        instr = parse_instruction(instr)
    endpoint = endpoint or LLMEndpoint.from_env()
    if not endpoint.url:
        log.warning("external decomposition endpoint not configured; using rule-based plan")
        return decompose_rule_based(instr)
    payload = {"model": endpoint.model, "prompt": format_llm_prompt(instr, examples)}
    if rgb is not None:
        u8 = np.clip(np.asarray(rgb) * 255.0, 0, 255).astype(np.uint8)
        payload["image"] = base64.b64encode(u8.tobytes()).decode("ascii")
    try:
        reply = _post_json(endpoint.url, payload, endpoint.key, endpoint.timeout_s)
        steps = parse_step_text(str(reply.get("text", "")))
    except (urllib.error.URLError, OSError, ValueError, TimeoutError) as exc:
        log.warning("external decomposition failed (%s); using rule-based plan", exc)
        return decompose_rule_based(instr)
    if not steps:
        log.warning("external decomposition returned no steps; using rule-based plan")
        return decompose_rule_based(instr)
    return CoTPlan(steps=steps, rendered=_render(instr.raw, steps), instruction=instr.raw)


# ---------------------------------------------------------------------------
# tokenizer over the closed grammar vocabulary

PAD_ID = 0
UNK_ID = 1
SEP_ID = 2


@dataclass
class TokenSequence:
    ids: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self):
        return int(self.ids.shape[0])


@dataclass
class Vocabulary:
    token_to_id: dict
    tokens: list[str]

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


_GROUP_RE = re.compile(r"\(\?P<\w+>\[a-z \]\+\??\)")
_WORD_RE = re.compile(r"[a-z]+")


def build_vocabulary() -> Vocabulary:
    """Deterministic closed vocabulary from the grammar, names, and step skeletons."""
    words: set[str] = set()
    for _tid, pattern, _roles, steps in TEMPLATES:
        words.update(_WORD_RE.findall(_GROUP_RE.sub(" ", pattern)))
        for s in steps:
            words.update(_WORD_RE.findall(re.sub(r"\{\w+\}", " ", s)))
    for name in OBJECT_NAMES + LOCATION_NAMES:
        words.update(name.split())
    for kind, plural in KIND_PLURALS.items():
        words.add(kind)
        words.add(plural)
    tokens = ["<pad>", "<unk>", "<sep>"] + sorted(words)
    return Vocabulary(token_to_id={t: i for i, t in enumerate(tokens)}, tokens=tokens)


def tokenize(text: str, vocab: Vocabulary, t_max: int | None = None) -> TokenSequence:
    """Lowercase, strip punctuation, split on whitespace; unknown words map to <unk>."""
    cleaned = re.sub(r"[^a-z0-9 ]", " ", text.lower())
    words = cleaned.split()
    if not words:
        return TokenSequence(ids=np.array([PAD_ID], dtype=np.int64))
    ids = [vocab.id_of(w) for w in words]
    truncated = False
    if t_max is not None and len(ids) > t_max:
        ids = ids[:t_max]
        truncated = True
    return TokenSequence(ids=np.array(ids, dtype=np.int64), truncated=truncated)


def plan_token_ids(instr: Instruction | str, plan: CoTPlan | None, vocab: Vocabulary,
                   t_max: int) -> TokenSequence:
    """Token stream for the policy: raw instruction, then SEP-joined plan steps."""
    raw = instr.raw if isinstance(instr, Instruction) else instr
    ids = list(tokenize(raw, vocab).ids)
    if plan is not None:
        ids.append(SEP_ID)
        for step in plan.steps:
            ids.extend(tokenize(step, vocab).ids)
            ids.append(SEP_ID)
    truncated = False
    if len(ids) > t_max:
        ids = ids[:t_max]
        truncated = True
    return TokenSequence(ids=np.array(ids, dtype=np.int64), truncated=truncated)
