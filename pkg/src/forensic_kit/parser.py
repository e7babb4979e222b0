"""Completion parsing and trajectory (de)serialization.

Tag literals are matched byte-for-byte; see ``ANSWER_OPEN`` and friends.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .core import BoundingBox, DegenerateBox, ForensicsError, Label, ToolId

ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
BOX_OPEN, BOX_CLOSE = "<|box_start|>", "<|box_end|>"
CALL_OPEN, CALL_CLOSE = "<tool_call>", "</tool_call>"
RESPONSE_OPEN, RESPONSE_CLOSE = "<tool_response>", "</tool_response>"
IMAGE_TOKEN = "<image>"

_RESERVED = (IMAGE_TOKEN, CALL_OPEN, CALL_CLOSE, RESPONSE_OPEN, RESPONSE_CLOSE)

_ANSWER_RE = re.compile(re.escape(ANSWER_OPEN) + r"(.*?)" + re.escape(ANSWER_CLOSE), re.S)
_BOX_RE = re.compile(re.escape(BOX_OPEN) + r"(.*?)" + re.escape(BOX_CLOSE), re.S)
_CALL_RE = re.compile(re.escape(CALL_OPEN) + r"(.*?)" + re.escape(CALL_CLOSE), re.S)

_INT = r"\s*([+-]?\d+)\s*"
_FLAT_COORDS = re.compile(rf"^{_INT},{_INT},{_INT},{_INT}$")
_PAIR_COORDS = re.compile(rf"^\s*\({_INT},{_INT}\)\s*,\s*\({_INT},{_INT}\)\s*$")


class ParseError(ForensicsError):
    pass


class MissingAnswerTag(ParseError):
    pass


class MalformedAnswer(ParseError):
    pass


class MalformedJson(ParseError):
    pass


class UnknownToolName(ParseError):
    pass


class BadArguments(ParseError):
    pass


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ToolCall:
    name: ToolId
    arguments: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "name", ToolId(self.name))
        args = dict(self.arguments or {})
        if self.name is ToolId.ZOOM_IN:
            args["bbox"] = _check_bbox_arg(args.get("bbox"))
        elif args:
            raise BadArguments(f"{self.name.value} takes no arguments, got {sorted(args)}")
        object.__setattr__(self, "arguments", args)

    @property
    def bbox(self) -> Optional[list[int]]:
        return self.arguments.get("bbox")

    def to_json(self) -> str:
        return json.dumps({"name": self.name.value, "arguments": self.arguments})


def _check_bbox_arg(bbox) -> list[int]:
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise BadArguments(f"zoom_in bbox must be 4 integers, got {bbox!r}")
    if any(isinstance(c, bool) or not isinstance(c, int) for c in bbox):
        raise BadArguments(f"zoom_in bbox must be 4 integers, got {bbox!r}")
    return list(bbox)


@dataclass(frozen=True)
class Turn:
    role: Role
    content: str = ""
    images: tuple[str, ...] = ()
    tool_calls: tuple[ToolCall, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "tool_calls", tuple(self.tool_calls))
        if self.tool_calls and self.role is not Role.ASSISTANT:
            raise ValueError("only assistant turns may carry tool calls")
        for token in _RESERVED:
            if token in self.content:
                raise ValueError(f"turn content may not contain the reserved tag {token}")


@dataclass(frozen=True)
class ParsedAnswer:
    label: Label
    boxes: tuple[BoundingBox, ...] = ()
    tool_used: bool = False


@dataclass(frozen=True)
class Trajectory:
    """A conversation; the final verdict is read from the last answer-bearing assistant turn."""

    sample_id: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))

    def _final(self) -> Optional[ParsedAnswer]:
        for turn in reversed(self.turns):
            if turn.role is Role.ASSISTANT and ANSWER_OPEN in turn.content:
                try:
                    return parse_answer(turn.content)
                except ParseError:
                    return None
        return None

    @property
    def final_label(self) -> Optional[Label]:
        ans = self._final()
        return ans.label if ans else None

    @property
    def final_boxes(self) -> tuple[BoundingBox, ...]:
        ans = self._final()
        return ans.boxes if ans else ()

    @property
    def images(self) -> list[str]:
        return [p for t in self.turns for p in t.images]


def _parse_box(span: str) -> Optional[BoundingBox]:
    m = _FLAT_COORDS.match(span) or _PAIR_COORDS.match(span)
    if not m:
        return None
    try:
        return BoundingBox(*(int(g) for g in m.groups()))
    except DegenerateBox:
        return None


def parse_boxes(text: str) -> tuple[BoundingBox, ...]:
    """Every well-formed box-token span in ``text``; malformed or degenerate spans are skipped."""
    boxes = (_parse_box(span) for span in _BOX_RE.findall(text))
    return tuple(b for b in boxes if b is not None)


def parse_answer(completion: str) -> ParsedAnswer:
    m = _ANSWER_RE.search(completion)
    if m is None:
        raise MissingAnswerTag("no <answer>...</answer> span")
    body = m.group(1)
    lowered = body.lower()
    # "fake" wins if both keywords appear
    if "fake" in lowered:
        label = Label.FAKE
    elif "real" in lowered:
        label = Label.REAL
    else:
        raise MalformedAnswer(f"answer span has no real/fake keyword: {body[:80]!r}")
    return ParsedAnswer(label, parse_boxes(body))


def parse_tool_call(span: str) -> ToolCall:
    try:
        obj = json.loads(span)
    except (ValueError, RecursionError) as exc:
        raise MalformedJson(f"tool call is not valid JSON: {exc}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("name"), str):
        raise MalformedJson("tool call must be an object with a string 'name'")
    try:
        name = ToolId(obj["name"])
    except ValueError:
        raise UnknownToolName(f"unsupported tool {obj['name']!r}") from None
    args = obj.get("arguments")
    if args is None:
        args = {}
    if not isinstance(args, dict):
        raise BadArguments("'arguments' must be an object")
    return ToolCall(name, args)


def tool_calls_in(text: str) -> list[ToolCall]:
    calls = []
    for span in _CALL_RE.findall(text):
        try:
            calls.append(parse_tool_call(span))
        except ParseError:
            continue
    return calls


def _names_supported_tool(span: str) -> bool:
    try:
        obj = json.loads(span)
    except (ValueError, RecursionError):
        return False
    if not isinstance(obj, dict) or not isinstance(obj.get("name"), str):
        return False
    return obj["name"] in {t.value for t in ToolId}


def detect_tool_usage(turns: Iterable[str]) -> bool:
    """True if any turn holds a tool call naming a supported tool, or a tool response."""
    for text in turns:
        if RESPONSE_OPEN in text:
            return True
        if any(_names_supported_tool(span) for span in _CALL_RE.findall(text)):
            return True
    return False


def parse_completion(turns: "str | Iterable[str]") -> ParsedAnswer:
    """Answer of the last turn plus tool usage over the whole history."""
    if isinstance(turns, str):
        turns = [turns]
    turns = list(turns)
    if not turns:
        raise MissingAnswerTag("empty completion")
    ans = parse_answer(turns[-1])
    return ParsedAnswer(ans.label, ans.boxes, detect_tool_usage(turns))


# -- trajectory records ---------------------------------------------------------


def format_answer(label: Label, boxes: Iterable[BoundingBox] = ()) -> str:
    label = Label.parse(label)
    if label is Label.REAL:
        return f"{ANSWER_OPEN}real{ANSWER_CLOSE}"
    spans = ", ".join(f"{BOX_OPEN}{b.x1},{b.y1},{b.x2},{b.y2}{BOX_CLOSE}" for b in boxes)
    body = f"fake, {spans}" if spans else "fake"
    return f"{ANSWER_OPEN}{body}{ANSWER_CLOSE}"


def _render_content(turn: Turn) -> str:
    text = IMAGE_TOKEN * len(turn.images) + turn.content
    text += "".join(f"{CALL_OPEN}\n{call.to_json()}\n{CALL_CLOSE}" for call in turn.tool_calls)
    if turn.role is Role.TOOL:
        text = f"{RESPONSE_OPEN}{text}{RESPONSE_CLOSE}"
    return text


def trajectory_to_record(t: Trajectory) -> dict:
    return {
        "sample_id": t.sample_id,
        "messages": [{"role": turn.role.value, "content": _render_content(turn)} for turn in t.turns],
        "images": t.images,
    }


def serialize_trajectory(t: Trajectory) -> str:
    return json.dumps(trajectory_to_record(t), ensure_ascii=False)


def _split_content(role: Role, text: str, images: list[str], cursor: int) -> tuple[Turn, int]:
    if role is Role.TOOL:
        if not (text.startswith(RESPONSE_OPEN) and text.endswith(RESPONSE_CLOSE)):
            raise ParseError("tool message must be wrapped in <tool_response> tags")
        text = text[len(RESPONSE_OPEN) : len(text) - len(RESPONSE_CLOSE)]
    n_images = 0
    while text.startswith(IMAGE_TOKEN):
        text = text[len(IMAGE_TOKEN) :]
        n_images += 1
    if cursor + n_images > len(images):
        raise ParseError("more <image> placeholders than image paths")
    calls = []
    if role is Role.ASSISTANT:
        calls = [parse_tool_call(span) for span in _CALL_RE.findall(text)]
        text = _CALL_RE.sub("", text)
    try:
        turn = Turn(role, text, tuple(images[cursor : cursor + n_images]), tuple(calls))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    return turn, cursor + n_images


def trajectory_from_record(rec: dict) -> Trajectory:
    try:
        sample_id = rec["sample_id"]
        messages = rec["messages"]
        images = list(rec.get("images", []))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"trajectory record is missing {exc}") from None
    if not isinstance(messages, list) or not all(isinstance(p, str) for p in images):
        raise ParseError("messages must be a list and images a list of paths")
    turns = []
    cursor = 0
    for msg in messages:
        try:
            role = Role(msg["role"])
            content = msg["content"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad message {msg!r}") from exc
        if not isinstance(content, str):
            raise ParseError(f"message content must be a string, got {type(content).__name__}")
        turn, cursor = _split_content(role, content, images, cursor)
        turns.append(turn)
    if cursor != len(images):
        raise ParseError("image paths left over after placing every <image> placeholder")
    return Trajectory(str(sample_id), tuple(turns))


def parse_trajectory(line: str) -> Trajectory:
    try:
        rec = json.loads(line)
    except (ValueError, RecursionError) as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(rec, dict):
        raise MalformedJson("trajectory line must be a JSON object")
    return trajectory_from_record(rec)
