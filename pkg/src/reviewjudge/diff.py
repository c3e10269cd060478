"""Unified diff model and parser.

The parsed structure is the factual context a review comment is judged
against: files, hunks and individual lines.  ``raw_text`` keeps the exact
input so prompts can embed the diff byte-for-byte.
"""
from __future__ import annotations

import enum
import posixpath
import re
from dataclasses import dataclass
from typing import Iterable

__all__ = [
    "ChangeType",
    "CodeDiff",
    "DiffLine",
    "DiffStats",
    "FileDiff",
    "Hunk",
    "LanguageTag",
    "LineKind",
    "MalformedDiff",
    "ReviewComment",
    "classify_change_type",
    "diff_stats",
    "language_for_path",
    "parse_unified_diff",
    "serialize_diff",
]

NO_NEWLINE_MARKER = "\\ No newline at end of file"

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$")
_GIT_HEADER_RE = re.compile(r"^diff --git a/(.+) b/(.+)$")


class MalformedDiff(ValueError):
    """The text is not a usable unified diff."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class LineKind(enum.Enum):
    CONTEXT = " "
    ADDED = "+"
    REMOVED = "-"

    @property
    def marker(self) -> str:
        return self.value


class ChangeType(enum.Enum):
    ADD = "Add"
    MODIFY = "Modify"


@dataclass(frozen=True)
class LanguageTag:
    """Language stratum of a file; ``Other`` carries the raw extension."""

    value: str
    other: str | None = None

    KNOWN = ("Java", "Python", "JavaScript", "TypeScript", "Kotlin")

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name: str) -> "LanguageTag":
        for known in cls.KNOWN:
            if name.lower() == known.lower():
                return cls(known)
        if name.lower().startswith("other"):
            return cls("Other")
        return cls("Other", name)


_EXTENSIONS = {
    ".java": "Java",
    ".py": "Python",
    ".js": "JavaScript",
    ".jsx": "JavaScript",
    ".ts": "TypeScript",
    ".tsx": "TypeScript",
    ".kt": "Kotlin",
    ".kts": "Kotlin",
}


def language_for_path(path: str | None) -> LanguageTag:
    ext = posixpath.splitext(path or "")[1].lower()
    if ext in _EXTENSIONS:
        return LanguageTag(_EXTENSIONS[ext])
    return LanguageTag("Other", ext or None)


@dataclass(frozen=True)
class DiffLine:
    kind: LineKind
    content: str
    no_newline: bool = False

    def render(self) -> list[str]:
        out = [self.kind.marker + self.content]
        if self.no_newline:
            out.append(NO_NEWLINE_MARKER)
        return out


@dataclass(frozen=True)
class Hunk:
    old_start: int
    old_count: int
    new_start: int
    new_count: int
    lines: tuple[DiffLine, ...]
    section: str = ""

    def header(self) -> str:
        return (
            f"@@ -{self.old_start},{self.old_count} "
            f"+{self.new_start},{self.new_count} @@{self.section}"
        )

    @property
    def added(self) -> int:
        return sum(1 for ln in self.lines if ln.kind is LineKind.ADDED)

    @property
    def removed(self) -> int:
        return sum(1 for ln in self.lines if ln.kind is LineKind.REMOVED)


@dataclass(frozen=True)
class FileDiff:
    old_path: str | None
    new_path: str | None
    hunks: tuple[Hunk, ...] = ()
    preamble: tuple[str, ...] = ()
    has_file_headers: bool = True

    def __post_init__(self):
        if self.old_path is None and self.new_path is None:
            raise ValueError("FileDiff needs at least one of old_path/new_path")

    @property
    def path(self) -> str:
        return self.new_path if self.new_path is not None else self.old_path  # type: ignore[return-value]

    @property
    def language(self) -> LanguageTag:
        return language_for_path(self.path)

    @property
    def change_type(self) -> ChangeType:
        return classify_change_type(self)

    @property
    def changed_lines(self) -> int:
        return sum(h.added + h.removed for h in self.hunks)


@dataclass(frozen=True)
class DiffStats:
    changed_lines: int
    files_touched: int
    directories_touched: int


@dataclass(frozen=True)
class CodeDiff:
    raw_text: str
    files: tuple[FileDiff, ...] = ()

    @property
    def stats(self) -> DiffStats:
        return diff_stats(self)

    @property
    def change_type(self) -> ChangeType:
        # A multi-file change is Add only when every file is.
        if all(f.change_type is ChangeType.ADD for f in self.files):
            return ChangeType.ADD
        return ChangeType.MODIFY

    @property
    def language(self) -> LanguageTag:
        """Language of the file carrying the most changed lines (first wins ties)."""
        if not self.files:
            return LanguageTag("Other")
        best = max(self.files, key=lambda f: f.changed_lines)
        return best.language


@dataclass(frozen=True)
class ReviewComment:
    id: str
    text: str
    anchor: tuple[str, int] | None = None
    generator: str | None = None

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("review comment text must be non-empty")


def classify_change_type(diff: FileDiff) -> ChangeType:
    for hunk in diff.hunks:
        for line in hunk.lines:
            if line.kind is LineKind.REMOVED:
                return ChangeType.MODIFY
    return ChangeType.ADD


def diff_stats(diff: CodeDiff) -> DiffStats:
    dirs = set()
    for f in diff.files:
        for p in (f.old_path, f.new_path):
            if p is not None:
                dirs.add(posixpath.dirname(p))
    return DiffStats(
        changed_lines=sum(f.changed_lines for f in diff.files),
        files_touched=len(diff.files),
        directories_touched=len(dirs),
    )


def _strip_path(raw: str, prefix: str) -> str | None:
    path = raw.split("\t", 1)[0].rstrip()
    if path == "/dev/null":
        return None
    if path.startswith(prefix):
        path = path[len(prefix):]
    return path


def _git_block_matches(diff_line: str, old_path: str | None, new_path: str | None) -> bool:
    m = _GIT_HEADER_RE.match(diff_line)
    if not m:
        return True
    return (old_path is None or m.group(1) == old_path) and (new_path is None or m.group(2) == new_path)


def _file_from_preamble(preamble: list[str], line_number: int) -> FileDiff:
    """Build a header-less file entry (pure rename, mode change, binary)."""
    old = new = None
    for line in preamble:
        m = _GIT_HEADER_RE.match(line)
        if m:
            old, new = m.group(1), m.group(2)
        elif line.startswith("rename from "):
            old = line[len("rename from "):]
        elif line.startswith("rename to "):
            new = line[len("rename to "):]
    if old is None and new is None:
        raise MalformedDiff("file preamble without paths", line_number)
    if any(ln.startswith("new file mode ") for ln in preamble):
        old = None
    if any(ln.startswith("deleted file mode ") for ln in preamble):
        new = None
    return FileDiff(old, new, (), tuple(preamble), has_file_headers=False)


def parse_unified_diff(text: str) -> CodeDiff:
    """Parse unified diff text into a :class:`CodeDiff`.

    Hunk bodies are consumed by the counts in their ``@@`` header, so a
    removed line whose content starts with ``-- `` is never mistaken for a
    file header.  Raises :class:`MalformedDiff` on any inconsistency.
    """
    if not text or not text.strip():
        raise MalformedDiff("empty diff")

    lines = text.split("\n")
    if text.endswith("\n"):
        lines.pop()

    files: list[FileDiff] = []
    preamble: list[str] = []
    i = 0
    n = len(lines)

    def flush_preamble(at: int) -> None:
        if any(ln.startswith("diff ") for ln in preamble):
            # Split so that each "diff " line starts its own header-less file.
            chunk: list[str] = []
            for ln in preamble:
                if ln.startswith("diff ") and chunk and any(c.startswith("diff ") for c in chunk):
                    files.append(_file_from_preamble(chunk, at))
                    chunk = []
                chunk.append(ln)
            if any(c.startswith("diff ") for c in chunk):
                files.append(_file_from_preamble(chunk, at))
        preamble.clear()

    while i < n:
        line = lines[i]
        if line.startswith("--- ") and i + 1 < n and lines[i + 1].startswith("+++ "):
            # Git preamble for this file is everything since the last "diff " line.
            old_path = _strip_path(line[4:], "a/")
            new_path = _strip_path(lines[i + 1][4:], "b/")
            if old_path is None and new_path is None:
                raise MalformedDiff("both file paths are /dev/null", i + 1)
            own: list[str] = []
            if preamble:
                idx = max((k for k, ln in enumerate(preamble) if ln.startswith("diff ")), default=None)
                # A git block whose paths disagree with the headers is a separate header-less file.
                if idx is not None and _git_block_matches(preamble[idx], old_path, new_path):
                    own = preamble[idx:]
                    del preamble[idx:]
                flush_preamble(i + 1)
            i += 2
            hunks: list[Hunk] = []
            while i < n and lines[i].startswith("@@"):
                hunk, i = _parse_hunk(lines, i)
                hunks.append(hunk)
            if i < n and lines[i][:1] in ("+", " ") and not lines[i].startswith("+++ "):
                raise MalformedDiff("diff line outside any hunk (hunk counts too small?)", i + 1)
            if i < n and lines[i].startswith("-") and not (
                lines[i].startswith("--- ") and i + 1 < n and lines[i + 1].startswith("+++ ")
            ):
                raise MalformedDiff("diff line outside any hunk (hunk counts too small?)", i + 1)
            files.append(FileDiff(old_path, new_path, tuple(hunks), tuple(own)))
            continue
        if line.startswith("@@"):
            raise MalformedDiff("hunk header before any file header", i + 1)
        if line.startswith("\\"):
            raise MalformedDiff("no-newline marker outside a hunk", i + 1)
        preamble.append(line)
        i += 1
    flush_preamble(n)

    if not files:
        raise MalformedDiff("no file headers found")
    return CodeDiff(raw_text=text, files=tuple(files))


def _parse_hunk(lines: list[str], i: int) -> tuple[Hunk, int]:
    header = lines[i]
    m = _HUNK_RE.match(header)
    if not m:
        raise MalformedDiff(f"bad hunk header {header!r}", i + 1)
    old_start = int(m.group(1))
    old_count = int(m.group(2)) if m.group(2) is not None else 1
    new_start = int(m.group(3))
    new_count = int(m.group(4)) if m.group(4) is not None else 1
    section = m.group(5)

    body: list[DiffLine] = []
    old_left, new_left = old_count, new_count
    i += 1
    n = len(lines)
    while old_left > 0 or new_left > 0:
        if i >= n:
            raise MalformedDiff(
                f"hunk ends early: expected {old_left} more old and {new_left} more new lines", i
            )
        line = lines[i]
        marker = line[:1]
        if marker == " ":
            kind = LineKind.CONTEXT
            old_left -= 1
            new_left -= 1
        elif marker == "+":
            kind = LineKind.ADDED
            new_left -= 1
        elif marker == "-":
            kind = LineKind.REMOVED
            old_left -= 1
        elif marker == "\\" and body:
            body[-1] = DiffLine(body[-1].kind, body[-1].content, no_newline=True)
            i += 1
            continue
        else:
            raise MalformedDiff(f"unknown line marker {marker!r} inside hunk", i + 1)
        if old_left < 0 or new_left < 0:
            raise MalformedDiff("hunk body longer than its header counts", i + 1)
        body.append(DiffLine(kind, line[1:]))
        i += 1
    if i < n and lines[i].startswith("\\") and body:
        body[-1] = DiffLine(body[-1].kind, body[-1].content, no_newline=True)
        i += 1
    return Hunk(old_start, old_count, new_start, new_count, tuple(body), section), i


def _render_file(f: FileDiff) -> Iterable[str]:
    yield from f.preamble
    if not f.has_file_headers:
        return
    yield "--- " + ("a/" + f.old_path if f.old_path is not None else "/dev/null")
    yield "+++ " + ("b/" + f.new_path if f.new_path is not None else "/dev/null")
    for h in f.hunks:
        yield h.header()
        for ln in h.lines:
            yield from ln.render()


def serialize_diff(diff: CodeDiff | Iterable[FileDiff]) -> str:
    """Render parsed files back to unified diff text."""
    files = diff.files if isinstance(diff, CodeDiff) else tuple(diff)
    out = [ln for f in files for ln in _render_file(f)]
    return "\n".join(out) + "\n" if out else ""


def hunk_body_lines(diff: CodeDiff) -> list[str]:
    """Every marker-prefixed body line of every hunk, in order."""
    return [ln for f in diff.files for h in f.hunks for dl in h.lines for ln in dl.render()]
