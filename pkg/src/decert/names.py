"""Domain names, delegation patterns and the scope algebra.

A scope is a set of include patterns minus a set of excluded subtrees.
``*.d`` matches every strict descendant of ``d`` at any depth (not only one
label), and an exclude entry ``e`` removes ``e`` itself plus everything
below it.  Subset decisions are made symbolically over the infinite space
of names, so they never depend on which labels happen to be in use.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Iterable, List, Tuple, Union

__all__ = [
    "MalformedName",
    "UniverseTooLarge",
    "DomainName",
    "PatternKind",
    "DomainPattern",
    "DomainScope",
    "SubsetVerdict",
    "parse_name",
    "parse_pattern",
    "matches",
    "scope_contains",
    "scope_subset_of",
    "excludes_within_include",
    "exclude_intersects",
    "enumerate_universe",
    "owner_scope",
]

MAX_NAME_LENGTH = 253
MAX_LABEL_LENGTH = 63
MAX_LABELS = 127
UNIVERSE_LIMIT = 10**6

_LABEL_RE = re.compile(r"^[a-z0-9]([a-z0-9-]*[a-z0-9])?$")
# service labels such as "_decert-revoked" (RFC 8552 style)
_SERVICE_LABEL_RE = re.compile(r"^_[a-z0-9]([a-z0-9-]*[a-z0-9])?$")


class MalformedName(ValueError):
    pass


class UniverseTooLarge(ValueError):
    pass


@dataclass(frozen=True, order=True)
class DomainName:
    """A normalized, lowercase ASCII domain name.

    ``labels`` are stored in textual order, so ``figures.pics.abc.com`` is
    ``("figures", "pics", "abc", "com")``.
    """

    labels: Tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        if not 1 <= len(labels) <= MAX_LABELS:
            raise MalformedName(f"name must have 1..{MAX_LABELS} labels")
        for label in labels:
            if not 1 <= len(label) <= MAX_LABEL_LENGTH:
                raise MalformedName(f"bad label length: {label!r}")
            if not (_LABEL_RE.match(label) or _SERVICE_LABEL_RE.match(label)):
                raise MalformedName(f"illegal label: {label!r}")
        if len(".".join(labels)) > MAX_NAME_LENGTH:
            raise MalformedName("name longer than 253 octets")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def parse(cls, text: str) -> "DomainName":
        return parse_name(text)

    def __str__(self) -> str:
        return ".".join(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def parent(self) -> "DomainName | None":
        if len(self.labels) == 1:
            return None
        return DomainName(self.labels[1:])

    def child(self, label: str) -> "DomainName":
        return DomainName((label,) + self.labels)

    def is_descendant_of(self, other: "DomainName", strict: bool = True) -> bool:
        n, m = len(self.labels), len(other.labels)
        if n < m or (strict and n == m):
            return False
        return self.labels[n - m :] == other.labels

    def within(self, other: "DomainName") -> bool:
        """True if self is ``other`` or below it."""
        return self.is_descendant_of(other, strict=False)


def parse_name(text: str) -> DomainName:
    if not isinstance(text, str) or not text:
        raise MalformedName("empty name")
    if not text.isascii():
        raise MalformedName(f"non-ASCII name: {text!r}")
    if "*" in text:
        raise MalformedName(f"wildcard not allowed in a name: {text!r}")
    text = text.lower()
    if text.endswith("."):
        text = text[:-1]
    return DomainName(tuple(text.split(".")))


class PatternKind(str, Enum):
    EXACT = "Exact"
    SUBTREE = "Subtree"


@dataclass(frozen=True, order=True)
class DomainPattern:
    kind: PatternKind
    base: DomainName

    @classmethod
    def exact(cls, name: Union[str, DomainName]) -> "DomainPattern":
        if isinstance(name, str):
            name = parse_name(name)
        return cls(PatternKind.EXACT, name)

    @classmethod
    def subtree(cls, name: Union[str, DomainName]) -> "DomainPattern":
        if isinstance(name, str):
            name = parse_name(name)
        return cls(PatternKind.SUBTREE, name)

    @classmethod
    def parse(cls, text: str) -> "DomainPattern":
        return parse_pattern(text)

    def __str__(self) -> str:
        if self.kind is PatternKind.SUBTREE:
            return "*." + str(self.base)
        return str(self.base)


def parse_pattern(text: str) -> DomainPattern:
    if not isinstance(text, str) or not text:
        raise MalformedName("empty pattern")
    if not text.isascii():
        raise MalformedName(f"non-ASCII pattern: {text!r}")
    if text.startswith("*."):
        return DomainPattern(PatternKind.SUBTREE, parse_name(text[2:]))
    if "*" in text:
        raise MalformedName(f"wildcard must be the leftmost whole label: {text!r}")
    return DomainPattern(PatternKind.EXACT, parse_name(text))


def _as_name(name: Union[str, DomainName]) -> DomainName:
    return parse_name(name) if isinstance(name, str) else name


def _as_pattern(p: Union[str, DomainPattern]) -> DomainPattern:
    return parse_pattern(p) if isinstance(p, str) else p


def matches(pattern: DomainPattern, name: DomainName) -> bool:
    if pattern.kind is PatternKind.EXACT:
        return name == pattern.base
    return name.is_descendant_of(pattern.base, strict=True)


@dataclass(frozen=True)
class DomainScope:
    """Include patterns minus excluded subtrees; excludes always win."""

    include: FrozenSet[DomainPattern] = frozenset()
    exclude: FrozenSet[DomainName] = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "include", frozenset(_as_pattern(p) for p in self.include)
        )
        object.__setattr__(self, "exclude", frozenset(_as_name(e) for e in self.exclude))

    @classmethod
    def of(cls, include: Iterable = (), exclude: Iterable = ()) -> "DomainScope":
        return cls(frozenset(include), frozenset(exclude))

    def contains(self, name: Union[str, DomainName]) -> bool:
        return scope_contains(self, _as_name(name))

    def excluded(self, name: DomainName) -> bool:
        return any(name.within(e) for e in self.exclude)

    def sorted_include(self) -> List[DomainPattern]:
        return sorted(self.include, key=str)

    def sorted_exclude(self) -> List[DomainName]:
        return sorted(self.exclude, key=str)

    def __str__(self) -> str:
        inc = ",".join(str(p) for p in self.sorted_include())
        exc = ",".join(str(e) for e in self.sorted_exclude())
        return f"{{include:[{inc}], exclude:[{exc}]}}"

    def display(self) -> "DomainScope":
        """Drop include patterns shadowed by broader ones.  For display only."""
        kept = []
        for p in self.include:
            shadowed = any(
                q != p
                and q.kind is PatternKind.SUBTREE
                and (
                    p.base.is_descendant_of(q.base)
                    or (p.kind is PatternKind.SUBTREE and p.base == q.base)
                )
                for q in self.include
            )
            if not shadowed:
                kept.append(p)
        return DomainScope(frozenset(kept), self.exclude)


def scope_contains(scope: DomainScope, name: DomainName) -> bool:
    if scope.excluded(name):
        return False
    return any(matches(p, name) for p in scope.include)


@dataclass(frozen=True)
class SubsetVerdict:
    is_subset: bool
    witnesses: Tuple[Union[DomainPattern, DomainName], ...] = field(default=())

    def __bool__(self) -> bool:
        return self.is_subset


def exclude_intersects(exclude: DomainName, pattern: DomainPattern) -> bool:
    """Does the subtree rooted at ``exclude`` overlap ``pattern``'s names?"""
    if pattern.kind is PatternKind.EXACT:
        return pattern.base.within(exclude)
    return exclude.is_descendant_of(pattern.base) or pattern.base.within(exclude)


def scope_subset_of(child: DomainScope, parent: DomainScope) -> SubsetVerdict:
    """Decide ``denotation(child) <= denotation(parent)`` symbolically."""
    witnesses: list = []
    for p in sorted(child.include, key=str):
        if child.excluded(p.base):
            # the whole pattern is removed by the child's own excludes
            continue
        if p.kind is PatternKind.EXACT:
            if not scope_contains(parent, p.base):
                witnesses.append(p.base)
            continue
        covered = any(
            q.kind is PatternKind.SUBTREE and p.base.within(q.base)
            for q in parent.include
        )
        if not covered:
            witnesses.append(p)
            continue
        for e in sorted(parent.exclude, key=str):
            if p.base.within(e):
                witnesses.append(p)
            elif e.is_descendant_of(p.base) and not child.excluded(e):
                witnesses.append(e)
    return SubsetVerdict(not witnesses, tuple(witnesses))


def excludes_within_include(
    child_excludes: Iterable[DomainName], parent_include: Iterable[DomainPattern]
) -> SubsetVerdict:
    parent_include = list(parent_include)
    missing = tuple(
        e
        for e in sorted(child_excludes, key=str)
        if not any(matches(q, e) for q in parent_include)
    )
    return SubsetVerdict(not missing, missing)


def owner_scope(san: Iterable[DomainPattern]) -> DomainScope:
    """Delegation authority of an end-entity certificate.

    An owner of ``abc.com`` may delegate ``abc.com`` itself and anything below
    it; a wildcard SAN entry grants only its own subtree.
    """
    include = set()
    for p in san:
        include.add(p)
        if p.kind is PatternKind.EXACT:
            include.add(DomainPattern(PatternKind.SUBTREE, p.base))
    return DomainScope(frozenset(include))


def enumerate_universe(
    labels: Iterable[str], max_depth: int, suffix: Union[str, DomainName]
) -> List[DomainName]:
    """All names made of 0..max_depth labels from ``labels`` prepended to ``suffix``.

    Ordered by depth, then lexicographically by textual form.
    """
    labels = sorted(set(labels))
    suffix = _as_name(suffix)
    if not labels:
        raise ValueError("labels must be non-empty")
    if not 0 <= max_depth <= 6:
        raise ValueError("max_depth must be in 0..6")
    total = sum(len(labels) ** d for d in range(max_depth + 1))
    if total > UNIVERSE_LIMIT:
        raise UniverseTooLarge(f"{total} names exceeds {UNIVERSE_LIMIT}")
    out = []
    for depth in range(max_depth + 1):
        layer = [
            DomainName(tuple(prefix) + suffix.labels)
            for prefix in itertools.product(labels, repeat=depth)
        ]
        layer.sort(key=str)
        out.extend(layer)
    return out
