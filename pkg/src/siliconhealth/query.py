"""Dictionary query expansion and distinct-term retrieval over ledger records."""

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple, Union

from .records import HealthRecord

_TOKEN = re.compile(r"[\w']+")


def tokenize(text: str) -> Tuple[str, ...]:
    return tuple(_TOKEN.findall(text.casefold()))


def normalize(term: str) -> str:
    return " ".join(term.casefold().split())


class SynonymDictionary:
    def __init__(self, entries: Optional[Dict[str, Iterable[str]]] = None):
        self._map: Dict[str, Set[str]] = {}
        for term, syns in (entries or {}).items():
            self.add(term, syns)

    def add(self, term: str, synonyms: Iterable[str]):
        key = normalize(term)
        self._map.setdefault(key, set()).update(normalize(s) for s in synonyms if normalize(s))

    def __getitem__(self, term: str) -> FrozenSet[str]:
        return frozenset(self._map.get(normalize(term), ()))

    def __contains__(self, term: str) -> bool:
        return normalize(term) in self._map

    def __len__(self):
        return len(self._map)

    @property
    def longest_phrase(self) -> int:
        return max((len(k.split()) for k in self._map), default=1)

    @classmethod
    def parse(cls, text: str) -> "SynonymDictionary":
        d = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            term, sep, rest = line.partition(":")
            if not sep or not term.strip():
                raise ValueError(f"line {lineno}: expected 'term: synonym, ...'")
            d.add(term, rest.split(","))
        return d

    @classmethod
    def load(cls, path: Union[str, Path, None] = None) -> "SynonymDictionary":
        if path is None:
            text = resources.files("siliconhealth").joinpath("data/medical_synonyms.txt").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls.parse(text)


def segment(query: str, dictionary: SynonymDictionary) -> List[str]:
    """Split a query into terms, preferring the longest dictionary phrase at each position."""
    words = normalize(query).split()
    out, i, longest = [], 0, dictionary.longest_phrase
    while i < len(words):
        for n in range(min(longest, len(words) - i), 0, -1):
            phrase = " ".join(words[i:i + n])
            if n == 1 or phrase in dictionary:
                out.append(phrase)
                i += n
                break
    return out


def expand(query: Union[str, Iterable[str]], dictionary: SynonymDictionary) -> FrozenSet[str]:
    """Closure of the query terms under the dictionary.  Strings are segmented first;
    an iterable is taken as already-segmented terms, so expand(expand(q)) == expand(q)."""
    terms = segment(query, dictionary) if isinstance(query, str) else [normalize(t) for t in query]
    seen: Set[str] = set()
    stack = [t for t in terms if t]
    while stack:
        t = stack.pop()
        if t in seen:
            continue
        seen.add(t)
        stack.extend(dictionary[t] - seen)
    return frozenset(seen)


@dataclass(frozen=True)
class Hit:
    record_id: bytes
    score: int
    matched_terms: Tuple[str, ...]
    created_at: int


@dataclass(frozen=True)
class QueryResult:
    hits: Tuple[Hit, ...]

    def __len__(self):
        return len(self.hits)

    def __iter__(self):
        return iter(self.hits)

    def as_json(self) -> list:
        return [{"record_id": h.record_id.hex(), "score": h.score, "matched_terms": list(h.matched_terms),
                 "created_at": h.created_at} for h in self.hits]


def contains_phrase(tokens: Tuple[str, ...], phrase: Tuple[str, ...]) -> bool:
    n = len(phrase)
    return n > 0 and any(tokens[i:i + n] == phrase for i in range(len(tokens) - n + 1))


class RecordIndex:
    """Inverted index from payload tokens to records."""

    def __init__(self, records: Iterable[HealthRecord]):
        self._tokens: Dict[bytes, Tuple[str, ...]] = {}
        self._created: Dict[bytes, int] = {}
        self._postings: Dict[str, Set[bytes]] = {}
        for r in records:
            toks = tokenize(r.text)
            self._tokens[r.record_id] = toks
            self._created[r.record_id] = r.created_at
            for t in set(toks):
                self._postings.setdefault(t, set()).add(r.record_id)

    def __len__(self):
        return len(self._tokens)

    @classmethod
    def from_ledger(cls, ledger) -> "RecordIndex":
        return cls(ledger.records())

    def matching(self, term: str) -> Set[bytes]:
        phrase = tokenize(term)
        if not phrase:
            return set()
        postings = [self._postings.get(t, set()) for t in phrase]
        candidates = set.intersection(*postings) if postings else set()
        if len(phrase) == 1:
            return set(candidates)
        return {rid for rid in candidates if contains_phrase(self._tokens[rid], phrase)}

    def retrieve(self, terms: Iterable[str]) -> QueryResult:
        matched: Dict[bytes, List[str]] = {}
        for term in sorted(set(terms)):
            for rid in self.matching(term):
                matched.setdefault(rid, []).append(term)
        hits = [Hit(rid, len(ts), tuple(ts), self._created[rid]) for rid, ts in matched.items()]
        hits.sort(key=lambda h: (-h.score, -h.created_at, h.record_id))
        return QueryResult(tuple(hits))


def retrieve(terms: Iterable[str], source) -> QueryResult:
    """Score records in ``source`` (a ledger, an index or records) by distinct matched terms."""
    if not isinstance(source, RecordIndex):
        source = RecordIndex.from_ledger(source) if hasattr(source, "records") else RecordIndex(source)
    return source.retrieve(terms)


def search(query: str, source, dictionary: Optional[SynonymDictionary] = None) -> QueryResult:
    dictionary = dictionary or SynonymDictionary.load()
    return retrieve(expand(query, dictionary), source)
