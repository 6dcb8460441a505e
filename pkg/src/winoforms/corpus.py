"""Schema datasets: synthetic generation, format loaders, and preprocessing.

Covers candidate mining (rule chunker, no parser dependency), group
deduplication into index-labeled examples, pointwise duplication, and
span lookup for the span-pair formalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .textkit import tokenize

BLANK = "_"


@dataclass(frozen=True)
class SchemaExample:
    """One resolution problem over a tokenized sentence.

    The pronoun site is a token span; in fill-in-the-blank data it is the
    single "_" token. Gold is exactly one of: a binary verdict for the query
    NP, or the index of the correct NP in the candidate list.
    """

    tokens: tuple[str, ...]
    pron_span: tuple[int, int]
    candidates: tuple[str, ...] = ()
    query: str | None = None
    query_span: tuple[int, int] | None = None
    gold_binary: bool | None = None
    gold_index: int | None = None
    source_id: str = ""

    def __post_init__(self):
        ps, pe = self.pron_span
        if not 0 <= ps < pe <= len(self.tokens):
            raise ValueError(f"pronoun span {self.pron_span} outside sentence")
        if self.query_span is not None:
            qs, qe = self.query_span
            if not 0 <= qs < qe <= len(self.tokens):
                raise ValueError(f"query span {self.query_span} outside sentence")
            if qs < pe and ps < qe:
                raise ValueError("query span overlaps the pronoun span")
        if (self.gold_binary is None) == (self.gold_index is None):
            raise ValueError("exactly one of gold_binary / gold_index must be set")
        if self.gold_index is not None and not 0 <= self.gold_index < len(self.candidates):
            raise ValueError(f"gold index {self.gold_index} outside candidate list")


@dataclass(frozen=True)
class AttributeLexicon:
    """Closed word lists driving generation, chunking, and answer derivation.

    Every schema's answer is decidable here: the sentence-final attribute
    word belongs to exactly one of the two mentioned nouns.
    """

    nouns: tuple[str, ...]
    attributes: dict[str, tuple[str, ...]] = field(default_factory=dict)
    determiners: tuple[str, ...] = ("the",)
    adjectives: tuple[str, ...] = ()
    verbs: tuple[str, ...] = ("is", "was")
    relations: tuple[str, ...] = ()
    connective: str = "because"

    def adjective_set(self) -> set[str]:
        attrs = {a for words in self.attributes.values() for a in words}
        return attrs | set(self.adjectives)

    def save(self, path) -> None:
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "AttributeLexicon":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            nouns=tuple(raw["nouns"]),
            attributes={k: tuple(v) for k, v in raw["attributes"].items()},
            determiners=tuple(raw["determiners"]),
            adjectives=tuple(raw["adjectives"]),
            verbs=tuple(raw["verbs"]),
            relations=tuple(raw["relations"]),
            connective=raw["connective"],
        )


_NOUNS = (
    "trophy", "suitcase", "box", "ball", "cup", "bottle", "table", "shelf",
    "lamp", "mirror", "couch", "ladder", "bucket", "basket", "jacket", "blanket",
    "hammer", "kettle", "wagon", "barrel", "candle", "carpet", "pillow", "drawer",
    "helmet", "anchor", "ribbon", "magnet", "statue", "funnel", "teapot", "crate",
    "sponge", "marble", "feather", "whistle", "saddle", "lantern", "tripod", "easel",
)

_ATTRS = (
    "heavy", "small", "bright", "fragile", "sturdy", "soft", "shiny", "rough",
    "narrow", "hollow", "smooth", "sticky", "slippery", "rigid", "faded", "warped",
)

_RELATIONS = ("did not fit in", "was kept near", "was placed on", "was traded for")


def default_lexicon() -> AttributeLexicon:
    """40 nouns, one attribute each, so the attribute is predictable from the noun."""
    return AttributeLexicon(
        nouns=_NOUNS,
        attributes={n: (_ATTRS[i % len(_ATTRS)],) for i, n in enumerate(_NOUNS)},
        relations=_RELATIONS,
    )


def generate_synthetic(lexicon: AttributeLexicon, n_schemas: int = 900, seed: int = 0,
                       proportions: tuple[int, int, int] = (5, 2, 2)):
    """Build (pretraining sentences, {"train"/"val"/"test": SchemaExamples}).

    Schemas read "the A <relation> the B because _ was <attr> ." with the
    attribute owned by exactly one of the nouns. Splits are disjoint by
    (unordered noun pair, attribute); sentence strings never repeat.
    """
    if len(lexicon.nouns) < 20:
        raise ValueError("lexicon too small: need at least 20 nouns")
    space = []
    for a in lexicon.nouns:
        for b in lexicon.nouns:
            if a == b:
                continue
            for gold in (a, b):
                other = b if gold == a else a
                owned = [w for w in lexicon.attributes.get(gold, ())
                         if w not in lexicon.attributes.get(other, ())]
                for attr in owned:
                    for rel in lexicon.relations:
                        space.append((a, b, gold, attr, rel))
    if len(space) < n_schemas:
        raise ValueError(f"lexicon too small: {len(space)} schemas available, "
                         f"{n_schemas} requested")

    rng = np.random.default_rng(seed)
    rng.shuffle(space)

    buckets: dict[tuple, list] = {}
    for item in space:
        a, b, gold, attr, _ = item
        buckets.setdefault((frozenset((a, b)), attr), []).append(item)

    names = ("train", "val", "test")
    targets = [round(n_schemas * p / sum(proportions)) for p in proportions]
    targets[0] = n_schemas - targets[1] - targets[2]
    splits: dict[str, list[SchemaExample]] = {name: [] for name in names}
    serial = 0
    for bucket in buckets.values():
        name = next((nm for nm, tgt in zip(names, targets)
                     if len(splits[nm]) < tgt), None)
        if name is None:
            break
        room = targets[names.index(name)] - len(splits[name])
        for a, b, gold, attr, rel in bucket[:room]:
            sentence = f"the {a} {rel} the {b} {lexicon.connective} {BLANK} was {attr} ."
            tokens = tuple(tokenize(sentence))
            pron = tokens.index(BLANK)
            splits[name].append(SchemaExample(
                tokens=tokens,
                pron_span=(pron, pron + 1),
                candidates=(f"the {a}", f"the {b}"),
                gold_index=0 if gold == a else 1,
                source_id=f"syn-{serial}",
            ))
            serial += 1

    pretrain: list[str] = []
    for noun in lexicon.nouns:
        for attr in lexicon.attributes.get(noun, ()):
            for verb in lexicon.verbs:
                pretrain.append(f"the {noun} {verb} {attr} .")
                pretrain.append(f"the {noun} {verb} very {attr} .")
            pretrain.append(f"the {attr} {noun} .")
    for ex in splits["train"]:
        # three surface forms per training schema: the blank, a pronoun, and
        # the resolved NP (as in natural text); val/test sentences never appear
        blank_form = " ".join(ex.tokens)
        pretrain.append(blank_form)
        pretrain.append(blank_form.replace(f" {BLANK} ", " it "))
        pretrain.append(blank_form.replace(
            f" {BLANK} ", f" {ex.candidates[ex.gold_index]} "))
    return list(dict.fromkeys(pretrain)), splits


# -- file formats ---------------------------------------------------------------


def _word_to_token_offsets(words: list[str]) -> list[int]:
    """Token index at which each whitespace word starts."""
    offsets, total = [], 0
    for w in words:
        offsets.append(total)
        total += len(tokenize(w))
    return offsets


def _require_span(tokens, start: int, text: str, what: str) -> tuple[int, int]:
    piece = tokenize(text)
    end = start + len(piece)
    if list(tokens[start:end]) != piece:
        raise ValueError(f"{what} text {text!r} does not match sentence at word index")
    return start, end


def load_wsc(path) -> list[SchemaExample]:
    """JSON-lines, one binary query judgment per line.

    Layout: {"idx", "text", "target": {"span1_index", "span1_text",
    "span2_index", "span2_text"}, "label"} with span1 = query NP,
    span2 = pronoun, both indexed by whitespace word position.
    """
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            raw = json.loads(line)
            words = raw["text"].split()
            tokens = tuple(tokenize(raw["text"]))
            offsets = _word_to_token_offsets(words)
            tgt = raw["target"]
            for key in ("span1_index", "span2_index"):
                if not 0 <= tgt[key] < len(words):
                    raise ValueError(f"line {lineno}: word index {tgt[key]} out of range")
            q_span = _require_span(tokens, offsets[tgt["span1_index"]],
                                   tgt["span1_text"], "query")
            p_span = _require_span(tokens, offsets[tgt["span2_index"]],
                                   tgt["span2_text"], "pronoun")
            examples.append(SchemaExample(
                tokens=tokens,
                pron_span=p_span,
                candidates=tuple(" ".join(tokenize(c)) for c in raw.get("candidates", ())),
                query=" ".join(tokenize(tgt["span1_text"])),
                query_span=q_span,
                gold_binary=bool(raw["label"]),
                source_id=f"wsc-{raw.get('idx', lineno)}",
            ))
    return examples


def dump_wsc(examples: list[SchemaExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, ex in enumerate(examples):
            if ex.gold_binary is None or ex.query_span is None:
                raise ValueError("binary gold and a query span are required")
            qs, _ = ex.query_span
            ps, _ = ex.pron_span
            tail = ex.source_id.rsplit("-", 1)[-1]
            raw = {
                "idx": int(tail) if tail.isdigit() else i,
                "text": " ".join(ex.tokens),
                "target": {
                    "span1_index": qs, "span1_text": ex.query,
                    "span2_index": ps,
                    "span2_text": " ".join(ex.tokens[slice(*ex.pron_span)]),
                },
                "label": ex.gold_binary,
            }
            if ex.candidates:
                raw["candidates"] = list(ex.candidates)
            fh.write(json.dumps(raw) + "\n")


def load_winogrande(path) -> list[SchemaExample]:
    """JSON-lines: {"sentence" with one "_", "option1", "option2", "answer"}."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            raw = json.loads(line)
            tokens = tuple(tokenize(raw["sentence"]))
            blanks = [i for i, t in enumerate(tokens) if t == BLANK]
            if len(blanks) != 1:
                raise ValueError(f"line {lineno}: expected exactly one blank, "
                                 f"found {len(blanks)}")
            if str(raw["answer"]) not in ("1", "2"):
                raise ValueError(f"line {lineno}: answer must be 1 or 2")
            examples.append(SchemaExample(
                tokens=tokens,
                pron_span=(blanks[0], blanks[0] + 1),
                candidates=(" ".join(tokenize(raw["option1"])),
                            " ".join(tokenize(raw["option2"]))),
                gold_index=int(str(raw["answer"])) - 1,
                source_id=f"wg-{raw.get('idx', lineno)}",
            ))
    return examples


def dump_winogrande(examples: list[SchemaExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            if ex.gold_index is None or len(ex.candidates) != 2:
                raise ValueError("index gold over exactly two options is required")
            fh.write(json.dumps({
                "sentence": " ".join(ex.tokens),
                "option1": ex.candidates[0],
                "option2": ex.candidates[1],
                "answer": str(ex.gold_index + 1),
            }) + "\n")


# -- preprocessing ----------------------------------------------------------------


def first_occurrence_span(tokens, text: str) -> tuple[int, int]:
    """Token span of the first occurrence of `text` inside `tokens`."""
    piece = tokenize(text)
    k = len(piece)
    for i in range(len(tokens) - k + 1):
        if list(tokens[i:i + k]) == piece:
            return i, i + k
    raise ValueError(f"{text!r} does not occur in the sentence")


def chunk_noun_phrases(tokens, lexicon: AttributeLexicon) -> list[tuple[int, int]]:
    """Maximal determiner? adjective* noun spans, left to right."""
    adjectives = lexicon.adjective_set()
    nouns = set(lexicon.nouns)
    spans = []
    i = 0
    while i < len(tokens):
        j = i
        if tokens[j] in lexicon.determiners:
            j += 1
        while j < len(tokens) and tokens[j] in adjectives:
            j += 1
        if j < len(tokens) and tokens[j] in nouns:
            spans.append((i, j + 1))
            i = j + 1
        else:
            i += 1
    return spans


def mine_candidates(example: SchemaExample, lexicon: AttributeLexicon) -> list[str]:
    """Candidate NP texts in first-appearance order, always including the query.

    An explicit candidate list on the example overrides mining entirely.
    """
    if example.candidates:
        return list(example.candidates)
    found: list[tuple[int, str]] = []
    for s, e in chunk_noun_phrases(example.tokens, lexicon):
        found.append((s, " ".join(example.tokens[s:e])))
    if example.query is not None:
        qs, _ = first_occurrence_span(example.tokens, example.query)
        found.append((qs, example.query))
    found.sort(key=lambda pair: pair[0])
    ordered = []
    for _, text in found:
        if text not in ordered:
            ordered.append(text)
    return ordered


def dedupe_mc_groups(examples: list[SchemaExample]):
    """Collapse binary-labeled queries over one (sentence, pronoun site) into
    a single index-labeled example.

    Returns (kept examples, dropped group count). Groups without a true-labeled
    member have no defined gold index and are dropped (they remain usable for
    binary-label training from the raw examples). Index-labeled inputs pass
    through untouched, which makes the operation idempotent.
    """
    kept: list[SchemaExample] = []
    dropped = 0
    groups: dict[tuple, list[SchemaExample]] = {}
    order: list[tuple] = []
    for ex in examples:
        if ex.gold_index is not None:
            kept.append(ex)
            continue
        key = (ex.tokens, ex.pron_span)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(ex)

    for key in order:
        members = groups[key]
        true_queries = {m.query for m in members if m.gold_binary}
        if len(true_queries) > 1:
            raise ValueError(f"group {key[0][:4]}... has two true-labeled queries")
        if not true_queries:
            dropped += 1
            continue
        canon = next(m for m in members if m.gold_binary)
        candidates = list(canon.candidates)
        for m in members:
            if m.query is not None and m.query not in candidates:
                candidates.append(m.query)
        if canon.query not in candidates:
            candidates.append(canon.query)
        kept.append(replace(
            canon,
            candidates=tuple(candidates),
            gold_binary=None,
            gold_index=candidates.index(canon.query),
        ))
    return kept, dropped


def expand_pointwise(example: SchemaExample) -> list[SchemaExample]:
    """Index gold over n candidates -> n binary instances, exactly one true.

    Binary examples pass through unchanged.
    """
    if example.gold_binary is not None:
        return [example]
    return [
        replace(
            example,
            query=cand,
            query_span=None,
            gold_binary=(i == example.gold_index),
            gold_index=None,
            source_id=f"{example.source_id}#opt{i}",
        )
        for i, cand in enumerate(example.candidates)
    ]


def pspan_spans(example: SchemaExample) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """(NP span, pronoun span) per candidate; NP span = first appearance."""
    return [(first_occurrence_span(example.tokens, cand), example.pron_span)
            for cand in example.candidates]
