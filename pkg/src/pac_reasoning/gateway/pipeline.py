"""Glue between the endpoint clients and the calibration/routing records."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from ..core import CalibrationRecord, binary_loss, canonicalize, semantic_loss
from ..exceptions import ConfigError, IncompleteRecordError
from ..uncertainty import logits_uncertainty, verbalized_uncertainty
from .client import ChatClient
from .data import PromptItem


def boxed_extractor(text: str) -> str:
    r"""Contents of the last ``\boxed{...}`` in ``text``, or ``text`` unchanged."""
    start = text.rfind("\\boxed{")
    if start < 0:
        return text
    i = start + len("\\boxed{")
    depth = 1
    for j in range(i, len(text)):
        if text[j] == "{":
            depth += 1
        elif text[j] == "}":
            depth -= 1
            if depth == 0:
                return text[i:j]
    return text


EXTRACTORS: dict[str, Callable[[str], str] | None] = {"identity": None, "boxed": boxed_extractor}
LOSS_KINDS = ("binary", "semantic")


def score_prompt(item: PromptItem, client: ChatClient, score_kind: str, n_trials: int = 10) -> CalibrationRecord:
    flags: list[str] = []
    if score_kind == "logits":
        completion, tp = client.token_probs(item.prompt)
        u = logits_uncertainty(tp)
    elif score_kind == "verbalized":
        completion = client.complete(item.prompt)
        trials = client.verbalized_confidence(item.prompt, completion.text, n_trials)
        u = verbalized_uncertainty(trials)
        if trials.n_unparsed:
            flags.append(f"verbalized_unparsed={trials.n_unparsed}/{trials.n_trials}")
    else:
        raise ConfigError(f"unknown score kind {score_kind!r}")
    flags.append(f"cheap_token_source={completion.token_source}")
    return CalibrationRecord(
        id=item.id,
        uncertainty=min(1.0, max(0.0, u)),
        cheap_answer=completion.text,
        cheap_tokens=completion.token_count or 0,
        gold_answer=item.gold,
        flags=tuple(flags),
        score_kind=score_kind,
        prompt=item.prompt,
    )


def score_prompts(
    items: Sequence[PromptItem], client: ChatClient, score_kind: str, n_trials: int = 10
) -> list[CalibrationRecord]:
    """Score every prompt with the nonthinking model; output order matches input order."""
    workers = client.cfg.max_parallel
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda it: score_prompt(it, client, score_kind, n_trials), items))
    return [score_prompt(it, client, score_kind, n_trials) for it in items]


class ExpertOracle:
    """Expert answers and losses for records, backed by the thinking-model client.

    Records that already carry an expert answer are never re-queried.
    """

    def __init__(
        self,
        records: Sequence[CalibrationRecord],
        client: ChatClient | None,
        loss_kind: str = "binary",
        embedder: ChatClient | None = None,
        extractor: Callable[[str], str] | None = None,
    ):
        if loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss kind must be one of {LOSS_KINDS}")
        self.records = {r.id: r for r in records}
        self.client = client
        self.loss_kind = loss_kind
        self.embedder = embedder
        self.extractor = extractor
        self.answers: dict[str, tuple[str, int | None]] = {
            r.id: (r.expert_answer, r.expert_tokens) for r in records if r.expert_answer is not None
        }
        self.losses: dict[str, float] = {r.id: r.loss for r in records if r.loss is not None}

    def answer(self, rid: str) -> tuple[str, int]:
        if rid not in self.answers:
            rec = self.records[rid]
            if self.client is None:
                raise IncompleteRecordError(f"record {rid} has no expert answer and no thinking endpoint is configured")
            if rec.prompt is None:
                raise IncompleteRecordError(f"record {rid} has no prompt to send to the expert")
            completion = self.client.complete(rec.prompt)
            self.answers[rid] = (completion.text, completion.token_count)
        text, tokens = self.answers[rid]
        return text, tokens if tokens is not None else 0

    def loss(self, rid: str) -> float:
        if rid in self.losses:
            return self.losses[rid]
        rec = self.records[rid]
        expert_text, _ = self.answer(rid)
        if self.loss_kind == "binary":
            if rec.gold_answer is None:
                raise IncompleteRecordError(f"binary loss needs a gold answer for record {rid}")
            value = binary_loss(
                canonicalize(rec.cheap_answer, self.extractor),
                canonicalize(expert_text, self.extractor),
                canonicalize(rec.gold_answer, self.extractor),
            )
        else:
            if self.embedder is None:
                raise ConfigError("semantic loss needs an embedding endpoint")
            value = semantic_loss(self.embedder.embed(rec.cheap_answer), self.embedder.embed(expert_text))
        self.losses[rid] = value
        return value

    def updated_records(self) -> list[CalibrationRecord]:
        """Records with every expert answer and loss obtained so far filled in."""
        out = []
        for rid, rec in self.records.items():
            if rid in self.losses and rid in self.answers and rec.expert_answer is None:
                text, tokens = self.answers[rid]
                rec = replace(rec, expert_answer=text, expert_tokens=tokens, loss=self.losses[rid])
            out.append(rec)
        return out
