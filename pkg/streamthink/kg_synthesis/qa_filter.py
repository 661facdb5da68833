"""Five-check rubric for synthesized QA items."""

from __future__ import annotations

import json
import re
import string
from typing import Any, Dict, List, Optional, Sequence

from flashtext import KeywordProcessor

from streamthink.backends.base import GenerationBackend, RequestKind
from streamthink.backends.prompts import render_template_request
from streamthink.kg_synthesis.dataclasses import (
    CheckName,
    CheckVerdict,
    EvidenceChain,
    FilterResult,
    SynthesizedQA,
    Verdict,
)
from streamthink.utils.constants import BANNED_QA_TOKENS
from streamthink.utils.logging_config import logger
from streamthink.utils.string_utils import split_sentences

_VERDICT = re.compile(r"\b(PASS|FAIL)\b", re.IGNORECASE)

DELEGATED_CRITERIA: Dict[CheckName, str] = {
    CheckName.WORLD_KNOWLEDGE: (
        "The answer must follow from what the video shows, not from outside knowledge alone."
    ),
    CheckName.LOGICAL_CONSISTENCY: (
        "The rationale must support the answer without contradicting itself or the question."
    ),
    CheckName.THOUGHT_VALIDATION: (
        "Each rationale must describe what happens in the interval it cites."
    ),
}


def _banned_processor(banned_tokens: Sequence[str]) -> KeywordProcessor:
    kp = KeywordProcessor(case_sensitive=False)
    # digits end a word, so "Step3" matches "Step"
    kp.non_word_boundaries = set(string.ascii_letters + "_")
    for token in banned_tokens:
        kp.add_keyword(token)
    return kp


def check_format_alignment(
    qa: SynthesizedQA, banned_tokens: Sequence[str] = BANNED_QA_TOKENS
) -> CheckVerdict:
    """Required fields are present and no banned token appears in any field."""
    missing = [
        name
        for name, value in (
            ("question", qa.question),
            ("answer", qa.answer),
            ("reasoning_type", qa.reasoning_type),
        )
        if not value
    ]
    if not qa.streaming_cot:
        missing.append("cot")
    if missing:
        return CheckVerdict(CheckName.FORMAT_ALIGNMENT, Verdict.FAIL, f"missing fields: {missing}")
    kp = _banned_processor(banned_tokens)
    fields = [qa.question, qa.answer, *(span.text for span in qa.streaming_cot)]
    found = sorted({keyword for text in fields for keyword in kp.extract_keywords(text)})
    if found:
        return CheckVerdict(CheckName.FORMAT_ALIGNMENT, Verdict.FAIL, f"banned tokens: {found}")
    return CheckVerdict(CheckName.FORMAT_ALIGNMENT, Verdict.PASS)


def check_repetition(qa: SynthesizedQA) -> CheckVerdict:
    """No rationale sentence is repeated verbatim."""
    seen = set()
    for span in qa.streaming_cot:
        for sentence in split_sentences(span.text):
            if sentence in seen:
                return CheckVerdict(CheckName.REPETITION, Verdict.FAIL, f"repeated: {sentence!r}")
            seen.add(sentence)
    return CheckVerdict(CheckName.REPETITION, Verdict.PASS)


def _delegated_check(
    check: CheckName,
    qa: SynthesizedQA,
    backend: GenerationBackend,
    chain: Optional[EvidenceChain],
) -> CheckVerdict:
    item: Dict[str, Any] = dict(qa.to_record())
    if chain is not None:
        item["evidence"] = chain.to_record()["edges"]
    request = render_template_request(
        "rubric_check",
        {
            "check": check.value.replace("_", " "),
            "criterion": DELEGATED_CRITERIA[check],
            "item": json.dumps(item, ensure_ascii=False, indent=2),
        },
        kind=RequestKind.RUBRIC,
        max_new_tokens=64,
        metadata={"check": check.value, "qa": item},
    )
    try:
        text = backend.generate(request).text
    except Exception as e:
        logger.warning(f"Rubric check {check.value} failed for {qa.chain_id}: {e}")
        return CheckVerdict(check, Verdict.INDETERMINATE, f"backend failure: {e}")
    match = _VERDICT.search(text)
    if match is None:
        return CheckVerdict(check, Verdict.INDETERMINATE, f"unreadable verdict: {text[:80]!r}")
    verdict = Verdict(match.group(1).upper())
    return CheckVerdict(check, verdict, "" if verdict is Verdict.PASS else text.strip())


def filter_qa(
    qa: SynthesizedQA,
    rubric_backend: GenerationBackend,
    banned_tokens: Sequence[str] = BANNED_QA_TOKENS,
    chain: Optional[EvidenceChain] = None,
) -> FilterResult:
    """
    Evaluate all five checks.

    Format alignment and repetition run locally; world knowledge, logical
    consistency and thought validation are asked of the rubric backend. A
    backend failure marks its check indeterminate, which quarantines the item.

    Args:
        qa: Item to check
        rubric_backend: Backend answering PASS or FAIL
        banned_tokens: Tokens rejected by format alignment
        chain: Source chain, shown to the backend as evidence

    Returns:
        Verdicts in a fixed check order; the item is accepted when all pass.
    """
    verdicts: List[CheckVerdict] = [
        _delegated_check(CheckName.WORLD_KNOWLEDGE, qa, rubric_backend, chain),
        check_format_alignment(qa, banned_tokens),
        _delegated_check(CheckName.LOGICAL_CONSISTENCY, qa, rubric_backend, chain),
        check_repetition(qa),
        _delegated_check(CheckName.THOUGHT_VALIDATION, qa, rubric_backend, chain),
    ]
    return FilterResult(qa, tuple(verdicts))
