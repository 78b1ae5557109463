"""
Stress error rate: the fraction of vowel positions inside polysyllabic words whose predicted stress
digit differs from the reference, after applying a collapse policy.

```pycon
>>> from lexstress.lexicon import parse_dictionary, build_constraint, parse_phones
>>> lex = parse_dictionary(["PREDICT  P R IH0 D IH1 K T"])
>>> spans = build_constraint("PREDICT", lex).word_spans
>>> record = score(parse_phones("P R IH0 D IH1 K T"), parse_phones("P R IH1 D IH1 K T"), spans)
>>> record.counted, record.errors, record.error_rate
(2, 1, 0.5)

```
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Dict, List, Literal, Sequence, TextIO

from loguru import logger
from pydantic import BaseModel, Field, model_validator
from tabulate import tabulate

from lexstress import FormatError
from lexstress.decoder import DecodeConfig, decode_corpus
from lexstress.file_types import FileTypeJSON, FileTypeJSONL
from lexstress.lexicon import (
    ConstraintConfig,
    DEFAULT_CONSTRAINT,
    Lexicon,
    PhonemeToken,
    WordSpan,
    parse_phones,
    strip_stress,
)
from lexstress.model import ModelParameters
from lexstress.objects.decode_record import DecodeRecord
from lexstress.objects.manifest import Manifest

Policy = Literal["three-class", "collapse-2-0", "collapse-2-1"]
POLICIES: tuple[str, ...] = ("three-class", "collapse-2-0", "collapse-2-1")
DEFAULT_POLICY: Policy = "collapse-2-0"
REPORT_SCHEMA_VERSION = 1


class EvalConfig(BaseModel, frozen=True, extra="forbid"):
    """
    :param policy: how secondary stress is scored: kept (`three-class`), or merged into 0 or 1
    :type policy: str
    :param dataset: label of the dataset column in report tables
    :type dataset: str
    :param method: label of the method column in report tables
    :type method: str
    """

    policy: Policy = DEFAULT_POLICY
    dataset: str = "test"
    method: str = "constrained-greedy"


def apply_policy(digit: int, policy: Policy = DEFAULT_POLICY) -> int:
    """
    ```pycon
    >>> [apply_policy(d, "collapse-2-0") for d in (0, 1, 2)], [apply_policy(d, "collapse-2-1") for d in (0, 1, 2)]
    ([0, 1, 0], [0, 1, 1])
    >>> apply_policy(2, "three-class")
    2

    ```
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy '{policy}', expected one of {POLICIES}")
    if digit == 2 and policy == "collapse-2-0":
        return 0
    if digit == 2 and policy == "collapse-2-1":
        return 1
    return digit


class UtteranceScore(BaseModel, extra="forbid"):
    """Counted vowel positions and errors for one utterance

    :param confusion: counts keyed by reference digit then predicted digit, after the policy
    :type confusion: Dict[int, Dict[int, int]]
    """

    id: str = ""
    counted: int = Field(0, ge=0)
    errors: int = Field(0, ge=0)
    confusion: Dict[int, Dict[int, int]] = {}

    @model_validator(mode="after")
    def _errors_within_counted(self):
        if self.errors > self.counted:
            raise ValueError(f"errors ({self.errors}) exceed counted positions ({self.counted})")
        return self

    @property
    def error_rate(self) -> float | None:
        """`errors / counted`, or `None` when nothing was counted"""
        return self.errors / self.counted if self.counted else None


def score(
    reference: Sequence[PhonemeToken],
    predicted: Sequence[PhonemeToken],
    spans: Sequence[WordSpan],
    policy: Policy = DEFAULT_POLICY,
    utterance_id: str = "",
) -> UtteranceScore:
    """Compare stress digits at every vowel position of every polysyllabic word span

    :raises ValueError: if the two sequences differ in length or base phonemes
    """
    if len(reference) != len(predicted):
        raise ValueError(f"reference has {len(reference)} phones but prediction has {len(predicted)}")
    if strip_stress(reference) != strip_stress(predicted):
        raise ValueError("reference and prediction have different base phonemes")
    counted, errors, confusion = 0, 0, {}
    for span in spans:
        if not span.is_polysyllabic:
            continue
        for ref, pred in zip(reference[span.start : span.end], predicted[span.start : span.end]):
            if not ref.is_vowel:
                continue
            r, p = apply_policy(ref.stress, policy), apply_policy(pred.stress, policy)
            counted += 1
            errors += r != p
            confusion.setdefault(r, {}).setdefault(p, 0)
            confusion[r][p] += 1
    return UtteranceScore(id=utterance_id, counted=counted, errors=errors, confusion=confusion)


class Exclusion(BaseModel, frozen=True, extra="forbid"):
    id: str
    reason: str


class StressReport(BaseModel, extra="forbid"):
    """Corpus totals, per-utterance scores and exclusions

    ```pycon
    >>> report = StressReport(utterances=[UtteranceScore(id="a", counted=4, errors=1)])
    >>> report.counted, report.errors, report.error_rate, report.rate_defined
    (4, 1, 0.25, True)
    >>> StressReport().error_rate is None
    True

    ```
    """

    schema_version: int = REPORT_SCHEMA_VERSION
    dataset: str = "test"
    method: str = "constrained-greedy"
    policy: Policy = DEFAULT_POLICY
    utterances: List[UtteranceScore] = []
    exclusions: List[Exclusion] = []

    @property
    def counted(self) -> int:
        return sum(u.counted for u in self.utterances)

    @property
    def errors(self) -> int:
        return sum(u.errors for u in self.utterances)

    @property
    def rate_defined(self) -> bool:
        return self.counted > 0

    @property
    def error_rate(self) -> float | None:
        return self.errors / self.counted if self.counted else None

    @property
    def confusion(self) -> Dict[int, Dict[int, int]]:
        totals: Dict[int, Dict[int, int]] = {}
        for u in self.utterances:
            for r, row in u.confusion.items():
                for p, n in row.items():
                    totals.setdefault(r, {}).setdefault(p, 0)
                    totals[r][p] += n
        return totals

    @classmethod
    def load(cls, path: Path | str) -> "StressReport":
        """Read a `report.json` written by [`write`][lexstress.evaluator.StressReport.write]

        :raises FormatError: if the file is not JSON or has another schema version
        """
        data = FileTypeJSON.load(path)
        if not isinstance(data, dict) or data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise FormatError(f"{path}: not a version {REPORT_SCHEMA_VERSION} stress report")
        return cls(
            dataset=data["dataset"],
            method=data["method"],
            policy=data["policy"],
            utterances=[{k: v for k, v in u.items() if k != "error_rate"} for u in data["utterances"]],
            exclusions=data["exclusions"],
        )

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "dataset": self.dataset,
            "method": self.method,
            "policy": self.policy,
            "totals": {
                "counted": self.counted,
                "errors": self.errors,
                "error_rate": self.error_rate,
                "rate_defined": self.rate_defined,
                "utterances": len(self.utterances),
                "excluded": len(self.exclusions),
            },
            "confusion": {
                str(r): {str(p): n for p, n in sorted(row.items())} for r, row in sorted(self.confusion.items())
            },
            "utterances": [u.model_dump() | {"error_rate": u.error_rate} for u in self.utterances],
            "exclusions": [e.model_dump() for e in self.exclusions],
        }

    def render(self, output_file: TextIO | None = None, previous: Sequence[StressReport] = ()):
        """Print the summary table (with a row per `previous` report first), confusion matrix and exclusions
        as Markdown to the console"""
        from rich.console import Console
        from rich.markdown import Markdown

        console = Console(file=output_file or sys.stdout)
        md = "# Stress Error Rate\n" + render_table([*previous, self]) + "\n"
        if self.confusion:
            digits = sorted({d for row in self.confusion.values() for d in row} | set(self.confusion))
            rows = [[f"ref {r}"] + [self.confusion.get(r, {}).get(p, 0) for p in digits] for r in digits]
            md += "\n## Confusion\n" + tabulate(rows, headers=[""] + [f"pred {p}" for p in digits], tablefmt="pipe")
            md += "\n"
        if self.exclusions:
            md += f"\n## Excluded utterances ({len(self.exclusions)})\n"
            md += tabulate([[e.id, e.reason] for e in self.exclusions], headers=["id", "reason"], tablefmt="pipe")
        console.print(Markdown(md))

    def write(self, out_dir: Path | str, previous: Sequence[StressReport] = ()) -> Path:
        """`report.json` plus `report.txt` in `out_dir`. The plain table in `report.txt` has one row per
        `previous` report, then this one, so runs of a sweep can be compared side by side."""
        out_dir = Path(out_dir)
        path = FileTypeJSON.dump(self.to_json(), out_dir / "report.json")
        (out_dir / "report.txt").write_text(render_table([*previous, self], tablefmt="simple") + "\n")
        return path


def format_rate(rate: float | None) -> str:
    """
    ```pycon
    >>> format_rate(0.0636), format_rate(None)
    ('6.36%', 'undefined')

    ```
    """
    return "undefined" if rate is None else f"{100 * rate:.2f}%"


def render_table(reports: Sequence[StressReport], tablefmt: str = "pipe") -> str:
    """One row per report, `dataset | method | error rate`, for side-by-side runs

    ```pycon
    >>> report = StressReport(dataset="synth-2k", utterances=[UtteranceScore(counted=8, errors=1)])
    >>> print(render_table([report], tablefmt="plain"))
    dataset   method              error rate      counted    excluded
    synth-2k  constrained-greedy  12.50%                8           0

    ```
    """
    rows = [[r.dataset, r.method, format_rate(r.error_rate), r.counted, len(r.exclusions)] for r in reports]
    return tabulate(rows, headers=["dataset", "method", "error rate", "counted", "excluded"], tablefmt=tablefmt)


def evaluate_decodes(
    decodes: Sequence[DecodeRecord],
    manifest: Manifest,
    lexicon: Lexicon,
    cfg: EvalConfig = EvalConfig(),
    constraint: ConstraintConfig = DEFAULT_CONSTRAINT,
) -> StressReport:
    """Score decode records against the manifest's references (`phones` if given, else the lexicon).
    Utterances without a decode, or whose decode cannot be scored, are listed as exclusions."""
    by_id = {d.id: d for d in decodes}
    report = StressReport(dataset=cfg.dataset, method=cfg.method, policy=cfg.policy)
    for utterance in manifest:
        uid = utterance.uid
        if uid not in by_id:
            report.exclusions.append(Exclusion(id=uid, reason="no decode for this utterance"))
            continue
        try:
            reference = utterance.reference(lexicon)
            spans = utterance.lattice(lexicon, constraint).word_spans
            predicted = parse_phones(by_id[uid].predicted)
            report.utterances.append(score(reference, predicted, spans, cfg.policy, uid))
        except ValueError as e:
            report.exclusions.append(Exclusion(id=uid, reason=str(e)))
    if report.exclusions:
        logger.warning(f"{len(report.exclusions)} utterance(s) excluded from scoring")
    logger.info(
        f"{cfg.dataset}/{cfg.method}: {report.errors}/{report.counted} stress errors "
        f"({format_rate(report.error_rate)}, policy={cfg.policy})"
    )
    return report


def evaluate_corpus(
    manifest: Manifest,
    lexicon: Lexicon,
    params: ModelParameters,
    cfg: EvalConfig = EvalConfig(),
    decode_cfg: DecodeConfig | None = None,
    constraint: ConstraintConfig = DEFAULT_CONSTRAINT,
) -> StressReport:
    """Decode every utterance with a trained model, then score; decoding failures become exclusions"""
    decodes, failures = decode_corpus(manifest, lexicon, params, decode_cfg or DecodeConfig(), constraint)
    report = evaluate_decodes(decodes, manifest, lexicon, cfg, constraint)
    report.exclusions = [Exclusion(id=e.id, reason=failures.get(e.id, e.reason)) for e in report.exclusions]
    return report


def load_decodes(path: Path | str) -> List[DecodeRecord]:
    return [DecodeRecord(**r) for r in FileTypeJSONL.load(path)]


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
