from __future__ import annotations

from typing import Dict, List, Literal

from pydantic import BaseModel, Field


class StressScores(BaseModel, frozen=True, extra="forbid"):
    """Stress probabilities at one vowel position of a constrained decode

    :param position: index in the phone sequence
    :type position: int
    :param phone: the base vowel, e.g. `IH`
    :type phone: str
    :param probabilities: full-vocabulary softmax probability of each allowed variant, e.g. `{"IH0": 0.2, "IH1": 0.7}`
    :type probabilities: Dict[str, float]
    :param renormalized: the same probabilities rescaled to sum to 1 over the allowed variants
    :type renormalized: Dict[str, float]
    """

    position: int = Field(ge=0)
    phone: str
    probabilities: Dict[str, float]
    renormalized: Dict[str, float]


class DecodeRecord(BaseModel, extra="forbid"):
    """One line of a decode output file

    ```pycon
    >>> record = DecodeRecord(id="u1", transcript="CAT", mode="free", predicted=["K", "AE1", "T"])
    >>> record.model_dump_json(exclude_none=True)
    '{"id":"u1","transcript":"CAT","mode":"free","predicted":["K","AE1","T"],"stress":[]}'

    ```

    :param id: utterance id, matching the manifest
    :type id: str
    :param transcript: the transcript decoded against
    :type transcript: str
    :param mode: `constrained` (lattice decoding) or `free` (unconstrained greedy, diagnostics only)
    :type mode: str
    :param base_phones: lattice base sequence, constrained mode only
    :type base_phones: List[str], optional
    :param predicted: stress-marked phones
    :type predicted: List[str]
    :param stress: per-vowel-position stress probabilities, constrained mode only
    :type stress: List[StressScores]
    :param total_log_prob: summed log-probability of the predicted phones
    :type total_log_prob: float, optional
    """

    id: str
    transcript: str
    mode: Literal["constrained", "free"] = "constrained"
    base_phones: List[str] | None = None
    predicted: List[str]
    stress: List[StressScores] = []
    total_log_prob: float | None = None


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
