"""Text prompts assembled from subject metadata."""

from __future__ import annotations

from ..manifest import Diagnosis, SubjectRecord

BMI_WORDS = ("underweight", "normal", "overweight", "obese")


def bmi_category(bmi: float) -> int:
    """WHO category index: 0 underweight (<18.5), 1 normal, 2 overweight (25-30), 3 obese (>=30)."""
    if bmi < 18.5:
        return 0
    if bmi < 25.0:
        return 1
    if bmi < 30.0:
        return 2
    return 3


def assemble_prompt(record: SubjectRecord, healthy_clause: bool = False) -> str:
    """Build ``"{Sex}, age in {decade}s, {bmi word} BMI[, with heart failure]"``.

    >>> from fairaug.manifest import Sex
    >>> r = SubjectRecord("a", Sex.FEMALE, 72, 27.5, Diagnosis.HEART_FAILURE, "i", "m", 0, 1, 3, 5)
    >>> assemble_prompt(r)
    'Female, age in 70s, overweight BMI, with heart failure'
    """
    decade = (record.age // 10) * 10
    text = f"{record.sex.word}, age in {decade}s, {BMI_WORDS[bmi_category(record.bmi)]} BMI"
    if record.diagnosis is Diagnosis.HEART_FAILURE:
        text += ", with heart failure"
    elif healthy_clause:
        text += ", no heart failure"
    return text


def bmi_category_from_prompt(prompt: str) -> int:
    for i, word in enumerate(BMI_WORDS):
        if f"{word} BMI" in prompt:
            return i
    raise ValueError(f"prompt carries no BMI category: {prompt!r}")
