"""Bundled example data: the 1973 Berkeley graduate admissions table.

The classic six-department aggregate (4,526 applicants) expanded to one row
per applicant, the canonical demonstration of Simpson's paradox: admissions
disfavor women university-wide, yet no department shows that bias once
admission rates are conditioned on the department applied to.
"""

from __future__ import annotations

from .dataset import AttributeSchema, CATEGORICAL, Dataset

# (department, applicants_male, admitted_male, applicants_female, admitted_female)
_BERKELEY = (
    ("A", 825, 512, 108, 89),
    ("B", 560, 353, 25, 17),
    ("C", 325, 120, 593, 202),
    ("D", 417, 138, 375, 131),
    ("E", 191, 53, 393, 94),
    ("F", 373, 22, 341, 24),
)


def berkeley_admissions() -> Dataset:
    """Per-applicant gender / department / admission rows in a fixed order."""
    gender: list[str] = []
    department: list[str] = []
    admitted: list[str] = []
    for dept, men, men_admitted, women, women_admitted in _BERKELEY:
        for g, applied, accepted in (("Female", women, women_admitted),
                                     ("Male", men, men_admitted)):
            for i in range(applied):
                gender.append(g)
                department.append(dept)
                admitted.append("Yes" if i < accepted else "No")
    schema = [
        AttributeSchema("gender", CATEGORICAL, "protected", ("Female", "Male")),
        AttributeSchema("department", CATEGORICAL, "contextual", ("A", "B", "C", "D", "E", "F")),
        AttributeSchema("admitted", CATEGORICAL, "output", ("No", "Yes")),
    ]
    return Dataset.from_columns(schema, {
        "gender": gender, "department": department, "admitted": admitted,
    })
